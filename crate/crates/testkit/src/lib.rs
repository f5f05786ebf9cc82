//! Brute-force reference computations for checking the main implementation.
//!
//! Everything here is written with plain loops over `Vec<f64>` and depends on
//! nothing outside `std`, so a bug in the fast path cannot be mirrored here.

use std::collections::BTreeMap;

/// Central-difference gradient of `loss` at `params`.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut loss: F, params: &[f64], step: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + step;
        let up = loss(&p);
        p[i] = orig - step;
        let down = loss(&p);
        p[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    grad
}

/// `|a - b| / max(|a|, |b|, floor)`
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor);
    (a - b).abs() / denom
}

pub fn softmax_oracle(logits: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &x in logits {
        if x > max {
            max = x;
        }
    }
    let mut exps = Vec::with_capacity(logits.len());
    let mut total = 0.0;
    for &x in logits {
        let e = (x - max).exp();
        exps.push(e);
        total += e;
    }
    for e in exps.iter_mut() {
        *e /= total;
    }
    exps
}

/// Mean over rows of `KL(a_i ‖ b_i)`. Rows are rescaled to sum to one first.
pub fn softmax_kl_oracle(rows_a: &[Vec<f64>], rows_b: &[Vec<f64>]) -> f64 {
    assert_eq!(rows_a.len(), rows_b.len(), "row count mismatch");
    assert!(!rows_a.is_empty(), "no rows");
    let normalise = |row: &[f64]| -> Vec<f64> {
        let s: f64 = row.iter().sum();
        row.iter().map(|x| x / s).collect()
    };
    let mut total = 0.0;
    for (a, b) in rows_a.iter().zip(rows_b) {
        assert_eq!(a.len(), b.len(), "row width mismatch");
        let (p, q) = (normalise(a), normalise(b));
        let mut kl = 0.0;
        for j in 0..p.len() {
            if p[j] > 0.0 {
                kl += p[j] * (p[j] / q[j]).ln();
            }
        }
        total += kl;
    }
    total / rows_a.len() as f64
}

/// Teacher/student KL on raw logits restricted to the first `n_old` columns.
pub fn logit_kl_oracle(teacher: &[Vec<f64>], student: &[Vec<f64>], n_old: usize) -> f64 {
    let p: Vec<Vec<f64>> = teacher.iter().map(|r| softmax_oracle(&r[..n_old])).collect();
    let q: Vec<Vec<f64>> = student.iter().map(|r| softmax_oracle(&r[..n_old])).collect();
    softmax_kl_oracle(&p, &q)
}

/// `s_ij = softmax_j(rows_i · pool_j)`
pub fn similarity_oracle(rows: &[Vec<f64>], pool: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        let mut scores = Vec::with_capacity(pool.len());
        for p in pool {
            let mut s = 0.0;
            for k in 0..r.len() {
                s += r[k] * p[k];
            }
            scores.push(s);
        }
        out.push(softmax_oracle(&scores));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TinyConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub positional: bool,
    /// Cosine head `exp(log_scale)·cos`; otherwise linear with bias.
    pub cosine: bool,
}

/// Row-major tensors keyed by parameter name: `(rows, cols, values)`.
pub type TinyParams = BTreeMap<String, (usize, usize, Vec<f64>)>;

type Rows = Vec<Vec<f64>>;

fn tensor(params: &TinyParams, name: &str) -> Rows {
    let (r, c, v) = params.get(name).unwrap_or_else(|| panic!("missing parameter `{name}`"));
    (0..*r).map(|i| v[i * c..(i + 1) * c].to_vec()).collect()
}

fn vector(params: &TinyParams, name: &str) -> Vec<f64> {
    params.get(name).unwrap_or_else(|| panic!("missing parameter `{name}`")).2.clone()
}

fn matmul(a: &Rows, b: &Rows) -> Rows {
    let n = b[0].len();
    let mut out = vec![vec![0.0; n]; a.len()];
    for i in 0..a.len() {
        for k in 0..b.len() {
            for j in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn layer_norm(x: &Rows, g: &[f64], b: &[f64]) -> Rows {
    let mut out = Vec::new();
    for row in x {
        let n = row.len() as f64;
        let mut mean = 0.0;
        for v in row {
            mean += v;
        }
        mean /= n;
        let mut var = 0.0;
        for v in row {
            var += (v - mean) * (v - mean);
        }
        var /= n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        let mut r = Vec::new();
        for j in 0..row.len() {
            r.push((row[j] - mean) * inv * g[j] + b[j]);
        }
        out.push(r);
    }
    out
}

fn attention(cfg: &TinyConfig, p: &TinyParams, prefix: &str, query_in: &Rows, kv_in: &Rows, cross: bool) -> Rows {
    let qn = layer_norm(query_in, &vector(p, &format!("{prefix}.ln_q.g")), &vector(p, &format!("{prefix}.ln_q.b")));
    let kvn = if cross {
        layer_norm(kv_in, &vector(p, &format!("{prefix}.ln_kv.g")), &vector(p, &format!("{prefix}.ln_kv.b")))
    } else {
        qn.clone()
    };
    let q = matmul(&qn, &tensor(p, &format!("{prefix}.wq")));
    let k = matmul(&kvn, &tensor(p, &format!("{prefix}.wk")));
    let v = matmul(&kvn, &tensor(p, &format!("{prefix}.wv")));
    let dh = cfg.d_model / cfg.num_heads;
    let mut concat = vec![vec![0.0; cfg.d_model]; q.len()];
    for h in 0..cfg.num_heads {
        let off = h * dh;
        for i in 0..q.len() {
            let mut scores = Vec::new();
            for kr in &k {
                let mut s = 0.0;
                for t in 0..dh {
                    s += q[i][off + t] * kr[off + t];
                }
                scores.push(s / (dh as f64).sqrt());
            }
            let w = softmax_oracle(&scores);
            for t in 0..dh {
                let mut acc = 0.0;
                for j in 0..v.len() {
                    acc += w[j] * v[j][off + t];
                }
                concat[i][off + t] = acc;
            }
        }
    }
    let out = matmul(&concat, &tensor(p, &format!("{prefix}.wo")));
    let bo = vector(p, &format!("{prefix}.bo"));
    let mut res = query_in.clone();
    for i in 0..res.len() {
        for j in 0..cfg.d_model {
            res[i][j] += out[i][j] + bo[j];
        }
    }
    res
}

fn project(cfg: &TinyConfig, p: &TinyParams, tag: &str, x: &Rows) -> Rows {
    let mut h = matmul(x, &tensor(p, &format!("{tag}.proj.w")));
    let b = vector(p, &format!("{tag}.proj.b"));
    let pos = cfg.positional.then(|| tensor(p, &format!("{tag}.pos")));
    for (i, row) in h.iter_mut().enumerate() {
        for j in 0..row.len() {
            row[j] += b[j];
            if let Some(pos) = &pos {
                row[j] += pos[i][j];
            }
        }
    }
    h
}

fn mean_rows(x: &Rows) -> Vec<f64> {
    let mut out = vec![0.0; x[0].len()];
    for row in x {
        for j in 0..row.len() {
            out[j] += row[j];
        }
    }
    for v in out.iter_mut() {
        *v /= x.len() as f64;
    }
    out
}

/// Video-level feature: mean fused audio snippet plus mean fused visual snippet.
pub fn tiny_fusion_oracle(cfg: &TinyConfig, params: &TinyParams, audio: &Rows, visual: &Rows) -> Vec<f64> {
    let pa = project(cfg, params, "audio", audio);
    let pv = project(cfg, params, "visual", visual);
    let sa = attention(cfg, params, "audio.self", &pa, &pa, false);
    let sv = attention(cfg, params, "visual.self", &pv, &pv, false);
    let ha = attention(cfg, params, "audio.cross", &sa, &sv, true);
    let hv = attention(cfg, params, "visual.cross", &sv, &sa, true);
    let (ma, mv) = (mean_rows(&ha), mean_rows(&hv));
    ma.iter().zip(&mv).map(|(a, v)| a + v).collect()
}

/// Logits of the fusion model plus classifier for one video.
pub fn tiny_forward_oracle(cfg: &TinyConfig, params: &TinyParams, audio: &Rows, visual: &Rows) -> Vec<f64> {
    let video = tiny_fusion_oracle(cfg, params, audio, visual);
    let w = tensor(params, "cls.w");
    let norm = |v: &[f64]| {
        let mut s = 0.0;
        for x in v {
            s += x * x;
        }
        s.sqrt().max(1e-8)
    };
    let mut logits = Vec::new();
    if cfg.cosine {
        let scale = vector(params, "cls.log_scale")[0].exp();
        let hn = norm(&video);
        for row in &w {
            let mut d = 0.0;
            for j in 0..row.len() {
                d += video[j] * row[j];
            }
            logits.push(scale * d / (hn * norm(row)));
        }
    } else {
        let b = vector(params, "cls.b");
        for (c, row) in w.iter().enumerate() {
            let mut d = b[c];
            for j in 0..row.len() {
                d += video[j] * row[j];
            }
            logits.push(d);
        }
    }
    logits
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_on_simple_functions() {
        let p = [0.3, -1.2, 2.5];
        let g = fd_gradient(|x| 0.5 * x.iter().map(|v| v * v).sum::<f64>(), &p, 1e-5);
        for (a, b) in g.iter().zip(&p) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(fd_gradient(|_| 4.0, &p, 1e-5).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kl_closed_forms() {
        let same = vec![vec![0.2, 0.8]];
        assert_eq!(softmax_kl_oracle(&same, &same), 0.0);
        let kl = softmax_kl_oracle(&[vec![0.7, 0.3]], &[vec![0.6, 0.4]]);
        assert!((kl - 0.0216).abs() < 5e-5);
        let scaled = softmax_kl_oracle(&[vec![7.0, 3.0]], &[vec![6.0, 4.0]]);
        assert!((scaled - kl).abs() < 1e-15);
    }

    #[test]
    fn similarity_rows_are_stochastic() {
        let s = similarity_oracle(&[vec![1.0, 0.0], vec![0.0, 2.0]], &[vec![1.0, 1.0], vec![-1.0, 0.5], vec![0.0, 0.0]]);
        for row in s {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    fn put(p: &mut TinyParams, name: &str, r: usize, c: usize, v: Vec<f64>) {
        p.insert(name.to_string(), (r, c, v));
    }

    /// All projections and attention weights zero, unit norms: logits are the bias.
    fn zero_params(d: usize, da: usize, dv: usize, classes: usize) -> TinyParams {
        let mut p = TinyParams::new();
        for (tag, din) in [("audio", da), ("visual", dv)] {
            put(&mut p, &format!("{tag}.proj.w"), din, d, vec![0.0; din * d]);
            put(&mut p, &format!("{tag}.proj.b"), 1, d, vec![0.0; d]);
            for kind in ["self", "cross"] {
                let pre = format!("{tag}.{kind}");
                let mut norms = vec!["ln_q"];
                if kind == "cross" {
                    norms.push("ln_kv");
                }
                for n in norms {
                    put(&mut p, &format!("{pre}.{n}.g"), 1, d, vec![1.0; d]);
                    put(&mut p, &format!("{pre}.{n}.b"), 1, d, vec![0.0; d]);
                }
                for w in ["wq", "wk", "wv", "wo"] {
                    put(&mut p, &format!("{pre}.{w}"), d, d, vec![0.0; d * d]);
                }
                put(&mut p, &format!("{pre}.bo"), 1, d, vec![0.0; d]);
            }
        }
        put(&mut p, "cls.w", classes, d, vec![0.0; classes * d]);
        put(&mut p, "cls.b", 1, classes, vec![0.5, -1.0, 2.0]);
        p
    }

    #[test]
    fn zero_model_returns_bias() {
        let cfg = TinyConfig { d_model: 4, num_heads: 2, positional: false, cosine: false };
        let p = zero_params(4, 2, 3, 3);
        let logits = tiny_forward_oracle(&cfg, &p, &vec![vec![1.0, 2.0]; 2], &vec![vec![0.5, 0.1, -3.0]; 2]);
        assert_eq!(logits, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn single_snippet_identity_block_sums_projections() {
        let cfg = TinyConfig { d_model: 2, num_heads: 1, positional: false, cosine: false };
        let mut p = zero_params(2, 2, 2, 3);
        put(&mut p, "audio.proj.w", 2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        put(&mut p, "visual.proj.w", 2, 2, vec![2.0, 0.0, 0.0, 2.0]);
        let h = tiny_fusion_oracle(&cfg, &p, &vec![vec![1.0, -1.0]], &vec![vec![0.5, 0.25]]);
        assert_eq!(h, vec![2.0, -0.5]);
    }
}
