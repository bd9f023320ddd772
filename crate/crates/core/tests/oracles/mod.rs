//! Naive loop re-implementations used as reference values.
#![allow(dead_code)]

use mmnet_core::Tensor;

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.at2(i, p) * b.at2(p, j);
            }
            out.data_mut()[i * n + j] = s;
        }
    }
    out
}

pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[c_out, ho, wo]);
    for o in 0..c_out {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = 0.0;
                for c in 0..c_in {
                    for i in 0..k {
                        for j in 0..k {
                            let iy = (oy * stride + i) as isize - pad as isize;
                            let ix = (ox * stride + j) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                s += x.at3(c, iy as usize, ix as usize)
                                    * w.data()[((o * c_in + c) * k + i) * k + j];
                            }
                        }
                    }
                }
                out.data_mut()[(o * ho + oy) * wo + ox] = s;
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Column `q` (flattened spatial index) of a `[C, H, W]` grid.
pub fn node(x: &Tensor, q: usize) -> Vec<f64> {
    let s = x.shape();
    let hw = s[1] * s[2];
    (0..s[0]).map(|c| x.data()[c * hw + q]).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / ((norm(a) + 1e-12) * (norm(b) + 1e-12))
}

/// `act[n, y, x] = sigmoid(F[:, y, x] · M[n, :])`.
pub fn activation(f: &Tensor, m: &Tensor) -> Tensor {
    let (d, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let n = m.shape()[0];
    Tensor::from_fn(&[n, h, w], |k| {
        let (c, q) = (k / (h * w), k % (h * w));
        let mut s = 0.0;
        for j in 0..d {
            s += f.data()[j * h * w + q] * m.at2(c, j);
        }
        sigmoid(s)
    })
}

/// Reconstruction loss from features, activations and memory.
pub fn recon_loss(f: &Tensor, act: &Tensor, m: &Tensor) -> f64 {
    let (d, hw) = (f.shape()[0], f.shape()[1] * f.shape()[2]);
    let n = m.shape()[0];
    let mut recon = vec![vec![0.0; d]; hw];
    for (q, r) in recon.iter_mut().enumerate() {
        let logits: Vec<f64> = (0..n).map(|c| act.data()[c * hw + q]).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|v| (v - mx).exp()).sum();
        for c in 0..n {
            let wgt = (logits[c] - mx).exp() / z;
            for j in 0..d {
                r[j] += wgt * m.at2(c, j);
            }
        }
    }
    let mut total = 0.0;
    for q in 0..hw {
        let row: Vec<f64> = (0..hw).map(|p| dot(&recon[q], &node(f, p))).collect();
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        total += lse - row[q];
    }
    total / hw as f64
}

/// `E[q, s]` between the nodes of two grids.
pub fn pairwise_cosine(q: &Tensor, s: &Tensor) -> Tensor {
    let hq = q.shape()[1] * q.shape()[2];
    let hs = s.shape()[1] * s.shape()[2];
    Tensor::from_fn(&[hq, hs], |k| cosine(&node(q, k / hs), &node(s, k % hs)))
}

/// Masked row-softmax attention weights.
pub fn attention_weights(q: &Tensor, s: &Tensor, mask: &Tensor) -> Tensor {
    let e = pairwise_cosine(q, s);
    let (rows, cols) = (e.shape()[0], e.shape()[1]);
    let mut w = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        let vals: Vec<f64> = (0..cols)
            .map(|c| {
                if mask.data()[c] == 1.0 {
                    e.at2(r, c)
                } else {
                    -1e9
                }
            })
            .collect();
        let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = vals.iter().map(|v| (v - mx).exp()).sum();
        for c in 0..cols {
            w.data_mut()[r * cols + c] = (vals[c] - mx).exp() / z;
        }
    }
    w
}

/// `h'_q = h_q ⊙ Σ_s W[q, s] h_s`.
pub fn propagate(q: &Tensor, s: &Tensor, mask: &Tensor) -> Tensor {
    let w = attention_weights(q, s, mask);
    let (c, h, wd) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let (hw, hs) = (h * wd, s.shape()[1] * s.shape()[2]);
    Tensor::from_fn(&[c, h, wd], |k| {
        let (ch, qi) = (k / hw, k % hw);
        let mut v = 0.0;
        for si in 0..hs {
            v += w.at2(qi, si) * s.data()[ch * hs + si];
        }
        q.data()[k] * v
    })
}

/// `h'_q = h_q ⊙ mean of foreground support nodes`.
pub fn propagate_global(q: &Tensor, s: &Tensor, mask: &Tensor) -> Tensor {
    let (c, h, wd) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let hs = s.shape()[1] * s.shape()[2];
    let count = mask.data().iter().filter(|&&v| v == 1.0).count() as f64;
    let g: Vec<f64> = (0..c)
        .map(|ch| {
            (0..hs)
                .filter(|&i| mask.data()[i] == 1.0)
                .map(|i| s.data()[ch * hs + i])
                .sum::<f64>()
                / count
        })
        .collect();
    Tensor::from_fn(&[c, h, wd], |k| q.data()[k] * g[k / (h * wd)])
}

/// Min-max normalised max cosine against the masked support features.
pub fn confidence(fq: &Tensor, fs: &Tensor, mask: &Tensor) -> Tensor {
    let (h, w) = (fq.shape()[1], fq.shape()[2]);
    let hs = fs.shape()[1] * fs.shape()[2];
    let raw: Vec<f64> = (0..h * w)
        .map(|qi| {
            let qn = node(fq, qi);
            (0..hs)
                .map(|si| {
                    let sn: Vec<f64> = node(fs, si).iter().map(|v| v * mask.data()[si]).collect();
                    cosine(&qn, &sn)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Tensor::new(
        vec![h, w],
        raw.iter().map(|v| (v - lo) / (hi - lo + 1e-7)).collect(),
    )
    .unwrap()
}

/// `P_raw[k, q] = Σ_s sigmoid(E_k[q, s])` for masked similarity matrices.
pub fn quality(masked: &[Tensor], h: usize, w: usize) -> Tensor {
    let hw = h * w;
    Tensor::from_fn(&[masked.len(), h, w], |k| {
        let (shot, q) = (k / hw, k % hw);
        let e = &masked[shot];
        (0..e.shape()[1]).map(|s| sigmoid(e.at2(q, s))).sum()
    })
}

/// Masked similarity matrix: `E` on foreground columns, `-1e9` elsewhere.
pub fn masked_similarity(q: &Tensor, s: &Tensor, mask: &Tensor) -> Tensor {
    let e = pairwise_cosine(q, s);
    let cols = e.shape()[1];
    Tensor::from_fn(e.shape(), |k| {
        if mask.data()[k % cols] == 1.0 {
            e.data()[k]
        } else {
            -1e9
        }
    })
}

/// Shot-softmax of `p_raw` then weighted sum of `acts`.
pub fn fuse_weighted(acts: &[Tensor], p_raw: &Tensor) -> Tensor {
    let (c, h, w) = (acts[0].shape()[0], acts[0].shape()[1], acts[0].shape()[2]);
    let hw = h * w;
    Tensor::from_fn(&[c, h, w], |k| {
        let q = k % hw;
        let ps: Vec<f64> = (0..acts.len()).map(|i| p_raw.data()[i * hw + q]).collect();
        let mx = ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = ps.iter().map(|v| (v - mx).exp()).sum();
        (0..acts.len())
            .map(|i| (ps[i] - mx).exp() / z * acts[i].data()[k])
            .sum()
    })
}

/// Mean per-pixel two-class cross-entropy.
pub fn cross_entropy(logits: &Tensor, target: &Tensor) -> f64 {
    let hw = target.len();
    let mut s = 0.0;
    for p in 0..hw {
        let (a, b) = (logits.data()[p], logits.data()[hw + p]);
        let mx = a.max(b);
        let lse = mx + ((a - mx).exp() + (b - mx).exp()).ln();
        let pick = if target.data()[p] == 1.0 { b } else { a };
        s += lse - pick;
    }
    s / hw as f64
}
