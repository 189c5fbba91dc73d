//! Fused kernel for the feature-steered graph convolution.
//!
//! For vertex `i` with neighbourhood `N(i)` (which contains `i`):
//!
//! ```text
//! y_i = b + 1/|N(i)| Σ_{j∈N(i)} Σ_m q_m(i, j) · (x_j W_m)
//! q(i, j) = softmax_m( u_m · (x_j − x_i) + c_m )
//! ```
//!
//! `x W` for all heads is one GEMM, and `u_m · (x_j − x_i)` is the difference
//! of two entries of `x U`, so the per-edge work is only the softmax and the
//! weighted sum over heads.

use std::sync::Arc;

use super::tape::{softmax_into, FeastInputs};
use super::{gemm, Real};
use crate::mesh::Adjacency;

pub(crate) struct FeastSaved<T: Real> {
    pub inputs: FeastInputs,
    adj: Arc<Adjacency>,
    heads: usize,
    f_out: usize,
    /// `N × (M·F_out)`.
    xw: Vec<T>,
    /// Per directed neighbour entry, `M` attention weights.
    q: Vec<T>,
}

pub(crate) struct Backward<T> {
    pub x: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub steer: Option<Vec<T>>,
    pub steer_bias: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward<T: Real>(
    inputs: FeastInputs,
    adj: Arc<Adjacency>,
    heads: usize,
    f_out: usize,
    x: &[T],
    weight: &[T],
    steer: &[T],
    steer_bias: &[T],
    bias: &[T],
) -> (Vec<T>, FeastSaved<T>) {
    let n = adj.vertex_count();
    let f_in = x.len().checked_div(n).unwrap_or(0);
    let hw = heads * f_out;

    let mut xw = vec![T::ZERO; n * hw];
    gemm(n, f_in, hw, x, false, weight, false, &mut xw, false);
    let mut xu = vec![T::ZERO; n * heads];
    gemm(n, f_in, heads, x, false, steer, false, &mut xu, false);

    let offsets = adj.offsets();
    let nbrs = adj.flat_neighbors();
    let mut q = vec![T::ZERO; nbrs.len() * heads];
    let mut out = vec![T::ZERO; n * f_out];
    let mut logits = vec![T::ZERO; heads];

    for i in 0..n {
        let span = offsets[i]..offsets[i + 1];
        let inv_deg = T::from_f64(1.0 / span.len() as f64);
        let xu_i = &xu[i * heads..(i + 1) * heads];
        let y = &mut out[i * f_out..(i + 1) * f_out];
        for e in span {
            let j = nbrs[e];
            let xu_j = &xu[j * heads..(j + 1) * heads];
            for m in 0..heads {
                logits[m] = xu_j[m] - xu_i[m] + steer_bias[m];
            }
            let qe = &mut q[e * heads..(e + 1) * heads];
            softmax_into(&logits, qe);
            let row = &xw[j * hw..(j + 1) * hw];
            for m in 0..heads {
                let coef = qe[m] * inv_deg;
                for (o, &v) in y.iter_mut().zip(&row[m * f_out..(m + 1) * f_out]) {
                    *o += coef * v;
                }
            }
        }
        for (o, &b) in y.iter_mut().zip(bias) {
            *o += b;
        }
    }

    let saved = FeastSaved {
        inputs,
        adj,
        heads,
        f_out,
        xw,
        q,
    };
    (out, saved)
}

pub(crate) fn backward<T: Real>(
    saved: &FeastSaved<T>,
    g: &[T],
    x: &[T],
    weight: &[T],
    steer: &[T],
    outs: &mut Backward<T>,
) {
    let FeastSaved {
        adj,
        heads,
        f_out,
        xw,
        q,
        ..
    } = saved;
    let (heads, f_out) = (*heads, *f_out);
    let n = adj.vertex_count();
    let f_in = x.len().checked_div(n).unwrap_or(0);
    let hw = heads * f_out;
    let offsets = adj.offsets();
    let nbrs = adj.flat_neighbors();

    if let Some(gb) = outs.bias.as_mut() {
        for i in 0..n {
            for (d, &gi) in gb.iter_mut().zip(&g[i * f_out..(i + 1) * f_out]) {
                *d += gi;
            }
        }
    }

    let need_logits = outs.x.is_some() || outs.steer.is_some() || outs.steer_bias.is_some();
    let need_xw = outs.x.is_some() || outs.weight.is_some();
    let mut gxw = vec![T::ZERO; if need_xw { n * hw } else { 0 }];
    let mut gxu = vec![T::ZERO; if need_logits { n * heads } else { 0 }];
    let mut gc = vec![T::ZERO; heads];
    let mut dq = vec![T::ZERO; heads];

    for i in 0..n {
        let span = offsets[i]..offsets[i + 1];
        let inv_deg = T::from_f64(1.0 / span.len() as f64);
        let gi: Vec<T> = g[i * f_out..(i + 1) * f_out].iter().map(|&v| v * inv_deg).collect();
        for e in span {
            let j = nbrs[e];
            let qe = &q[e * heads..(e + 1) * heads];
            if need_xw {
                let dst = &mut gxw[j * hw..(j + 1) * hw];
                for m in 0..heads {
                    let qm = qe[m];
                    for (d, &gv) in dst[m * f_out..(m + 1) * f_out].iter_mut().zip(&gi) {
                        *d += qm * gv;
                    }
                }
            }
            if need_logits {
                let row = &xw[j * hw..(j + 1) * hw];
                let mut weighted = T::ZERO;
                for m in 0..heads {
                    dq[m] = row[m * f_out..(m + 1) * f_out]
                        .iter()
                        .zip(&gi)
                        .map(|(&a, &b)| a * b)
                        .sum();
                    weighted += qe[m] * dq[m];
                }
                for m in 0..heads {
                    let dl = qe[m] * (dq[m] - weighted);
                    gxu[j * heads + m] += dl;
                    gxu[i * heads + m] -= dl;
                    gc[m] += dl;
                }
            }
        }
    }

    if let Some(gw) = outs.weight.as_mut() {
        gemm(f_in, n, hw, x, true, &gxw, false, gw, true);
    }
    if let Some(gu) = outs.steer.as_mut() {
        gemm(f_in, n, heads, x, true, &gxu, false, gu, true);
    }
    if let Some(gcb) = outs.steer_bias.as_mut() {
        for (d, &v) in gcb.iter_mut().zip(&gc) {
            *d += v;
        }
    }
    if let Some(gx) = outs.x.as_mut() {
        gemm(n, hw, f_in, &gxw, false, weight, true, gx, true);
        gemm(n, heads, f_in, &gxu, false, steer, true, gx, true);
    }
}
