//! Graph-convolution, linear and attention-fusion layers.
//!
//! Layers operate on tape variables. Each has a parameter struct of plain
//! matrices (for construction, initialisation and tests) and a `*Vars`
//! counterpart holding the same tensors bound to a tape.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mesh::Adjacency;
use crate::tensor::{FeastInputs, Matrix, Real, Tape, Var};

/// Uniform initialisation with bound `√(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

/// Feature-steered convolution parameters with `M` heads.
///
/// `weight` packs the per-head `F_in × F_out` matrices side by side
/// (`F_in × M·F_out`), `steer` holds the steering vectors `u_m` as columns
/// (`F_in × M`), `steer_bias` the offsets `c_m` (`1 × M`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeaStConvParams {
    pub heads: usize,
    pub weight: Matrix,
    pub steer: Matrix,
    pub steer_bias: Matrix,
    pub bias: Matrix,
}

impl FeaStConvParams {
    pub fn zeros(f_in: usize, f_out: usize, heads: usize) -> Self {
        FeaStConvParams {
            heads,
            weight: Matrix::zeros(f_in, heads * f_out),
            steer: Matrix::zeros(f_in, heads),
            steer_bias: Matrix::zeros(1, heads),
            bias: Matrix::zeros(1, f_out),
        }
    }

    pub fn init<R: Rng>(rng: &mut R, f_in: usize, f_out: usize, heads: usize) -> Self {
        FeaStConvParams {
            heads,
            weight: glorot_uniform(rng, f_in, heads * f_out, f_in, f_out),
            steer: glorot_uniform(rng, f_in, heads, f_in, heads),
            steer_bias: Matrix::zeros(1, heads),
            bias: Matrix::zeros(1, f_out),
        }
    }

    pub fn f_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn f_out(&self) -> usize {
        self.bias.cols()
    }

    /// Replaces head `m`'s weight block.
    pub fn set_head_weight(&mut self, m: usize, w: &Matrix) {
        let f_out = self.f_out();
        assert_eq!(w.shape(), (self.f_in(), f_out));
        for r in 0..w.rows() {
            self.weight.row_mut(r)[m * f_out..(m + 1) * f_out].copy_from_slice(w.row(r));
        }
    }

    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, requires_grad: bool) -> FeastVars {
        FeastVars {
            heads: self.heads,
            weight: tape.leaf(&self.weight, requires_grad),
            steer: tape.leaf(&self.steer, requires_grad),
            steer_bias: tape.leaf(&self.steer_bias, requires_grad),
            bias: tape.leaf(&self.bias, requires_grad),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.steer.is_finite() && self.steer_bias.is_finite() && self.bias.is_finite()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeastVars {
    pub heads: usize,
    pub weight: Var,
    pub steer: Var,
    pub steer_bias: Var,
    pub bias: Var,
}

/// Feature-steered graph convolution (Verma et al. 2018), translation
/// invariant variant:
///
/// ```text
/// y_i = b + 1/|N(i)| Σ_{j∈N(i)} Σ_m q_m(x_i, x_j) W_m x_j
/// q_m(x_i, x_j) = softmax_m(u_mᵀ (x_j − x_i) + c_m)
/// ```
///
/// `N(i)` includes `i` itself.
pub fn feastconv<T: Real>(tape: &mut Tape<T>, x: Var, adj: &Arc<Adjacency>, p: &FeastVars) -> Result<Var> {
    tape.feastconv(
        FeastInputs {
            x,
            weight: p.weight,
            steer: p.steer,
            steer_bias: p.steer_bias,
            bias: p.bias,
        },
        adj,
        p.heads,
    )
}

/// FeaStConv followed by LeakyReLU.
pub fn gc_layer<T: Real>(tape: &mut Tape<T>, x: Var, adj: &Arc<Adjacency>, p: &FeastVars, slope: f64) -> Result<Var> {
    let y = feastconv(tape, x, adj, p)?;
    Ok(tape.leaky_relu(y, slope))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// `in × out`.
    pub weight: Matrix,
    /// `1 × out`.
    pub bias: Matrix,
}

impl LinearParams {
    pub fn init<R: Rng>(rng: &mut R, f_in: usize, f_out: usize) -> Self {
        LinearParams {
            weight: glorot_uniform(rng, f_in, f_out, f_in, f_out),
            bias: Matrix::zeros(1, f_out),
        }
    }

    pub fn zeros(f_in: usize, f_out: usize) -> Self {
        LinearParams {
            weight: Matrix::zeros(f_in, f_out),
            bias: Matrix::zeros(1, f_out),
        }
    }

    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, requires_grad: bool) -> LinearVars {
        LinearVars {
            weight: tape.leaf(&self.weight, requires_grad),
            bias: Some(tape.leaf(&self.bias, requires_grad)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Option<Var>,
}

/// `x · W + b` with the bias broadcast over rows.
pub fn linear<T: Real>(tape: &mut Tape<T>, x: Var, p: &LinearVars) -> Result<Var> {
    let y = tape.matmul(x, p.weight)?;
    match p.bias {
        Some(b) => {
            let rows = tape.shape(y).0;
            let bb = tape.broadcast_row(b, rows)?;
            tape.add(y, bb)
        }
        None => Ok(y),
    }
}

/// Two-layer per-vertex attention producing the fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `2·F_dec → h`.
    pub layer1: LinearParams,
    /// `h → 2`.
    pub layer2: LinearParams,
}

impl AttentionParams {
    pub fn init<R: Rng>(rng: &mut R, f_dec: usize, hidden: usize) -> Self {
        AttentionParams {
            layer1: LinearParams::init(rng, 2 * f_dec, hidden),
            layer2: LinearParams::init(rng, hidden, 2),
        }
    }

    pub fn zeros(f_dec: usize, hidden: usize) -> Self {
        AttentionParams {
            layer1: LinearParams::zeros(2 * f_dec, hidden),
            layer2: LinearParams::zeros(hidden, 2),
        }
    }

    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, requires_grad: bool) -> AttentionVars {
        AttentionVars {
            layer1: self.layer1.bind(tape, requires_grad),
            layer2: self.layer2.bind(tape, requires_grad),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub layer1: LinearVars,
    pub layer2: LinearVars,
}

#[derive(Debug, Clone, Copy)]
pub struct Fusion {
    /// `N × 1` global-path weights.
    pub w_global: Var,
    /// `N × 1` local-path weights.
    pub w_local: Var,
    /// `diag(w_G) X_G + diag(w_L) X_L`.
    pub fused: Var,
}

/// Per-vertex softmax attention over the two decoder outputs:
/// `[w_G, w_L]_i = softmax(layer2(relu(layer1([X_G[i], X_L[i]]))))`.
pub fn attention_fuse<T: Real>(tape: &mut Tape<T>, x_global: Var, x_local: Var, p: &AttentionVars) -> Result<Fusion> {
    if tape.shape(x_global) != tape.shape(x_local) {
        return Err(Error::Shape(format!(
            "attention inputs {:?} vs {:?}",
            tape.shape(x_global),
            tape.shape(x_local)
        )));
    }
    let cat = tape.concat_cols(x_global, x_local)?;
    let h = linear(tape, cat, &p.layer1)?;
    let h = tape.relu(h);
    let logits = linear(tape, h, &p.layer2)?;
    let a = tape.softmax_rows(logits);
    let w_global = tape.slice_cols(a, 0, 1)?;
    let w_local = tape.slice_cols(a, 1, 2)?;
    let fused = weighted_sum(tape, x_global, w_global, x_local, w_local)?;
    Ok(Fusion {
        w_global,
        w_local,
        fused,
    })
}

/// Fusion with the same constant weight for every vertex.
pub fn fixed_fuse<T: Real>(tape: &mut Tape<T>, x_global: Var, x_local: Var, w_global: f64) -> Result<Fusion> {
    let n = tape.shape(x_global).0;
    let wg = tape.constant(&Matrix::filled(n, 1, w_global));
    let wl = tape.constant(&Matrix::filled(n, 1, 1.0 - w_global));
    let fused = weighted_sum(tape, x_global, wg, x_local, wl)?;
    Ok(Fusion {
        w_global: wg,
        w_local: wl,
        fused,
    })
}

fn weighted_sum<T: Real>(tape: &mut Tape<T>, a: Var, wa: Var, b: Var, wb: Var) -> Result<Var> {
    let sa = tape.scale_rows(a, wa)?;
    let sb = tape.scale_rows(b, wb)?;
    tape.add(sa, sb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_adjacency, shapes};
    use crate::tensor::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    fn run_feast(x: &Matrix, adj: &Arc<Adjacency>, p: &FeaStConvParams) -> Matrix {
        let mut t = Tape::<f64>::new();
        let xv = t.leaf(x, false);
        let pv = p.bind(&mut t, false);
        let y = feastconv(&mut t, xv, adj, &pv).unwrap();
        t.to_matrix(y)
    }

    #[test]
    fn single_head_is_mean_aggregation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mesh = shapes::icosphere(1, 1.0);
        let adj = Arc::new(build_adjacency(&mesh));
        let x = random(&mut rng, 42, 3);
        let p = FeaStConvParams::init(&mut rng, 3, 5, 1);
        let mut p = p;
        p.bias = random(&mut rng, 1, 5);
        let y = run_feast(&x, &adj, &p);
        for i in 0..42 {
            let nb = adj.neighbors(i);
            for o in 0..5 {
                let mut acc = 0.0;
                for &j in nb {
                    for k in 0..3 {
                        acc += x[(j, k)] * p.weight[(k, o)];
                    }
                }
                let want = p.bias[(0, o)] + acc / nb.len() as f64;
                assert!((y[(i, o)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn isolated_vertex_two_heads_by_hand() {
        let adj = Arc::new(Adjacency::from_edges(1, []));
        let mut p = FeaStConvParams::zeros(2, 2, 2);
        p.set_head_weight(0, &Matrix::identity(2));
        let mut two = Matrix::identity(2);
        two.as_mut_slice().iter_mut().for_each(|v| *v *= 2.0);
        p.set_head_weight(1, &two);
        let y = run_feast(&Matrix::from_rows(&[[1.0, 0.0]]), &adj, &p);
        assert_eq!(y, Matrix::from_rows(&[[1.5, 0.0]]));
    }

    #[test]
    fn feastconv_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mesh = shapes::icosphere(1, 1.0);
        let adj = Arc::new(build_adjacency(&mesh));
        let n = mesh.vertex_count();
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let x = random(&mut rng, n, 4);
        let p = FeaStConvParams::init(&mut rng, 4, 6, 3);
        let y = run_feast(&x, &adj, &p);
        let yp = run_feast(&x.permute_rows(&perm), &Arc::new(adj.permuted(&perm)), &p);
        assert!(yp.max_abs_diff(&y.permute_rows(&perm)) < 1e-6);
    }

    #[test]
    fn zero_weights_give_activated_bias() {
        let adj = Arc::new(build_adjacency(&shapes::tetrahedron()));
        let mut p = FeaStConvParams::zeros(3, 2, 2);
        p.bias = Matrix::from_rows(&[[1.5, -2.0]]);
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Matrix::filled(4, 3, 0.3), false);
        let pv = p.bind(&mut t, false);
        let y = gc_layer(&mut t, x, &adj, &pv, 0.01).unwrap();
        for i in 0..4 {
            assert_eq!(t.to_matrix(y).row(i), &[1.5, -0.02]);
        }
    }

    #[test]
    fn gc_layer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mesh = shapes::icosphere(0, 1.0);
        let adj = Arc::new(build_adjacency(&mesh));
        let p = FeaStConvParams::init(&mut rng, 3, 4, 3);
        let mut p = p;
        p.steer_bias = random(&mut rng, 1, 3);
        p.bias = random(&mut rng, 1, 4);
        let x = random(&mut rng, 12, 3);
        let r = random(&mut rng, 12, 4);
        let report = gradient_check(
            |t, v| {
                let pv = FeastVars {
                    heads: 3,
                    weight: v[1],
                    steer: v[2],
                    steer_bias: v[3],
                    bias: v[4],
                };
                let y = gc_layer(t, v[0], &adj, &pv, 0.01)?;
                let rr = t.constant(&r);
                let w = t.mul(y, rr)?;
                Ok(t.sum(w))
            },
            &[x, p.weight, p.steer, p.steer_bias, p.bias],
            1e-6,
            0,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn linear_identity_and_hand_case() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(&Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]), false);
        let id = LinearParams {
            weight: Matrix::identity(2),
            bias: Matrix::zeros(1, 2),
        }
        .bind(&mut t, false);
        let y = linear(&mut t, x, &id).unwrap();
        assert_eq!(t.value(y), t.value(x));
        let p = LinearParams {
            weight: Matrix::from_rows(&[[1.0, -1.0], [0.5, 2.0]]),
            bias: Matrix::from_rows(&[[0.1, 0.2]]),
        }
        .bind(&mut t, false);
        let y = linear(&mut t, x, &p).unwrap();
        // [1,2]·W = [2, 3], [3,4]·W = [5, 5].
        assert_eq!(t.value(y), &[2.1, 3.2, 5.1, 5.2]);
    }

    fn fuse(xg: &Matrix, xl: &Matrix, p: &AttentionParams) -> (Matrix, Matrix, Matrix) {
        let mut t = Tape::<f64>::new();
        let g = t.leaf(xg, false);
        let l = t.leaf(xl, false);
        let pv = p.bind(&mut t, false);
        let f = attention_fuse(&mut t, g, l, &pv).unwrap();
        (t.to_matrix(f.w_global), t.to_matrix(f.w_local), t.to_matrix(f.fused))
    }

    #[test]
    fn zero_attention_is_even_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (xg, xl) = (random(&mut rng, 5, 3), random(&mut rng, 5, 3));
        let (wg, wl, fused) = fuse(&xg, &xl, &AttentionParams::zeros(3, 3));
        assert!(wg.as_slice().iter().chain(wl.as_slice()).all(|&w| w == 0.5));
        for i in 0..5 {
            for k in 0..3 {
                assert!((fused[(i, k)] - 0.5 * (xg[(i, k)] + xl[(i, k)])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn equal_inputs_fuse_to_themselves() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&mut rng, 7, 4);
        let p = AttentionParams::init(&mut rng, 4, 4);
        let (_, _, fused) = fuse(&x, &x, &p);
        assert!(fused.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn attention_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = AttentionParams::init(&mut rng, 3, 5);
        let mut p = p;
        p.layer1.bias = random(&mut rng, 1, 5);
        let (xg, xl) = (random(&mut rng, 6, 3), random(&mut rng, 6, 3));
        let r = random(&mut rng, 6, 3);
        let report = gradient_check(
            |t, v| {
                let pv = AttentionVars {
                    layer1: LinearVars {
                        weight: v[2],
                        bias: Some(v[3]),
                    },
                    layer2: LinearVars {
                        weight: v[4],
                        bias: Some(v[5]),
                    },
                };
                let f = attention_fuse(t, v[0], v[1], &pv)?;
                let rr = t.constant(&r);
                let w = t.mul(f.fused, rr)?;
                Ok(t.sum(w))
            },
            &[xg, xl, p.layer1.weight, p.layer1.bias, p.layer2.weight, p.layer2.bias],
            1e-6,
            0,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn fixed_fuse_is_half_half() {
        let mut t = Tape::<f64>::new();
        let g = t.leaf(&Matrix::filled(3, 2, 2.0), false);
        let l = t.leaf(&Matrix::filled(3, 2, 4.0), false);
        let f = fixed_fuse(&mut t, g, l, 0.5).unwrap();
        assert!(t.value(f.fused).iter().all(|&v| v == 3.0));
    }
}
