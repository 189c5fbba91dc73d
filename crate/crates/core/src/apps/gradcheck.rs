//! Finite-difference gradient suite over every tape primitive, the layers
//! and the full model loss.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{compute_dataset_stats, positions_matrix, SigmaMode};
use crate::layers::{attention_fuse, feastconv, gc_layer, linear, AttentionVars, FeastVars, LinearVars};
use crate::mesh::{build_adjacency, shapes, Adjacency, Mesh};
use crate::model::{init_params, Model, ModelConfig, Network};
use crate::sampling::build_hierarchy;
use crate::sparse::SparseMatrix;
use crate::tensor::{gradient_check_extended, GradCheckReport, Matrix, Objective, Real, Tape, Var};
use crate::training::ReconstructionObjective;

pub const GRADCHECK_EPS: f64 = 1e-6;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub name: String,
    pub report: GradCheckReport,
}

impl LayerCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRADCHECK_TOLERANCE
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub checks: Vec<LayerCheck>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(LayerCheck::passed)
    }
}

#[derive(Clone, Copy)]
enum Op {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Square,
    Sqrt,
    L2Norm,
    Sum,
    Reshape,
    Flatten,
    SliceCols,
    ConcatCols,
    MeanRows,
    BroadcastRow,
    ScaleRows,
    LeakyRelu,
    Relu,
    SoftmaxRows,
    SparseMul,
    FeaStConv,
    GcLayer,
    Linear,
    Attention,
}

const PRIMITIVES: &[(&str, Op)] = &[
    ("matmul", Op::MatMul),
    ("add", Op::Add),
    ("sub", Op::Sub),
    ("mul", Op::Mul),
    ("scale", Op::Scale),
    ("add_scalar", Op::AddScalar),
    ("square", Op::Square),
    ("sqrt", Op::Sqrt),
    ("l2_norm", Op::L2Norm),
    ("sum", Op::Sum),
    ("reshape", Op::Reshape),
    ("flatten", Op::Flatten),
    ("slice_cols", Op::SliceCols),
    ("concat_cols", Op::ConcatCols),
    ("mean_rows", Op::MeanRows),
    ("broadcast_row", Op::BroadcastRow),
    ("scale_rows", Op::ScaleRows),
    ("leaky_relu", Op::LeakyRelu),
    ("relu", Op::Relu),
    ("softmax_rows", Op::SoftmaxRows),
    ("sparse_mul", Op::SparseMul),
];

const FEAST_HEADS: usize = 3;

/// One op applied to random inputs, read out as `Σ out ⊙ R` with a fixed
/// random `R` so that every output coordinate carries a distinct weight.
struct Case {
    op: Op,
    sparse: Arc<SparseMatrix>,
    adj: Arc<Adjacency>,
    readout: Matrix,
}

impl Case {
    fn output<T: Real>(&self, t: &mut Tape<T>, v: &[Var]) -> Result<Var> {
        Ok(match self.op {
            Op::MatMul => t.matmul(v[0], v[1])?,
            Op::Add => t.add(v[0], v[1])?,
            Op::Sub => t.sub(v[0], v[1])?,
            Op::Mul => t.mul(v[0], v[1])?,
            Op::Scale => t.scale(v[0], -1.7),
            Op::AddScalar => t.add_scalar(v[0], 0.3),
            Op::Square => t.square(v[0]),
            Op::Sqrt => t.sqrt(v[0])?,
            Op::L2Norm => t.l2_norm(v[0]),
            Op::Sum => t.sum(v[0]),
            Op::Reshape => t.reshape(v[0], 4, 3)?,
            Op::Flatten => t.flatten(v[0]),
            Op::SliceCols => t.slice_cols(v[0], 1, 3)?,
            Op::ConcatCols => t.concat_cols(v[0], v[1])?,
            Op::MeanRows => t.mean_rows(v[0])?,
            Op::BroadcastRow => t.broadcast_row(v[0], 3)?,
            Op::ScaleRows => t.scale_rows(v[0], v[1])?,
            Op::LeakyRelu => t.leaky_relu(v[0], 0.2),
            Op::Relu => t.relu(v[0]),
            Op::SoftmaxRows => t.softmax_rows(v[0]),
            Op::SparseMul => t.sparse_mul(&self.sparse, v[0])?,
            Op::FeaStConv | Op::GcLayer => {
                let p = FeastVars {
                    heads: FEAST_HEADS,
                    weight: v[1],
                    steer: v[2],
                    steer_bias: v[3],
                    bias: v[4],
                };
                if matches!(self.op, Op::FeaStConv) {
                    feastconv(t, v[0], &self.adj, &p)?
                } else {
                    gc_layer(t, v[0], &self.adj, &p, 0.2)?
                }
            }
            Op::Linear => linear(
                t,
                v[0],
                &LinearVars {
                    weight: v[1],
                    bias: Some(v[2]),
                },
            )?,
            Op::Attention => {
                let p = AttentionVars {
                    layer1: LinearVars {
                        weight: v[2],
                        bias: Some(v[3]),
                    },
                    layer2: LinearVars {
                        weight: v[4],
                        bias: Some(v[5]),
                    },
                };
                let f = attention_fuse(t, v[0], v[1], &p)?;
                // Read out the weights too so their gradient path is checked
                // on its own.
                let w = t.concat_cols(f.w_global, f.w_local)?;
                t.concat_cols(f.fused, w)?
            }
        })
    }
}

impl Objective for Case {
    fn eval<T: Real>(&self, t: &mut Tape<T>, v: &[Var]) -> Result<Var> {
        let out = self.output(t, v)?;
        let r = t.constant(&self.readout);
        let prod = t.mul(out, r)?;
        Ok(t.sum(prod))
    }
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Entries bounded away from zero, so kinks are never within `eps`.
fn random_off_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn inputs(op: Op, rng: &mut ChaCha8Rng) -> Vec<Matrix> {
    let x = random(rng, 3, 4);
    match op {
        Op::MatMul => vec![x, random(rng, 4, 2)],
        Op::Add | Op::Sub | Op::Mul => vec![x, random(rng, 3, 4)],
        Op::ConcatCols => vec![x, random(rng, 3, 2)],
        Op::BroadcastRow => vec![random(rng, 1, 4)],
        Op::ScaleRows => vec![x, random(rng, 3, 1)],
        Op::Sqrt => {
            let data = x.as_slice().iter().map(|v| v.abs() + 0.5).collect();
            vec![Matrix::from_vec(3, 4, data).unwrap()]
        }
        Op::LeakyRelu | Op::Relu => vec![random_off_zero(rng, 3, 4)],
        Op::SoftmaxRows => {
            let data = x.as_slice().iter().map(|v| 3.0 * v).collect();
            vec![Matrix::from_vec(3, 4, data).unwrap()]
        }
        Op::SparseMul => vec![random(rng, 3, 4)],
        Op::FeaStConv | Op::GcLayer => {
            let (f_in, f_out, n) = (3, 4, 12);
            vec![
                random(rng, n, f_in),
                random(rng, f_in, FEAST_HEADS * f_out),
                random(rng, f_in, FEAST_HEADS),
                random(rng, 1, FEAST_HEADS),
                random(rng, 1, f_out),
            ]
        }
        Op::Linear => vec![x, random(rng, 4, 5), random(rng, 1, 5)],
        Op::Attention => {
            let (n, f, h) = (12, 3, 5);
            vec![
                random(rng, n, f),
                random(rng, n, f),
                random(rng, 2 * f, h),
                random(rng, 1, h),
                random(rng, h, 2),
                random(rng, 1, 2),
            ]
        }
        _ => vec![x],
    }
}

fn check_op(name: &str, op: Op, rng: &mut ChaCha8Rng, mesh: &Mesh, seed: u64) -> Result<LayerCheck> {
    let params = inputs(op, rng);
    let sparse = Arc::new(SparseMatrix::from_triplets(
        5,
        3,
        [(0, 0, 0.5), (0, 2, -1.2), (1, 1, 2.0), (3, 0, 0.7), (3, 1, 0.1), (4, 2, 1.0)],
    )?);
    let mut case = Case {
        op,
        sparse,
        adj: Arc::new(build_adjacency(mesh)),
        readout: Matrix::zeros(0, 0),
    };
    let (r, c) = {
        let mut t = Tape::<f64>::new();
        let v: Vec<Var> = params.iter().map(|p| t.leaf(p, false)).collect();
        let out = case.output(&mut t, &v)?;
        t.shape(out)
    };
    case.readout = random(rng, r, c);
    let report = gradient_check_extended(&case, &params, GRADCHECK_EPS, seed)?;
    Ok(LayerCheck {
        name: name.to_string(),
        report,
    })
}

/// Small model on a 12-vertex icosahedron with `Z = 8`.
pub fn gradcheck_model(seed: u64) -> Result<Model> {
    let template = shapes::icosphere(0, 1.0);
    let config = ModelConfig {
        vertex_count: template.vertex_count(),
        latent_size: 8,
        local_channels: vec![4, 6, 6],
        global_channels: vec![6],
        levels: 1,
        heads: 3,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Matrix> = (0..4)
        .map(|_| positions_matrix(&jitter(&template, &mut rng, 0.1)))
        .collect();
    let mut stats = compute_dataset_stats(&samples, SigmaMode::PerChannel)?;
    stats.curvature_mean = 0.9;
    stats.curvature_std = 0.2;
    let hierarchy = build_hierarchy(&template, config.levels)?;
    let mut params = init_params(&config, seed)?;
    // Zero-initialised biases would hide their own gradient paths.
    for (_, m) in params.iter_mut() {
        if m.as_slice().iter().all(|&v| v == 0.0) {
            m.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
        }
    }
    Model::new(Network::new(config, hierarchy)?, stats, params)
}

fn jitter(mesh: &Mesh, rng: &mut ChaCha8Rng, amount: f64) -> Mesh {
    mesh.with_positions(
        mesh.positions
            .iter()
            .map(|p| p.map(|v| v + rng.gen_range(-amount..amount)))
            .collect(),
    )
}

fn check_model(seed: u64) -> Result<LayerCheck> {
    let model = gradcheck_model(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf00d);
    let template = &model.network.hierarchy.template_mesh;
    let input = model.features(&jitter(template, &mut rng, 0.05))?;
    let target = model.features(&jitter(template, &mut rng, 0.05))?;
    let objective = ReconstructionObjective::new(&model.network, &model.params, input, target);
    let tensors: Vec<Matrix> = model.params.iter().map(|(_, m)| m.clone()).collect();
    let report = gradient_check_extended(&objective, &tensors, GRADCHECK_EPS, seed)?;
    Ok(LayerCheck {
        name: "model_loss".into(),
        report,
    })
}

/// Runs every check. `on_check` sees each result as soon as it is ready.
pub fn run_gradcheck_suite(seed: u64, mut on_check: impl FnMut(&LayerCheck)) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = shapes::icosphere(0, 1.0);
    let mut ops: Vec<(&str, Op)> = PRIMITIVES.to_vec();
    ops.extend([
        ("feastconv", Op::FeaStConv),
        ("gc_layer", Op::GcLayer),
        ("linear", Op::Linear),
        ("attention", Op::Attention),
    ]);
    let mut checks = Vec::new();
    for (name, op) in ops {
        let c = check_op(name, op, &mut rng, &mesh, seed)?;
        on_check(&c);
        checks.push(c);
    }
    let c = check_model(seed)?;
    on_check(&c);
    checks.push(c);
    Ok(SuiteReport {
        checks,
        seconds: start.elapsed().as_secs_f64(),
    })
}
