//! The dual-path mesh autoencoder.
//!
//! ```text
//! encoder: z = FC([E_G(X); E_L(X)])
//! decoder: [z_G; z_L] = FC(z),  X_out = diag(w_G) D_G(z_G) + diag(w_L) D_L(z_L)
//! ```
//!
//! The global path runs GC layers interleaved with the down-sampling
//! matrices of a [`Hierarchy`] and decodes symmetrically through the
//! up-sampling matrices. The local path stays on the template graph with
//! residual GC layers. Per-vertex fusion weights come from
//! [`attention_fuse`](crate::layers::attention_fuse).

mod checkpoint;
mod config;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{assemble_features, denormalize, DatasetStats};
use crate::layers::{
    attention_fuse, feastconv, fixed_fuse, gc_layer, glorot_uniform, linear, AttentionVars, FeastVars, LinearVars,
};
use crate::mesh::{Adjacency, Mesh};
use crate::sampling::Hierarchy;
use crate::tensor::{Matrix, Real, Tape, Var};

pub use checkpoint::{load_checkpoint, load_checkpoint_file, save_checkpoint, save_checkpoint_file, Checkpoint,
    TrainingMetadata, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, PathMode};

/// Latent vector of length `Z`.
pub type LatentCode = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Zero,
}

struct ParamSpec {
    name: String,
    shape: (usize, usize),
    init: Init,
}

#[derive(Default)]
struct Layout {
    specs: Vec<ParamSpec>,
}

impl Layout {
    fn push(&mut self, name: String, shape: (usize, usize), init: Init) {
        self.specs.push(ParamSpec { name, shape, init });
    }

    fn linear(&mut self, prefix: &str, f_in: usize, f_out: usize) {
        self.push(format!("{prefix}.W"), (f_in, f_out), Init::Glorot { fan_in: f_in, fan_out: f_out });
        self.push(format!("{prefix}.b"), (1, f_out), Init::Zero);
    }

    fn feast(&mut self, prefix: &str, f_in: usize, f_out: usize, heads: usize) {
        self.push(format!("{prefix}.W"), (f_in, heads * f_out), Init::Glorot { fan_in: f_in, fan_out: f_out });
        self.push(format!("{prefix}.u"), (f_in, heads), Init::Glorot { fan_in: f_in, fan_out: heads });
        self.push(format!("{prefix}.c"), (1, heads), Init::Zero);
        self.push(format!("{prefix}.b"), (1, f_out), Init::Zero);
    }

    fn residual(&mut self, prefix: &str, f_in: usize, f_out: usize, heads: usize, use_residual: bool) {
        self.feast(prefix, f_in, f_out, heads);
        if use_residual && f_in != f_out {
            self.push(format!("{prefix}.proj.W"), (f_in, f_out), Init::Glorot { fan_in: f_in, fan_out: f_out });
        }
    }

    fn for_config(c: &ModelConfig) -> Layout {
        let mut l = Layout::default();
        let half = c.latent_size / 2;
        let (f_in, f_out, heads) = (c.in_channels(), c.out_channels(), c.heads);
        if c.path_mode.has_global() {
            let mut w = f_in;
            for (i, &g) in c.global_channels.iter().enumerate() {
                l.feast(&format!("enc.global.gc{i}"), w, g, heads);
                w = g;
            }
            l.linear("enc.global.fc", w, half);
        }
        if c.path_mode.has_local() {
            let mut w = f_in;
            for (i, &ch) in c.local_channels.iter().enumerate() {
                l.residual(&format!("enc.local.gc{i}"), w, ch, heads, c.use_residual);
                w = ch;
            }
            l.linear("enc.local.fc", c.vertex_count * w, half);
        }
        l.linear("enc.fc", c.latent_size, c.latent_size);
        l.linear("dec.fc", c.latent_size, c.latent_size);
        if c.path_mode.has_global() {
            let coarse = c.vertex_count >> c.levels;
            let mut w = *c.global_channels.last().expect("validated non-empty");
            l.linear("dec.global.fc", half, coarse * w);
            for (k, out) in c.global_decoder_widths().into_iter().enumerate() {
                l.feast(&format!("dec.global.gc{k}"), w, out, heads);
                w = out;
            }
        }
        if c.path_mode.has_local() {
            let mut w = c.local_channels[0];
            l.linear("dec.local.fc", half, c.vertex_count * w);
            for (k, out) in c.local_decoder_widths().into_iter().enumerate() {
                l.residual(&format!("dec.local.gc{k}"), w, out, heads, c.use_residual);
                w = out;
            }
        }
        if c.use_attention && c.path_mode == PathMode::Both {
            let h = c.attention_hidden();
            l.linear("att.layer1", 2 * f_out, h);
            l.linear("att.layer2", h, 2);
        }
        l
    }
}

/// All learnable tensors, keyed by stable dotted names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Matrix>,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, m: Matrix) {
        self.tensors.insert(name.into(), m);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Matrix::len).sum()
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter().find(|(_, m)| !m.is_finite()).map(|(n, _)| n)
    }

    /// Checks that names and shapes are exactly those required by `config`.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let layout = Layout::for_config(config);
        if layout.specs.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, found {}",
                layout.specs.len(),
                self.tensors.len()
            )));
        }
        for s in &layout.specs {
            match self.tensors.get(&s.name) {
                Some(m) if m.shape() == s.shape => {}
                Some(m) => {
                    return Err(Error::Shape(format!(
                        "parameter {} is {:?}, expected {:?}",
                        s.name,
                        m.shape(),
                        s.shape
                    )))
                }
                None => return Err(Error::Shape(format!("missing parameter {}", s.name))),
            }
        }
        Ok(())
    }
}

/// Fan-in-scaled uniform weights, zero biases and zero steering offsets.
/// Deterministic for a given seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::default();
    for s in Layout::for_config(config).specs {
        let m = match s.init {
            Init::Glorot { fan_in, fan_out } => glorot_uniform(&mut rng, s.shape.0, s.shape.1, fan_in, fan_out),
            Init::Zero => Matrix::zeros(s.shape.0, s.shape.1),
        };
        params.insert(s.name, m);
    }
    Ok(params)
}

/// Parameter tensors placed on a tape.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn bind<T: Real>(tape: &mut Tape<T>, params: &ModelParams, requires_grad: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, m)| (name.to_string(), tape.leaf(m, requires_grad)))
            .collect();
        BoundParams { vars }
    }

    /// Binds a subset, treating the rest as absent.
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        BoundParams { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    fn linear(&self, prefix: &str) -> Result<LinearVars> {
        Ok(LinearVars {
            weight: self.get(&format!("{prefix}.W"))?,
            bias: Some(self.get(&format!("{prefix}.b"))?),
        })
    }

    fn feast(&self, prefix: &str, heads: usize) -> Result<FeastVars> {
        Ok(FeastVars {
            heads,
            weight: self.get(&format!("{prefix}.W"))?,
            steer: self.get(&format!("{prefix}.u"))?,
            steer_bias: self.get(&format!("{prefix}.c"))?,
            bias: self.get(&format!("{prefix}.b"))?,
        })
    }
}

/// Decoder output with the per-vertex fusion weights (`N × 1` each).
#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    pub output: Var,
    pub w_global: Var,
    pub w_local: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub latent: Var,
    pub decoded: Decoded,
}

/// Architecture: configuration plus the fixed graph structure.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    pub hierarchy: Hierarchy,
}

impl Network {
    pub fn new(config: ModelConfig, hierarchy: Hierarchy) -> Result<Self> {
        config.validate()?;
        let n = hierarchy.template_mesh.vertex_count();
        if n != config.vertex_count {
            return Err(Error::VertexCount {
                expected: config.vertex_count,
                got: n,
            });
        }
        if config.path_mode.has_global() {
            let counts = hierarchy.vertex_counts();
            if counts.len() != config.levels + 1 || counts[config.levels] != config.vertex_count >> config.levels {
                return Err(Error::Shape(format!(
                    "hierarchy vertex counts {counts:?} do not match {} levels from {}",
                    config.levels, config.vertex_count
                )));
            }
        }
        Ok(Network { config, hierarchy })
    }

    fn template_adjacency(&self) -> &Arc<Adjacency> {
        &self.hierarchy.template_adjacency
    }

    /// Residual GC block: `act(feast(x)) + proj(x)`, with no activation when
    /// `last` is set.
    fn residual_block<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        prefix: &str,
        x: Var,
        last: bool,
    ) -> Result<Var> {
        let c = &self.config;
        let fv = p.feast(prefix, c.heads)?;
        let adj = self.template_adjacency();
        let y = if last {
            feastconv(tape, x, adj, &fv)?
        } else {
            gc_layer(tape, x, adj, &fv, c.slope)?
        };
        if !c.use_residual {
            return Ok(y);
        }
        let f_out = tape.shape(y).1;
        let skip = if tape.shape(x).1 == f_out {
            x
        } else {
            let w = p.get(&format!("{prefix}.proj.W"))?;
            tape.matmul(x, w)?
        };
        tape.add(y, skip)
    }

    /// `1 × Z/2` global code.
    pub fn encode_global<T: Real>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let c = &self.config;
        let mut h = x;
        for l in 0..c.levels {
            let fv = p.feast(&format!("enc.global.gc{l}"), c.heads)?;
            h = gc_layer(tape, h, self.hierarchy.adjacency(l), &fv, c.slope)?;
            h = tape.sparse_mul(&self.hierarchy.levels[l].down, h)?;
        }
        let h = linear(tape, h, &p.linear("enc.global.fc")?)?;
        let h = tape.mean_rows(h)?;
        Ok(tape.leaky_relu(h, c.slope))
    }

    /// `1 × Z/2` local code.
    pub fn encode_local<T: Real>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let c = &self.config;
        let mut h = x;
        for i in 0..c.local_channels.len() {
            h = self.residual_block(tape, p, &format!("enc.local.gc{i}"), h, false)?;
        }
        let flat = tape.flatten(h);
        let h = linear(tape, flat, &p.linear("enc.local.fc")?)?;
        Ok(tape.leaky_relu(h, c.slope))
    }

    /// `1 × Z` latent code.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let c = &self.config;
        let (n, f) = tape.shape(x);
        if n != c.vertex_count || f != c.in_channels() {
            return Err(Error::Shape(format!(
                "encoder input is {n}x{f}, expected {}x{}",
                c.vertex_count,
                c.in_channels()
            )));
        }
        let half = c.latent_size / 2;
        let zero = || Matrix::zeros(1, half);
        let g = if c.path_mode.has_global() {
            self.encode_global(tape, p, x)?
        } else {
            tape.constant(&zero())
        };
        let l = if c.path_mode.has_local() {
            self.encode_local(tape, p, x)?
        } else {
            tape.constant(&zero())
        };
        let cat = tape.concat_cols(g, l)?;
        linear(tape, cat, &p.linear("enc.fc")?)
    }

    fn decode_global<T: Real>(&self, tape: &mut Tape<T>, p: &BoundParams, z_g: Var) -> Result<Var> {
        let c = &self.config;
        let coarse = c.vertex_count >> c.levels;
        let width = *c.global_channels.last().expect("validated");
        let h = linear(tape, z_g, &p.linear("dec.global.fc")?)?;
        let mut h = tape.reshape(h, coarse, width)?;
        for k in 0..c.levels {
            let l = c.levels - 1 - k;
            h = tape.sparse_mul(&self.hierarchy.levels[l].up, h)?;
            let fv = p.feast(&format!("dec.global.gc{k}"), c.heads)?;
            let adj = self.hierarchy.adjacency(l);
            h = if k + 1 == c.levels {
                feastconv(tape, h, adj, &fv)?
            } else {
                gc_layer(tape, h, adj, &fv, c.slope)?
            };
        }
        Ok(h)
    }

    fn decode_local<T: Real>(&self, tape: &mut Tape<T>, p: &BoundParams, z_l: Var) -> Result<Var> {
        let c = &self.config;
        let h = linear(tape, z_l, &p.linear("dec.local.fc")?)?;
        let mut h = tape.reshape(h, c.vertex_count, c.local_channels[0])?;
        let layers = c.local_decoder_widths().len();
        for k in 0..layers {
            h = self.residual_block(tape, p, &format!("dec.local.gc{k}"), h, k + 1 == layers)?;
        }
        Ok(h)
    }

    /// `N × F_out` reconstruction in normalised units.
    pub fn decode<T: Real>(&self, tape: &mut Tape<T>, p: &BoundParams, z: Var) -> Result<Decoded> {
        let c = &self.config;
        if tape.shape(z) != (1, c.latent_size) {
            return Err(Error::Shape(format!(
                "latent is {:?}, expected (1, {})",
                tape.shape(z),
                c.latent_size
            )));
        }
        let half = c.latent_size / 2;
        let h = linear(tape, z, &p.linear("dec.fc")?)?;
        let z_g = tape.slice_cols(h, 0, half)?;
        let z_l = tape.slice_cols(h, half, c.latent_size)?;
        let n = c.vertex_count;
        let fused = match c.path_mode {
            PathMode::Both => {
                let xg = self.decode_global(tape, p, z_g)?;
                let xl = self.decode_local(tape, p, z_l)?;
                if c.use_attention {
                    let av = AttentionVars {
                        layer1: p.linear("att.layer1")?,
                        layer2: p.linear("att.layer2")?,
                    };
                    attention_fuse(tape, xg, xl, &av)?
                } else {
                    fixed_fuse(tape, xg, xl, 0.5)?
                }
            }
            PathMode::LocalOnly => {
                let xl = self.decode_local(tape, p, z_l)?;
                let zeros = tape.constant(&Matrix::zeros(n, c.out_channels()));
                fixed_fuse(tape, zeros, xl, 0.0)?
            }
            PathMode::GlobalOnly => {
                let xg = self.decode_global(tape, p, z_g)?;
                let zeros = tape.constant(&Matrix::zeros(n, c.out_channels()));
                fixed_fuse(tape, xg, zeros, 1.0)?
            }
        };
        Ok(Decoded {
            output: fused.fused,
            w_global: fused.w_global,
            w_local: fused.w_local,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Forward> {
        let latent = self.encode(tape, p, x)?;
        let decoded = self.decode(tape, p, latent)?;
        Ok(Forward { latent, decoded })
    }

    /// Latent code of a feature matrix, evaluated in 64-bit.
    pub fn encode_features(&self, params: &ModelParams, x: &Matrix) -> Result<LatentCode> {
        let mut tape = Tape::<f64>::new();
        let p = BoundParams::bind(&mut tape, params, false);
        let xv = tape.constant(x);
        let z = self.encode(&mut tape, &p, xv)?;
        Ok(tape.value(z).to_vec())
    }

    /// Decoded features and fusion weights for a latent code, in 64-bit.
    pub fn decode_latent(&self, params: &ModelParams, z: &[f64]) -> Result<DecodedMatrices> {
        let mut tape = Tape::<f64>::new();
        let p = BoundParams::bind(&mut tape, params, false);
        let zv = tape.constant(&Matrix::row_vector(z.to_vec()));
        let d = self.decode(&mut tape, &p, zv)?;
        Ok(DecodedMatrices {
            features: tape.to_matrix(d.output),
            w_global: tape.value(d.w_global).to_vec(),
            w_local: tape.value(d.w_local).to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedMatrices {
    pub features: Matrix,
    pub w_global: Vec<f64>,
    pub w_local: Vec<f64>,
}

/// A trained (or freshly initialised) model with everything needed to map
/// meshes to latents and back.
#[derive(Debug, Clone)]
pub struct Model {
    pub network: Network,
    pub stats: DatasetStats,
    pub params: ModelParams,
}

impl Model {
    pub fn new(network: Network, stats: DatasetStats, params: ModelParams) -> Result<Self> {
        params.check_against(&network.config)?;
        if stats.vertex_count() != network.config.vertex_count {
            return Err(Error::VertexCount {
                expected: network.config.vertex_count,
                got: stats.vertex_count(),
            });
        }
        Ok(Model { network, stats, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.network.config
    }

    pub fn template_faces(&self) -> &[[usize; 3]] {
        &self.network.hierarchy.template_mesh.faces
    }

    fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        let n = self.config().vertex_count;
        if mesh.vertex_count() != n {
            return Err(Error::VertexCount {
                expected: n,
                got: mesh.vertex_count(),
            });
        }
        Ok(())
    }

    pub fn features(&self, mesh: &Mesh) -> Result<Matrix> {
        self.check_mesh(mesh)?;
        assemble_features(mesh, &self.stats, self.config().use_curvature)
    }

    pub fn encode(&self, mesh: &Mesh) -> Result<LatentCode> {
        let x = self.features(mesh)?;
        self.network.encode_features(&self.params, &x)
    }

    /// Decodes a latent code to a mesh with the template faces.
    pub fn decode(&self, z: &[f64]) -> Result<Mesh> {
        Ok(self.decode_full(z)?.0)
    }

    /// Decoded mesh together with the fusion weights.
    pub fn decode_full(&self, z: &[f64]) -> Result<(Mesh, DecodedMatrices)> {
        if z.len() != self.config().latent_size {
            return Err(Error::Shape(format!(
                "latent of length {}, expected {}",
                z.len(),
                self.config().latent_size
            )));
        }
        let d = self.network.decode_latent(&self.params, z)?;
        let positions = denormalize(&d.features, &self.stats)?.to_points();
        let mesh = Mesh {
            positions,
            faces: self.template_faces().to_vec(),
        };
        Ok((mesh, d))
    }

    /// `denormalize(decode(encode(mesh)))` with the template faces.
    pub fn reconstruct(&self, mesh: &Mesh) -> Result<Mesh> {
        let z = self.encode(mesh)?;
        self.decode(&z)
    }
}
