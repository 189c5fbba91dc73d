//! Losses, optimisation and evaluation.
//!
//! ```text
//! L_MSE = ‖X_out − Y‖²_F / N
//! L_reg = (‖z‖₂ − 1)²
//! L     = L_MSE + λ_reg · L_reg
//! ```

mod fit;
mod metrics;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SigmaMode;
use crate::model::ModelParams;
use crate::tensor::{Matrix, Real, Tape, Var};

pub use fit::{fit, fit_with, EpochLog, FitOutput, Split, CSV_HEADER};
pub use metrics::{evaluate_metrics, MetricsReport};

/// Which output channels enter the reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChannels {
    #[default]
    All,
    Positions,
}

/// Divisor of the squared Frobenius norm in the reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseDivisor {
    /// Vertex count `N`.
    #[default]
    Vertices,
    /// Element count `N·F`.
    Elements,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub halve_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_reg: f64,
    pub seed: u64,
    pub loss_channels: LossChannels,
    pub mse_divisor: MseDivisor,
    pub precision: Precision,
    pub sigma_mode: SigmaMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.0005,
            halve_every: 50,
            batch_size: 32,
            epochs: 300,
            lambda_reg: 0.0001,
            seed: 0,
            loss_channels: LossChannels::All,
            mse_divisor: MseDivisor::Vertices,
            precision: Precision::F32,
            sigma_mode: SigmaMode::PerChannel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return Err(Error::Config(format!("lr0 {} must be finite and non-negative", self.lr0)));
        }
        if self.halve_every == 0 || self.batch_size == 0 {
            return Err(Error::Config("halve_every and batch_size must be positive".into()));
        }
        if !(self.lambda_reg.is_finite() && self.lambda_reg >= 0.0) {
            return Err(Error::Config(format!("lambda_reg {} must be finite and non-negative", self.lambda_reg)));
        }
        Ok(())
    }
}

/// `lr0 · 0.5^⌊e / halve_every⌋` for 0-based epoch `e`.
pub fn lr_at_epoch(epoch: usize, config: &TrainConfig) -> f64 {
    let halvings = (epoch / config.halve_every.max(1)).min(i32::MAX as usize) as i32;
    config.lr0 * 0.5f64.powi(halvings)
}

/// `‖X_out − Y‖²_F / N` (or `/ N·F` with [`MseDivisor::Elements`]).
pub fn mse_loss<T: Real>(
    tape: &mut Tape<T>,
    out: Var,
    target: Var,
    channels: LossChannels,
    divisor: MseDivisor,
) -> Result<Var> {
    let (out, target) = match channels {
        LossChannels::All => (out, target),
        LossChannels::Positions => (tape.slice_cols(out, 0, 3)?, tape.slice_cols(target, 0, 3)?),
    };
    let d = tape.sub(out, target)?;
    let (n, f) = tape.shape(d);
    let sq = tape.square(d);
    let s = tape.sum(sq);
    let denom = match divisor {
        MseDivisor::Vertices => n,
        MseDivisor::Elements => n * f,
    };
    Ok(tape.scale(s, 1.0 / denom.max(1) as f64))
}

/// `(‖z‖₂ − 1)²`. The norm's gradient is taken as 0 when `‖z‖ < 1e-12`.
pub fn spherical_reg<T: Real>(tape: &mut Tape<T>, z: Var) -> Var {
    let norm = tape.l2_norm(z);
    let dev = tape.add_scalar(norm, -1.0);
    tape.square(dev)
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub mse: Var,
    pub reg: Var,
}

/// `L_MSE + λ · L_reg`.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    out: Var,
    target: Var,
    z: Var,
    lambda: f64,
    channels: LossChannels,
    divisor: MseDivisor,
) -> Result<LossTerms> {
    let mse = mse_loss(tape, out, target, channels, divisor)?;
    let reg = spherical_reg(tape, z);
    let weighted = tape.scale(reg, lambda);
    let total = tape.add(mse, weighted)?;
    Ok(LossTerms { total, mse, reg })
}

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(n, m)| (n.to_string(), vec![0.0; m.len()]))
                .collect::<BTreeMap<_, _>>()
        };
        OptimizerState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.v.get(name).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update. Tensors without a gradient entry are
/// treated as having a zero gradient.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name);
        let (m, v) = match (state.m.get_mut(name), state.v.get_mut(name)) {
            (Some(m), Some(v)) if m.len() == p.len() => (m, v),
            _ => return Err(Error::Shape(format!("optimizer state does not match parameter {name}"))),
        };
        if let Some(g) = g {
            if g.len() != p.len() {
                return Err(Error::Shape(format!("gradient of {name} has {} entries, expected {}", g.len(), p.len())));
            }
        }
        for (k, w) in p.as_mut_slice().iter_mut().enumerate() {
            let gk = g.map_or(0.0, |g| g[k]);
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rounds every parameter to the nearest `f32`.
pub fn round_to_f32(params: &mut ModelParams) {
    for (_, m) in params.iter_mut() {
        m.as_mut_slice().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

/// Gradient-check objective: the training loss of one sample as a function
/// of all model parameters (in [`ModelParams`] name order).
pub struct ReconstructionObjective<'a> {
    pub network: &'a crate::model::Network,
    pub names: Vec<String>,
    pub input: Matrix,
    pub target: Matrix,
    pub lambda: f64,
}

impl<'a> ReconstructionObjective<'a> {
    pub fn new(network: &'a crate::model::Network, params: &ModelParams, input: Matrix, target: Matrix) -> Self {
        ReconstructionObjective {
            network,
            names: params.names().map(String::from).collect(),
            input,
            target,
            lambda: 0.0001,
        }
    }
}

impl crate::tensor::Objective for ReconstructionObjective<'_> {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, params: &[Var]) -> Result<Var> {
        let bound = crate::model::BoundParams::from_vars(self.names.iter().cloned().zip(params.iter().copied()).collect());
        let x = tape.constant(&self.input);
        let f = self.network.forward(tape, &bound, x)?;
        let y = tape.constant(&self.target);
        let terms = total_loss(
            tape,
            f.decoded.output,
            y,
            f.latent,
            self.lambda,
            LossChannels::All,
            MseDivisor::Vertices,
        )?;
        Ok(terms.total)
    }
}
