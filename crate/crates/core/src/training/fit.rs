use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, lr_at_epoch, round_to_f32, total_loss, OptimizerState, Precision, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::{assemble_features, compute_dataset_stats, mean_curvature, positions_matrix, DatasetStats};
use crate::mesh::Mesh;
use crate::model::{init_params, BoundParams, Checkpoint, Model, ModelConfig, ModelParams, Network, TrainingMetadata};
use crate::sampling::build_hierarchy;
use crate::tensor::{Matrix, Real, Tape};

pub const CSV_HEADER: &str = "epoch,lr,train_total,train_mse,train_reg,val_total,val_mse,val_reg,wall_seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_total: f64,
    pub train_mse: f64,
    pub train_reg: f64,
    /// NaN when there is no validation set.
    pub val_total: f64,
    pub val_mse: f64,
    pub val_reg: f64,
    pub wall_seconds: f64,
    /// Mean `|‖z‖ − 1|` over the training samples seen this epoch.
    pub mean_latent_deviation: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.lr,
            self.train_total,
            self.train_mse,
            self.train_reg,
            self.val_total,
            self.val_mse,
            self.val_reg,
            self.wall_seconds
        )
    }
}

/// Indices into the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl Split {
    /// 100 validation samples above 1000 meshes, otherwise 10 %.
    pub fn random(n: usize, rng: &mut ChaCha8Rng) -> Split {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let n_val = if n > 1000 { 100 } else { n / 10 };
        let validation = idx[..n_val].to_vec();
        let mut train = idx[n_val..].to_vec();
        train.sort_unstable();
        let mut validation = validation;
        validation.sort_unstable();
        Split { train, validation }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    /// Lowest validation loss (training loss when there is no validation
    /// set).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
    pub split: Split,
}

pub fn fit(meshes: &[Mesh], model: &ModelConfig, train: &TrainConfig) -> Result<FitOutput> {
    fit_with(meshes, model, train, |_| Ok(()))
}

/// [`fit`] with a callback after every epoch (for streaming logs).
pub fn fit_with<F>(meshes: &[Mesh], model: &ModelConfig, train: &TrainConfig, on_epoch: F) -> Result<FitOutput>
where
    F: FnMut(&EpochLog) -> Result<()>,
{
    train.validate()?;
    let mut config = model.clone();
    let first = meshes
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    config.vertex_count = first.vertex_count();
    config.validate()?;
    for (i, m) in meshes.iter().enumerate() {
        if m.vertex_count() != first.vertex_count() {
            return Err(Error::VertexCount {
                expected: first.vertex_count(),
                got: m.vertex_count(),
            });
        }
        if m.faces != first.faces {
            return Err(Error::InvalidArgument(format!("mesh {i} does not share the template faces")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let split = Split::random(meshes.len(), &mut rng);
    let train_meshes: Vec<&Mesh> = split.train.iter().map(|&i| &meshes[i]).collect();
    let positions: Vec<Matrix> = train_meshes.iter().map(|m| positions_matrix(m)).collect();
    let mut stats = compute_dataset_stats(&positions, train.sigma_mode)?;
    if config.use_curvature {
        let curv: Vec<Vec<f64>> = train_meshes.iter().map(|m| mean_curvature(m).values).collect();
        stats.fit_curvature(&curv)?;
    }
    let template = first.with_positions(stats.template_mean.to_points());
    let hierarchy = build_hierarchy(&template, config.levels)?;
    let network = Network::new(config.clone(), hierarchy)?;
    let mut params = init_params(&config, train.seed)?;
    if train.precision == Precision::F32 {
        round_to_f32(&mut params);
    }
    let features: Vec<Matrix> = meshes
        .iter()
        .map(|m| assemble_features(m, &stats, config.use_curvature))
        .collect::<Result<_>>()?;

    let mut trainer = Trainer {
        network: &network,
        features: &features,
        train: train.clone(),
        rng,
        split: split.clone(),
        on_epoch,
    };
    let run = match train.precision {
        Precision::F32 => trainer.run::<f32>(&mut params)?,
        Precision::F64 => trainer.run::<f64>(&mut params)?,
    };

    let checkpoint = |params: ModelParams, log: Option<&EpochLog>, stats: &DatasetStats| -> Result<Checkpoint> {
        Ok(Checkpoint {
            model: Model::new(network.clone(), stats.clone(), params)?,
            metadata: TrainingMetadata {
                epoch: log.map_or(0, |l| l.epoch),
                learning_rate: log.map_or(train.lr0, |l| l.lr),
                seed: train.seed,
                val_total: log.map(|l| l.val_total).filter(|v| v.is_finite()),
                train_total: log.map(|l| l.train_total),
            },
        })
    };
    let best_log = run.best_epoch.map(|e| &run.log[e]);
    let best = checkpoint(run.best_params.unwrap_or_else(|| params.clone()), best_log, &stats)?;
    let last = checkpoint(params, run.log.last(), &stats)?;
    Ok(FitOutput {
        best,
        last,
        log: run.log,
        split,
    })
}

struct Trainer<'a, F> {
    network: &'a Network,
    features: &'a [Matrix],
    train: TrainConfig,
    rng: ChaCha8Rng,
    split: Split,
    on_epoch: F,
}

struct RunResult {
    log: Vec<EpochLog>,
    best_epoch: Option<usize>,
    best_params: Option<ModelParams>,
}

#[derive(Default)]
struct Sums {
    total: f64,
    mse: f64,
    reg: f64,
    latent_dev: f64,
    count: usize,
}

impl Sums {
    fn mean(&self, v: f64) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            v / self.count as f64
        }
    }
}

impl<F> Trainer<'_, F>
where
    F: FnMut(&EpochLog) -> Result<()>,
{
    fn run<T: Real>(&mut self, params: &mut ModelParams) -> Result<RunResult> {
        let start = Instant::now();
        let mut state = OptimizerState::new(params);
        let mut log = Vec::with_capacity(self.train.epochs);
        let mut best: Option<(f64, usize, ModelParams)> = None;
        let mut order = self.split.train.clone();
        for epoch in 0..self.train.epochs {
            let lr = lr_at_epoch(epoch, &self.train);
            order.shuffle(&mut self.rng);
            let mut sums = Sums::default();
            for (b, batch) in order.chunks(self.train.batch_size).enumerate() {
                let grads = self.batch_step::<T>(params, batch, &mut sums, epoch + 1, b + 1)?;
                adam_step(params, &grads, &mut state, lr)?;
                if let Some(name) = params.first_non_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch: epoch + 1,
                        batch: b + 1,
                        detail: format!("parameter {name} became non-finite after the update"),
                    });
                }
                if T::NAME == "f32" {
                    round_to_f32(params);
                }
            }
            let val = self.evaluate::<T>(params, &self.split.validation)?;
            let entry = EpochLog {
                epoch: epoch + 1,
                lr,
                train_total: sums.mean(sums.total),
                train_mse: sums.mean(sums.mse),
                train_reg: sums.mean(sums.reg),
                val_total: val.mean(val.total),
                val_mse: val.mean(val.mse),
                val_reg: val.mean(val.reg),
                wall_seconds: start.elapsed().as_secs_f64(),
                mean_latent_deviation: sums.mean(sums.latent_dev),
            };
            log::info!(
                "epoch {} lr {:.2e} train {:.6} (mse {:.6}) val {:.6}",
                entry.epoch,
                lr,
                entry.train_total,
                entry.train_mse,
                entry.val_total
            );
            let score = if self.split.validation.is_empty() {
                entry.train_total
            } else {
                entry.val_total
            };
            if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
                best = Some((score, epoch, params.clone()));
            }
            (self.on_epoch)(&entry)?;
            log.push(entry);
        }
        let (best_epoch, best_params) = match best {
            Some((_, e, p)) => (Some(e), Some(p)),
            None => (None, None),
        };
        Ok(RunResult {
            log,
            best_epoch,
            best_params,
        })
    }

    /// Forward and backward over one batch; returns the gradient of the mean
    /// sample loss.
    fn batch_step<T: Real>(
        &self,
        params: &ModelParams,
        batch: &[usize],
        sums: &mut Sums,
        epoch: usize,
        batch_no: usize,
    ) -> Result<BTreeMap<String, Vec<f64>>> {
        let mut tape = Tape::<T>::new();
        let bound = BoundParams::bind(&mut tape, params, true);
        let mut acc = None;
        for &i in batch {
            let x = tape.constant(&self.features[i]);
            let f = self.network.forward(&mut tape, &bound, x)?;
            let terms = total_loss(
                &mut tape,
                f.decoded.output,
                x,
                f.latent,
                self.train.lambda_reg,
                self.train.loss_channels,
                self.train.mse_divisor,
            )?;
            let total = tape.scalar(terms.total).to_f64();
            if !total.is_finite() {
                let culprit = params
                    .first_non_finite()
                    .map(|n| format!("parameter {n} is non-finite"))
                    .unwrap_or_else(|| format!("sample {i} produced a non-finite loss (largest parameter: {})", largest(params)));
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                    detail: culprit,
                });
            }
            sums.total += total;
            sums.mse += tape.scalar(terms.mse).to_f64();
            sums.reg += tape.scalar(terms.reg).to_f64();
            sums.latent_dev += (norm(tape.value(f.latent)) - 1.0).abs();
            sums.count += 1;
            acc = Some(match acc {
                None => terms.total,
                Some(a) => tape.add(a, terms.total)?,
            });
        }
        let Some(sum) = acc else {
            return Ok(BTreeMap::new());
        };
        let loss = tape.scale(sum, 1.0 / batch.len() as f64);
        let grads = tape.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, var) in bound.iter() {
            if let Some(g) = grads.get(var) {
                let g: Vec<f64> = g.iter().map(|v| v.to_f64()).collect();
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_no,
                        detail: format!("gradient of parameter {name} is non-finite"),
                    });
                }
                out.insert(name.to_string(), g);
            }
        }
        Ok(out)
    }

    fn evaluate<T: Real>(&self, params: &ModelParams, indices: &[usize]) -> Result<Sums> {
        let mut sums = Sums::default();
        if indices.is_empty() {
            return Ok(sums);
        }
        let mut tape = Tape::<T>::new();
        let bound = BoundParams::bind(&mut tape, params, false);
        let mark = tape.len();
        for &i in indices {
            let x = tape.constant(&self.features[i]);
            let f = self.network.forward(&mut tape, &bound, x)?;
            let terms = total_loss(
                &mut tape,
                f.decoded.output,
                x,
                f.latent,
                self.train.lambda_reg,
                self.train.loss_channels,
                self.train.mse_divisor,
            )?;
            sums.total += tape.scalar(terms.total).to_f64();
            sums.mse += tape.scalar(terms.mse).to_f64();
            sums.reg += tape.scalar(terms.reg).to_f64();
            sums.latent_dev += (norm(tape.value(f.latent)) - 1.0).abs();
            sums.count += 1;
            tape.truncate(mark);
        }
        Ok(sums)
    }
}

fn norm<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.to_f64().powi(2)).sum::<f64>().sqrt()
}

fn largest(params: &ModelParams) -> String {
    params
        .iter()
        .map(|(n, m)| (n, m.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()))))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, v)| format!("{n} = {v:e}"))
        .unwrap_or_default()
}
