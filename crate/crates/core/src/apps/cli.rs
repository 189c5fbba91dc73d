//! The `meshgeo` command line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use super::ablate::{run_ablation, AblationMatrix, ABLATION_CSV_HEADER};
use super::denoise::{denoise, vertex_errors, NoiseLevel, PSNR_DEFINITION};
use super::gradcheck::{run_gradcheck_suite, GRADCHECK_EPS, GRADCHECK_TOLERANCE};
use super::latent::{extrapolate, interpolate, LatentFrame};
use super::synth::{load_dataset, make_synthetic_dataset, write_dataset, SyntheticSpec, TemplateSource};
use crate::error::{Error, Result};
use crate::mesh::{load_mesh_file, save_mesh_file, save_ply_with_quality, validate_mesh, Mesh};
use crate::model::{load_checkpoint_file, save_checkpoint_file, Checkpoint, ModelConfig, PathMode};
use crate::training::{evaluate_metrics, fit_with, MetricsReport, TrainConfig, CSV_HEADER};

#[derive(Debug, Parser)]
#[command(name = "meshgeo", version, about = "Dual-path graph autoencoder for fixed-topology meshes")]
pub struct Cli {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Checkpoint to read (or, for `train`, to write).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// TOML file with optional `[model]` and `[train]` tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train on a directory of meshes.
    Train(TrainArgs),
    /// Reconstruct meshes with a trained model.
    Reconstruct(ReconstructArgs),
    /// Decode along the latent segment between two meshes.
    Interpolate(InterpolateArgs),
    /// Decode at `z1 + a·(z2 − z1)` for arbitrary `a`.
    Extrapolate(ExtrapolateArgs),
    /// Add Gaussian noise, reconstruct and report PSNR.
    Denoise(DenoiseArgs),
    /// Compare predicted meshes with ground truth.
    Metrics(MetricsArgs),
    /// Train and evaluate a matrix of model variants.
    Ablate(AblateArgs),
    /// Finite-difference check of every layer's gradients.
    Gradcheck,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    #[arg(long, default_value_t = 6)]
    pub modes: usize,
    #[arg(long, default_value_t = 3)]
    pub subdivisions: u32,
    /// Use this mesh as the template instead of an icosphere.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Peak displacement of each mode as a fraction of the bbox diagonal.
    #[arg(long, default_value_t = 0.03)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 1.0)]
    pub coefficient_range: f64,
}

#[derive(Debug, Args)]
pub struct ModelOverrides {
    #[arg(long)]
    pub latent_size: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub path_mode: Option<PathMode>,
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub no_residual: bool,
    #[arg(long)]
    pub no_curvature: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (with or without a manifest).
    pub data: PathBuf,
    #[command(flatten)]
    pub overrides: ModelOverrides,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Mesh files or directories.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    pub mesh1: PathBuf,
    pub mesh2: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct ExtrapolateArgs {
    pub mesh1: PathBuf,
    pub mesh2: PathBuf,
    /// Comma-separated values of `a`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "-0.5,0,1,1.5")]
    pub a: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    pub mesh: PathBuf,
    /// Noise standard deviation in mesh units.
    #[arg(long, conflicts_with = "sigma_relative")]
    pub sigma: Option<f64>,
    /// Noise standard deviation as a fraction of the bbox diagonal.
    #[arg(long)]
    pub sigma_relative: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Predicted mesh file or directory.
    pub predicted: PathBuf,
    /// Ground-truth mesh file or directory.
    pub truth: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    pub data: PathBuf,
    /// TOML file of `[[variant]]` tables (default: the standard matrix).
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ModelOverrides,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 1 on runtime errors, 2 on usage and
/// shape errors.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Reconstruct(a) => cmd_reconstruct(cli, a),
        Command::Interpolate(a) => {
            let ckpt = checkpoint(cli)?;
            let (m1, m2) = (load_mesh_file(&a.mesh1)?, load_mesh_file(&a.mesh2)?);
            let frames = interpolate(&ckpt.model, &m1, &m2, a.steps)?;
            write_frames(&cli.out, "interp", &frames)
        }
        Command::Extrapolate(a) => {
            let ckpt = checkpoint(cli)?;
            let (m1, m2) = (load_mesh_file(&a.mesh1)?, load_mesh_file(&a.mesh2)?);
            let frames = extrapolate(&ckpt.model, &m1, &m2, &a.a)?;
            write_frames(&cli.out, "extrap", &frames)
        }
        Command::Denoise(a) => cmd_denoise(cli, a),
        Command::Metrics(a) => cmd_metrics(cli, a),
        Command::Ablate(a) => cmd_ablate(cli, a),
        Command::Gradcheck => cmd_gradcheck(cli),
    }
}

fn load_file_config(cli: &Cli) -> Result<FileConfig> {
    match &cli.config {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// Defaults, then the config file, then command-line flags.
fn resolve_configs(cli: &Cli, o: &ModelOverrides) -> Result<(ModelConfig, TrainConfig)> {
    let file = load_file_config(cli)?;
    let mut model = file.model.unwrap_or_default();
    let mut train = file.train.unwrap_or_default();
    if let Some(s) = cli.seed {
        train.seed = s;
    }
    if let Some(z) = o.latent_size {
        model.latent_size = z;
    }
    if let Some(h) = o.heads {
        model.heads = h;
    }
    if let Some(p) = o.path_mode {
        model.path_mode = p;
    }
    model.use_attention &= !o.no_attention;
    model.use_residual &= !o.no_residual;
    model.use_curvature &= !o.no_curvature;
    if let Some(e) = o.epochs {
        train.epochs = e;
    }
    if let Some(b) = o.batch_size {
        train.batch_size = b;
    }
    if let Some(lr) = o.lr {
        train.lr0 = lr;
    }
    train.validate()?;
    Ok((model, train))
}

fn checkpoint(cli: &Cli) -> Result<Checkpoint> {
    let path = cli
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("--checkpoint is required".into()))?;
    load_checkpoint_file(path)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_line(w: &mut impl Write, path: &Path, line: &str) -> Result<()> {
    writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn save_output_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    let report = validate_mesh(mesh);
    if !report.ok() {
        return Err(Error::Format(format!("refusing to write {}: {}", path.display(), report.summary())));
    }
    save_mesh_file(mesh, path)
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let template = match &a.template {
        Some(path) => TemplateSource::File { path: path.clone() },
        None => TemplateSource::Icosphere {
            subdivisions: a.subdivisions,
            radius: 1.0,
        },
    };
    let spec = SyntheticSpec {
        template,
        modes: a.modes,
        amplitude: a.amplitude,
        coefficient_range: a.coefficient_range,
        samples: a.samples,
        seed: cli.seed.unwrap_or(0),
        ..SyntheticSpec::default()
    };
    let ds = make_synthetic_dataset(&spec)?;
    let manifest = write_dataset(&cli.out, &ds)?;
    println!(
        "wrote {} meshes with {} vertices to {} ({} train / {} test)",
        manifest.files.len(),
        ds.template.vertex_count(),
        cli.out.display(),
        manifest.split.train.len(),
        manifest.split.test.len()
    );
    Ok(())
}

/// Meshes of a dataset directory, restricted to the manifest's training
/// split when there is one.
fn training_meshes(dir: &Path) -> Result<Vec<Mesh>> {
    let (meshes, manifest) = load_dataset(dir)?;
    Ok(match manifest {
        Some(m) => m.split.train.iter().map(|&i| meshes[i].clone()).collect(),
        None => meshes,
    })
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let (model_cfg, train_cfg) = resolve_configs(cli, &a.overrides)?;
    let meshes = training_meshes(&a.data)?;
    let log_path = cli.out.join("train_log.csv");
    let mut log = create(&log_path)?;
    write_line(&mut log, &log_path, CSV_HEADER)?;
    let out = fit_with(&meshes, &model_cfg, &train_cfg, |e| {
        log::info!(
            "epoch {} lr {:.3e} train {:.5e} val {:.5e}",
            e.epoch,
            e.lr,
            e.train_total,
            e.val_total
        );
        write_line(&mut log, &log_path, &e.csv_row())
    })?;
    let best = cli.checkpoint.clone().unwrap_or_else(|| cli.out.join("model.3dgm"));
    save_checkpoint_file(&best, &out.best)?;
    save_checkpoint_file(cli.out.join("last.3dgm"), &out.last)?;
    let first = out.log.first().map_or(f64::NAN, |l| l.train_mse);
    let last = out.log.last().map_or(f64::NAN, |l| l.train_mse);
    println!(
        "trained {} epochs on {} meshes: train mse {first:.5e} -> {last:.5e}; best checkpoint {}",
        out.log.len(),
        out.split.train.len(),
        best.display()
    );
    Ok(())
}

/// Files of a directory (sorted) or a single file.
fn mesh_paths(p: &Path) -> Result<Vec<PathBuf>> {
    if !p.is_dir() {
        return Ok(vec![p.to_path_buf()]);
    }
    let mut v: Vec<PathBuf> = std::fs::read_dir(p)
        .map_err(|e| Error::io(p, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("obj" | "ply")))
        .collect();
    v.sort();
    Ok(v)
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh").to_string()
}

fn cmd_reconstruct(cli: &Cli, a: &ReconstructArgs) -> Result<()> {
    let ckpt = checkpoint(cli)?;
    let mut n = 0;
    for input in &a.inputs {
        for path in mesh_paths(input)? {
            let mesh = load_mesh_file(&path)?;
            let out = ckpt.model.reconstruct(&mesh)?;
            save_output_mesh(&out, &cli.out.join(format!("{}_recon.obj", stem(&path))))?;
            n += 1;
        }
    }
    println!("reconstructed {n} meshes into {}", cli.out.display());
    Ok(())
}

fn write_frames(out: &Path, prefix: &str, frames: &[LatentFrame]) -> Result<()> {
    let index_path = out.join(format!("{prefix}.csv"));
    let mut index = create(&index_path)?;
    write_line(&mut index, &index_path, "frame,a,latent_norm,file")?;
    for (k, f) in frames.iter().enumerate() {
        let name = format!("{prefix}_{k:03}.obj");
        save_output_mesh(&f.mesh, &out.join(&name))?;
        let norm = f.latent.iter().map(|v| v * v).sum::<f64>().sqrt();
        write_line(&mut index, &index_path, &format!("{k},{},{norm},{name}", f.a))?;
    }
    println!("wrote {} frames to {}", frames.len(), out.display());
    Ok(())
}

fn cmd_denoise(cli: &Cli, a: &DenoiseArgs) -> Result<()> {
    let ckpt = checkpoint(cli)?;
    let clean = load_mesh_file(&a.mesh)?;
    let noise = match (a.sigma, a.sigma_relative) {
        (_, Some(r)) => NoiseLevel::Relative(r),
        (Some(s), None) => NoiseLevel::Absolute(s),
        (None, None) => NoiseLevel::Absolute(0.001),
    };
    let r = denoise(&ckpt.model, &clean, noise, cli.seed.unwrap_or(0))?;
    let name = stem(&a.mesh);
    save_output_mesh(&r.noisy, &cli.out.join(format!("{name}_noisy.obj")))?;
    save_output_mesh(&r.denoised, &cli.out.join(format!("{name}_denoised.obj")))?;
    let ply = cli.out.join(format!("{name}_error_map.ply"));
    std::fs::write(&ply, save_ply_with_quality(&r.denoised, &r.error_map)?).map_err(|e| Error::io(&ply, e))?;
    let csv = cli.out.join(format!("{name}_denoise.csv"));
    let mut w = create(&csv)?;
    write_line(&mut w, &csv, &format!("# psnr = {PSNR_DEFINITION}"))?;
    write_line(&mut w, &csv, super::denoise::DenoiseReport::CSV_HEADER)?;
    write_line(&mut w, &csv, &r.csv_row())?;
    println!(
        "sigma {:.4e}: PSNR noisy {:.2} dB, denoised {:.2} dB ({PSNR_DEFINITION})",
        r.sigma, r.psnr_noisy, r.psnr_denoised
    );
    Ok(())
}

fn cmd_metrics(cli: &Cli, a: &MetricsArgs) -> Result<()> {
    let pred_paths = mesh_paths(&a.predicted)?;
    let truth_paths = mesh_paths(&a.truth)?;
    if pred_paths.len() != truth_paths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted meshes but {} ground-truth meshes",
            pred_paths.len(),
            truth_paths.len()
        )));
    }
    let pred: Vec<Mesh> = pred_paths.iter().map(load_mesh_file).collect::<Result<_>>()?;
    let truth: Vec<Mesh> = truth_paths.iter().map(load_mesh_file).collect::<Result<_>>()?;
    let report: MetricsReport = evaluate_metrics(&pred, &truth)?;
    let csv = cli.out.join("metrics.csv");
    let mut w = create(&csv)?;
    write_line(&mut w, &csv, MetricsReport::CSV_HEADER)?;
    write_line(&mut w, &csv, &report.csv_row())?;
    for ((p, t), path) in pred.iter().zip(&truth).zip(&pred_paths) {
        let ply = cli.out.join(format!("{}_error_map.ply", stem(path)));
        let errors = vertex_errors(t, p)?;
        std::fs::write(&ply, save_ply_with_quality(p, &errors)?).map_err(|e| Error::io(&ply, e))?;
    }
    println!("{}\n{}", MetricsReport::CSV_HEADER, report.csv_row());
    Ok(())
}

fn cmd_ablate(cli: &Cli, a: &AblateArgs) -> Result<()> {
    let (model_cfg, train_cfg) = resolve_configs(cli, &a.overrides)?;
    let matrix = match &a.matrix {
        Some(p) => AblationMatrix::from_toml(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => AblationMatrix::standard(),
    };
    let meshes = training_meshes(&a.data)?;
    let csv = cli.out.join("ablation.csv");
    let mut w = create(&csv)?;
    write_line(&mut w, &csv, ABLATION_CSV_HEADER)?;
    run_ablation(&meshes, &model_cfg, &train_cfg, &matrix, |row| {
        println!("{}", row.csv_row());
        write_line(&mut w, &csv, &row.csv_row())
    })?;
    Ok(())
}

fn cmd_gradcheck(cli: &Cli) -> Result<()> {
    println!("layer,max_rel_error,probes,status (eps {GRADCHECK_EPS:e}, tolerance {GRADCHECK_TOLERANCE:e})");
    let report = run_gradcheck_suite(cli.seed.unwrap_or(0), |c| {
        println!(
            "{},{:.3e},{},{}",
            c.name,
            c.report.max_rel_error,
            c.report.probes,
            if c.passed() { "ok" } else { "FAIL" }
        );
    })?;
    println!("max relative error {:.3e} in {:.1} s", report.max_rel_error(), report.seconds);
    if !report.passed() {
        return Err(Error::Domain("gradient check failed".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_flags_are_usage_errors() {
        assert_eq!(run_cli(["meshgeo", "frobnicate"]), 2);
        assert_eq!(run_cli(["meshgeo", "interpolate", "a.obj"]), 2);
    }

    #[test]
    fn missing_checkpoint_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run_cli(["meshgeo", "--out", out, "reconstruct", "x.obj"]), 2);
    }

    #[test]
    fn config_file_layers_under_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[model]\nlatent_size = 16\nheads = 2\n[train]\nepochs = 7\nseed = 3\n").unwrap();
        let cli = Cli::try_parse_from([
            "meshgeo",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "9",
            "train",
            "data",
            "--heads",
            "4",
        ])
        .unwrap();
        let Command::Train(a) = &cli.command else { unreachable!() };
        let (m, t) = resolve_configs(&cli, &a.overrides).unwrap();
        assert_eq!((m.latent_size, m.heads, t.epochs, t.seed), (16, 4, 7, 9));
    }

    #[test]
    fn unknown_config_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[model]\nlatnet = 3\n").unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(
            run_cli(["meshgeo", "--out", out, "--config", path.to_str().unwrap(), "train", out]),
            2
        );
    }
}
