//! Experiment drivers behind the `meshgeo` command line.

pub mod ablate;
pub mod cli;
pub mod denoise;
pub mod gradcheck;
pub mod latent;
pub mod synth;

pub use ablate::{run_ablation, AblationMatrix, AblationRow, AblationVariant, ABLATION_CSV_HEADER};
pub use denoise::{add_gaussian_noise, denoise, psnr, vertex_errors, DenoiseReport, NoiseLevel, PSNR_CAP, PSNR_DEFINITION};
pub use gradcheck::{run_gradcheck_suite, LayerCheck, SuiteReport, GRADCHECK_EPS, GRADCHECK_TOLERANCE};
pub use latent::{
    blend_latent, extrapolate, extrapolate_latent, interpolate, interpolate_latent, interpolation_schedule, LatentFrame,
};
pub use synth::{
    load_dataset, make_synthetic_dataset, write_dataset, DatasetSplit, Manifest, SyntheticDataset, SyntheticSpec,
    TemplateSource,
};
