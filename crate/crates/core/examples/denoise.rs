//! Corrupt a mesh with Gaussian noise and denoise it by reconstruction.

use meshgeo::apps::{denoise, make_synthetic_dataset, NoiseLevel, SyntheticSpec, TemplateSource, PSNR_DEFINITION};
use meshgeo::model::ModelConfig;
use meshgeo::training::{fit, TrainConfig};

fn main() -> meshgeo::Result<()> {
    let ds = make_synthetic_dataset(&SyntheticSpec {
        template: TemplateSource::Icosphere {
            subdivisions: 2,
            radius: 1.0,
        },
        samples: 24,
        seed: 5,
        ..SyntheticSpec::default()
    })?;
    let cfg = ModelConfig {
        latent_size: 32,
        heads: 4,
        ..ModelConfig::new(ds.template.vertex_count())
    };
    let train = TrainConfig {
        epochs: 40,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let model = fit(&ds.meshes[..20], &cfg, &train)?.best.model;
    println!("PSNR = {PSNR_DEFINITION}");
    for (i, m) in ds.meshes[20..].iter().enumerate() {
        let r = denoise(&model, m, NoiseLevel::Relative(0.005), i as u64)?;
        println!("held-out {i}: noisy {:.2} dB, denoised {:.2} dB", r.psnr_noisy, r.psnr_denoised);
    }
    Ok(())
}
