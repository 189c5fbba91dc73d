//! Interpolate and extrapolate between two meshes in latent space.

use meshgeo::apps::{extrapolate, interpolate, make_synthetic_dataset, SyntheticSpec, TemplateSource};
use meshgeo::model::ModelConfig;
use meshgeo::training::{fit, TrainConfig};

fn main() -> meshgeo::Result<()> {
    let ds = make_synthetic_dataset(&SyntheticSpec {
        template: TemplateSource::Icosphere {
            subdivisions: 2,
            radius: 1.0,
        },
        samples: 12,
        seed: 4,
        ..SyntheticSpec::default()
    })?;
    let cfg = ModelConfig {
        latent_size: 16,
        heads: 4,
        ..ModelConfig::new(ds.template.vertex_count())
    };
    let model = fit(&ds.meshes, &cfg, &TrainConfig { epochs: 10, batch_size: 4, ..TrainConfig::default() })?.best.model;
    let (m1, m2) = (&ds.meshes[0], &ds.meshes[1]);
    for f in interpolate(&model, m1, m2, 5)? {
        let norm = f.latent.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("interpolate a = {:.2}: ‖z‖ = {norm:.4}", f.a);
    }
    for f in extrapolate(&model, m1, m2, &[-0.5, 1.5, 2.0])? {
        println!("extrapolate a = {:+.1}: first vertex {:?}", f.a, f.mesh.positions[0]);
    }
    Ok(())
}
