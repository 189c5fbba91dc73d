//! Train a small model, save a checkpoint, reload it and reconstruct.

use meshgeo::apps::{make_synthetic_dataset, SyntheticSpec, TemplateSource};
use meshgeo::model::{load_checkpoint_file, save_checkpoint_file, ModelConfig};
use meshgeo::training::{evaluate_metrics, fit_with, TrainConfig};

fn main() -> meshgeo::Result<()> {
    let ds = make_synthetic_dataset(&SyntheticSpec {
        template: TemplateSource::Icosphere {
            subdivisions: 2,
            radius: 1.0,
        },
        samples: 16,
        seed: 1,
        ..SyntheticSpec::default()
    })?;
    let model_cfg = ModelConfig {
        latent_size: 32,
        heads: 4,
        ..ModelConfig::new(ds.template.vertex_count())
    };
    let train_cfg = TrainConfig {
        epochs: 30,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let out = fit_with(&ds.meshes, &model_cfg, &train_cfg, |e| {
        if e.epoch % 10 == 0 || e.epoch == 1 {
            println!("epoch {:3}: train mse {:.4e}, val mse {:.4e}", e.epoch, e.train_mse, e.val_mse);
        }
        Ok(())
    })?;

    let path = std::env::temp_dir().join("meshgeo_example.3dgm");
    save_checkpoint_file(&path, &out.best)?;
    let model = load_checkpoint_file(&path)?.model;
    let recon = ds.meshes.iter().map(|m| model.reconstruct(m)).collect::<meshgeo::Result<Vec<_>>>()?;
    let r = evaluate_metrics(&recon, &ds.meshes)?;
    println!("reloaded {}: mean error {:.4e}, median {:.4e}, l2 {:.4e}", path.display(), r.mean, r.median, r.l2);
    Ok(())
}
