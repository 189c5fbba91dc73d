//! A two-row ablation: both pathways against the local pathway alone.

use meshgeo::apps::{make_synthetic_dataset, run_ablation, AblationMatrix, AblationVariant, SyntheticSpec,
    TemplateSource, ABLATION_CSV_HEADER};
use meshgeo::model::{ModelConfig, PathMode};
use meshgeo::training::TrainConfig;

fn main() -> meshgeo::Result<()> {
    let ds = make_synthetic_dataset(&SyntheticSpec {
        template: TemplateSource::Icosphere {
            subdivisions: 2,
            radius: 1.0,
        },
        samples: 12,
        seed: 6,
        ..SyntheticSpec::default()
    })?;
    let base = ModelConfig {
        latent_size: 16,
        heads: 4,
        ..ModelConfig::new(ds.template.vertex_count())
    };
    let matrix = AblationMatrix {
        variants: vec![
            AblationVariant::new("both"),
            AblationVariant {
                path_mode: Some(PathMode::LocalOnly),
                ..AblationVariant::new("local_only")
            },
        ],
    };
    let train = TrainConfig {
        epochs: 10,
        batch_size: 4,
        ..TrainConfig::default()
    };
    println!("{ABLATION_CSV_HEADER}");
    run_ablation(&ds.meshes, &base, &train, &matrix, |row| {
        println!("{}", row.csv_row());
        Ok(())
    })?;
    Ok(())
}
