//! Generate a small synthetic dataset and write it to a directory.

use meshgeo::apps::{make_synthetic_dataset, write_dataset, SyntheticSpec, TemplateSource};

fn main() -> meshgeo::Result<()> {
    let spec = SyntheticSpec {
        template: TemplateSource::Icosphere {
            subdivisions: 2,
            radius: 1.0,
        },
        modes: 4,
        samples: 20,
        seed: 3,
        ..SyntheticSpec::default()
    };
    let ds = make_synthetic_dataset(&spec)?;
    let dir = std::env::temp_dir().join("meshgeo_synthetic");
    let manifest = write_dataset(&dir, &ds)?;
    println!(
        "{} meshes of {} vertices in {} (train {:?}, test {:?})",
        manifest.files.len(),
        ds.template.vertex_count(),
        dir.display(),
        manifest.split.train.len(),
        manifest.split.test
    );
    println!("coefficients of sample 0: {:?}", ds.coefficients[0]);
    Ok(())
}
