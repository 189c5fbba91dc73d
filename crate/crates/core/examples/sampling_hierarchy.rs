//! QEM decimation hierarchy with its down- and up-sampling matrices.

use meshgeo::mesh::{shapes, validate_mesh};
use meshgeo::sampling::{apply_sampling, build_hierarchy};
use meshgeo::tensor::Matrix;

fn main() -> meshgeo::Result<()> {
    let template = shapes::icosphere(3, 1.0);
    let h = build_hierarchy(&template, 3)?;
    println!("vertex counts: {:?}", h.vertex_counts());
    for (l, level) in h.levels.iter().enumerate() {
        let ones = Matrix::filled(level.n_out(), 1, 1.0);
        let up = apply_sampling(&level.up, &ones)?;
        let max_dev = up.as_slice().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        println!(
            "level {l}: {} -> {} vertices, U nnz {}, U·1 deviation {max_dev:.1e}, coarse mesh: {}",
            level.n_in(),
            level.n_out(),
            level.up.nnz(),
            validate_mesh(&level.coarse_mesh).summary()
        );
    }
    Ok(())
}
