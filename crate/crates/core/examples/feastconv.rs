//! One feature-steered graph convolution and the attention fusion block.

use std::sync::Arc;

use meshgeo::layers::{attention_fuse, gc_layer, AttentionParams, FeaStConvParams};
use meshgeo::mesh::{build_adjacency, shapes};
use meshgeo::tensor::{Matrix, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> meshgeo::Result<()> {
    let mesh = shapes::icosphere(1, 1.0);
    let adj = Arc::new(build_adjacency(&mesh));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Matrix::from_rows(&mesh.positions);

    let conv = FeaStConvParams::init(&mut rng, 3, 8, 4);
    let att = AttentionParams::init(&mut rng, 8, 8);
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(&x, false);
    let cv = conv.bind(&mut tape, false);
    let a = gc_layer(&mut tape, xv, &adj, &cv, 0.01)?;
    let b = tape.scale(a, -1.0);
    let av = att.bind(&mut tape, false);
    let fused = attention_fuse(&mut tape, a, b, &av)?;
    let w = tape.to_matrix(fused.w_global);
    println!("gc layer output {:?}", tape.shape(a));
    println!("attention weights for the first 5 vertices: {:?}", &w.as_slice()[..5]);
    Ok(())
}
