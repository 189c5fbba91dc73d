//! Discrete mean curvature on spheres of different radii and a flat grid.

use meshgeo::geometry::mean_curvature;
use meshgeo::mesh::shapes;

fn main() {
    for r in [0.5, 1.0, 2.0] {
        let h = mean_curvature(&shapes::icosphere(3, r)).values;
        let mean = h.iter().map(|v| v.abs()).sum::<f64>() / h.len() as f64;
        println!("radius {r}: mean |H| = {mean:.5} (exact {:.5})", 1.0 / r);
    }
    let c = mean_curvature(&shapes::grid(6, 6));
    let interior = c
        .values
        .iter()
        .enumerate()
        .filter(|(i, _)| !c.boundary.contains(i))
        .map(|(_, h)| h.abs())
        .fold(0.0, f64::max);
    println!("flat grid: max interior |H| = {interior:e}, {} boundary vertices", c.boundary.len());
}
