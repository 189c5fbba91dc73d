//! Per-vertex geometric features: discrete mean curvature and dataset
//! normalisation.
//!
//! Mean curvature uses the cotangent Laplace–Beltrami estimate over the mixed
//! Voronoi area of Meyer, Desbrun, Schröder and Barr (2003):
//!
//! ```text
//! K(v) = 1/(2 A_mixed) Σ_j (cot α_ij + cot β_ij)(x_v − x_j),   H(v) = ±|K(v)| / 2
//! ```
//!
//! The sign is positive when `K` points along the area-weighted vertex normal,
//! so a sphere with outward-facing triangles has `H = +1/r`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{add, cross, dot, norm, scale, sub, Mesh};
use crate::tensor::Matrix;

/// `N × F` per-vertex features: normalised positions, optionally followed by
/// standardised mean curvature.
pub type FeatureMatrix = Matrix;

/// Lower clamp for every standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Curvature {
    /// Signed mean curvature per vertex, in 1/length.
    pub values: Vec<f64>,
    /// Vertices on an open boundary; their curvature is 0.
    pub boundary: Vec<usize>,
    /// Vertices whose mixed area vanished; their curvature is 0.
    pub degenerate: Vec<usize>,
}

#[inline]
fn cot(u: [f64; 3], v: [f64; 3]) -> Option<f64> {
    let s = norm(cross(u, v));
    (s > 0.0).then(|| dot(u, v) / s)
}

pub fn mean_curvature(mesh: &Mesh) -> Curvature {
    let n = mesh.vertex_count();
    let p = &mesh.positions;
    let mut laplace = vec![[0.0; 3]; n];
    let mut area = vec![0.0; n];
    let mut normal = vec![[0.0; 3]; n];

    for f in &mesh.faces {
        let [a, b, c] = *f;
        let face_n = cross(sub(p[b], p[a]), sub(p[c], p[a]));
        let face_area = 0.5 * norm(face_n);
        for &v in f {
            normal[v] = add(normal[v], face_n);
        }
        if face_area == 0.0 {
            continue;
        }
        // Corner k sits opposite edge (k+1, k+2).
        let corners = [a, b, c];
        let mut cots = [0.0; 3];
        let mut obtuse = None;
        for k in 0..3 {
            let (o, i, j) = (corners[k], corners[(k + 1) % 3], corners[(k + 2) % 3]);
            let (u, w) = (sub(p[i], p[o]), sub(p[j], p[o]));
            cots[k] = cot(u, w).unwrap_or(0.0);
            if dot(u, w) < 0.0 {
                obtuse = Some(k);
            }
        }
        for k in 0..3 {
            let (i, j) = (corners[(k + 1) % 3], corners[(k + 2) % 3]);
            let d = sub(p[i], p[j]);
            laplace[i] = add(laplace[i], scale(d, cots[k]));
            laplace[j] = add(laplace[j], scale(d, -cots[k]));
        }
        match obtuse {
            None => {
                // Voronoi region: |PR|² cot Q + |PQ|² cot R over 8.
                for k in 0..3 {
                    let (v, i, j) = (corners[k], corners[(k + 1) % 3], corners[(k + 2) % 3]);
                    let e_vi = sub(p[i], p[v]);
                    let e_vj = sub(p[j], p[v]);
                    // Edge v–i is opposite corner j, edge v–j opposite corner i.
                    let cot_i = cots[(k + 1) % 3];
                    let cot_j = cots[(k + 2) % 3];
                    area[v] += (dot(e_vi, e_vi) * cot_j + dot(e_vj, e_vj) * cot_i) / 8.0;
                }
            }
            Some(k) => {
                for (m, &v) in corners.iter().enumerate() {
                    area[v] += if m == k { face_area / 2.0 } else { face_area / 4.0 };
                }
            }
        }
    }

    let mut boundary_flag = vec![false; n];
    for (&(a, b), &count) in &mesh.edge_face_counts() {
        if count == 1 {
            boundary_flag[a] = true;
            boundary_flag[b] = true;
        }
    }

    let mut out = Curvature {
        values: vec![0.0; n],
        boundary: Vec::new(),
        degenerate: Vec::new(),
    };
    for v in 0..n {
        if boundary_flag[v] {
            out.boundary.push(v);
            continue;
        }
        if !(area[v] > 0.0) {
            out.degenerate.push(v);
            continue;
        }
        let k = scale(laplace[v], 1.0 / (2.0 * area[v]));
        let h = 0.5 * norm(k);
        out.values[v] = if dot(k, normal[v]) < 0.0 { -h } else { h };
    }
    out
}

/// How the position scale σ is pooled over the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// One standard deviation per coordinate axis.
    #[default]
    PerChannel,
    /// One standard deviation shared by all three axes.
    Scalar,
}

/// Training-set statistics used to normalise inputs and map outputs back to
/// mesh units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Per-vertex mean position `X_T`, `N × 3`.
    pub template_mean: Matrix,
    /// Per-axis position scale, all entries `> 0`.
    pub sigma: [f64; 3],
    pub curvature_mean: f64,
    pub curvature_std: f64,
}

impl DatasetStats {
    pub fn vertex_count(&self) -> usize {
        self.template_mean.rows()
    }

    /// Fits the curvature standardisation from per-sample curvature vectors.
    pub fn fit_curvature(&mut self, curvatures: &[Vec<f64>]) -> Result<()> {
        let count: usize = curvatures.iter().map(Vec::len).sum();
        if count == 0 {
            return Err(Error::InvalidArgument("no curvature samples".into()));
        }
        let mean = curvatures.iter().flatten().sum::<f64>() / count as f64;
        let var = curvatures.iter().flatten().map(|h| (h - mean).powi(2)).sum::<f64>() / count as f64;
        self.curvature_mean = mean;
        self.curvature_std = clamp_sigma(var.sqrt(), "curvature");
        Ok(())
    }
}

fn clamp_sigma(s: f64, what: &str) -> f64 {
    if s < SIGMA_FLOOR {
        log::warn!("zero variance in {what} channel; sigma clamped to {SIGMA_FLOOR:e}");
        SIGMA_FLOOR
    } else {
        s
    }
}

/// Per-vertex mean and pooled per-axis standard deviation of `X − X_T`.
pub fn compute_dataset_stats(training_positions: &[Matrix], mode: SigmaMode) -> Result<DatasetStats> {
    let first = training_positions
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty training set".into()))?;
    let n = first.rows();
    for (s, x) in training_positions.iter().enumerate() {
        if x.shape() != (n, 3) {
            return Err(Error::Shape(format!(
                "sample {s} is {:?}, expected ({n}, 3)",
                x.shape()
            )));
        }
    }
    let count = training_positions.len() as f64;
    let mut mean = Matrix::zeros(n, 3);
    for x in training_positions {
        for (m, v) in mean.as_mut_slice().iter_mut().zip(x.as_slice()) {
            *m += v;
        }
    }
    mean.as_mut_slice().iter_mut().for_each(|m| *m /= count);

    let mut sq = [0.0; 3];
    for x in training_positions {
        for i in 0..n {
            for k in 0..3 {
                sq[k] += (x[(i, k)] - mean[(i, k)]).powi(2);
            }
        }
    }
    let denom = count * n as f64;
    let sigma = match mode {
        SigmaMode::PerChannel => {
            let s = sq.map(|v| (v / denom).sqrt());
            [
                clamp_sigma(s[0], "x"),
                clamp_sigma(s[1], "y"),
                clamp_sigma(s[2], "z"),
            ]
        }
        SigmaMode::Scalar => {
            let s = clamp_sigma(((sq[0] + sq[1] + sq[2]) / (3.0 * denom)).sqrt(), "position");
            [s; 3]
        }
    };
    Ok(DatasetStats {
        template_mean: mean,
        sigma,
        curvature_mean: 0.0,
        curvature_std: 1.0,
    })
}

fn check_rows(x: &Matrix, stats: &DatasetStats) -> Result<()> {
    if x.rows() != stats.vertex_count() || x.cols() < 3 {
        return Err(Error::VertexCount {
            expected: stats.vertex_count(),
            got: x.rows(),
        });
    }
    Ok(())
}

/// `(X − X_T) / σ`, channel-wise.
pub fn normalize(x: &Matrix, stats: &DatasetStats) -> Result<Matrix> {
    check_rows(x, stats)?;
    let mut out = Matrix::zeros(x.rows(), 3);
    for i in 0..x.rows() {
        for k in 0..3 {
            out[(i, k)] = (x[(i, k)] - stats.template_mean[(i, k)]) / stats.sigma[k];
        }
    }
    Ok(out)
}

/// `σ ⊙ X̂ + X_T`, channel-wise. Only the first three columns are used.
pub fn denormalize(x_hat: &Matrix, stats: &DatasetStats) -> Result<Matrix> {
    check_rows(x_hat, stats)?;
    let mut out = Matrix::zeros(x_hat.rows(), 3);
    for i in 0..x_hat.rows() {
        for k in 0..3 {
            out[(i, k)] = stats.sigma[k] * x_hat[(i, k)] + stats.template_mean[(i, k)];
        }
    }
    Ok(out)
}

pub fn positions_matrix(mesh: &Mesh) -> Matrix {
    Matrix::from_rows(&mesh.positions)
}

/// Normalised positions, plus standardised mean curvature as a fourth column
/// when `use_curvature` is set.
pub fn assemble_features(mesh: &Mesh, stats: &DatasetStats, use_curvature: bool) -> Result<FeatureMatrix> {
    let pos = normalize(&positions_matrix(mesh), stats)?;
    if !use_curvature {
        return Ok(pos);
    }
    let curv = mean_curvature(mesh);
    if !curv.degenerate.is_empty() {
        log::warn!("{} vertices with zero mixed area; curvature set to 0", curv.degenerate.len());
    }
    let n = mesh.vertex_count();
    let mut out = Matrix::zeros(n, 4);
    for i in 0..n {
        out.row_mut(i)[..3].copy_from_slice(pos.row(i));
        out[(i, 3)] = (curv.values[i] - stats.curvature_mean) / stats.curvature_std;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    fn rotate(mesh: &Mesh, axis: [f64; 3], angle: f64) -> Mesh {
        let k = scale(axis, 1.0 / norm(axis));
        let (s, c) = angle.sin_cos();
        let positions = mesh
            .positions
            .iter()
            .map(|&v| {
                // Rodrigues' rotation formula.
                add(
                    add(scale(v, c), scale(cross(k, v), s)),
                    scale(k, dot(k, v) * (1.0 - c)),
                )
            })
            .collect();
        mesh.with_positions(positions)
    }

    fn mean_abs(values: &[f64]) -> f64 {
        values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64
    }

    #[test]
    fn flat_grid_interior_has_zero_curvature() {
        let m = shapes::grid(6, 5);
        let h = mean_curvature(&m);
        assert!(!h.boundary.is_empty());
        for v in 0..m.vertex_count() {
            assert!(h.values[v].abs() < 1e-9);
        }
    }

    #[test]
    fn unit_sphere_oracle() {
        let h = mean_curvature(&shapes::icosphere(3, 1.0));
        let m = mean_abs(&h.values);
        assert!((0.95..=1.05).contains(&m), "mean |H| = {m}");
        assert!(h.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn curvature_scales_inversely_with_radius() {
        let h = mean_curvature(&shapes::icosphere(3, 2.0));
        let m = mean_abs(&h.values);
        assert!((m - 0.5).abs() <= 0.025, "mean |H| = {m}");
    }

    #[test]
    fn rotation_invariant() {
        let base = shapes::icosphere(2, 1.3);
        let mut bumped = base.clone();
        for (i, p) in bumped.positions.iter_mut().enumerate() {
            *p = scale(*p, 1.0 + 0.1 * ((i as f64) * 0.7).sin());
        }
        let h0 = mean_curvature(&bumped).values;
        let h1 = mean_curvature(&rotate(&bumped, [0.3, -1.0, 0.4], 1.1)).values;
        for (a, b) in h0.iter().zip(&h1) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn obtuse_triangles_use_mixed_area() {
        // A flat fan whose centre has obtuse triangles: curvature stays 0 and
        // the mixed area stays positive.
        let m = Mesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [3.0, 0.1, 0.0],
                [-0.1, 3.0, 0.0],
                [-3.0, -0.1, 0.0],
                [0.1, -3.0, 0.0],
                [2.0, 2.0, 0.0],
                [-2.0, 2.0, 0.0],
                [-2.0, -2.0, 0.0],
                [2.0, -2.0, 0.0],
            ],
            vec![
                [0, 1, 5],
                [0, 5, 2],
                [0, 2, 6],
                [0, 6, 3],
                [0, 3, 7],
                [0, 7, 4],
                [0, 4, 8],
                [0, 8, 1],
            ],
        )
        .unwrap();
        let h = mean_curvature(&m);
        assert!(h.degenerate.is_empty());
        assert!(h.values[0].abs() < 1e-12);
    }

    #[test]
    fn single_sample_stats() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let s = compute_dataset_stats(&[x.clone()], SigmaMode::PerChannel).unwrap();
        assert_eq!(s.template_mean, x);
        assert_eq!(s.sigma, [SIGMA_FLOOR; 3]);
    }

    #[test]
    fn symmetric_samples_have_zero_mean() {
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 5.0, -6.0]]);
        let mut neg = x.clone();
        neg.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
        let s = compute_dataset_stats(&[x, neg], SigmaMode::PerChannel).unwrap();
        assert!(s.template_mean.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_two_vertex_samples_by_hand() {
        let samples = [
            Matrix::from_rows(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]),
            Matrix::from_rows(&[[2.0, 0.0, 3.0], [1.0, 4.0, 1.0]]),
            Matrix::from_rows(&[[4.0, 0.0, 0.0], [1.0, 1.0, 1.0]]),
        ];
        let s = compute_dataset_stats(&samples, SigmaMode::PerChannel).unwrap();
        // Vertex means: (2, 0, 1) and (1, 2, 1).
        assert_eq!(s.template_mean, Matrix::from_rows(&[[2.0, 0.0, 1.0], [1.0, 2.0, 1.0]]));
        // x deviations: -2, 0, 2 | 0, 0, 0 → 8/6; y: 0,0,0 | -1,2,-1 → 6/6;
        // z: -1, 2, -1 | 0, 0, 0 → 6/6.
        let want = [(8.0f64 / 6.0).sqrt(), 1.0, 1.0];
        for k in 0..3 {
            assert!((s.sigma[k] - want[k]).abs() < 1e-15);
        }
        let scalar = compute_dataset_stats(&samples, SigmaMode::Scalar).unwrap();
        assert!((scalar.sigma[0] - (20.0f64 / 18.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mismatched_samples_rejected() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(3, 3);
        assert!(compute_dataset_stats(&[a, b], SigmaMode::PerChannel).is_err());
        assert!(compute_dataset_stats(&[], SigmaMode::PerChannel).is_err());
    }

    fn stats_with(mean: Matrix, sigma: [f64; 3]) -> DatasetStats {
        DatasetStats {
            template_mean: mean,
            sigma,
            curvature_mean: 0.0,
            curvature_std: 1.0,
        }
    }

    #[test]
    fn normalize_hand_cases() {
        let xt = Matrix::from_rows(&[[1.0, 1.0, 1.0]]);
        let stats = stats_with(xt.clone(), [2.0; 3]);
        assert_eq!(normalize(&xt, &stats).unwrap(), Matrix::zeros(1, 3));
        let x = Matrix::from_rows(&[[3.0, 5.0, 7.0]]);
        let xh = normalize(&x, &stats).unwrap();
        assert_eq!(xh, Matrix::from_rows(&[[1.0, 2.0, 3.0]]));
        assert_eq!(denormalize(&xh, &stats).unwrap(), x);
        assert_eq!(denormalize(&Matrix::zeros(1, 3), &stats).unwrap(), xt);
    }

    #[test]
    fn template_features_zero_positions_finite_curvature() {
        let m = shapes::icosphere(2, 1.0);
        let mut stats = compute_dataset_stats(&[positions_matrix(&m)], SigmaMode::PerChannel).unwrap();
        stats.fit_curvature(&[mean_curvature(&m).values]).unwrap();
        let f = assemble_features(&m, &stats, true).unwrap();
        assert_eq!(f.cols(), 4);
        for i in 0..f.rows() {
            assert_eq!(&f.row(i)[..3], &[0.0, 0.0, 0.0]);
            assert!(f[(i, 3)].is_finite());
        }
        let f3 = assemble_features(&m, &stats, false).unwrap();
        assert_eq!(f3, normalize(&positions_matrix(&m), &stats).unwrap());
    }

    #[test]
    fn sphere_curvature_column_nearly_constant() {
        let h = mean_curvature(&shapes::icosphere(3, 1.0)).values;
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        let spread = h.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        assert!(spread / mean < 0.1, "spread {spread} around {mean}");
    }
}
