//! Gaussian vertex noise, PSNR and the denoise-by-reconstruction driver.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::model::Model;

/// Reported in place of +∞ when two meshes coincide.
pub const PSNR_CAP: f64 = 999.0;

/// Label written next to every PSNR value.
pub const PSNR_DEFINITION: &str = "20*log10(bbox_diagonal(clean)/rms_vertex_error) dB";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    /// Standard deviation in mesh units.
    Absolute(f64),
    /// Standard deviation as a fraction of the bounding-box diagonal.
    Relative(f64),
}

impl NoiseLevel {
    pub fn sigma(self, mesh: &Mesh) -> Result<f64> {
        let s = match self {
            NoiseLevel::Absolute(s) => s,
            NoiseLevel::Relative(f) => f * mesh.bbox_diagonal(),
        };
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise sigma {s} must be finite and non-negative")));
        }
        Ok(s)
    }
}

/// Adds i.i.d. `N(0, σ²)` noise to every coordinate.
pub fn add_gaussian_noise(mesh: &Mesh, sigma: f64, seed: u64) -> Result<Mesh> {
    if sigma == 0.0 {
        return Ok(mesh.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(format!("noise sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(mesh.with_positions(
        mesh.positions
            .iter()
            .map(|p| p.map(|v| v + normal.sample(&mut rng)))
            .collect(),
    ))
}

/// Euclidean distance per vertex.
pub fn vertex_errors(a: &Mesh, b: &Mesh) -> Result<Vec<f64>> {
    if a.vertex_count() != b.vertex_count() {
        return Err(Error::VertexCount {
            expected: a.vertex_count(),
            got: b.vertex_count(),
        });
    }
    Ok(a.positions
        .iter()
        .zip(&b.positions)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .collect())
}

/// See [`PSNR_DEFINITION`]; capped at [`PSNR_CAP`].
pub fn psnr(clean: &Mesh, other: &Mesh) -> Result<f64> {
    let e = vertex_errors(clean, other)?;
    let rms = (e.iter().map(|d| d * d).sum::<f64>() / e.len().max(1) as f64).sqrt();
    if rms == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((20.0 * (clean.bbox_diagonal() / rms).log10()).min(PSNR_CAP))
}

#[derive(Debug, Clone)]
pub struct DenoiseReport {
    pub sigma: f64,
    pub noisy: Mesh,
    pub denoised: Mesh,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
    /// Per-vertex distance between the denoised and clean meshes.
    pub error_map: Vec<f64>,
}

impl DenoiseReport {
    pub const CSV_HEADER: &'static str = "sigma,psnr_noisy_db,psnr_denoised_db";

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.sigma, self.psnr_noisy, self.psnr_denoised)
    }
}

/// Corrupts `clean`, reconstructs the noisy mesh and compares both to
/// `clean`.
pub fn denoise(model: &Model, clean: &Mesh, noise: NoiseLevel, seed: u64) -> Result<DenoiseReport> {
    let sigma = noise.sigma(clean)?;
    let noisy = add_gaussian_noise(clean, sigma, seed)?;
    let denoised = model.reconstruct(&noisy)?;
    Ok(DenoiseReport {
        sigma,
        psnr_noisy: psnr(clean, &noisy)?,
        psnr_denoised: psnr(clean, &denoised)?,
        error_map: vertex_errors(clean, &denoised)?,
        noisy,
        denoised,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    #[test]
    fn zero_sigma_gives_capped_psnr() {
        let m = shapes::icosphere(1, 1.0);
        let n = add_gaussian_noise(&m, 0.0, 3).unwrap();
        assert_eq!(n, m);
        assert_eq!(psnr(&m, &n).unwrap(), PSNR_CAP);
    }

    #[test]
    fn noise_is_seeded() {
        let m = shapes::icosphere(1, 1.0);
        let a = add_gaussian_noise(&m, 0.01, 9).unwrap();
        let b = add_gaussian_noise(&m, 0.01, 9).unwrap();
        let c = add_gaussian_noise(&m, 0.01, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn psnr_of_uniform_offset() {
        // Every vertex moved by the same distance d: RMS = d.
        let m = shapes::icosphere(1, 1.0);
        let d = 0.01;
        let shifted = m.with_positions(m.positions.iter().map(|p| [p[0] + d, p[1], p[2]]).collect());
        let expected = 20.0 * (m.bbox_diagonal() / d).log10();
        assert!((psnr(&m, &shifted).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn relative_sigma_scales_with_diagonal() {
        let m = shapes::icosphere(1, 2.0);
        let s = NoiseLevel::Relative(0.005).sigma(&m).unwrap();
        assert!((s - 0.005 * m.bbox_diagonal()).abs() < 1e-15);
        assert!(NoiseLevel::Absolute(-1.0).sigma(&m).is_err());
    }
}
