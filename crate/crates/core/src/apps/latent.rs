//! Latent-space interpolation and extrapolation between two meshes.
//!
//! Both operations go through one blend `(1 − t)·z1 + t·z2`:
//! interpolation with weight `a` on `z1` uses `t = 1 − a`, extrapolation
//! with `a` uses `t = a`. Endpoints, the midpoint and `t = 2` are therefore
//! exact, and an interpolation at `a` equals an extrapolation at `1 − a` bit
//! for bit.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::model::{LatentCode, Model};

/// `(1 − t)·z1 + t·z2`.
pub fn blend_latent(z1: &[f64], z2: &[f64], t: f64) -> Result<LatentCode> {
    if z1.len() != z2.len() {
        return Err(Error::Shape(format!("latents of length {} and {}", z1.len(), z2.len())));
    }
    Ok(z1.iter().zip(z2).map(|(a, b)| (1.0 - t) * a + t * b).collect())
}

/// `a·z1 + (1 − a)·z2`: `a = 1` gives `z1`, `a = 0` gives `z2`.
pub fn interpolate_latent(z1: &[f64], z2: &[f64], a: f64) -> Result<LatentCode> {
    blend_latent(z1, z2, 1.0 - a)
}

/// `z1 + a·(z2 − z1)` for any real `a`.
pub fn extrapolate_latent(z1: &[f64], z2: &[f64], a: f64) -> Result<LatentCode> {
    blend_latent(z1, z2, a)
}

/// `a` from 1 down to 0 in `steps` evenly spaced values.
pub fn interpolation_schedule(steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 interpolation steps, got {steps}")));
    }
    let last = (steps - 1) as f64;
    Ok((0..steps).map(|k| 1.0 - k as f64 / last).collect())
}

#[derive(Debug, Clone)]
pub struct LatentFrame {
    pub a: f64,
    pub latent: LatentCode,
    pub mesh: Mesh,
}

fn frames(
    model: &Model,
    m1: &Mesh,
    m2: &Mesh,
    values: &[f64],
    f: fn(&[f64], &[f64], f64) -> Result<LatentCode>,
) -> Result<Vec<LatentFrame>> {
    let z1 = model.encode(m1)?;
    let z2 = model.encode(m2)?;
    values
        .iter()
        .map(|&a| {
            if !a.is_finite() {
                return Err(Error::InvalidArgument(format!("blend weight {a} is not finite")));
            }
            let latent = f(&z1, &z2, a)?;
            let mesh = model.decode(&latent)?;
            Ok(LatentFrame { a, latent, mesh })
        })
        .collect()
}

/// Decoded meshes along the segment from `m1` (first frame) to `m2` (last).
pub fn interpolate(model: &Model, m1: &Mesh, m2: &Mesh, steps: usize) -> Result<Vec<LatentFrame>> {
    frames(model, m1, m2, &interpolation_schedule(steps)?, interpolate_latent)
}

/// Decoded meshes at `z1 + a·(z2 − z1)` for each `a`.
pub fn extrapolate(model: &Model, m1: &Mesh, m2: &Mesh, a_values: &[f64]) -> Result<Vec<LatentFrame>> {
    frames(model, m1, m2, a_values, extrapolate_latent)
}

#[cfg(test)]
mod tests {
    use super::*;

    const Z1: [f64; 4] = [0.1, -2.5, 3.0, 1e-3];
    const Z2: [f64; 4] = [0.7, 0.25, -1.0, 7.0];

    #[test]
    fn endpoints_and_midpoint_are_exact() {
        assert_eq!(interpolate_latent(&Z1, &Z2, 1.0).unwrap(), Z1);
        assert_eq!(interpolate_latent(&Z1, &Z2, 0.0).unwrap(), Z2);
        let mid: Vec<f64> = Z1.iter().zip(&Z2).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
        assert_eq!(interpolate_latent(&Z1, &Z2, 0.5).unwrap(), mid);
        assert_eq!(extrapolate_latent(&Z1, &Z2, 0.0).unwrap(), Z1);
        assert_eq!(extrapolate_latent(&Z1, &Z2, 1.0).unwrap(), Z2);
        let two: Vec<f64> = Z1.iter().zip(&Z2).map(|(a, b)| 2.0 * b - a).collect();
        assert_eq!(extrapolate_latent(&Z1, &Z2, 2.0).unwrap(), two);
    }

    #[test]
    fn schedule_runs_from_one_to_zero() {
        assert_eq!(interpolation_schedule(5).unwrap(), vec![1.0, 0.75, 0.5, 0.25, 0.0]);
        assert!(interpolation_schedule(1).is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(blend_latent(&Z1, &Z2[..3], 0.5).is_err());
    }
}
