//! Fixed-topology synthetic datasets: a template plus random combinations of
//! smooth displacement fields.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{load_mesh_file, save_mesh_file, shapes, Mesh};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemplateSource {
    Icosphere { subdivisions: u32, radius: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub template: TemplateSource,
    /// Number of deformation fields `K`.
    pub modes: usize,
    /// Gaussian bumps summed into each field.
    pub bumps_per_mode: usize,
    /// Bump widths, as fractions of the template's bounding-box diagonal.
    pub width_range: [f64; 2],
    /// Largest per-vertex displacement of each field, as a fraction of the
    /// bounding-box diagonal.
    pub amplitude: f64,
    /// Coefficients are drawn uniformly from `[-c, c]`.
    pub coefficient_range: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            template: TemplateSource::Icosphere {
                subdivisions: 3,
                radius: 1.0,
            },
            modes: 6,
            bumps_per_mode: 3,
            width_range: [0.06, 0.2],
            amplitude: 0.03,
            coefficient_range: 1.0,
            samples: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub template: Mesh,
    /// `K` fields, each `N × 3`.
    pub basis: Vec<Matrix>,
    /// `samples × K`.
    pub coefficients: Vec<Vec<f64>>,
    pub meshes: Vec<Mesh>,
}

impl SyntheticDataset {
    /// `X_T + Σ_k a_k B_k`.
    pub fn compose(&self, coefficients: &[f64]) -> Mesh {
        compose(&self.template, &self.basis, coefficients)
    }
}

fn compose(template: &Mesh, basis: &[Matrix], a: &[f64]) -> Mesh {
    let positions = template
        .positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut q = *p;
            for (b, &ak) in basis.iter().zip(a) {
                for (d, qd) in q.iter_mut().enumerate() {
                    *qd += ak * b[(i, d)];
                }
            }
            q
        })
        .collect();
    template.with_positions(positions)
}

pub fn load_template(source: &TemplateSource) -> Result<Mesh> {
    match source {
        TemplateSource::Icosphere { subdivisions, radius } => {
            if *subdivisions > 7 {
                return Err(Error::InvalidArgument(format!("{subdivisions} subdivisions is too many")));
            }
            Ok(shapes::icosphere(*subdivisions, *radius))
        }
        TemplateSource::File { path } => load_mesh_file(path),
    }
}

fn displacement_field<R: Rng>(template: &Mesh, normals: &[[f64; 3]], spec: &SyntheticSpec, rng: &mut R) -> Matrix {
    let n = template.vertex_count();
    let diag = template.bbox_diagonal();
    let mut field = Matrix::zeros(n, 3);
    for _ in 0..spec.bumps_per_mode {
        let center = template.positions[rng.gen_range(0..n)];
        let [lo, hi] = spec.width_range;
        let width = diag * if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let strength = sign * rng.gen_range(0.5..1.0);
        for (i, p) in template.positions.iter().enumerate() {
            let d2: f64 = (0..3).map(|k| (p[k] - center[k]).powi(2)).sum();
            let w = strength * (-d2 / (2.0 * width * width)).exp();
            for k in 0..3 {
                field[(i, k)] += w * normals[i][k];
            }
        }
    }
    let peak = (0..n)
        .map(|i| field.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if peak > 0.0 {
        let s = spec.amplitude * diag / peak;
        field.as_mut_slice().iter_mut().for_each(|v| *v *= s);
    }
    field
}

/// Generates the dataset in memory. Deterministic per `spec.seed`.
pub fn make_synthetic_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    if !(spec.amplitude.is_finite() && spec.amplitude >= 0.0 && spec.coefficient_range.is_finite()) {
        return Err(Error::InvalidArgument("amplitude and coefficient range must be finite".into()));
    }
    let template = load_template(&spec.template)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normals = template.vertex_normals();
    let basis: Vec<Matrix> = (0..spec.modes)
        .map(|_| displacement_field(&template, &normals, spec, &mut rng))
        .collect();
    let c = spec.coefficient_range.abs();
    let coefficients: Vec<Vec<f64>> = (0..spec.samples)
        .map(|_| {
            (0..spec.modes)
                .map(|_| if c > 0.0 { rng.gen_range(-c..=c) } else { 0.0 })
                .collect()
        })
        .collect();
    let meshes = coefficients.iter().map(|a| compose(&template, &basis, a)).collect();
    Ok(SyntheticDataset {
        spec: spec.clone(),
        template,
        basis,
        coefficients,
        meshes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    /// Random 9:1 train/test split.
    pub fn nine_to_one(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5917));
        let n_test = n / 10;
        let mut test = idx[..n_test].to_vec();
        let mut train = idx[n_test..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        DatasetSplit { train, test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub spec: SyntheticSpec,
    pub template: String,
    pub files: Vec<String>,
    pub split: DatasetSplit,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `template.obj`, `sample_XXXX.obj` and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, ds: &SyntheticDataset) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_mesh_file(&ds.template, dir.join("template.obj"))?;
    let mut files = Vec::with_capacity(ds.meshes.len());
    for (i, m) in ds.meshes.iter().enumerate() {
        let name = format!("sample_{i:04}.obj");
        save_mesh_file(m, dir.join(&name))?;
        files.push(name);
    }
    let manifest = Manifest {
        seed: ds.spec.seed,
        spec: ds.spec.clone(),
        template: "template.obj".into(),
        files,
        split: DatasetSplit::nine_to_one(ds.meshes.len(), ds.spec.seed),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads a dataset directory written by [`write_dataset`], or any directory
/// of `.obj`/`.ply` files (sorted by name) without a manifest.
pub fn load_dataset(dir: &Path) -> Result<(Vec<Mesh>, Option<Manifest>)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let meshes = manifest
            .files
            .iter()
            .map(|f| load_mesh_file(dir.join(f)))
            .collect::<Result<_>>()?;
        return Ok((meshes, Some(manifest)));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("obj" | "ply")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no meshes found in {}", dir.display())));
    }
    let meshes = paths.iter().map(load_mesh_file).collect::<Result<_>>()?;
    Ok((meshes, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(modes: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            template: TemplateSource::Icosphere {
                subdivisions: 2,
                radius: 1.0,
            },
            modes,
            samples: 8,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn zero_modes_reproduce_the_template() {
        let ds = make_synthetic_dataset(&small(0, 1)).unwrap();
        assert!(ds.meshes.iter().all(|m| m.positions == ds.template.positions));
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = make_synthetic_dataset(&small(4, 5)).unwrap();
        let b = make_synthetic_dataset(&small(4, 5)).unwrap();
        let c = make_synthetic_dataset(&small(4, 6)).unwrap();
        for (x, y) in a.meshes.iter().zip(&b.meshes) {
            assert_eq!(x.positions, y.positions);
        }
        assert_ne!(a.meshes[0].positions, c.meshes[0].positions);
    }

    #[test]
    fn displacement_bounded_by_triangle_inequality() {
        let ds = make_synthetic_dataset(&small(5, 2)).unwrap();
        let max_b = ds
            .basis
            .iter()
            .flat_map(|b| (0..b.rows()).map(move |i| b.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()))
            .fold(0.0, f64::max);
        let max_a = ds.coefficients.iter().flatten().fold(0.0f64, |m, a| m.max(a.abs()));
        let bound = 5.0 * max_a * max_b;
        for m in &ds.meshes {
            for (p, t) in m.positions.iter().zip(&ds.template.positions) {
                let d = ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) + (p[2] - t[2]).powi(2)).sqrt();
                assert!(d <= bound + 1e-12);
            }
        }
        let diag = ds.template.bbox_diagonal();
        assert!((max_b - 0.03 * diag).abs() < 1e-12);
    }

    #[test]
    fn split_is_nine_to_one_and_disjoint() {
        let s = DatasetSplit::nine_to_one(64, 3);
        assert_eq!((s.train.len(), s.test.len()), (58, 6));
        assert!(s.test.iter().all(|t| !s.train.contains(t)));
    }

    #[test]
    fn write_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let ds = make_synthetic_dataset(&small(2, 9)).unwrap();
        let manifest = write_dataset(dir.path(), &ds).unwrap();
        let (meshes, m) = load_dataset(dir.path()).unwrap();
        assert_eq!(m.unwrap(), manifest);
        assert_eq!(meshes.len(), 8);
        for (a, b) in meshes.iter().zip(&ds.meshes) {
            assert_eq!(a.positions, b.positions);
            assert_eq!(a.faces, b.faces);
        }
    }
}
