//! Trains and evaluates a matrix of model variants on one dataset.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::model::{ModelConfig, PathMode};
use crate::training::{evaluate_metrics, fit, MetricsReport, TrainConfig};

/// Overrides applied to a base [`ModelConfig`]. Unset fields keep the base
/// value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationVariant {
    pub label: String,
    pub latent_size: Option<usize>,
    pub use_attention: Option<bool>,
    pub use_residual: Option<bool>,
    pub use_curvature: Option<bool>,
    pub path_mode: Option<PathMode>,
}

impl AblationVariant {
    pub fn new(label: impl Into<String>) -> Self {
        AblationVariant {
            label: label.into(),
            ..Default::default()
        }
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        if let Some(z) = self.latent_size {
            c.latent_size = z;
        }
        if let Some(v) = self.use_attention {
            c.use_attention = v;
        }
        if let Some(v) = self.use_residual {
            c.use_residual = v;
        }
        if let Some(v) = self.use_curvature {
            c.use_curvature = v;
        }
        if let Some(v) = self.path_mode {
            c.path_mode = v;
        }
        c
    }
}

/// `[[variant]]` tables in a TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationMatrix {
    #[serde(rename = "variant")]
    pub variants: Vec<AblationVariant>,
}

impl AblationMatrix {
    /// Component toggles, single-path modes and the latent-size sweep.
    pub fn standard() -> Self {
        let v = AblationVariant::new;
        let mut variants = vec![
            AblationVariant {
                use_residual: Some(false),
                use_curvature: Some(false),
                ..v("attn")
            },
            AblationVariant {
                use_curvature: Some(false),
                ..v("attn_res")
            },
            v("attn_res_curv"),
            AblationVariant {
                path_mode: Some(PathMode::LocalOnly),
                ..v("local_only")
            },
            AblationVariant {
                path_mode: Some(PathMode::GlobalOnly),
                ..v("global_only")
            },
        ];
        for z in [32, 64, 128, 256] {
            variants.push(AblationVariant {
                latent_size: Some(z),
                ..AblationVariant::new(format!("latent_{z}"))
            });
        }
        AblationMatrix { variants }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: AblationMatrix = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if m.variants.is_empty() {
            return Err(Error::Config("ablation matrix has no variants".into()));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub config: ModelConfig,
    pub metrics: MetricsReport,
    pub final_train_mse: f64,
    pub seconds: f64,
}

pub const ABLATION_CSV_HEADER: &str =
    "label,latent_size,use_attention,use_residual,use_curvature,path_mode,mean,std,median,l2,final_train_mse,seconds";

impl AblationRow {
    pub fn csv_row(&self) -> String {
        let c = &self.config;
        format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            self.label,
            c.latent_size,
            c.use_attention,
            c.use_residual,
            c.use_curvature,
            c.path_mode.as_str(),
            self.metrics.csv_row(),
            self.final_train_mse,
            self.seconds
        )
    }
}

/// Trains every variant on `meshes` and evaluates reconstructions of the
/// same meshes. `on_row` runs after each variant, so partial results survive
/// a later failure.
pub fn run_ablation<F>(
    meshes: &[Mesh],
    base: &ModelConfig,
    train: &TrainConfig,
    matrix: &AblationMatrix,
    mut on_row: F,
) -> Result<Vec<AblationRow>>
where
    F: FnMut(&AblationRow) -> Result<()>,
{
    let mut rows = Vec::with_capacity(matrix.variants.len());
    for variant in &matrix.variants {
        let start = Instant::now();
        let config = variant.apply(base);
        let out = fit(meshes, &config, train)?;
        let model = &out.best.model;
        let recon = meshes.iter().map(|m| model.reconstruct(m)).collect::<Result<Vec<_>>>()?;
        let metrics = evaluate_metrics(&recon, meshes)?;
        let row = AblationRow {
            label: variant.label.clone(),
            config: model.config().clone(),
            metrics,
            final_train_mse: out.log.last().map_or(f64::NAN, |l| l.train_mse),
            seconds: start.elapsed().as_secs_f64(),
        };
        on_row(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_matrix_parses() {
        let m = AblationMatrix::from_toml(
            r#"
            [[variant]]
            label = "small"
            latent_size = 16
            path_mode = "local_only"
            "#,
        )
        .unwrap();
        assert_eq!(m.variants.len(), 1);
        let c = m.variants[0].apply(&ModelConfig::new(10));
        assert_eq!((c.latent_size, c.path_mode), (16, PathMode::LocalOnly));
        assert!(c.use_attention);
        assert!(AblationMatrix::from_toml("variant = []").is_err());
    }

    #[test]
    fn standard_matrix_labels_are_unique() {
        let m = AblationMatrix::standard();
        let mut labels: Vec<&str> = m.variants.iter().map(|v| v.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), m.variants.len());
    }
}
