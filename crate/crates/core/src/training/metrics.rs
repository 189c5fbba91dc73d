use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Per-vertex Euclidean errors pooled over all vertices of all meshes.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
    /// Per-mesh RMS vertex error `‖X_out − Y‖_F / √N`, averaged over meshes.
    pub l2: f64,
    /// `[mesh][vertex]` error field.
    pub per_vertex: Vec<Vec<f64>>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "mean,std,median,l2";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.mean, self.std, self.median, self.l2)
    }
}

pub fn evaluate_metrics(predicted: &[Mesh], truth: &[Mesh]) -> Result<MetricsReport> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted meshes for {} ground-truth meshes",
            predicted.len(),
            truth.len()
        )));
    }
    let mut per_vertex = Vec::with_capacity(predicted.len());
    let mut l2_sum = 0.0;
    for (p, t) in predicted.iter().zip(truth) {
        if p.vertex_count() != t.vertex_count() {
            return Err(Error::VertexCount {
                expected: t.vertex_count(),
                got: p.vertex_count(),
            });
        }
        let errs: Vec<f64> = p
            .positions
            .iter()
            .zip(&t.positions)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
            .collect();
        let sq: f64 = errs.iter().map(|e| e * e).sum();
        l2_sum += (sq / errs.len().max(1) as f64).sqrt();
        per_vertex.push(errs);
    }
    let mut pooled: Vec<f64> = per_vertex.iter().flatten().copied().collect();
    let count = pooled.len().max(1) as f64;
    let mean = pooled.iter().sum::<f64>() / count;
    let std = (pooled.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / count).sqrt();
    pooled.sort_by(f64::total_cmp);
    let median = match pooled.len() {
        0 => 0.0,
        n if n % 2 == 1 => pooled[n / 2],
        n => 0.5 * (pooled[n / 2 - 1] + pooled[n / 2]),
    };
    Ok(MetricsReport {
        mean,
        std,
        median,
        l2: l2_sum / predicted.len() as f64,
        per_vertex,
    })
}
