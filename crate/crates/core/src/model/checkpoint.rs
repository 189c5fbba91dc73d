//! Binary checkpoint container.
//!
//! ```text
//! "3DGM" | version: u32 LE | header length: u64 LE | JSON header | payload
//! ```
//!
//! The header carries the model configuration, normalisation statistics,
//! training metadata and a directory of tensors (name, dtype, shape, byte
//! offset into the payload). Payloads are little-endian. Float tensors are
//! written as `f32` when every value is exactly representable and as `f64`
//! otherwise, so a round trip is lossless either way.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelParams, Network};
use crate::error::{Error, Result};
use crate::geometry::DatasetStats;
use crate::mesh::Mesh;
use crate::sampling::Hierarchy;
use crate::sparse::SparseMatrix;
use crate::tensor::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"3DGM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Last completed epoch (1-based; 0 for an untrained model).
    pub epoch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub val_total: Option<f64>,
    pub train_total: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub metadata: TrainingMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F32,
    F64,
    U32,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: Dtype,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StatsHeader {
    sigma: [f64; 3],
    curvature_mean: f64,
    curvature_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    stats: StatsHeader,
    metadata: TrainingMetadata,
    hierarchy_levels: usize,
    payload_bytes: usize,
    checksum: u64,
    tensors: Vec<TensorEntry>,
}

/// FNV-1a over the payload.
fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Default)]
struct Writer {
    entries: Vec<TensorEntry>,
    payload: Vec<u8>,
}

impl Writer {
    fn floats(&mut self, name: String, rows: usize, cols: usize, data: &[f64]) {
        let exact = data.iter().all(|&v| (v as f32) as f64 == v || v.is_nan());
        let dtype = if exact { Dtype::F32 } else { Dtype::F64 };
        self.entries.push(TensorEntry {
            name,
            dtype,
            shape: [rows, cols],
            offset: self.payload.len(),
        });
        for &v in data {
            match dtype {
                Dtype::F32 => self.payload.extend_from_slice(&(v as f32).to_le_bytes()),
                _ => self.payload.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }

    fn indices(&mut self, name: String, rows: usize, cols: usize, data: impl Iterator<Item = usize>) -> Result<()> {
        self.entries.push(TensorEntry {
            name,
            dtype: Dtype::U32,
            shape: [rows, cols],
            offset: self.payload.len(),
        });
        for v in data {
            let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("index {v} exceeds u32")))?;
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
        Ok(())
    }

    fn matrix(&mut self, name: String, m: &Matrix) {
        self.floats(name, m.rows(), m.cols(), m.as_slice());
    }

    fn mesh(&mut self, prefix: &str, mesh: &Mesh) -> Result<()> {
        let flat: Vec<f64> = mesh.positions.iter().flatten().copied().collect();
        self.floats(format!("{prefix}.positions"), mesh.vertex_count(), 3, &flat);
        self.indices(
            format!("{prefix}.faces"),
            mesh.face_count(),
            3,
            mesh.faces.iter().flatten().copied(),
        )
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let model = &ckpt.model;
    let mut w = Writer::default();
    for (name, m) in model.params.iter() {
        w.matrix(format!("param.{name}"), m);
    }
    w.matrix("stats.template_mean".into(), &model.stats.template_mean);
    let h = &model.network.hierarchy;
    w.mesh("hierarchy.template", &h.template_mesh)?;
    for (l, level) in h.levels.iter().enumerate() {
        w.indices(format!("hierarchy.level{l}.kept"), 1, level.kept.len(), level.kept.iter().copied())?;
        let up: Vec<f64> = level
            .up
            .triplets()
            .flat_map(|(r, c, v)| [r as f64, c as f64, v])
            .collect();
        w.floats(format!("hierarchy.level{l}.up"), level.up.nnz(), 3, &up);
        w.mesh(&format!("hierarchy.level{l}"), &level.coarse_mesh)?;
    }

    let header = Header {
        config: model.network.config.clone(),
        stats: StatsHeader {
            sigma: model.stats.sigma,
            curvature_mean: model.stats.curvature_mean,
            curvature_std: model.stats.curvature_std,
        },
        metadata: ckpt.metadata.clone(),
        hierarchy_levels: h.levels.len(),
        payload_bytes: w.payload.len(),
        checksum: checksum(&w.payload),
        tensors: w.entries,
    };
    let json = serde_json::to_vec_pretty(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + w.payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.payload);
    Ok(out)
}

struct Reader<'a> {
    header: Header,
    payload: &'a [u8],
}

impl Reader<'_> {
    fn entry(&self, name: &str) -> Result<&TensorEntry> {
        self.header
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Integrity(format!("tensor {name} missing")))
    }

    fn bytes(&self, e: &TensorEntry) -> Result<&[u8]> {
        let len = e.shape[0]
            .checked_mul(e.shape[1])
            .and_then(|n| n.checked_mul(e.dtype.size()))
            .ok_or_else(|| Error::Integrity(format!("tensor {} has an absurd shape", e.name)))?;
        e.offset
            .checked_add(len)
            .and_then(|end| self.payload.get(e.offset..end))
            .ok_or_else(|| Error::Integrity(format!("tensor {} extends past the payload", e.name)))
    }

    fn floats(&self, name: &str) -> Result<Matrix> {
        let e = self.entry(name)?;
        let b = self.bytes(e)?;
        let data: Vec<f64> = match e.dtype {
            Dtype::F32 => b
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64 => b
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Dtype::U32 => return Err(Error::Integrity(format!("tensor {name} is not a float tensor"))),
        };
        Matrix::from_vec(e.shape[0], e.shape[1], data)
    }

    fn indices(&self, name: &str) -> Result<(usize, usize, Vec<usize>)> {
        let e = self.entry(name)?;
        if e.dtype != Dtype::U32 {
            return Err(Error::Integrity(format!("tensor {name} is not an index tensor")));
        }
        let data = self
            .bytes(e)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        Ok((e.shape[0], e.shape[1], data))
    }

    fn mesh(&self, prefix: &str) -> Result<Mesh> {
        let positions = self.floats(&format!("{prefix}.positions"))?;
        let (_, cols, f) = self.indices(&format!("{prefix}.faces"))?;
        if positions.cols() != 3 || cols != 3 {
            return Err(Error::Integrity(format!("mesh {prefix} has malformed tensors")));
        }
        let faces = f.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Mesh::new(positions.to_points(), faces).map_err(|e| Error::Integrity(format!("mesh {prefix}: {e}")))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 {
        return Err(Error::Integrity(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Integrity("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Integrity("header extends past end of file".into()))?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::Integrity(format!("unreadable header: {e}")))?;
    let payload = &bytes[header_end..];
    if payload.len() != header.payload_bytes {
        return Err(Error::Integrity(format!(
            "payload is {} bytes, header declares {}",
            payload.len(),
            header.payload_bytes
        )));
    }
    if checksum(payload) != header.checksum {
        return Err(Error::Integrity("payload checksum mismatch".into()));
    }
    let r = Reader { header, payload };

    let config = r.header.config.clone();
    let mut params = ModelParams::default();
    for e in &r.header.tensors {
        if let Some(name) = e.name.strip_prefix("param.") {
            params.insert(name, r.floats(&e.name)?);
        }
    }
    let stats = DatasetStats {
        template_mean: r.floats("stats.template_mean")?,
        sigma: r.header.stats.sigma,
        curvature_mean: r.header.stats.curvature_mean,
        curvature_std: r.header.stats.curvature_std,
    };

    let template = r.mesh("hierarchy.template")?;
    let mut levels = Vec::with_capacity(r.header.hierarchy_levels);
    let mut n_in = template.vertex_count();
    for l in 0..r.header.hierarchy_levels {
        let (_, _, kept) = r.indices(&format!("hierarchy.level{l}.kept"))?;
        let coarse = r.mesh(&format!("hierarchy.level{l}"))?;
        let up = r.floats(&format!("hierarchy.level{l}.up"))?;
        if up.cols() != 3 {
            return Err(Error::Integrity(format!("level {l} up-sampling triplets malformed")));
        }
        let triplets = (0..up.rows()).map(|i| (up[(i, 0)] as usize, up[(i, 1)] as usize, up[(i, 2)]));
        let up = SparseMatrix::from_triplets(n_in, kept.len(), triplets)
            .map_err(|e| Error::Integrity(format!("level {l}: {e}")))?;
        n_in = kept.len();
        levels.push((kept, up, coarse));
    }
    let hierarchy = Hierarchy::from_parts(template, levels)?;
    let network = Network::new(config, hierarchy)?;
    let model = Model::new(network, stats, params)?;
    Ok(Checkpoint {
        model,
        metadata: r.header.metadata,
    })
}

pub fn save_checkpoint_file(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = save_checkpoint(ckpt)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint_file(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint(&bytes)
}
