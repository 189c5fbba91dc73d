//! Fixed-topology triangle meshes: representation, adjacency and validation.

mod io;
pub mod shapes;

use std::collections::{BTreeMap, HashMap};

pub use io::{load_mesh, load_mesh_file, save_mesh, save_mesh_file, save_ply_with_quality, MeshFormat};

use crate::error::{Error, Result};

/// Triangle mesh with per-vertex positions.
///
/// Vertex order is significant: every mesh in a dataset is aligned with a
/// template, so row `i` of one mesh corresponds to row `i` of every other.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub positions: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    /// Builds a mesh and rejects it if [`validate_mesh`] reports a structural
    /// problem (out-of-range index, repeated index, isolated vertex).
    pub fn new(positions: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Mesh { positions, faces };
        let report = validate_mesh(&mesh);
        if !report.ok() {
            return Err(Error::Format(report.summary()));
        }
        Ok(mesh)
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Same faces, new positions. Panics if the vertex count changes.
    pub fn with_positions(&self, positions: Vec<[f64; 3]>) -> Mesh {
        assert_eq!(positions.len(), self.positions.len(), "vertex count changed");
        Mesh {
            positions,
            faces: self.faces.clone(),
        }
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let n = cross(
            sub(self.positions[b], self.positions[a]),
            sub(self.positions[c], self.positions[a]),
        );
        0.5 * norm(n)
    }

    /// Unit area-weighted vertex normals (zero for isolated vertices).
    pub fn vertex_normals(&self) -> Vec<[f64; 3]> {
        let mut acc = vec![[0.0; 3]; self.positions.len()];
        for &[a, b, c] in &self.faces {
            let n = cross(
                sub(self.positions[b], self.positions[a]),
                sub(self.positions[c], self.positions[a]),
            );
            for v in [a, b, c] {
                acc[v] = add(acc[v], n);
            }
        }
        acc.into_iter()
            .map(|n| {
                let l = norm(n);
                if l > 0.0 {
                    scale(n, 1.0 / l)
                } else {
                    n
                }
            })
            .collect()
    }

    /// Axis-aligned bounding box diagonal length.
    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.positions)
    }

    /// Directed half-edge counts, keyed by undirected edge `(min, max)`.
    pub(crate) fn edge_face_counts(&self) -> BTreeMap<(usize, usize), usize> {
        let mut counts = BTreeMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if a == b {
                    continue;
                }
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }
}

pub fn bbox_diagonal(positions: &[[f64; 3]]) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in positions {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    norm(sub(hi, lo))
}

/// Per-vertex neighbourhoods derived from the face list.
///
/// Every vertex is its own neighbour. Neighbour lists are sorted ascending and
/// stored in compressed form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

impl Adjacency {
    /// Builds the adjacency of `n` vertices from undirected edges. Duplicate
    /// edges and self edges in the input are ignored.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut lists: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut unique: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        unique.sort_unstable();
        unique.dedup();
        for &(a, b) in &unique {
            lists[a].push(b);
            lists[b].push(a);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(n + 2 * unique.len());
        offsets.push(0);
        for mut list in lists {
            list.sort_unstable();
            indices.extend_from_slice(&list);
            offsets.push(indices.len());
        }
        Adjacency {
            offsets,
            indices,
            edges: unique,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Row offsets into [`Adjacency::flat_neighbors`].
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn flat_neighbors(&self) -> &[usize] {
        &self.indices
    }

    /// Total directed neighbour count, `2|E| + N`.
    pub fn directed_count(&self) -> usize {
        self.indices.len()
    }

    /// Relabels vertices: vertex `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Adjacency {
        Adjacency::from_edges(
            self.vertex_count(),
            self.edges.iter().map(|&(a, b)| (perm[a], perm[b])),
        )
    }
}

pub fn build_adjacency(mesh: &Mesh) -> Adjacency {
    let edges = mesh
        .faces
        .iter()
        .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]);
    Adjacency::from_edges(mesh.vertex_count(), edges)
}

/// Findings from [`validate_mesh`]. Only the first three categories make a
/// mesh invalid; zero-area faces and non-manifold edges are informational.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    /// `(face, corner)` pairs whose vertex index is `>= N`.
    pub out_of_range: Vec<(usize, usize)>,
    pub degenerate_faces: Vec<usize>,
    pub isolated_vertices: Vec<usize>,
    pub zero_area_faces: Vec<usize>,
    /// Undirected edges shared by more than two faces.
    pub non_manifold_edges: Vec<(usize, usize)>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.out_of_range.is_empty()
            && self.degenerate_faces.is_empty()
            && self.isolated_vertices.is_empty()
    }

    pub fn is_clean(&self) -> bool {
        self.ok() && self.zero_area_faces.is_empty() && self.non_manifold_edges.is_empty()
    }

    pub fn summary(&self) -> String {
        format!(
            "{} out-of-range indices, {} degenerate faces, {} isolated vertices, {} zero-area faces, {} non-manifold edges",
            self.out_of_range.len(),
            self.degenerate_faces.len(),
            self.isolated_vertices.len(),
            self.zero_area_faces.len(),
            self.non_manifold_edges.len()
        )
    }
}

/// Zero-area threshold relative to the mean face area.
const ZERO_AREA_RATIO: f64 = 1e-12;

pub fn validate_mesh(mesh: &Mesh) -> ValidationReport {
    let n = mesh.vertex_count();
    let mut report = ValidationReport::default();
    let mut used = vec![false; n];
    let mut well_formed = Vec::with_capacity(mesh.faces.len());

    for (fi, f) in mesh.faces.iter().enumerate() {
        let mut in_range = true;
        for (k, &v) in f.iter().enumerate() {
            if v >= n {
                report.out_of_range.push((fi, k));
                in_range = false;
            } else {
                used[v] = true;
            }
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            report.degenerate_faces.push(fi);
        } else if in_range {
            well_formed.push(fi);
        }
    }
    report.isolated_vertices = (0..n).filter(|&v| !used[v]).collect();

    if !well_formed.is_empty() {
        let areas: Vec<f64> = well_formed.iter().map(|&f| mesh.face_area(f)).collect();
        let mean = areas.iter().sum::<f64>() / areas.len() as f64;
        report.zero_area_faces = well_formed
            .iter()
            .zip(&areas)
            .filter(|(_, &a)| !(a >= ZERO_AREA_RATIO * mean) || a == 0.0)
            .map(|(&f, _)| f)
            .collect();
    }

    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for &fi in &well_formed {
        let f = mesh.faces[fi];
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let mut non_manifold: Vec<_> = counts
        .into_iter()
        .filter(|&(_, c)| c > 2)
        .map(|(e, _)| e)
        .collect();
    non_manifold.sort_unstable();
    report.non_manifold_edges = non_manifold;
    report
}

// Small fixed-size vector helpers shared by the geometry code.

#[inline]
pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
