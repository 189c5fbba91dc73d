//! Mesh hierarchy for the global pathway.
//!
//! Each level halves the vertex count with quadric-error edge collapses
//! (Garland & Heckbert 1997). Collapses are half-edge collapses: one endpoint
//! is removed and the other keeps its original position, so every coarse
//! vertex is a fine vertex and down-sampling is a row selection. Discarded
//! vertices are re-expressed barycentrically on their closest coarse triangle
//! for up-sampling.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{build_adjacency, cross, dot, norm, scale, sub, validate_mesh, Adjacency, Mesh};
use crate::sparse::SparseMatrix;
use crate::tensor::Matrix;

/// Quadric weight multiplier for the planes that pin open boundaries.
pub const BOUNDARY_WEIGHT: f64 = 1e3;

/// Symmetric 4×4 quadric stored as its upper triangle.
#[derive(Debug, Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn plane(n: [f64; 3], d: f64, w: f64) -> Self {
        let [a, b, c] = n;
        Quadric([
            w * a * a,
            w * a * b,
            w * a * c,
            w * a * d,
            w * b * b,
            w * b * c,
            w * b * d,
            w * c * c,
            w * c * d,
            w * d * d,
        ])
    }

    fn add(&mut self, o: &Quadric) {
        for (a, b) in self.0.iter_mut().zip(&o.0) {
            *a += b;
        }
    }

    fn sum(a: &Quadric, b: &Quadric) -> Quadric {
        let mut q = *a;
        q.add(b);
        q
    }

    /// `[p 1] Q [p 1]ᵀ`.
    fn error(&self, p: [f64; 3]) -> f64 {
        let q = &self.0;
        let [x, y, z] = p;
        q[0] * x * x
            + 2.0 * q[1] * x * y
            + 2.0 * q[2] * x * z
            + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }
}

/// Heap key: collapses that flip a face sort after all others, then by
/// error, then by `(min, max)` endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    flips: bool,
    cost: f64,
    a: usize,
    b: usize,
    /// Endpoint that survives.
    keep: usize,
    stamp: (u64, u64),
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, o: &Self) -> Ordering {
        self.flips
            .cmp(&o.flips)
            .then(self.cost.total_cmp(&o.cost))
            .then(self.a.cmp(&o.a))
            .then(self.b.cmp(&o.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

struct Decimator<'a> {
    pos: &'a [[f64; 3]],
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vert_faces: Vec<Vec<usize>>,
    alive: Vec<bool>,
    quadrics: Vec<Quadric>,
    stamps: Vec<u64>,
}

impl<'a> Decimator<'a> {
    fn new(mesh: &'a Mesh) -> Self {
        let n = mesh.vertex_count();
        let pos = &mesh.positions;
        let mut quadrics = vec![Quadric::default(); n];
        let mut vert_faces = vec![Vec::new(); n];
        for (fi, f) in mesh.faces.iter().enumerate() {
            let nrm = cross(sub(pos[f[1]], pos[f[0]]), sub(pos[f[2]], pos[f[0]]));
            let len = norm(nrm);
            if len > 0.0 {
                let unit = scale(nrm, 1.0 / len);
                let q = Quadric::plane(unit, -dot(unit, pos[f[0]]), 1.0);
                for &v in f {
                    quadrics[v].add(&q);
                }
            }
            for &v in f {
                vert_faces[v].push(fi);
            }
        }
        // Boundary edges get a heavily weighted plane perpendicular to their face.
        for (&(a, b), &count) in &mesh.edge_face_counts() {
            if count != 1 {
                continue;
            }
            let Some(&fi) = vert_faces[a].iter().find(|&&fi| mesh.faces[fi].contains(&b)) else {
                continue;
            };
            let f = mesh.faces[fi];
            let face_n = cross(sub(pos[f[1]], pos[f[0]]), sub(pos[f[2]], pos[f[0]]));
            let perp = cross(sub(pos[b], pos[a]), face_n);
            let len = norm(perp);
            if len > 0.0 {
                let unit = scale(perp, 1.0 / len);
                let q = Quadric::plane(unit, -dot(unit, pos[a]), BOUNDARY_WEIGHT);
                quadrics[a].add(&q);
                quadrics[b].add(&q);
            }
        }
        Decimator {
            pos,
            faces: mesh.faces.clone(),
            face_alive: vec![true; mesh.faces.len()],
            vert_faces,
            alive: vec![true; n],
            quadrics,
            stamps: vec![0; n],
        }
    }

    fn live_faces(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.vert_faces[v].iter().copied().filter(|&f| self.face_alive[f])
    }

    fn neighbors(&self, v: usize) -> BTreeSet<usize> {
        self.live_faces(v)
            .flat_map(|f| self.faces[f])
            .filter(|&w| w != v)
            .collect()
    }

    /// Topological safety: the common neighbours of `a` and `b` must be
    /// exactly the apexes of the faces on edge `ab`.
    fn link_ok(&self, a: usize, b: usize) -> bool {
        let common: BTreeSet<usize> = self.neighbors(a).intersection(&self.neighbors(b)).copied().collect();
        let apexes: BTreeSet<usize> = self
            .live_faces(a)
            .filter(|&f| self.faces[f].contains(&b))
            .flat_map(|f| self.faces[f])
            .filter(|&w| w != a && w != b)
            .collect();
        common == apexes
    }

    /// Would moving `from` onto `to` invert any surviving face?
    fn flips(&self, from: usize, to: usize) -> bool {
        let p = self.pos;
        self.live_faces(from)
            .filter(|&f| !self.faces[f].contains(&to))
            .any(|f| {
                let tri = self.faces[f];
                let before = cross(sub(p[tri[1]], p[tri[0]]), sub(p[tri[2]], p[tri[0]]));
                let moved = tri.map(|v| if v == from { p[to] } else { p[v] });
                let after = cross(sub(moved[1], moved[0]), sub(moved[2], moved[0]));
                dot(before, after) <= 0.0
            })
    }

    fn candidate(&self, u: usize, v: usize) -> Candidate {
        let (a, b) = (u.min(v), u.max(v));
        let q = Quadric::sum(&self.quadrics[a], &self.quadrics[b]);
        let (cost_a, cost_b) = (q.error(self.pos[a]), q.error(self.pos[b]));
        let flip_keep_a = self.flips(b, a);
        let flip_keep_b = self.flips(a, b);
        let opts = [(flip_keep_a, cost_a, a), (flip_keep_b, cost_b, b)];
        let best = if (opts[1].0, opts[1].1.max(0.0)) < (opts[0].0, opts[0].1.max(0.0)) {
            opts[1]
        } else {
            opts[0]
        };
        Candidate {
            flips: best.0,
            cost: best.1.max(0.0),
            a,
            b,
            keep: best.2,
            stamp: (self.stamps[a], self.stamps[b]),
        }
    }

    fn collapse(&mut self, remove: usize, keep: usize) {
        let faces: Vec<usize> = self.live_faces(remove).collect();
        for f in faces {
            if self.faces[f].contains(&keep) {
                self.face_alive[f] = false;
                continue;
            }
            for slot in self.faces[f].iter_mut() {
                if *slot == remove {
                    *slot = keep;
                }
            }
            self.vert_faces[keep].push(f);
        }
        // Drop faces that now duplicate another face over the same vertices.
        let mut seen: Vec<([usize; 3], usize)> = Vec::new();
        let mut live: Vec<usize> = self.live_faces(keep).collect();
        live.sort_unstable();
        live.dedup();
        for f in live {
            let mut key = self.faces[f];
            key.sort_unstable();
            if seen.iter().any(|(k, _)| *k == key) {
                self.face_alive[f] = false;
            } else {
                seen.push((key, f));
            }
        }
        let q = self.quadrics[remove];
        self.quadrics[keep].add(&q);
        self.alive[remove] = false;
        self.stamps[keep] += 1;
        self.stamps[remove] += 1;
    }
}

/// Collapses edges in order of increasing quadric error until `target_count`
/// vertices remain. Returns the coarse mesh and, for each coarse vertex, its
/// index in the input mesh (ascending).
///
/// Stops early with a warning if no collapsible edge is left.
pub fn decimate_qem(mesh: &Mesh, target_count: usize) -> Result<(Mesh, Vec<usize>)> {
    let n = mesh.vertex_count();
    if target_count == 0 || target_count >= n {
        return Err(Error::InvalidArgument(format!(
            "target count {target_count} must be in 1..{n}"
        )));
    }
    let report = validate_mesh(mesh);
    if !report.ok() {
        return Err(Error::InvalidArgument(format!("invalid mesh: {}", report.summary())));
    }

    let mut dec = Decimator::new(mesh);
    let mut heap = BinaryHeap::new();
    for &(a, b) in build_adjacency(mesh).edges() {
        heap.push(Reverse(dec.candidate(a, b)));
    }

    let mut remaining = n;
    while remaining > target_count {
        let Some(Reverse(c)) = heap.pop() else {
            log::warn!("decimation stopped at {remaining} vertices (target {target_count}): no collapsible edge");
            break;
        };
        if !dec.alive[c.a] || !dec.alive[c.b] || c.stamp != (dec.stamps[c.a], dec.stamps[c.b]) {
            continue;
        }
        if !dec.link_ok(c.a, c.b) {
            continue;
        }
        let remove = if c.keep == c.a { c.b } else { c.a };
        dec.collapse(remove, c.keep);
        remaining -= 1;
        for w in dec.neighbors(c.keep) {
            heap.push(Reverse(dec.candidate(c.keep, w)));
        }
        // A rejected edge may pass the link test after this collapse.
        for w in dec.neighbors(c.keep) {
            for x in dec.neighbors(w) {
                if x != c.keep {
                    heap.push(Reverse(dec.candidate(w, x)));
                }
            }
        }
    }

    let kept: Vec<usize> = (0..n).filter(|&v| dec.alive[v]).collect();
    let mut remap = vec![usize::MAX; n];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new;
    }
    let faces = dec
        .faces
        .iter()
        .zip(&dec.face_alive)
        .filter(|(_, &alive)| alive)
        .map(|(f, _)| f.map(|v| remap[v]))
        .collect();
    let positions = kept.iter().map(|&v| mesh.positions[v]).collect();
    Ok((Mesh { positions, faces }, kept))
}

/// Selection matrix `D` (`kept.len() × n_in`) with `D[r, kept[r]] = 1`.
pub fn build_down_matrix(kept: &[usize], n_in: usize) -> Result<SparseMatrix> {
    let mut seen = vec![false; n_in];
    for &k in kept {
        if k >= n_in {
            return Err(Error::InvalidArgument(format!("kept index {k} >= {n_in}")));
        }
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::InvalidArgument(format!("duplicate kept index {k}")));
        }
    }
    SparseMatrix::from_triplets(kept.len(), n_in, kept.iter().enumerate().map(|(r, &k)| (r, k, 1.0)))
}

/// Barycentric coordinates of the point of triangle `abc` closest to `p`
/// (Ericson, Real-Time Collision Detection §5.1.5).
pub fn closest_point_barycentric(p: [f64; 3], a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [1.0 - v - w, v, w]
}

/// Up-sampling matrix `U` (`n_fine × n_coarse`).
///
/// Kept vertices map one-hot to their coarse index; every other vertex gets
/// the barycentric coordinates of its projection onto the closest coarse
/// triangle, clamped to the triangle and renormalised.
pub fn build_up_matrix(fine: &Mesh, coarse: &Mesh, kept: &[usize]) -> Result<SparseMatrix> {
    if coarse.vertex_count() == 0 || coarse.face_count() == 0 {
        return Err(Error::InvalidArgument("empty coarse mesh".into()));
    }
    if kept.len() != coarse.vertex_count() {
        return Err(Error::InvalidArgument(format!(
            "{} kept indices for {} coarse vertices",
            kept.len(),
            coarse.vertex_count()
        )));
    }
    let n = fine.vertex_count();
    let mut coarse_of = vec![None; n];
    for (r, &k) in kept.iter().enumerate() {
        if k >= n {
            return Err(Error::InvalidArgument(format!("kept index {k} >= {n}")));
        }
        coarse_of[k] = Some(r);
    }

    let mut triplets = Vec::with_capacity(3 * n);
    for (i, &p) in fine.positions.iter().enumerate() {
        if let Some(r) = coarse_of[i] {
            triplets.push((i, r, 1.0));
            continue;
        }
        let mut best = (f64::INFINITY, 0usize, [0.0; 3]);
        for (fi, f) in coarse.faces.iter().enumerate() {
            let [a, b, c] = f.map(|v| coarse.positions[v]);
            let bary = closest_point_barycentric(p, a, b, c);
            let q = [
                bary[0] * a[0] + bary[1] * b[0] + bary[2] * c[0],
                bary[0] * a[1] + bary[1] * b[1] + bary[2] * c[1],
                bary[0] * a[2] + bary[1] * b[2] + bary[2] * c[2],
            ];
            let d = dot(sub(p, q), sub(p, q));
            if d < best.0 {
                best = (d, fi, bary);
            }
        }
        let clamped = best.2.map(|w| w.max(0.0));
        let total: f64 = clamped.iter().sum();
        let f = coarse.faces[best.1];
        for k in 0..3 {
            triplets.push((i, f[k], clamped[k] / total));
        }
    }
    SparseMatrix::from_triplets(n, coarse.vertex_count(), triplets)
}

/// One level of the hierarchy.
#[derive(Debug, Clone)]
pub struct SamplingPair {
    /// `n_out × n_in` selection.
    pub down: Arc<SparseMatrix>,
    /// `n_in × n_out` barycentric interpolation.
    pub up: Arc<SparseMatrix>,
    pub kept: Vec<usize>,
    pub coarse_mesh: Mesh,
    pub coarse_adjacency: Arc<Adjacency>,
}

impl SamplingPair {
    pub fn n_in(&self) -> usize {
        self.down.cols()
    }

    pub fn n_out(&self) -> usize {
        self.down.rows()
    }
}

/// Chain of sampling levels, finest first.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub template_mesh: Mesh,
    pub template_adjacency: Arc<Adjacency>,
    pub levels: Vec<SamplingPair>,
}

impl Hierarchy {
    /// Vertex counts from the template down to the coarsest level.
    pub fn vertex_counts(&self) -> Vec<usize> {
        std::iter::once(self.template_mesh.vertex_count())
            .chain(self.levels.iter().map(SamplingPair::n_out))
            .collect()
    }

    /// Adjacency of the input to level `l` (0 = template).
    pub fn adjacency(&self, l: usize) -> &Arc<Adjacency> {
        if l == 0 {
            &self.template_adjacency
        } else {
            &self.levels[l - 1].coarse_adjacency
        }
    }

    /// Assembles a hierarchy from stored parts, rebuilding adjacencies.
    pub fn from_parts(template: Mesh, levels: Vec<(Vec<usize>, SparseMatrix, Mesh)>) -> Result<Self> {
        let mut n_in = template.vertex_count();
        let mut out = Vec::with_capacity(levels.len());
        for (kept, up, coarse) in levels {
            let down = build_down_matrix(&kept, n_in)?;
            if up.rows() != n_in || up.cols() != kept.len() || coarse.vertex_count() != kept.len() {
                return Err(Error::Integrity("hierarchy level shapes are inconsistent".into()));
            }
            n_in = kept.len();
            out.push(SamplingPair {
                down: Arc::new(down),
                up: Arc::new(up),
                coarse_adjacency: Arc::new(build_adjacency(&coarse)),
                coarse_mesh: coarse,
                kept,
            });
        }
        Ok(Hierarchy {
            template_adjacency: Arc::new(build_adjacency(&template)),
            template_mesh: template,
            levels: out,
        })
    }

    /// The same hierarchy with template vertices relabelled by `perm`
    /// (vertex `i` becomes `perm[i]`). Coarse levels keep their labels.
    pub fn permuted(&self, perm: &[usize]) -> Hierarchy {
        let n = perm.len();
        let mut positions = vec![[0.0; 3]; n];
        for (i, &p) in perm.iter().enumerate() {
            positions[p] = self.template_mesh.positions[i];
        }
        let template = Mesh {
            positions,
            faces: self.template_mesh.faces.iter().map(|f| f.map(|v| perm[v])).collect(),
        };
        let mut levels = self.levels.clone();
        if let Some(first) = levels.first_mut() {
            let id: Vec<usize> = (0..first.n_out()).collect();
            first.down = Arc::new(first.down.permuted(&id, perm));
            first.up = Arc::new(first.up.permuted(perm, &id));
            first.kept = first.kept.iter().map(|&k| perm[k]).collect();
        }
        Hierarchy {
            template_adjacency: Arc::new(self.template_adjacency.permuted(perm)),
            template_mesh: template,
            levels,
        }
    }
}

pub fn build_hierarchy(template: &Mesh, levels: usize) -> Result<Hierarchy> {
    let n = template.vertex_count();
    if n >> levels < 4 {
        return Err(Error::InvalidArgument(format!(
            "{levels} levels would leave fewer than 4 vertices from {n}"
        )));
    }
    let mut current = template.clone();
    let mut out = Vec::with_capacity(levels);
    for level in 0..levels {
        let target = current.vertex_count() / 2;
        let (coarse, kept) = decimate_qem(&current, target)?;
        if coarse.vertex_count() != target {
            return Err(Error::InvalidArgument(format!(
                "level {level}: decimation reached {} vertices, needed {target}",
                coarse.vertex_count()
            )));
        }
        let report = validate_mesh(&coarse);
        if !report.ok() {
            return Err(Error::InvalidArgument(format!(
                "level {level}: coarse mesh invalid: {}",
                report.summary()
            )));
        }
        let down = build_down_matrix(&kept, current.vertex_count())?;
        let up = build_up_matrix(&current, &coarse, &kept)?;
        out.push(SamplingPair {
            down: Arc::new(down),
            up: Arc::new(up),
            kept,
            coarse_adjacency: Arc::new(build_adjacency(&coarse)),
            coarse_mesh: coarse.clone(),
        });
        current = coarse;
    }
    Ok(Hierarchy {
        template_adjacency: Arc::new(build_adjacency(template)),
        template_mesh: template.clone(),
        levels: out,
    })
}

/// `M · X` outside of a tape.
pub fn apply_sampling(m: &SparseMatrix, x: &Matrix) -> Result<Matrix> {
    if m.cols() != x.rows() {
        return Err(Error::Shape(format!(
            "sampling matrix {}x{} applied to {} rows",
            m.rows(),
            m.cols(),
            x.rows()
        )));
    }
    Matrix::from_vec(m.rows(), x.cols(), m.mul_dense(x.as_slice(), x.cols()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn icosphere_162_to_81() {
        let m = shapes::icosphere(2, 1.0);
        let (coarse, kept) = decimate_qem(&m, 81).unwrap();
        assert_eq!(coarse.vertex_count(), 81);
        assert_eq!(kept.len(), 81);
        assert!(kept.windows(2).all(|w| w[0] < w[1]));
        assert!(validate_mesh(&coarse).ok());
        for (r, &k) in kept.iter().enumerate() {
            assert_eq!(coarse.positions[r], m.positions[k]);
        }
    }

    #[test]
    fn single_collapse() {
        let m = shapes::icosphere(1, 1.0);
        let (coarse, _) = decimate_qem(&m, 41).unwrap();
        assert_eq!(coarse.vertex_count(), 41);
        assert!(validate_mesh(&coarse).ok());
        assert_eq!(coarse.face_count(), m.face_count() - 2);
    }

    #[test]
    fn tetrahedron_to_three_vertices() {
        let (coarse, kept) = decimate_qem(&shapes::tetrahedron(), 3).unwrap();
        // Exhaustive small case: any collapse of K4 leaves a doubled triangle,
        // which is merged into one face.
        assert_eq!(kept.len(), 3);
        assert_eq!(coarse.face_count(), 1);
        assert!(validate_mesh(&coarse).ok());
        assert!(coarse.face_area(0) > 0.0);
    }

    #[test]
    fn open_grid_keeps_boundary_shape() {
        let m = shapes::grid(8, 8);
        let (coarse, kept) = decimate_qem(&m, 32).unwrap();
        assert!(validate_mesh(&coarse).ok());
        // Corners are the costliest vertices to remove.
        for corner in [0, 7, 56, 63] {
            assert!(kept.contains(&corner));
        }
    }

    #[test]
    fn bad_target_rejected() {
        let m = shapes::tetrahedron();
        assert!(decimate_qem(&m, 4).is_err());
        assert!(decimate_qem(&m, 0).is_err());
    }

    #[test]
    fn down_matrix_selects_rows() {
        let d = build_down_matrix(&[0, 2], 3).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let y = apply_sampling(&d, &x).unwrap();
        assert_eq!(y, Matrix::from_rows(&[[1.0, 2.0], [5.0, 6.0]]));
        let id = build_down_matrix(&[0, 1, 2], 3).unwrap();
        assert_eq!(id, SparseMatrix::identity(3));
        assert!(build_down_matrix(&[1, 1], 3).is_err());
        assert!(build_down_matrix(&[3], 3).is_err());
    }

    #[test]
    fn down_matrix_matches_gather_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 40;
        let mut kept: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.4)).collect();
        kept.reverse();
        let x = Matrix::from_vec(n, 3, (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let y = apply_sampling(&build_down_matrix(&kept, n).unwrap(), &x).unwrap();
        for (r, &k) in kept.iter().enumerate() {
            assert_eq!(y.row(r), x.row(k));
        }
    }

    #[test]
    fn centroid_projects_to_thirds() {
        let a = [0.0, 0.0, 0.0];
        let b = [2.0, 0.0, 0.0];
        let c = [0.0, 3.0, 0.0];
        let g = [2.0 / 3.0, 1.0, 0.5];
        let bary = closest_point_barycentric(g, a, b, c);
        for w in bary {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        // Beyond a vertex: clamps to that vertex.
        assert_eq!(closest_point_barycentric([-1.0, -1.0, 0.0], a, b, c), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn up_matrix_rows_are_partitions_of_unity() {
        let m = shapes::icosphere(2, 1.0);
        let (coarse, kept) = decimate_qem(&m, 81).unwrap();
        let u = build_up_matrix(&m, &coarse, &kept).unwrap();
        for r in 0..u.rows() {
            let entries: Vec<_> = u.row(r).collect();
            assert!((1..=3).contains(&entries.len()));
            assert!(entries.iter().all(|&(_, v)| v >= 0.0));
            let s: f64 = entries.iter().map(|&(_, v)| v).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        for (r, &k) in kept.iter().enumerate() {
            assert_eq!(u.row(k).collect::<Vec<_>>(), vec![(r, 1.0)]);
        }
    }

    #[test]
    fn hierarchy_642_counts_and_round_trip() {
        let h = build_hierarchy(&shapes::icosphere(3, 1.0), 3).unwrap();
        assert_eq!(h.vertex_counts(), vec![642, 321, 160, 80]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for level in &h.levels {
            assert!(validate_mesh(&level.coarse_mesh).ok());
            let xc = Matrix::from_vec(level.n_out(), 2, (0..level.n_out() * 2).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
            let up = apply_sampling(&level.up, &xc).unwrap();
            let back = apply_sampling(&level.down, &up).unwrap();
            assert_eq!(back, xc);
            // Constant fields survive up-sampling.
            let ones = Matrix::filled(level.n_out(), 1, 1.0);
            let u1 = apply_sampling(&level.up, &ones).unwrap();
            assert!(u1.as_slice().iter().all(|v| (v - 1.0).abs() < 1e-9));
        }
    }

    #[test]
    fn hierarchy_is_deterministic() {
        let t = shapes::icosphere(2, 1.0);
        let a = build_hierarchy(&t, 2).unwrap();
        let b = build_hierarchy(&t, 2).unwrap();
        for (x, y) in a.levels.iter().zip(&b.levels) {
            assert_eq!(*x.down, *y.down);
            assert_eq!(*x.up, *y.up);
            assert_eq!(x.coarse_mesh, y.coarse_mesh);
        }
    }

    #[test]
    fn zero_levels_is_empty() {
        let h = build_hierarchy(&shapes::icosphere(1, 1.0), 0).unwrap();
        assert!(h.levels.is_empty());
        assert_eq!(h.vertex_counts(), vec![42]);
        assert!(build_hierarchy(&shapes::icosphere(0, 1.0), 2).is_err());
    }

    #[test]
    fn identity_sampling_and_shape_errors() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(apply_sampling(&SparseMatrix::identity(2), &x).unwrap(), x);
        assert!(apply_sampling(&SparseMatrix::identity(3), &x).is_err());
    }
}
