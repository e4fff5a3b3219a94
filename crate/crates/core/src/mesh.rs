//! Structured tetrahedral meshes of boxes and of subgraph domains obtained by
//! vertically shearing a box mesh onto a boundary profile.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};

use crate::atlas::{ProfileFunction, Rect2};
use crate::error::MeshError;

/// Boundary part a face belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Top,
    Side,
    Bottom,
}

impl BoundaryTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::Top => "top",
            BoundaryTag::Side => "side",
            BoundaryTag::Bottom => "bottom",
        }
    }
}

/// Box face a boundary triangle lies on: 0/1 = x min/max, 2/3 = y min/max,
/// 4/5 = z min/max (bottom/top).
pub type PatchId = u8;

/// A boundary triangle with its outward unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryFace {
    pub vertices: [usize; 3],
    pub tet: usize,
    pub normal: [f64; 3],
    pub area: f64,
    pub tag: BoundaryTag,
    pub patch: PatchId,
}

/// Tensor-grid coordinates the mesh was generated from. Vertex `(i, j, k)`
/// has index `i + (nx + 1) (j + (ny + 1) k)` and hexahedron `(i, j, k)` owns
/// tetrahedra `6 h .. 6 h + 6` with `h = i + nx (j + ny k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Reference levels before any shear.
    pub zs: Vec<f64>,
}

impl StructuredGrid {
    pub fn counts(&self) -> [usize; 3] {
        [self.xs.len() - 1, self.ys.len() - 1, self.zs.len() - 1]
    }

    pub fn vertex_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.counts();
        i + (nx + 1) * (j + (ny + 1) * k)
    }

    pub fn vertex_ijk(&self, v: usize) -> [usize; 3] {
        let [nx, ny, _] = self.counts();
        let i = v % (nx + 1);
        let j = (v / (nx + 1)) % (ny + 1);
        let k = v / ((nx + 1) * (ny + 1));
        [i, j, k]
    }

    pub fn hex_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.counts();
        i + nx * (j + ny * k)
    }
}

/// Tetrahedral mesh with positively oriented elements.
#[derive(Clone, Debug, PartialEq)]
pub struct TetMesh {
    vertices: Vec<[f64; 3]>,
    tets: Vec<[usize; 4]>,
    boundary_faces: Vec<BoundaryFace>,
    grid: StructuredGrid,
}

/// Signed volume of a tetrahedron.
pub fn signed_volume(p: &[[f64; 3]; 4]) -> f64 {
    let e = |a: usize| Vector3::new(p[a][0] - p[0][0], p[a][1] - p[0][1], p[a][2] - p[0][2]);
    Matrix3::from_columns(&[e(1), e(2), e(3)]).determinant() / 6.0
}

/// The six axis-permutation paths from corner 000 to corner 111 of a hexahedron.
const KUHN_PATHS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

fn check_axis(name: &str, c: &[f64]) -> Result<(), MeshError> {
    if c.len() < 2 {
        return Err(MeshError::DegenerateBox(format!("axis {name} needs at least one cell")));
    }
    if c.iter().any(|v| !v.is_finite()) || c.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(MeshError::DegenerateBox(format!(
            "axis {name} coordinates must be finite and strictly increasing"
        )));
    }
    Ok(())
}

/// Uniform box mesh of `W × (z_lo, z_hi)` with `n` cells per axis (`n ≥ 1`).
pub fn mesh_box(w: Rect2, z_lo: f64, z_hi: f64, n: [usize; 3]) -> Result<TetMesh, MeshError> {
    if n.contains(&0) {
        return Err(MeshError::DegenerateBox(format!("cell counts must be positive, got {n:?}")));
    }
    let lin = |a: f64, b: f64, m: usize| -> Vec<f64> {
        (0..=m).map(|i| if i == m { b } else { a + (b - a) * i as f64 / m as f64 }).collect()
    };
    mesh_box_graded(lin(w.x.0, w.x.1, n[0]), lin(w.y.0, w.y.1, n[1]), lin(z_lo, z_hi, n[2]))
}

/// Box mesh on the tensor grid `xs × ys × zs`.
pub fn mesh_box_graded(xs: Vec<f64>, ys: Vec<f64>, zs: Vec<f64>) -> Result<TetMesh, MeshError> {
    check_axis("x", &xs)?;
    check_axis("y", &ys)?;
    check_axis("z", &zs)?;
    let grid = StructuredGrid { xs, ys, zs };
    let [nx, ny, nz] = grid.counts();
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([grid.xs[i], grid.ys[j], grid.zs[k]]);
            }
        }
    }
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for path in KUHN_PATHS {
                    let mut c = [i, j, k];
                    let mut t = [0usize; 4];
                    t[0] = grid.vertex_index(c[0], c[1], c[2]);
                    for (s, &axis) in path.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = grid.vertex_index(c[0], c[1], c[2]);
                    }
                    tets.push(t);
                }
            }
        }
    }
    let mut mesh = TetMesh {
        vertices,
        tets,
        boundary_faces: Vec::new(),
        grid,
    };
    for t in 0..mesh.tets.len() {
        if mesh.tet_volume(t) < 0.0 {
            mesh.tets[t].swap(2, 3);
        }
    }
    mesh.boundary_faces = mesh.extract_boundary();
    Ok(mesh)
}

/// Vertically shears a box mesh so its top follows `g`:
/// `z ↦ z_lo + (z - z_lo) (g(x̄) - z_lo) / (z_top_ref - z_lo)`.
pub fn shear_fit(mesh: &TetMesh, g: &ProfileFunction, z_lo: f64, z_top_ref: f64) -> Result<TetMesh, MeshError> {
    if !(z_top_ref > z_lo) {
        return Err(MeshError::DegenerateBox(format!(
            "reference top {z_top_ref} must lie above z_lo {z_lo}"
        )));
    }
    let margin = 1e-9 * (z_top_ref - z_lo);
    let mut out = mesh.clone();
    for v in out.vertices.iter_mut() {
        let x = [v[0], v[1]];
        let gv = g.value(x);
        if !(gv > z_lo + margin) {
            return Err(MeshError::ProfileTooLow { value: gv, at: x });
        }
        let scale = (gv - z_lo) / (z_top_ref - z_lo);
        v[2] = if (v[2] - z_top_ref).abs() <= 1e-14 * (1.0 + z_top_ref.abs()) {
            gv
        } else {
            z_lo + (v[2] - z_lo) * scale
        };
    }
    for t in 0..out.tets.len() {
        let vol = out.tet_volume(t);
        if !(vol > 0.0) {
            return Err(MeshError::InvertedElement { tet: t, volume: vol });
        }
    }
    out.boundary_faces = out.extract_boundary();
    Ok(out)
}

/// Mesh quality summary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshQuality {
    pub min_signed_volume: f64,
    /// `max (longest edge) / (2 √6 · inradius)`; equals 1 for a regular tetrahedron.
    pub max_aspect_ratio: f64,
    pub h_max: f64,
}

/// Scans all elements for volume, aspect ratio and longest edge.
pub fn mesh_quality(mesh: &TetMesh) -> MeshQuality {
    let mut q = MeshQuality {
        min_signed_volume: f64::INFINITY,
        max_aspect_ratio: 0.0,
        h_max: 0.0,
    };
    for t in 0..mesh.tets.len() {
        let p = mesh.tet_points(t);
        let vol = signed_volume(&p);
        let mut emax: f64 = 0.0;
        for a in 0..4 {
            for b in (a + 1)..4 {
                emax = emax.max(dist(p[a], p[b]));
            }
        }
        let area: f64 = FACES
            .iter()
            .map(|f| tri_area(p[f[0]], p[f[1]], p[f[2]]))
            .sum();
        let inradius = 3.0 * vol.abs() / area;
        q.min_signed_volume = q.min_signed_volume.min(vol);
        q.h_max = q.h_max.max(emax);
        q.max_aspect_ratio = q.max_aspect_ratio.max(emax / (2.0 * 6f64.sqrt() * inradius));
    }
    q
}

/// Local faces of a tetrahedron, face `f` is opposite vertex `f`.
pub const FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn tri_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let u = Vector3::new(b[0] - a[0], b[1] - a[1], b[2] - a[2]);
    let v = Vector3::new(c[0] - a[0], c[1] - a[1], c[2] - a[2]);
    0.5 * u.cross(&v).norm()
}

impl TetMesh {
    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary_faces
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn tet_points(&self, t: usize) -> [[f64; 3]; 4] {
        let v = self.tets[t];
        [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]], self.vertices[v[3]]]
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        signed_volume(&self.tet_points(t))
    }

    pub fn volume(&self) -> f64 {
        let mut s = crate::quadrature::KahanSum::default();
        for t in 0..self.tets.len() {
            s.add(self.tet_volume(t));
        }
        s.value()
    }

    fn patch_of(&self, face: [usize; 3]) -> Option<PatchId> {
        let [nx, ny, nz] = self.grid.counts();
        let ijk = face.map(|v| self.grid.vertex_ijk(v));
        let all = |axis: usize, val: usize| ijk.iter().all(|c| c[axis] == val);
        if all(2, nz) {
            Some(5)
        } else if all(2, 0) {
            Some(4)
        } else if all(0, 0) {
            Some(0)
        } else if all(0, nx) {
            Some(1)
        } else if all(1, 0) {
            Some(2)
        } else if all(1, ny) {
            Some(3)
        } else {
            None
        }
    }

    fn extract_boundary(&self) -> Vec<BoundaryFace> {
        let mut seen: HashMap<[usize; 3], (usize, usize, u32)> = HashMap::with_capacity(2 * self.tets.len());
        for (t, tet) in self.tets.iter().enumerate() {
            for (f, lf) in FACES.iter().enumerate() {
                let mut key = [tet[lf[0]], tet[lf[1]], tet[lf[2]]];
                key.sort_unstable();
                seen.entry(key).and_modify(|e| e.2 += 1).or_insert((t, f, 1));
            }
        }
        let mut faces: Vec<BoundaryFace> = seen
            .into_iter()
            .filter(|(_, e)| e.2 == 1)
            .map(|(_, (t, f, _))| {
                let tet = self.tets[t];
                let vs = FACES[f].map(|l| tet[l]);
                let p = vs.map(|v| Vector3::from(self.vertices[v]));
                let opp = Vector3::from(self.vertices[tet[f]]);
                let mut n = (p[1] - p[0]).cross(&(p[2] - p[0]));
                let area = 0.5 * n.norm();
                let centroid = (p[0] + p[1] + p[2]) / 3.0;
                if n.dot(&(centroid - opp)) < 0.0 {
                    n = -n;
                }
                n /= n.norm();
                let patch = self.patch_of(vs).unwrap_or(u8::MAX);
                let tag = match patch {
                    5 => BoundaryTag::Top,
                    4 => BoundaryTag::Bottom,
                    _ => BoundaryTag::Side,
                };
                BoundaryFace {
                    vertices: vs,
                    tet: t,
                    normal: n.into(),
                    area,
                    tag,
                    patch,
                }
            })
            .collect();
        faces.sort_by_key(|f| {
            let mut k = f.vertices;
            k.sort_unstable();
            k
        });
        faces
    }

    /// Checks that every boundary edge is shared by exactly two boundary faces
    /// and that every face lies on a box patch.
    pub fn check_watertight(&self) -> Result<(), MeshError> {
        let mut edges: HashMap<(usize, usize), u32> = HashMap::new();
        for f in &self.boundary_faces {
            if f.patch == u8::MAX {
                return Err(MeshError::NonManifold(format!("face {:?} lies on no box patch", f.vertices)));
            }
            for e in 0..3 {
                let (a, b) = (f.vertices[e], f.vertices[(e + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        if let Some((e, c)) = edges.iter().find(|(_, &c)| c != 2) {
            return Err(MeshError::NonManifold(format!("boundary edge {e:?} is shared by {c} faces")));
        }
        Ok(())
    }

    /// Locates `p` and returns `(tet, barycentric coordinates)`. Points up to
    /// `tol` (in barycentric units) outside the mesh snap to the nearest element.
    pub fn locate(&self, p: [f64; 3], tol: f64) -> Option<(usize, [f64; 4])> {
        let g = &self.grid;
        let [nx, ny, nz] = g.counts();
        let cell = |c: &[f64], x: f64| -> usize {
            let n = c.len() - 1;
            c.partition_point(|&v| v <= x).saturating_sub(1).min(n - 1)
        };
        let (ci, cj) = (cell(&g.xs, p[0]), cell(&g.ys, p[1]));
        // Estimate the reference level from the column heights at the cell corners.
        let tx = ((p[0] - g.xs[ci]) / (g.xs[ci + 1] - g.xs[ci])).clamp(0.0, 1.0);
        let ty = ((p[1] - g.ys[cj]) / (g.ys[cj + 1] - g.ys[cj])).clamp(0.0, 1.0);
        let z_at = |k: usize| -> f64 {
            let z = |i: usize, j: usize| self.vertices[g.vertex_index(i, j, k)][2];
            (1.0 - tx) * (1.0 - ty) * z(ci, cj)
                + tx * (1.0 - ty) * z(ci + 1, cj)
                + (1.0 - tx) * ty * z(ci, cj + 1)
                + tx * ty * z(ci + 1, cj + 1)
        };
        let mut lo = 0usize;
        let mut hi = nz;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if z_at(mid) <= p[2] {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let ck = lo;
        let mut best: Option<(usize, [f64; 4], f64)> = None;
        for dk in [0isize, -1, 1] {
            for dj in [0isize, -1, 1] {
                for di in [0isize, -1, 1] {
                    let (i, j, k) = (ci as isize + di, cj as isize + dj, ck as isize + dk);
                    if i < 0 || j < 0 || k < 0 || i >= nx as isize || j >= ny as isize || k >= nz as isize {
                        continue;
                    }
                    let h = g.hex_index(i as usize, j as usize, k as usize);
                    for t in 6 * h..6 * h + 6 {
                        let b = self.barycentric(t, p);
                        let worst = b.iter().cloned().fold(f64::INFINITY, f64::min);
                        if worst >= -1e-12 {
                            return Some((t, b));
                        }
                        if best.as_ref().is_none_or(|x| worst > x.2) {
                            best = Some((t, b, worst));
                        }
                    }
                }
            }
        }
        best.filter(|b| b.2 >= -tol).map(|(t, b, _)| {
            let clipped = b.map(|x| x.max(0.0));
            let s: f64 = clipped.iter().sum();
            (t, clipped.map(|x| x / s))
        })
    }

    /// Barycentric coordinates of `p` with respect to element `t`.
    pub fn barycentric(&self, t: usize, p: [f64; 3]) -> [f64; 4] {
        let q = self.tet_points(t);
        let col = |a: usize| Vector3::new(q[a][0] - q[0][0], q[a][1] - q[0][1], q[a][2] - q[0][2]);
        let m = Matrix3::from_columns(&[col(1), col(2), col(3)]);
        let r = Vector3::new(p[0] - q[0][0], p[1] - q[0][1], p[2] - q[0][2]);
        let l = m.lu().solve(&r).unwrap_or_else(|| Vector3::repeat(f64::NAN));
        [1.0 - l[0] - l[1] - l[2], l[0], l[1], l[2]]
    }

    /// Writes the mesh in the `curlcurl-mesh v1` text format.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "curlcurl-mesh v1")?;
        writeln!(out, "vertices {}", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e} {:.17e}", v[0], v[1], v[2])?;
        }
        writeln!(out, "tets {}", self.tets.len())?;
        for t in &self.tets {
            writeln!(out, "{} {} {} {}", t[0], t[1], t[2], t[3])?;
        }
        writeln!(out, "boundary_faces {}", self.boundary_faces.len())?;
        for f in &self.boundary_faces {
            writeln!(
                out,
                "{} {} {} {} {:.17e} {:.17e} {:.17e}",
                f.vertices[0],
                f.vertices[1],
                f.vertices[2],
                f.tag.as_str(),
                f.normal[0],
                f.normal[1],
                f.normal[2]
            )?;
        }
        Ok(())
    }
}

/// Coordinates on `[a, b]` with `n` cells that are `ratio` times finer near `b`
/// than near `a` (geometric progression); `ratio = 1` gives a uniform grid.
pub fn graded_axis(a: f64, b: f64, n: usize, ratio: f64) -> Vec<f64> {
    let n = n.max(1);
    if (ratio - 1.0).abs() < 1e-12 || n == 1 {
        return (0..=n).map(|i| if i == n { b } else { a + (b - a) * i as f64 / n as f64 }).collect();
    }
    let q = (1.0 / ratio).powf(1.0 / (n as f64 - 1.0));
    let widths: Vec<f64> = (0..n).map(|i| q.powi(i as i32)).collect();
    let total: f64 = widths.iter().sum();
    let mut out = Vec::with_capacity(n + 1);
    let mut x = a;
    out.push(a);
    for (i, w) in widths.iter().enumerate() {
        x += (b - a) * w / total;
        out.push(if i == n - 1 { b } else { x });
    }
    out
}

/// Coordinates on `[a, b]` with spacing at most `h_fine` on `[c0, c1]` and at
/// most `h_coarse` elsewhere; breakpoints are included as grid lines.
pub fn piecewise_axis(a: f64, b: f64, c0: f64, c1: f64, h_fine: f64, h_coarse: f64) -> Vec<f64> {
    let c0 = c0.clamp(a, b);
    let c1 = c1.clamp(c0, b);
    let mut out = vec![a];
    let push_seg = |lo: f64, hi: f64, h: f64, out: &mut Vec<f64>| {
        if hi - lo <= 1e-14 {
            return;
        }
        let n = ((hi - lo) / h).ceil().max(1.0) as usize;
        for i in 1..=n {
            out.push(if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 });
        }
    };
    push_seg(a, c0, h_coarse, &mut out);
    push_seg(c0, c1, h_fine, &mut out);
    push_seg(c1, b, h_coarse, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::{CosProduct, Cutoff};
    use proptest::prelude::*;

    fn unit() -> Rect2 {
        Rect2::new((0.0, 1.0), (0.0, 1.0))
    }

    #[test]
    fn single_cube_split() {
        let m = mesh_box(unit(), 0.0, 1.0, [1, 1, 1]).unwrap();
        assert_eq!(m.num_vertices(), 8);
        assert_eq!(m.num_tets(), 6);
        assert!((m.volume() - 1.0).abs() < 1e-12);
        assert!(m.tets.iter().enumerate().all(|(t, _)| m.tet_volume(t) > 0.0));
    }

    #[test]
    fn refined_cube_volume_and_counts() {
        let m = mesh_box(unit(), 0.0, 1.0, [4, 4, 4]).unwrap();
        assert!((m.volume() - 1.0).abs() < 1e-12);
        assert_eq!(m.num_vertices(), 125);
        m.check_watertight().unwrap();
    }

    #[test]
    fn boundary_face_count_matches_formula() {
        for n in [[1, 1, 1], [2, 3, 1], [3, 2, 4]] {
            let m = mesh_box(unit(), 0.0, 1.0, n).unwrap();
            // Brute force: count faces that occur in exactly one element.
            let mut count: HashMap<[usize; 3], usize> = HashMap::new();
            for t in m.tets() {
                for f in FACES {
                    let mut k = f.map(|l| t[l]);
                    k.sort_unstable();
                    *count.entry(k).or_default() += 1;
                }
            }
            let once = count.values().filter(|&&c| c == 1).count();
            let formula = 2 * (2 * n[0] * n[1] + 2 * n[1] * n[2] + 2 * n[0] * n[2]);
            assert_eq!(once, formula);
            assert_eq!(m.boundary_faces().len(), formula);
        }
    }

    #[test]
    fn normals_point_outward() {
        let m = mesh_box(unit(), 0.0, 1.0, [3, 2, 2]).unwrap();
        for f in m.boundary_faces() {
            let tet = m.tets[f.tet];
            let c: Vector3<f64> = tet.iter().map(|&v| Vector3::from(m.vertices[v])).sum::<Vector3<f64>>() / 4.0;
            let fc: Vector3<f64> = f.vertices.iter().map(|&v| Vector3::from(m.vertices[v])).sum::<Vector3<f64>>() / 3.0;
            assert!(Vector3::from(f.normal).dot(&(fc - c)) > 0.0);
            let expected = match f.patch {
                0 => [-1.0, 0.0, 0.0],
                1 => [1.0, 0.0, 0.0],
                2 => [0.0, -1.0, 0.0],
                3 => [0.0, 1.0, 0.0],
                4 => [0.0, 0.0, -1.0],
                _ => [0.0, 0.0, 1.0],
            };
            assert!((Vector3::from(f.normal) - Vector3::from(expected)).norm() < 1e-14);
        }
    }

    #[test]
    fn identity_shear_keeps_mesh() {
        let m = mesh_box(unit(), -1.0, 0.0, [2, 2, 2]).unwrap();
        let s = shear_fit(&m, &ProfileFunction::zero(), -1.0, 0.0).unwrap();
        assert_eq!(s.vertices, m.vertices);
    }

    #[test]
    fn constant_shear_scales_volume() {
        let m = mesh_box(unit(), -1.0, 1.0, [3, 3, 3]).unwrap();
        let s = shear_fit(&m, &ProfileFunction::Constant { c: 0.5 }, -1.0, 1.0).unwrap();
        assert!((s.volume() - 0.75 * 2.0).abs() < 1e-12);
    }

    fn osc(eps: f64) -> ProfileFunction {
        ProfileFunction::Oscillatory {
            alpha: 2.0,
            eps,
            b: CosProduct::new([1.0, 1.0]),
            psi: Cutoff::One,
        }
    }

    #[test]
    fn oscillatory_shear_fits_top() {
        let g = osc(0.1);
        let m = mesh_box(unit(), -1.0, 0.0, [32, 32, 16]).unwrap();
        let s = shear_fit(&m, &g, -1.0, 0.0).unwrap();
        assert!(mesh_quality(&s).min_signed_volume > 0.0);
        let [_, _, nz] = s.grid().counts();
        for (v, p) in s.vertices().iter().enumerate() {
            if s.grid().vertex_ijk(v)[2] == nz {
                assert!((p[2] - g.value([p[0], p[1]])).abs() < 1e-12);
            }
        }
        s.check_watertight().unwrap();
        // Volume against a quadrature of ∫_W (g - z_lo).
        let rule = crate::quadrature::gauss_legendre_interval(0.0, 1.0, 200);
        let mut exact = 0.0;
        for &(x, wx) in &rule {
            for &(y, wy) in &rule {
                exact += wx * wy * (g.value([x, y]) + 1.0);
            }
        }
        assert!((s.volume() - exact).abs() < 0.01 * exact);
    }

    #[test]
    fn coarse_mesh_under_strong_oscillation_is_gated() {
        let g = ProfileFunction::Oscillatory {
            alpha: 0.5,
            eps: 0.05,
            b: CosProduct::new([1.0, 1.0]),
            psi: Cutoff::One,
        };
        let m = mesh_box(unit(), -0.3, 0.0, [4, 4, 8]).unwrap();
        match shear_fit(&m, &g, -0.3, 0.0) {
            Err(MeshError::InvertedElement { .. }) | Err(MeshError::ProfileTooLow { .. }) => {}
            Ok(s) => assert!(mesh_quality(&s).min_signed_volume > 0.0),
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn shear_rejects_profile_below_floor() {
        let m = mesh_box(unit(), -1.0, 0.0, [2, 2, 2]).unwrap();
        assert!(matches!(
            shear_fit(&m, &ProfileFunction::Constant { c: -1.5 }, -1.0, 0.0),
            Err(MeshError::ProfileTooLow { .. })
        ));
    }

    #[test]
    fn quality_of_cube_mesh() {
        let m = mesh_box(unit(), 0.0, 1.0, [4, 4, 4]).unwrap();
        let q = mesh_quality(&m);
        assert!(q.min_signed_volume > 0.0);
        // Edge-scan oracle over all element edges.
        let mut h: f64 = 0.0;
        for t in m.tets() {
            for a in 0..4 {
                for b in 0..4 {
                    h = h.max(dist(m.vertices[t[a]], m.vertices[t[b]]));
                }
            }
        }
        assert_eq!(q.h_max, h);
        assert!((h - 3f64.sqrt() / 4.0).abs() < 1e-15);
        assert!(q.max_aspect_ratio >= 1.0);
    }

    #[test]
    fn top_normals_converge_first_order() {
        let g = ProfileFunction::Oscillatory {
            alpha: 1.0,
            eps: 1.0,
            b: CosProduct {
                freq: [1.0, 1.0],
                amplitude: 0.1,
                offset: 0.0,
            },
            psi: Cutoff::One,
        };
        let dev = |n: usize| -> f64 {
            let m = mesh_box(unit(), -1.0, 0.0, [n, n, 2]).unwrap();
            let s = shear_fit(&m, &g, -1.0, 0.0).unwrap();
            let mut worst: f64 = 0.0;
            for f in s.boundary_faces().iter().filter(|f| f.tag == BoundaryTag::Top) {
                let c: Vector3<f64> =
                    f.vertices.iter().map(|&v| Vector3::from(s.vertices()[v])).sum::<Vector3<f64>>() / 3.0;
                let gr = g.eval([c[0], c[1]]).gradient;
                let exact = Vector3::new(-gr[0], -gr[1], 1.0).normalize();
                worst = worst.max((Vector3::from(f.normal) - exact).norm());
            }
            worst
        };
        let (a, b, c) = (dev(8), dev(16), dev(32));
        assert!(b < 0.6 * a && c < 0.6 * b, "{a} {b} {c}");
    }

    #[test]
    fn locate_finds_containing_element() {
        let g = osc(0.25);
        let m = mesh_box(unit(), -1.0, 0.0, [8, 8, 4]).unwrap();
        let s = shear_fit(&m, &g, -1.0, 0.0).unwrap();
        for &(x, y, f) in &[(0.13, 0.77, 0.3), (0.5, 0.5, 0.999), (0.91, 0.02, 0.01)] {
            let top = g.value([x, y]);
            let p = [x, y, -1.0 + f * (top + 1.0)];
            let (t, b) = s.locate(p, 1e-9).unwrap();
            let q = s.tet_points(t);
            for d in 0..3 {
                let r: f64 = (0..4).map(|a| b[a] * q[a][d]).sum();
                assert!((r - p[d]).abs() < 1e-12);
            }
        }
        assert!(s.locate([0.5, 0.5, 0.5], 1e-9).is_none());
    }

    #[test]
    fn text_export_has_header_and_counts() {
        let m = mesh_box(unit(), 0.0, 1.0, [1, 1, 1]).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "curlcurl-mesh v1");
        assert_eq!(lines[1], "vertices 8");
        assert_eq!(lines.len(), 1 + 1 + 8 + 1 + 6 + 1 + 12);
    }

    #[test]
    fn axis_builders() {
        let a = graded_axis(-1.0, 0.0, 6, 4.0);
        assert_eq!(a.len(), 7);
        assert_eq!(*a.last().unwrap(), 0.0);
        let w: Vec<f64> = a.windows(2).map(|w| w[1] - w[0]).collect();
        assert!((w[0] / w[5] - 4.0).abs() < 1e-10);
        let p = piecewise_axis(0.0, 1.0, 0.2, 0.6, 0.05, 0.25);
        assert!(p.contains(&0.2) && p.contains(&0.6));
        assert!(p.windows(2).all(|w| w[1] > w[0]));
    }

    proptest! {
        #[test]
        fn box_volume_is_additive(nx in 1usize..5, ny in 1usize..5, nz in 1usize..5, lx in 0.1f64..3.0, lz in 0.1f64..2.0) {
            let m = mesh_box(Rect2::new((0.0, lx), (0.0, 1.0)), -lz, 0.0, [nx, ny, nz]).unwrap();
            prop_assert!((m.volume() - lx * lz).abs() < 1e-12 * (1.0 + lx * lz));
            prop_assert!(m.check_watertight().is_ok());
        }
    }
}
