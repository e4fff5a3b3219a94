//! Vector Lagrange finite elements (orders 1 and 2) on tetrahedral meshes,
//! with the electric boundary condition `ν × u = 0` imposed nodewise, and
//! assembly of the penalized curl-curl, mass, div-div and H¹ forms.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use curlcurl_linalg::SparseSymOp;
use nalgebra::{Matrix3, Vector3};

use crate::error::{FemError, MeshError};
use crate::mesh::TetMesh;
use crate::quadrature::{tet_rule, KahanSum};

/// Boundary condition imposed on boundary nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// `ν × u = 0`: only the normal component survives on smooth boundary
    /// patches; nodes where two or more independent normals meet are fixed.
    Electric,
    /// No constraint; every node keeps three components.
    None,
}

/// Constraint class of a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Interior,
    /// Boundary node with a single normal direction.
    Face,
    /// Boundary node where several independent normals meet.
    Fixed,
}

/// Per-node constraint data.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeConstraint {
    pub kind: NodeKind,
    /// Orthonormal frame (columns). For face nodes the first column is the
    /// averaged outward normal and the others are tangents.
    pub frame: Matrix3<f64>,
    /// Orthonormal basis of the admissible nodal values.
    pub free: Vec<Vector3<f64>>,
}

/// Bilinear forms available for assembly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Form {
    /// `∫ curl u · curl v + τ ∫ div u div v`.
    CurlCurlPenalized { tau: f64 },
    /// `∫ u · v`.
    Mass,
    /// `∫ div u div v`.
    DivDiv,
    /// `∫ ∇u : ∇v`.
    GradGrad,
    /// `∫ u · v + ∇u : ∇v`.
    H1,
}

/// Reference tables on the unit-volume-normalized tetrahedron.
struct RefTables {
    nb: usize,
    /// `mass[a nb + b] = ∫ φ_a φ_b / |T|`.
    mass: Vec<f64>,
    /// `grad[((a nb + b) 4 + i) 4 + j] = ∫ c_{a,i} c_{b,j} / |T|` where
    /// `∇φ_a = Σ_i c_{a,i} ∇λ_i`.
    grad: Vec<f64>,
}

/// Local edge list of a tetrahedron; order-2 edge node `4 + e` sits on `EDGES[e]`.
pub const EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];

fn shape(order: usize, a: usize, l: &[f64; 4]) -> f64 {
    if order == 1 {
        return l[a];
    }
    if a < 4 {
        l[a] * (2.0 * l[a] - 1.0)
    } else {
        let [i, j] = EDGES[a - 4];
        4.0 * l[i] * l[j]
    }
}

fn shape_grad_coeffs(order: usize, a: usize, l: &[f64; 4]) -> [f64; 4] {
    let mut c = [0.0; 4];
    if order == 1 {
        c[a] = 1.0;
    } else if a < 4 {
        c[a] = 4.0 * l[a] - 1.0;
    } else {
        let [i, j] = EDGES[a - 4];
        c[i] = 4.0 * l[j];
        c[j] = 4.0 * l[i];
    }
    c
}

fn build_tables(order: usize) -> RefTables {
    let nb = if order == 1 { 4 } else { 10 };
    let rule = tet_rule(4);
    let mut mass = vec![0.0; nb * nb];
    let mut grad = vec![0.0; nb * nb * 16];
    for q in &rule {
        let w = 6.0 * q.weight;
        let phi: Vec<f64> = (0..nb).map(|a| shape(order, a, &q.bary)).collect();
        let c: Vec<[f64; 4]> = (0..nb).map(|a| shape_grad_coeffs(order, a, &q.bary)).collect();
        for a in 0..nb {
            for b in 0..nb {
                mass[a * nb + b] += w * phi[a] * phi[b];
                for i in 0..4 {
                    for j in 0..4 {
                        grad[((a * nb + b) * 4 + i) * 4 + j] += w * c[a][i] * c[b][j];
                    }
                }
            }
        }
    }
    RefTables { nb, mass, grad }
}

fn tables(order: usize) -> &'static RefTables {
    static P1: OnceLock<RefTables> = OnceLock::new();
    static P2: OnceLock<RefTables> = OnceLock::new();
    if order == 1 {
        P1.get_or_init(|| build_tables(1))
    } else {
        P2.get_or_init(|| build_tables(2))
    }
}

/// Volume and barycentric gradients of element `t` (rows of the result).
pub fn element_geometry(mesh: &TetMesh, t: usize) -> (f64, [Vector3<f64>; 4]) {
    let p = mesh.tet_points(t);
    let col = |a: usize| Vector3::new(p[a][0] - p[0][0], p[a][1] - p[0][1], p[a][2] - p[0][2]);
    let j = Matrix3::from_columns(&[col(1), col(2), col(3)]);
    let vol = j.determinant() / 6.0;
    let inv = j.try_inverse().unwrap_or_else(Matrix3::zeros);
    let g1: Vector3<f64> = inv.row(0).transpose();
    let g2: Vector3<f64> = inv.row(1).transpose();
    let g3: Vector3<f64> = inv.row(2).transpose();
    (vol, [-(g1 + g2 + g3), g1, g2, g3])
}

/// Vector nodal finite-element space with constrained boundary nodes.
#[derive(Debug)]
pub struct FemSpace {
    mesh: TetMesh,
    order: usize,
    bc: BoundaryCondition,
    nodes: Vec<[f64; 3]>,
    elem_nodes: Vec<Vec<usize>>,
    constraints: Vec<NodeConstraint>,
    dof_start: Vec<usize>,
    num_dofs: usize,
    boundary_nodes: usize,
    pattern: OnceLock<SparseSymOp>,
}

impl Clone for FemSpace {
    fn clone(&self) -> Self {
        Self {
            mesh: self.mesh.clone(),
            order: self.order,
            bc: self.bc,
            nodes: self.nodes.clone(),
            elem_nodes: self.elem_nodes.clone(),
            constraints: self.constraints.clone(),
            dof_start: self.dof_start.clone(),
            num_dofs: self.num_dofs,
            boundary_nodes: self.boundary_nodes,
            pattern: OnceLock::new(),
        }
    }
}

/// Builds the space with the electric boundary condition.
pub fn build_space(mesh: &TetMesh, order: usize) -> Result<FemSpace, FemError> {
    FemSpace::new(mesh, order, BoundaryCondition::Electric)
}

/// Orthonormal completion of a unit vector.
fn complete_frame(n: Vector3<f64>) -> Matrix3<f64> {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = (helper - n * n.dot(&helper)).normalize();
    let t2 = n.cross(&t1);
    Matrix3::from_columns(&[n, t1, t2])
}

/// Rank tolerance for distinguishing independent patch normals.
const NORMAL_RANK_TOL: f64 = 1e-6;

impl FemSpace {
    pub fn new(mesh: &TetMesh, order: usize, bc: BoundaryCondition) -> Result<Self, FemError> {
        if order != 1 && order != 2 {
            return Err(FemError::UnsupportedOrder(order));
        }
        mesh.check_watertight()?;
        for t in 0..mesh.num_tets() {
            let v = mesh.tet_volume(t);
            if !(v > 0.0) {
                return Err(MeshError::InvertedElement { tet: t, volume: v }.into());
            }
        }
        let nv = mesh.num_vertices();
        let mut nodes: Vec<[f64; 3]> = mesh.vertices().to_vec();
        let mut edge_id: HashMap<(usize, usize), usize> = HashMap::new();
        let mut elem_nodes = Vec::with_capacity(mesh.num_tets());
        for tet in mesh.tets() {
            let mut en: Vec<usize> = tet.to_vec();
            if order == 2 {
                for [a, b] in EDGES {
                    let (u, v) = (tet[a].min(tet[b]), tet[a].max(tet[b]));
                    let id = *edge_id.entry((u, v)).or_insert_with(|| {
                        let (p, q) = (mesh.vertices()[u], mesh.vertices()[v]);
                        nodes.push([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0]);
                        nodes.len() - 1
                    });
                    en.push(id);
                }
            }
            elem_nodes.push(en);
        }

        // Area-weighted outward normals per (node, boundary patch).
        let mut patch_normals: Vec<BTreeMap<u8, Vector3<f64>>> = vec![BTreeMap::new(); nodes.len()];
        for f in mesh.boundary_faces() {
            let n = Vector3::from(f.normal) * f.area;
            let mut touched: Vec<usize> = f.vertices.to_vec();
            if order == 2 {
                for e in 0..3 {
                    let (a, b) = (f.vertices[e], f.vertices[(e + 1) % 3]);
                    touched.push(edge_id[&(a.min(b), a.max(b))]);
                }
            }
            for v in touched {
                *patch_normals[v].entry(f.patch).or_insert_with(Vector3::zeros) += n;
            }
        }
        let mut constraints = Vec::with_capacity(nodes.len());
        let mut boundary_nodes = 0;
        for pn in &patch_normals {
            if pn.is_empty() {
                constraints.push(NodeConstraint {
                    kind: NodeKind::Interior,
                    frame: Matrix3::identity(),
                    free: vec![Vector3::x(), Vector3::y(), Vector3::z()],
                });
                continue;
            }
            boundary_nodes += 1;
            let mut basis: Vec<Vector3<f64>> = Vec::new();
            for n in pn.values() {
                let mut r = n.normalize();
                for b in &basis {
                    r -= b * b.dot(&r);
                }
                if r.norm() > NORMAL_RANK_TOL {
                    basis.push(r.normalize());
                }
            }
            let c = match (bc, basis.len()) {
                (BoundaryCondition::None, _) => NodeConstraint {
                    kind: NodeKind::Interior,
                    frame: Matrix3::identity(),
                    free: vec![Vector3::x(), Vector3::y(), Vector3::z()],
                },
                (BoundaryCondition::Electric, 1) => NodeConstraint {
                    kind: NodeKind::Face,
                    frame: complete_frame(basis[0]),
                    free: vec![basis[0]],
                },
                (BoundaryCondition::Electric, _) => {
                    let third = basis[0].cross(&basis[1]).normalize();
                    NodeConstraint {
                        kind: NodeKind::Fixed,
                        frame: Matrix3::from_columns(&[basis[0], basis[1], third]),
                        free: Vec::new(),
                    }
                }
            };
            constraints.push(c);
        }
        let mut dof_start = Vec::with_capacity(nodes.len() + 1);
        let mut next = 0;
        for c in &constraints {
            dof_start.push(next);
            next += c.free.len();
        }
        dof_start.push(next);
        log::debug!(
            "fem space: order {order}, {} nodes ({} vertices), {next} free dofs",
            nodes.len(),
            nv
        );
        Ok(Self {
            mesh: mesh.clone(),
            order,
            bc,
            nodes,
            elem_nodes,
            constraints,
            dof_start,
            num_dofs: next,
            boundary_nodes,
            pattern: OnceLock::new(),
        })
    }

    pub fn mesh(&self) -> &TetMesh {
        &self.mesh
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn boundary_condition(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn num_dofs(&self) -> usize {
        self.num_dofs
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn elem_nodes(&self, t: usize) -> &[usize] {
        &self.elem_nodes[t]
    }

    pub fn constraint(&self, node: usize) -> &NodeConstraint {
        &self.constraints[node]
    }

    pub fn dof_range(&self, node: usize) -> std::ops::Range<usize> {
        self.dof_start[node]..self.dof_start[node + 1]
    }

    pub fn boundary_node_count(&self) -> usize {
        self.boundary_nodes
    }

    /// Number of eliminated nodal components.
    pub fn constrained_count(&self) -> usize {
        3 * self.nodes.len() - self.num_dofs
    }

    /// Nodal vector of node `a` from a free-DOF vector.
    pub fn node_value(&self, a: usize, q: &[f64]) -> Vector3<f64> {
        let r = self.dof_range(a);
        self.constraints[a]
            .free
            .iter()
            .zip(&q[r])
            .fold(Vector3::zeros(), |acc, (d, &c)| acc + d * c)
    }

    /// All nodal vectors of a free-DOF vector.
    pub fn expand(&self, q: &[f64]) -> Vec<Vector3<f64>> {
        (0..self.nodes.len()).map(|a| self.node_value(a, q)).collect()
    }

    /// Nodal interpolant of `f`, projected onto the admissible values.
    pub fn interpolate<F: Fn([f64; 3]) -> [f64; 3]>(&self, f: F) -> Vec<f64> {
        let mut q = vec![0.0; self.num_dofs];
        for (a, x) in self.nodes.iter().enumerate() {
            let v = Vector3::from(f(*x));
            for (k, d) in self.constraints[a].free.iter().enumerate() {
                q[self.dof_start[a] + k] = d.dot(&v);
            }
        }
        q
    }

    /// Value and Jacobian `(∂_j u_i)` of the discrete field in element `t`
    /// at barycentric coordinates `bary`.
    pub fn eval(&self, t: usize, bary: [f64; 4], q: &[f64]) -> (Vector3<f64>, Matrix3<f64>) {
        let (_, g) = element_geometry(&self.mesh, t);
        let mut u = Vector3::zeros();
        let mut du = Matrix3::zeros();
        for (a, &node) in self.elem_nodes[t].iter().enumerate() {
            let v = self.node_value(node, q);
            let phi = shape(self.order, a, &bary);
            let c = shape_grad_coeffs(self.order, a, &bary);
            let grad = g[0] * c[0] + g[1] * c[1] + g[2] * c[2] + g[3] * c[3];
            u += v * phi;
            du += v * grad.transpose();
        }
        (u, du)
    }

    fn build_pattern(&self) -> SparseSymOp {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for en in &self.elem_nodes {
            for &a in en {
                if self.constraints[a].free.is_empty() {
                    continue;
                }
                adj[a].extend(en.iter().copied().filter(|&b| !self.constraints[b].free.is_empty()));
            }
        }
        let mut rows: Vec<Vec<usize>> = Vec::with_capacity(self.num_dofs);
        for (a, nb) in adj.iter_mut().enumerate() {
            nb.sort_unstable();
            nb.dedup();
            let cols: Vec<usize> = nb.iter().flat_map(|&b| self.dof_range(b)).collect();
            for _ in self.dof_range(a) {
                rows.push(cols.clone());
            }
        }
        SparseSymOp::from_pattern(self.num_dofs, rows).expect("pattern indices are in range")
    }

    /// Zero matrix with the sparsity pattern of the space.
    pub fn pattern(&self) -> SparseSymOp {
        self.pattern.get_or_init(|| self.build_pattern()).clone()
    }
}

/// Assembles `form` on the free DOFs of `space`.
pub fn assemble(space: &FemSpace, form: Form) -> Result<SparseSymOp, FemError> {
    if let Form::CurlCurlPenalized { tau } = form {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(FemError::InvalidTau(tau));
        }
    }
    let tab = tables(space.order);
    let nb = tab.nb;
    let mut mat = space.pattern();
    let mesh = &space.mesh;
    let mut w = vec![Matrix3::<f64>::zeros(); nb * nb];
    for t in 0..mesh.num_tets() {
        let (vol, g) = element_geometry(mesh, t);
        if !(vol > 0.0) {
            return Err(MeshError::InvertedElement { tet: t, volume: vol }.into());
        }
        let mut outer = [[Matrix3::<f64>::zeros(); 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                outer[i][j] = g[i] * g[j].transpose() * vol;
            }
        }
        for a in 0..nb {
            for b in 0..nb {
                let base = (a * nb + b) * 16;
                let mut m = Matrix3::zeros();
                for i in 0..4 {
                    for j in 0..4 {
                        let c = tab.grad[base + i * 4 + j];
                        if c != 0.0 {
                            m += outer[i][j] * c;
                        }
                    }
                }
                w[a * nb + b] = m;
            }
        }
        let en = &space.elem_nodes[t];
        for a in 0..nb {
            let na = en[a];
            let fa = &space.constraints[na].free;
            if fa.is_empty() {
                continue;
            }
            for b in 0..nb {
                let nbn = en[b];
                let fb = &space.constraints[nbn].free;
                if fb.is_empty() {
                    continue;
                }
                let wab = &w[a * nb + b];
                let s = wab.trace();
                let mab = tab.mass[a * nb + b] * vol;
                let block = match form {
                    Form::CurlCurlPenalized { tau } => {
                        Matrix3::from_diagonal_element(s) - wab.transpose() + wab * tau
                    }
                    Form::Mass => Matrix3::from_diagonal_element(mab),
                    Form::DivDiv => *wab,
                    Form::GradGrad => Matrix3::from_diagonal_element(s),
                    Form::H1 => Matrix3::from_diagonal_element(s + mab),
                };
                let (ra, rb) = (space.dof_start[na], space.dof_start[nbn]);
                for (i, qa) in fa.iter().enumerate() {
                    let bq = block.transpose() * qa;
                    for (j, qb) in fb.iter().enumerate() {
                        mat.add_at(ra + i, rb + j, bq.dot(qb))?;
                    }
                }
            }
        }
    }
    Ok(mat)
}

/// Penalized curl-curl stiffness `∫ curl u · curl v + τ ∫ div u div v`.
pub fn assemble_stiffness(space: &FemSpace, tau: f64) -> Result<SparseSymOp, FemError> {
    assemble(space, Form::CurlCurlPenalized { tau })
}

/// Vector mass matrix.
pub fn assemble_mass(space: &FemSpace) -> Result<SparseSymOp, FemError> {
    assemble(space, Form::Mass)
}

/// Div-div matrix `D`.
pub fn assemble_divdiv(space: &FemSpace) -> Result<SparseSymOp, FemError> {
    assemble(space, Form::DivDiv)
}

/// Full H¹ inner-product matrix.
pub fn assemble_h1(space: &FemSpace) -> Result<SparseSymOp, FemError> {
    assemble(space, Form::H1)
}

/// L² norm of the divergence of the discrete field, equal to `(uᵀ D u)^{1/2}`
/// with `D` the div-div matrix. It is evaluated element by element with an
/// exact rule so that divergence-free fields give zero without cancellation.
pub fn divergence_l2(space: &FemSpace, u: &[f64]) -> Result<f64, FemError> {
    let rule = tet_rule(3);
    let mut s = KahanSum::default();
    for t in 0..space.mesh.num_tets() {
        let vol = space.mesh.tet_volume(t);
        if !(vol > 0.0) {
            return Err(MeshError::InvertedElement { tet: t, volume: vol }.into());
        }
        for q in &rule {
            let div = space.eval(t, q.bary, u).1.trace();
            s.add(6.0 * vol * q.weight * div * div);
        }
    }
    Ok(s.value().max(0.0).sqrt())
}

/// `∫ |curl u_h|² + τ |div u_h|²` by per-element quadrature, independent of
/// the assembled matrices.
pub fn energy_by_quadrature(space: &FemSpace, u: &[f64], tau: f64) -> f64 {
    let rule = tet_rule(3);
    let mut s = KahanSum::default();
    for t in 0..space.mesh.num_tets() {
        let vol = space.mesh.tet_volume(t);
        for q in &rule {
            let (_, du) = space.eval(t, q.bary, u);
            let curl = Vector3::new(du[(2, 1)] - du[(1, 2)], du[(0, 2)] - du[(2, 0)], du[(1, 0)] - du[(0, 1)]);
            let div = du.trace();
            s.add(6.0 * vol * q.weight * (curl.norm_squared() + tau * div * div));
        }
    }
    s.value()
}
