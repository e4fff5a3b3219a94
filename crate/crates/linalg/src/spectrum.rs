//! Eigenpair container shared by the solver and the classification code.

use nalgebra::DMatrix;

use crate::csr::SparseSymOp;

/// Branch label of an eigenpair of the penalized operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModeTag {
    Maxwell,
    Gradient,
    Unclassified,
}

impl ModeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeTag::Maxwell => "maxwell",
            ModeTag::Gradient => "gradient",
            ModeTag::Unclassified => "unclassified",
        }
    }
}

impl std::fmt::Display for ModeTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A run of eigenvalues that are equal up to a relative tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub start: usize,
    pub len: usize,
    pub mean: f64,
}

impl Cluster {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Eigenpairs of a generalized symmetric problem `A x = λ M x`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Ascending eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// `M`-orthonormal eigenvectors, one per column.
    pub eigenvectors: DMatrix<f64>,
    /// Residual norms `‖A x - λ M x‖` measured in the `M⁻¹` norm.
    pub residuals: Vec<f64>,
    pub tags: Vec<ModeTag>,
    /// Relative divergence energy `‖div u‖² τ / (λ ‖u‖²)`, NaN until classified.
    pub div_ratios: Vec<f64>,
    /// Shift actually used by the solver.
    pub shift: f64,
}

impl Spectrum {
    pub fn new(eigenvalues: Vec<f64>, eigenvectors: DMatrix<f64>, residuals: Vec<f64>, shift: f64) -> Self {
        let m = eigenvalues.len();
        Self {
            eigenvalues,
            eigenvectors,
            residuals,
            tags: vec![ModeTag::Unclassified; m],
            div_ratios: vec![f64::NAN; m],
            shift,
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Eigenvector `i` as a slice.
    pub fn vector(&self, i: usize) -> &[f64] {
        let n = self.eigenvectors.nrows();
        &self.eigenvectors.as_slice()[i * n..(i + 1) * n]
    }

    /// Eigenvalues `μ = (λ + 1)⁻¹` of the resolvent pencil `(M, A + M)`.
    pub fn resolvent_values(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| 1.0 / (l + 1.0)).collect()
    }

    /// Groups consecutive eigenvalues whose relative gap is at most `rel_tol`.
    pub fn clusters(&self, rel_tol: f64) -> Vec<Cluster> {
        cluster_values(&self.eigenvalues, rel_tol)
    }

    /// `max |XᵀMX - I|`.
    pub fn orthonormality_defect(&self, mass: &SparseSymOp) -> f64 {
        let mx = mass.mul_dense(&self.eigenvectors);
        let g = self.eigenvectors.transpose() * mx;
        let m = g.nrows();
        (g - DMatrix::<f64>::identity(m, m)).amax()
    }

    /// Rayleigh quotients `xᵀAx / xᵀMx` of the stored vectors.
    pub fn rayleigh_quotients(&self, a: &SparseSymOp, mass: &SparseSymOp) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let x = self.vector(i);
                a.quad_form(x) / mass.quad_form(x)
            })
            .collect()
    }
}

/// Clusters an ascending list of values by relative gap.
pub fn cluster_values(values: &[f64], rel_tol: f64) -> Vec<Cluster> {
    let mut out: Vec<Cluster> = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        let split = i == values.len() || {
            let (a, b) = (values[i - 1], values[i]);
            (b - a).abs() > rel_tol * a.abs().max(b.abs()).max(1e-300) + 1e-14
        };
        if split && i > start {
            let mean = values[start..i].iter().sum::<f64>() / (i - start) as f64;
            out.push(Cluster {
                start,
                len: i - start,
                mean,
            });
            start = i;
        }
    }
    out
}
