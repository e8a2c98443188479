//! Discrete Laplace–Beltrami operators: cotangent stiffness, lumped mass,
//! shifted-system solvers and partial generalized eigendecomposition.

mod eigen;
mod solver;
mod sparse;

pub use eigen::{partial_eigs, partial_eigs_with, EigenBasis, EigenMethod, DENSE_EIGEN_LIMIT};
pub use solver::{estimate_lambda_max, Factor, ShiftedSolver, SolverKind, CG_TOL};
pub use sparse::SparseSym;

use crate::error::{Error, Result};
use crate::mesh::{cross, dot, norm, sub, Mesh};

pub const DEFAULT_EPSILON: f64 = 1e-8;
const COT_CLAMP: f64 = 1e6;

/// Stiffness `L` (positive semidefinite) and lumped vertex masses `M`.
#[derive(Clone, Debug)]
pub struct OperatorPair {
    pub stiffness: SparseSym,
    pub mass: Vec<f64>,
    pub epsilon: f64,
}

impl OperatorPair {
    pub fn n(&self) -> usize {
        self.mass.len()
    }

    /// Sparse `alpha·M + beta·L + gamma·I`.
    pub fn combine(&self, alpha: f64, beta: f64, gamma: f64) -> SparseSym {
        let diag: Vec<f64> = self.mass.iter().map(|m| alpha * m + gamma).collect();
        self.stiffness.scaled_plus_diag(beta, &diag)
    }

    /// `M + tL + εI`.
    pub fn shifted(&self, t: f64) -> SparseSym {
        self.combine(1.0, t, self.epsilon)
    }

    /// Symmetric relabeling: new vertex `perm[i]` is old vertex `i`.
    pub fn permuted(&self, perm: &[usize]) -> OperatorPair {
        let mut mass = vec![0.0; self.mass.len()];
        for (old, &new) in perm.iter().enumerate() {
            mass[new] = self.mass[old];
        }
        OperatorPair {
            stiffness: self.stiffness.permuted(perm),
            mass,
            epsilon: self.epsilon,
        }
    }
}

/// Cotangent of the angle between `a` and `b`, clamped.
fn cot(a: [f64; 3], b: [f64; 3]) -> f64 {
    let c = norm(cross(a, b));
    let v = dot(a, b) / c;
    if c > 0.0 && v.is_finite() {
        v.clamp(-COT_CLAMP, COT_CLAMP)
    } else {
        f64::NAN
    }
}

/// Assemble the cotangent stiffness matrix and lumped mass of a mesh.
///
/// Off-diagonal entries are `-(cot α + cot β)/2`; the diagonal is the
/// negated off-diagonal row sum. Masses are a third of the incident face
/// areas.
pub fn assemble(mesh: &Mesh) -> Result<OperatorPair> {
    mesh.validate()?;
    let n = mesh.n_vertices();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(mesh.n_faces() * 6);
    let mut mass = vec![0.0; n];
    for (fi, f) in mesh.faces.iter().enumerate() {
        let p = f.map(|i| mesh.vertices[i]);
        for k in 0..3 {
            let (i, j, o) = (f[(k + 1) % 3], f[(k + 2) % 3], k);
            let c = cot(sub(p[(k + 1) % 3], p[o]), sub(p[(k + 2) % 3], p[o]));
            if !c.is_finite() {
                return Err(Error::NonFiniteCotangent(fi));
            }
            let w = 0.5 * c;
            triplets.push((i, j, -w));
            triplets.push((j, i, -w));
        }
        let area = mesh.face_area(f);
        for &v in f {
            mass[v] += area / 3.0;
        }
    }
    let off = SparseSym::from_triplets(n, &triplets, 1e-14);
    let stiffness = off.with_negated_row_sum_diagonal();
    Ok(OperatorPair { stiffness, mass, epsilon: DEFAULT_EPSILON })
}
