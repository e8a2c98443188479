//! Smallest generalized eigenpairs of `L φ = λ M φ`.
//!
//! Small problems go through a dense symmetric eigensolver on
//! `M^{-1/2} L M^{-1/2}`; larger ones use shift-invert Lanczos with full
//! reorthogonalization in the `M` inner product.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::solver::{Factor, SolverKind};
use super::OperatorPair;
use crate::error::{Error, Result};

/// Above this vertex count the automatic method switches to Lanczos.
pub const DENSE_EIGEN_LIMIT: usize = 3000;

const RESIDUAL_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    #[default]
    Auto,
    Dense,
    Lanczos,
}

/// Mass-orthonormal eigenpairs in ascending eigenvalue order.
#[derive(Clone, Debug)]
pub struct EigenBasis {
    pub lambdas: Vec<f64>,
    /// `phis[i]` is the i-th eigenfunction sampled at every vertex.
    pub phis: Vec<Vec<f64>>,
}

impl EigenBasis {
    pub fn r(&self) -> usize {
        self.lambdas.len()
    }

    /// Keep the first `r` pairs.
    pub fn truncated(&self, r: usize) -> EigenBasis {
        EigenBasis {
            lambdas: self.lambdas[..r].to_vec(),
            phis: self.phis[..r].to_vec(),
        }
    }

    /// Largest `|ΦᵀMΦ − I|` entry.
    pub fn orthonormality_error(&self, mass: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.r() {
            for j in 0..=i {
                let g: f64 = (0..mass.len())
                    .map(|x| self.phis[i][x] * mass[x] * self.phis[j][x])
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// `‖Lφ − λMφ‖ / max(‖Lφ‖, |λ|‖Mφ‖, floor)` for pair `i`.
    pub fn relative_residual(&self, ops: &OperatorPair, i: usize) -> f64 {
        pair_residual(ops, self.lambdas[i], &self.phis[i])
    }
}

fn pair_residual(ops: &OperatorPair, lambda: f64, phi: &[f64]) -> f64 {
    let lphi = ops.stiffness.matvec(phi);
    let mut num = 0.0;
    let mut lnorm = 0.0;
    let mut mnorm = 0.0;
    for x in 0..phi.len() {
        let m = ops.mass[x] * phi[x];
        let r = lphi[x] - lambda * m;
        num += r * r;
        lnorm += lphi[x] * lphi[x];
        mnorm += m * m;
    }
    // The kernel pair has ‖Lφ‖ ≈ 0; measure it against the operator scale.
    let scale_floor = 1e-6 * mnorm.sqrt() * ops_scale(ops);
    num.sqrt() / lnorm.sqrt().max(lambda.abs() * mnorm.sqrt()).max(scale_floor)
}

fn ops_scale(ops: &OperatorPair) -> f64 {
    let d = ops.stiffness.diagonal();
    d.iter().zip(&ops.mass).map(|(l, m)| l / m).sum::<f64>() / d.len() as f64
}

pub fn partial_eigs(ops: &OperatorPair, r: usize) -> Result<EigenBasis> {
    partial_eigs_with(ops, r, EigenMethod::Auto)
}

pub fn partial_eigs_with(ops: &OperatorPair, r: usize, method: EigenMethod) -> Result<EigenBasis> {
    let n = ops.n();
    if r == 0 || r > n {
        return Err(Error::TooMany { requested: r, available: n });
    }
    let mut basis = match method {
        EigenMethod::Dense => dense(ops, r),
        EigenMethod::Lanczos => lanczos(ops, r),
        EigenMethod::Auto if n <= DENSE_EIGEN_LIMIT => dense(ops, r),
        EigenMethod::Auto => lanczos(ops, r),
    }?;
    for phi in &mut basis.phis {
        fix_sign(phi);
    }
    Ok(basis)
}

/// Make the largest-magnitude entry positive (first index on ties).
fn fix_sign(phi: &mut [f64]) {
    let mut best = 0;
    for (i, v) in phi.iter().enumerate() {
        if v.abs() > phi[best].abs() * (1.0 + 1e-9) {
            best = i;
        }
    }
    if phi[best] < 0.0 {
        phi.iter_mut().for_each(|v| *v = -*v);
    }
}

fn dense(ops: &OperatorPair, r: usize) -> Result<EigenBasis> {
    let n = ops.n();
    let isq: Vec<f64> = ops.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for (j, v) in ops.stiffness.row(i) {
            s[(i, j)] = v * isq[i] * isq[j];
        }
    }
    let eig = SymmetricEigen::new(s);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut lambdas = Vec::with_capacity(r);
    let mut phis = Vec::with_capacity(r);
    for &k in idx.iter().take(r) {
        lambdas.push(eig.eigenvalues[k]);
        phis.push((0..n).map(|x| eig.eigenvectors[(x, k)] * isq[x]).collect());
    }
    Ok(EigenBasis { lambdas, phis })
}

/// Block size of the Krylov iteration; covers the multiplicities seen on
/// symmetric meshes.
const BLOCK: usize = 8;

fn lanczos(ops: &OperatorPair, r: usize) -> Result<EigenBasis> {
    use rand::Rng;
    let n = ops.n();
    let mass = &ops.mass;
    let sigma = 1e-6 * ops_scale(ops);
    let factor = Factor::new(ops.combine(sigma, 1.0, 0.0), SolverKind::Auto)?;
    let mdot = |a: &[f64], b: &[f64]| -> f64 { (0..n).map(|i| a[i] * mass[i] * b[i]).sum() };
    let apply = |q: &[f64]| -> Result<Vec<f64>> {
        let mq: Vec<f64> = q.iter().zip(mass).map(|(a, b)| a * b).collect();
        factor.solve_to(&mq, 1e-8)
    };
    // M-orthonormalize `w` against `qs`; None if it collapses.
    let orthonormalize = |mut w: Vec<f64>, qs: &[Vec<f64>]| -> Option<Vec<f64>> {
        let before = mdot(&w, &w).sqrt();
        for _ in 0..2 {
            for q in qs {
                let c = mdot(&w, q);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let after = mdot(&w, &w).sqrt();
        if after <= 1e-10 * before || after == 0.0 {
            return None;
        }
        w.iter_mut().for_each(|v| *v /= after);
        Some(w)
    };

    let mut rng = crate::rng::stream(0, &["lanczos", &n.to_string()]);
    let mut m = n.min((2 * r + 40).max(r + 60));
    let mut qs: Vec<Vec<f64>> = Vec::new();
    // ws[i] = T·qs[i], filled lazily.
    let mut ws: Vec<Vec<f64>> = Vec::new();
    let mut frontier: Vec<usize> = Vec::new();
    for _ in 0..BLOCK.min(n) {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if let Some(q) = orthonormalize(v, &qs) {
            frontier.push(qs.len());
            qs.push(q);
        }
    }
    loop {
        // Grow the block Krylov basis to `m` vectors.
        while qs.len() < m && !frontier.is_empty() {
            let mut next = Vec::new();
            for &i in &frontier {
                if qs.len() >= m {
                    // Expand on the next growth round.
                    next.push(i);
                    continue;
                }
                while ws.len() <= i {
                    ws.push(apply(&qs[ws.len()])?);
                }
                if let Some(nq) = orthonormalize(ws[i].clone(), &qs) {
                    next.push(qs.len());
                    qs.push(nq);
                }
            }
            frontier = next;
        }
        while ws.len() < qs.len() {
            ws.push(apply(&qs[ws.len()])?);
        }
        let k = qs.len();
        let mut h = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            for j in 0..=i {
                let v = 0.5 * (mdot(&qs[i], &ws[j]) + mdot(&qs[j], &ws[i]));
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(h);
        let mut idx: Vec<usize> = (0..k).collect();
        // Largest θ = 1/(λ+σ) first.
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let take = r.min(k);
        let mut lambdas = Vec::with_capacity(take);
        let mut phis = Vec::with_capacity(take);
        for &c in idx.iter().take(take) {
            let theta = eig.eigenvalues[c];
            let mut phi = vec![0.0; n];
            for (row, q) in qs.iter().enumerate() {
                let y = eig.eigenvectors[(row, c)];
                for (p, qi) in phi.iter_mut().zip(q) {
                    *p += y * qi;
                }
            }
            let nrm = mdot(&phi, &phi).sqrt();
            phi.iter_mut().for_each(|v| *v /= nrm);
            lambdas.push((1.0 / theta - sigma).max(0.0));
            phis.push(phi);
        }
        let converged = take == r
            && (0..r).all(|i| pair_residual(ops, lambdas[i], &phis[i]) <= RESIDUAL_TOL);
        if converged {
            return Ok(EigenBasis { lambdas, phis });
        }
        if m >= n || frontier.is_empty() {
            let worst = (0..take)
                .map(|i| pair_residual(ops, lambdas[i], &phis[i]))
                .fold(0.0, f64::max);
            return Err(Error::EigenFailure(format!(
                "Lanczos did not converge: worst residual {worst:e} with {k} vectors"
            )));
        }
        m = n.min(2 * m);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::icosphere;
    use crate::operators::assemble;

    #[test]
    fn kernel_pair_is_constant() {
        let ops = assemble(&icosphere(2)).unwrap();
        let b = partial_eigs(&ops, 8).unwrap();
        assert!(b.lambdas[0].abs() <= 1e-6);
        let phi = &b.phis[0];
        let mean = phi.iter().sum::<f64>() / phi.len() as f64;
        assert!(phi.iter().all(|v| ((v - mean) / mean).abs() < 1e-5));
        assert!(b.orthonormality_error(&ops.mass) < 1e-7);
        for i in 0..b.r() {
            assert!(b.relative_residual(&ops, i) <= 1e-7);
        }
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let ops = assemble(&icosphere(3)).unwrap();
        let d = partial_eigs_with(&ops, 20, EigenMethod::Dense).unwrap();
        let l = partial_eigs_with(&ops, 20, EigenMethod::Lanczos).unwrap();
        for i in 1..20 {
            let rel = (d.lambdas[i] - l.lambdas[i]).abs() / d.lambdas[i];
            assert!(rel < 1e-6, "pair {i}: {} vs {}", d.lambdas[i], l.lambdas[i]);
        }
        assert!(l.orthonormality_error(&ops.mass) < 1e-7);
    }

    #[test]
    fn too_many_pairs_rejected() {
        let ops = assemble(&icosphere(0)).unwrap();
        assert!(partial_eigs(&ops, 13).is_err());
    }
}
