//! Symmetric positive definite solves. The direct path is an envelope
//! (profile) Cholesky factorization under reverse Cuthill–McKee ordering; the
//! iterative path is Jacobi-preconditioned conjugate gradients. Both are
//! immutable after construction and may be shared across threads.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{OperatorPair, SparseSym};
use crate::error::{Error, Result};

/// Relative residual target for every solve.
pub const CG_TOL: f64 = 1e-10;

/// Profile entries above this switch the automatic strategy to CG.
const MAX_PROFILE: usize = 400_000_000 / 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Direct when the envelope fits in memory, CG otherwise.
    #[default]
    Auto,
    Direct,
    Cg,
}

/// A reusable solver for one SPD matrix.
#[derive(Clone, Debug)]
pub enum Factor {
    Direct { matrix: SparseSym, chol: EnvelopeCholesky },
    Cg { matrix: SparseSym, inv_diag: Vec<f64> },
}

impl Factor {
    pub fn new(matrix: SparseSym, kind: SolverKind) -> Result<Self> {
        let direct = match kind {
            SolverKind::Direct => true,
            SolverKind::Cg => false,
            SolverKind::Auto => envelope_size(&matrix, &rcm_order(&matrix)) <= MAX_PROFILE,
        };
        if direct {
            let chol = EnvelopeCholesky::factor(&matrix)?;
            Ok(Factor::Direct { matrix, chol })
        } else {
            let inv_diag = matrix
                .diagonal()
                .iter()
                .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
                .collect();
            Ok(Factor::Cg { matrix, inv_diag })
        }
    }

    pub fn matrix(&self) -> &SparseSym {
        match self {
            Factor::Direct { matrix, .. } | Factor::Cg { matrix, .. } => matrix,
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_to(b, CG_TOL)
    }

    /// Solve to relative residual `tol`, refining a direct solution up to
    /// three times.
    pub fn solve_to(&self, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        match self {
            Factor::Direct { matrix, chol } => {
                let mut x = chol.solve(b);
                let bn = norm2(b).max(f64::MIN_POSITIVE);
                let mut r = residual(matrix, &x, b);
                let mut rel = norm2(&r) / bn;
                let mut rounds = 0;
                while rel > tol && rounds < 3 {
                    let dx = chol.solve(&r);
                    for (xi, di) in x.iter_mut().zip(&dx) {
                        *xi += di;
                    }
                    r = residual(matrix, &x, b);
                    rel = norm2(&r) / bn;
                    rounds += 1;
                }
                if rel > tol {
                    return Err(Error::SolverBreakdown { residual: rel, iterations: rounds });
                }
                Ok(x)
            }
            Factor::Cg { matrix, inv_diag } => pcg(matrix, inv_diag, b, tol),
        }
    }
}

/// Solver for `(M + tL + εI) u = b` at a fixed scale `t`.
#[derive(Clone, Debug)]
pub struct ShiftedSolver {
    pub t: f64,
    factor: Factor,
}

impl ShiftedSolver {
    pub fn new(ops: &OperatorPair, t: f64, kind: SolverKind) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("diffusion scale {t} must be positive")));
        }
        Ok(ShiftedSolver { t, factor: Factor::new(ops.shifted(t), kind)? })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("right-hand side is not finite".into()));
        }
        self.factor.solve(b)
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.factor, Factor::Direct { .. })
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn residual(a: &SparseSym, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.matvec(x);
    b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
}

fn pcg(a: &SparseSym, inv_diag: &[f64], b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = a.n;
    let bn = norm2(b);
    let mut x = vec![0.0; n];
    if bn == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    let max_iter = 10 * n.max(1);
    for it in 0..max_iter {
        a.matvec_into(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::SolverBreakdown { residual: norm2(&r) / bn, iterations: it });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm2(&r) / bn <= tol {
            // Confirm with a true residual; recurrences drift.
            let rel = norm2(&residual(a, &x, b)) / bn;
            if rel <= tol {
                return Ok(x);
            }
            r = residual(a, &x, b);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverBreakdown {
        residual: norm2(&residual(a, &x, b)) / bn,
        iterations: max_iter,
    })
}

/// Reverse Cuthill–McKee ordering; `order[new] = old`.
pub(crate) fn rcm_order(a: &SparseSym) -> Vec<usize> {
    let n = a.n;
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).map(|(j, _)| j).filter(|&j| j != i).collect())
        .collect();
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs_last = |start: usize, visited: &[bool]| -> usize {
        let mut seen = visited.to_vec();
        let mut q = VecDeque::from([start]);
        seen[start] = true;
        let mut last = start;
        while let Some(v) = q.pop_front() {
            last = v;
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    q.push_back(u);
                }
            }
        }
        last
    };
    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (deg[i], i))
            .unwrap();
        // Two sweeps towards a pseudo-peripheral start.
        let start = bfs_last(bfs_last(seed, &visited), &visited);
        let mut q = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = q.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nb.sort_by_key(|&u| (deg[u], u));
            for u in nb {
                visited[u] = true;
                q.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

fn envelope_size(a: &SparseSym, order: &[usize]) -> usize {
    let mut inv = vec![0; a.n];
    for (new, &old) in order.iter().enumerate() {
        inv[old] = new;
    }
    (0..a.n)
        .map(|new| {
            let old = order[new];
            let first = a.row(old).map(|(j, _)| inv[j]).min().unwrap_or(new).min(new);
            new - first + 1
        })
        .sum()
}

/// Row-envelope Cholesky factor `P A Pᵀ = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    n: usize,
    order: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &SparseSym) -> Result<Self> {
        let n = a.n;
        let order = rcm_order(a);
        let mut inv = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            inv[old] = new;
        }
        let mut first = vec![0; n];
        for new in 0..n {
            first[new] = a.row(order[new]).map(|(j, _)| inv[j]).min().unwrap_or(new).min(new);
        }
        let mut start = vec![0; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; start[n]];
        for i in 0..n {
            for (j, v) in a.row(order[i]) {
                let jj = inv[j];
                if jj <= i {
                    data[start[i] + jj - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let (fi, si) = (first[i], start[i]);
            for j in fi..i {
                let (fj, sj) = (first[j], start[j]);
                let k0 = fi.max(fj);
                let mut s = data[si + j - fi];
                for k in k0..j {
                    s -= data[si + k - fi] * data[sj + k - fj];
                }
                data[si + j - fi] = s / data[sj + j - fj];
            }
            let mut d = data[si + i - fi];
            for k in fi..i {
                let l = data[si + k - fi];
                d -= l * l;
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite(order[i]));
            }
            data[si + i - fi] = d.sqrt();
        }
        Ok(EnvelopeCholesky { n, order, first, start, data })
    }

    pub fn envelope_len(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.order.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let (fi, si) = (self.first[i], self.start[i]);
            let mut s = y[i];
            for k in fi..i {
                s -= self.data[si + k - fi] * y[k];
            }
            y[i] = s / self.data[si + i - fi];
        }
        for i in (0..n).rev() {
            let (fi, si) = (self.first[i], self.start[i]);
            let xi = y[i] / self.data[si + i - fi];
            y[i] = xi;
            for k in fi..i {
                y[k] -= self.data[si + k - fi] * xi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.order.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Upper estimate of the largest eigenvalue of `M⁻¹L` by power iteration,
/// inflated by 5% and capped at the Gershgorin bound.
pub fn estimate_lambda_max(ops: &OperatorPair) -> Result<f64> {
    let n = ops.n();
    let l = &ops.stiffness;
    let gersh = (0..n)
        .map(|i| l.row(i).map(|(_, v)| v.abs()).sum::<f64>() / ops.mass[i])
        .fold(0.0, f64::max);
    if !(gersh > 0.0) || !gersh.is_finite() {
        return Err(Error::EigenFailure("could not bound spectrum of M^-1 L".into()));
    }
    // Symmetric form S = M^{-1/2} L M^{-1/2}, deterministic start vector.
    let sq: Vec<f64> = ops.mass.iter().map(|m| m.sqrt()).collect();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0).collect();
    let mut lambda = 0.0;
    for _ in 0..200 {
        let nx = norm2(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let w: Vec<f64> = x.iter().zip(&sq).map(|(v, s)| v / s).collect();
        let lw = l.matvec(&w);
        let y: Vec<f64> = lw.iter().zip(&sq).map(|(v, s)| v / s).collect();
        let new = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        x = y;
        if (new - lambda).abs() <= 1e-6 * new.abs() {
            lambda = new;
            break;
        }
        lambda = new;
    }
    Ok((1.05 * lambda).min(gersh))
}
