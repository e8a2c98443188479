//! Eigendecomposition-free HKS baselines: Chebyshev and backward-Euler
//! filters with Hutchinson diagonal estimation, and a landmark-graph proxy.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::spectral::log_spaced;
use super::{DescriptorMatrix, Family};
use crate::error::{Error, Result};
use crate::fields::DEFAULT_SCALES;
use crate::mesh::{EdgeGraph, Mesh};
use crate::operators::{estimate_lambda_max, Factor, OperatorPair, SolverKind};
use crate::seeding::fps_geodesic_points;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    #[default]
    Rademacher,
    /// All `n` canonical basis vectors; exact diagonal.
    Canonical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatApproxParams {
    /// Explicit times; defaults to `count` log-spaced times over the DGM scale range.
    pub times: Option<Vec<f64>>,
    pub count: usize,
    pub degree: usize,
    pub probes: usize,
    pub steps: usize,
    pub rng_seed: u64,
    pub probe_kind: ProbeKind,
}

impl Default for HeatApproxParams {
    fn default() -> Self {
        HeatApproxParams {
            times: None,
            count: 24,
            degree: 24,
            probes: 8,
            steps: 4,
            rng_seed: crate::rng::DEFAULT_SEED,
            probe_kind: ProbeKind::Rademacher,
        }
    }
}

impl HeatApproxParams {
    pub fn resolved_times(&self) -> Vec<f64> {
        self.times.clone().unwrap_or_else(|| default_approx_times(self.count))
    }
}

/// `count` times log-spaced between the smallest and largest default scale.
pub fn default_approx_times(count: usize) -> Vec<f64> {
    log_spaced(DEFAULT_SCALES[0], DEFAULT_SCALES[DEFAULT_SCALES.len() - 1], count)
}

fn probe_vectors(n: usize, params: &HeatApproxParams) -> Vec<Vec<f64>> {
    match params.probe_kind {
        ProbeKind::Canonical => (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e
            })
            .collect(),
        ProbeKind::Rademacher => {
            let mut rng = crate::rng::stream(params.rng_seed, &["hutchinson"]);
            (0..params.probes)
                .map(|_| (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect())
                .collect()
        }
    }
}

/// `diag ≈ Σ z⊙f(A)z / Σ z⊙z`, which is the plain mean for ±1 probes and
/// exact for canonical probes.
struct DiagEstimator {
    num: Vec<Vec<f64>>,
    den: Vec<f64>,
}

impl DiagEstimator {
    fn new(n: usize, n_times: usize) -> Self {
        DiagEstimator { num: vec![vec![0.0; n]; n_times], den: vec![0.0; n] }
    }

    fn add_probe(&mut self, z: &[f64]) {
        for (d, v) in self.den.iter_mut().zip(z) {
            *d += v * v;
        }
    }

    fn add(&mut self, t: usize, z: &[f64], fz: &[f64]) {
        for ((acc, a), b) in self.num[t].iter_mut().zip(z).zip(fz) {
            *acc += a * b;
        }
    }

    fn finish(self, times: &[f64], family: Family, params: serde_json::Value) -> Result<DescriptorMatrix> {
        let n = self.den.len();
        let mut data = Vec::with_capacity(n * times.len());
        for x in 0..n {
            for t in 0..times.len() {
                data.push(self.num[t][x] / self.den[x]);
            }
        }
        let prefix = family.as_str();
        let names = times.iter().map(|t| format!("{prefix}/t{t:.6e}")).collect();
        DescriptorMatrix::new(data, n, names, family, params)
    }
}

fn check_params(ops: &OperatorPair, params: &HeatApproxParams) -> Result<Vec<f64>> {
    let times = params.resolved_times();
    if times.is_empty() || times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidArgument("heat times must be non-negative".into()));
    }
    if params.probe_kind == ProbeKind::Rademacher && params.probes == 0 {
        return Err(Error::InvalidArgument("need at least one probe".into()));
    }
    if ops.n() == 0 {
        return Err(Error::EmptyMesh("no vertices".into()));
    }
    Ok(times)
}

/// Chebyshev coefficients of `e^{−tλ}` on `[0, λmax]` by interpolation at
/// `degree + 1` Chebyshev nodes.
fn cheb_coeffs(t: f64, lmax: f64, degree: usize) -> Vec<f64> {
    let nodes = degree + 1;
    let f: Vec<f64> = (0..nodes)
        .map(|j| {
            let theta = std::f64::consts::PI * (j as f64 + 0.5) / nodes as f64;
            let lambda = 0.5 * (theta.cos() + 1.0) * lmax;
            (-t * lambda).exp()
        })
        .collect();
    (0..nodes)
        .map(|k| {
            let s: f64 = (0..nodes)
                .map(|j| f[j] * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / nodes as f64).cos())
                .sum();
            let c = 2.0 * s / nodes as f64;
            if k == 0 { 0.5 * c } else { c }
        })
        .collect()
}

/// Diagonal of `e^{−tA}`, `A = M^{-1}L`, via Chebyshev filtering of probes.
pub fn hks_cheb(ops: &OperatorPair, params: &HeatApproxParams) -> Result<DescriptorMatrix> {
    let times = check_params(ops, params)?;
    let lmax = estimate_lambda_max(ops)?;
    if !(lmax.is_finite() && lmax > 0.0) {
        return Err(Error::EigenFailure(format!("spectral bound estimate {lmax}")));
    }
    let n = ops.n();
    let coeffs: Vec<Vec<f64>> = times.iter().map(|&t| cheb_coeffs(t, lmax, params.degree)).collect();
    // Ã = (2/λmax)A − I maps the spectrum into [−1, 1].
    let shifted = |v: &[f64]| -> Vec<f64> {
        let lv = ops.stiffness.matvec(v);
        (0..n).map(|i| 2.0 / lmax * lv[i] / ops.mass[i] - v[i]).collect()
    };
    let mut est = DiagEstimator::new(n, times.len());
    for z in probe_vectors(n, params) {
        est.add_probe(&z);
        let mut acc: Vec<Vec<f64>> = coeffs.iter().map(|c| z.iter().map(|v| c[0] * v).collect()).collect();
        let mut prev = z.clone();
        let mut cur = if params.degree >= 1 { shifted(&z) } else { Vec::new() };
        for k in 1..=params.degree {
            for (a, c) in acc.iter_mut().zip(&coeffs) {
                for (ai, ci) in a.iter_mut().zip(&cur) {
                    *ai += c[k] * ci;
                }
            }
            if k < params.degree {
                let next: Vec<f64> = shifted(&cur).iter().zip(&prev).map(|(a, b)| 2.0 * a - b).collect();
                prev = std::mem::replace(&mut cur, next);
            }
        }
        for (t, fz) in acc.iter().enumerate() {
            est.add(t, &z, fz);
        }
    }
    est.finish(
        &times,
        Family::HksCheb,
        json!({"times": times, "degree": params.degree, "probes": params.probes,
               "probe_kind": params.probe_kind, "rng_seed": params.rng_seed, "lambda_max": lmax}),
    )
}

/// Diagonal of `(I + (t/m)A)^{-m}` by `m` shifted solves per probe.
pub fn hks_pade(ops: &OperatorPair, params: &HeatApproxParams) -> Result<DescriptorMatrix> {
    let times = check_params(ops, params)?;
    if params.steps == 0 {
        return Err(Error::InvalidArgument("need at least one backward-Euler step".into()));
    }
    let n = ops.n();
    let probes = probe_vectors(n, params);
    let per_time: Vec<Vec<Vec<f64>>> = times
        .par_iter()
        .map(|&t| {
            let h = t / params.steps as f64;
            if h == 0.0 {
                return Ok(probes.clone());
            }
            let factor = Factor::new(ops.combine(1.0, h, 0.0), SolverKind::Auto)?;
            probes
                .iter()
                .map(|z| {
                    let mut y = z.clone();
                    for _ in 0..params.steps {
                        let my: Vec<f64> = y.iter().zip(&ops.mass).map(|(a, m)| a * m).collect();
                        y = factor.solve(&my)?;
                    }
                    Ok(y)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut est = DiagEstimator::new(n, times.len());
    for (p, z) in probes.iter().enumerate() {
        est.add_probe(z);
        for (t, ys) in per_time.iter().enumerate() {
            est.add(t, z, &ys[p]);
        }
    }
    est.finish(
        &times,
        Family::HksPade,
        json!({"times": times, "steps": params.steps, "probes": params.probes,
               "probe_kind": params.probe_kind, "rng_seed": params.rng_seed}),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MrProxyParams {
    pub landmarks: usize,
    pub count: usize,
    /// Explicit times; defaults to the shared heat-approximation times.
    pub times: Option<Vec<f64>>,
}

impl Default for MrProxyParams {
    fn default() -> Self {
        MrProxyParams { landmarks: 384, count: 24, times: None }
    }
}

fn dist_pts(mesh: &Mesh, x: usize, y: usize) -> f64 {
    crate::mesh::dist(mesh.vertices[x], mesh.vertices[y])
}

/// Coarse landmark-graph HKS interpolated back to the vertices.
///
/// Landmarks come from geodesic FPS; every vertex joins its nearest
/// landmark's cell. Adjacent cells are linked with weight
/// `boundary length / geodesic landmark distance` and the coarse operator
/// is normalized by cell area.
pub fn hks_mr_proxy(mesh: &Mesh, graph: &EdgeGraph, params: &MrProxyParams) -> Result<DescriptorMatrix> {
    let n = mesh.n_vertices();
    let nl = params.landmarks.min(n);
    if nl < 4 {
        return Err(Error::InvalidArgument(format!("need at least 4 landmarks, have {nl}")));
    }
    if params.landmarks > n {
        log::info!("mr proxy: {} landmarks requested on {n} vertices; using all vertices", params.landmarks);
    }
    graph.ensure_connected()?;
    let landmarks: Vec<usize> = if nl == n {
        (0..n).collect()
    } else {
        fps_geodesic_points(&mesh.vertices, graph, nl)?.indices
    };
    let dist: Vec<Vec<f64>> = landmarks.par_iter().map(|&l| graph.dijkstra(&[l])).collect();
    let label: Vec<usize> = (0..n)
        .map(|x| (0..nl).min_by(|&a, &b| dist[a][x].total_cmp(&dist[b][x])).expect("nl >= 4"))
        .collect();
    // Cell boundaries are unions of fine cotangent dual edges: a crossing
    // edge (x, y) contributes dual length w_xy·|xy|.
    let ops = crate::operators::assemble(mesh)?;
    let mut boundary: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for x in 0..n {
        for (y, lxy) in ops.stiffness.row(x) {
            let (a, b) = (label[x], label[y]);
            if a < b {
                *boundary.entry((a, b)).or_default() += -lxy * dist_pts(mesh, x, y);
            }
        }
    }
    let mut cell = vec![0.0; nl];
    for x in 0..n {
        cell[label[x]] += ops.mass[x];
    }
    let isq: Vec<f64> = cell.iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut lap = DMatrix::<f64>::zeros(nl, nl);
    let mut coarse_edges = 0;
    for (&(a, b), &len) in &boundary {
        if len <= 0.0 {
            continue;
        }
        coarse_edges += 1;
        let w = len / dist[a][landmarks[b]];
        lap[(a, b)] -= w;
        lap[(b, a)] -= w;
        lap[(a, a)] += w;
        lap[(b, b)] += w;
    }
    for a in 0..nl {
        for b in 0..nl {
            lap[(a, b)] *= isq[a] * isq[b];
        }
    }
    let eig = lap.symmetric_eigen();
    let mut order: Vec<usize> = (0..nl).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    if !(lambdas[1] > 1e-12 * lambdas[nl - 1]) {
        return Err(Error::Degenerate("coarse landmark graph is disconnected".into()));
    }
    let times = params.times.clone().unwrap_or_else(|| default_approx_times(params.count));
    let coarse: Vec<Vec<f64>> = (0..nl)
        .map(|a| {
            times
                .iter()
                .map(|&t| {
                    order
                        .iter()
                        .zip(&lambdas)
                        .map(|(&i, l)| (-l * t).exp() * (eig.eigenvectors[(a, i)] * isq[a]).powi(2))
                        .sum()
                })
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(n * times.len());
    for x in 0..n {
        let mut near: Vec<usize> = (0..nl).collect();
        near.sort_by(|&a, &b| dist[a][x].total_cmp(&dist[b][x]).then(a.cmp(&b)));
        near.truncate(3);
        if dist[near[0]][x] == 0.0 {
            data.extend_from_slice(&coarse[near[0]]);
            continue;
        }
        let w: Vec<f64> = near.iter().map(|&l| 1.0 / dist[l][x]).collect();
        let total: f64 = w.iter().sum();
        for t in 0..times.len() {
            data.push(near.iter().zip(&w).map(|(&l, wi)| wi * coarse[l][t]).sum::<f64>() / total);
        }
    }
    let names = times.iter().map(|t| format!("hks_mr/t{t:.6e}")).collect();
    DescriptorMatrix::new(
        data,
        n,
        names,
        Family::HksMr,
        json!({"landmarks": nl, "times": times, "coarse_edges": coarse_edges}),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{hks_at, pearson};
    use crate::fixtures::{make_fixture, FixtureKind, FixtureSpec};
    use crate::operators::{assemble, partial_eigs_with, EigenMethod};

    fn tetra_ops() -> OperatorPair {
        let m = Mesh::new(
            vec![[1., 1., 1.], [1., -1., -1.], [-1., 1., -1.], [-1., -1., 1.2]],
            vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
        );
        assemble(&m).unwrap()
    }

    /// Dense diag of g(A) where g acts on the spectrum of the symmetric form.
    fn dense_diag(ops: &OperatorPair, g: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = ops.n();
        let isq: Vec<f64> = ops.mass.iter().map(|v| 1.0 / v.sqrt()).collect();
        let s = DMatrix::from_fn(n, n, |i, j| ops.stiffness.get(i, j) * isq[i] * isq[j]);
        let eig = s.symmetric_eigen();
        let gd = DMatrix::from_diagonal(&eig.eigenvalues.map(g));
        let k = &eig.eigenvectors * gd * eig.eigenvectors.transpose();
        (0..n).map(|i| k[(i, i)]).collect()
    }

    #[test]
    fn zero_time_is_identity() {
        let ops = tetra_ops();
        let p = HeatApproxParams { times: Some(vec![0.0]), ..Default::default() };
        for d in [hks_cheb(&ops, &p).unwrap(), hks_pade(&ops, &p).unwrap()] {
            assert!(d.data.iter().all(|v| (v - 1.0).abs() < 1e-9), "{:?}", d.data);
        }
    }

    #[test]
    fn cheb_tetra_within_probe_noise() {
        let ops = tetra_ops();
        let t = 0.05;
        let p = HeatApproxParams { times: Some(vec![t]), ..Default::default() };
        let d = hks_cheb(&ops, &p).unwrap();
        let oracle = dense_diag(&ops, |l| (-t * l).exp());
        for x in 0..4 {
            let rel = (d.row(x)[0] - oracle[x]).abs() / oracle[x];
            assert!(rel <= 0.25, "vertex {x}: {} vs {}", d.row(x)[0], oracle[x]);
        }
    }

    #[test]
    fn pade_exhaustive_probes_exact() {
        let ops = tetra_ops();
        let t = 0.05;
        let p = HeatApproxParams { times: Some(vec![t]), probe_kind: ProbeKind::Canonical, ..Default::default() };
        let d = hks_pade(&ops, &p).unwrap();
        let oracle = dense_diag(&ops, |l| (1.0 + t / 4.0 * l).powi(-4));
        for x in 0..4 {
            assert!((d.row(x)[0] - oracle[x]).abs() < 1e-9);
        }
    }

    #[test]
    fn more_pade_steps_track_the_exponential() {
        let ops = assemble(&crate::fixtures::icosphere(1)).unwrap();
        let t = 0.03;
        let exact = dense_diag(&ops, |l| (-t * l).exp());
        let rms = |steps| {
            let p = HeatApproxParams { times: Some(vec![t]), steps, probe_kind: ProbeKind::Canonical, ..Default::default() };
            let d = hks_pade(&ops, &p).unwrap();
            (0..ops.n()).map(|x| (d.row(x)[0] - exact[x]).powi(2)).sum::<f64>().sqrt()
        };
        assert!(rms(4) < rms(1));
    }

    #[test]
    fn mr_proxy_identity_and_correlation() {
        let mesh = make_fixture(&FixtureSpec::new(FixtureKind::BumpySphere, 2)).unwrap().mesh;
        let graph = EdgeGraph::from_mesh(&mesh);
        let n = mesh.n_vertices();
        // All vertices are landmarks: each row is its own coarse signature.
        let full = hks_mr_proxy(&mesh, &graph, &MrProxyParams { landmarks: n, ..Default::default() }).unwrap();
        assert_eq!(full.n_rows(), n);

        let mesh = make_fixture(&FixtureSpec::new(FixtureKind::BumpySphere, 4)).unwrap().mesh;
        let graph = EdgeGraph::from_mesh(&mesh);
        let proxy = hks_mr_proxy(&mesh, &graph, &MrProxyParams::default()).unwrap();
        let ops = assemble(&mesh).unwrap();
        // e^{-λt} is below 1e-8 past the 150th pair at the smallest time.
        let basis = partial_eigs_with(&ops, 150, EigenMethod::Lanczos).unwrap();
        let times: Vec<f64> = serde_json::from_value(proxy.params["times"].clone()).unwrap();
        let truth = hks_at(&basis, &times).unwrap();
        for c in 0..times.len() {
            let r = pearson(&proxy.column(c), &truth.column(c));
            assert!(r > 0.5, "time {} correlation {r}", times[c]);
        }
    }
}
