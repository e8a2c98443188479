//! Seed-conditioned vertex fields.
//!
//! The heat mode solves `(M + tL + εI) u = e_s` per seed and scale and maps
//! the signed response to a distance-like field through a clipped, max-
//! normalized negative log followed by min-shift and 95th-percentile
//! scaling. The graph-geodesic mode applies `log(1 + d/t)` to Dijkstra
//! distances with the same normalization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::EdgeGraph;
use crate::operators::{OperatorPair, ShiftedSolver, SolverKind};
use crate::seeding::SeedSet;

/// Default diffusion scales.
pub const DEFAULT_SCALES: [f64; 4] = [0.01, 0.03, 0.07, 0.15];

const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    #[default]
    Heat,
    GraphGeodesic,
}

#[derive(Clone, Debug)]
pub struct FieldStack {
    /// `phi[scale][seed][vertex]`
    pub phi: Vec<Vec<Vec<f64>>>,
    /// Signed responses before clipping, same layout; heat mode only.
    pub raw: Option<Vec<Vec<Vec<f64>>>>,
    pub scales: Vec<f64>,
    pub steps: usize,
    pub mode: FieldMode,
    /// Number of (scale, seed) fields whose clipped response was all zero.
    pub degenerate: usize,
}

impl FieldStack {
    pub fn n_scales(&self) -> usize {
        self.phi.len()
    }

    pub fn n_seeds(&self) -> usize {
        self.phi.first().map_or(0, Vec::len)
    }

    pub fn n_vertices(&self) -> usize {
        self.phi.first().and_then(|s| s.first()).map_or(0, Vec::len)
    }

    /// Field values over all seeds at one vertex and scale.
    pub fn samples(&self, scale: usize, vertex: usize) -> Vec<f64> {
        self.phi[scale].iter().map(|f| f[vertex]).collect()
    }
}

/// Empirical percentile (`q` in [0, 100]) with linear interpolation between
/// order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Min-shift then divide by the percentile of the shifted values.
fn normalize_spread(psi: &[f64], q: f64) -> Vec<f64> {
    let min = psi.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = psi.iter().map(|v| v - min).collect();
    let scale = percentile(&shifted, q) + LOG_FLOOR;
    shifted.into_iter().map(|v| v / scale).collect()
}

/// Spread statistic `q(ψ − min ψ)` of the negative-log response.
pub fn proxy_spread(u: &[f64], q: f64) -> f64 {
    let psi = neg_log_response(u);
    let min = psi.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = psi.iter().map(|v| v - min).collect();
    percentile(&shifted, q)
}

fn neg_log_response(u: &[f64]) -> Vec<f64> {
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    u.iter()
        .map(|&x| -(x.max(0.0) / (max + LOG_FLOOR) + LOG_FLOOR).ln())
        .collect()
}

/// Convert a signed response into a distance-like field. The flag is set
/// when nothing survives clipping, in which case the field is all zero.
pub fn proxy_transform(u: &[f64], q: f64) -> Result<(Vec<f64>, bool)> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("response is not finite".into()));
    }
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Ok((vec![0.0; u.len()], true));
    }
    Ok((normalize_spread(&neg_log_response(u), q), false))
}

/// Implicit heat response from `seed` at scale `t`, split into `steps`
/// backward-Euler steps of size `t/steps`.
pub fn heat_response(ops: &OperatorPair, seed: usize, t: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let solver = ShiftedSolver::new(ops, t / steps as f64, SolverKind::Auto)?;
    heat_response_with(&solver, ops, seed, steps)
}

/// Same as [`heat_response`] against a prebuilt solver for step size `t/steps`.
pub fn heat_response_with(solver: &ShiftedSolver, ops: &OperatorPair, seed: usize, steps: usize) -> Result<Vec<f64>> {
    let n = ops.n();
    if seed >= n {
        return Err(Error::TooMany { requested: seed + 1, available: n });
    }
    let mut b = vec![0.0; n];
    b[seed] = 1.0;
    let mut u = solver.solve(&b)?;
    for _ in 1..steps {
        let mu: Vec<f64> = u.iter().zip(&ops.mass).map(|(a, m)| a * m).collect();
        u = solver.solve(&mu)?;
    }
    Ok(u)
}

/// Graph-geodesic field `log(1 + d/t)` with the proxy normalization.
pub fn graph_geodesic_field(graph: &EdgeGraph, seed: usize, t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("scale {t} must be positive")));
    }
    let d = graph.dijkstra(&[seed]);
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Disconnected { components: graph.component_count() });
    }
    let psi: Vec<f64> = d.iter().map(|&x| (1.0 + x / t).ln()).collect();
    Ok(normalize_spread(&psi, 95.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldParams {
    pub mode: FieldMode,
    pub scales: Vec<f64>,
    pub steps: usize,
    pub keep_raw: bool,
    pub solver: SolverKind,
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams {
            mode: FieldMode::Heat,
            scales: DEFAULT_SCALES.to_vec(),
            steps: 1,
            keep_raw: false,
            solver: SolverKind::Auto,
        }
    }
}

/// Build every (scale, seed) field. One solver per scale is shared by all
/// seeds; seeds run in parallel and land in their own slots.
pub fn field_stack(
    ops: &OperatorPair,
    graph: &EdgeGraph,
    seeds: &SeedSet,
    params: &FieldParams,
) -> Result<FieldStack> {
    if params.scales.is_empty() || params.steps == 0 {
        return Err(Error::InvalidArgument("need at least one scale and one step".into()));
    }
    let mut phi = Vec::with_capacity(params.scales.len());
    let mut raw = params.keep_raw.then(Vec::new);
    let mut degenerate = 0;
    for &t in &params.scales {
        match params.mode {
            FieldMode::Heat => {
                let solver = ShiftedSolver::new(ops, t / params.steps as f64, params.solver)?;
                let out: Vec<(Vec<f64>, Vec<f64>, bool)> = seeds
                    .indices
                    .par_iter()
                    .map(|&s| {
                        let u = heat_response_with(&solver, ops, s, params.steps)?;
                        let (p, flag) = proxy_transform(&u, 95.0)?;
                        Ok((p, u, flag))
                    })
                    .collect::<Result<_>>()?;
                let mut scale_phi = Vec::with_capacity(out.len());
                let mut scale_raw = Vec::with_capacity(out.len());
                for (p, u, flag) in out {
                    if flag {
                        degenerate += 1;
                    }
                    scale_phi.push(p);
                    scale_raw.push(u);
                }
                phi.push(scale_phi);
                if let Some(r) = raw.as_mut() {
                    r.push(scale_raw);
                }
            }
            FieldMode::GraphGeodesic => {
                let scale_phi: Vec<Vec<f64>> = seeds
                    .indices
                    .par_iter()
                    .map(|&s| graph_geodesic_field(graph, s, t))
                    .collect::<Result<_>>()?;
                phi.push(scale_phi);
            }
        }
    }
    if degenerate > 0 {
        log::warn!("{degenerate} seed fields were entirely clipped");
    }
    let raw = if params.mode == FieldMode::Heat { raw } else { None };
    Ok(FieldStack {
        phi,
        raw,
        scales: params.scales.clone(),
        steps: params.steps,
        mode: params.mode,
        degenerate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RawResponseStats {
    pub mean_negative_fraction: f64,
    pub max_negative_fraction: f64,
    pub min_response: f64,
    pub max_response: f64,
}

/// Sign statistics of the retained raw responses. The mean fraction is over
/// all (scale, seed, vertex) samples; the max is over individual fields.
pub fn raw_response_stats(stack: &FieldStack) -> Result<RawResponseStats> {
    let raw = stack.raw.as_ref().ok_or(Error::RawNotRetained)?;
    let mut neg = 0usize;
    let mut total = 0usize;
    let mut max_frac: f64 = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for field in raw.iter().flatten() {
        let c = field.iter().filter(|&&v| v < 0.0).count();
        neg += c;
        total += field.len();
        if !field.is_empty() {
            max_frac = max_frac.max(c as f64 / field.len() as f64);
        }
        for &v in field {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if total == 0 {
        return Err(Error::Degenerate("no raw samples".into()));
    }
    Ok(RawResponseStats {
        mean_negative_fraction: neg as f64 / total as f64,
        max_negative_fraction: max_frac,
        min_response: lo,
        max_response: hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::icosphere;
    use crate::mesh::Mesh;
    use crate::operators::assemble;
    use nalgebra::{DMatrix, DVector};

    fn tetra() -> Mesh {
        let m = Mesh::new(
            vec![[0., 0., 0.], [1., 0., 0.], [0., 1., 0.], [0., 0., 1.]],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        );
        crate::mesh::preprocess(&m).unwrap()
    }

    #[test]
    fn percentile_matches_linear_rule() {
        assert_eq!(percentile(&[0.0, 1.0, 2.0, 3.0, 4.0], 50.0), 2.0);
        // pos = 0.95 * 2 = 1.9 → 1 + 0.9 * (2 - 1)
        assert!((percentile(&[0.0, 1.0, 2.0], 95.0) - 1.9).abs() < 1e-15);
    }

    #[test]
    fn mass_sum_identity_single_step() {
        let ops = assemble(&icosphere(2)).unwrap();
        let u = heat_response(&ops, 5, 0.03, 1).unwrap();
        let s: f64 = u.iter().zip(&ops.mass).map(|(a, m)| a * m + ops.epsilon * a).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tetra_matches_dense_solve() {
        let m = tetra();
        let ops = assemble(&m).unwrap();
        let a: DMatrix<f64> = ops.shifted(0.03).to_dense();
        for s in 0..4 {
            let mut b = DVector::zeros(4);
            b[s] = 1.0;
            let oracle = a.clone().lu().solve(&b).unwrap();
            let u = heat_response(&ops, s, 0.03, 1).unwrap();
            for i in 0..4 {
                assert!((u[i] - oracle[i]).abs() < 1e-10 * oracle.amax());
            }
        }
    }

    #[test]
    fn two_steps_smooth_more() {
        let ops = assemble(&icosphere(3)).unwrap();
        let one = heat_response(&ops, 0, 0.01, 1).unwrap();
        let two = heat_response(&ops, 0, 0.01, 2).unwrap();
        let peak = |u: &[f64]| u.iter().map(|v| v.abs()).fold(0.0, f64::max);
        // Half-maximum support: the one-step resolvent has exponential tails,
        // so far-field thresholds like 1e-6·max favor it instead.
        let support = |u: &[f64]| {
            let m = peak(u);
            u.iter().filter(|&&v| v > 0.5 * m).count()
        };
        assert!(peak(&two) < peak(&one));
        assert!(support(&two) > support(&one));
    }

    #[test]
    fn proxy_basic_properties() {
        let u = [0.5, 2.0, -1.0, 1.0, 0.1];
        let (phi, flag) = proxy_transform(&u, 95.0).unwrap();
        assert!(!flag);
        assert!(phi[1].abs() < 1e-9);
        assert!(phi.iter().all(|&v| v >= 0.0));
        let scaled: Vec<f64> = u.iter().map(|v| v * 7.5).collect();
        let (phi2, _) = proxy_transform(&scaled, 95.0).unwrap();
        for (a, b) in phi.iter().zip(&phi2) {
            assert!((a - b).abs() < 1e-9);
        }
        let (c, _) = proxy_transform(&[3.0; 6], 95.0).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
        let (z, flag) = proxy_transform(&[0.0, -1.0, 0.0], 95.0).unwrap();
        assert!(flag && z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clipped_entries_share_the_ceiling() {
        let u = [1.0, -0.5, -2.0, 0.25];
        let psi = neg_log_response(&u);
        let ceiling = -(LOG_FLOOR).ln();
        assert!((psi[1] - ceiling).abs() < 1e-12);
        assert_eq!(psi[1], psi[2]);
    }

    #[test]
    fn geodesic_field_on_path() {
        let g = EdgeGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let phi = graph_geodesic_field(&g, 0, 1.0).unwrap();
        let psi = [0.0, 2f64.ln(), 3f64.ln()];
        let q = percentile(&psi, 95.0);
        for i in 0..3 {
            assert!((phi[i] - psi[i] / (q + LOG_FLOOR)).abs() < 1e-12);
        }
        let bad = EdgeGraph::from_edges(3, &[(0, 1, 1.0)]);
        assert!(graph_geodesic_field(&bad, 0, 1.0).is_err());
    }

    #[test]
    fn raw_stats_counts() {
        let stack = FieldStack {
            phi: vec![vec![vec![0.0, 0.0]]],
            raw: Some(vec![vec![vec![-1.0, 1.0]]]),
            scales: vec![0.1],
            steps: 1,
            mode: FieldMode::Heat,
            degenerate: 0,
        };
        let s = raw_response_stats(&stack).unwrap();
        assert_eq!(s.mean_negative_fraction, 0.5);
        assert_eq!(s.min_response, -1.0);
        let pos = FieldStack { raw: Some(vec![vec![vec![1.0, 2.0]]]), ..stack.clone() };
        assert_eq!(raw_response_stats(&pos).unwrap().mean_negative_fraction, 0.0);
        let none = FieldStack { raw: None, ..stack };
        assert!(matches!(raw_response_stats(&none), Err(Error::RawNotRetained)));
    }
}
