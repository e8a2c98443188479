//! Measurement instruments for the audit: seed-response entropy, moment
//! compression, cross-shape alignability, spectral compressibility, 0D
//! persistence, left/right side probing, nearest-neighbor correspondence and
//! seed synchronization.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::descriptors::{moments, DescriptorMatrix};
use crate::error::{Error, Result};
use crate::fields::{percentile, FieldStack};
use crate::mesh::{EdgeGraph, Mesh};
use crate::operators::EigenBasis;
use crate::report::Table;
use crate::seeding::{double_sweep_endpoint, SeedSet};

pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_RIDGE: f64 = 1e-3;
pub const RIDGE_SWEEP: [f64; 3] = [1e-5, 1e-3, 1e-1];
const SIDE_BAND: f64 = 0.05;
const LOGISTIC_L2: f64 = 1e-4;
const LOGISTIC_EPOCHS: usize = 500;
const LOGISTIC_RATE: f64 = 0.5;

/// Names accepted by the CLI `diagnose` subcommand.
pub const DIAGNOSTICS: [&str; 10] = [
    "soft_voronoi",
    "moment_compression",
    "csas",
    "spectral_compressibility",
    "persistence",
    "symmetry_side",
    "nn_correspondence",
    "synchronized_seeds",
    "seed_permutation",
    "heat_response",
];

pub fn check_diagnostic(name: &str) -> Result<()> {
    if DIAGNOSTICS.contains(&name) {
        Ok(())
    } else {
        Err(Error::UnknownDiagnostic { name: name.to_string(), available: DIAGNOSTICS.join(", ") })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub name: String,
    pub table: Table,
    pub meta: serde_json::Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftVoronoi {
    pub scale: f64,
    pub entropy: f64,
    pub margin: f64,
}

/// Softmax over seeds of `−φ/τ` at each vertex; vertex means of normalized
/// entropy and top-two margin per scale.
pub fn soft_voronoi_stats(stack: &FieldStack, tau: f64) -> Result<Vec<SoftVoronoi>> {
    let k = stack.n_seeds();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("soft Voronoi needs ≥2 seeds, got {k}")));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let n = stack.n_vertices();
    let logk = (k as f64).ln();
    let mut out = Vec::new();
    for (s, &scale) in stack.scales.iter().enumerate() {
        let (mut ent, mut mar) = (0.0, 0.0);
        let mut p = vec![0.0; k];
        for x in 0..n {
            let phi = stack.samples(s, x);
            let lo = phi.iter().copied().fold(f64::INFINITY, f64::min);
            for (pi, v) in p.iter_mut().zip(&phi) {
                *pi = (-(v - lo) / tau).exp();
            }
            let z: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= z);
            ent += -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>() / logk;
            let (mut a, mut b) = (0.0, 0.0);
            for &v in &p {
                if v > a {
                    b = a;
                    a = v;
                } else if v > b {
                    b = v;
                }
            }
            mar += a - b;
        }
        out.push(SoftVoronoi { scale, entropy: ent / n as f64, margin: mar / n as f64 });
    }
    Ok(out)
}

/// Ridge regression with an unpenalized intercept on standardized features.
struct Ridge {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `(d + 1) × outputs`, intercept last.
    weights: DMatrix<f64>,
}

impl Ridge {
    fn fit(x: &[Vec<f64>], y: &[Vec<f64>], alpha: f64) -> Result<Ridge> {
        let (n, d) = (x.len(), x[0].len());
        let o = y[0].len();
        let mut mean = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for r in x {
            for j in 0..d {
                mean[j] += r[j] / n as f64;
            }
        }
        for r in x {
            for j in 0..d {
                scale[j] += (r[j] - mean[j]).powi(2) / n as f64;
            }
        }
        let scale: Vec<f64> = scale.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        let xs = DMatrix::from_fn(n, d, |i, j| (x[i][j] - mean[j]) / scale[j]);
        let ymean: Vec<f64> = (0..o).map(|j| y.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let yc = DMatrix::from_fn(n, o, |i, j| y[i][j] - ymean[j]);
        let mut gram = xs.transpose() * &xs;
        for j in 0..d {
            gram[(j, j)] += alpha;
        }
        let rhs = xs.transpose() * yc;
        let sol = gram
            .cholesky()
            .ok_or_else(|| Error::Degenerate("ridge system is not positive definite".into()))?
            .solve(&rhs);
        let mut weights = DMatrix::zeros(d + 1, o);
        weights.view_mut((0, 0), (d, o)).copy_from(&sol);
        for j in 0..o {
            weights[(d, j)] = ymean[j];
        }
        Ok(Ridge { mean, scale, weights })
    }

    fn predict(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        (0..self.weights.ncols())
            .map(|j| {
                self.weights[(d, j)]
                    + (0..d).map(|i| (x[i] - self.mean[i]) / self.scale[i] * self.weights[(i, j)]).sum::<f64>()
            })
            .collect()
    }
}

/// Pooled held-out R² (`1 − SSE/SST` over all outputs) and relative residual
/// `‖pred − y‖ / ‖y − ȳ‖`.
fn held_out_fit(x: &[Vec<f64>], y: &[Vec<f64>], alpha: f64, rng_seed: u64, tag: &str) -> Result<(f64, f64)> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut crate::rng::stream(rng_seed, &["split80", tag]));
    let n_train = ((0.8 * n as f64).round() as usize).clamp(1, n - 1);
    let (train, test) = idx.split_at(n_train);
    let pick = |ids: &[usize], m: &[Vec<f64>]| ids.iter().map(|&i| m[i].clone()).collect::<Vec<_>>();
    let model = Ridge::fit(&pick(train, x), &pick(train, y), alpha)?;
    let yt = pick(test, y);
    let o = y[0].len();
    let ymean: Vec<f64> = (0..o).map(|j| yt.iter().map(|r| r[j]).sum::<f64>() / yt.len() as f64).collect();
    let (mut sse, mut sst) = (0.0, 0.0);
    for (&i, target) in test.iter().zip(&yt) {
        let p = model.predict(&x[i]);
        for j in 0..o {
            sse += (p[j] - target[j]).powi(2);
            sst += (target[j] - ymean[j]).powi(2);
        }
    }
    if sst <= 0.0 {
        return Ok(if sse < 1e-24 { (1.0, 0.0) } else { (0.0, f64::INFINITY) });
    }
    Ok((1.0 - sse / sst, (sse / sst).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCompression {
    pub scale: f64,
    pub pca6_explained: f64,
    pub ridge_r2: f64,
}

/// Vertex sample, all vertices when the mesh is smaller than `sample`.
fn sample_vertices(n: usize, sample: usize, rng_seed: u64, tag: &str) -> Vec<usize> {
    if sample >= n {
        return (0..n).collect();
    }
    let mut rng = crate::rng::stream(rng_seed, &["vertex_sample", tag]);
    let mut v = rand::seq::index::sample(&mut rng, n, sample).into_vec();
    v.sort_unstable();
    v
}

/// How much of each vertex's sorted seed-response vector survives the six
/// moment channels.
pub fn moment_compression(stack: &FieldStack, sample: usize, rng_seed: u64, ridge: f64) -> Result<Vec<MomentCompression>> {
    if sample < 50 {
        return Err(Error::InvalidArgument(format!("moment compression needs a sample of ≥50 vertices, got {sample}")));
    }
    let verts = sample_vertices(stack.n_vertices(), sample, rng_seed, "moment_compression");
    if verts.len() < 50 {
        return Err(Error::InvalidArgument(format!("only {} vertices available", verts.len())));
    }
    let k = stack.n_seeds();
    let mut out = Vec::new();
    for (s, &scale) in stack.scales.iter().enumerate() {
        let sorted: Vec<Vec<f64>> = verts
            .iter()
            .map(|&x| {
                let mut v = stack.samples(s, x);
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        let feats: Vec<Vec<f64>> = sorted.iter().map(|v| moments(v).map(|m| m.to_array().to_vec())).collect::<Result<_>>()?;
        let m = sorted.len() as f64;
        let mean: Vec<f64> = (0..k).map(|j| sorted.iter().map(|r| r[j]).sum::<f64>() / m).collect();
        let cov = DMatrix::from_fn(k, k, |a, b| sorted.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / m);
        let total = cov.trace();
        let pca6 = if total <= 1e-300 {
            1.0
        } else {
            let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            (ev.iter().take(6).sum::<f64>() / total).min(1.0)
        };
        let (r2, _) = held_out_fit(&feats, &sorted, ridge, rng_seed, &format!("moments{s}"))?;
        out.push(MomentCompression { scale, pca6_explained: pca6, ridge_r2: r2 });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Csas {
    /// Mean cosine of corresponding rows; NaN when dimensions differ.
    pub direct_cosine: f64,
    pub r2: f64,
    pub relative_residual: f64,
    pub nn_accuracy: f64,
    pub samples: usize,
}

fn nearest_row(query: &[f64], target: &DescriptorMatrix) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, r) in target.rows().enumerate() {
        let d: f64 = r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Cross-shape alignability: ridge map from source rows to corresponding
/// target rows. `correspondence[i]` is the target index of source vertex `i`.
pub fn csas(
    source: &DescriptorMatrix,
    target: &DescriptorMatrix,
    correspondence: &[usize],
    sample: usize,
    rng_seed: u64,
    ridge: f64,
) -> Result<Csas> {
    if correspondence.len() != source.n_rows() || correspondence.iter().any(|&j| j >= target.n_rows()) {
        return Err(Error::ShapeMismatch("correspondence does not cover the source vertices".into()));
    }
    let verts = sample_vertices(source.n_rows(), sample, rng_seed, "csas");
    if verts.len() < 5 {
        return Err(Error::InvalidArgument("CSAS needs at least 5 corresponding vertices".into()));
    }
    let x: Vec<Vec<f64>> = verts.iter().map(|&i| source.row(i).to_vec()).collect();
    let y: Vec<Vec<f64>> = verts.iter().map(|&i| target.row(correspondence[i]).to_vec()).collect();
    let o = y[0].len();
    let ymean: Vec<f64> = (0..o).map(|j| y.iter().map(|r| r[j]).sum::<f64>() / y.len() as f64).collect();
    if y.iter().all(|r| r.iter().zip(&ymean).all(|(a, b)| (a - b).abs() <= 1e-300)) {
        return Err(Error::Degenerate("target descriptors have no variance".into()));
    }
    let direct_cosine = if source.dim() == target.dim() {
        x.iter().zip(&y).map(|(a, b)| crate::evaluation::cosine(a, b)).sum::<f64>() / x.len() as f64
    } else {
        f64::NAN
    };
    let (r2, relative_residual) = held_out_fit(&x, &y, ridge, rng_seed, "csas")?;
    let hits = if source.dim() == target.dim() {
        verts.iter().filter(|&&i| nearest_row(source.row(i), target) == correspondence[i]).count()
    } else {
        0
    };
    Ok(Csas {
        direct_cosine,
        r2,
        relative_residual,
        nn_accuracy: hits as f64 / verts.len() as f64,
        samples: verts.len(),
    })
}

/// Mean over channels of the mass-weighted energy retained by the first `k`
/// eigenfunctions, per `k`.
pub fn spectral_compressibility(
    descriptors: &DescriptorMatrix,
    basis: &EigenBasis,
    mass: &[f64],
    k_list: &[usize],
) -> Result<Vec<(usize, f64)>> {
    let kmax = k_list.iter().copied().max().unwrap_or(0);
    if basis.r() < kmax {
        return Err(Error::TooMany { requested: kmax, available: basis.r() });
    }
    let n = descriptors.n_rows();
    if mass.len() != n || basis.phis.first().map_or(0, Vec::len) != n {
        return Err(Error::ShapeMismatch("descriptor, mass and basis sizes differ".into()));
    }
    let total_mass: f64 = mass.iter().sum();
    let mut sums = vec![0.0; k_list.len()];
    let mut used = 0usize;
    for c in 0..descriptors.dim() {
        let f = descriptors.column(c);
        let mean = f.iter().zip(mass).map(|(a, m)| a * m).sum::<f64>() / total_mass;
        let g: Vec<f64> = f.iter().map(|v| v - mean).collect();
        let energy: f64 = g.iter().zip(mass).map(|(a, m)| a * a * m).sum();
        let scale: f64 = f.iter().zip(mass).map(|(a, m)| a * a * m).sum();
        if energy <= 1e-24 * scale.max(1e-300) {
            continue;
        }
        used += 1;
        let coeffs: Vec<f64> = basis.phis[..kmax]
            .iter()
            .map(|phi| g.iter().zip(phi).zip(mass).map(|((a, p), m)| a * p * m).sum())
            .collect();
        for (slot, &k) in k_list.iter().enumerate() {
            sums[slot] += (coeffs[..k].iter().map(|c| c * c).sum::<f64>() / energy).min(1.0);
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("every descriptor channel is constant".into()));
    }
    Ok(k_list.iter().zip(sums).map(|(&k, s)| (k, s / used as f64)).collect())
}

/// Total finite 0D persistence of the sublevel filtration of `field`.
pub fn persistence0d(field: &[f64], graph: &EdgeGraph) -> Result<f64> {
    if field.len() != graph.len() {
        return Err(Error::ShapeMismatch(format!("{} values for {} vertices", field.len(), graph.len())));
    }
    graph.ensure_connected()?;
    let n = field.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| field[a].total_cmp(&field[b]).then(a.cmp(&b)));
    let mut rank = vec![0usize; n];
    for (r, &v) in order.iter().enumerate() {
        rank[v] = r;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    // Root → vertex holding the component's minimum.
    let birth: Vec<usize> = (0..n).collect();
    let mut added = vec![false; n];
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut total = 0.0;
    for &v in &order {
        added[v] = true;
        for u in graph.neighbors(v) {
            if !added[u] {
                continue;
            }
            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
            if ru == rv {
                continue;
            }
            // Elder rule: the component born later dies here.
            let (old, young) = if rank[birth[ru]] < rank[birth[rv]] { (ru, rv) } else { (rv, ru) };
            total += field[v] - field[birth[young]];
            parent[young] = old;
        }
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideProbe {
    pub balanced_accuracy: f64,
    pub roc_auc: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub axis: [f64; 3],
}

/// Lateral axis: of the two principal axes orthogonal to the first, the one
/// whose coordinate distribution is most symmetric about its median.
pub fn lateral_axis(mesh: &Mesh) -> [f64; 3] {
    let n = mesh.n_vertices() as f64;
    let c = mesh.vertex_centroid();
    let cov = nalgebra::Matrix3::from_fn(|a, b| {
        mesh.vertices.iter().map(|p| (p[a] - c[a]) * (p[b] - c[b])).sum::<f64>() / n
    });
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let asym = |k: usize| {
        let axis = eig.eigenvectors.column(k);
        let coords: Vec<f64> = mesh.vertices.iter().map(|p| (0..3).map(|i| (p[i] - c[i]) * axis[i]).sum()).collect();
        let (q10, q50, q90) = (percentile(&coords, 10.0), percentile(&coords, 50.0), percentile(&coords, 90.0));
        (q90 + q10 - 2.0 * q50).abs() / (q90 - q10).max(1e-300)
    };
    let pick = if asym(order[1]) <= asym(order[2]) { order[1] } else { order[2] };
    let v = eig.eigenvectors.column(pick);
    let mut axis = [v[0], v[1], v[2]];
    let pivot = axis.iter().copied().fold(0.0_f64, |a, b| if b.abs() > a.abs() { b } else { a });
    if pivot < 0.0 {
        axis = axis.map(|x| -x);
    }
    axis
}

fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks over ties.
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

/// Held-out logistic probe predicting which side of the lateral median plane
/// a vertex lies on. `axis` overrides the PCA-derived lateral axis.
pub fn symmetry_side_probe(descriptors: &DescriptorMatrix, mesh: &Mesh, rng_seed: u64, axis: Option<[f64; 3]>) -> Result<SideProbe> {
    let n = mesh.n_vertices();
    if descriptors.n_rows() != n {
        return Err(Error::ShapeMismatch(format!("{} rows for {n} vertices", descriptors.n_rows())));
    }
    let axis = axis.unwrap_or_else(|| lateral_axis(mesh));
    let c = mesh.vertex_centroid();
    let coord: Vec<f64> = mesh.vertices.iter().map(|p| (0..3).map(|i| (p[i] - c[i]) * axis[i]).sum()).collect();
    let med = percentile(&coord, 50.0);
    let lo = coord.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = coord.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let band = SIDE_BAND * (hi - lo);
    let keep: Vec<usize> = (0..n).filter(|&x| (coord[x] - med).abs() >= band).collect();
    let label: Vec<bool> = keep.iter().map(|&x| coord[x] > med).collect();
    let pos = label.iter().filter(|&&l| l).count();
    if pos == 0 || pos == label.len() {
        return Err(Error::Degenerate("side probe has one class after dropping the median band".into()));
    }
    let mut idx: Vec<usize> = (0..keep.len()).collect();
    idx.shuffle(&mut crate::rng::stream(rng_seed, &["side_split"]));
    let n_train = (0.7 * idx.len() as f64).round() as usize;
    let (train, test) = idx.split_at(n_train);
    let d = descriptors.dim();
    let row = |i: usize| descriptors.row(keep[i]);
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for &i in train {
        for j in 0..d {
            mean[j] += row(i)[j] / train.len() as f64;
        }
    }
    for &i in train {
        for j in 0..d {
            sd[j] += (row(i)[j] - mean[j]).powi(2) / train.len() as f64;
        }
    }
    let sd: Vec<f64> = sd.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
    let feat = |i: usize| -> Vec<f64> { (0..d).map(|j| (row(i)[j] - mean[j]) / sd[j]).collect() };
    let xtr: Vec<Vec<f64>> = train.iter().map(|&i| feat(i)).collect();
    let ytr: Vec<f64> = train.iter().map(|&i| if label[i] { 1.0 } else { 0.0 }).collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let m = xtr.len() as f64;
    for _ in 0..LOGISTIC_EPOCHS {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, y) in xtr.iter().zip(&ytr) {
            let z = b + w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - y;
            for j in 0..d {
                gw[j] += err * x[j] / m;
            }
            gb += err / m;
        }
        for j in 0..d {
            w[j] -= LOGISTIC_RATE * (gw[j] + LOGISTIC_L2 * w[j]);
        }
        b -= LOGISTIC_RATE * gb;
    }
    let scores: Vec<f64> = test.iter().map(|&i| b + w.iter().zip(feat(i)).map(|(a, v)| a * v).sum::<f64>()).collect();
    let truth: Vec<bool> = test.iter().map(|&i| label[i]).collect();
    let tp = scores.iter().zip(&truth).filter(|(s, &l)| l && **s > 0.0).count() as f64;
    let tn = scores.iter().zip(&truth).filter(|(s, &l)| !l && **s <= 0.0).count() as f64;
    let p = truth.iter().filter(|&&l| l).count() as f64;
    let q = truth.len() as f64 - p;
    if p == 0.0 || q == 0.0 {
        return Err(Error::Degenerate("held-out side split has one class".into()));
    }
    Ok(SideProbe {
        balanced_accuracy: 0.5 * (tp / p + tn / q),
        roc_auc: roc_auc(&scores, &truth),
        n_train: train.len(),
        n_test: test.len(),
        axis,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnCorrespondence {
    pub mean_error: f64,
    pub hit10: f64,
    pub diameter: f64,
    pub samples: usize,
}

/// Descriptor nearest-neighbor matching scored by graph-geodesic error,
/// normalized by a double-sweep diameter estimate. `gt[i]` is the target
/// vertex of source vertex `i`.
pub fn nn_correspondence(
    source: &DescriptorMatrix,
    target: &DescriptorMatrix,
    target_mesh: &Mesh,
    target_graph: &EdgeGraph,
    gt: &[usize],
    sample: usize,
    rng_seed: u64,
) -> Result<NnCorrespondence> {
    if source.dim() != target.dim() || gt.len() != source.n_rows() || target.n_rows() != target_graph.len() {
        return Err(Error::ShapeMismatch("source, target and ground truth disagree in size".into()));
    }
    target_graph.ensure_connected()?;
    let (a, b) = double_sweep_endpoint(&target_mesh.vertices, target_graph);
    let diameter = target_graph.dijkstra(&[a])[b];
    if !(diameter > 0.0) {
        return Err(Error::Degenerate("target diameter is zero".into()));
    }
    let verts = sample_vertices(source.n_rows(), sample, rng_seed, "nn_correspondence");
    let errors: Vec<f64> = {
        use rayon::prelude::*;
        verts
            .par_iter()
            .map(|&i| {
                let pred = nearest_row(source.row(i), target);
                if pred == gt[i] {
                    0.0
                } else {
                    target_graph.dijkstra(&[gt[i]])[pred] / diameter
                }
            })
            .collect()
    };
    let m = errors.len() as f64;
    Ok(NnCorrespondence {
        mean_error: errors.iter().sum::<f64>() / m,
        hit10: errors.iter().filter(|&&e| e <= 0.1).count() as f64 / m,
        diameter,
        samples: errors.len(),
    })
}

/// Map source seeds through a ground-truth correspondence, keeping order.
pub fn synchronized_seeds(source: &SeedSet, gt: &[usize], target_vertices: usize) -> Result<SeedSet> {
    let indices = source
        .indices
        .iter()
        .map(|&s| match gt.get(s) {
            Some(&t) if t < target_vertices => Ok(t),
            _ => Err(Error::InvalidArgument(format!("ground truth has no valid image for seed {s}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedSet { indices, mode: source.mode, rng_seed: source.rng_seed })
}

/// `|a ∩ b| / k`.
pub fn seed_overlap(a: &SeedSet, b: &SeedSet) -> f64 {
    let set: std::collections::HashSet<usize> = b.indices.iter().copied().collect();
    a.indices.iter().filter(|i| set.contains(i)).count() as f64 / a.k().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::Family;
    use crate::fields::FieldMode;
    use crate::fixtures::icosphere;
    use rand::Rng;

    fn stack(phi: Vec<Vec<Vec<f64>>>) -> FieldStack {
        let scales = (0..phi.len()).map(|i| 0.01 * (i + 1) as f64).collect();
        FieldStack { phi, raw: None, scales, steps: 1, mode: FieldMode::Heat, degenerate: 0 }
    }

    fn dm(rows: &[Vec<f64>]) -> DescriptorMatrix {
        let names = (0..rows[0].len()).map(|i| format!("c{i}")).collect();
        DescriptorMatrix::from_rows(rows, names, Family::Dgm, serde_json::Value::Null).unwrap()
    }

    #[test]
    fn soft_voronoi_limits() {
        // One dominant seed at vertex 0, uniform at vertex 1.
        let s = stack(vec![vec![vec![0.0, 0.5], vec![5.0, 0.5], vec![5.0, 0.5]]]);
        let one = soft_voronoi_stats(&stack(vec![vec![vec![0.0], vec![5.0], vec![5.0]]]), 0.01).unwrap();
        assert!(one[0].entropy < 1e-9 && (one[0].margin - 1.0).abs() < 1e-9);
        let both = soft_voronoi_stats(&s, 0.01).unwrap();
        assert!((both[0].entropy - 0.5).abs() < 1e-9);
        assert!(soft_voronoi_stats(&stack(vec![vec![vec![0.0, 1.0]]]), 0.01).is_err());
    }

    #[test]
    fn soft_voronoi_shift_invariant_per_vertex() {
        let mut rng = crate::rng::from_seed(4);
        let phi: Vec<Vec<f64>> = (0..6).map(|_| (0..10).map(|_| rng.gen::<f64>() * 0.05).collect()).collect();
        let a = soft_voronoi_stats(&stack(vec![phi.clone()]), 0.01).unwrap();
        // Add a per-vertex constant across all seeds.
        let shifted: Vec<Vec<f64>> = phi.iter().map(|f| f.iter().enumerate().map(|(x, v)| v + x as f64).collect()).collect();
        let b = soft_voronoi_stats(&stack(vec![shifted]), 0.01).unwrap();
        assert!((a[0].entropy - b[0].entropy).abs() < 1e-12);
        assert!((a[0].margin - b[0].margin).abs() < 1e-12);
    }

    #[test]
    fn compression_degenerate_and_structural() {
        let n = 60;
        let same = stack(vec![vec![(0..n).map(|x| x as f64).collect(); 6]]);
        let r = moment_compression(&same, 60, 1, DEFAULT_RIDGE).unwrap();
        assert_eq!(r[0].pca6_explained, 1.0);
        let mut rng = crate::rng::from_seed(2);
        let distinct: Vec<Vec<f64>> = (0..6).map(|_| (0..n).map(|_| rng.gen::<f64>()).collect()).collect();
        let r = moment_compression(&stack(vec![distinct]), 60, 1, DEFAULT_RIDGE).unwrap();
        assert!(r[0].ridge_r2 > 0.0);
        assert!(moment_compression(&same, 10, 1, DEFAULT_RIDGE).is_err());
    }

    #[test]
    fn csas_cases() {
        let mut rng = crate::rng::from_seed(6);
        let rows: Vec<Vec<f64>> = (0..400).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ident: Vec<usize> = (0..400).collect();
        let x = dm(&rows);
        let r = csas(&x, &x, &ident, 1000, 1, DEFAULT_RIDGE).unwrap();
        assert!((r.r2 - 1.0).abs() < 1e-6 && r.relative_residual < 1e-3 && (r.direct_cosine - 1.0).abs() < 1e-12);
        assert_eq!(r.nn_accuracy, 1.0);
        let a = [[2.0, 0.5, 0.0, 0.1], [0.0, 1.0, 0.3, 0.0], [0.2, 0.0, 1.5, 0.0], [0.0, 0.1, 0.0, 0.8]];
        let mapped: Vec<Vec<f64>> = rows.iter().map(|r| (0..4).map(|i| (0..4).map(|j| a[i][j] * r[j]).sum()).collect()).collect();
        assert!(csas(&x, &dm(&mapped), &ident, 1000, 1, DEFAULT_RIDGE).unwrap().r2 >= 0.99);
        let noise: Vec<Vec<f64>> = (0..400).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        assert!(csas(&x, &dm(&noise), &ident, 1000, 1, DEFAULT_RIDGE).unwrap().r2 <= 0.1);
    }

    #[test]
    fn compressibility_of_an_eigenfunction() {
        let mesh = icosphere(2);
        let ops = crate::operators::assemble(&mesh).unwrap();
        let basis = crate::operators::partial_eigs(&ops, 40).unwrap();
        let f: Vec<Vec<f64>> = basis.phis[4].iter().map(|v| vec![*v, 1.0]).collect();
        let r = spectral_compressibility(&dm(&f), &basis, &ops.mass, &[4, 5, 32]).unwrap();
        assert!(r[0].1.abs() < 1e-9 && (r[1].1 - 1.0).abs() < 1e-9 && (r[2].1 - 1.0).abs() < 1e-9);
        assert!(spectral_compressibility(&dm(&f), &basis, &ops.mass, &[96]).is_err());
    }

    fn path(n: usize) -> EdgeGraph {
        EdgeGraph::from_edges(n, &(1..n).map(|i| (i - 1, i, 1.0)).collect::<Vec<_>>())
    }

    #[test]
    fn persistence_by_hand() {
        assert_eq!(persistence0d(&[0.0, 1.0, 2.0, 3.0], &path(4)).unwrap(), 0.0);
        assert!((persistence0d(&[1.0, 0.0, 2.0, 0.5, 3.0], &path(5)).unwrap() - 1.5).abs() < 1e-15);
        assert!((persistence0d(&[11.0, 10.0, 12.0, 10.5, 13.0], &path(5)).unwrap() - 1.5).abs() < 1e-12);
        let g = EdgeGraph::from_edges(3, &[(0, 1, 1.0)]);
        assert!(persistence0d(&[0.0; 3], &g).is_err());
    }

    #[test]
    fn side_probe_leak_and_noise() {
        let mesh = crate::fixtures::make_fixture(&crate::fixtures::FixtureSpec::new(crate::fixtures::FixtureKind::TwoClassBlobs, 3))
            .unwrap()
            .mesh;
        let axis = lateral_axis(&mesh);
        let c = mesh.vertex_centroid();
        let lat: Vec<Vec<f64>> = mesh.vertices.iter().map(|p| vec![(0..3).map(|i| (p[i] - c[i]) * axis[i]).sum()]).collect();
        let r = symmetry_side_probe(&dm(&lat), &mesh, 3, None).unwrap();
        assert!(r.balanced_accuracy > 0.97, "{r:?}");
        let mut rng = crate::rng::from_seed(11);
        let noise: Vec<Vec<f64>> = (0..mesh.n_vertices()).map(|_| (0..4).map(|_| rng.gen::<f64>()).collect()).collect();
        let r = symmetry_side_probe(&dm(&noise), &mesh, 3, None).unwrap();
        assert!((r.balanced_accuracy - 0.5).abs() <= 0.1, "{r:?}");
    }

    #[test]
    fn nn_correspondence_cases() {
        let mesh = icosphere(2);
        let graph = EdgeGraph::from_mesh(&mesh);
        let n = mesh.n_vertices();
        let gt: Vec<usize> = (0..n).collect();
        let onehot: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let r = nn_correspondence(&dm(&onehot), &dm(&onehot), &mesh, &graph, &gt, n, 1).unwrap();
        assert_eq!((r.mean_error, r.hit10), (0.0, 1.0));
        let constant = dm(&vec![vec![1.0]; n]);
        let r = nn_correspondence(&constant, &constant, &mesh, &graph, &gt, n, 1).unwrap();
        let d0 = graph.dijkstra(&[0]);
        let expect = d0.iter().sum::<f64>() / n as f64 / r.diameter;
        assert!((r.mean_error - expect).abs() < 1e-12);
    }

    #[test]
    fn seed_sync() {
        let s = SeedSet { indices: vec![3, 1], mode: crate::seeding::SeedMode::GeodesicDeterministic, rng_seed: None };
        let t = synchronized_seeds(&s, &[5, 4, 3, 2], 6).unwrap();
        assert_eq!(t.indices, vec![2, 4]);
        assert_eq!(seed_overlap(&s, &s), 1.0);
        assert!(synchronized_seeds(&s, &[0, 1], 6).is_err());
    }
}
