//! DGM moment descriptors over seed-conditioned fields.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::moments::{moments, MOMENT_NAMES};
use super::{DescriptorMatrix, Family};
use crate::error::Result;
use crate::fields::{field_stack, FieldParams, FieldStack};
use crate::mesh::{EdgeGraph, Mesh};
use crate::operators::{assemble, OperatorPair};
use crate::seeding::{select_seeds, SeedMode, SeedSet};

const Z_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Per-channel z-score then signed log.
    #[default]
    Nonlinear,
    /// Per-shape PCA whitening of the raw channels.
    LinearWhiten,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgmParams {
    pub k: usize,
    pub seed_mode: SeedMode,
    pub rng_seed: u64,
    pub fields: FieldParams,
    pub normalization: Normalization,
    pub tensor: bool,
}

impl Default for DgmParams {
    fn default() -> Self {
        DgmParams {
            k: 24,
            seed_mode: SeedMode::GeodesicDeterministic,
            rng_seed: crate::rng::DEFAULT_SEED,
            fields: FieldParams::default(),
            normalization: Normalization::Nonlinear,
            tensor: false,
        }
    }
}

/// Channel labels `t{scale}/{moment}` in scale-major order.
pub fn dgm_channel_names(scales: &[f64]) -> Vec<String> {
    scales
        .iter()
        .flat_map(|t| MOMENT_NAMES.iter().map(move |m| format!("t{t}/{m}")))
        .collect()
}

/// Moments over the seed axis at every vertex and scale, then normalized.
pub fn dgm_local(stack: &FieldStack, normalization: Normalization) -> Result<DescriptorMatrix> {
    let n = stack.n_vertices();
    let dim = 6 * stack.n_scales();
    let mut data = Vec::with_capacity(n * dim);
    for x in 0..n {
        for s in 0..stack.n_scales() {
            data.extend_from_slice(&moments(&stack.samples(s, x))?.to_array());
        }
    }
    match normalization {
        Normalization::Nonlinear => signed_log_zscore(&mut data, n, dim),
        Normalization::LinearWhiten => data = pca_whiten(&data, n, dim),
        Normalization::Raw => {}
    }
    let params = json!({
        "scales": stack.scales,
        "steps": stack.steps,
        "mode": stack.mode,
        "seeds": stack.n_seeds(),
        "normalization": normalization,
    });
    DescriptorMatrix::new(data, n, dgm_channel_names(&stack.scales), Family::Dgm, params)
}

fn column_stats(data: &[f64], n: usize, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; dim];
    for row in data.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for row in data.chunks(dim) {
        for c in 0..dim {
            let d = row[c] - mean[c];
            var[c] += d * d;
        }
    }
    let std = var.into_iter().map(|v| (v / n as f64).sqrt()).collect();
    (mean, std)
}

fn signed_log_zscore(data: &mut [f64], n: usize, dim: usize) {
    if n == 0 {
        return;
    }
    let (mean, std) = column_stats(data, n, dim);
    for row in data.chunks_mut(dim) {
        for c in 0..dim {
            let z = (row[c] - mean[c]) / (std[c] + Z_FLOOR);
            row[c] = z.signum() * z.abs().ln_1p();
        }
    }
}

/// Project centered rows onto all principal axes, each scaled to unit
/// variance. Axes are ordered by decreasing variance; null axes map to 0.
fn pca_whiten(data: &[f64], n: usize, dim: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let (mean, _) = column_stats(data, n, dim);
    let x = DMatrix::from_fn(n, dim, |i, j| data[i * dim + j] - mean[j]);
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let mut w = DMatrix::<f64>::zeros(dim, dim);
    for (k, &c) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[c];
        if lambda <= 1e-12 * top || lambda <= 0.0 {
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let pivot = v.iter().copied().fold(0.0_f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            v.iter_mut().for_each(|e| *e = -*e);
        }
        let s = 1.0 / lambda.sqrt();
        for r in 0..dim {
            w[(r, k)] = v[r] * s;
        }
    }
    let y = x * w;
    let mut out = Vec::with_capacity(n * dim);
    for i in 0..n {
        for j in 0..dim {
            out.push(y[(i, j)]);
        }
    }
    out
}

/// Lumped vertex masses (a third of incident face area).
pub fn lumped_mass(mesh: &Mesh) -> Vec<f64> {
    let mut mass = vec![0.0; mesh.n_vertices()];
    for f in &mesh.faces {
        let a = mesh.face_area(f) / 3.0;
        for &v in f {
            mass[v] += a;
        }
    }
    mass
}

/// Eigenvalues (descending) of the field-weighted coordinate covariance per
/// scale, broadcast to every vertex.
pub fn dgm_tensor_channels(mesh: &Mesh, stack: &FieldStack) -> Result<DescriptorMatrix> {
    let mass = lumped_mass(mesh);
    let n = mesh.n_vertices();
    let mut per_scale = Vec::with_capacity(3 * stack.n_scales());
    let mut names = Vec::new();
    for (s, t) in stack.scales.iter().enumerate() {
        let w: Vec<f64> = (0..n)
            .map(|x| stack.phi[s].iter().map(|f| f[x]).sum::<f64>() / stack.n_seeds() as f64)
            .collect();
        let total: f64 = (0..n).map(|x| mass[x] * w[x]).sum();
        let mut mean = [0.0; 3];
        if total > 0.0 {
            for x in 0..n {
                for k in 0..3 {
                    mean[k] += mass[x] * w[x] * mesh.vertices[x][k] / total;
                }
            }
        }
        let mut c = nalgebra::Matrix3::<f64>::zeros();
        for x in 0..n {
            let d = nalgebra::Vector3::from_fn(|k, _| mesh.vertices[x][k] - mean[k]);
            c += d * d.transpose() * (mass[x] * w[x]);
        }
        let mut ev: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        per_scale.extend(ev);
        for k in 0..3 {
            names.push(format!("t{t}/cov{k}"));
        }
    }
    let data = per_scale.repeat(n);
    DescriptorMatrix::new(data, n, names, Family::Dgm, json!({"tensor": true, "scales": stack.scales}))
}

/// Full DGM pipeline on a preprocessed mesh.
pub fn extract_dgm(mesh: &Mesh, params: &DgmParams) -> Result<DescriptorMatrix> {
    let ops = assemble(mesh)?;
    let graph = EdgeGraph::from_mesh(mesh);
    let seeds = select_seeds(mesh, &graph, params.seed_mode, params.k, params.rng_seed)?;
    extract_dgm_with(mesh, &ops, &graph, &seeds, params)
}

/// DGM from precomputed operators and an explicit seed set.
pub fn extract_dgm_with(
    mesh: &Mesh,
    ops: &OperatorPair,
    graph: &EdgeGraph,
    seeds: &SeedSet,
    params: &DgmParams,
) -> Result<DescriptorMatrix> {
    let stack = field_stack(ops, graph, seeds, &params.fields)?;
    let mut d = dgm_local(&stack, params.normalization)?;
    if params.tensor {
        d = d.hconcat(&dgm_tensor_channels(mesh, &stack)?)?;
    }
    d.params = json!({ "dgm": params, "seed_digest": seeds.digest() });
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::FieldMode;
    use crate::fixtures::icosphere;

    fn stack_from(phi: Vec<Vec<Vec<f64>>>, scales: Vec<f64>) -> FieldStack {
        FieldStack { phi, raw: None, scales, steps: 1, mode: FieldMode::Heat, degenerate: 0 }
    }

    #[test]
    fn channel_names_snapshot() {
        let names = dgm_channel_names(&crate::fields::DEFAULT_SCALES);
        assert_eq!(names.len(), 24);
        assert_eq!(&names[..7], ["t0.01/mean", "t0.01/var", "t0.01/skew", "t0.01/kurt", "t0.01/min", "t0.01/max", "t0.03/mean"]);
        assert_eq!(names[23], "t0.15/max");
    }

    #[test]
    fn constant_fields_collapse() {
        // Every seed gives the same field.
        let field = vec![0.0, 0.4, 1.0];
        let stack = stack_from(vec![vec![field.clone(); 5]], vec![0.03]);
        let d = dgm_local(&stack, Normalization::Raw).unwrap();
        for x in 0..3 {
            assert_eq!(d.row(x), &[field[x], 0.0, 0.0, 0.0, field[x], field[x]]);
        }
    }

    #[test]
    fn nonlinear_zero_stays_zero() {
        let stack = stack_from(vec![vec![vec![0.0; 4]; 3]], vec![0.03]);
        let d = dgm_local(&stack, Normalization::Nonlinear).unwrap();
        assert!(d.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn whitening_gives_unit_covariance() {
        let d = extract_dgm(&icosphere(2), &DgmParams { normalization: Normalization::LinearWhiten, k: 8, ..Default::default() })
            .unwrap();
        let n = d.n_rows() as f64;
        let col0 = d.column(0);
        let mean = col0.iter().sum::<f64>() / n;
        let var = col0.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-6, "mean {mean} var {var}");
        let c1 = d.column(1);
        let cross = col0.iter().zip(&c1).map(|(a, b)| a * b).sum::<f64>() / n;
        assert!(cross.abs() < 1e-6);
    }

    #[test]
    fn tensor_channels_rigid_invariant() {
        let mesh = icosphere(2);
        let graph = EdgeGraph::from_mesh(&mesh);
        let seeds = select_seeds(&mesh, &graph, SeedMode::GeodesicDeterministic, 6, 0).unwrap();
        let ops = assemble(&mesh).unwrap();
        let stack = field_stack(&ops, &graph, &seeds, &FieldParams::default()).unwrap();
        let base = dgm_tensor_channels(&mesh, &stack).unwrap();
        assert_eq!(base.dim(), 12);
        let (s, c) = (0.6f64.sin(), 0.6f64.cos());
        for map in [
            Box::new(move |p: [f64; 3]| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]) as Box<dyn Fn([f64; 3]) -> [f64; 3]>,
            Box::new(|p: [f64; 3]| [-p[0], p[1], p[2]]),
        ] {
            let mut moved = mesh.clone();
            moved.vertices.iter_mut().for_each(|p| *p = map(*p));
            let other = dgm_tensor_channels(&moved, &stack).unwrap();
            for (a, b) in base.row(0).iter().zip(other.row(0)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn uniform_weights_reduce_to_area_covariance() {
        let mesh = icosphere(2);
        let n = mesh.n_vertices();
        let stack = stack_from(vec![vec![vec![1.0; n]; 2]], vec![0.03]);
        let d = dgm_tensor_channels(&mesh, &stack).unwrap();
        let mass = lumped_mass(&mesh);
        // Centered at the area centroid, so the plain covariance applies.
        let cxx: f64 = (0..n).map(|x| mass[x] * mesh.vertices[x][0].powi(2)).sum();
        let cyy: f64 = (0..n).map(|x| mass[x] * mesh.vertices[x][1].powi(2)).sum();
        let czz: f64 = (0..n).map(|x| mass[x] * mesh.vertices[x][2].powi(2)).sum();
        let tr: f64 = d.row(0).iter().sum();
        assert!((tr - (cxx + cyy + czz)).abs() < 1e-12);
    }
}
