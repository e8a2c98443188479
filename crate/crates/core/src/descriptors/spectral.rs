//! Eigenbasis signatures: HKS, scale-invariant HKS and WKS.

use serde_json::json;

use super::{DescriptorMatrix, Family};
use crate::error::{Error, Result};
use crate::operators::EigenBasis;

const LN10: f64 = std::f64::consts::LN_10;
/// Fourier magnitudes kept by SI-HKS.
pub const SIHKS_COEFFS: usize = 6;
const SIHKS_ALPHA: f64 = 2.0;
const SIHKS_TAU_MAX: f64 = 25.0;
const SIHKS_TAU_STEP: f64 = 1.0 / 16.0;
const WKS_SIGMA_SPACINGS: f64 = 7.0;

/// `count` values log-spaced on `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

fn lambda2(basis: &EigenBasis) -> Result<f64> {
    if basis.r() < 2 {
        return Err(Error::TooMany { requested: 2, available: basis.r() });
    }
    let top = basis.lambdas[basis.r() - 1];
    let l2 = basis.lambdas[1];
    if !(l2 > 1e-10 * top.abs()) {
        return Err(Error::Degenerate(format!("λ_2 = {l2:e} is not positive; mesh is disconnected")));
    }
    Ok(l2)
}

/// Log-spaced on `[4 ln10/λ_r, 4 ln10/λ_2]`.
pub fn default_hks_times(basis: &EigenBasis, count: usize) -> Result<Vec<f64>> {
    let l2 = lambda2(basis)?;
    let lr = basis.lambdas[basis.r() - 1];
    Ok(log_spaced(4.0 * LN10 / lr, 4.0 * LN10 / l2, count))
}

/// `Σ_i e^{−λ_i t} φ_i(x)²` for one vertex over all `times`.
fn hks_row(basis: &EigenBasis, x: usize, times: &[f64], out: &mut Vec<f64>) {
    for &t in times {
        let mut s = 0.0;
        for (l, phi) in basis.lambdas.iter().zip(&basis.phis) {
            s += (-l * t).exp() * phi[x] * phi[x];
        }
        out.push(s);
    }
}

/// HKS at explicit times; no spectral preconditions.
pub fn hks_at(basis: &EigenBasis, times: &[f64]) -> Result<DescriptorMatrix> {
    let n = basis.phis.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(n * times.len());
    for x in 0..n {
        hks_row(basis, x, times, &mut data);
    }
    let names = times.iter().map(|t| format!("hks/t{t:.6e}")).collect();
    DescriptorMatrix::new(data, n, names, Family::Hks, json!({"times": times, "r": basis.r()}))
}

/// HKS at 24 (or `count`) default times.
pub fn hks(basis: &EigenBasis, count: usize) -> Result<DescriptorMatrix> {
    let times = default_hks_times(basis, count)?;
    hks_at(basis, &times)
}

/// Scale-invariant HKS. The log-time axis `τ ∈ [1, 25]` (step 1/16) is
/// anchored at `t = 4 ln10/λ_r`, i.e. `t(τ) = 4 ln10/λ_r · 2^{τ−1}`.
pub fn sihks(basis: &EigenBasis) -> Result<DescriptorMatrix> {
    lambda2(basis)?;
    let n = basis.phis[0].len();
    let lr = basis.lambdas[basis.r() - 1];
    let t0 = 4.0 * LN10 / lr;
    let steps = ((SIHKS_TAU_MAX - 1.0) / SIHKS_TAU_STEP).round() as usize;
    let times: Vec<f64> = (0..=steps)
        .map(|j| t0 * SIHKS_ALPHA.powf(j as f64 * SIHKS_TAU_STEP))
        .collect();
    let mut clamped = 0usize;
    let mut data = Vec::with_capacity(n * SIHKS_COEFFS);
    let mut h = Vec::with_capacity(times.len());
    for x in 0..n {
        h.clear();
        hks_row(basis, x, &times, &mut h);
        let logs: Vec<f64> = h
            .iter()
            .map(|&v| {
                if v < 1e-300 {
                    clamped += 1;
                }
                v.max(1e-300).ln()
            })
            .collect();
        let deriv: Vec<f64> = logs.windows(2).map(|w| w[1] - w[0]).collect();
        let len = deriv.len() as f64;
        for k in 0..SIHKS_COEFFS {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, d) in deriv.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * j) as f64 / len;
                re += d * a.cos();
                im += d * a.sin();
            }
            data.push(re.hypot(im));
        }
    }
    if clamped > 0 {
        log::warn!("si-hks: {clamped} nonpositive HKS samples clamped before log");
    }
    let names = (0..SIHKS_COEFFS).map(|k| format!("sihks/f{k}")).collect();
    DescriptorMatrix::new(
        data,
        n,
        names,
        Family::SiHks,
        json!({"alpha": SIHKS_ALPHA, "tau": [1.0, SIHKS_TAU_MAX, SIHKS_TAU_STEP], "t0": t0, "clamped": clamped}),
    )
}

/// WKS energies and bandwidth. The bin spacing `s` and `σ = 7s` are solved
/// jointly so that `bins` energies span `[log λ_2 + 2σ, log λ_r − 2σ]`.
pub fn wks_energies(basis: &EigenBasis, bins: usize) -> Result<(Vec<f64>, f64)> {
    if basis.r() < 3 {
        return Err(Error::TooMany { requested: 3, available: basis.r() });
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("WKS needs at least one bin".into()));
    }
    let lo = lambda2(basis)?.ln();
    let hi = basis.lambdas[basis.r() - 1].ln();
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Degenerate(format!("WKS energy range {range:e} is empty")));
    }
    let spacing = range / ((bins - 1) as f64 + 4.0 * WKS_SIGMA_SPACINGS);
    let sigma = WKS_SIGMA_SPACINGS * spacing;
    let energies = (0..bins).map(|j| lo + 2.0 * sigma + spacing * j as f64).collect();
    Ok((energies, sigma))
}

/// Normalized band-pass weights over eigenpairs for one energy; the kernel
/// pair gets weight 0.
fn wks_weights(lambdas: &[f64], e: f64, sigma: f64) -> Vec<f64> {
    let mut w: Vec<f64> = lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if i == 0 || l <= 0.0 {
                0.0
            } else {
                (-(e - l.ln()).powi(2) / (2.0 * sigma * sigma)).exp()
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|v| *v /= total);
    }
    w
}

pub fn wks(basis: &EigenBasis, bins: usize) -> Result<DescriptorMatrix> {
    let (energies, sigma) = wks_energies(basis, bins)?;
    let n = basis.phis[0].len();
    let weights: Vec<Vec<f64>> = energies.iter().map(|&e| wks_weights(&basis.lambdas, e, sigma)).collect();
    let mut data = Vec::with_capacity(n * bins);
    for x in 0..n {
        for w in &weights {
            data.push(w.iter().zip(&basis.phis).map(|(wi, phi)| wi * phi[x] * phi[x]).sum());
        }
    }
    let names = energies.iter().map(|e| format!("wks/e{e:.6}")).collect();
    DescriptorMatrix::new(data, n, names, Family::Wks, json!({"energies": energies, "sigma": sigma, "r": basis.r()}))
}
