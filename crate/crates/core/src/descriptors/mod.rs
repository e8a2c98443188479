//! Per-vertex local descriptors.

mod approx;
mod dgm;
mod gmsd;
mod moments;
mod spectral;

pub use approx::{
    default_approx_times, hks_cheb, hks_mr_proxy, hks_pade, HeatApproxParams, MrProxyParams, ProbeKind,
};
pub use dgm::{
    dgm_channel_names, dgm_local, dgm_tensor_channels, extract_dgm, extract_dgm_with, lumped_mass,
    DgmParams, Normalization,
};
pub use gmsd::{gmsd, GmsdSixth};
pub use moments::{moments, MomentVector, MOMENT_NAMES};
pub use spectral::{default_hks_times, hks, hks_at, log_spaced, sihks, wks, wks_energies, SIHKS_COEFFS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Dgm,
    Hks,
    SiHks,
    Wks,
    GmsdHks,
    GmsdWks,
    HksCheb,
    HksPade,
    HksMr,
    Concat,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Dgm => "dgm",
            Family::Hks => "hks",
            Family::SiHks => "si_hks",
            Family::Wks => "wks",
            Family::GmsdHks => "gmsd_hks",
            Family::GmsdWks => "gmsd_wks",
            Family::HksCheb => "hks_cheb",
            Family::HksPade => "hks_pade",
            Family::HksMr => "hks_mr",
            Family::Concat => "concat",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidArgument(format!("unknown descriptor family '{s}'")))
    }
}

/// Row-major `n_rows × dim` matrix of local descriptors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorMatrix {
    pub data: Vec<f64>,
    pub n_rows: usize,
    pub channel_names: Vec<String>,
    pub family: Family,
    pub params: serde_json::Value,
}

impl DescriptorMatrix {
    pub fn new(
        data: Vec<f64>,
        n_rows: usize,
        channel_names: Vec<String>,
        family: Family,
        params: serde_json::Value,
    ) -> Result<Self> {
        let dim = channel_names.len();
        if data.len() != n_rows * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {n_rows} rows of {dim} channels",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!(
                "{family} descriptor has a non-finite entry at row {} channel {}",
                i / dim.max(1),
                i % dim.max(1)
            )));
        }
        Ok(DescriptorMatrix { data, n_rows, channel_names, family, params })
    }

    /// Build from per-vertex rows.
    pub fn from_rows(
        rows: &[Vec<f64>],
        channel_names: Vec<String>,
        family: Family,
        params: serde_json::Value,
    ) -> Result<Self> {
        let dim = channel_names.len();
        if let Some(r) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch(format!("row {r} has {} channels, expected {dim}", rows[r].len())));
        }
        Self::new(rows.concat(), rows.len(), channel_names, family, params)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.channel_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim().max(1)).take(self.n_rows)
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows().map(|r| r[c]).collect()
    }

    /// Rows at the given vertex indices, in order.
    pub fn select_rows(&self, idx: &[usize]) -> DescriptorMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.dim());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DescriptorMatrix {
            data,
            n_rows: idx.len(),
            channel_names: self.channel_names.clone(),
            family: self.family,
            params: self.params.clone(),
        }
    }

    /// Append channels from `other` (same row count).
    pub fn hconcat(&self, other: &DescriptorMatrix) -> Result<DescriptorMatrix> {
        if other.n_rows != self.n_rows {
            return Err(Error::ShapeMismatch(format!("{} vs {} rows", self.n_rows, other.n_rows)));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for i in 0..self.n_rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        let mut names = self.channel_names.clone();
        names.extend(other.channel_names.iter().cloned());
        Ok(DescriptorMatrix {
            data,
            n_rows: self.n_rows,
            channel_names: names,
            family: self.family,
            params: self.params.clone(),
        })
    }

    pub fn digest(&self) -> String {
        crate::rng::digest_f64(&self.data)
    }
}

/// Pearson correlation of two equally long samples; 0 when either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
