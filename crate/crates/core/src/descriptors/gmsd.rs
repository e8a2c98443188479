//! GMSD-style moment summaries of a spectral signature.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::moments::moments;
use super::{DescriptorMatrix, Family};
use crate::error::{Error, Result};
use crate::mesh::EdgeGraph;

/// Definition of the sixth channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmsdSixth {
    /// One-ring mean of the temporal variance.
    #[default]
    RingMeanVariance,
    /// One-ring variance of the temporal variance.
    RingVarianceVariance,
}

const NAMES: [&str; 6] = ["t_mean", "t_var", "t_skew", "ring_mean_mu", "ring_var_mu", "ring_mean_v"];

fn ring_stats(values: &[f64], graph: &EdgeGraph, x: usize) -> (f64, f64) {
    let nb: Vec<f64> = graph.neighbors(x).map(|y| values[y]).collect();
    if nb.is_empty() {
        return (values[x], 0.0);
    }
    let n = nb.len() as f64;
    let mean = nb.iter().sum::<f64>() / n;
    let var = nb.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

pub fn gmsd(base: &DescriptorMatrix, graph: &EdgeGraph, sixth: GmsdSixth) -> Result<DescriptorMatrix> {
    if base.dim() < 3 {
        return Err(Error::InvalidArgument(format!("GMSD needs ≥3 signature channels, got {}", base.dim())));
    }
    if graph.len() != base.n_rows() {
        return Err(Error::ShapeMismatch(format!("{} rows vs {} graph vertices", base.n_rows(), graph.len())));
    }
    let family = match base.family {
        Family::Wks => Family::GmsdWks,
        _ => Family::GmsdHks,
    };
    let n = base.n_rows();
    let temporal: Vec<_> = base.rows().map(moments).collect::<Result<_>>()?;
    let mu: Vec<f64> = temporal.iter().map(|m| m.mean).collect();
    let v: Vec<f64> = temporal.iter().map(|m| m.variance).collect();
    let mut data = Vec::with_capacity(6 * n);
    for x in 0..n {
        let (mu_mean, mu_var) = ring_stats(&mu, graph, x);
        let (v_mean, v_var) = ring_stats(&v, graph, x);
        let last = match sixth {
            GmsdSixth::RingMeanVariance => v_mean,
            GmsdSixth::RingVarianceVariance => v_var,
        };
        data.extend_from_slice(&[mu[x], v[x], temporal[x].skewness, mu_mean, mu_var, last]);
    }
    let mut names: Vec<String> = NAMES.iter().map(|s| format!("gmsd/{s}")).collect();
    if sixth == GmsdSixth::RingVarianceVariance {
        names[5] = "gmsd/ring_var_v".into();
    }
    DescriptorMatrix::new(data, n, names, family, json!({"base": base.family, "base_params": base.params, "sixth": sixth}))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn path(n: usize) -> EdgeGraph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, 1.0)).collect();
        EdgeGraph::from_edges(n, &edges)
    }

    #[test]
    fn constant_signature() {
        let base = DescriptorMatrix::new(vec![2.5; 12], 3, vec!["a".into(), "b".into(), "c".into(), "d".into()], Family::Hks, Value::Null)
            .unwrap();
        let d = gmsd(&base, &path(3), GmsdSixth::default()).unwrap();
        for x in 0..3 {
            assert_eq!(d.row(x), &[2.5, 0.0, 0.0, 2.5, 0.0, 0.0]);
        }
    }

    #[test]
    fn ring_means_by_hand() {
        let names: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
        // Temporal means 1, 3 on a single edge.
        let base = DescriptorMatrix::new(vec![1.0, 1.0, 1.0, 3.0, 3.0, 3.0], 2, names.clone(), Family::Hks, Value::Null).unwrap();
        let d = gmsd(&base, &path(2), GmsdSixth::default()).unwrap();
        assert_eq!(d.row(0)[3], 3.0);
        assert_eq!(d.row(1)[3], 1.0);
        let base = DescriptorMatrix::new(vec![1.0, 1.0, 1.0, 5.0, 5.0, 5.0, 2.0, 2.0, 2.0], 3, names, Family::Wks, Value::Null).unwrap();
        let d = gmsd(&base, &path(3), GmsdSixth::default()).unwrap();
        assert_eq!(d.row(1)[3], 1.5);
        assert_eq!(d.row(1)[4], 0.25);
        assert_eq!(d.family, Family::GmsdWks);
        assert_eq!(d.dim(), 6);
    }

    #[test]
    fn isolated_vertex_uses_own_values() {
        let names: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
        let base = DescriptorMatrix::new(vec![0.0, 1.0, 2.0], 1, names, Family::Hks, Value::Null).unwrap();
        let d = gmsd(&base, &EdgeGraph::from_edges(1, &[]), GmsdSixth::default()).unwrap();
        assert_eq!(d.row(0)[3], 1.0);
        assert_eq!(d.row(0)[5], 2.0 / 3.0);
    }
}
