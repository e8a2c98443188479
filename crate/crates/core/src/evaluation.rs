//! Retrieval metrics, robustness drops, late fusion and local concatenation.

use serde::{Deserialize, Serialize};

use crate::aggregation::GlobalCode;
use crate::descriptors::{DescriptorMatrix, Family};
use crate::error::{Error, Result};

/// Cosine similarity; 0 if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// `1 − cos` between all pairs of codes.
pub fn cosine_distance_matrix(codes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = codes.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = 1.0 - cosine(&codes[i], &codes[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub shape_id: String,
    pub label: String,
    /// Other shapes, best first, with their similarity (or negated distance).
    pub ranking: Vec<(String, f64)>,
    pub average_precision: f64,
    pub top1: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub queries: Vec<QueryResult>,
    pub map: f64,
    pub top1: f64,
    /// Queries whose class has no other member.
    pub skipped: Vec<String>,
}

/// Mean of precision at each relevant rank.
pub fn average_precision(relevant: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (r, &rel) in relevant.iter().enumerate() {
        if rel {
            hits += 1;
            total += hits as f64 / (r + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        total / hits as f64
    }
}

/// Leave-one-out ranking from a score matrix (higher = closer). Ties go to
/// the smaller shape id.
pub fn rank_by_scores(ids: &[String], labels: &[String], scores: &[Vec<f64>]) -> Result<RetrievalResult> {
    let n = ids.len();
    if n < 2 || labels.len() != n || scores.len() != n || scores.iter().any(|r| r.len() != n) {
        return Err(Error::ShapeMismatch(format!("retrieval needs ≥2 shapes with matching labels and scores, got {n}")));
    }
    let mut queries = Vec::new();
    let mut skipped = Vec::new();
    for q in 0..n {
        let others = (0..n).filter(|&j| j != q && labels[j] == labels[q]).count();
        if others == 0 {
            skipped.push(ids[q].clone());
            continue;
        }
        let mut order: Vec<usize> = (0..n).filter(|&j| j != q).collect();
        order.sort_by(|&a, &b| scores[q][b].total_cmp(&scores[q][a]).then_with(|| ids[a].cmp(&ids[b])));
        let relevant: Vec<bool> = order.iter().map(|&j| labels[j] == labels[q]).collect();
        queries.push(QueryResult {
            shape_id: ids[q].clone(),
            label: labels[q].clone(),
            ranking: order.iter().map(|&j| (ids[j].clone(), scores[q][j])).collect(),
            average_precision: average_precision(&relevant),
            top1: relevant[0],
        });
    }
    if !skipped.is_empty() {
        log::info!("{} singleton-class queries skipped", skipped.len());
    }
    if queries.is_empty() {
        return Err(Error::Protocol("every query was skipped (no class has two members)".into()));
    }
    let m = queries.len() as f64;
    let map = queries.iter().map(|q| q.average_precision).sum::<f64>() / m;
    let top1 = queries.iter().filter(|q| q.top1).count() as f64 / m;
    Ok(RetrievalResult { queries, map, top1, skipped })
}

/// Cosine retrieval over global codes.
pub fn retrieve(ids: &[String], labels: &[String], codes: &[GlobalCode]) -> Result<RetrievalResult> {
    let vectors: Vec<Vec<f64>> = codes.iter().map(|c| c.vector.clone()).collect();
    retrieve_vectors(ids, labels, &vectors)
}

pub fn retrieve_vectors(ids: &[String], labels: &[String], vectors: &[Vec<f64>]) -> Result<RetrievalResult> {
    let scores: Vec<Vec<f64>> = vectors.iter().map(|a| vectors.iter().map(|b| cosine(a, b)).collect()).collect();
    rank_by_scores(ids, labels, &scores)
}

/// `clean.mAP − perturbed.mAP`; negative when the perturbed run scores higher.
pub fn robustness_drop(clean: &RetrievalResult, perturbed: &RetrievalResult) -> Result<f64> {
    let key = |r: &RetrievalResult| {
        let mut v: Vec<(String, String)> = r.queries.iter().map(|q| (q.shape_id.clone(), q.label.clone())).collect();
        v.sort();
        v
    };
    if key(clean) != key(perturbed) {
        return Err(Error::ShapeMismatch("clean and perturbed runs cover different labeled queries".into()));
    }
    Ok(clean.map - perturbed.map)
}

/// Min-max normalize off-diagonal entries to [0, 1]; constant matrices map to 0.
fn normalize_distances(d: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = d.len();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                lo = lo.min(d[i][j]);
                hi = hi.max(d[i][j]);
            }
        }
    }
    let span = hi - lo;
    if !(span > 0.0) {
        log::warn!("late fusion: constant distance matrix contributes nothing");
    }
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j || !(span > 0.0) { 0.0 } else { (d[i][j] - lo) / span })
                .collect()
        })
        .collect()
}

/// Convex combination of normalized distance matrices, ranked ascending.
pub fn late_fuse(ids: &[String], labels: &[String], distances: &[Vec<Vec<f64>>], weights: &[f64]) -> Result<RetrievalResult> {
    if distances.is_empty() || distances.len() != weights.len() {
        return Err(Error::InvalidArgument("need one weight per distance matrix".into()));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || !(total > 0.0) {
        return Err(Error::InvalidArgument("weights must be non-negative with a positive sum".into()));
    }
    let n = ids.len();
    if distances.iter().any(|d| d.len() != n || d.iter().any(|r| r.len() != n)) {
        return Err(Error::ShapeMismatch("distance matrices differ in shape".into()));
    }
    let mut fused = vec![vec![0.0; n]; n];
    for (d, w) in distances.iter().zip(weights) {
        let nd = normalize_distances(d);
        for i in 0..n {
            for j in 0..n {
                fused[i][j] += w / total * nd[i][j];
            }
        }
    }
    let scores: Vec<Vec<f64>> = fused.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    rank_by_scores(ids, labels, &scores)
}

/// Per-family per-channel z-score, then channel concatenation.
pub fn concat_local(families: &[&DescriptorMatrix]) -> Result<DescriptorMatrix> {
    let first = families.first().ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
    let n = first.n_rows();
    if let Some(f) = families.iter().find(|f| f.n_rows() != n) {
        return Err(Error::ShapeMismatch(format!("{} has {} rows, expected {n}", f.family, f.n_rows())));
    }
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    for f in families {
        for c in 0..f.dim() {
            let col = f.column(c);
            let mean = col.iter().sum::<f64>() / n.max(1) as f64;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
            columns.push(col.iter().map(|v| (v - mean) / (std + 1e-12)).collect());
            names.push(format!("{}:{}", f.family, f.channel_names[c]));
        }
    }
    let mut data = Vec::with_capacity(n * columns.len());
    for i in 0..n {
        data.extend(columns.iter().map(|c| c[i]));
    }
    let params = serde_json::json!({
        "families": families.iter().map(|f| f.family).collect::<Vec<_>>(),
        "params": families.iter().map(|f| f.params.clone()).collect::<Vec<_>>(),
    });
    DescriptorMatrix::new(data, n, names, Family::Concat, params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub family: Family,
    pub shapes: usize,
    pub seconds_per_shape: f64,
    pub threads: usize,
    pub environment: String,
}

/// Mean wall-clock extraction time per shape on a single worker thread,
/// bypassing any cache.
pub fn timing_harness(meshes: &[crate::mesh::Mesh], family: Family, cfg: &crate::pipeline::DescriptorConfig) -> Result<Timing> {
    if meshes.is_empty() {
        return Err(Error::InvalidArgument("timing needs at least one shape".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let total = pool.install(|| -> Result<f64> {
        let mut total = 0.0;
        for m in meshes {
            let start = std::time::Instant::now();
            crate::pipeline::extract(m, family, cfg)?;
            total += start.elapsed().as_secs_f64();
        }
        Ok(total)
    })?;
    Ok(Timing {
        family,
        shapes: meshes.len(),
        seconds_per_shape: total / meshes.len() as f64,
        threads: 1,
        environment: format!(
            "{}-{} cpus={}",
            std::env::consts::OS,
            std::env::consts::ARCH,
            std::thread::available_parallelism().map_or(1, |n| n.get())
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn ap_by_definition() {
        assert!((average_precision(&[true, false, true]) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_perfect() {
        let codes = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let r = retrieve_vectors(&s(&["a", "b", "c"]), &s(&["x", "x", "x"]), &codes).unwrap();
        assert_eq!((r.map, r.top1), (1.0, 1.0));
    }

    #[test]
    fn one_hot_classes() {
        let codes = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let r = retrieve_vectors(&s(&["a", "b", "c", "d"]), &s(&["x", "x", "y", "y"]), &codes).unwrap();
        assert_eq!(r.top1, 1.0);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn singletons_skipped() {
        let codes = vec![vec![1.0], vec![1.0], vec![1.0]];
        let r = retrieve_vectors(&s(&["a", "b", "c"]), &s(&["x", "x", "y"]), &codes).unwrap();
        assert_eq!(r.skipped, s(&["c"]));
        assert!(retrieve_vectors(&s(&["a", "b"]), &s(&["x", "y"]), &codes[..2]).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        // All codes identical: ranking follows id order.
        let codes = vec![vec![1.0]; 4];
        let r = retrieve_vectors(&s(&["d", "b", "a", "c"]), &s(&["x", "y", "x", "y"]), &codes).unwrap();
        let first: Vec<&str> = r.queries[0].ranking.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(first, ["a", "b", "c"]);
    }

    #[test]
    fn drops() {
        let mk = |m| RetrievalResult { queries: vec![], map: m, top1: 0.0, skipped: vec![] };
        assert_eq!(robustness_drop(&mk(0.5), &mk(0.5)).unwrap(), 0.0);
        assert!((robustness_drop(&mk(0.344), &mk(0.358)).unwrap() + 0.014).abs() < 1e-12);
    }

    #[test]
    fn fusion_reductions() {
        let ids = s(&["a", "b", "c"]);
        let labels = s(&["x", "x", "y"]);
        let codes = vec![vec![1.0, 0.1], vec![0.9, 0.5], vec![0.0, 1.0]];
        let single = retrieve_vectors(&ids, &labels, &codes).unwrap();
        let d = cosine_distance_matrix(&codes);
        let fused = late_fuse(&ids, &labels, &[d.clone()], &[1.0]).unwrap();
        let order = |r: &RetrievalResult| -> Vec<Vec<String>> {
            r.queries.iter().map(|q| q.ranking.iter().map(|x| x.0.clone()).collect()).collect()
        };
        assert_eq!(order(&single), order(&fused));
        let rev: Vec<Vec<f64>> = d.iter().map(|r| r.iter().map(|v| 2.0 - v).collect()).collect();
        let w10 = late_fuse(&ids, &labels, &[d.clone(), rev.clone()], &[1.0, 0.0]).unwrap();
        assert_eq!(order(&w10), order(&single));
        // Opposite rankings averaged: every pair ties, id order decides.
        let tie = late_fuse(&ids, &labels, &[d, rev], &[0.5, 0.5]).unwrap();
        assert_eq!(order(&tie)[0], s(&["b", "c"]));
    }

    #[test]
    fn concat_bookkeeping() {
        let a = DescriptorMatrix::new(vec![1.0, 2.0, 3.0, 5.0], 2, s(&["p", "q"]), Family::Hks, serde_json::Value::Null).unwrap();
        let c = concat_local(&[&a, &a]).unwrap();
        assert_eq!(c.dim(), 4);
        assert_eq!(c.channel_names, s(&["hks:p", "hks:q", "hks:p", "hks:q"]));
        assert_eq!(c.row(0)[..2], c.row(0)[2..]);
    }

    #[test]
    fn timing_guards_and_repeats() {
        let cfg = crate::pipeline::DescriptorConfig::default();
        assert!(timing_harness(&[], Family::Hks, &cfg).is_err());
        let m = vec![crate::mesh::preprocess(&crate::fixtures::icosphere(2)).unwrap()];
        let a = timing_harness(&m, Family::Hks, &cfg).unwrap();
        assert_eq!((a.shapes, a.threads), (1, 1));
        assert!(a.seconds_per_shape > 0.0);
    }
}
