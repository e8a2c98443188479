//! Global shape codes: moment pooling, VLAD over fitted codebooks, PCA
//! projection, and the codebook fitting policies.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::DescriptorMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_CLUSTERS: usize = 16;
pub const DEFAULT_PCA_DIM: usize = 96;
pub const SUBSAMPLE_CAP: usize = 2000;
const KMEANS_MAX_ITERS: usize = 100;
const KMEANS_TOL: f64 = 1e-7;
const ARTIFACT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    #[default]
    Pooled,
    Vlad,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub codebook: Option<String>,
    pub projection: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalCode {
    pub vector: Vec<f64>,
    pub aggregation: AggregationKind,
    pub provenance: Provenance,
}

/// Scale to unit L2 norm; returns false (and leaves zeros) for a zero vector.
pub fn l2_normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 && n.is_finite() {
        v.iter_mut().for_each(|x| *x /= n);
        true
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
        false
    }
}

/// `[mean; std; max]` per channel, L2 normalized.
pub fn pool(descriptors: &DescriptorMatrix) -> GlobalCode {
    let d = descriptors.dim();
    let n = descriptors.n_rows().max(1) as f64;
    let mut mean = vec![0.0; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for row in descriptors.rows() {
        for c in 0..d {
            mean[c] += row[c];
            max[c] = max[c].max(row[c]);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for row in descriptors.rows() {
        for c in 0..d {
            var[c] += (row[c] - mean[c]).powi(2);
        }
    }
    if descriptors.n_rows() == 0 {
        max.iter_mut().for_each(|m| *m = 0.0);
    }
    let mut vector = mean;
    vector.extend(var.iter().map(|v| (v / n).sqrt()));
    vector.extend(max);
    if !l2_normalize(&mut vector) {
        log::warn!("pooled code is zero");
    }
    GlobalCode { vector, aggregation: AggregationKind::Pooled, provenance: Provenance::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub dataset: String,
    pub split_rule: String,
    pub rng_seed: u64,
    pub iterations: usize,
    pub objective: f64,
    pub samples: usize,
    /// Objective at the start of every Lloyd iteration.
    #[serde(default)]
    pub objective_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub centers: Vec<Vec<f64>>,
    pub c: usize,
    pub fit_meta: FitMeta,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; lowest index on ties.
fn nearest(row: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn f64_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

impl Codebook {
    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    /// Digest of the center coordinates.
    pub fn digest(&self) -> String {
        crate::rng::digest_bytes(&f64_bytes(self.centers.iter().flatten().copied()))
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        save_artifact(stem, "codebook", self.c, self.dim(), self.centers.iter().flatten().copied(), &self.digest(), self)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let cb: Codebook = load_artifact(stem)?;
        let (rows, flat) = read_binary(stem, "codebook")?;
        let dim = cb.dim();
        if rows != cb.c || flat.len() != rows * dim || flat != cb.centers.concat() {
            return Err(Error::Serde(format!("codebook binary at {} disagrees with its sidecar", stem.display())));
        }
        Ok(cb)
    }
}

/// Up to `cap` rows per shape, drawn by a per-shape rng stream and kept in
/// row order.
pub fn collect_samples(descriptors: &[&DescriptorMatrix], cap: usize, rng_seed: u64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (s, d) in descriptors.iter().enumerate() {
        let n = d.n_rows();
        if n <= cap {
            out.extend(d.rows().map(<[f64]>::to_vec));
        } else {
            let mut rng = crate::rng::stream(rng_seed, &["subsample", &s.to_string()]);
            let mut idx = sample(&mut rng, n, cap).into_vec();
            idx.sort_unstable();
            out.extend(idx.into_iter().map(|i| d.row(i).to_vec()));
        }
    }
    out
}

/// k-means with k-means++ seeding.
pub fn fit_codebook(samples: &[Vec<f64>], c: usize, rng_seed: u64, dataset: &str, split_rule: &str) -> Result<Codebook> {
    if c == 0 || samples.len() < c {
        return Err(Error::TooMany { requested: c, available: samples.len() });
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::ShapeMismatch("codebook samples differ in dimension".into()));
    }
    let mut rng = crate::rng::stream(rng_seed, &["kmeans++"]);
    let mut centers = vec![samples[rng.gen_range(0..samples.len())].clone()];
    let mut d2: Vec<f64> = samples.iter().map(|s| sq_dist(s, &centers[0])).collect();
    while centers.len() < c {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate(format!(
                "only {} distinct descriptor rows for {c} clusters",
                centers.len()
            )));
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = samples.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        // Guard against rounding landing on an existing center.
        if d2[pick] == 0.0 {
            pick = d2.iter().rposition(|&w| w > 0.0).expect("total > 0");
        }
        centers.push(samples[pick].clone());
        for (w, s) in d2.iter_mut().zip(samples) {
            *w = w.min(sq_dist(s, centers.last().unwrap()));
        }
    }
    let mut objective = f64::INFINITY;
    let mut iterations = 0;
    let mut objective_trace = Vec::new();
    for it in 1..=KMEANS_MAX_ITERS {
        iterations = it;
        let assign: Vec<(usize, f64)> = samples.par_iter().map(|s| nearest(s, &centers)).collect();
        let obj: f64 = assign.iter().map(|a| a.1).sum();
        debug_assert!(obj <= objective * (1.0 + 1e-9) + 1e-12, "k-means objective rose: {objective} -> {obj}");
        objective = obj;
        objective_trace.push(obj);
        let mut sums = vec![vec![0.0; dim]; c];
        let mut counts = vec![0usize; c];
        for (s, &(k, _)) in samples.iter().zip(&assign) {
            counts[k] += 1;
            for (a, v) in sums[k].iter_mut().zip(s) {
                *a += v;
            }
        }
        let mut shift: f64 = 0.0;
        for k in 0..c {
            if counts[k] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[k].iter().map(|v| v / counts[k] as f64).collect();
            shift = shift.max(sq_dist(&new, &centers[k]).sqrt());
            centers[k] = new;
        }
        if shift <= KMEANS_TOL {
            objective = samples.iter().map(|s| nearest(s, &centers).1).sum();
            objective_trace.push(objective);
            break;
        }
    }
    Ok(Codebook {
        centers,
        c,
        fit_meta: FitMeta {
            dataset: dataset.to_string(),
            split_rule: split_rule.to_string(),
            rng_seed,
            iterations,
            objective,
            samples: samples.len(),
            objective_trace,
        },
    })
}

/// Hard-assignment VLAD with signed square root, intra-cluster and global
/// L2 normalization.
pub fn vlad_encode(descriptors: &DescriptorMatrix, codebook: &Codebook) -> Result<GlobalCode> {
    let dim = codebook.dim();
    if descriptors.dim() != dim {
        return Err(Error::ShapeMismatch(format!(
            "descriptor dim {} vs codebook dim {dim}",
            descriptors.dim()
        )));
    }
    let mut v = vec![0.0; dim * codebook.c];
    for row in descriptors.rows() {
        let (k, _) = nearest(row, &codebook.centers);
        for (j, (x, c)) in row.iter().zip(&codebook.centers[k]).enumerate() {
            v[k * dim + j] += x - c;
        }
    }
    v.iter_mut().for_each(|x| *x = x.signum() * x.abs().sqrt());
    for block in v.chunks_mut(dim.max(1)) {
        l2_normalize(block);
    }
    if !l2_normalize(&mut v) {
        log::warn!("VLAD code is zero: every row sits on its center");
    }
    Ok(GlobalCode {
        vector: v,
        aggregation: AggregationKind::Vlad,
        provenance: Provenance { codebook: Some(codebook.digest()), projection: None },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// `components[i]` is the i-th principal axis.
    pub components: Vec<Vec<f64>>,
    pub d: usize,
    /// Variance along each kept axis.
    pub explained: Vec<f64>,
}

impl Projection {
    pub fn digest(&self) -> String {
        crate::rng::digest_bytes(&f64_bytes(self.mean.iter().chain(self.components.iter().flatten()).copied()))
    }

    /// Coordinates of `v` in the principal frame.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(v).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect()
    }

    /// Project and renormalize a code.
    pub fn apply(&self, code: &GlobalCode) -> Result<GlobalCode> {
        if code.vector.len() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "code dim {} vs projection input dim {}",
                code.vector.len(),
                self.mean.len()
            )));
        }
        let mut vector = self.project(&code.vector);
        l2_normalize(&mut vector);
        Ok(GlobalCode {
            vector,
            aggregation: code.aggregation,
            provenance: Provenance { codebook: code.provenance.codebook.clone(), projection: Some(self.digest()) },
        })
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let flat = self.mean.iter().chain(self.components.iter().flatten()).copied();
        save_artifact(stem, "projection", self.d + 1, self.mean.len(), flat, &self.digest(), self)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let p: Projection = load_artifact(stem)?;
        let (_, flat) = read_binary(stem, "projection")?;
        let expect: Vec<f64> = p.mean.iter().chain(p.components.iter().flatten()).copied().collect();
        if flat != expect {
            return Err(Error::Serde(format!("projection binary at {} disagrees with its sidecar", stem.display())));
        }
        Ok(p)
    }
}

/// Mean-centered PCA keeping up to `d` axes (capped at the data rank).
pub fn fit_projection(codes: &[Vec<f64>], d: usize) -> Result<Projection> {
    if codes.len() < 2 {
        return Err(Error::TooMany { requested: 2, available: codes.len() });
    }
    let dim = codes[0].len();
    if codes.iter().any(|c| c.len() != dim) {
        return Err(Error::ShapeMismatch("codes differ in dimension".into()));
    }
    let n = codes.len();
    let mean: Vec<f64> = (0..dim).map(|j| codes.iter().map(|c| c[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, dim, |i, j| codes[i][j] - mean[j]);
    let svd = x.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    let mut components = Vec::new();
    let mut explained = Vec::new();
    for &i in &order {
        let s = svd.singular_values[i];
        if components.len() == d || s <= 1e-10 * top || s == 0.0 {
            break;
        }
        let mut axis: Vec<f64> = vt.row(i).iter().copied().collect();
        let pivot = axis.iter().copied().fold(0.0_f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(axis);
        explained.push(s * s / n as f64);
    }
    let d = components.len();
    Ok(Projection { mean, components, d, explained })
}

#[derive(Serialize, Deserialize)]
struct Sidecar<T> {
    version: u32,
    kind: String,
    rows: usize,
    cols: usize,
    digest: String,
    binary_digest: String,
    body: T,
}

fn save_artifact<T: Serialize>(
    stem: &Path,
    kind: &str,
    rows: usize,
    cols: usize,
    flat: impl Iterator<Item = f64>,
    digest: &str,
    body: &T,
) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"DGMA");
    bytes.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(rows as u64).to_le_bytes());
    bytes.extend_from_slice(&(cols as u64).to_le_bytes());
    bytes.extend(f64_bytes(flat));
    let bin = stem.with_extension("bin");
    std::fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    let sidecar = Sidecar {
        version: ARTIFACT_VERSION,
        kind: kind.to_string(),
        rows,
        cols,
        digest: digest.to_string(),
        binary_digest: crate::rng::digest_bytes(&bytes),
        body,
    };
    let json = stem.with_extension("json");
    std::fs::write(&json, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&json, e))
}

fn load_artifact<T: for<'de> Deserialize<'de>>(stem: &Path) -> Result<T> {
    let json = stem.with_extension("json");
    let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: Sidecar<T> = serde_json::from_str(&text)?;
    if sidecar.version != ARTIFACT_VERSION {
        return Err(Error::Serde(format!("unsupported artifact version {}", sidecar.version)));
    }
    let bin = stem.with_extension("bin");
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if crate::rng::digest_bytes(&bytes) != sidecar.binary_digest {
        return Err(Error::Serde(format!("{} does not match its recorded digest", bin.display())));
    }
    Ok(sidecar.body)
}

fn read_binary(stem: &Path, kind: &str) -> Result<(usize, Vec<f64>)> {
    let bin = stem.with_extension("bin");
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() < 24 || &bytes[..4] != b"DGMA" || (bytes.len() - 24) % 8 != 0 {
        return Err(Error::Serde(format!("{} is not a {kind} artifact", bin.display())));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let flat = bytes[24..].chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((rows, flat))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationSpec {
    pub kind: AggregationKind,
    pub clusters: usize,
    /// PCA target dimension; `None` disables the projection.
    pub pca_dim: Option<usize>,
    pub rng_seed: u64,
    pub subsample_cap: usize,
}

impl Default for AggregationSpec {
    fn default() -> Self {
        AggregationSpec {
            kind: AggregationKind::Vlad,
            clusters: DEFAULT_CLUSTERS,
            pca_dim: Some(DEFAULT_PCA_DIM),
            rng_seed: crate::rng::DEFAULT_SEED,
            subsample_cap: SUBSAMPLE_CAP,
        }
    }
}

/// Local descriptors of one shape plus its manifest metadata.
#[derive(Clone, Debug)]
pub struct ShapeEntry {
    pub shape_id: String,
    pub label: String,
    pub split: String,
    pub local: DescriptorMatrix,
}

/// Codebook and projection fitted on some dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedArtifacts {
    pub dataset: String,
    pub codebook: Option<Codebook>,
    pub projection: Option<Projection>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CodebookPolicy {
    FitAll,
    /// Fit on shapes whose split equals this name; evaluate on the rest.
    FitSplit(String),
    Transfer(Box<FittedArtifacts>),
    Repeat(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRecord {
    pub dataset: String,
    pub policy: String,
    pub spec: AggregationSpec,
    pub rng_seed: u64,
    pub fit_shapes: Vec<String>,
    pub eval_shapes: Vec<String>,
    pub codebook_digest: Option<String>,
    pub projection_digest: Option<String>,
    pub local_digests: Vec<String>,
    pub source_dataset: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ProtocolRun {
    pub shape_ids: Vec<String>,
    pub labels: Vec<String>,
    pub codes: Vec<GlobalCode>,
    pub record: ProtocolRecord,
    pub artifacts: FittedArtifacts,
}

impl ProtocolRun {
    /// Indices of the evaluation shapes.
    pub fn eval_indices(&self) -> Vec<usize> {
        let eval: std::collections::HashSet<&String> = self.record.eval_shapes.iter().collect();
        (0..self.shape_ids.len()).filter(|&i| eval.contains(&self.shape_ids[i])).collect()
    }
}

fn raw_code(entry: &ShapeEntry, spec: &AggregationSpec, codebook: Option<&Codebook>) -> Result<GlobalCode> {
    match spec.kind {
        AggregationKind::Pooled => Ok(pool(&entry.local)),
        AggregationKind::Vlad => vlad_encode(&entry.local, codebook.expect("VLAD needs a codebook")),
    }
}

/// Fit codebook (VLAD) and projection (if enabled) on the given shapes.
pub fn fit_artifacts(entries: &[&ShapeEntry], spec: &AggregationSpec, rng_seed: u64, dataset: &str, split_rule: &str) -> Result<FittedArtifacts> {
    if entries.is_empty() {
        return Err(Error::Protocol("no shapes to fit on".into()));
    }
    let codebook = match spec.kind {
        AggregationKind::Vlad => {
            let locals: Vec<&DescriptorMatrix> = entries.iter().map(|e| &e.local).collect();
            let samples = collect_samples(&locals, spec.subsample_cap, rng_seed);
            Some(fit_codebook(&samples, spec.clusters, rng_seed, dataset, split_rule)?)
        }
        AggregationKind::Pooled => None,
    };
    let projection = match spec.pca_dim {
        Some(d) if entries.len() >= 2 => {
            let codes: Vec<Vec<f64>> = entries
                .iter()
                .map(|e| raw_code(e, spec, codebook.as_ref()).map(|c| c.vector))
                .collect::<Result<_>>()?;
            Some(fit_projection(&codes, d)?)
        }
        _ => None,
    };
    Ok(FittedArtifacts { dataset: dataset.to_string(), codebook, projection })
}

/// Encode every shape with already-fitted artifacts.
pub fn encode_all(entries: &[ShapeEntry], spec: &AggregationSpec, artifacts: &FittedArtifacts) -> Result<Vec<GlobalCode>> {
    entries
        .par_iter()
        .map(|e| {
            let code = raw_code(e, spec, artifacts.codebook.as_ref())?;
            match &artifacts.projection {
                Some(p) => p.apply(&code),
                None => Ok(code),
            }
        })
        .collect()
}

/// Produce codes under a fitting policy. `Repeat` yields one run per seed;
/// every other policy yields a single run.
pub fn run_protocol(entries: &[ShapeEntry], spec: &AggregationSpec, policy: &CodebookPolicy, dataset: &str) -> Result<Vec<ProtocolRun>> {
    if entries.is_empty() {
        return Err(Error::Protocol("empty shape set".into()));
    }
    let all: Vec<&ShapeEntry> = entries.iter().collect();
    let ids: Vec<String> = entries.iter().map(|e| e.shape_id.clone()).collect();
    let mut runs = Vec::new();
    let jobs: Vec<(String, u64, Vec<&ShapeEntry>, Vec<String>, Option<FittedArtifacts>)> = match policy {
        CodebookPolicy::FitAll => vec![("fit_all".into(), spec.rng_seed, all.clone(), ids.clone(), None)],
        CodebookPolicy::FitSplit(name) => {
            if entries.iter().any(|e| e.split.is_empty()) {
                return Err(Error::Protocol("fit_split needs a split label on every shape".into()));
            }
            let fit: Vec<&ShapeEntry> = entries.iter().filter(|e| &e.split == name).collect();
            if fit.is_empty() {
                return Err(Error::Protocol(format!("no shapes in fitting split '{name}'")));
            }
            let mut eval: Vec<String> = entries.iter().filter(|e| &e.split != name).map(|e| e.shape_id.clone()).collect();
            if eval.is_empty() {
                eval = ids.clone();
            }
            vec![(format!("fit_split:{name}"), spec.rng_seed, fit, eval, None)]
        }
        CodebookPolicy::Transfer(art) => {
            vec![(format!("transfer:{}", art.dataset), spec.rng_seed, Vec::new(), ids.clone(), Some((**art).clone()))]
        }
        CodebookPolicy::Repeat(seeds) => {
            if seeds.is_empty() {
                return Err(Error::Protocol("repeat policy needs at least one seed".into()));
            }
            seeds.iter().map(|&s| (format!("repeat:{s}"), s, all.clone(), ids.clone(), None)).collect()
        }
    };
    for (name, seed, fit, eval, given) in jobs {
        let artifacts = match given {
            Some(a) => {
                if spec.kind == AggregationKind::Vlad && a.codebook.is_none() {
                    return Err(Error::Protocol("transferred artifacts carry no codebook".into()));
                }
                a
            }
            None => fit_artifacts(&fit, spec, seed, dataset, &name)?,
        };
        let codes = encode_all(entries, spec, &artifacts)?;
        let record = ProtocolRecord {
            dataset: dataset.to_string(),
            policy: name,
            spec: spec.clone(),
            rng_seed: seed,
            fit_shapes: fit.iter().map(|e| e.shape_id.clone()).collect(),
            eval_shapes: eval,
            codebook_digest: artifacts.codebook.as_ref().map(Codebook::digest),
            projection_digest: artifacts.projection.as_ref().map(Projection::digest),
            local_digests: entries.iter().map(|e| e.local.digest()).collect(),
            source_dataset: matches!(policy, CodebookPolicy::Transfer(_)).then(|| artifacts.dataset.clone()),
        };
        runs.push(ProtocolRun {
            shape_ids: ids.clone(),
            labels: entries.iter().map(|e| e.label.clone()).collect(),
            codes,
            record,
            artifacts,
        });
    }
    Ok(runs)
}
