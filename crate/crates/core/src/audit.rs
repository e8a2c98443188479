//! Batch runner behind `dgm-audit`: run configuration, shape loading with
//! per-shape failure isolation, and one function per subcommand producing
//! report tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{run_protocol, AggregationKind, AggregationSpec, Codebook, CodebookPolicy, FittedArtifacts, Projection, ShapeEntry};
use crate::descriptors::{DescriptorMatrix, Family};
use crate::diagnostics as diag;
use crate::error::{Error, Result};
use crate::evaluation::{retrieve, robustness_drop, timing_harness, RetrievalResult};
use crate::fields::field_stack;
use crate::mesh::{EdgeGraph, Manifest, Mesh};
use crate::operators::{assemble, partial_eigs};
use crate::perturb::{perturb, perturbation_seed, PerturbKind};
use crate::pipeline::{extract_cached, DescriptorCache, DescriptorConfig};
use crate::report::Table;
use crate::seeding::select_seeds;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    #[default]
    FitAll,
    FitSplit { split: String },
    /// Reuse artifacts written by an earlier `retrieve` run.
    Transfer { artifacts: PathBuf },
    Repeat { seeds: Vec<u64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    pub severity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub perturbations: Vec<PerturbSpec>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            perturbations: vec![
                PerturbSpec { kind: PerturbKind::Noise, severity: 0.005 },
                PerturbSpec { kind: PerturbKind::Decimation, severity: 0.5 },
                PerturbSpec { kind: PerturbKind::Partial, severity: 0.2 },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub source: String,
    pub target: String,
    /// Whitespace-separated target index per source vertex; identity if absent.
    #[serde(default)]
    pub gt: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub tau: f64,
    pub sample: usize,
    pub ridge: f64,
    pub k_list: Vec<usize>,
    /// Families probed by the per-family diagnostics.
    pub families: Vec<Family>,
    pub pairs: Vec<PairSpec>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            tau: diag::DEFAULT_TAU,
            sample: 1000,
            ridge: diag::DEFAULT_RIDGE,
            k_list: vec![32, 64, 96],
            families: vec![Family::Dgm, Family::Hks, Family::Wks],
            pairs: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeRun {
    pub name: String,
    /// A retrieval CSV written by `retrieve`.
    pub table: PathBuf,
    pub family: Family,
    #[serde(default)]
    pub aggregation: Option<AggregationKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeDelta {
    pub name: String,
    pub minuend: String,
    pub subtrahend: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    pub runs: Vec<CascadeRun>,
    pub deltas: Vec<CascadeDelta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Label used in output table names, e.g. `fair_vlad`.
    pub name: String,
    pub manifest: Option<PathBuf>,
    pub output: PathBuf,
    /// Descriptor cache root; `$DGM_CACHE_DIR`, then `<output>/cache` otherwise.
    pub cache: Option<PathBuf>,
    pub families: Vec<Family>,
    pub rng_seed: u64,
    pub metric: Metric,
    pub descriptor: DescriptorConfig,
    pub aggregation: AggregationSpec,
    pub policy: PolicyConfig,
    pub robustness: RobustnessConfig,
    pub diagnostics: DiagnosticsConfig,
    pub cascade: CascadeConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            manifest: None,
            output: PathBuf::from("out"),
            cache: None,
            families: vec![Family::Dgm],
            rng_seed: crate::rng::DEFAULT_SEED,
            metric: Metric::Cosine,
            descriptor: DescriptorConfig::default(),
            aggregation: AggregationSpec::default(),
            policy: PolicyConfig::FitAll,
            robustness: RobustnessConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            cascade: CascadeConfig::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Push the global seed into every stochastic component.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        c.descriptor = c.descriptor.with_seed(c.rng_seed);
        c.aggregation.rng_seed = c.rng_seed;
        c
    }

    /// Digest of the canonical serialized config. Output and cache
    /// locations do not change results and are left out.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self.resolved()).expect("serializable");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output");
            obj.remove("cache");
        }
        // serde_json maps are sorted, so this is canonical.
        let full = crate::rng::digest_bytes(&serde_json::to_vec(&v).expect("serializable"));
        full[..12].to_string()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output)
    }

    pub fn cache(&self) -> DescriptorCache {
        if let Some(c) = &self.cache {
            return DescriptorCache::new(self.resolve(c));
        }
        DescriptorCache::from_env().unwrap_or_else(|| DescriptorCache::new(self.output_dir().join("cache")))
    }

    fn manifest(&self) -> Result<Manifest> {
        let p = self.manifest.as_ref().ok_or_else(|| Error::InvalidArgument("no manifest configured".into()))?;
        Manifest::load(&self.resolve(p))
    }
}

/// A shape that could not be processed, listed under the output table.
#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub shape_id: String,
    pub stage: String,
    pub message: String,
}

impl Failure {
    fn note(&self) -> String {
        format!("skipped {} ({}): {}", self.shape_id, self.stage, self.message)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub failures: Vec<Failure>,
}

impl Outcome {
    fn finish(mut self) -> Self {
        let notes: Vec<String> = self.failures.iter().map(Failure::note).collect();
        for t in &mut self.tables {
            t.footer.extend(notes.iter().cloned());
        }
        self
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for t in &self.tables {
            t.write(dir)?;
        }
        Ok(())
    }

    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Load every manifest shape, sorted by shape_id; failures are isolated.
fn load_shapes(cfg: &RunConfig) -> Result<(Vec<Mesh>, Vec<Failure>)> {
    let manifest = cfg.manifest()?;
    let mut records = manifest.records.clone();
    records.sort_by(|a, b| a.shape_id.cmp(&b.shape_id));
    let loaded: Vec<(String, Result<Mesh>)> =
        records.par_iter().map(|r| (r.shape_id.clone(), manifest.load_record(r))).collect();
    let mut meshes = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in loaded {
        match r {
            Ok(m) => meshes.push(m),
            Err(e) => {
                log::error!("{id}: {e}");
                failures.push(Failure { shape_id: id, stage: "load".into(), message: e.to_string() });
            }
        }
    }
    if meshes.is_empty() {
        return Err(Error::InvalidArgument("no shape in the manifest could be loaded".into()));
    }
    Ok((meshes, failures))
}

/// Descriptors for every mesh; failures are recorded and the shape dropped.
fn describe(meshes: &[Mesh], family: Family, cfg: &RunConfig, cache: &DescriptorCache) -> (Vec<ShapeEntry>, Vec<Failure>) {
    let results: Vec<Result<DescriptorMatrix>> = meshes
        .par_iter()
        .map(|m| extract_cached(m, family, &cfg.descriptor, Some(cache)).map(|(d, _)| d))
        .collect();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (m, r) in meshes.iter().zip(results) {
        match r {
            Ok(local) => entries.push(ShapeEntry {
                shape_id: m.shape_id.clone(),
                label: m.label.clone(),
                split: m.split.clone(),
                local,
            }),
            Err(e) => {
                log::error!("{} [{family}]: {e}", m.shape_id);
                failures.push(Failure { shape_id: m.shape_id.clone(), stage: family.to_string(), message: e.to_string() });
            }
        }
    }
    (entries, failures)
}

pub fn cmd_extract(cfg: &RunConfig) -> Result<Outcome> {
    let cfg = cfg.resolved();
    let digest = cfg.digest();
    let cache = cfg.cache();
    let (meshes, mut failures) = load_shapes(&cfg)?;
    let mut table = Table::new(&format!("extract_{}", cfg.name), &["config", "shape_id", "family", "rows", "dim", "digest"]);
    let mut produced = 0;
    for &family in &cfg.families {
        let (entries, f) = describe(&meshes, family, &cfg, &cache);
        failures.extend(f);
        produced += entries.len();
        for e in entries {
            table.push(vec![
                digest.as_str().into(),
                e.shape_id.into(),
                family.as_str().into(),
                (e.local.n_rows() as i64).into(),
                (e.local.dim() as i64).into(),
                e.local.digest()[..16].into(),
            ]);
        }
    }
    if produced == 0 {
        return Err(Error::Degenerate("every shape failed extraction".into()));
    }
    Ok(Outcome { tables: vec![table], failures }.finish())
}

fn codebook_policy(cfg: &RunConfig, family: Family) -> Result<CodebookPolicy> {
    Ok(match &cfg.policy {
        PolicyConfig::FitAll => CodebookPolicy::FitAll,
        PolicyConfig::FitSplit { split } => CodebookPolicy::FitSplit(split.clone()),
        PolicyConfig::Repeat { seeds } => CodebookPolicy::Repeat(seeds.clone()),
        PolicyConfig::Transfer { artifacts } => {
            CodebookPolicy::Transfer(Box::new(load_artifacts(&cfg.resolve(artifacts), family, cfg.aggregation.kind)?))
        }
    })
}

fn artifact_stem(dir: &Path, family: Family, what: &str) -> PathBuf {
    dir.join(family.as_str()).join(what)
}

fn save_artifacts(dir: &Path, family: Family, art: &FittedArtifacts) -> Result<()> {
    let d = dir.join(family.as_str());
    std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    if let Some(cb) = &art.codebook {
        cb.save(&artifact_stem(dir, family, "codebook"))?;
    }
    if let Some(p) = &art.projection {
        p.save(&artifact_stem(dir, family, "projection"))?;
    }
    Ok(())
}

fn load_artifacts(dir: &Path, family: Family, kind: AggregationKind) -> Result<FittedArtifacts> {
    let cb_stem = artifact_stem(dir, family, "codebook");
    let codebook = if cb_stem.with_extension("json").exists() { Some(Codebook::load(&cb_stem)?) } else { None };
    if kind == AggregationKind::Vlad && codebook.is_none() {
        return Err(Error::Protocol(format!("transfer without a source codebook for {family} in {}", dir.display())));
    }
    let pj_stem = artifact_stem(dir, family, "projection");
    let projection = if pj_stem.with_extension("json").exists() { Some(Projection::load(&pj_stem)?) } else { None };
    let dataset = codebook.as_ref().map(|c| c.fit_meta.dataset.clone()).unwrap_or_else(|| "source".into());
    Ok(FittedArtifacts { dataset, codebook, projection })
}

fn evaluate_run(run: &crate::aggregation::ProtocolRun) -> Result<RetrievalResult> {
    let idx = run.eval_indices();
    let ids: Vec<String> = idx.iter().map(|&i| run.shape_ids[i].clone()).collect();
    let labels: Vec<String> = idx.iter().map(|&i| run.labels[i].clone()).collect();
    let codes: Vec<_> = idx.iter().map(|&i| run.codes[i].clone()).collect();
    retrieve(&ids, &labels, &codes)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

pub const RETRIEVAL_COLUMNS: [&str; 11] =
    ["config", "family", "aggregation", "policy", "map", "map_std", "top1", "top1_std", "queries", "skipped_queries", "runs"];

pub fn cmd_retrieve(cfg: &RunConfig) -> Result<Outcome> {
    let cfg = cfg.resolved();
    let digest = cfg.digest();
    let cache = cfg.cache();
    let (meshes, mut failures) = load_shapes(&cfg)?;
    let dataset = cfg.manifest()?.dataset_name;
    let mut table = Table::new(&format!("retrieval_{}", cfg.name), &RETRIEVAL_COLUMNS);
    let art_dir = cfg.output_dir().join("artifacts").join(&cfg.name);
    for &family in &cfg.families {
        let (entries, f) = describe(&meshes, family, &cfg, &cache);
        failures.extend(f);
        if entries.is_empty() {
            return Err(Error::Degenerate(format!("no {family} descriptors to retrieve with")));
        }
        let runs = run_protocol(&entries, &cfg.aggregation, &codebook_policy(&cfg, family)?, &dataset)?;
        save_artifacts(&art_dir, family, &runs[0].artifacts)?;
        let results = runs.iter().map(evaluate_run).collect::<Result<Vec<_>>>()?;
        let (map, map_std) = mean_std(&results.iter().map(|r| r.map).collect::<Vec<_>>());
        let (top1, top1_std) = mean_std(&results.iter().map(|r| r.top1).collect::<Vec<_>>());
        let policy = match &cfg.policy {
            PolicyConfig::Repeat { seeds } => format!("repeat({})", seeds.len()),
            _ => runs[0].record.policy.clone(),
        };
        let agg = match cfg.aggregation.kind {
            AggregationKind::Pooled => "pooled",
            AggregationKind::Vlad => "vlad",
        };
        table.push(vec![
            digest.as_str().into(),
            family.as_str().into(),
            agg.into(),
            policy.into(),
            map.into(),
            map_std.into(),
            top1.into(),
            top1_std.into(),
            (results[0].queries.len() as i64).into(),
            (results[0].skipped.len() as i64).into(),
            (runs.len() as i64).into(),
        ]);
    }
    Ok(Outcome { tables: vec![table], failures }.finish())
}

pub fn cmd_robustness(cfg: &RunConfig) -> Result<Outcome> {
    let cfg = cfg.resolved();
    let digest = cfg.digest();
    let cache = cfg.cache();
    let (meshes, mut failures) = load_shapes(&cfg)?;
    let dataset = cfg.manifest()?.dataset_name;
    let mut table = Table::new(
        &format!("robustness_{}", cfg.name),
        &["config", "family", "perturbation", "severity", "clean_map", "perturbed_map", "drop"],
    );
    for &family in &cfg.families {
        let (entries, f) = describe(&meshes, family, &cfg, &cache);
        failures.extend(f);
        let runs = run_protocol(&entries, &cfg.aggregation, &codebook_policy(&cfg, family)?, &dataset)?;
        let clean = evaluate_run(&runs[0])?;
        let transfer = CodebookPolicy::Transfer(Box::new(runs[0].artifacts.clone()));
        for p in &cfg.robustness.perturbations {
            let tag = format!("{}@{}", p.kind.as_str(), p.severity);
            let perturbed: Vec<Result<Mesh>> = meshes
                .par_iter()
                .filter(|m| entries.iter().any(|e| e.shape_id == m.shape_id))
                .map(|m| {
                    let seed = perturbation_seed(cfg.rng_seed, &m.shape_id, p.kind, p.severity);
                    let mut out = perturb(m, p.kind, p.severity, seed)?;
                    out.shape_id = format!("{}~{tag}", m.shape_id);
                    Ok(out)
                })
                .collect();
            let mut ok = Vec::new();
            for (m, r) in meshes.iter().filter(|m| entries.iter().any(|e| e.shape_id == m.shape_id)).zip(perturbed) {
                match r {
                    Ok(x) => ok.push(x),
                    Err(e) => failures.push(Failure { shape_id: m.shape_id.clone(), stage: tag.clone(), message: e.to_string() }),
                }
            }
            let (mut pentries, f) = describe(&ok, family, &cfg, &cache);
            failures.extend(f.into_iter().map(|mut x| {
                x.stage = format!("{tag} {}", x.stage);
                x
            }));
            for e in &mut pentries {
                if let Some(base) = e.shape_id.split('~').next() {
                    e.shape_id = base.to_string();
                }
            }
            if pentries.len() != entries.len() {
                // Drops must compare the same queries.
                let keep: std::collections::HashSet<&str> = pentries.iter().map(|e| e.shape_id.as_str()).collect();
                let sub: Vec<ShapeEntry> = entries.iter().filter(|e| keep.contains(e.shape_id.as_str())).cloned().collect();
                let base_runs = run_protocol(&sub, &cfg.aggregation, &transfer, &dataset)?;
                let clean_sub = evaluate_run(&base_runs[0])?;
                let prun = run_protocol(&pentries, &cfg.aggregation, &transfer, &dataset)?;
                let pres = evaluate_run(&prun[0])?;
                push_drop(&mut table, &digest, family, p, &clean_sub, &pres)?;
            } else {
                let prun = run_protocol(&pentries, &cfg.aggregation, &transfer, &dataset)?;
                let pres = evaluate_run(&prun[0])?;
                push_drop(&mut table, &digest, family, p, &clean, &pres)?;
            }
        }
    }
    Ok(Outcome { tables: vec![table], failures }.finish())
}

fn push_drop(table: &mut Table, digest: &str, family: Family, p: &PerturbSpec, clean: &RetrievalResult, pert: &RetrievalResult) -> Result<()> {
    let drop = robustness_drop(clean, pert)?;
    table.push(vec![
        digest.into(),
        family.as_str().into(),
        p.kind.as_str().into(),
        p.severity.into(),
        clean.map.into(),
        pert.map.into(),
        drop.into(),
    ]);
    Ok(())
}

/// Table file name per diagnostic.
fn diagnostic_table(name: &str) -> &'static str {
    match name {
        "soft_voronoi" => "soft_voronoi_entropy",
        "moment_compression" => "information_compression",
        "csas" => "csas_extended",
        "spectral_compressibility" => "spectral_compressibility",
        "persistence" => "ph_diagnostic",
        "symmetry_side" => "symmetry_side",
        "nn_correspondence" => "pyfm_correspondence",
        "synchronized_seeds" => "synchronized_seed_dgm",
        "seed_permutation" => "seed_permutation",
        _ => "heat_response",
    }
}

fn read_gt(cfg: &RunConfig, pair: &PairSpec, n_source: usize, n_target: usize) -> Result<Vec<usize>> {
    let gt = match &pair.gt {
        None if n_source == n_target => (0..n_source).collect(),
        None => {
            return Err(Error::ShapeMismatch(format!(
                "{} -> {}: no correspondence file and vertex counts differ",
                pair.source, pair.target
            )))
        }
        Some(p) => {
            let p = cfg.resolve(p);
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            text.split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|e| Error::Serde(format!("{}: {e}", p.display()))))
                .collect::<Result<Vec<_>>>()?
        }
    };
    if gt.len() != n_source || gt.iter().any(|&j| j >= n_target) {
        return Err(Error::ShapeMismatch(format!("{} -> {}: correspondence does not fit the meshes", pair.source, pair.target)));
    }
    Ok(gt)
}

type Rows = Vec<Vec<crate::report::Cell>>;

/// Run `f` on every shape in parallel; rows are merged in shape order.
fn per_shape<F>(meshes: &[Mesh], failures: &mut Vec<Failure>, stage: &str, f: F) -> Rows
where
    F: Fn(&Mesh) -> Result<Rows> + Sync,
{
    let out: Vec<Result<Rows>> = meshes.par_iter().map(&f).collect();
    let mut rows = Vec::new();
    for (m, r) in meshes.iter().zip(out) {
        match r {
            Ok(r) => rows.extend(r),
            Err(e) => failures.push(Failure { shape_id: m.shape_id.clone(), stage: stage.into(), message: e.to_string() }),
        }
    }
    rows
}

pub fn cmd_diagnose(cfg: &RunConfig, name: &str) -> Result<Outcome> {
    diag::check_diagnostic(name)?;
    let cfg = cfg.resolved();
    let digest = cfg.digest();
    let dg = &cfg.diagnostics;
    let cache = cfg.cache();
    let (meshes, mut failures) = load_shapes(&cfg)?;
    let by_id: BTreeMap<&str, &Mesh> = meshes.iter().map(|m| (m.shape_id.as_str(), m)).collect();
    let d = digest.as_str();
    let local = |m: &Mesh, f: Family| extract_cached(m, f, &cfg.descriptor, Some(&cache)).map(|x| x.0);
    let stack_of = |m: &Mesh, keep_raw: bool| {
        let ops = assemble(m)?;
        let graph = EdgeGraph::from_mesh(m);
        let seeds = select_seeds(m, &graph, cfg.descriptor.dgm.seed_mode, cfg.descriptor.dgm.k, cfg.rng_seed)?;
        let mut fp = cfg.descriptor.dgm.fields.clone();
        fp.keep_raw = keep_raw;
        field_stack(&ops, &graph, &seeds, &fp)
    };
    let columns: &[&str];
    let rows: Rows = match name {
        "soft_voronoi" => {
            columns = &["config", "shape_id", "scale", "entropy", "margin"];
            per_shape(&meshes, &mut failures, name, |m| {
                let s = diag::soft_voronoi_stats(&stack_of(m, false)?, dg.tau)?;
                Ok(s.iter().map(|v| vec![d.into(), m.shape_id.as_str().into(), v.scale.into(), v.entropy.into(), v.margin.into()]).collect())
            })
        }
        "moment_compression" => {
            columns = &["config", "shape_id", "scale", "ridge", "pca6_explained", "ridge_r2"];
            per_shape(&meshes, &mut failures, name, |m| {
                let stack = stack_of(m, false)?;
                let mut rows: Rows = Vec::new();
                for alpha in diag::RIDGE_SWEEP {
                    for v in diag::moment_compression(&stack, dg.sample, cfg.rng_seed, alpha)? {
                        rows.push(vec![d.into(), m.shape_id.as_str().into(), v.scale.into(), alpha.into(), v.pca6_explained.into(), v.ridge_r2.into()]);
                    }
                }
                rows.sort_by(|a, b| a[2].as_f64().unwrap().total_cmp(&b[2].as_f64().unwrap()));
                Ok(rows)
            })
        }
        "spectral_compressibility" => {
            columns = &["config", "family", "shape_id", "k", "r2"];
            per_shape(&meshes, &mut failures, name, |m| {
                let ops = assemble(m)?;
                let ks: Vec<usize> = dg.k_list.iter().copied().filter(|&k| k <= m.n_vertices()).collect();
                let basis = partial_eigs(&ops, ks.iter().copied().max().unwrap_or(1))?;
                let mut rows = Vec::new();
                for &f in &dg.families {
                    for (k, r2) in diag::spectral_compressibility(&local(m, f)?, &basis, &ops.mass, &ks)? {
                        rows.push(vec![d.into(), f.as_str().into(), m.shape_id.as_str().into(), (k as i64).into(), r2.into()]);
                    }
                }
                Ok(rows)
            })
        }
        "persistence" => {
            columns = &["config", "family", "shape_id", "mean_total_persistence"];
            per_shape(&meshes, &mut failures, name, |m| {
                let graph = EdgeGraph::from_mesh(m);
                let mut rows = Vec::new();
                for &f in &dg.families {
                    let desc = local(m, f)?;
                    let total = (0..desc.dim()).map(|c| diag::persistence0d(&desc.column(c), &graph)).collect::<Result<Vec<_>>>()?;
                    let mean = total.iter().sum::<f64>() / total.len().max(1) as f64;
                    rows.push(vec![d.into(), f.as_str().into(), m.shape_id.as_str().into(), mean.into()]);
                }
                Ok(rows)
            })
        }
        "symmetry_side" => {
            columns = &["config", "family", "shape_id", "balanced_accuracy", "roc_auc"];
            per_shape(&meshes, &mut failures, name, |m| {
                let mut rows = Vec::new();
                for &f in &dg.families {
                    let r = diag::symmetry_side_probe(&local(m, f)?, m, cfg.rng_seed, None)?;
                    rows.push(vec![d.into(), f.as_str().into(), m.shape_id.as_str().into(), r.balanced_accuracy.into(), r.roc_auc.into()]);
                }
                Ok(rows)
            })
        }
        "seed_permutation" => {
            columns = &["config", "shape_id", "seed_mode", "relative_error", "global_cosine"];
            per_shape(&meshes, &mut failures, name, |m| {
                use rand::seq::SliceRandom;
                let mut perm: Vec<usize> = (0..m.n_vertices()).collect();
                perm.shuffle(&mut crate::rng::stream(cfg.rng_seed, &["seed_permutation", &m.shape_id]));
                let copy = m.permuted(&perm);
                let a = crate::pipeline::extract(m, Family::Dgm, &cfg.descriptor)?;
                let b = crate::pipeline::extract(&copy, Family::Dgm, &cfg.descriptor)?;
                let r = crate::seeding::align_descriptors_after_permutation(&a, &b, &perm)?;
                let mode = serde_json::to_value(cfg.descriptor.dgm.seed_mode)?;
                Ok(vec![vec![
                    d.into(),
                    m.shape_id.as_str().into(),
                    mode.as_str().unwrap_or("").into(),
                    r.relative_error.into(),
                    r.global_cosine.into(),
                ]])
            })
        }
        "heat_response" => {
            columns = &["config", "shape_id", "mean_negative_fraction", "max_negative_fraction", "min_response", "max_response"];
            per_shape(&meshes, &mut failures, name, |m| {
                let s = crate::fields::raw_response_stats(&stack_of(m, true)?)?;
                Ok(vec![vec![
                    d.into(),
                    m.shape_id.as_str().into(),
                    s.mean_negative_fraction.into(),
                    s.max_negative_fraction.into(),
                    s.min_response.into(),
                    s.max_response.into(),
                ]])
            })
        }
        _ => {
            // Pair diagnostics.
            if dg.pairs.is_empty() {
                return Err(Error::InvalidArgument(format!("{name} needs [[diagnostics.pairs]] in the config")));
            }
            columns = match name {
                "csas" => &["config", "family", "source", "target", "ridge", "direct_cosine", "r2", "relative_residual", "nn_accuracy"],
                "nn_correspondence" => &["config", "family", "source", "target", "mean_error", "hit10"],
                _ => &["config", "source", "target", "seeds", "overlap", "csas_r2", "mean_error", "hit10"],
            };
            let out: Vec<(String, Result<Rows>)> = dg
                .pairs
                .par_iter()
                .map(|p| {
                    let run = || -> Result<Rows> {
                        let find = |id: &str| by_id.get(id).copied().ok_or_else(|| Error::InvalidArgument(format!("pair shape '{id}' not loaded")));
                        let (src, tgt) = (find(&p.source)?, find(&p.target)?);
                        let gt = read_gt(&cfg, p, src.n_vertices(), tgt.n_vertices())?;
                        let tgraph = EdgeGraph::from_mesh(tgt);
                        let ids = (p.source.as_str(), p.target.as_str());
                        pair_rows(name, d, &cfg, src, tgt, &tgraph, &gt, ids, &local)
                    };
                    (format!("{}->{}", p.source, p.target), run())
                })
                .collect();
            let mut rows = Vec::new();
            for (id, r) in out {
                match r {
                    Ok(r) => rows.extend(r),
                    Err(e) => failures.push(Failure { shape_id: id, stage: name.into(), message: e.to_string() }),
                }
            }
            rows
        }
    };
    if rows.is_empty() {
        return Err(Error::Degenerate(format!("{name}: every shape failed")));
    }
    let mut table = Table::new(diagnostic_table(name), columns);
    for r in rows {
        table.push(r);
    }
    Ok(Outcome { tables: vec![table], failures }.finish())
}

#[allow(clippy::too_many_arguments)]
fn pair_rows(
    name: &str,
    d: &str,
    cfg: &RunConfig,
    src: &Mesh,
    tgt: &Mesh,
    tgraph: &EdgeGraph,
    gt: &[usize],
    ids: (&str, &str),
    local: &(dyn Fn(&Mesh, Family) -> Result<DescriptorMatrix> + Sync),
) -> Result<Rows> {
    let dg = &cfg.diagnostics;
    let mut rows: Rows = Vec::new();
    match name {
        "csas" => {
            for &f in &dg.families {
                let (a, b) = (local(src, f)?, local(tgt, f)?);
                for alpha in diag::RIDGE_SWEEP {
                    let r = diag::csas(&a, &b, gt, dg.sample, cfg.rng_seed, alpha)?;
                    rows.push(vec![
                        d.into(),
                        f.as_str().into(),
                        ids.0.into(),
                        ids.1.into(),
                        alpha.into(),
                        r.direct_cosine.into(),
                        r.r2.into(),
                        r.relative_residual.into(),
                        r.nn_accuracy.into(),
                    ]);
                }
            }
        }
        "nn_correspondence" => {
            for &f in &dg.families {
                let r = diag::nn_correspondence(&local(src, f)?, &local(tgt, f)?, tgt, tgraph, gt, dg.sample, cfg.rng_seed)?;
                rows.push(vec![d.into(), f.as_str().into(), ids.0.into(), ids.1.into(), r.mean_error.into(), r.hit10.into()]);
            }
        }
        _ => {
            let dgm = &cfg.descriptor.dgm;
            let sgraph = EdgeGraph::from_mesh(src);
            let sseeds = select_seeds(src, &sgraph, dgm.seed_mode, dgm.k, cfg.rng_seed)?;
            let independent = select_seeds(tgt, tgraph, dgm.seed_mode, dgm.k, cfg.rng_seed)?;
            let synced = diag::synchronized_seeds(&sseeds, gt, tgt.n_vertices())?;
            let sops = assemble(src)?;
            let tops = assemble(tgt)?;
            let a = crate::descriptors::extract_dgm_with(src, &sops, &sgraph, &sseeds, dgm)?;
            for (label, seeds) in [("independent", &independent), ("synchronized", &synced)] {
                let b = crate::descriptors::extract_dgm_with(tgt, &tops, tgraph, seeds, dgm)?;
                let c = diag::csas(&a, &b, gt, dg.sample, cfg.rng_seed, dg.ridge)?;
                let nn = diag::nn_correspondence(&a, &b, tgt, tgraph, gt, dg.sample, cfg.rng_seed)?;
                rows.push(vec![
                    d.into(),
                    ids.0.into(),
                    ids.1.into(),
                    label.into(),
                    diag::seed_overlap(seeds, &independent).into(),
                    c.r2.into(),
                    nn.mean_error.into(),
                    nn.hit10.into(),
                ]);
            }
        }
    }
    Ok(rows)
}

fn read_retrieval_map(path: &Path, run: &CascadeRun) -> Result<(f64, f64)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::InvalidArgument(format!("missing run '{}': {e}", run.name)))?;
    let headers = reader.headers().map_err(|e| Error::Serde(e.to_string()))?.clone();
    let col = |n: &str| headers.iter().position(|h| h == n).ok_or_else(|| Error::Serde(format!("{}: no column {n}", path.display())));
    let (cf, ca, cm, cs) = (col("family")?, col("aggregation")?, col("map")?, col("map_std")?);
    let agg = run.aggregation.map(|a| serde_json::to_value(a).expect("serializable").as_str().unwrap_or("").to_string());
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Serde(e.to_string()))?;
        if rec.get(cf) != Some(run.family.as_str()) || agg.as_deref().is_some_and(|a| rec.get(ca) != Some(a)) {
            continue;
        }
        let num = |i: usize| rec.get(i).unwrap_or("").parse::<f64>().map_err(|e| Error::Serde(e.to_string()));
        return Ok((num(cm)?, num(cs)?));
    }
    Err(Error::InvalidArgument(format!("missing run '{}': no {} row in {}", run.name, run.family, path.display())))
}

pub fn cmd_audit_cascade(cfg: &RunConfig) -> Result<Outcome> {
    let digest = cfg.digest();
    let mut runs = BTreeMap::new();
    for r in &cfg.cascade.runs {
        runs.insert(r.name.as_str(), read_retrieval_map(&cfg.resolve(&r.table), r)?);
    }
    let mut table = Table::new(
        &format!("protocol_cascade_{}", cfg.name),
        &["config", "delta", "minuend", "subtrahend", "minuend_map", "subtrahend_map", "delta_map", "repeat_std"],
    );
    for dlt in &cfg.cascade.deltas {
        let get = |n: &str| runs.get(n).copied().ok_or_else(|| Error::InvalidArgument(format!("missing run '{n}'")));
        let (a, b) = (get(&dlt.minuend)?, get(&dlt.subtrahend)?);
        table.push(vec![
            digest.as_str().into(),
            dlt.name.as_str().into(),
            dlt.minuend.as_str().into(),
            dlt.subtrahend.as_str().into(),
            a.0.into(),
            b.0.into(),
            (a.0 - b.0).into(),
            a.1.max(b.1).into(),
        ]);
    }
    Ok(Outcome { tables: vec![table], failures: Vec::new() })
}

pub fn cmd_timing(cfg: &RunConfig) -> Result<Outcome> {
    let cfg = cfg.resolved();
    let digest = cfg.digest();
    let (meshes, failures) = load_shapes(&cfg)?;
    let mut table = Table::new(
        &format!("timing_{}", cfg.name),
        &["config", "family", "shapes", "seconds_per_shape", "threads", "environment"],
    );
    for &family in &cfg.families {
        let t = timing_harness(&meshes, family, &cfg.descriptor)?;
        table.push(vec![
            digest.as_str().into(),
            family.as_str().into(),
            (t.shapes as i64).into(),
            t.seconds_per_shape.into(),
            (t.threads as i64).into(),
            t.environment.into(),
        ]);
    }
    Ok(Outcome { tables: vec![table], failures }.finish())
}
