use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dgm::aggregation::AggregationKind;
use dgm::audit::{self, Outcome, RunConfig};
use dgm::descriptors::Family;
use dgm::fields::FieldMode;
use dgm::seeding::SeedMode;

#[derive(Parser)]
#[command(name = "dgm-audit", version, about = "Descriptor extraction, retrieval and diagnostic audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and cache local descriptors for every manifest shape.
    Extract(RunArgs),
    /// Aggregate, retrieve and emit mAP / top-1 tables.
    Retrieve(RunArgs),
    /// mAP drop under synthetic perturbations.
    Robustness(RunArgs),
    /// Run one named diagnostic.
    Diagnose {
        #[arg(value_name = "NAME")]
        diagnostic: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Signed mAP deltas between named retrieval runs.
    AuditCascade(RunArgs),
    /// Single-threaded seconds per shape.
    Timing(RunArgs),
    /// Write a synthetic class-structured dataset (OFF files + manifest).
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 4)]
        per_class: usize,
        #[arg(long, default_value_t = 0.02)]
        deformation: f64,
        #[arg(long, default_value_t = 2)]
        resolution: usize,
        #[arg(long, default_value_t = 13)]
        rng_seed: u64,
        #[arg(long, default_value = "synthetic")]
        name: String,
    },
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long = "family", value_delimiter = ',')]
    families: Vec<Family>,
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = parse_enum::<SeedMode>)]
    seed_mode: Option<SeedMode>,
    #[arg(long, value_parser = parse_enum::<FieldMode>)]
    field_mode: Option<FieldMode>,
    #[arg(long, value_delimiter = ',')]
    scales: Vec<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_parser = parse_enum::<AggregationKind>)]
    aggregation: Option<AggregationKind>,
    #[arg(long)]
    clusters: Option<usize>,
    /// PCA dimension; 0 disables the projection.
    #[arg(long)]
    pca_dim: Option<usize>,
}

/// Parse a snake_case enum through its serde representation.
fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

impl RunArgs {
    fn config(&self) -> dgm::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let cwd = |p: &PathBuf| std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.clone());
        if let Some(m) = &self.manifest {
            c.manifest = Some(cwd(m));
        }
        if let Some(o) = &self.output {
            c.output = cwd(o);
        }
        if let Some(o) = &self.cache {
            c.cache = Some(cwd(o));
        }
        if let Some(n) = &self.name {
            c.name = n.clone();
        }
        if !self.families.is_empty() {
            c.families = self.families.clone();
        }
        if let Some(s) = self.rng_seed {
            c.rng_seed = s;
        }
        let dgm = &mut c.descriptor.dgm;
        if let Some(k) = self.k {
            dgm.k = k;
        }
        if let Some(m) = self.seed_mode {
            dgm.seed_mode = m;
        }
        if let Some(m) = self.field_mode {
            dgm.fields.mode = m;
        }
        if !self.scales.is_empty() {
            dgm.fields.scales = self.scales.clone();
        }
        if let Some(s) = self.steps {
            dgm.fields.steps = s;
        }
        if let Some(a) = self.aggregation {
            c.aggregation.kind = a;
        }
        if let Some(n) = self.clusters {
            c.aggregation.clusters = n;
        }
        if let Some(d) = self.pca_dim {
            c.aggregation.pca_dim = (d > 0).then_some(d);
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> dgm::Result<bool> {
    let (args, outcome): (&RunArgs, Outcome) = match &cli.command {
        Command::Fixtures { out, classes, per_class, deformation, resolution, rng_seed, name } => {
            let meshes = dgm::fixtures::make_retrieval_set(*classes, *per_class, *deformation, *rng_seed, *resolution)?;
            dgm::fixtures::write_dataset(&meshes, out, name)?;
            println!("{}", out.join(format!("{name}.jsonl")).display());
            return Ok(true);
        }
        Command::Extract(a) => (a, audit::cmd_extract(&a.config()?)?),
        Command::Retrieve(a) => (a, audit::cmd_retrieve(&a.config()?)?),
        Command::Robustness(a) => (a, audit::cmd_robustness(&a.config()?)?),
        Command::Diagnose { diagnostic, run } => (run, audit::cmd_diagnose(&run.config()?, diagnostic)?),
        Command::AuditCascade(a) => (a, audit::cmd_audit_cascade(&a.config()?)?),
        Command::Timing(a) => (a, audit::cmd_timing(&a.config()?)?),
    };
    let out = args.config()?.output_dir();
    outcome.write(&out)?;
    for t in &outcome.tables {
        print!("{}", t.to_markdown());
        log::info!("wrote {}", out.join(format!("{}.csv", t.name)).display());
    }
    for f in &outcome.failures {
        eprintln!("skipped {} ({}): {}", f.shape_id, f.stage, f.message);
    }
    Ok(outcome.complete())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
