//! `patternscope` command line: dataset generation, natural image ingest,
//! correlation curves, set comparison, reports and the tagging server.
//!
//! Data goes to stdout (or `--out`); progress, the effective configuration
//! and errors go to stderr.

pub mod config;

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use patternscope::corr::{BinWeighting, CorrelationCurve, CurveBin, CurveOptions};
use patternscope::pipeline::{
    curve_set, generate_dataset, group_report, ingest_natural, plan_dataset,
    sample_experiment_set, write_group_report, CurveSetReport, Manifest, ManifestHeader,
    PipelineError,
    RecordFilter, RenderOptions, SetKind, MANIFEST_FILE,
};
use patternscope::stats::{compare_sets, Alternative, CurveSet, StatsError};
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

pub use config::Config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Serve(#[from] patternscope_tagserve::ServeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("writing output: {0}")]
    Output(String),
}

impl CliError {
    /// Stable identifier used in the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Pipeline(PipelineError::EmptySet(_)) => "empty_set",
            CliError::Pipeline(PipelineError::Filter(_)) => "filter",
            CliError::Pipeline(PipelineError::Unreadable { .. }) => "unreadable_image",
            CliError::Pipeline(_) => "pipeline",
            CliError::Stats(_) => "stats",
            CliError::Serve(_) => "serve",
            CliError::Io { .. } => "io",
            CliError::Output(_) => "output",
        }
    }

    /// Single-line JSON error report.
    pub fn to_json_line(&self) -> String {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}

fn output_err(e: impl std::fmt::Display) -> CliError {
    CliError::Output(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "patternscope", version, about = "Random-weight CPPN images and their two-point correlation statistics")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, env = "PATTERNSCOPE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Data directory holding the manifest and images.
    #[arg(long, global = true, env = "PATTERNSCOPE_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Manifest path (default `<data-dir>/manifest.jsonl`).
    #[arg(long, global = true, env = "PATTERNSCOPE_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "PATTERNSCOPE_WORKERS")]
    pub workers: Option<usize>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the architecture grid for every seed and write the manifest.
    Gen(GenArgs),
    /// Resize and crop a tree of natural images into the dataset.
    Ingest(IngestArgs),
    /// Correlation curves of the records matching a filter, as CSV.
    Curves(CurvesArgs),
    /// Per-bin one-sided Welch tests between two filtered sets.
    Compare(CompareArgs),
    /// Mean curves of generated images grouped by (N, L), as CSV.
    Report(ReportArgs),
    /// Draw an experiment set and materialize its grayscale twins.
    Sample(SampleArgs),
    /// Merge tagging results into the manifest.
    #[command(subcommand)]
    Tags(TagsCommand),
    /// Run the tagging server.
    Serve(ServeArgs),
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Args, Default)]
pub struct GenArgs {
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub neurons: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub mu: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub omega: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// Explicit seed list.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed_count")]
    pub seeds: Option<Vec<u64>>,
    /// Use seeds `0..n`.
    #[arg(long)]
    pub seed_count: Option<u64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Count the records without rendering anything.
    #[arg(long)]
    pub plan_only: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Natural image tree; the first directory level is the category.
    #[arg(long, env = "PATTERNSCOPE_NATURAL_DIR")]
    pub input: Option<PathBuf>,
    /// Output side length (default: the render width).
    #[arg(long)]
    pub size: Option<usize>,
    /// Output directory (default `<data-dir>/natural`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep the ingested records out of the main manifest.
    #[arg(long)]
    pub no_merge: bool,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CurveFlags {
    /// Number of distance bins.
    #[arg(long)]
    pub bins: Option<usize>,
    /// `pair_count` or `uniform`.
    #[arg(long, value_parser = parse_weighting)]
    pub weighting: Option<BinWeighting>,
}

fn parse_weighting(s: &str) -> Result<BinWeighting, String> {
    match s {
        "pair_count" | "pair-count" => Ok(BinWeighting::PairCount),
        "uniform" => Ok(BinWeighting::Uniform),
        other => Err(format!("unknown weighting `{other}` (pair_count | uniform)")),
    }
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    /// Filter expression, e.g. `L=3,N=100` or `all`.
    pub filter: String,
    /// Use grayscale twins instead of colour images.
    #[arg(long)]
    pub grayscale: bool,
    #[command(flatten)]
    pub curve: CurveFlags,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Filter for set A, or `@FILE` to read a table written by `curves`.
    pub a: String,
    /// Filter for set B, or `@FILE`.
    pub b: String,
    /// Bins tested (and Bonferroni divisor).
    #[arg(long)]
    pub scope: Option<usize>,
    /// `a_greater` or `b_greater`.
    #[arg(long)]
    pub alternative: Option<Alternative>,
    /// Significance level before correction.
    #[arg(long)]
    pub alpha_base: Option<f64>,
    /// Take set A from grayscale twins.
    #[arg(long)]
    pub grayscale_a: bool,
    /// Take set B from grayscale twins.
    #[arg(long)]
    pub grayscale_b: bool,
    #[command(flatten)]
    pub curve: CurveFlags,
    /// Write the per-bin CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the JSON summary here.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Bins per group in the table (default: the comparison scope).
    #[arg(long)]
    pub max_bin: Option<usize>,
    #[command(flatten)]
    pub curve: CurveFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Images to draw.
    #[arg(long, default_value_t = 200)]
    pub size: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum TagsCommand {
    /// Replace manifest tags with a tag export CSV.
    Import {
        /// CSV with `record_id,participant_id,set_kind,tagged`.
        export: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "PATTERNSCOPE_BIND")]
    pub bind: Option<String>,
    #[arg(long, env = "PATTERNSCOPE_PORT")]
    pub port: Option<u16>,
    /// Event log directory (default `<data-dir>/tags`).
    #[arg(long, env = "PATTERNSCOPE_TAGS_DIR")]
    pub tags_dir: Option<PathBuf>,
    /// Session time limit in seconds.
    #[arg(long, env = "PATTERNSCOPE_TIME_LIMIT")]
    pub time_limit: Option<u64>,
    /// Built UI assets to serve at `/`.
    #[arg(long, env = "PATTERNSCOPE_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
}

impl CurveFlags {
    fn apply(&self, options: &mut CurveOptions) {
        if let Some(b) = self.bins {
            options.bins = b;
        }
        if let Some(w) = self.weighting {
            options.weighting = w;
        }
    }
}

/// Merges the config file, then global and subcommand flags.
pub fn effective_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.global.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let g = &cli.global;
    if let Some(d) = &g.data_dir {
        cfg.paths.data_dir = d.clone();
    }
    if let Some(m) = &g.manifest {
        cfg.paths.manifest = Some(m.clone());
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    match &cli.command {
        Command::Gen(a) => {
            let grid = &mut cfg.grid;
            if let Some(v) = &a.layers {
                grid.layers = v.clone();
            }
            if let Some(v) = &a.neurons {
                grid.neurons = v.clone();
            }
            if let Some(v) = &a.mu {
                grid.mu = v.clone();
            }
            if let Some(v) = &a.omega {
                grid.omega = v.clone();
            }
            if let Some(v) = &a.alpha {
                grid.alpha = v.clone();
            }
            if let Some(s) = &a.seeds {
                cfg.seeds = s.clone();
            }
            if let Some(n) = a.seed_count {
                cfg.seeds = (0..n).collect();
            }
            if let Some(w) = a.width {
                cfg.render.width = w;
            }
            if let Some(h) = a.height {
                cfg.render.height = h;
            }
        }
        Command::Ingest(a) => {
            if let Some(i) = &a.input {
                cfg.paths.natural_dir = Some(i.clone());
            }
        }
        Command::Curves(a) => a.curve.apply(&mut cfg.correlation),
        Command::Compare(a) => {
            a.curve.apply(&mut cfg.correlation);
            if let Some(s) = a.scope {
                cfg.stats.scope_bins = s;
            }
            if let Some(alt) = a.alternative {
                cfg.stats.alternative = alt;
            }
            if let Some(alpha) = a.alpha_base {
                cfg.stats.alpha_base = alpha;
            }
        }
        Command::Report(a) => a.curve.apply(&mut cfg.correlation),
        Command::Serve(a) => {
            let s = &mut cfg.serve;
            if let Some(b) = &a.bind {
                s.bind = b.clone();
            }
            if let Some(p) = a.port {
                s.port = p;
            }
            if let Some(t) = &a.tags_dir {
                s.tags_dir = Some(t.clone());
            }
            if let Some(t) = a.time_limit {
                s.time_limit_secs = t;
            }
            if let Some(d) = &a.static_dir {
                s.static_dir = Some(d.clone());
            }
        }
        Command::Sample(_) | Command::Tags(_) | Command::Config => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Output sink: a file when `path` is given, otherwise stdout.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|source| CliError::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            Box::new(BufWriter::new(File::create(p).map_err(|source| CliError::Io {
                path: p.to_path_buf(),
                source,
            })?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit_json(value: serde_json::Value) -> Result<(), CliError> {
    let mut out = sink(None)?;
    writeln!(out, "{value}").map_err(output_err)?;
    out.flush().map_err(output_err)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = effective_config(&cli)?;
    tracing::info!(
        "effective config {}",
        serde_json::to_string(&cfg).expect("config serializes")
    );
    match cli.command {
        Command::Gen(a) => gen(&cfg, a.plan_only),
        Command::Ingest(a) => ingest(&cfg, &a),
        Command::Curves(a) => curves(&cfg, &a),
        Command::Compare(a) => compare(&cfg, &a),
        Command::Report(a) => report(&cfg, &a),
        Command::Sample(a) => sample(&cfg, &a),
        Command::Tags(TagsCommand::Import { export }) => import_tags(&cfg, &export),
        Command::Serve(_) => serve(&cfg),
        Command::Config => {
            let mut out = sink(None)?;
            serde_json::to_writer_pretty(&mut out, &cfg).map_err(output_err)?;
            writeln!(out).map_err(output_err)?;
            out.flush().map_err(output_err)
        }
    }
}

fn load_manifest(cfg: &Config) -> Result<Manifest, CliError> {
    Ok(Manifest::load(&cfg.manifest_path())?)
}

fn gen(cfg: &Config, plan_only: bool) -> Result<(), CliError> {
    let (w, h) = (cfg.render.width, cfg.render.height);
    let specs = cfg.grid.len();
    if plan_only {
        let plan = plan_dataset(&cfg.grid, &cfg.seeds, w, h)?;
        return emit_json(json!({
            "specs": specs,
            "seeds": cfg.seeds.len(),
            "records": plan.len(),
            "rendered": false,
        }));
    }
    let data_dir = &cfg.paths.data_dir;
    tracing::info!(
        "rendering {} images ({specs} architectures x {} seeds) at {w}x{h} into {}",
        specs * cfg.seeds.len(),
        cfg.seeds.len(),
        data_dir.display()
    );
    let options = RenderOptions {
        width: w,
        height: h,
        workers: cfg.workers,
    };
    let manifest = generate_dataset(&cfg.grid, &cfg.seeds, data_dir, options)?;
    emit_json(json!({
        "specs": specs,
        "seeds": cfg.seeds.len(),
        "records": manifest.len(),
        "rendered": true,
        "manifest": data_dir.join(MANIFEST_FILE),
    }))
}

fn ingest(cfg: &Config, args: &IngestArgs) -> Result<(), CliError> {
    let input = cfg
        .paths
        .natural_dir
        .clone()
        .ok_or_else(|| CliError::Config("no natural image directory (use --input)".into()))?;
    let out = args.out.clone().unwrap_or_else(|| cfg.paths.data_dir.join("natural"));
    let size = args.size.unwrap_or(cfg.render.width);
    tracing::info!("ingesting {} at {size}px into {}", input.display(), out.display());
    let outcome = ingest_natural(&input, &out, size)?;
    let skipped = outcome.report.iter().filter(|r| r.action != "ingested").count();
    for row in outcome.report.iter().filter(|r| r.action != "ingested") {
        tracing::warn!("skipped {}: {}", row.path, row.reason);
    }

    let mut merged_into = None;
    if !args.no_merge {
        let target = cfg.manifest_path();
        let base = cfg.base_dir();
        let mut main = if target.exists() {
            Manifest::load(&target)?
        } else {
            Manifest::new(outcome.manifest.header.clone())
        };
        let prefix = relative_to(&out, &base);
        for r in &outcome.manifest.records {
            let mut r = r.clone();
            r.path = prefix.join(&r.path).to_string_lossy().replace('\\', "/");
            main.insert(r);
        }
        main.save(&target)?;
        merged_into = Some(target);
    }
    emit_json(json!({
        "ingested": outcome.manifest.len(),
        "skipped": skipped,
        "report": out.join("ingest_report.csv"),
        "merged_into": merged_into,
    }))
}

/// `path` relative to `base` when it lies below it, else `path` unchanged.
fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (p, b) = (abs(path), abs(base));
    match p.strip_prefix(&b) {
        Ok(rel) => rel.to_path_buf(),
        Err(_) => p,
    }
}

fn select(
    cfg: &Config,
    manifest: &Manifest,
    expr: &str,
    grayscale_flag: bool,
) -> Result<CurveSetReport, CliError> {
    if let Some(path) = expr.strip_prefix('@') {
        let report = read_curve_table(Path::new(path), expr)?;
        tracing::info!("{}: {} curves", expr, report.set.len());
        return Ok(report);
    }
    let filter: RecordFilter = expr.parse()?;
    let grayscale = grayscale_flag || filter.kind() == Some(SetKind::Grayscale);
    let report = curve_set(
        manifest,
        &cfg.base_dir(),
        &filter,
        grayscale,
        &cfg.correlation,
        cfg.workers,
    )?;
    if !report.degenerate.is_empty() {
        tracing::warn!(
            "{}: {} constant images left out ({})",
            expr,
            report.degenerate.len(),
            report.degenerate.join(", ")
        );
    }
    tracing::info!("{}: {} curves", expr, report.set.len());
    Ok(report)
}

#[derive(Deserialize)]
struct CurveRow {
    record_id: String,
    bin_lo: usize,
    bin_hi: usize,
    mean_rho: Option<f64>,
    pair_weight: u64,
    n_displacements: usize,
}

/// Reads a curve table as written by `curves`, one curve per record id in
/// order of first appearance.
pub fn read_curve_table(path: &Path, label: &str) -> Result<CurveSetReport, CliError> {
    let file = File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |e: csv::Error| CliError::Config(format!("{}: {e}", path.display()));
    let mut ids: Vec<String> = Vec::new();
    let mut curves: Vec<CorrelationCurve> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for row in csv::Reader::from_reader(file).deserialize() {
        let row: CurveRow = row.map_err(bad)?;
        let i = *index.entry(row.record_id.clone()).or_insert_with(|| {
            ids.push(row.record_id.clone());
            curves.push(CorrelationCurve { bins: Vec::new() });
            curves.len() - 1
        });
        curves[i].bins.push(CurveBin {
            lo: row.bin_lo,
            hi: row.bin_hi,
            mean_rho: row.mean_rho,
            pair_weight: row.pair_weight,
            n_displacements: row.n_displacements,
        });
    }
    if curves.is_empty() {
        return Err(PipelineError::EmptySet(label.to_string()).into());
    }
    Ok(CurveSetReport {
        set: CurveSet::new(label, curves),
        ids,
        degenerate: Vec::new(),
    })
}

fn curves(cfg: &Config, args: &CurvesArgs) -> Result<(), CliError> {
    let manifest = load_manifest(cfg)?;
    let report = select(cfg, &manifest, &args.filter, args.grayscale)?;
    let mut wtr = csv::Writer::from_writer(sink(args.out.as_deref())?);
    wtr.write_record(["record_id", "bin_lo", "bin_hi", "mean_rho", "pair_weight", "n_displacements"])
        .map_err(output_err)?;
    for (id, curve) in report.ids.iter().zip(&report.set.curves) {
        for b in &curve.bins {
            wtr.write_record([
                id.clone(),
                b.lo.to_string(),
                b.hi.to_string(),
                b.mean_rho.map(|v| v.to_string()).unwrap_or_default(),
                b.pair_weight.to_string(),
                b.n_displacements.to_string(),
            ])
            .map_err(output_err)?;
        }
    }
    wtr.flush().map_err(output_err)
}

fn compare(cfg: &Config, args: &CompareArgs) -> Result<(), CliError> {
    let tables_only = args.a.starts_with('@') && args.b.starts_with('@');
    let manifest = if tables_only {
        Manifest::new(ManifestHeader::new(None, Vec::new(), 0, 0))
    } else {
        load_manifest(cfg)?
    };
    let a = select(cfg, &manifest, &args.a, args.grayscale_a)?;
    let b = select(cfg, &manifest, &args.b, args.grayscale_b)?;
    let cmp = compare_sets(&a.set, &b.set, cfg.stats)?;
    let summary = cmp.summary();
    {
        let mut out = sink(args.out.as_deref())?;
        cmp.write_csv(&mut out).map_err(output_err)?;
        out.flush().map_err(output_err)?;
    }
    let doc = json!({
        "summary": summary,
        "sets": {
            "a": { "filter": args.a, "grayscale": args.grayscale_a, "n": a.set.len(), "degenerate": a.degenerate },
            "b": { "filter": args.b, "grayscale": args.grayscale_b, "n": b.set.len(), "degenerate": b.degenerate },
        },
        "config": { "stats": cfg.stats, "correlation": cfg.correlation, "manifest": cfg.manifest_path() },
    });
    tracing::info!(
        "{} of {} tested bins significant at {:e}; prefix {}",
        summary.significant_bins,
        summary.tested_bins,
        summary.alpha_corrected,
        summary.significance_prefix
    );
    if let Some(path) = &args.summary {
        let mut out = sink(Some(path))?;
        serde_json::to_writer_pretty(&mut out, &doc).map_err(output_err)?;
        writeln!(out).map_err(output_err)?;
        out.flush().map_err(output_err)?;
    }
    Ok(())
}

fn report(cfg: &Config, args: &ReportArgs) -> Result<(), CliError> {
    let manifest = load_manifest(cfg)?;
    let groups = group_report(&manifest, &cfg.base_dir(), &cfg.correlation, cfg.workers)?;
    let max_bin = args.max_bin.unwrap_or(cfg.stats.scope_bins);
    write_group_report(&groups, max_bin, sink(args.out.as_deref())?)?;
    Ok(())
}

fn sample(cfg: &Config, args: &SampleArgs) -> Result<(), CliError> {
    let mut manifest = load_manifest(cfg)?;
    let pairs = sample_experiment_set(&mut manifest, &cfg.base_dir(), args.size, args.seed)?;
    manifest.save(&cfg.manifest_path())?;
    let mut wtr = csv::Writer::from_writer(sink(None)?);
    wtr.write_record(["colour_id", "grayscale_id"]).map_err(output_err)?;
    for p in &pairs {
        wtr.write_record([&p.colour.id, &p.grayscale.id]).map_err(output_err)?;
    }
    wtr.flush().map_err(output_err)
}

fn import_tags(cfg: &Config, export: &Path) -> Result<(), CliError> {
    let mut manifest = load_manifest(cfg)?;
    let file = File::open(export).map_err(|source| CliError::Io {
        path: export.to_path_buf(),
        source,
    })?;
    let applied = manifest.apply_tag_export(file)?;
    manifest.save(&cfg.manifest_path())?;
    let tagged = manifest.records.iter().filter(|r| r.is_tagged()).count();
    emit_json(json!({ "applied": applied, "tagged_records": tagged }))
}

fn serve(cfg: &Config) -> Result<(), CliError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|source| CliError::Io {
            path: PathBuf::from("<runtime>"),
            source,
        })?;
    runtime.block_on(patternscope_tagserve::serve(cfg.serve_config()))?;
    Ok(())
}
