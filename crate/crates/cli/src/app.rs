//! Subcommands of the `incmix` binary.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use incmix_core::gibbs::{fit, RhoGrid, TemporalPrior};
use incmix_core::model::{ModelConfig, PosteriorDraws};
use incmix_core::predict::{interpolate_spatial, predict_temporal, summarize, QuantitySet, Scope, SummaryOptions};
use incmix_core::rng::RngStream;
use incmix_core::select::{select_k, DEFAULT_THRESHOLD};
use incmix_core::simgen::{evaluate, generate_setting1, generate_setting2, Setting1, Setting2, SimulationSizes};

use crate::error::{CliError, Result};
use crate::io::{self, fmt_f64, DataPaths, Dataset, InterpolatedRow};
use crate::manifest::{InputDigest, RunManifest};

/// Environment variable holding the default seed.
pub const SEED_ENV: &str = "INCMIX_SEED";

// Streams for post-processing are split off the run seed so they never
// coincide with the sampler's own stream.
const SUMMARY_STREAM: u64 = 0x5355_4d4d;
const INTERPOLATE_STREAM: u64 = 0x494e_5450;
const PREDICT_STREAM: u64 = 0x5052_4544;

#[derive(Debug, Parser)]
#[command(name = "incmix", version, about = "Spatio-temporal log-normal mixtures for grouped income data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the Gibbs sampler and write the stored draws and a run manifest.
    Fit(FitArgs),
    /// Posterior summaries of income measures for every area and fitted period.
    Summarize(SummarizeArgs),
    /// Draw spatial effects of the non-sampled areas for every stored sweep.
    Interpolate(InterpolateArgs),
    /// Summaries for periods after the last fitted one.
    Predict(PredictArgs),
    /// Matching fractions over a range of component counts.
    SelectK(SelectKArgs),
    /// Generate a synthetic dataset with its true income measures.
    Simulate(SimulateArgs),
    /// RMSE and interval coverage of a summary against simulated truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory with counts.csv, classes.csv, covariates.csv, edges.csv and partition.csv.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    counts: Option<PathBuf>,
    #[arg(long)]
    classes: Option<PathBuf>,
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Directed edge list `from,to`.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Sampled area ids.
    #[arg(long)]
    partition: Option<PathBuf>,
}

impl DataArgs {
    fn paths(&self) -> Result<DataPaths> {
        let pick = |explicit: &Option<PathBuf>, name: &str| -> Result<PathBuf> {
            match (explicit, &self.data_dir) {
                (Some(p), _) => Ok(p.clone()),
                (None, Some(d)) => Ok(d.join(format!("{name}.csv"))),
                (None, None) => Err(CliError::Usage(format!("--{name} or --data-dir is required"))),
            }
        };
        Ok(DataPaths {
            counts: pick(&self.counts, "counts")?,
            classes: pick(&self.classes, "classes")?,
            covariates: pick(&self.covariates, "covariates")?,
            edges: pick(&self.edges, "edges")?,
            partition: pick(&self.partition, "partition")?,
        })
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// JSON document with the fields of the model configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config file and the INCMIX_SEED environment variable.
    #[arg(long)]
    seed: Option<u64>,
    /// sar-rw, two-way or spatial-only.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    components: Option<usize>,
    /// Stored-phase sweeps.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Number of points on the spatial-correlation grid.
    #[arg(long)]
    grid_points: Option<usize>,
}

impl ModelArgs {
    fn build(&self) -> Result<ModelConfig> {
        let (mut config, config_seed) = match &self.config {
            Some(path) => read_config(path)?,
            None => (ModelConfig::default(), None),
        };
        if let Some(v) = &self.variant {
            config.variant = v.parse()?;
        }
        if let Some(k) = self.components {
            config.n_components = k;
        }
        if let Some(n) = self.iterations {
            config.mcmc.iterations = n;
        }
        if let Some(n) = self.burn_in {
            config.mcmc.burn_in = n;
        }
        if let Some(n) = self.thin {
            config.mcmc.thin = n;
        }
        if let Some(n) = self.grid_points {
            config.rho_grid_points = n;
        }
        config.mcmc.seed = resolve_seed(self.seed, config_seed, std::env::var(SEED_ENV).ok().as_deref())?;
        config.validate()?;
        Ok(config)
    }
}

/// The config echo and the seed it states explicitly, if any.
fn read_config(path: &Path) -> Result<(ModelConfig, Option<u64>)> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |e: serde_json::Error| CliError::Usage(format!("{}: invalid configuration: {e}", path.display()));
    let value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
    let seed = value.pointer("/mcmc/seed").and_then(serde_json::Value::as_u64);
    let config = serde_json::from_value(value).map_err(bad)?;
    Ok((config, seed))
}

/// Command line, then an explicit config value, then the environment, then 1.
pub fn resolve_seed(cli: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = cli.or(config) {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        None => Ok(1),
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Draws CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Manifest path; defaults to the draws path with extension `manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DrawsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Draws CSV written by `fit`.
    #[arg(long)]
    draws: PathBuf,
}

#[derive(Debug, Args)]
struct SummaryArgs {
    /// Interval probability.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Comma-separated subset of ai, mi, gini, bins, or `all`.
    #[arg(long, default_value = "all")]
    quantities: String,
    /// Counts file giving household totals of cells outside the fitted data.
    #[arg(long)]
    totals: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    #[command(flatten)]
    source: DrawsArgs,
    #[command(flatten)]
    summary: SummaryArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InterpolateArgs {
    #[command(flatten)]
    source: DrawsArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    source: DrawsArgs,
    #[command(flatten)]
    summary: SummaryArgs,
    /// Survey intervals from the last fitted period to the first predicted one.
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    /// Number of predicted periods, one interval apart after the first.
    #[arg(long, default_value_t = 1)]
    periods: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the temporal-effect draws at the first predicted period.
    #[arg(long)]
    eta_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectKArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Inclusive range `a..b`.
    #[arg(long)]
    range: String,
    /// Fits run concurrently on at most this many threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scale {
    Desk,
    Full,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// 1: SAR and random-walk effects; 2: deterministic effects with blocks.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    setting: u8,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    scale: Scale,
    #[arg(long)]
    areas: Option<usize>,
    #[arg(long)]
    sampled: Option<usize>,
    /// Fitted periods.
    #[arg(long)]
    periods: Option<usize>,
    /// Periods generated after the fitted ones.
    #[arg(long)]
    holdout: Option<usize>,
    #[arg(long)]
    min_total: Option<u32>,
    #[arg(long)]
    max_total: Option<u32>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// truth.csv written by `simulate`.
    #[arg(long)]
    truth: PathBuf,
    /// Class counts of every cell, truth_counts.csv from `simulate`.
    #[arg(long)]
    truth_counts: PathBuf,
    #[arg(long)]
    summary: PathBuf,
    /// in-sample, spatial or temporal; all scopes present when omitted.
    #[arg(long)]
    scope: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse `argv` (including the program name), run the command and return
/// the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Interpolate(a) => cmd_interpolate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::SelectK(a) => cmd_select_k(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let config = a.model.build()?;
    let paths = a.data.paths()?;
    let roles = ["counts", "classes", "covariates", "edges", "partition"];
    let inputs = roles
        .iter()
        .zip(paths.all())
        .map(|(role, p)| InputDigest::of(role, p))
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = RunManifest::start("fit", &config, inputs);
    let ds = manifest.phase("load", || io::load_dataset(&paths))?;
    let draws = manifest.phase("sample", || Ok(fit(&ds.panel, &ds.graph, &config)?))?;
    manifest.phase("write", || io::write_draws(&a.out, &draws, &ds.areas))?;
    let manifest_path = a.manifest.unwrap_or_else(|| a.out.with_extension("manifest.json"));
    manifest.write(&manifest_path)?;
    let stored: usize = draws.iter().map(PosteriorDraws::len).sum();
    eprintln!("wrote {stored} draws to {}", a.out.display());
    Ok(())
}

struct Loaded {
    ds: Dataset,
    config: ModelConfig,
    draws: Vec<PosteriorDraws>,
    grid: RhoGrid,
}

fn load_draws(a: &DrawsArgs) -> Result<Loaded> {
    let config = a.model.build()?;
    let ds = io::load_dataset(&a.data.paths()?)?;
    let (draws, grid) = io::read_draws(&a.draws, &config, &ds.areas, &ds.graph)?;
    Ok(Loaded {
        ds,
        config,
        draws,
        grid,
    })
}

fn summary_options(a: &SummaryArgs, future_steps: Vec<f64>) -> Result<SummaryOptions> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(CliError::Usage(format!("--level must lie in (0, 1), got {}", a.level)));
    }
    Ok(SummaryOptions {
        level: a.level,
        quantities: QuantitySet::parse(&a.quantities)?,
        future_steps,
        ..SummaryOptions::default()
    })
}

fn cmd_summarize(a: SummarizeArgs) -> Result<()> {
    let l = load_draws(&a.source)?;
    let opts = summary_options(&a.summary, Vec::new())?;
    let totals = a.summary.totals.as_deref().map(|p| io::read_totals(p, &l.ds.areas)).transpose()?;
    let mut rng = RngStream::new(l.config.mcmc.seed).split(SUMMARY_STREAM);
    let table = summarize(&l.draws, &l.ds.panel, &l.grid, &opts, totals.as_ref(), &mut rng)?;
    io::write_summary(&a.out, &table, &l.ds.areas)
}

fn cmd_interpolate(a: InterpolateArgs) -> Result<()> {
    let l = load_draws(&a.source)?;
    let base = RngStream::new(l.config.mcmc.seed).split(INTERPOLATE_STREAM);
    let mut rows = Vec::new();
    let mut k = 1;
    for (c, chain) in l.draws.iter().enumerate() {
        let mut rng = base.split(c as u64);
        for (s, state) in chain.states.iter().enumerate() {
            k = state.n_components();
            let values = state
                .effects
                .iter()
                .flat_map(|e| interpolate_spatial(&mut rng, e, &l.grid))
                .collect();
            rows.push(InterpolatedRow {
                period: chain.period,
                sweep: s + 1,
                values,
            });
        }
    }
    io::write_interpolated(&a.out, &l.ds.areas, k, &rows)
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    if a.periods == 0 {
        return Err(CliError::Usage("--periods must be at least 1".into()));
    }
    let l = load_draws(&a.source)?;
    let variant = l.draws[0].config.variant;
    let prior = TemporalPrior::of(variant);
    if prior == TemporalPrior::Absent {
        return Err(incmix_core::Error::Config(format!("the {variant:?} model has no period effects to predict")).into());
    }
    let mut steps = vec![a.horizon];
    steps.resize(a.periods, 1.0);
    let opts = summary_options(&a.summary, steps)?;
    let totals = a.summary.totals.as_deref().map(|p| io::read_totals(p, &l.ds.areas)).transpose()?;
    let rng = RngStream::new(l.config.mcmc.seed).split(PREDICT_STREAM);
    let mut table = summarize(&l.draws, &l.ds.panel, &l.grid, &opts, totals.as_ref(), &mut rng.split(0))?;
    table.rows.retain(|r| r.scope == Scope::Temporal);
    io::write_summary(&a.out, &table, &l.ds.areas)?;
    if let Some(path) = &a.eta_out {
        let mut eta_rng = rng.split(1);
        let draws = l.draws[0]
            .states
            .iter()
            .map(|s| {
                s.effects
                    .iter()
                    .map(|e| predict_temporal(&mut eta_rng, e, a.horizon, prior))
                    .collect::<std::result::Result<Vec<_>, _>>()
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let label = format!("{}+{}", l.ds.panel.n_periods() - 1, a.horizon);
        io::write_eta_draws(path, &label, &draws)?;
    }
    Ok(())
}

/// Inclusive `a..b`, or a single number.
pub fn parse_range(s: &str) -> Result<Vec<usize>> {
    let bad = || CliError::Usage(format!("--range expects a..b with 1 <= a <= b, got '{s}'"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a.trim(), b.trim().trim_start_matches('=')),
        None => (s.trim(), s.trim()),
    };
    let a: usize = a.parse().map_err(|_| bad())?;
    let b: usize = b.parse().map_err(|_| bad())?;
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

fn cmd_select_k(a: SelectKArgs) -> Result<()> {
    let ks = parse_range(&a.range)?;
    let config = a.model.build()?;
    let ds = io::load_dataset(&a.data.paths()?)?;
    let sel = select_k(&ds.panel, &ds.graph, &config, &ks, a.jobs, a.threshold)?;
    let mut s = String::from("k,fraction,exact_fraction,recommended\n");
    for r in &sel.reports {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.k,
            fmt_f64(r.fraction),
            fmt_f64(r.exact_fraction),
            u8::from(sel.recommended == Some(r.k))
        );
    }
    match &a.out {
        Some(p) => io::write_text(p, &s)?,
        None => print!("{s}"),
    }
    match sel.recommended {
        Some(k) => eprintln!("recommended K = {k}"),
        None => eprintln!("no K reached matching fraction {}", sel.threshold),
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut sizes = match a.scale {
        Scale::Desk => SimulationSizes::desk(),
        Scale::Full => SimulationSizes::full(),
    };
    if let Some(n) = a.areas {
        sizes.n_areas = n;
        if a.sampled.is_none() {
            sizes.n_sampled = sizes.n_sampled.min(n);
        }
    }
    if let Some(n) = a.sampled {
        sizes.n_sampled = n;
    }
    if let Some(n) = a.periods {
        sizes.n_periods = n;
    }
    if let Some(n) = a.holdout {
        sizes.holdout_periods = n;
    }
    if let Some(n) = a.min_total {
        sizes.total_range.0 = n;
    }
    if let Some(n) = a.max_total {
        sizes.total_range.1 = n;
    }
    let seed = resolve_seed(a.seed, None, std::env::var(SEED_ENV).ok().as_deref())?;
    let mut rng = RngStream::new(seed);
    let truth = match a.setting {
        1 => generate_setting1(&mut rng, &sizes, &Setting1::default())?,
        _ => generate_setting2(&mut rng, &sizes, &Setting2::default())?,
    };
    std::fs::create_dir_all(&a.out_dir).map_err(|source| CliError::Io {
        path: a.out_dir.clone(),
        source,
    })?;
    io::write_truth_dataset(&a.out_dir, &truth)?;
    io::write_truth_files(&a.out_dir, &truth)?;
    eprintln!(
        "setting {} with seed {seed}: {} areas ({} sampled), {} fitted + {} held-out periods in {}",
        a.setting,
        sizes.n_areas,
        sizes.n_sampled,
        sizes.n_periods,
        sizes.holdout_periods,
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let truth = io::read_truth(&a.truth, &a.truth_counts)?;
    let table = io::read_summary(&a.summary)?;
    let scopes: Vec<Scope> = match &a.scope {
        Some(s) => vec![s
            .parse()
            .map_err(|_| CliError::Usage(format!("unknown scope '{s}'")))?],
        None => [Scope::InSample, Scope::Spatial, Scope::Temporal]
            .into_iter()
            .filter(|sc| table.rows.iter().any(|r| r.scope == *sc))
            .collect(),
    };
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut s = String::from("scope,n_cells,ai_rmse,ai_coverage,n_count_cells,count_rmse,count_coverage\n");
    for scope in scopes {
        let m = evaluate(&truth, &table, scope)?;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            m.scope,
            m.n_cells,
            fmt_f64(m.ai_rmse),
            fmt_f64(m.ai_coverage),
            m.n_count_cells,
            opt(m.count_rmse),
            opt(m.count_coverage)
        );
    }
    match &a.out {
        Some(p) => io::write_text(p, &s),
        None => {
            print!("{s}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(5), Some(6), Some("7")).unwrap(), 5);
        assert_eq!(resolve_seed(None, Some(6), Some("7")).unwrap(), 6);
        assert_eq!(resolve_seed(None, None, Some(" 7 ")).unwrap(), 7);
        assert_eq!(resolve_seed(None, None, None).unwrap(), 1);
        assert_eq!(resolve_seed(None, None, Some("x")).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_range("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_range("3").unwrap(), vec![3]);
        for bad in ["0..2", "4..2", "a..b", ""] {
            assert!(parse_range(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
