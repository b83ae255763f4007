//! Command-line surface: theorem verification, d-separation queries,
//! simulation, the identification test on tabular data, first-stage
//! checks, and table replication.
//!
//! Every command takes `--seed` and is fully deterministic given it.
//! `--config FILE` loads flat `key = value` defaults (keys are the long
//! option names); explicit flags override the file. Exit codes: 0 on
//! success, 2 on usage errors, 1 on data or runtime errors (and for
//! `verify-theorems` when counterexamples exist).

mod ingest;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use identest::dgp::{self, Design, DgpConfig};
use identest::effects::{estimate_dynamic_ate, estimate_mediation, TrimPolicy};
use identest::graph::Dag;
use identest::harness::{self, CellConfig};
use identest::idtest::{
    first_stage_check, median_run_all, SigmaZetaRule, Sidedness, TestSetup,
};
use identest::ml::SetupVariant;
use identest::records;
use identest::theorems::{self, Theorem, VerificationReport};

#[derive(Parser)]
#[command(
    name = "identest",
    version,
    about = "Identification testing for mediation and dynamic treatment models"
)]
struct Cli {
    /// Flat key = value config file; explicit flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exhaustively verify an identification theorem over the graph family.
    VerifyTheorems(VerifyArgs),
    /// Answer one d-separation query on a graph file.
    Dsep(DsepArgs),
    /// Draw a synthetic dataset and optionally dump it as CSV.
    Simulate(SimulateArgs),
    /// Run the identification test on a CSV dataset.
    Test(TestArgs),
    /// First-stage instrument relevance checks on a CSV dataset.
    FirstStage(FirstStageArgs),
    /// Replicate one simulation table at a given sample size.
    ReplicateTable(TableArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Human-readable aligned text.
    Aligned,
    /// Line-delimited JSON records.
    Records,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TheoremArg {
    T1,
    T2,
    L1,
    T3,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    theorem: TheoremArg,
    /// Worker thread count (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Write counterexamples as JSON records to this path.
    #[arg(long, value_name = "PATH")]
    emit_counterexamples: Option<PathBuf>,
    /// Latent-confounder cap for the reduced post-treatment family (t3).
    #[arg(long, default_value_t = 1)]
    max_confounders: usize,
    #[arg(long, value_enum, default_value_t = Format::Aligned)]
    format: Format,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct DsepArgs {
    /// Graph file: `from -> to` per line, `#` comments, `U_` latents.
    #[arg(long, value_name = "PATH")]
    graph: PathBuf,
    /// First node set (comma-separated labels).
    #[arg(long)]
    a: String,
    /// Second node set.
    #[arg(long)]
    b: String,
    /// Conditioning set.
    #[arg(long, default_value = "")]
    given: String,
    /// Remove edges out of these nodes first (interventional graph).
    #[arg(long, default_value = "")]
    cut: String,
    /// Also run the path-enumeration oracle and report agreement.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct SimulateArgs {
    #[arg(long, default_value_t = 1)]
    design: u8,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    p: usize,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Threshold the mediator to {0,1} (for sequence-effect workflows).
    #[arg(long)]
    binary_m: bool,
    /// Write the dataset as CSV (header y,d,m,z1,z2,x1..xp).
    #[arg(long, value_name = "PATH")]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with a header row; complete cases only.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Outcome column.
    #[arg(long, default_value = "y")]
    y: String,
    /// Treatment column.
    #[arg(long, default_value = "d")]
    d: String,
    /// Mediator (or selection indicator) column.
    #[arg(long, default_value = "m")]
    m: String,
    /// Treatment instrument column(s); ranges like z1a..z1c allowed.
    #[arg(long, default_value = "z1")]
    z1: String,
    /// Mediator instrument column(s).
    #[arg(long, default_value = "z2")]
    z2: String,
    /// Pre-treatment covariate columns (e.g. x1..x200). Default: every
    /// column named x<number>.
    #[arg(long)]
    x: Option<String>,
    /// Post-treatment covariate columns.
    #[arg(long)]
    w: Option<String>,
}

impl DataArgs {
    fn load(&self) -> anyhow::Result<identest::ml::Dataset> {
        let x = match &self.x {
            Some(spec) => ingest::expand_columns(spec)?,
            None => auto_x_columns(&self.data)?,
        };
        let map = ingest::ColumnMap {
            y: self.y.clone(),
            d: self.d.clone(),
            m: self.m.clone(),
            z1: ingest::expand_columns(&self.z1)?,
            z2: ingest::expand_columns(&self.z2)?,
            x,
            w: match &self.w {
                Some(spec) => ingest::expand_columns(spec)?,
                None => Vec::new(),
            },
        };
        ingest::load_csv(&self.data, &map)
    }
}

/// Header columns named x<number>, in numeric order.
fn auto_x_columns(path: &Path) -> anyhow::Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut cols: Vec<(usize, String)> = reader
        .headers()
        .context("reading CSV header")?
        .iter()
        .filter_map(|h| {
            h.strip_prefix('x')
                .and_then(|s| s.parse::<usize>().ok())
                .map(|k| (k, h.to_string()))
        })
        .collect();
    cols.sort_unstable();
    if cols.is_empty() {
        bail!(
            "no x<number> columns found in {}; pass --x explicitly",
            path.display()
        );
    }
    Ok(cols.into_iter().map(|(_, name)| name).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Baseline,
    Z2linked,
    Posttreatment,
}

impl From<VariantArg> for SetupVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Baseline => SetupVariant::Baseline,
            VariantArg::Z2linked => SetupVariant::Z2Linked,
            VariantArg::Posttreatment => SetupVariant::PostTreatment,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SidednessArg {
    /// Two-sided standard-normal p-value.
    Two,
    /// Upper-tail p-value.
    One,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EffectArg {
    None,
    /// Dynamic average effect of the (1,1) vs (0,0) sequence.
    Dynamic,
    /// Total and natural direct/indirect mediation effects.
    Mediation,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = VariantArg::Baseline)]
    variant: VariantArg,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Number of test runs; the median-p-value run is reported (odd).
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Perturbation scale: `auto` = 500/n, or an explicit positive value.
    #[arg(long, default_value = "auto")]
    sigma_zeta: String,
    #[arg(long, value_enum, default_value_t = SidednessArg::Two)]
    sidedness: SidednessArg,
    /// Fit outcome models separately per treatment arm where possible.
    #[arg(long)]
    stratify_d: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Also estimate a treatment effect alongside the test row.
    #[arg(long, value_enum, default_value_t = EffectArg::None)]
    effect: EffectArg,
    /// Propensity trimming threshold for effect estimation.
    #[arg(long, default_value_t = 0.01)]
    trim: f64,
    #[arg(long, value_enum, default_value_t = Format::Aligned)]
    format: Format,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct FirstStageArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = VariantArg::Baseline)]
    variant: VariantArg,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Aligned)]
    format: Format,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct TableArgs {
    /// Which table: 1 (independent instruments) or 2 (linked instruments).
    #[arg(long)]
    table: u8,
    #[arg(long)]
    reps: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    p: usize,
    #[arg(long)]
    threads: Option<usize>,
    /// Checkpoint and record directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip effect estimation (test columns only).
    #[arg(long)]
    no_effects: bool,
    #[arg(long, value_enum, default_value_t = Format::Aligned)]
    format: Format,
}

fn main() -> ExitCode {
    let argv = match expand_config_args(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Rewrites argv so `key = value` pairs from `--config FILE` appear as
/// flags right after the subcommand; later (explicit) flags override them.
fn expand_config_args(args: Vec<String>) -> anyhow::Result<Vec<String>> {
    let mut config_path: Option<PathBuf> = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            config_path = args.get(i + 1).map(PathBuf::from);
            if config_path.is_none() {
                bail!("--config requires a path");
            }
        } else if let Some(p) = a.strip_prefix("--config=") {
            config_path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = config_path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut injected = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`", lineno + 1))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            bail!("config line {}: empty key or value", lineno + 1);
        }
        match value {
            "true" => injected.push(format!("--{key}")),
            "false" => {}
            _ => {
                injected.push(format!("--{key}"));
                injected.push(value.to_string());
            }
        }
    }
    // Insert after the subcommand token (first non-flag argument).
    let sub_pos = args
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| !a.starts_with('-'))
        .map(|(i, _)| i)
        .ok_or_else(|| anyhow!("--config requires a subcommand"))?;
    let mut out = args[..=sub_pos].to_vec();
    out.extend(injected);
    out.extend(args[sub_pos + 1..].iter().cloned());
    Ok(out)
}

fn init_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::VerifyTheorems(args) => cmd_verify(args),
        Command::Dsep(args) => cmd_dsep(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Test(args) => cmd_test(args),
        Command::FirstStage(args) => cmd_first_stage(args),
        Command::ReplicateTable(args) => cmd_table(args),
    }
}

fn emit_counterexamples(reports: &[VerificationReport], path: &Path) -> anyhow::Result<()> {
    let mut f = std::fs::File::create(path)?;
    for report in reports {
        for cex in &report.counterexamples {
            writeln!(f, "{}", records::to_line(cex)?)?;
        }
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> anyhow::Result<ExitCode> {
    init_threads(args.threads);
    let reports: Vec<VerificationReport> = match args.theorem {
        TheoremArg::T1 => vec![theorems::verify_theorem(Theorem::T1)],
        TheoremArg::T2 => vec![theorems::verify_theorem(Theorem::T2)],
        TheoremArg::L1 => vec![
            theorems::verify_theorem(Theorem::L1a),
            theorems::verify_theorem(Theorem::L1b),
        ],
        TheoremArg::T3 => vec![theorems::verify_theorem3_reduced(args.max_confounders)?],
    };
    match args.format {
        Format::Aligned => {
            for r in &reports {
                print!("{}", theorems::render_report(r));
            }
        }
        Format::Records => {
            for r in &reports {
                println!("{}", records::to_line(r)?);
            }
        }
    }
    if let Some(path) = &args.emit_counterexamples {
        emit_counterexamples(&reports, path)?;
    }
    let clean = reports.iter().all(|r| r.counterexample_count == 0);
    Ok(if clean { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn parse_labels(g: &Dag, spec: &str) -> anyhow::Result<Vec<identest::graph::NodeId>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|l| g.require(l).map_err(|e| anyhow!("{e}")))
        .collect()
}

fn cmd_dsep(args: DsepArgs) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(&args.graph)
        .with_context(|| format!("reading {}", args.graph.display()))?;
    let g = Dag::parse(&text)?;
    let cut = parse_labels(&g, &args.cut)?;
    let g = if cut.is_empty() { g } else { g.mutilate(&cut)? };
    let a = parse_labels(&g, &args.a)?;
    let b = parse_labels(&g, &args.b)?;
    let given = parse_labels(&g, &args.given)?;
    let separated = g.is_dseparated(&a, &b, &given)?;
    println!("{}", if separated { "d-separated" } else { "d-connected" });
    if args.oracle {
        let slow = g.dsep_bruteforce_oracle(&a, &b, &given)?;
        println!(
            "oracle: {} ({})",
            if slow { "d-separated" } else { "d-connected" },
            if slow == separated { "agrees" } else { "DISAGREES" }
        );
        if slow != separated {
            bail!("reachability and path-enumeration oracle disagree");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<ExitCode> {
    let cfg = DgpConfig {
        n: args.n,
        p: args.p,
        delta: args.delta,
        gamma: args.gamma,
        design: Design::from_index(args.design)?,
        seed: args.seed,
        binary_m: args.binary_m,
    };
    let data = dgp::simulate(&cfg)?;
    match &args.dump {
        Some(path) => {
            records::write_dataset_csv(&data, path)?;
            println!(
                "wrote {} rows ({} covariates) to {}",
                data.n(),
                data.x.ncols(),
                path.display()
            );
        }
        None => {
            let mean = |v: &ndarray::Array1<f64>| v.mean().unwrap_or(f64::NAN);
            println!(
                "n={} p={} design={} delta={} gamma={} seed={}",
                args.n, args.p, args.design, args.delta, args.gamma, args.seed
            );
            println!(
                "means: y={:.4} d={:.4} m={:.4}",
                mean(&data.y),
                mean(&data.d),
                mean(&data.m)
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn build_setup(
    variant: VariantArg,
    folds: usize,
    sigma_zeta: &str,
    sidedness: SidednessArg,
    stratify_d: bool,
) -> anyhow::Result<TestSetup> {
    let mut setup = TestSetup::new(variant.into()).with_folds(folds);
    setup.sigma_zeta = match sigma_zeta {
        "auto" => SigmaZetaRule::ScaledByN,
        v => SigmaZetaRule::Explicit(
            v.parse()
                .map_err(|_| anyhow!("--sigma-zeta expects `auto` or a number, got `{v}`"))?,
        ),
    };
    setup.sidedness = match sidedness {
        SidednessArg::Two => Sidedness::TwoSided,
        SidednessArg::One => Sidedness::OneSidedUpper,
    };
    setup.options.stratify_d = stratify_d;
    Ok(setup)
}

fn cmd_test(args: TestArgs) -> anyhow::Result<ExitCode> {
    init_threads(args.threads);
    let data = args.data.load()?;
    let setup = build_setup(
        args.variant,
        args.folds,
        &args.sigma_zeta,
        args.sidedness,
        args.stratify_d,
    )?;
    let (all, chosen) = median_run_all(&data, &setup, args.runs, args.seed)?;
    let result = &all[chosen];

    let effect_row = match args.effect {
        EffectArg::None => None,
        EffectArg::Dynamic => {
            let e = estimate_dynamic_ate(&data, TrimPolicy::new(args.trim)?, args.folds, args.seed)?;
            Some((e.ate, e.se, e.pval, e.n_trimmed, None))
        }
        EffectArg::Mediation => {
            let e = estimate_mediation(&data, TrimPolicy::new(args.trim)?, args.folds, args.seed)?;
            let pval = identest::effects::two_sided_pval(e.total, e.ses[0]);
            Some((e.total, e.ses[0], pval, e.n_trimmed, Some(e)))
        }
    };

    match args.format {
        Format::Records => {
            println!("{}", records::to_line(result)?);
            if let Some((_, _, _, _, Some(med))) = &effect_row {
                println!("{}", records::to_line(med)?);
            } else if let Some((ate, se, pval, trimmed, None)) = &effect_row {
                let dyn_effect = identest::effects::DynamicEffect {
                    ate: *ate,
                    se: *se,
                    pval: *pval,
                    n_trimmed: *trimmed,
                    n_used: data.n() - trimmed,
                };
                println!("{}", records::to_line(&dyn_effect)?);
            }
        }
        Format::Aligned => {
            let mut header = format!(
                "{:>12} {:>12} {:>9} {:>7} {:>5} {:>6}",
                "teststat", "se", "pval", "n", "runs", "folds"
            );
            let mut row = format!(
                "{:>12.6} {:>12.6} {:>9.5} {:>7} {:>5} {:>6}",
                result.theta_hat, result.se, result.pval, result.n, args.runs, args.folds
            );
            if let Some((ate, se, pval, trimmed, _)) = &effect_row {
                write!(
                    header,
                    " {:>9} {:>10} {:>12} {:>16}",
                    "effect", "effect_se", "effect_pval", "effect_ntrimmed"
                )?;
                write!(row, " {:>9.4} {:>10.4} {:>12.5} {:>16}", ate, se, pval, trimmed)?;
            }
            println!("{header}");
            println!("{row}");
            println!(
                "variant={} sigma_zeta={:.6} component mean squared gaps: {:.3e} {:.3e} {:.3e}{}",
                setup.variant,
                result.zeta_sd,
                result.component_means[0],
                result.component_means[1],
                result.component_means[2],
                if result.degenerate { "  [degenerate variance]" } else { "" }
            );
            for w in &result.warnings {
                println!("warning: {w}");
            }
            if let Some((_, _, _, _, Some(med))) = &effect_row {
                println!(
                    "mediation effects: total={:.4} dir(1)={:.4} dir(0)={:.4} indir(1)={:.4} indir(0)={:.4}",
                    med.total, med.dir1, med.dir0, med.indir1, med.indir0
                );
                println!(
                    "mediation ses:     total={:.4} dir(1)={:.4} dir(0)={:.4} indir(1)={:.4} indir(0)={:.4}",
                    med.ses[0], med.ses[1], med.ses[2], med.ses[3], med.ses[4]
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_first_stage(args: FirstStageArgs) -> anyhow::Result<ExitCode> {
    init_threads(args.threads);
    let data = args.data.load()?;
    let setup = TestSetup::new(args.variant.into()).with_folds(args.folds);
    let fs = first_stage_check(&data, &setup, args.seed)?;
    match args.format {
        Format::Records => println!("{}", records::to_line(&fs)?),
        Format::Aligned => {
            println!("{:>28} {:>12}", "association", "pval");
            println!("{:>28} {:>12.6}", "D with Z1 | X", fs.pval_d_z1);
            println!(
                "{:>28} {:>12.6}",
                match args.variant {
                    VariantArg::Posttreatment => "M with Z2 | D, X, W",
                    _ => "M with Z2 | D, X",
                },
                fs.pval_m_z2
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_table(args: TableArgs) -> anyhow::Result<ExitCode> {
    init_threads(args.threads);
    let design = match args.table {
        1 => Design::One,
        2 => Design::Two,
        t => bail!("--table must be 1 or 2, got {t}"),
    };
    let mut rows = Vec::new();
    for (idx, (delta, gamma)) in harness::TABLE_PANELS.into_iter().enumerate() {
        let mut cfg = CellConfig::new(
            design,
            args.n,
            delta,
            gamma,
            args.reps,
            identest::seed::derive(args.seed, 20, idx as u64),
        );
        cfg.p = args.p;
        cfg.with_effects = !args.no_effects;
        cfg.checkpoint_dir = args.out.clone();
        rows.push(harness::run_cell(&cfg)?);
    }
    match args.format {
        Format::Aligned => print!("{}", harness::render_rows(&rows)),
        Format::Records => {
            for row in &rows {
                println!("{}", records::to_line(row)?);
            }
        }
    }
    if let Some(dir) = &args.out {
        let path = dir.join(format!(
            "table{}_n{}_reps{}_seed{}.jsonl",
            args.table, args.n, args.reps, args.seed
        ));
        let mut f = std::fs::File::create(&path)?;
        for row in &rows {
            writeln!(f, "{}", records::to_line(row)?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
