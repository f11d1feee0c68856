//! Command-line front end: configuration, dispatch, structured output and
//! run manifests.

pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use bpre::harness::{
    self, corollary_scaling, prop21_table, survival_pairs, theorem1_ratio, theorem2_conditional,
    theorem3_flatness, Check, ConvergenceTable, LimitConstants, Prop21Options, RRule, SuiteReport,
    Theorem2Options, Theorem3Options,
};
use bpre::oracle::{exact_conditional_pmf, exact_survival, killed_walk_series, Keep};
use bpre::renewal::{grid, renewal_table, SeriesOptions, Side};
use bpre::survival::estimate_survival_with_cap;
use bpre::tilting::{solve_beta, tilted_env, StableNorm};
use bpre::{EnvironmentLaw, Method, StreamSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use output::{to_json, write_file, Cell, Destination, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Default replica count when `--reps` is absent.
pub const DEFAULT_REPS: u64 = 1_000_000;

/// Parse a positive count, accepting scientific notation such as `1e6`.
pub fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return if v >= 1 { Ok(v) } else { Err("count must be >= 1".into()) };
    }
    let f: f64 = s.parse().map_err(|_| format!("`{s}` is not a count"))?;
    if !(f >= 1.0 && f.fract() == 0.0 && f <= u64::MAX as f64) {
        return Err(format!("`{s}` is not a positive integer"));
    }
    Ok(f as u64)
}

fn parse_n(s: &str) -> Result<usize, String> {
    parse_count(s.trim()).map(|v| v as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Parser, Serialize, Deserialize)]
#[command(name = "bpre", version, about = "Weakly subcritical branching processes in random environment")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GlobalArgs {
    /// Environment law (JSON).
    #[arg(long, global = true)]
    pub env: Option<PathBuf>,
    /// Root seed; generated and recorded when absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output file, directory (trailing `/`) or `-` for stdout.
    #[arg(long, global = true, default_value = "-")]
    pub out: String,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Replicas per estimate (scientific notation accepted).
    #[arg(long, global = true, value_parser = parse_count)]
    pub reps: Option<u64>,
    /// Manifest path (default derived from --out).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Naive,
    QuenchedCond,
    TiltedIs,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Naive => Method::Naive,
            MethodArg::QuenchedCond => Method::QuenchedCond,
            MethodArg::TiltedIs => Method::TiltedIs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SideArg {
    U,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    Original,
    Tilted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    Survival,
    MinNonneg,
    ConditionalPmf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Theorem1,
    Corollary,
    Theorem2,
    Theorem3,
    Prop21,
    All,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Solve E[X e^(beta X)] = 0 and report beta, gamma and the tilted weights.
    SolveBeta {
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Renewal function table (CSV: x, estimate, stderr, K_term).
    Renewal {
        #[arg(long, value_enum, default_value_t = SideArg::U)]
        side: SideArg,
        #[arg(long, default_value_t = 5.0)]
        xmax: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long, default_value_t = 4096)]
        k: usize,
        #[arg(long)]
        no_tail_correction: bool,
        /// Walk law: the tilted (driftless) law or the original one.
        #[arg(long, value_enum, default_value_t = Measure::Tilted)]
        measure: Measure,
    },
    /// Monte Carlo estimate of P{Z_n > 0}.
    EstimateSurvival {
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = MethodArg::TiltedIs)]
        method: MethodArg,
        #[arg(long, value_parser = parse_count, default_value = "100000000")]
        cap: u64,
    },
    /// Exact value by enumeration.
    Oracle {
        #[arg(long, value_enum)]
        quantity: Quantity,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        zmax: usize,
    },
    /// Run limit-theorem suites and emit verdicts.
    Verify(VerifyArgs),
    /// Theorem 2 tables: TV distances and conditional moments.
    ConditionalLaw(VerifyArgs),
    /// Theorem 3 tables: flatness quantiles and W diagnostics.
    Flatness(VerifyArgs),
    /// Re-run the configuration recorded in a manifest.
    Replay {
        #[arg(long = "from")]
        from: PathBuf,
    },
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    #[arg(long, value_delimiter = ',', value_parser = parse_n, default_value = "20,40,80,160")]
    pub n_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_n, default_value = "40,80,160")]
    pub flat_n_list: Vec<usize>,
    /// Replicas for the conditioned samplers (default: reps / 10).
    #[arg(long, value_parser = parse_count)]
    pub cond_reps: Option<u64>,
    /// Replicas for renewal series (default: reps / 10).
    #[arg(long, value_parser = parse_count)]
    pub renewal_reps: Option<u64>,
    #[arg(long, default_value_t = 0.10)]
    pub t1_threshold: f64,
    #[arg(long, default_value_t = 0.15)]
    pub corollary_threshold: f64,
    #[arg(long, default_value_t = 0.15)]
    pub prop21_threshold: f64,
    /// Conditional moment order (default beta / 2).
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub prop_theta: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,2")]
    pub x_grid: Vec<f64>,
    #[arg(long, default_value_t = 4096)]
    pub k: usize,
    #[arg(long, default_value = "pow:0.25")]
    pub r_rule: String,
    #[arg(long, default_value_t = 10)]
    pub anchor_n: usize,
    #[arg(long, default_value_t = 8)]
    pub pmf_anchor_n: usize,
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<bpre::Error> for CliError {
    fn from(e: bpre::Error) -> Self {
        match e {
            bpre::Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Record of one run, sufficient to reproduce it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    /// Fully resolved configuration.
    pub config: Cli,
    pub wall_time_ms: f64,
    pub exit_code: i32,
    pub verdicts: Vec<Verdict>,
    pub streams: StreamRecord,
    pub outputs: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamRecord {
    pub root_seed: u64,
    pub derivation: String,
    pub block_size: u64,
    pub tags: Vec<String>,
}

/// Results of a command before they are written.
#[derive(Debug, Default)]
pub struct Outcome {
    pub json: serde_json::Value,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub tags: Vec<String>,
}

pub fn fill_defaults(mut cli: Cli) -> Cli {
    if cli.global.seed.is_none() {
        let t = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        cli.global.seed = Some(bpre::rng::derive_seed(t, "auto-seed", 0));
    }
    if cli.global.reps.is_none() {
        cli.global.reps = Some(DEFAULT_REPS);
    }
    if cli.global.workers.is_none() {
        cli.global.workers = Some(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    }
    let reps = cli.global.reps.unwrap();
    if let Command::Verify(v) | Command::ConditionalLaw(v) | Command::Flatness(v) = &mut cli.command {
        v.cond_reps.get_or_insert((reps / 10).max(1));
        v.renewal_reps.get_or_insert((reps / 10).max(2));
    }
    cli
}

fn load_env(g: &GlobalArgs) -> Result<EnvironmentLaw, CliError> {
    let path = g
        .env
        .as_ref()
        .ok_or_else(|| CliError::Usage("missing --env <file>".into()))?;
    if !path.exists() {
        return Err(CliError::Usage(format!("--env: no such file {}", path.display())));
    }
    EnvironmentLaw::from_file(path).map_err(|e| CliError::Usage(format!("--env {}: {e}", path.display())))
}

fn convergence_csv(t: &ConvergenceTable) -> Table {
    let mut out = Table::new(&t.name, &["n", "statistic", "stderr"]);
    for r in &t.rows {
        out.rows.push(vec![Cell::Int(r.n as u64), Cell::Float(r.statistic), Cell::Float(r.stderr)]);
    }
    out
}

fn json_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

/// Run the requested suites with resolved global settings.
pub fn run_verify(env: &EnvironmentLaw, g: &GlobalArgs, v: &VerifyArgs, suites: &[Suite]) -> Result<Outcome, CliError> {
    let seed = g.seed.expect("resolved");
    let reps = g.reps.expect("resolved");
    let cond_reps = v.cond_reps.expect("resolved");
    let renewal_reps = v.renewal_reps.expect("resolved");
    let r_rule: RRule = v.r_rule.parse().map_err(CliError::Usage)?;
    let sol = solve_beta(env, bpre::tilting::DEFAULT_TOL)?;
    let tilted = tilted_env(env, &sol)?;
    let stable = StableNorm::from_tilted(&tilted)?;
    let root = StreamSpec::new(seed, "verify");
    let want = |s: Suite| suites.contains(&Suite::All) || suites.contains(&s);
    let mut report = SuiteReport {
        suite: suites.iter().map(|s| format!("{s:?}").to_lowercase()).collect::<Vec<_>>().join(","),
        tables: Vec::new(),
        checks: Vec::new(),
        warnings: Vec::new(),
    };
    let mut tags = Vec::new();
    let mut constants = None;

    if want(Suite::Theorem1) || want(Suite::Corollary) {
        let s = root.child("theorem1");
        tags.push(s.tag.clone());
        let pairs = survival_pairs(env, &sol, &v.n_list, reps, &s)?;
        let anchor = if v.anchor_n > 0 {
            Some((v.anchor_n, survival_pairs(env, &sol, &[v.anchor_n], reps, &s.child("anchor"))?[0]))
        } else {
            None
        };
        let (t1, k, k_se) = theorem1_ratio(env, &sol, &pairs, v.t1_threshold, anchor)?;
        let (c, kp, kp_se) = corollary_scaling(env, &sol, &stable, &pairs, v.corollary_threshold, Some((k, k_se)))?;
        if want(Suite::Theorem1) {
            report.merge(t1);
        }
        if want(Suite::Corollary) {
            report.merge(c);
        }
        constants = Some(LimitConstants {
            kappa: k,
            kappa_stderr: k_se,
            kappa_prime: kp,
            kappa_prime_stderr: kp_se,
        });
    }
    if want(Suite::Theorem2) {
        let s = root.child("theorem2");
        tags.push(s.tag.clone());
        let mut o = Theorem2Options::new(v.theta.unwrap_or(sol.beta / 2.0));
        o.anchor = (v.pmf_anchor_n > 0).then_some(v.pmf_anchor_n);
        report.merge(theorem2_conditional(env, &sol, &v.n_list, cond_reps, &o, &s)?);
    }
    if want(Suite::Theorem3) {
        let s = root.child("theorem3");
        tags.push(s.tag.clone());
        let o = Theorem3Options {
            r_rule,
            ..Default::default()
        };
        report.merge(theorem3_flatness(env, &sol, &v.flat_n_list, cond_reps, &o, &s)?);
    }
    if want(Suite::Prop21) {
        let s = root.child("prop21");
        tags.push(s.tag.clone());
        let mut o = Prop21Options::new(v.prop_theta, v.x_grid.clone(), SeriesOptions::new(v.k, renewal_reps));
        o.threshold = v.prop21_threshold;
        report.merge(prop21_table(&tilted, &v.n_list, reps, &o, &s)?);
    }
    let passed = report.passed();
    let json = serde_json::json!({
        "suite": report.suite,
        "verdict": if passed { "pass" } else { "fail" },
        "beta": sol.beta,
        "gamma": sol.gamma,
        "constants": constants,
        "checks": json_value(&report.checks),
        "tables": json_value(&report.tables),
        "warnings": report.warnings,
    });
    Ok(Outcome {
        json,
        tables: report.tables.iter().map(convergence_csv).collect(),
        checks: report.checks,
        tags,
    })
}

/// Execute a resolved configuration.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let g = &cli.global;
    let seed = g.seed.expect("resolved");
    let reps = g.reps.expect("resolved");
    match &cli.command {
        Command::Replay { .. } => Err(CliError::Usage("replay cannot be nested".into())),
        Command::SolveBeta { tol } => {
            let env = load_env(g)?;
            let sol = solve_beta(&env, *tol)?;
            Ok(Outcome {
                json: json_value(&sol),
                ..Default::default()
            })
        }
        Command::Renewal {
            side,
            xmax,
            step,
            k,
            no_tail_correction,
            measure,
        } => {
            let env = load_env(g)?;
            let walk = match measure {
                Measure::Original => env.clone(),
                // a driftless walk is its own tilt
                Measure::Tilted if env.mean_log() == 0.0 => env.clone(),
                Measure::Tilted => tilted_env(&env, &solve_beta(&env, bpre::tilting::DEFAULT_TOL)?)?,
            };
            let side = match side {
                SideArg::U => Side::U,
                SideArg::V => Side::V,
            };
            if !(*step > 0.0 && *xmax >= 0.0) {
                return Err(CliError::Usage("--step must be > 0 and --xmax >= 0".into()));
            }
            let mut opts = SeriesOptions::new(*k, reps);
            opts.tail_correction = !no_tail_correction;
            let s = StreamSpec::new(seed, "renewal");
            let t = renewal_table(&walk, side, &grid(side, *xmax, *step), opts, &s)?;
            let mut csv = Table::new("renewal", &["x", "estimate", "stderr", "K_term"]);
            for i in 0..t.x.len() {
                csv.rows.push(vec![
                    Cell::Float(t.x[i]),
                    Cell::Float(t.estimate[i]),
                    Cell::Float(t.stderr[i]),
                    Cell::Float(t.k_term[i]),
                ]);
            }
            Ok(Outcome {
                json: json_value(&t),
                tables: vec![csv],
                tags: vec![s.tag],
                ..Default::default()
            })
        }
        Command::EstimateSurvival { n, method, cap } => {
            let env = load_env(g)?;
            let m: Method = (*method).into();
            let sol = match solve_beta(&env, bpre::tilting::DEFAULT_TOL) {
                Ok(s) => s,
                Err(e) if m == Method::TiltedIs => return Err(e.into()),
                Err(_) => bpre::TiltSolution::identity(&env),
            };
            let s = StreamSpec::new(seed, format!("survival/{}", m.as_str()));
            let e = estimate_survival_with_cap(&env, &sol, *n, reps, m, &s, *cap)?;
            Ok(Outcome {
                json: serde_json::json!({
                    "value": e.value,
                    "stderr": e.stderr,
                    "reps": e.reps,
                    "method": m.as_str(),
                    "elapsed_ms": e.elapsed_ms,
                }),
                tags: vec![s.tag],
                ..Default::default()
            })
        }
        Command::Oracle { quantity, n, zmax } => {
            let env = load_env(g)?;
            let json = match quantity {
                Quantity::Survival => json_value(&exact_survival(&env, *n)?),
                Quantity::MinNonneg => {
                    let v = killed_walk_series(&env, 0.0, Keep::Nonneg, &[*n], |_| 1.0)?[0];
                    serde_json::json!({"quantity": "min-nonneg", "n": n, "value": v, "size": (*n as f64 + 1.0).powi(env.len() as i32 - 1)})
                }
                Quantity::ConditionalPmf => json_value(&exact_conditional_pmf(&env, *n, *zmax)?),
            };
            Ok(Outcome {
                json,
                ..Default::default()
            })
        }
        Command::Verify(v) => {
            let env = load_env(g)?;
            run_verify(&env, g, v, &[v.suite])
        }
        Command::ConditionalLaw(v) => {
            let env = load_env(g)?;
            run_verify(&env, g, v, &[Suite::Theorem2])
        }
        Command::Flatness(v) => {
            let env = load_env(g)?;
            run_verify(&env, g, v, &[Suite::Theorem3])
        }
    }
}

fn write_outputs(cli: &Cli, outcome: &Outcome) -> Result<Vec<PathBuf>, CliError> {
    let g = &cli.global;
    let dest = Destination::parse(&g.out);
    let multi = outcome.tables.len() > 1;
    let mut written = Vec::new();
    match (&dest, g.format) {
        (Destination::Stdout, Format::Json) => print!("{}", to_json(&outcome.json)),
        (Destination::Stdout, Format::Csv) => match outcome.tables.as_slice() {
            [t] => print!("{}", t.to_csv()),
            [] => print!("{}", to_json(&outcome.json)),
            _ => unreachable!("rejected before running"),
        },
        (Destination::File(p), fmt) => {
            if fmt == Format::Csv && outcome.tables.len() == 1 {
                write_file(p, &outcome.tables[0].to_csv())?;
            } else {
                write_file(p, &to_json(&outcome.json))?;
            }
            written.push(p.clone());
            if multi || fmt == Format::Json {
                for t in &outcome.tables {
                    let stem = p.with_extension("");
                    let path = PathBuf::from(format!("{}.{}.csv", stem.display(), t.name));
                    write_file(&path, &t.to_csv())?;
                    written.push(path);
                }
            }
        }
        (Destination::Dir(d), _) => {
            std::fs::create_dir_all(d)?;
            let p = d.join("report.json");
            write_file(&p, &to_json(&outcome.json))?;
            written.push(p);
            for t in &outcome.tables {
                let p = d.join(format!("{}.csv", t.name));
                write_file(&p, &t.to_csv())?;
                written.push(p);
            }
        }
    }
    Ok(written)
}

fn multi_table(cmd: &Command) -> bool {
    match cmd {
        Command::Verify(_) | Command::ConditionalLaw(_) | Command::Flatness(_) => true,
        Command::Replay { .. } => false,
        _ => false,
    }
}

fn validate(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    if g.out == "-" && g.format == Format::Csv && multi_table(&cli.command) {
        return Err(CliError::Usage(
            "--format csv with several tables needs a directory for --out (e.g. --out results/)".into(),
        ));
    }
    if let Some(0) = g.workers {
        return Err(CliError::Usage("--workers must be >= 1".into()));
    }
    if let Command::Verify(v) | Command::ConditionalLaw(v) | Command::Flatness(v) = &cli.command {
        for (flag, ns) in [("--n-list", &v.n_list), ("--flat-n-list", &v.flat_n_list)] {
            harness::validate_n_list(ns).map_err(|e| CliError::Usage(format!("{flag}: {e}")))?;
        }
        if v.x_grid.is_empty() || v.x_grid.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(CliError::Usage("--x-grid needs finite values >= 0".into()));
        }
    }
    Ok(())
}

fn configure_workers(workers: usize) {
    // the global pool can only be set once per process; later calls keep it
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
}

/// Run a parsed command line and write results plus the manifest.
/// Returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let started = Instant::now();
    let cli = match &cli.command {
        Command::Replay { from } => match load_manifest(from) {
            Ok(mut m) => {
                if cli.global.out != "-" {
                    m.config.global.out = cli.global.out.clone();
                }
                m.config.global.manifest = cli.global.manifest.clone();
                if cli.global.workers.is_some() {
                    m.config.global.workers = cli.global.workers;
                }
                m.config
            }
            Err(e) => {
                eprintln!("{e}");
                return e.exit_code();
            }
        },
        _ => cli,
    };
    let cli = fill_defaults(cli);
    if let Err(e) = validate(&cli) {
        eprintln!("{e}");
        return e.exit_code();
    }
    configure_workers(cli.global.workers.unwrap_or(1));
    let result = execute(&cli).and_then(|o| write_outputs(&cli, &o).map(|w| (o, w)));
    let (code, verdicts, tags, outputs, error) = match result {
        Ok((o, written)) => {
            let verdicts: Vec<Verdict> = o
                .checks
                .iter()
                .map(|c| Verdict {
                    name: c.name.clone(),
                    pass: c.pass,
                })
                .collect();
            for c in o.checks.iter().filter(|c| !c.pass) {
                log::warn!("check {} failed: {} (statistic {:.6e}, threshold {:.6e})", c.name, c.criterion, c.statistic, c.threshold);
            }
            let code = if verdicts.iter().all(|v| v.pass) { EXIT_OK } else { EXIT_VERDICT };
            (code, verdicts, o.tags, written, None)
        }
        Err(e) => {
            eprintln!("{e}");
            (e.exit_code(), Vec::new(), Vec::new(), Vec::new(), Some(e.to_string()))
        }
    };
    let manifest = RunManifest {
        artifact: "bpre".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        streams: StreamRecord {
            root_seed: cli.global.seed.unwrap_or(0),
            derivation: "splitmix64(splitmix64(splitmix64(seed) ^ fnv1a(tag)) ^ splitmix64(block + c)); Pcg64Mcg per block".into(),
            block_size: bpre::rng::DEFAULT_BLOCK_SIZE,
            tags,
        },
        config: cli.clone(),
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        exit_code: code,
        verdicts,
        outputs,
        error,
    };
    let path = cli
        .global
        .manifest
        .clone()
        .unwrap_or_else(|| Destination::parse(&cli.global.out).manifest_path());
    if let Err(e) = write_file(&path, &to_json(&manifest)) {
        eprintln!("error: cannot write manifest {}: {e}", path.display());
        return EXIT_RUNTIME;
    }
    code
}

pub fn load_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("--from {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("--from {}: {e}", path.display())))
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("BPRE_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
}
