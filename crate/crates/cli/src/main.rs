//! `delay-audit` command line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use delay_audit::diagnostics::{fold_frac, FoldFracConfig};
use delay_audit::downstream::{ccm, CcmOptions, EdmdOptions};
use delay_audit::dynamics::{SystemParams, Trajectory};
use delay_audit::embedding::{
    embed_trajectory, EmbeddingKind, EmbeddingSpec, Observable, ReconstructedStates, SavGol, SignalTransform,
};
use delay_audit::experiments::{
    as_states, attractor_sample, burst_surrogate, run_bounds, run_edmd, run_pendulum, run_table, run_transform_grid,
    BoundsConfig, EdmdExperimentConfig, PendulumConfig, SimulationConfig, TableConfig, TransformGridConfig,
};
use delay_audit::io::{
    coordinate_names, fmt_f64, read_table, recon_table, trajectory_from_table, trajectory_table, write_table, Report,
    Table,
};
use delay_audit::jacobian::AnalyticEmbedding;
use delay_audit::neighbors::{radius_stats, NeighborConfig, NeighborIndex};
use delay_audit::stochasticity::{estimate_estar, horizon_config, sample_queries};

#[derive(Parser)]
#[command(
    name = "delay-audit",
    version,
    about = "Audit time-delay and differential reconstructions"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Maximum worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a system and write its trajectory as CSV.
    Simulate(SimulateArgs),
    /// Reconstruct states from a trajectory CSV.
    Embed(EmbedCmd),
    /// Estimate intrinsic stochasticity of a reconstruction CSV.
    Estar(EstarArgs),
    /// Fraction of reconstruction neighbours that are far apart in the latent space.
    Foldfrac(FoldFracArgs),
    /// Neighbourhood radius diagnostics of a reconstruction CSV.
    Radius(RadiusArgs),
    /// Singular-set classification of the closed-form Rössler maps.
    Classify(ClassifyArgs),
    /// Branch-mass lower bound and dominant-branch upper bound checks.
    Bounds(BoundsArgs),
    /// Convergent cross mapping between two series.
    Ccm(CcmArgs),
    /// Polynomial EDMD forecasts from delay reconstructions of z1 and z3.
    Edmd(EdmdArgs),
    /// Estimator table for the ten closed-form Rössler maps.
    Table1(TableArgs),
    /// Radius diagnostics table for the closed-form Rössler maps.
    Table2(TableArgs),
    /// Raw versus log(1 + x) delay reconstructions over an (m, tau) grid.
    Measles(MeaslesArgs),
    /// Estimator curves for derivative maps of pendulum angles and their sines.
    Pendulum(PendulumArgs),
}

#[derive(Args)]
struct SystemArgs {
    /// rossler, lorenz63, double_pendulum or linear_test.
    #[arg(long, default_value = "rossler")]
    system: String,
    /// Parameter override, e.g. `--param c=5.7` (repeatable).
    #[arg(long = "param", value_parser = parse_kv)]
    params: Vec<(String, f64)>,
}

impl SystemArgs {
    fn system(&self) -> Result<SystemParams, CliError> {
        let map: BTreeMap<String, f64> = self.params.iter().cloned().collect();
        Ok(SystemParams::from_named(&self.system, &map)?)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Samples written.
    #[arg(long, default_value_t = 10_000)]
    steps: usize,
    /// Integrator step; 0.01 for Rössler and Lorenz, 0.001 for the pendulum.
    #[arg(long)]
    dt: Option<f64>,
    /// Fraction of all integrated samples discarded as transient.
    #[arg(long, default_value_t = 0.2)]
    transient: f64,
    /// Keep every stride-th integrator sample.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',')]
    z0: Option<Vec<f64>>,
}

impl SimulateArgs {
    fn config(&self) -> Result<SimulationConfig, CliError> {
        let system = self.system.system()?;
        let dt = self.dt.unwrap_or(match system {
            SystemParams::DoublePendulum(_) => 0.001,
            _ => 0.01,
        });
        let z0 = self.z0.clone().unwrap_or_else(|| system.default_initial_state());
        Ok(SimulationConfig {
            system,
            z0,
            dt,
            samples: self.steps,
            transient_frac: self.transient,
            stride: self.stride,
        })
    }
}

#[derive(Args)]
struct EmbedArgs {
    /// delay, differential_analytic, differential_numeric or multivariate.
    #[arg(long, default_value = "delay")]
    kind: String,
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Lag in samples (delay kind).
    #[arg(long, default_value_t = 10)]
    tau: usize,
    /// Observable(s): a column name, `z2`, `z1+z3`, or a comma list for multivariate maps.
    #[arg(long, default_value = "z1", value_delimiter = ',')]
    coords: Vec<String>,
    /// Derivative orders, comma separated; defaults to 0..m.
    #[arg(long, value_delimiter = ',')]
    orders: Option<Vec<usize>>,
    /// identity, log1p or sin.
    #[arg(long, default_value = "identity")]
    transform: String,
    /// Savitzky-Golay window for numeric derivatives.
    #[arg(long, default_value_t = 21)]
    window: usize,
    #[command(flatten)]
    system: SystemArgs,
}

impl EmbedArgs {
    fn spec(&self, columns: &[String]) -> Result<EmbeddingSpec, CliError> {
        let kind = EmbeddingKind::parse(&self.kind)?;
        let obs: Vec<Observable> = self
            .coords
            .iter()
            .map(|c| resolve_observable(c, columns))
            .collect::<Result<_, _>>()?;
        let transform = SignalTransform::parse(&self.transform)?;
        let spec = match kind {
            EmbeddingKind::Delay => EmbeddingSpec::delay(single(obs)?, self.m, self.tau),
            EmbeddingKind::DifferentialAnalytic | EmbeddingKind::DifferentialNumeric => {
                let mut s = EmbeddingSpec::differential(single(obs)?, self.m);
                if let Some(o) = &self.orders {
                    s.m = o.len();
                    s.derivative_orders = o.clone();
                }
                if kind == EmbeddingKind::DifferentialNumeric {
                    s = s.numeric();
                }
                s
            }
            EmbeddingKind::Multivariate => {
                let orders = self.orders.clone().unwrap_or_else(|| vec![0; obs.len()]);
                if orders.len() != obs.len() {
                    return Err(CliError::Validation(
                        "multivariate maps need one derivative order per observable".into(),
                    ));
                }
                EmbeddingSpec::multivariate(obs.into_iter().zip(orders).collect())
            }
        }
        .with_transform(transform);
        spec.validate()?;
        Ok(spec)
    }

    fn embed(&self, traj: &Trajectory, columns: &[String]) -> Result<ReconstructedStates, CliError> {
        let spec = self.spec(columns)?;
        if spec.kind == EmbeddingKind::DifferentialNumeric && self.window != SavGol::default().window {
            let sg = SavGol {
                window: self.window,
                ..SavGol::default()
            };
            return Ok(delay_audit::embedding::numeric_differential(traj, &spec, &sg)?);
        }
        let sys = self.system.system()?;
        Ok(embed_trajectory(traj, &spec, Some(&sys))?)
    }
}

fn single(obs: Vec<Observable>) -> Result<Observable, CliError> {
    let mut it = obs.into_iter();
    match (it.next(), it.next()) {
        (Some(o), None) => Ok(o),
        _ => Err(CliError::Validation(
            "this embedding kind takes exactly one observable".into(),
        )),
    }
}

/// Column names win over the `zN` shorthand; unknown names are an error.
fn resolve_observable(text: &str, columns: &[String]) -> Result<Observable, CliError> {
    if let Some(i) = columns.iter().position(|c| c == text) {
        return Ok(Observable::Coord(i));
    }
    match Observable::parse(text)? {
        Observable::Series(name) => Err(CliError::Validation(format!(
            "no column named '{name}' (have {})",
            columns.join(", ")
        ))),
        o => Ok(o),
    }
}

#[derive(Args)]
struct EmbedCmd {
    /// Trajectory CSV (time column first).
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Args, Serialize)]
struct EstimatorArgs {
    /// Push-forward horizon in samples.
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Neighbours per query.
    #[arg(long, default_value_t = 50)]
    k: usize,
    /// Theiler window in samples.
    #[arg(long, default_value_t = 20)]
    theiler: usize,
    /// Number of query points.
    #[arg(long, default_value_t = 500)]
    queries: usize,
}

#[derive(Args)]
struct EstarArgs {
    /// Reconstruction CSV (time column first).
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    est: EstimatorArgs,
    /// Include per-query results in the JSON report.
    #[arg(long)]
    per_query: bool,
}

#[derive(Args)]
struct FoldFracArgs {
    /// Latent trajectory CSV (time column first).
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    embed: EmbedArgs,
    #[command(flatten)]
    est: EstimatorArgs,
    /// Latent distance threshold as a fraction of the attractor diameter.
    #[arg(long, default_value_t = 0.05)]
    delta_tol: f64,
}

#[derive(Args)]
struct RadiusArgs {
    /// Reconstruction CSV (time column first).
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    est: EstimatorArgs,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Map id (u1, u2, u3, c12, c13, c23, m12d1, m12d2, m13d1, m13d3, m23d2, m23d3) or `all`.
    #[arg(long, default_value = "all")]
    embedding: String,
    /// Attractor points used for the near-singular mass.
    #[arg(long, default_value_t = 400)]
    samples: usize,
    /// Near-singular threshold relative to the median |det DF|.
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value = "u3")]
    embedding: String,
    #[command(flatten)]
    est: EstimatorArgs,
    /// Reconstructed samples.
    #[arg(long = "N", default_value_t = 5000)]
    samples: usize,
    /// Quantile of the branch-weight ratio.
    #[arg(long, default_value_t = 0.95)]
    quantile: f64,
    /// Tangent-growth threshold; the median growth when omitted.
    #[arg(long)]
    growth_threshold: Option<f64>,
}

#[derive(Args)]
struct CcmArgs {
    /// Two-column CSV; a simulated Rössler run when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Column embedded as the shadow manifold.
    #[arg(long)]
    x: Option<String>,
    /// Column predicted from it (and the reverse direction).
    #[arg(long)]
    y: Option<String>,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 5)]
    tau: usize,
    /// Library sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,400,800,1600,3200,4800")]
    libraries: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    replicates: usize,
    /// Temporal exclusion radius; (m - 1) * tau when omitted.
    #[arg(long)]
    exclusion: Option<usize>,
    /// Simulated samples when no input is given.
    #[arg(long = "N", default_value_t = 5000)]
    samples: usize,
}

#[derive(Args)]
struct EdmdArgs {
    #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
    grid_m: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10,30,50")]
    grid_tau: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,50")]
    horizons: Vec<usize>,
    /// Largest monomial degree.
    #[arg(long, default_value_t = 3)]
    degree: usize,
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
    /// Training samples.
    #[arg(long, default_value_t = 20_000)]
    train: usize,
    /// Test samples.
    #[arg(long, default_value_t = 5_000)]
    test: usize,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    est: EstimatorArgs,
    /// Reconstructed samples.
    #[arg(long = "N", default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
}

#[derive(Args)]
struct MeaslesArgs {
    /// Counts CSV; the Rössler burst surrogate when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Column holding the counts; the first value column when omitted.
    #[arg(long)]
    column: Option<String>,
    /// Grid as `m1,m2,.. x tau1,tau2,..`.
    #[arg(long, default_value = "3,5,7x2,4,6")]
    grid: String,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    k: usize,
    /// Theiler window; (m - 1) * tau when omitted.
    #[arg(long)]
    theiler: Option<usize>,
    #[arg(long, default_value_t = 500)]
    queries: usize,
}

#[derive(Args)]
struct PendulumArgs {
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,40,80")]
    horizons: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    theiler: usize,
    #[arg(long, default_value_t = 500)]
    queries: usize,
    /// Samples at dt = 0.001 s.
    #[arg(long = "N", default_value_t = 50_000)]
    samples: usize,
    /// Initial (theta1, theta2, omega1, omega2).
    #[arg(long, value_delimiter = ',')]
    z0: Option<Vec<f64>>,
}

enum CliError {
    Validation(String),
    Data(String),
}

impl From<delay_audit::Error> for CliError {
    fn from(e: delay_audit::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn parse_kv(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("'{v}' is not a number"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_grid(s: &str) -> Result<(Vec<usize>, Vec<usize>), CliError> {
    let bad = || CliError::Validation(format!("grid must look like '3,5,7x2,4,6', got '{s}'"));
    let (ms, taus) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let list = |t: &str| -> Result<Vec<usize>, CliError> {
        t.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
    };
    Ok((list(ms)?, list(taus)?))
}

fn load_table(path: &Path) -> Result<Table, CliError> {
    let f = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(read_table(BufReader::new(f))?)
}

fn load_recon(path: &Path) -> Result<ReconstructedStates, CliError> {
    let t = load_table(path)?;
    let dt = if t.time.len() > 1 { t.time[1] - t.time[0] } else { 1.0 };
    Ok(as_states(t.values, dt))
}

struct Output {
    global: Global,
}

impl Output {
    fn format(&self, default: Format) -> Format {
        self.global.format.unwrap_or(default)
    }

    fn write(&self, bytes: &[u8]) -> Result<(), CliError> {
        match &self.global.out {
            Some(p) => File::create(p)
                .and_then(|mut f| f.write_all(bytes))
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
            None => {
                let mut so = io::stdout().lock();
                so.write_all(bytes)?;
                Ok(so.flush()?)
            }
        }
    }

    fn json<C: Serialize, R: Serialize, P: Serialize>(&self, report: Report<C, R, P>) -> Result<(), CliError> {
        let mut s = report.to_json()?;
        s.push('\n');
        self.write(s.as_bytes())
    }

    fn table(&self, t: &Table) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write_table(&mut buf, t)?;
        self.write(&buf)
    }

    fn csv(&self, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let buf = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
        self.write(&buf)
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

#[derive(Serialize)]
struct Echo<'a, T: Serialize> {
    command: &'a str,
    seed: u64,
    #[serde(flatten)]
    params: T,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = Output {
        global: cli.global.clone(),
    };
    let seed = cli.global.seed;
    match cli.command {
        Command::Simulate(a) => {
            let cfg = a.config()?;
            log::info!("simulating {} for {} samples", cfg.system.name(), cfg.samples);
            let tr = cfg.simulate()?;
            let names = match cfg.system {
                SystemParams::DoublePendulum(_) => strings(&["theta1", "theta2", "omega1", "omega2"]),
                _ => coordinate_names(tr.dim()),
            };
            match out.format(Format::Csv) {
                Format::Csv => out.table(&trajectory_table(&tr, &names)),
                Format::Json => out.json(Report::new(&cfg, &tr, None::<()>, vec![])),
            }
        }
        Command::Embed(a) => {
            let t = load_table(&a.input)?;
            let traj = trajectory_from_table(&t)?;
            let r = a.embed.embed(&traj, &t.columns)?;
            log::info!("embedded {} rows with {}", r.len(), r.spec.label());
            match out.format(Format::Csv) {
                Format::Csv => out.table(&recon_table(&r, traj.t0)),
                Format::Json => out.json(Report::new(&r.spec, &r.states.as_flat(), None::<()>, vec![])),
            }
        }
        Command::Estar(a) => {
            let r = load_recon(&a.input)?;
            let cfg = NeighborConfig::new(a.est.k, a.est.theiler);
            let mut rep = estimate_estar(&r, a.est.n, &cfg, a.est.queries, seed)?;
            let per = std::mem::take(&mut rep.per_query);
            let mut warnings = Vec::new();
            if rep.non_converged > 0 {
                warnings.push(format!("{} queries hit the Weiszfeld iteration cap", rep.non_converged));
            }
            match out.format(Format::Json) {
                Format::Json => {
                    let echo = Echo {
                        command: "estar",
                        seed,
                        params: &a.est,
                    };
                    out.json(Report::new(echo, &rep, a.per_query.then_some(&per), warnings))
                }
                Format::Csv => out.csv(
                    &strings(&["query", "m_hat", "r_k", "iters"]),
                    &per.iter()
                        .map(|q| {
                            vec![
                                q.query.to_string(),
                                fmt_f64(q.m_hat),
                                fmt_f64(q.r_k),
                                q.iters.to_string(),
                            ]
                        })
                        .collect::<Vec<_>>(),
                ),
            }
        }
        Command::Foldfrac(a) => {
            let t = load_table(&a.input)?;
            let traj = trajectory_from_table(&t)?;
            let r = a.embed.embed(&traj, &t.columns)?;
            let base = NeighborConfig::new(a.est.k, a.est.theiler);
            let cfg = FoldFracConfig {
                neighbors: horizon_config(r.len(), a.est.n, &base)?,
                delta_tol_fraction: a.delta_tol,
                seed,
            };
            let queries = sample_queries(r.len().saturating_sub(a.est.n), a.est.queries, seed)?;
            let rep = fold_frac(&r, &traj, &queries, &cfg)?;
            let echo = Echo {
                command: "foldfrac",
                seed,
                params: serde_json::json!({ "estimator": &a.est, "embedding": &r.spec, "delta_tol_fraction": a.delta_tol }),
            };
            match out.format(Format::Json) {
                Format::Json => out.json(Report::new(echo, &rep, None::<()>, vec![])),
                Format::Csv => out.csv(
                    &strings(&["query", "fraction"]),
                    &rep.per_query
                        .iter()
                        .zip(&queries)
                        .map(|(f, q)| vec![q.to_string(), fmt_f64(*f)])
                        .collect::<Vec<_>>(),
                ),
            }
        }
        Command::Radius(a) => {
            let r = load_recon(&a.input)?;
            let base = NeighborConfig::new(a.est.k, a.est.theiler);
            let cfg = horizon_config(r.len(), a.est.n, &base)?;
            let queries = sample_queries(r.len().saturating_sub(a.est.n), a.est.queries, seed)?;
            let (stats, rk) = radius_stats(&NeighborIndex::new(&r.states), &queries, &cfg)?;
            let echo = Echo {
                command: "radius",
                seed,
                params: &a.est,
            };
            match out.format(Format::Json) {
                Format::Json => out.json(Report::new(echo, stats, Some(&rk), vec![])),
                Format::Csv => out.csv(
                    &strings(&["query", "r_k"]),
                    &queries
                        .iter()
                        .zip(&rk)
                        .map(|(q, r)| vec![q.to_string(), fmt_f64(*r)])
                        .collect::<Vec<_>>(),
                ),
            }
        }
        Command::Classify(a) => {
            let sys = SystemParams::rossler();
            let maps: Vec<AnalyticEmbedding> = if a.embedding == "all" {
                AnalyticEmbedding::ALL.to_vec()
            } else {
                vec![AnalyticEmbedding::from_id(&a.embedding)
                    .ok_or_else(|| CliError::Validation(format!("unknown map '{}'", a.embedding)))?]
            };
            let sample = attractor_sample(&SimulationConfig::rossler(20_000), a.samples)?;
            #[derive(Serialize)]
            struct Row {
                id: &'static str,
                embedding: String,
                #[serde(flatten)]
                class: delay_audit::jacobian::SingularClass,
            }
            let rows: Vec<Row> = maps
                .iter()
                .map(|e| {
                    Ok(Row {
                        id: e.id(),
                        embedding: e.label(),
                        class: e.classify(&sys, &sample, a.eps)?,
                    })
                })
                .collect::<Result<_, delay_audit::Error>>()?;
            match out.format(Format::Json) {
                Format::Json => out.json(Report::new(
                    Echo {
                        command: "classify",
                        seed,
                        params: serde_json::json!({ "samples": a.samples, "eps_sigma": a.eps }),
                    },
                    &rows,
                    None::<()>,
                    vec![],
                )),
                Format::Csv => out.csv(
                    &strings(&["id", "embedding", "class", "srb_mass_near_sigma"]),
                    &rows
                        .iter()
                        .map(|r| {
                            vec![
                                r.id.to_string(),
                                r.embedding.clone(),
                                serde_json::to_value(r.class.class)
                                    .unwrap()
                                    .as_str()
                                    .unwrap_or("")
                                    .to_string(),
                                fmt_f64(r.class.srb_mass_near_sigma),
                            ]
                        })
                        .collect::<Vec<_>>(),
                ),
            }
        }
        Command::Bounds(a) => {
            let embedding = AnalyticEmbedding::from_id(&a.embedding)
                .ok_or_else(|| CliError::Validation(format!("unknown map '{}'", a.embedding)))?;
            let cfg = BoundsConfig {
                table: table_config(&a.est, a.samples, 0.01, seed),
                embedding,
                base_queries: a.est.queries,
                quantile: a.quantile,
                growth_threshold: a.growth_threshold,
                ..BoundsConfig::default()
            };
            let mut rep = run_bounds(&cfg)?;
            let per = std::mem::take(&mut rep.per_query);
            match out.format(Format::Json) {
                Format::Json => out.json(Report::new(&cfg, &rep, Some(&per), vec![])),
                Format::Csv => out.csv(
                    &strings(&["query", "m_hat_w", "separation", "weight_ratio", "u_n"]),
                    &per.iter()
                        .map(|q| {
                            vec![
                                q.query.to_string(),
                                fmt_f64(q.m_hat_w),
                                fmt_f64(q.separation),
                                fmt_f64(q.weight_ratio),
                                fmt_f64(q.u_n),
                            ]
                        })
                        .collect::<Vec<_>>(),
                ),
            }
        }
        Command::Ccm(a) => {
            let mut opts = CcmOptions::new(a.m, a.tau, a.libraries.clone());
            opts.replicates = a.replicates;
            opts.seed = seed;
            if let Some(e) = a.exclusion {
                opts.exclusion = e;
            }
            let (names, series): (Vec<(String, String)>, Vec<(Vec<f64>, Vec<f64>)>) = match &a.input {
                Some(p) => {
                    let t = load_table(p)?;
                    let col = |name: &Option<String>, fallback: usize| -> Result<(String, Vec<f64>), CliError> {
                        let i = match name {
                            Some(n) => t
                                .columns
                                .iter()
                                .position(|c| c == n)
                                .ok_or_else(|| CliError::Validation(format!("no column named '{n}'")))?,
                            None => fallback,
                        };
                        if i >= t.columns.len() {
                            return Err(CliError::Validation("ccm needs two value columns".into()));
                        }
                        Ok((t.columns[i].clone(), t.values.column(i)))
                    };
                    let (nx, x) = col(&a.x, 0)?;
                    let (ny, y) = col(&a.y, 1)?;
                    (vec![(nx, ny)], vec![(x, y)])
                }
                None => {
                    let tr = SimulationConfig::rossler(a.samples).simulate()?;
                    let pairs = [(0usize, 1usize), (1, 2)];
                    (
                        pairs
                            .iter()
                            .map(|(i, j)| (format!("z{}", i + 1), format!("z{}", j + 1)))
                            .collect(),
                        pairs
                            .iter()
                            .map(|&(i, j)| (tr.coordinate(i), tr.coordinate(j)))
                            .collect(),
                    )
                }
            };
            #[derive(Serialize)]
            struct Pair {
                x: String,
                y: String,
                result: delay_audit::downstream::CcmResult,
            }
            let mut pairs = Vec::new();
            for ((x, y), (sx, sy)) in names.into_iter().zip(series) {
                pairs.push(Pair {
                    x,
                    y,
                    result: ccm(&sx, &sy, &opts)?,
                });
            }
            match out.format(Format::Json) {
                Format::Json => out.json(Report::new(&opts, &pairs, None::<()>, vec![])),
                Format::Csv => {
                    let mut header = vec!["library_size".to_string()];
                    for p in &pairs {
                        header.push(format!("{}_xmap_{}", p.x, p.y));
                        header.push(format!("{}_xmap_{}", p.y, p.x));
                    }
                    let lib = &pairs[0].result.library_sizes;
                    let rows: Vec<Vec<String>> = (0..lib.len())
                        .map(|i| {
                            let mut r = vec![lib[i].to_string()];
                            for p in &pairs {
                                r.push(fmt_f64(p.result.rho_xy[i]));
                                r.push(fmt_f64(p.result.rho_yx[i]));
                            }
                            r
                        })
                        .collect();
                    out.csv(&header, &rows)
                }
            }
        }
        Command::Edmd(a) => {
            let mut cfg = EdmdExperimentConfig {
                grid_m: a.grid_m.clone(),
                grid_tau: a.grid_tau.clone(),
                horizons: a.horizons.clone(),
                options: EdmdOptions {
                    degree: a.degree,
                    ridge_lambda: a.ridge,
                    ..EdmdOptions::default()
                },
                ..EdmdExperimentConfig::default()
            };
            cfg.train.samples = a.train;
            cfg.test.samples = a.test;
            let cells = run_edmd(&cfg)?;
            let warnings: Vec<String> = cells
                .iter()
                .filter(|c| c.ridge_increased)
                .map(|c| {
                    format!(
                        "{} m={} tau={}: ridge raised to reach a positive definite Gram matrix",
                        c.observable, c.m, c.tau
                    )
                })
                .collect();
            match out.format(Format::Json) {
                Format::Json => out.json(Report::new(&cfg, &cells, None::<()>, warnings)),
                Format::Csv => out.csv(
                    &strings(&["observable", "m", "tau", "horizon", "nrmse"]),
                    &cells
                        .iter()
                        .flat_map(|c| {
                            c.horizons.iter().zip(&c.nrmse).map(move |(h, e)| {
                                vec![
                                    c.observable.clone(),
                                    c.m.to_string(),
                                    c.tau.to_string(),
                                    h.to_string(),
                                    fmt_f64(*e),
                                ]
                            })
                        })
                        .collect::<Vec<_>>(),
                ),
            }
        }
        Command::Table1(a) => table_cmd(&out, &a, seed, &AnalyticEmbedding::TABLE),
        Command::Table2(a) => table_cmd(&out, &a, seed, &AnalyticEmbedding::RADIUS_TABLE),
        Command::Measles(a) => {
            let (grid_m, grid_tau) = parse_grid(&a.grid)?;
            let (source, counts) = match &a.input {
                Some(p) => {
                    let t = load_table(p)?;
                    let i = match &a.column {
                        Some(n) => t
                            .columns
                            .iter()
                            .position(|c| c == n)
                            .ok_or_else(|| CliError::Validation(format!("no column named '{n}'")))?,
                        None => 0,
                    };
                    (p.display().to_string(), t.values.column(i))
                }
                None => ("rossler z3 burst surrogate".to_string(), burst_surrogate(5000, 10)?),
            };
            let cfg = TransformGridConfig {
                grid_m,
                grid_tau,
                n: a.n,
                k: a.k,
                theiler_w: a.theiler,
                n_queries: a.queries,
                seed,
            };
            let cells = run_transform_grid(&counts, &cfg)?;
            match out.format(Format::Json) {
                Format::Json => out.json(Report::new((&source, &cfg), &cells, None::<()>, vec![])),
                Format::Csv => out.csv(
                    &strings(&["m", "tau", "estar_raw", "estar_log", "improvement_pct"]),
                    &cells
                        .iter()
                        .map(|c| {
                            vec![
                                c.m.to_string(),
                                c.tau.to_string(),
                                fmt_f64(c.estar_raw),
                                fmt_f64(c.estar_log),
                                fmt_f64(c.improvement_pct),
                            ]
                        })
                        .collect::<Vec<_>>(),
                ),
            }
        }
        Command::Pendulum(a) => {
            let mut cfg = PendulumConfig {
                horizons: a.horizons.clone(),
                k: a.k,
                theiler_w: a.theiler,
                n_queries: a.queries,
                seed,
                ..PendulumConfig::default()
            };
            cfg.simulation.samples = a.samples;
            if let Some(z0) = &a.z0 {
                cfg.simulation.z0 = z0.clone();
            }
            let curves = run_pendulum(&cfg)?;
            match out.format(Format::Json) {
                Format::Json => out.json(Report::new(&cfg, &curves, None::<()>, vec![])),
                Format::Csv => {
                    let mut header = vec!["horizon".to_string()];
                    header.extend(curves.iter().map(|c| {
                        format!(
                            "{}_{}",
                            c.angle,
                            if c.transform == SignalTransform::Sin {
                                "sin"
                            } else {
                                "raw"
                            }
                        )
                    }));
                    let rows: Vec<Vec<String>> = cfg
                        .horizons
                        .iter()
                        .enumerate()
                        .map(|(i, h)| {
                            let mut r = vec![h.to_string()];
                            r.extend(curves.iter().map(|c| fmt_f64(c.estar[i])));
                            r
                        })
                        .collect();
                    out.csv(&header, &rows)
                }
            }
        }
    }
}

fn table_cmd(out: &Output, a: &TableArgs, seed: u64, maps: &[AnalyticEmbedding]) -> Result<(), CliError> {
    let cfg = table_config(&a.est, a.samples, a.dt, seed);
    let rep = run_table(&cfg, maps)?;
    match out.format(Format::Json) {
        Format::Json => out.json(Report::new(&cfg, &rep, None::<()>, vec![])),
        Format::Csv => out.csv(
            &strings(&[
                "id",
                "embedding",
                "estar",
                "std",
                "stderr",
                "fold_frac",
                "r_k_median",
                "r_k_q90",
                "tail_ratio",
            ]),
            &rep.rows
                .iter()
                .map(|r| {
                    vec![
                        r.id.clone(),
                        r.embedding.clone(),
                        fmt_f64(r.estar),
                        fmt_f64(r.std),
                        fmt_f64(r.stderr),
                        fmt_f64(r.fold_frac),
                        fmt_f64(r.radius.r_k_median),
                        fmt_f64(r.radius.r_k_q90),
                        fmt_f64(r.tail_ratio),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
    }
}

fn table_config(est: &EstimatorArgs, samples: usize, dt: f64, seed: u64) -> TableConfig {
    let mut cfg = TableConfig {
        n: est.n,
        k: est.k,
        theiler_w: est.theiler,
        n_queries: est.queries,
        seed,
        ..TableConfig::default()
    };
    cfg.simulation.samples = samples;
    cfg.simulation.dt = dt;
    cfg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DELAY_AUDIT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            eprintln!(
                "error: {}",
                msg.lines()
                    .next()
                    .unwrap_or("invalid arguments")
                    .trim_start_matches("error: ")
            );
            return ExitCode::from(1);
        }
    };
    if let Some(t) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
