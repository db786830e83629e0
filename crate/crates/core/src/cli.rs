//! Command-line front end: config file parsing and the experiment commands.
//!
//! Configs are flat text files of `section.key = value` lines; `#` starts a
//! comment. Every key is optional. `validate` prints the fully resolved
//! config in the same format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::model::{EnvConfig, Family, Param, ParameterSpace, Region};
use crate::policy::{Criterion, Mode, PolicyKind, PolicySpec};
use crate::simulator::{self, SweepPoint, SWEEP_HEADER};
use crate::statistics::StatisticKind;
use crate::traffic::{EntropyModel, EntropySource, FlowObservations};

pub const WORKERS_ENV: &str = "SEQSEARCH_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "seqsearch", version, about = "Sequential anomaly search simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one Monte Carlo point at the configured criterion value.
    Simulate(CommonArgs),
    /// Run one point per value of `sweep.grid`.
    Sweep(CommonArgs),
    /// Sweep several policies over the same grid into one CSV.
    Compare {
        /// Policies to compare (ds, chernoff, openloop-glr); defaults to
        /// `ds` and `compare.baseline`.
        policies: Vec<String>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Synthetic flow search: detection delay against the number of flows.
    TrafficDemo(CommonArgs),
    /// Check a config and print it fully resolved.
    Validate(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// `key = value` config file; unset keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Episodes per point (overrides `run.runs`).
    #[arg(long)]
    pub runs: Option<u64>,
    /// Seed of the first episode (overrides `run.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (overrides `run.workers`).
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// CSV destination instead of stdout (overrides `run.out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Settings of the `traffic-demo` command.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficConfig {
    pub model: EntropyModel,
    pub flows: Vec<usize>,
    pub source: EntropySource,
    pub mode: Mode,
    pub statistic: StatisticKind,
}

/// Everything a command needs, validated.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub policy: PolicySpec,
    pub grid: Vec<f64>,
    pub runs: u64,
    pub seed: u64,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub baseline: PolicyKind,
    pub traffic: TrafficConfig,
}

const KEYS: &[&str] = &[
    "family.name",
    "family.sigma",
    "family.scale",
    "env.cells",
    "env.probes",
    "env.anomalies",
    "env.prior",
    "theta.normal",
    "theta.abnormal",
    "space.full",
    "space.normal",
    "space.abnormal",
    "space.halfwidth",
    "policy.kind",
    "policy.mode",
    "policy.statistic",
    "policy.criterion",
    "policy.level",
    "policy.epsilon",
    "policy.i0",
    "policy.i0_grid",
    "policy.init_theta",
    "policy.max_slots",
    "policy.threshold",
    "sweep.grid",
    "compare.baseline",
    "run.runs",
    "run.seed",
    "run.workers",
    "run.out",
    "traffic.normal",
    "traffic.abnormal",
    "traffic.flows",
    "traffic.source",
    "traffic.mode",
    "traffic.statistic",
];

/// Raw `key = value` pairs.
#[derive(Clone, Debug, Default)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (index, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: index as u64 + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `section.key = value`, got {line:?}")))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::config(key, "unknown key"));
            }
            if values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(parse_err(format!("duplicate key `{key}`")));
            }
        }
        Ok(ConfigMap { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ConfigMap::parse(&text, path)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::config(key, format!("cannot parse {v:?}: {e}")))
            })
            .transpose()
    }

    fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T>(&self, key: &str, sep: char) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(sep)
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|p| {
                        p.parse::<T>()
                            .map_err(|e| Error::config(key, format!("cannot parse {p:?}: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }
}

fn parse_source(text: &str) -> std::result::Result<EntropySource, String> {
    match text.trim() {
        "gaussian" => Ok(EntropySource::Gaussian),
        other => other
            .strip_prefix("packets:")
            .and_then(|n| n.trim().parse::<u32>().ok())
            .filter(|&n| n > 0)
            .map(EntropySource::Packets)
            .ok_or_else(|| format!("expected `gaussian` or `packets:N`, got {other:?}")),
    }
}

fn format_source(source: EntropySource) -> String {
    match source {
        EntropySource::Gaussian => "gaussian".into(),
        EntropySource::Packets(n) => format!("packets:{n}"),
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl RunConfig {
    /// Builds and validates a config; unset keys take their defaults.
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let family = match map.get_or("family.name", "gaussian".to_string())?.as_str() {
            "gaussian" => Family::GaussianKnownVariance {
                sigma: map.get_or("family.sigma", 1.0)?,
            },
            "laplace" => Family::LaplaceKnownScale {
                scale: map.get_or("family.scale", 1.0)?,
            },
            "exponential" => Family::ExponentialRate,
            "gaussian-mv" => Family::GaussianMeanVar,
            other => {
                return Err(Error::config(
                    "family.name",
                    format!("unknown family `{other}` (expected gaussian, laplace, exponential or gaussian-mv)"),
                ))
            }
        };
        family.validate()?;
        let (default0, default1) = match family {
            Family::ExponentialRate => (Param::scalar(1.0), Param::scalar(10.0)),
            Family::GaussianMeanVar => (Param::pair(1.0, 0.2), Param::pair(1.8, 0.3)),
            _ => (Param::scalar(0.0), Param::scalar(1.0)),
        };
        let theta0: Param = map.get_or("theta.normal", default0)?;
        let theta1: Param = map.get_or("theta.abnormal", default1)?;
        for (key, theta) in [("theta.normal", theta0), ("theta.abnormal", theta1)] {
            if !family.valid_param(theta) {
                return Err(Error::config(key, format!("{theta} is not a valid {family} parameter")));
            }
        }
        let full: Region = map
            .get("space.full")?
            .unwrap_or_else(|| ParameterSpace::default_full(&family));
        let space = match (map.get::<Region>("space.normal")?, map.get::<Region>("space.abnormal")?) {
            (Some(normal), Some(abnormal)) => ParameterSpace::new(full, normal, abnormal)?,
            (None, None) => {
                let halfwidth = map.get_or("space.halfwidth", 1e-3)?;
                ParameterSpace::split_at_midpoint(full, theta0, theta1, halfwidth)?
            }
            _ => {
                return Err(Error::config(
                    "space.normal",
                    "space.normal and space.abnormal must be given together",
                ))
            }
        };
        let cells: usize = map.get_or("env.cells", 5)?;
        let prior = match map.raw("env.prior") {
            None | Some("uniform") => vec![1.0 / cells.max(1) as f64; cells],
            Some(_) => map.list("env.prior", ',')?.unwrap_or_default(),
        };
        let env = EnvConfig {
            cells,
            probes: map.get_or("env.probes", 1)?,
            anomalies: map.get_or("env.anomalies", 1)?,
            prior,
            family,
            true_theta0: theta0,
            true_theta1: theta1,
            space,
        };
        env.validate()?;

        let level: f64 = map.get_or("policy.level", 0.01)?;
        let criterion = match map.get_or("policy.criterion", "bayes".to_string())?.as_str() {
            "bayes" => Criterion::Bayes(level),
            "frequentist" => Criterion::Frequentist(level),
            other => {
                return Err(Error::config(
                    "policy.criterion",
                    format!("expected bayes or frequentist, got `{other}`"),
                ))
            }
        };
        let policy = PolicySpec {
            kind: map.get_or("policy.kind", PolicyKind::Ds)?,
            mode: map.get_or("policy.mode", Mode::KnownNull)?,
            statistic: map.get_or("policy.statistic", StatisticKind::Lallr)?,
            criterion,
            epsilon: map.get_or("policy.epsilon", 0.05)?,
            i0: map.get("policy.i0")?,
            i0_grid: map.list("policy.i0_grid", ';')?,
            init_theta: map.get("policy.init_theta")?,
            max_slots: map.get("policy.max_slots")?,
            threshold_override: map.get("policy.threshold")?,
        };
        policy.validate(&env)?;
        if let Some(grid) = &policy.i0_grid {
            if grid.is_empty() {
                return Err(Error::config("policy.i0_grid", "must list at least one parameter"));
            }
        }

        let grid = map.list("sweep.grid", ',')?.unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3]);
        if grid.is_empty() {
            return Err(Error::config("sweep.grid", "must contain at least one value"));
        }
        for &value in &grid {
            criterion
                .with_value(value)
                .validate()
                .map_err(|e| Error::config("sweep.grid", e.to_string()))?;
        }
        let runs = map.get_or("run.runs", 1000)?;
        if runs == 0 {
            return Err(Error::config("run.runs", "must be at least 1"));
        }
        let workers = match map.get("run.workers")? {
            Some(w) => w,
            None => default_workers(),
        };
        if workers == 0 {
            return Err(Error::config("run.workers", "must be at least 1"));
        }

        let traffic = TrafficConfig {
            model: EntropyModel {
                normal: map.get_or("traffic.normal", EntropyModel::default().normal)?,
                abnormal: map.get_or("traffic.abnormal", EntropyModel::default().abnormal)?,
            },
            flows: map.list("traffic.flows", ',')?.unwrap_or_else(|| vec![5, 10, 15]),
            source: map
                .raw("traffic.source")
                .map(|s| parse_source(s).map_err(|e| Error::config("traffic.source", e)))
                .transpose()?
                .unwrap_or(EntropySource::Gaussian),
            mode: map.get_or("traffic.mode", Mode::CommonUnknownNull)?,
            statistic: map.get_or("traffic.statistic", StatisticKind::Mallr)?,
        };
        traffic.model.validate()?;
        if traffic.flows.is_empty() || traffic.flows.iter().any(|&m| m < 2) {
            return Err(Error::config(
                "traffic.flows",
                "need one or more flow counts, each at least 2",
            ));
        }

        Ok(RunConfig {
            env,
            policy,
            grid,
            runs,
            seed: map.get_or("run.seed", 0)?,
            workers,
            out: map.get("run.out")?,
            baseline: map.get_or("compare.baseline", PolicyKind::Chernoff)?,
            traffic,
        })
    }

    /// Loads `path` (or the defaults) and applies command-line overrides.
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let mut map = match &args.config {
            Some(path) => ConfigMap::load(path)?,
            None => ConfigMap::default(),
        };
        let mut set = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                map.values.insert(key.to_string(), v);
            }
        };
        set("run.runs", args.runs.map(|v| v.to_string()));
        set("run.seed", args.seed.map(|v| v.to_string()));
        set("run.workers", args.workers.map(|v| v.to_string()));
        set("run.out", args.out.as_ref().map(|p| p.display().to_string()));
        RunConfig::from_map(&map)
    }

    /// The resolved config in the input format; parsing it back yields `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut line = |key: &str, value: String| {
            let _ = writeln!(s, "{key} = {value}");
        };
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        line("family.name", self.env.family.name().into());
        match self.env.family {
            Family::GaussianKnownVariance { sigma } => line("family.sigma", format!("{sigma:?}")),
            Family::LaplaceKnownScale { scale } => line("family.scale", format!("{scale:?}")),
            _ => {}
        }
        line("env.cells", self.env.cells.to_string());
        line("env.probes", self.env.probes.to_string());
        line("env.anomalies", self.env.anomalies.to_string());
        line("env.prior", join(&self.env.prior));
        line("theta.normal", self.env.true_theta0.to_string());
        line("theta.abnormal", self.env.true_theta1.to_string());
        line("space.full", self.env.space.full.to_string());
        line("space.normal", self.env.space.theta0.to_string());
        line("space.abnormal", self.env.space.theta1.to_string());
        let p = &self.policy;
        line("policy.kind", p.kind.name().into());
        line("policy.mode", p.mode.name().into());
        line("policy.statistic", p.statistic.name().into());
        line("policy.criterion", p.criterion.name().into());
        line("policy.level", format!("{:?}", p.criterion.value()));
        line("policy.epsilon", format!("{:?}", p.epsilon));
        if let Some(i0) = p.i0 {
            line("policy.i0", format!("{i0:?}"));
        }
        if let Some(grid) = &p.i0_grid {
            line(
                "policy.i0_grid",
                grid.iter().map(Param::to_string).collect::<Vec<_>>().join(";"),
            );
        }
        if let Some(theta) = p.init_theta {
            line("policy.init_theta", theta.to_string());
        }
        if let Some(max) = p.max_slots {
            line("policy.max_slots", max.to_string());
        }
        if let Some(threshold) = p.threshold_override {
            line("policy.threshold", format!("{threshold:?}"));
        }
        line("sweep.grid", join(&self.grid));
        line("compare.baseline", self.baseline.name().into());
        line("run.runs", self.runs.to_string());
        line("run.seed", self.seed.to_string());
        line("run.workers", self.workers.to_string());
        if let Some(out) = &self.out {
            line("run.out", out.display().to_string());
        }
        let t = &self.traffic;
        line("traffic.normal", t.model.normal.to_string());
        line("traffic.abnormal", t.model.abnormal.to_string());
        line(
            "traffic.flows",
            t.flows.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        line("traffic.source", format_source(t.source));
        line("traffic.mode", t.mode.name().into());
        line("traffic.statistic", t.statistic.name().into());
        s
    }

    fn open_output<'a>(&self, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
        match &self.out {
            Some(path) => {
                let file = File::create(path)
                    .map_err(|e| Error::config("run.out", format!("cannot write {}: {e}", path.display())))?;
                Ok(Box::new(io::BufWriter::new(file)))
            }
            None => Ok(Box::new(stdout)),
        }
    }
}

fn parse_policies(names: &[String], cfg: &RunConfig) -> Result<Vec<PolicyKind>> {
    if names.is_empty() {
        return Ok(vec![PolicyKind::Ds, cfg.baseline]);
    }
    names
        .iter()
        .map(|n| {
            n.parse::<PolicyKind>()
                .map_err(|e| Error::config("compare.policies", e))
        })
        .collect()
}

/// Runs a parsed command; CSV goes to `run.out` or stdout, `validate`
/// output to `stdout`.
pub fn run_command(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let io_err = |source| Error::Io {
        path: "<stdout>".into(),
        source,
    };
    match cli.command {
        Command::Validate(args) => {
            let cfg = RunConfig::resolve(&args)?;
            let spec = cfg.policy.resolved(&cfg.env)?;
            let mut text = cfg.to_config_string();
            let _ = writeln!(text, "# threshold = {:?}", spec.threshold(&cfg.env)?);
            if let Some(i0) = spec.i0 {
                let _ = writeln!(text, "# exploration rate = {i0:?}");
            }
            stdout.write_all(text.as_bytes()).map_err(io_err)
        }
        Command::Simulate(args) => {
            let cfg = RunConfig::resolve(&args)?;
            let point = simulator::run_monte_carlo(&cfg.env, &cfg.policy, cfg.runs, cfg.seed, cfg.workers)?;
            simulator::write_sweep_csv(cfg.open_output(stdout)?, &[point])
        }
        Command::Sweep(args) => {
            let cfg = RunConfig::resolve(&args)?;
            let points = simulator::sweep(&cfg.env, &cfg.policy, &cfg.grid, cfg.runs, cfg.seed, cfg.workers)?;
            simulator::write_sweep_csv(cfg.open_output(stdout)?, &points)
        }
        Command::Compare { policies, common } => {
            let cfg = RunConfig::resolve(&common)?;
            let mut curves = Vec::new();
            for kind in parse_policies(&policies, &cfg)? {
                let spec = cfg.policy.clone().with_kind(kind);
                let points = simulator::sweep(&cfg.env, &spec, &cfg.grid, cfg.runs, cfg.seed, cfg.workers)?;
                curves.push((kind.name().to_string(), points));
            }
            simulator::write_compare_csv(cfg.open_output(stdout)?, &curves)
        }
        Command::TrafficDemo(args) => {
            let cfg = RunConfig::resolve(&args)?;
            let rows = traffic_demo(&cfg)?;
            write_traffic_csv(cfg.open_output(stdout)?, &rows)
        }
    }
}

/// One row of the delay-versus-flows table.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficRow {
    pub flows: usize,
    pub policy: PolicyKind,
    /// Stopping threshold the policy ran with.
    pub stop_threshold: f64,
    pub point: SweepPoint,
}

/// DS against the open-loop GLR detector for each configured flow count. DS
/// runs at the configured criterion; the open-loop threshold is calibrated
/// so that its error does not exceed the error DS reached.
pub fn traffic_demo(cfg: &RunConfig) -> Result<Vec<TrafficRow>> {
    let t = &cfg.traffic;
    let source = FlowObservations {
        model: t.model,
        source: t.source,
    };
    let mut rows = Vec::new();
    for &flows in &t.flows {
        let env = t.model.env(flows, 1)?;
        let ds = PolicySpec::ds(t.mode, t.statistic, cfg.policy.criterion);
        let point = simulator::run_monte_carlo_with(&env, &ds, cfg.runs, cfg.seed, cfg.workers, &source)?;
        let open = ds.clone().with_kind(PolicyKind::OpenLoopGlr);
        let calibrated =
            simulator::calibrate_threshold(&env, &open, point.p_error, cfg.runs, cfg.seed, cfg.workers, &source)?;
        rows.push(TrafficRow {
            flows,
            policy: PolicyKind::Ds,
            stop_threshold: ds.threshold(&env)?,
            point,
        });
        rows.push(TrafficRow {
            flows,
            policy: PolicyKind::OpenLoopGlr,
            stop_threshold: calibrated.threshold,
            point: calibrated.point,
        });
    }
    Ok(rows)
}

pub fn write_traffic_csv<W: Write>(out: W, rows: &[TrafficRow]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["M", "policy", "stop_threshold"].into_iter().chain(SWEEP_HEADER))?;
    for row in rows {
        let p = &row.point;
        writer.write_record([
            row.flows.to_string(),
            row.policy.name().to_string(),
            row.stop_threshold.to_string(),
            p.criterion.value().to_string(),
            p.criterion.name().to_string(),
            p.runs.to_string(),
            p.p_error.to_string(),
            p.p_error_ci.to_string(),
            p.mean_tau.to_string(),
            p.tau_ci.to_string(),
            p.mean_explore1.to_string(),
            p.mean_explore2.to_string(),
            p.undecided.to_string(),
        ])?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: "<csv output>".into(),
        source,
    })
}
