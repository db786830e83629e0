//! Monte Carlo harness: draws the anomalous cells from the prior, streams
//! observations to a policy and aggregates error rate, delay and exploration.

use std::io::Write;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{ChernoffState, OpenLoopGlr};
use crate::error::{Error, Result};
use crate::estimation::kl_divergence;
use crate::model::EnvConfig;
use crate::policy::{Criterion, Phase, PolicyKind, PolicySpec, PolicyState, SearchPolicy, Verdict};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Episodes that never stop are truncated after this many slots if the
/// divergence-based cap would be shorter.
const MIN_SLOT_CAP: u64 = 1_000;

/// Cap used when the divergence between the true parameters is unusable.
const FALLBACK_SLOT_CAP: u64 = 100_000;

/// Outcome of one simulated search.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub true_cells: Vec<usize>,
    /// Declared cells, sorted; empty when the episode hit the slot cap.
    pub declared: Vec<usize>,
    pub tau: u64,
    pub explore1_slots: u64,
    pub explore2_slots: u64,
    pub correct: bool,
    pub undecided: bool,
    pub seed: u64,
}

/// Aggregate over many episodes at one threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub criterion: Criterion,
    pub runs: u64,
    pub p_error: f64,
    /// 95% half-width, normal approximation to the binomial.
    pub p_error_ci: f64,
    pub mean_tau: f64,
    /// 95% half-width from the sample standard deviation.
    pub tau_ci: f64,
    pub mean_explore1: f64,
    pub mean_explore2: f64,
    pub undecided: u64,
}

impl SweepPoint {
    /// Aggregates results in the given order.
    pub fn from_results(criterion: Criterion, results: &[EpisodeResult]) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::Precondition("cannot aggregate zero runs".into()));
        }
        let n = results.len() as f64;
        let errors = results.iter().filter(|r| !r.correct).count() as f64;
        let p_error = errors / n;
        let mean_tau = results.iter().map(|r| r.tau as f64).sum::<f64>() / n;
        let tau_var = if results.len() > 1 {
            results.iter().map(|r| (r.tau as f64 - mean_tau).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(SweepPoint {
            criterion,
            runs: results.len() as u64,
            p_error,
            p_error_ci: binomial_half_width(p_error, results.len() as u64),
            mean_tau,
            tau_ci: Z95 * (tau_var / n).sqrt(),
            mean_explore1: results.iter().map(|r| r.explore1_slots as f64).sum::<f64>() / n,
            mean_explore2: results.iter().map(|r| r.explore2_slots as f64).sum::<f64>() / n,
            undecided: results.iter().filter(|r| r.undecided).count() as u64,
        })
    }

    pub fn p_error_interval(&self) -> (f64, f64) {
        (self.p_error - self.p_error_ci, self.p_error + self.p_error_ci)
    }

    pub fn tau_interval(&self) -> (f64, f64) {
        (self.mean_tau - self.tau_ci, self.mean_tau + self.tau_ci)
    }
}

/// `1.96·sqrt(p(1-p)/n)`.
pub fn binomial_half_width(p: f64, n: u64) -> f64 {
    Z95 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Produces the observation of one probed cell.
pub trait ObservationModel: Sync {
    fn sample(&self, env: &EnvConfig, cell: usize, anomalous: bool, rng: &mut ChaCha8Rng) -> f64;
}

/// Draws from the environment's family at the true normal or abnormal parameter.
#[derive(Clone, Copy, Debug, Default)]
pub struct FamilyObservations;

impl ObservationModel for FamilyObservations {
    fn sample(&self, env: &EnvConfig, _cell: usize, anomalous: bool, rng: &mut ChaCha8Rng) -> f64 {
        let theta = if anomalous { env.true_theta1 } else { env.true_theta0 };
        env.family.sample(theta, rng)
    }
}

/// Draws the anomalous set from the prior; several anomalies are drawn
/// sequentially without replacement in proportion to the prior.
pub fn sample_anomalies<R: Rng + ?Sized>(env: &EnvConfig, rng: &mut R) -> Result<Vec<usize>> {
    let mut weights = env.prior.clone();
    let mut cells = Vec::with_capacity(env.anomalies);
    for _ in 0..env.anomalies {
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::config("env.prior", e.to_string()))?;
        let m = dist.sample(rng);
        weights[m] = 0.0;
        cells.push(m);
    }
    cells.sort_unstable();
    Ok(cells)
}

/// Slot cap: the configured value, else `200·threshold/D(θ¹‖θ⁰)` (at least
/// 1000 slots).
pub fn slot_cap(env: &EnvConfig, spec: &PolicySpec) -> Result<u64> {
    if let Some(cap) = spec.max_slots {
        return Ok(cap);
    }
    let threshold = spec.threshold(env)?;
    let d = kl_divergence(&env.family, env.true_theta1, env.true_theta0);
    if !(d > 0.0 && d.is_finite()) {
        return Ok(FALLBACK_SLOT_CAP);
    }
    let cap = (200.0 * threshold / d).ceil();
    Ok((cap as u64).clamp(MIN_SLOT_CAP, u64::MAX / 2))
}

/// Instantiates the policy named by `spec.kind`. The seed feeds only the
/// randomized baselines.
pub fn build_policy(env: &EnvConfig, spec: &PolicySpec, seed: u64) -> Result<Box<dyn SearchPolicy>> {
    Ok(match spec.kind {
        PolicyKind::Ds => Box::new(PolicyState::new(env, spec)?),
        PolicyKind::Chernoff => Box::new(ChernoffState::new(env, spec, seed)?),
        PolicyKind::OpenLoopGlr => Box::new(OpenLoopGlr::new(env, spec)?),
    })
}

/// Runs one episode with family observations.
pub fn run_episode(env: &EnvConfig, spec: &PolicySpec, seed: u64) -> Result<EpisodeResult> {
    run_episode_with(env, spec, seed, &FamilyObservations)
}

/// Runs one episode with a custom observation model.
pub fn run_episode_with(
    env: &EnvConfig,
    spec: &PolicySpec,
    seed: u64,
    source: &dyn ObservationModel,
) -> Result<EpisodeResult> {
    let spec = spec.resolved(env)?;
    episode(env, &spec, seed, source)
}

fn episode(env: &EnvConfig, spec: &PolicySpec, seed: u64, source: &dyn ObservationModel) -> Result<EpisodeResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = sample_anomalies(env, &mut rng)?;
    let mut policy = build_policy(env, spec, rng.random())?;
    drive(
        env,
        policy.as_mut(),
        source,
        truth,
        &mut rng,
        slot_cap(env, spec)?,
        seed,
    )
}

/// Steps `policy` against `truth` until it declares or `max_slots` pass.
pub fn drive(
    env: &EnvConfig,
    policy: &mut dyn SearchPolicy,
    source: &dyn ObservationModel,
    truth: Vec<usize>,
    rng: &mut ChaCha8Rng,
    max_slots: u64,
    seed: u64,
) -> Result<EpisodeResult> {
    let mut result = EpisodeResult {
        true_cells: truth,
        declared: Vec::new(),
        tau: 0,
        explore1_slots: 0,
        explore2_slots: 0,
        correct: false,
        undecided: true,
        seed,
    };
    let mut seen = vec![false; env.cells];
    let mut observations = Vec::with_capacity(env.probes);
    while result.tau < max_slots {
        let action = policy.select()?;
        check_probe_set(&action.probe_set, env, &mut seen)?;
        match action.phase {
            Phase::Explore1 => result.explore1_slots += 1,
            Phase::Explore2 => result.explore2_slots += 1,
            Phase::Exploit => {}
        }
        observations.clear();
        for &cell in &action.probe_set {
            let anomalous = result.true_cells.binary_search(&cell).is_ok();
            observations.push((cell, source.sample(env, cell, anomalous, rng)));
        }
        policy.observe(&observations)?;
        result.tau += 1;
        if let Verdict::Declare(mut cells) = policy.check_stop()? {
            cells.sort_unstable();
            result.correct = cells == result.true_cells;
            result.declared = cells;
            result.undecided = false;
            break;
        }
    }
    Ok(result)
}

fn check_probe_set(probe_set: &[usize], env: &EnvConfig, seen: &mut [bool]) -> Result<()> {
    if probe_set.len() != env.probes {
        return Err(Error::Precondition(format!(
            "policy probed {} cells, expected {}",
            probe_set.len(),
            env.probes
        )));
    }
    seen.fill(false);
    for &cell in probe_set {
        if cell >= env.cells || std::mem::replace(&mut seen[cell], true) {
            return Err(Error::Precondition(format!("invalid probe set {probe_set:?}")));
        }
    }
    Ok(())
}

/// Runs `n_runs` episodes with seeds `base_seed + i` on `workers` threads
/// and reduces in run order, so the aggregate does not depend on `workers`.
pub fn run_monte_carlo(
    env: &EnvConfig,
    spec: &PolicySpec,
    n_runs: u64,
    base_seed: u64,
    workers: usize,
) -> Result<SweepPoint> {
    run_monte_carlo_with(env, spec, n_runs, base_seed, workers, &FamilyObservations)
}

pub fn run_monte_carlo_with(
    env: &EnvConfig,
    spec: &PolicySpec,
    n_runs: u64,
    base_seed: u64,
    workers: usize,
    source: &dyn ObservationModel,
) -> Result<SweepPoint> {
    env.validate()?;
    let spec = spec.resolved(env)?;
    spec.validate(env)?;
    let results = run_episodes(n_runs, base_seed, workers, |seed| episode(env, &spec, seed, source))?;
    SweepPoint::from_results(spec.criterion, &results)
}

/// Parallel map over seeds `base_seed..base_seed + n_runs`, in seed order.
pub fn run_episodes<F>(n_runs: u64, base_seed: u64, workers: usize, episode: F) -> Result<Vec<EpisodeResult>>
where
    F: Fn(u64) -> Result<EpisodeResult> + Sync,
{
    if n_runs == 0 {
        return Err(Error::config("run.runs", "must be at least 1"));
    }
    if workers == 0 {
        return Err(Error::config("run.workers", "must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config("run.workers", e.to_string()))?;
    pool.install(|| {
        (0..n_runs)
            .into_par_iter()
            .map(|i| episode(base_seed.wrapping_add(i)))
            .collect()
    })
}

/// One Monte Carlo point per criterion value.
pub fn sweep(
    env: &EnvConfig,
    spec: &PolicySpec,
    grid: &[f64],
    n_runs: u64,
    base_seed: u64,
    workers: usize,
) -> Result<Vec<SweepPoint>> {
    sweep_with(env, spec, grid, n_runs, base_seed, workers, &FamilyObservations)
}

pub fn sweep_with(
    env: &EnvConfig,
    spec: &PolicySpec,
    grid: &[f64],
    n_runs: u64,
    base_seed: u64,
    workers: usize,
    source: &dyn ObservationModel,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::config("sweep.grid", "must contain at least one value"));
    }
    grid.iter()
        .map(|&value| {
            let spec = spec.clone().with_criterion(spec.criterion.with_value(value));
            run_monte_carlo_with(env, &spec, n_runs, base_seed, workers, source)
        })
        .collect()
}

/// A stopping threshold found by [`calibrate_threshold`] and the Monte Carlo
/// point it produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub point: SweepPoint,
}

/// Smallest stopping threshold, to relative precision `1e-3`, whose empirical
/// error over seeds `base_seed..base_seed + n_runs` is at most `target_error`.
/// Every candidate reuses the same seeds, so the search is deterministic.
pub fn calibrate_threshold(
    env: &EnvConfig,
    spec: &PolicySpec,
    target_error: f64,
    n_runs: u64,
    base_seed: u64,
    workers: usize,
    source: &dyn ObservationModel,
) -> Result<Calibration> {
    if !(0.0..1.0).contains(&target_error) {
        return Err(Error::Precondition(format!(
            "target error must be in [0, 1), got {target_error}"
        )));
    }
    let spec = spec.resolved(env)?;
    let evaluate = |threshold: f64| {
        let point = run_monte_carlo_with(
            env,
            &spec.clone().with_threshold(threshold),
            n_runs,
            base_seed,
            workers,
            source,
        )?;
        Ok::<_, Error>(Calibration { threshold, point })
    };
    let meets = |c: &Calibration| c.point.p_error <= target_error;

    let mut hi = evaluate(spec.threshold(env)?.max(1.0))?;
    let mut doublings = 0;
    while !meets(&hi) {
        doublings += 1;
        if doublings > 12 {
            return Err(Error::domain(format!(
                "no threshold up to {} reaches error {target_error}",
                hi.threshold
            )));
        }
        hi = evaluate(2.0 * hi.threshold)?;
    }
    let mut lo = 0.0;
    while hi.threshold - lo > 1e-3 * hi.threshold {
        let mid = evaluate(0.5 * (lo + hi.threshold))?;
        if meets(&mid) {
            hi = mid;
        } else {
            lo = mid.threshold;
        }
    }
    Ok(hi)
}

pub const SWEEP_HEADER: [&str; 10] = [
    "threshold",
    "criterion",
    "runs",
    "p_error",
    "p_error_ci",
    "mean_tau",
    "tau_ci",
    "mean_explore1",
    "mean_explore2",
    "undecided",
];

fn point_record(point: &SweepPoint) -> Vec<String> {
    vec![
        point.criterion.value().to_string(),
        point.criterion.name().to_string(),
        point.runs.to_string(),
        point.p_error.to_string(),
        point.p_error_ci.to_string(),
        point.mean_tau.to_string(),
        point.tau_ci.to_string(),
        point.mean_explore1.to_string(),
        point.mean_explore2.to_string(),
        point.undecided.to_string(),
    ]
}

/// Writes sweep points as CSV.
pub fn write_sweep_csv<W: Write>(out: W, points: &[SweepPoint]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(SWEEP_HEADER)?;
    for point in points {
        writer.write_record(point_record(point))?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: "<csv output>".into(),
        source,
    })
}

/// Writes several labeled curves into one CSV with a leading `policy` column.
pub fn write_compare_csv<W: Write>(out: W, curves: &[(String, Vec<SweepPoint>)]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(std::iter::once("policy").chain(SWEEP_HEADER))?;
    for (label, points) in curves {
        for point in points {
            writer.write_record(std::iter::once(label.clone()).chain(point_record(point)))?;
        }
    }
    writer.flush().map_err(|source| Error::Io {
        path: "<csv output>".into(),
        source,
    })
}
