//! The deterministic search (DS) policy: exploration / exploitation selection
//! for the three side-information regimes, the logarithmic exploration
//! schedule, and the stopping rules.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimation::{exploration_rate_i0, kl_divergence, pooled_mle, Side};
use crate::model::{EnvConfig, Param, RegionKind};
use crate::statistics::{CellTrace, NullMode, ScoreContext, Statistic, StatisticKind, TraceModel};

/// How much the decision maker knows about normal cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Every cell has its own unknown parameter.
    NoSideInfo,
    /// Normal cells share a known parameter (taken from the environment).
    KnownNull,
    /// Normal cells share one unknown parameter.
    CommonUnknownNull,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::NoSideInfo => "no-side-info",
            Mode::KnownNull => "known-null",
            Mode::CommonUnknownNull => "common-unknown-null",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "no-side-info" => Ok(Mode::NoSideInfo),
            "known-null" => Ok(Mode::KnownNull),
            "common-unknown-null" => Ok(Mode::CommonUnknownNull),
            other => Err(format!(
                "unknown mode `{other}` (expected no-side-info, known-null or common-unknown-null)"
            )),
        }
    }
}

/// Error-control criterion that fixes the stopping threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Criterion {
    /// Per-sample cost `c` relative to a unit loss for a wrong declaration.
    Bayes(f64),
    /// Error-probability constraint `α`.
    Frequentist(f64),
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Bayes(_) => "bayes",
            Criterion::Frequentist(_) => "frequentist",
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Criterion::Bayes(v) | Criterion::Frequentist(v) => v,
        }
    }

    pub fn with_value(&self, value: f64) -> Criterion {
        match self {
            Criterion::Bayes(_) => Criterion::Bayes(value),
            Criterion::Frequentist(_) => Criterion::Frequentist(value),
        }
    }

    /// Rejects the degenerate `c = 1` / `α = 1` that would stop immediately.
    pub fn validate(&self) -> Result<()> {
        let v = self.value();
        if v > 0.0 && v < 1.0 {
            Ok(())
        } else {
            Err(Error::config(
                "policy.level",
                format!("{} value must lie in (0, 1), got {v}", self.name()),
            ))
        }
    }
}

/// `-ln c` for the Bayes criterion, `ln((M-1)/α)` for the frequentist one.
pub fn threshold_for(criterion: Criterion, cells: usize) -> Result<f64> {
    let v = criterion.value();
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::domain(format!(
            "{} parameter must lie in (0, 1], got {v}",
            criterion.name()
        )));
    }
    match criterion {
        Criterion::Bayes(c) => Ok(-c.ln()),
        Criterion::Frequentist(alpha) => {
            if cells < 2 {
                return Err(Error::domain("frequentist threshold needs at least 2 cells"));
            }
            Ok(((cells - 1) as f64 / alpha).ln())
        }
    }
}

/// Which selection rule drives the search.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    Ds,
    Chernoff,
    OpenLoopGlr,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Ds => "ds",
            PolicyKind::Chernoff => "chernoff",
            PolicyKind::OpenLoopGlr => "openloop-glr",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "ds" => Ok(PolicyKind::Ds),
            "chernoff" => Ok(PolicyKind::Chernoff),
            "openloop-glr" => Ok(PolicyKind::OpenLoopGlr),
            other => Err(format!(
                "unknown policy `{other}` (expected ds, chernoff or openloop-glr)"
            )),
        }
    }
}

/// Everything needed to instantiate a policy for an environment.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub mode: Mode,
    pub statistic: StatisticKind,
    pub criterion: Criterion,
    /// Minimum-sample floor factor (common-unknown-null mode only).
    pub epsilon: f64,
    /// Exploration rate override.
    pub i0: Option<f64>,
    /// Alternative parameters for computing `I₀`; defaults to the abnormal parameter.
    pub i0_grid: Option<Vec<Param>>,
    /// Starting estimate for adaptive numerators; defaults to the middle of the
    /// indifference region.
    pub init_theta: Option<Param>,
    pub max_slots: Option<u64>,
    /// Stopping threshold used instead of the one derived from `criterion`.
    pub threshold_override: Option<f64>,
}

impl PolicySpec {
    pub fn ds(mode: Mode, statistic: StatisticKind, criterion: Criterion) -> Self {
        PolicySpec {
            kind: PolicyKind::Ds,
            mode,
            statistic,
            criterion,
            epsilon: 0.05,
            i0: None,
            i0_grid: None,
            init_theta: None,
            max_slots: None,
            threshold_override: None,
        }
    }

    pub fn with_kind(mut self, kind: PolicyKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_criterion(mut self, criterion: Criterion) -> Self {
        self.criterion = criterion;
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold_override = Some(threshold);
        self
    }

    pub fn threshold(&self, env: &EnvConfig) -> Result<f64> {
        match self.threshold_override {
            Some(threshold) => Ok(threshold),
            None => threshold_for(self.criterion, env.cells),
        }
    }

    pub fn null_mode(&self, env: &EnvConfig) -> NullMode {
        match self.mode {
            Mode::NoSideInfo => NullMode::Unknown,
            Mode::KnownNull => NullMode::KnownTheta0(env.true_theta0),
            Mode::CommonUnknownNull => NullMode::PooledTheta0,
        }
    }

    pub fn validate(&self, env: &EnvConfig) -> Result<()> {
        self.criterion.validate()?;
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("policy.epsilon", "must be a nonnegative number"));
        }
        if let Some(i0) = self.i0 {
            if !(i0 > 0.0 && i0.is_finite()) {
                return Err(Error::config("policy.i0", format!("must be positive, got {i0}")));
            }
        }
        if let Some(theta) = self.init_theta {
            if !env.family.valid_param(theta) {
                return Err(Error::config(
                    "policy.init_theta",
                    format!("{theta} is not a valid parameter"),
                ));
            }
        }
        if let Some(threshold) = self.threshold_override {
            if !(threshold >= 0.0 && threshold.is_finite()) {
                return Err(Error::config(
                    "policy.threshold",
                    format!("must be a nonnegative number, got {threshold}"),
                ));
            }
        }
        if self.max_slots == Some(0) {
            return Err(Error::config("policy.max_slots", "must be positive"));
        }
        if self.kind != PolicyKind::OpenLoopGlr {
            Statistic::new(self.statistic, self.null_mode(env))?;
        }
        if self.mode == Mode::CommonUnknownNull && self.kind != PolicyKind::OpenLoopGlr {
            self.exploration_rate(env)?;
        }
        Ok(())
    }

    /// `I₀`, from the override or from the configured grid.
    pub fn exploration_rate(&self, env: &EnvConfig) -> Result<f64> {
        if let Some(i0) = self.i0 {
            return Ok(i0);
        }
        let grid = self.i0_grid.clone().unwrap_or_else(|| vec![env.true_theta1]);
        exploration_rate_i0(&env.family, env.true_theta0, &grid)
            .map_err(|e| Error::config("policy.i0_grid", e.to_string()))
    }

    /// Copy with the exploration rate computed once, so that repeated episodes
    /// skip the numeric optimization.
    pub fn resolved(&self, env: &EnvConfig) -> Result<PolicySpec> {
        let mut spec = self.clone();
        if spec.i0.is_none() && spec.mode == Mode::CommonUnknownNull && spec.kind != PolicyKind::OpenLoopGlr {
            spec.i0 = Some(spec.exploration_rate(env)?);
        }
        Ok(spec)
    }

    pub fn trace_model(&self, env: &EnvConfig) -> TraceModel {
        let mut model = TraceModel::new(env.family, env.space.clone());
        if let Some(theta) = self.init_theta {
            model.init_theta = theta;
        }
        model
    }
}

/// Phase that produced an action.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Round-robin while the number of suspicious cells is wrong.
    Explore1,
    /// Scheduled round-robin pass keeping the pooled null estimate consistent.
    Explore2,
    Exploit,
}

/// The cells probed in one slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Action {
    pub probe_set: Vec<usize>,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Continue,
    /// Declared anomalous cells, ascending.
    Declare(Vec<usize>),
}

/// Common driving interface of the DS policy and the baselines.
pub trait SearchPolicy {
    /// Chooses the cells for the next slot.
    fn select(&mut self) -> Result<Action>;
    /// Records the slot's observations as `(cell, y)` pairs and advances time.
    fn observe(&mut self, observations: &[(usize, f64)]) -> Result<()>;
    fn check_stop(&self) -> Result<Verdict>;
}

/// Full decision state of the DS policy.
#[derive(Clone, Debug)]
pub struct PolicyState {
    mode: Mode,
    statistic: Statistic,
    model: TraceModel,
    traces: Vec<CellTrace>,
    n: u64,
    rr_cursor: usize,
    explore2_count: usize,
    explore2_pending: usize,
    i0: Option<f64>,
    ctx: ScoreContext,
    threshold: f64,
    min_samples_floor: u64,
    probes: usize,
    anomalies: usize,
    needs_pooled: bool,
}

impl PolicyState {
    pub fn new(env: &EnvConfig, spec: &PolicySpec) -> Result<Self> {
        env.validate()?;
        spec.validate(env)?;
        let statistic = Statistic::new(spec.statistic, spec.null_mode(env))?;
        let threshold = spec.threshold(env)?;
        let common = spec.mode == Mode::CommonUnknownNull;
        let model = spec.trace_model(env);
        Ok(PolicyState {
            mode: spec.mode,
            statistic,
            traces: (0..env.cells).map(|m| CellTrace::new(m, &model.family)).collect(),
            model,
            n: 0,
            rr_cursor: 0,
            explore2_count: 0,
            explore2_pending: 0,
            i0: if common {
                Some(spec.exploration_rate(env)?)
            } else {
                None
            },
            ctx: ScoreContext::default(),
            threshold,
            min_samples_floor: if common {
                (spec.epsilon * threshold).ceil() as u64
            } else {
                0
            },
            probes: env.probes,
            anomalies: env.anomalies,
            needs_pooled: statistic.kind.is_multi_process() || common || spec.kind == PolicyKind::Chernoff,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn statistic(&self) -> Statistic {
        self.statistic
    }

    pub fn model(&self) -> &TraceModel {
        &self.model
    }

    pub fn traces(&self) -> &[CellTrace] {
        &self.traces
    }

    pub fn cells(&self) -> usize {
        self.traces.len()
    }

    pub fn probes(&self) -> usize {
        self.probes
    }

    pub fn anomalies(&self) -> usize {
        self.anomalies
    }

    /// Slots elapsed.
    pub fn time(&self) -> u64 {
        self.n
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn min_samples_floor(&self) -> u64 {
        self.min_samples_floor
    }

    pub fn rr_cursor(&self) -> usize {
        self.rr_cursor
    }

    /// `N_O`: observations scheduled by exploration phase 2 so far.
    pub fn explore2_count(&self) -> usize {
        self.explore2_count
    }

    pub fn context(&self) -> &ScoreContext {
        &self.ctx
    }

    pub fn all_observed(&self) -> bool {
        self.traces.iter().all(|t| t.count() > 0)
    }

    /// `H₁(n)`: cells whose MLE lies outside `Θ⁰`, ascending. An MLE in the
    /// indifference region counts as outside; unobserved cells never count.
    pub fn h1(&self) -> Vec<usize> {
        self.traces
            .iter()
            .filter(|t| {
                t.mle()
                    .is_some_and(|mle| !self.model.space.region_contains(RegionKind::Theta0, mle))
            })
            .map(CellTrace::cell)
            .collect()
    }

    /// `(N_{H₁}(n), H₁(n))`.
    pub fn n_h1(&self) -> (usize, Vec<usize>) {
        let h1 = self.h1();
        (h1.len(), h1)
    }

    /// Whether slot `n` belongs to the exploration-2 schedule: the count of
    /// exploration-2 observations is strictly below `(2/I₀) ln n`.
    pub fn exploration_due(&self, n: u64) -> Result<bool> {
        let i0 = self
            .i0
            .ok_or_else(|| Error::config("policy.mode", "exploration schedule needs common-unknown-null mode"))?;
        exploration_due(self.explore2_count, n, i0)
    }

    /// `S_m^{(r)}(n)` under the policy's statistic.
    pub fn score(&self, cell: usize, r: u8) -> Result<f64> {
        self.traces[cell].score(&self.model, self.statistic, r, &self.ctx)
    }

    /// Cells outside `exclude`, ordered by ascending `S^{(1)}`; lowest index wins ties.
    pub fn ordered_by_s1(&self, exclude: &[usize]) -> Result<Vec<usize>> {
        let mut scored = Vec::with_capacity(self.cells());
        for m in 0..self.cells() {
            if !exclude.contains(&m) {
                scored.push((self.score(m, 1)?, m));
            }
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().map(|(_, m)| m).collect())
    }

    /// The `(θ̂⁰, θ̂¹)` pair used by the KL branch guard: pooled estimates,
    /// with the known null replacing `θ̂⁰` when available.
    pub fn guard_estimates(&self) -> Option<(Param, Param)> {
        let theta0 = match self.statistic.null {
            NullMode::KnownTheta0(theta0) => Some(theta0),
            _ => self.ctx.pooled0,
        }?;
        Some((theta0, self.ctx.pooled1?))
    }

    /// `true` when `D(θ̂¹‖θ̂⁰) ≥ D(θ̂⁰‖θ̂¹)/(M-1)`: probe the suspected cell first.
    pub fn target_first(&self) -> Option<bool> {
        let (theta0, theta1) = self.guard_estimates()?;
        Some(target_first(&self.model.family, theta0, theta1, self.cells()))
    }

    /// `K` consecutive cells from the round-robin cursor.
    fn round_robin(&mut self) -> Vec<usize> {
        let m = self.cells();
        let probes: Vec<usize> = (0..self.probes).map(|i| (self.rr_cursor + i) % m).collect();
        self.rr_cursor = (self.rr_cursor + self.probes) % m;
        probes
    }

    /// Exploration phase 1 applies while some cell is unobserved or the
    /// number of suspicious cells differs from the number of anomalies.
    pub fn in_explore1(&self) -> bool {
        !self.all_observed() || self.h1().len() != self.anomalies
    }

    /// Shared phase logic: returns the exploration phase for the next slot, if
    /// any, updating exploration-2 bookkeeping.
    pub(crate) fn exploration_phase(&mut self) -> Result<Option<Phase>> {
        if self.in_explore1() {
            return Ok(Some(Phase::Explore1));
        }
        if self.mode == Mode::CommonUnknownNull {
            if self.explore2_pending > 0 {
                self.explore2_pending -= 1;
                return Ok(Some(Phase::Explore2));
            }
            if self.exploration_due(self.n + 1)? {
                let m = self.cells();
                self.explore2_count += m;
                self.explore2_pending = m.div_ceil(self.probes) - 1;
                return Ok(Some(Phase::Explore2));
            }
        }
        Ok(None)
    }

    fn exploit(&self) -> Result<Vec<usize>> {
        let h1 = self.h1();
        let first = match self.mode {
            Mode::CommonUnknownNull => self
                .target_first()
                .ok_or_else(|| Error::MissingContext("pooled estimates unavailable during exploitation".into()))?,
            // Only the target-first branch is defined without a pooled null.
            _ => true,
        };
        if first && self.probes <= h1.len() {
            return Ok(h1[..self.probes].to_vec());
        }
        let rest = self.ordered_by_s1(&h1)?;
        let order: Vec<usize> = if first {
            h1.iter().chain(&rest).copied().collect()
        } else {
            rest.iter().chain(&h1).copied().collect()
        };
        Ok(order[..self.probes].to_vec())
    }

    /// Records one slot of observations at time `n + 1`.
    pub fn ingest_slot(&mut self, observations: &[(usize, f64)]) -> Result<()> {
        let t = self.n + 1;
        for &(cell, y) in observations {
            let trace = self
                .traces
                .get_mut(cell)
                .ok_or_else(|| Error::Precondition(format!("cell {cell} out of range")))?;
            trace.ingest(&self.model, y, t)?;
        }
        self.n = t;
        if self.needs_pooled {
            self.refresh_pooled()?;
        }
        Ok(())
    }

    fn refresh_pooled(&mut self) -> Result<()> {
        let observed = || self.traces.iter().filter_map(|t| t.mle().map(|mle| (t.stats(), mle)));
        let pooled0 = pooled_mle(&self.model.family, &self.model.space, observed(), Side::Normal)?;
        let pooled1 = pooled_mle(&self.model.family, &self.model.space, observed(), Side::Abnormal)?;
        self.ctx = ScoreContext { pooled0, pooled1 };
        Ok(())
    }

    /// Stopping statistic when the declared set is well defined.
    pub fn stop_statistic(&self) -> Result<Option<(f64, Vec<usize>)>> {
        if self.in_explore1() {
            return Ok(None);
        }
        let h1 = self.h1();
        let multi = self.anomalies > 1 || self.mode == Mode::CommonUnknownNull;
        let weakest_target = h1
            .iter()
            .map(|&m| self.score(m, 0))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let value = if multi {
            let mut best_rest = f64::INFINITY;
            for m in (0..self.cells()).filter(|m| !h1.contains(m)) {
                best_rest = best_rest.min(self.score(m, 1)?);
            }
            weakest_target + best_rest
        } else {
            weakest_target
        };
        Ok(Some((value, h1)))
    }
}

/// `N_O < (2/I₀) ln n`.
pub fn exploration_due(explore2_count: usize, n: u64, i0: f64) -> Result<bool> {
    if i0.is_nan() || i0 <= 0.0 {
        return Err(Error::config(
            "policy.i0",
            format!("exploration rate must be positive, got {i0}"),
        ));
    }
    let bound = 2.0 / i0 * (n.max(1) as f64).ln();
    Ok((explore2_count as f64) < bound)
}

/// The KL branch guard `D(θ¹‖θ⁰) ≥ D(θ⁰‖θ¹)/(M-1)`.
pub fn target_first(family: &crate::model::Family, theta0: Param, theta1: Param, cells: usize) -> bool {
    kl_divergence(family, theta1, theta0) >= kl_divergence(family, theta0, theta1) / (cells - 1) as f64
}

impl SearchPolicy for PolicyState {
    fn select(&mut self) -> Result<Action> {
        if self.probes == self.cells() {
            let phase = self.exploration_phase()?.unwrap_or(Phase::Exploit);
            return Ok(Action {
                probe_set: (0..self.cells()).collect(),
                phase,
            });
        }
        match self.exploration_phase()? {
            Some(phase) => Ok(Action {
                probe_set: self.round_robin(),
                phase,
            }),
            None => Ok(Action {
                probe_set: self.exploit()?,
                phase: Phase::Exploit,
            }),
        }
    }

    fn observe(&mut self, observations: &[(usize, f64)]) -> Result<()> {
        self.ingest_slot(observations)
    }

    /// Declares once the stopping statistic reaches the threshold, `|H₁| = L`,
    /// and (common-unknown-null mode) the minimum-sample floor has passed.
    fn check_stop(&self) -> Result<Verdict> {
        if self.n < self.min_samples_floor {
            return Ok(Verdict::Continue);
        }
        match self.stop_statistic()? {
            Some((value, cells)) if value >= self.threshold => Ok(Verdict::Declare(cells)),
            _ => Ok(Verdict::Continue),
        }
    }
}
