//! Per-cell log-likelihood-ratio accumulators: local and multi-process,
//! generalized and adaptive, plus the adjusted form against a known null.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimation::{log_likelihood, mle_constrained, mle_unconstrained, Constraint, SuffStats};
use crate::model::{Family, Param, ParameterSpace};

/// Numerator/denominator combination of an LLR statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatisticKind {
    /// Local generalized LLR: current MLE over the cell's constrained MLE.
    Lgllr,
    /// Local adaptive LLR: one-step-behind MLEs over the cell's constrained MLE.
    Lallr,
    /// Multi-process generalized LLR: current MLE over the pooled estimate.
    Mgllr,
    /// Multi-process adaptive LLR: one-step-behind MLEs over the pooled estimate.
    Mallr,
}

impl StatisticKind {
    pub fn is_adaptive(self) -> bool {
        matches!(self, StatisticKind::Lallr | StatisticKind::Mallr)
    }

    pub fn is_multi_process(self) -> bool {
        matches!(self, StatisticKind::Mgllr | StatisticKind::Mallr)
    }

    pub fn name(self) -> &'static str {
        match self {
            StatisticKind::Lgllr => "lgllr",
            StatisticKind::Lallr => "lallr",
            StatisticKind::Mgllr => "mgllr",
            StatisticKind::Mallr => "mallr",
        }
    }
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatisticKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lgllr" => Ok(StatisticKind::Lgllr),
            "lallr" => Ok(StatisticKind::Lallr),
            "mgllr" => Ok(StatisticKind::Mgllr),
            "mallr" => Ok(StatisticKind::Mallr),
            other => Err(format!(
                "unknown statistic `{other}` (expected lgllr, lallr, mgllr or mallr)"
            )),
        }
    }
}

/// What the decision maker knows about the normal-state parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NullMode {
    Unknown,
    /// Every normal cell has this parameter; the statistic rejecting the
    /// normal state uses it directly as its denominator.
    KnownTheta0(Param),
    /// Normal cells share one unknown parameter, estimated by pooling.
    PooledTheta0,
}

/// A statistic kind together with the null information it relies on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Statistic {
    pub kind: StatisticKind,
    pub null: NullMode,
}

impl Statistic {
    pub fn new(kind: StatisticKind, null: NullMode) -> Result<Self> {
        if kind.is_multi_process() && null == NullMode::Unknown {
            return Err(Error::config(
                "policy.statistic",
                format!("{kind} needs a pooled or known normal-state parameter"),
            ));
        }
        Ok(Statistic { kind, null })
    }
}

/// Estimates a statistic may need besides the cell's own data.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScoreContext {
    /// Pooled `θ̂⁽⁰⁾(n)` from cells that look normal.
    pub pooled0: Option<Param>,
    /// Pooled `θ̂⁽¹⁾(n)` from cells that look abnormal.
    pub pooled1: Option<Param>,
}

/// The observation model a trace is scored against.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceModel {
    pub family: Family,
    pub space: ParameterSpace,
    /// `θ̂_m(0)`, plugged into the adaptive numerator before enough data exists.
    pub init_theta: Param,
    /// Number of own observations required before the adaptive numerator
    /// switches from `init_theta` to the running MLE.
    pub warmup: usize,
}

impl TraceModel {
    /// Starts adaptive numerators at the middle of the indifference region.
    pub fn new(family: Family, space: ParameterSpace) -> Self {
        TraceModel {
            init_theta: space.indifference_midpoint(),
            warmup: family.dim(),
            family,
            space,
        }
    }
}

/// Observation history of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellTrace {
    cell: usize,
    observations: Vec<(u64, f64)>,
    stats: SuffStats,
    mle: Option<Param>,
    adaptive_numerator: f64,
}

impl CellTrace {
    pub fn new(cell: usize, family: &Family) -> Self {
        CellTrace {
            cell,
            observations: Vec::new(),
            stats: SuffStats::new(family),
            mle: None,
            adaptive_numerator: 0.0,
        }
    }

    pub fn cell(&self) -> usize {
        self.cell
    }

    /// `N_m(n)`.
    pub fn count(&self) -> usize {
        self.stats.n()
    }

    pub fn observations(&self) -> &[(u64, f64)] {
        &self.observations
    }

    pub fn stats(&self) -> &SuffStats {
        &self.stats
    }

    /// `θ̂_m(n)`; `None` before the first observation.
    pub fn mle(&self) -> Option<Param> {
        self.mle
    }

    pub fn adaptive_numerator(&self) -> f64 {
        self.adaptive_numerator
    }

    /// Records observation `y` taken at slot `n`. The adaptive numerator gains
    /// `ln f(y | θ̂_m(t-1))` using the estimate from before this observation;
    /// earlier terms are never revisited.
    pub fn ingest(&mut self, model: &TraceModel, y: f64, n: u64) -> Result<()> {
        if let Some(&(last, _)) = self.observations.last() {
            if n <= last {
                return Err(Error::Precondition(format!(
                    "cell {}: observation time {n} does not follow {last}",
                    self.cell
                )));
            }
        }
        let plug_in = match self.mle {
            Some(mle) if self.stats.n() >= model.warmup => mle,
            _ => model.init_theta,
        };
        let term = model.family.log_pdf(plug_in, y)?;
        self.adaptive_numerator += term;
        self.observations.push((n, y));
        self.stats.push(y);
        self.mle = Some(mle_unconstrained(&model.family, &model.space, &self.stats)?);
        Ok(())
    }

    /// `S_m^{(r)}(n)`: the statistic rejecting state `r` (0 normal, 1 abnormal).
    pub fn score(&self, model: &TraceModel, statistic: Statistic, r: u8, ctx: &ScoreContext) -> Result<f64> {
        let mle = self
            .mle
            .ok_or_else(|| Error::Precondition(format!("cell {} has no observations", self.cell)))?;
        let family = &model.family;
        let numerator = if statistic.kind.is_adaptive() {
            self.adaptive_numerator
        } else {
            log_likelihood(family, &self.stats, mle)
        };
        let denominator_param = match (r, statistic.null) {
            (0, NullMode::KnownTheta0(theta0)) => theta0,
            _ if statistic.kind.is_multi_process() => {
                let pooled = if r == 0 { ctx.pooled0 } else { ctx.pooled1 };
                pooled.ok_or_else(|| {
                    Error::MissingContext(format!("{} needs the pooled estimate for state {r}", statistic.kind))
                })?
            }
            _ => {
                let constraint = if r == 0 {
                    Constraint::Theta0
                } else {
                    Constraint::ThetaNot0
                };
                mle_constrained(family, &model.space, &self.stats, constraint)?
            }
        };
        Ok(numerator - log_likelihood(family, &self.stats, denominator_param))
    }
}

/// `S_{m̂}^{(0)}(n) + S_{m⁽¹⁾}^{(1)}(n)`.
pub fn joint_stop_statistic(
    traces: &[CellTrace],
    model: &TraceModel,
    statistic: Statistic,
    ctx: &ScoreContext,
    m_hat: usize,
    runner_up: usize,
) -> Result<f64> {
    if m_hat == runner_up {
        return Err(Error::Precondition(
            "the suspected cell and the runner-up must differ".into(),
        ));
    }
    Ok(traces[m_hat].score(model, statistic, 0, ctx)? + traces[runner_up].score(model, statistic, 1, ctx)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Interval, IntervalSet, Region};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian_model() -> TraceModel {
        let family = Family::GaussianKnownVariance { sigma: 1.0 };
        let space = ParameterSpace::split_at_midpoint(
            Region::scalar(IntervalSet::single(Interval::real_line())),
            Param::scalar(0.0),
            Param::scalar(1.0),
            1e-3,
        )
        .unwrap();
        TraceModel::new(family, space)
    }

    const KNOWN: Statistic = Statistic {
        kind: StatisticKind::Lallr,
        null: NullMode::KnownTheta0(Param::scalar(0.0)),
    };

    #[test]
    fn first_term_uses_initial_estimate() {
        let model = gaussian_model();
        let mut trace = CellTrace::new(0, &model.family);
        trace.ingest(&model, 0.3, 1).unwrap();
        let expected = model.family.log_pdf(model.init_theta, 0.3).unwrap();
        assert_eq!(trace.adaptive_numerator(), expected);
        assert_eq!(trace.mle(), Some(Param::scalar(0.3)));
    }

    #[test]
    fn second_term_uses_previous_mle() {
        let model = gaussian_model();
        let mut trace = CellTrace::new(0, &model.family);
        trace.ingest(&model, 0.5, 1).unwrap();
        let before = trace.adaptive_numerator();
        trace.ingest(&model, 0.5, 2).unwrap();
        assert!((trace.adaptive_numerator() - before + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn non_increasing_time_is_rejected() {
        let model = gaussian_model();
        let mut trace = CellTrace::new(0, &model.family);
        trace.ingest(&model, 0.1, 3).unwrap();
        assert!(matches!(trace.ingest(&model, 0.2, 3), Err(Error::Precondition(_))));
    }

    #[test]
    fn replay_is_bit_exact_and_append_only() {
        let model = gaussian_model();
        let ys = [0.4, -1.2, 2.2, 0.9, 0.05];
        let build = |k: usize| {
            let mut t = CellTrace::new(2, &model.family);
            for (i, &y) in ys[..k].iter().enumerate() {
                t.ingest(&model, y, i as u64 + 1).unwrap();
            }
            t
        };
        assert_eq!(build(5), build(5));
        // The prefix sum over the first k terms is unchanged by later observations.
        let mut running = 0.0;
        let mut plug = model.init_theta;
        for (k, &y) in ys.iter().enumerate() {
            running += model.family.log_pdf(plug, y).unwrap();
            let t = build(k + 1);
            assert_eq!(t.adaptive_numerator().to_bits(), running.to_bits());
            plug = t.mle().unwrap();
        }
    }

    #[test]
    fn adjusted_statistic_single_observation() {
        let model = gaussian_model();
        let mut trace = CellTrace::new(0, &model.family);
        trace.ingest(&model, 1.0, 1).unwrap();
        let s = trace.score(&model, KNOWN, 0, &ScoreContext::default()).unwrap();
        assert!((s - 0.375).abs() < 1e-12, "{s}");
    }

    #[test]
    fn lgllr_vanishes_when_constraint_is_inactive() {
        let model = gaussian_model();
        let mut trace = CellTrace::new(0, &model.family);
        for (i, y) in [0.1, -0.3, 0.2].into_iter().enumerate() {
            trace.ingest(&model, y, i as u64 + 1).unwrap();
        }
        let stat = Statistic::new(StatisticKind::Lgllr, NullMode::Unknown).unwrap();
        assert_eq!(trace.score(&model, stat, 0, &ScoreContext::default()).unwrap(), 0.0);
        assert!(trace.score(&model, stat, 1, &ScoreContext::default()).unwrap() > 0.0);
    }

    #[test]
    fn multi_process_kinds_need_context() {
        assert!(Statistic::new(StatisticKind::Mallr, NullMode::Unknown).is_err());
        let model = gaussian_model();
        let mut trace = CellTrace::new(0, &model.family);
        trace.ingest(&model, 0.2, 1).unwrap();
        let stat = Statistic::new(StatisticKind::Mallr, NullMode::PooledTheta0).unwrap();
        let err = trace.score(&model, stat, 0, &ScoreContext::default()).unwrap_err();
        assert!(matches!(err, Error::MissingContext(_)));
        let ctx = ScoreContext {
            pooled0: Some(Param::scalar(0.0)),
            pooled1: Some(Param::scalar(1.0)),
        };
        assert!(trace.score(&model, stat, 0, &ctx).is_ok());
    }

    #[test]
    fn joint_statistic_sums_components() {
        let model = gaussian_model();
        let stat = Statistic::new(StatisticKind::Mgllr, NullMode::PooledTheta0).unwrap();
        let ctx = ScoreContext {
            pooled0: Some(Param::scalar(0.0)),
            pooled1: Some(Param::scalar(1.0)),
        };
        let mut traces = vec![CellTrace::new(0, &model.family), CellTrace::new(1, &model.family)];
        traces[0].ingest(&model, 1.4, 1).unwrap();
        traces[1].ingest(&model, -0.2, 2).unwrap();
        let a = traces[0].score(&model, stat, 0, &ctx).unwrap();
        let b = traces[1].score(&model, stat, 1, &ctx).unwrap();
        let joint = joint_stop_statistic(&traces, &model, stat, &ctx, 0, 1).unwrap();
        assert_eq!(joint, a + b);
        assert!(joint_stop_statistic(&traces, &model, stat, &ctx, 1, 1).is_err());
    }

    #[test]
    fn adaptive_and_generalized_agree_with_frozen_estimates() {
        let mut model = gaussian_model();
        model.init_theta = Param::scalar(0.7);
        model.warmup = 1;
        let mut trace = CellTrace::new(0, &model.family);
        for n in 1..=6 {
            trace.ingest(&model, 0.7, n).unwrap();
        }
        let ctx = ScoreContext {
            pooled0: Some(Param::scalar(0.0)),
            pooled1: Some(Param::scalar(1.0)),
        };
        for (adaptive, generalized, null) in [
            (StatisticKind::Lallr, StatisticKind::Lgllr, NullMode::Unknown),
            (StatisticKind::Mallr, StatisticKind::Mgllr, NullMode::PooledTheta0),
        ] {
            for r in [0, 1] {
                let a = trace
                    .score(&model, Statistic::new(adaptive, null).unwrap(), r, &ctx)
                    .unwrap();
                let g = trace
                    .score(&model, Statistic::new(generalized, null).unwrap(), r, &ctx)
                    .unwrap();
                assert!((a - g).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjusted_statistic_is_a_unit_mean_martingale() {
        let model = gaussian_model();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let runs = 100_000;
        let mut mean_z1 = 0.0;
        for _ in 0..runs {
            let mut trace = CellTrace::new(0, &model.family);
            let y = model.family.sample(Param::scalar(0.0), &mut rng);
            trace.ingest(&model, y, 1).unwrap();
            mean_z1 += trace.score(&model, KNOWN, 0, &ScoreContext::default()).unwrap().exp();
        }
        mean_z1 /= runs as f64;
        assert!((mean_z1 - 1.0).abs() < 0.02, "E[Z(1)] = {mean_z1}");
    }
}
