//! Reference policies: the modified randomized Chernoff test and the
//! open-loop (round-robin) GLR detector.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::EnvConfig;
use crate::policy::{Action, Phase, PolicySpec, PolicyState, SearchPolicy, Verdict};
use crate::statistics::{CellTrace, NullMode, ScoreContext, Statistic, StatisticKind, TraceModel};

/// Source of the randomized part of a selection.
pub trait CellChooser {
    /// `k` distinct cells from `candidates`.
    fn choose(&mut self, candidates: &[usize], k: usize) -> Vec<usize>;
}

/// Uniform draws without replacement.
#[derive(Clone, Debug)]
pub struct UniformChooser {
    rng: ChaCha8Rng,
}

impl UniformChooser {
    pub fn new(seed: u64) -> Self {
        UniformChooser {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl CellChooser for UniformChooser {
    fn choose(&mut self, candidates: &[usize], k: usize) -> Vec<usize> {
        candidates.choose_multiple(&mut self.rng, k).copied().collect()
    }
}

/// Replaces randomness with "lowest admissible index first".
#[derive(Clone, Copy, Debug, Default)]
pub struct LowestIndexChooser;

impl CellChooser for LowestIndexChooser {
    fn choose(&mut self, candidates: &[usize], k: usize) -> Vec<usize> {
        let mut sorted = candidates.to_vec();
        sorted.sort_unstable();
        sorted.truncate(k);
        sorted
    }
}

/// The modified Chernoff test: uniform exploration while the number of
/// suspicious cells is wrong (and on the exploration-2 schedule), then the
/// closed-form solution of the maximin selection:
///
/// * `D(θ̂¹‖θ̂⁰) ≥ D(θ̂⁰‖θ̂¹)/(M-1)`: the suspected cell plus `K-1` uniform draws
///   from the remaining cells;
/// * otherwise: `K` uniform draws from the cells not suspected.
///
/// Bookkeeping and the stopping rule are shared with the DS policy.
#[derive(Clone, Debug)]
pub struct ChernoffState<C: CellChooser = UniformChooser> {
    inner: PolicyState,
    chooser: C,
}

impl ChernoffState<UniformChooser> {
    pub fn new(env: &EnvConfig, spec: &PolicySpec, seed: u64) -> Result<Self> {
        Ok(ChernoffState {
            inner: PolicyState::new(env, spec)?,
            chooser: UniformChooser::new(seed),
        })
    }
}

impl<C: CellChooser> ChernoffState<C> {
    pub fn with_chooser(inner: PolicyState, chooser: C) -> Self {
        ChernoffState { inner, chooser }
    }

    pub fn state(&self) -> &PolicyState {
        &self.inner
    }
}

impl<C: CellChooser> SearchPolicy for ChernoffState<C> {
    fn select(&mut self) -> Result<Action> {
        let cells = self.inner.cells();
        let k = self.inner.probes();
        let all: Vec<usize> = (0..cells).collect();
        if let Some(phase) = self.inner.exploration_phase()? {
            let probe_set = if k == cells { all } else { self.chooser.choose(&all, k) };
            return Ok(Action { probe_set, phase });
        }
        if k == cells {
            return Ok(Action {
                probe_set: all,
                phase: Phase::Exploit,
            });
        }
        let h1 = self.inner.h1();
        let rest: Vec<usize> = all.iter().copied().filter(|m| !h1.contains(m)).collect();
        let first = self.inner.target_first().unwrap_or(true);
        let mut probe_set = Vec::with_capacity(k);
        if first {
            probe_set.extend(h1.iter().take(k));
            let need = k - probe_set.len();
            probe_set.extend(self.chooser.choose(&rest, need));
        } else {
            probe_set.extend(self.chooser.choose(&rest, k.min(rest.len())));
            let need = k - probe_set.len();
            probe_set.extend(h1.iter().take(need));
        }
        Ok(Action {
            probe_set,
            phase: Phase::Exploit,
        })
    }

    fn observe(&mut self, observations: &[(usize, f64)]) -> Result<()> {
        self.inner.ingest_slot(observations)
    }

    fn check_stop(&self) -> Result<Verdict> {
        self.inner.check_stop()
    }
}

/// Open-loop detector: probes cells round-robin forever and declares the
/// first cell whose local GLR statistic against the normal region crosses
/// the threshold.
#[derive(Clone, Debug)]
pub struct OpenLoopGlr {
    model: TraceModel,
    traces: Vec<CellTrace>,
    scores: Vec<f64>,
    n: u64,
    cursor: usize,
    probes: usize,
    anomalies: usize,
    threshold: f64,
}

const LOCAL_GLR: Statistic = Statistic {
    kind: StatisticKind::Lgllr,
    null: NullMode::Unknown,
};

impl OpenLoopGlr {
    pub fn new(env: &EnvConfig, spec: &PolicySpec) -> Result<Self> {
        env.validate()?;
        spec.validate(env)?;
        let model = spec.trace_model(env);
        Ok(OpenLoopGlr {
            traces: (0..env.cells).map(|m| CellTrace::new(m, &model.family)).collect(),
            scores: vec![f64::NEG_INFINITY; env.cells],
            model,
            n: 0,
            cursor: 0,
            probes: env.probes,
            anomalies: env.anomalies,
            threshold: spec.threshold(env)?,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Current local GLR statistic of each cell (`-∞` before any data).
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

impl SearchPolicy for OpenLoopGlr {
    /// Fixed schedule, independent of the data; tagged as exploitation since
    /// the schedule never adapts.
    fn select(&mut self) -> Result<Action> {
        let m = self.traces.len();
        let probe_set = (0..self.probes).map(|i| (self.cursor + i) % m).collect();
        self.cursor = (self.cursor + self.probes) % m;
        Ok(Action {
            probe_set,
            phase: Phase::Exploit,
        })
    }

    fn observe(&mut self, observations: &[(usize, f64)]) -> Result<()> {
        let t = self.n + 1;
        for &(cell, y) in observations {
            self.traces[cell].ingest(&self.model, y, t)?;
            self.scores[cell] = self.traces[cell].score(&self.model, LOCAL_GLR, 0, &ScoreContext::default())?;
        }
        self.n = t;
        Ok(())
    }

    fn check_stop(&self) -> Result<Verdict> {
        let mut crossed: Vec<(f64, usize)> = self
            .scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= self.threshold)
            .map(|(m, &s)| (s, m))
            .collect();
        if crossed.len() < self.anomalies {
            return Ok(Verdict::Continue);
        }
        crossed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut cells: Vec<usize> = crossed[..self.anomalies].iter().map(|&(_, m)| m).collect();
        cells.sort_unstable();
        Ok(Verdict::Declare(cells))
    }
}
