//! Observation families and the normal / abnormal / indifference partition of
//! the parameter space.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A point of the parameter space. Scalar families use one coordinate; the
/// two-parameter Gaussian uses `(mean, std)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Param {
    values: [f64; 2],
    dim: u8,
}

impl Param {
    pub const fn scalar(value: f64) -> Self {
        Param {
            values: [value, 0.0],
            dim: 1,
        }
    }

    pub const fn pair(first: f64, second: f64) -> Self {
        Param {
            values: [first, second],
            dim: 2,
        }
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        match values {
            [a] => Some(Param::scalar(*a)),
            [a, b] => Some(Param::pair(*a, *b)),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    /// First coordinate; the whole parameter for scalar families.
    pub fn value(&self) -> f64 {
        self.values[0]
    }

    pub fn get(&self, coord: usize) -> f64 {
        debug_assert!(coord < self.dim());
        self.values[coord]
    }

    pub fn with(mut self, coord: usize, value: f64) -> Self {
        self.values[coord] = value;
        self
    }

    pub fn coords(&self) -> &[f64] {
        &self.values[..self.dim()]
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dim {
            1 => write!(f, "{:?}", self.values[0]),
            _ => write!(f, "{:?},{:?}", self.values[0], self.values[1]),
        }
    }
}

impl FromStr for Param {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let values = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Param::from_slice(&values).ok_or_else(|| format!("expected 1 or 2 values, got {}", values.len()))
    }
}

/// Parametric observation model shared by every cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    /// Gaussian with unknown mean and known standard deviation.
    GaussianKnownVariance { sigma: f64 },
    /// Laplace with unknown location and known scale.
    LaplaceKnownScale { scale: f64 },
    /// Exponential parameterized by its rate, density `λ e^{-λ y}`.
    ExponentialRate,
    /// Gaussian with unknown `(mean, std)`.
    GaussianMeanVar,
}

impl Family {
    pub fn dim(&self) -> usize {
        match self {
            Family::GaussianMeanVar => 2,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::GaussianKnownVariance { .. } => "gaussian",
            Family::LaplaceKnownScale { .. } => "laplace",
            Family::ExponentialRate => "exponential",
            Family::GaussianMeanVar => "gaussian-mv",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Family::GaussianKnownVariance { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::config("family.sigma", format!("must be positive, got {sigma}")))
            }
            Family::LaplaceKnownScale { scale } if !(scale > 0.0 && scale.is_finite()) => {
                Err(Error::config("family.scale", format!("must be positive, got {scale}")))
            }
            _ => Ok(()),
        }
    }

    /// Whether `theta` is a valid parameter of this family.
    pub fn valid_param(&self, theta: Param) -> bool {
        if theta.dim() != self.dim() || theta.coords().iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            Family::ExponentialRate => theta.value() > 0.0,
            Family::GaussianMeanVar => theta.get(1) > 0.0,
            _ => true,
        }
    }

    pub fn in_support(&self, y: f64) -> bool {
        match self {
            Family::ExponentialRate => y >= 0.0 && y.is_finite(),
            _ => y.is_finite(),
        }
    }

    /// `ln f(y | theta)`, checking the parameter and the support.
    pub fn log_pdf(&self, theta: Param, y: f64) -> Result<f64> {
        if !self.valid_param(theta) {
            return Err(Error::domain(format!("invalid {} parameter {theta}", self.name())));
        }
        if !self.in_support(y) {
            return Err(Error::domain(format!(
                "observation {y} outside the {} support",
                self.name()
            )));
        }
        Ok(self.log_pdf_unchecked(theta, y))
    }

    pub(crate) fn log_pdf_unchecked(&self, theta: Param, y: f64) -> f64 {
        match *self {
            Family::GaussianKnownVariance { sigma } => {
                let z = (y - theta.value()) / sigma;
                -0.5 * LN_2PI - sigma.ln() - 0.5 * z * z
            }
            Family::LaplaceKnownScale { scale } => -(2.0 * scale).ln() - (y - theta.value()).abs() / scale,
            Family::ExponentialRate => {
                let rate = theta.value();
                rate.ln() - rate * y
            }
            Family::GaussianMeanVar => {
                let sigma = theta.get(1);
                let z = (y - theta.get(0)) / sigma;
                -0.5 * LN_2PI - sigma.ln() - 0.5 * z * z
            }
        }
    }

    /// One draw from `f(· | theta)`.
    pub fn sample<R: Rng + ?Sized>(&self, theta: Param, rng: &mut R) -> f64 {
        match *self {
            Family::GaussianKnownVariance { sigma } => {
                Normal::new(theta.value(), sigma).expect("validated sigma").sample(rng)
            }
            Family::LaplaceKnownScale { scale } => {
                // Inverse CDF on u in (-1/2, 1/2).
                let u: f64 = rng.random::<f64>() - 0.5;
                theta.value() - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Family::ExponentialRate => Exp::new(theta.value()).expect("positive rate").sample(rng),
            Family::GaussianMeanVar => Normal::new(theta.get(0), theta.get(1))
                .expect("positive std")
                .sample(rng),
        }
    }

    /// Mean of `f(· | theta)`.
    pub fn mean(&self, theta: Param) -> f64 {
        match self {
            Family::ExponentialRate => 1.0 / theta.value(),
            _ => theta.value(),
        }
    }

    /// A finite interval holding all but a negligible amount of the mass of
    /// `f(· | a)` and `f(· | b)`, together with interior kinks, for quadrature.
    pub(crate) fn quadrature_breaks(&self, a: Param, b: Param) -> Vec<f64> {
        match *self {
            Family::GaussianKnownVariance { sigma } => {
                let (lo, hi) = ordered(a.value(), b.value());
                vec![lo - 40.0 * sigma, lo, hi, hi + 40.0 * sigma]
            }
            Family::LaplaceKnownScale { scale } => {
                let (lo, hi) = ordered(a.value(), b.value());
                vec![lo - 60.0 * scale, lo, hi, hi + 60.0 * scale]
            }
            Family::ExponentialRate => {
                let slow = a.value().min(b.value());
                let fast = a.value().max(b.value());
                vec![0.0, 1.0 / fast, 1.0 / slow, 60.0 / slow]
            }
            Family::GaussianMeanVar => {
                let (lo, hi) = ordered(a.get(0), b.get(0));
                let s = a.get(1).max(b.get(1));
                vec![lo - 40.0 * s, lo, hi, hi + 40.0 * s]
            }
        }
    }
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An interval of the real line with independently open or closed ends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn open(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: false,
            hi_closed: false,
        }
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: lo.is_finite(),
            hi_closed: hi.is_finite(),
        }
    }

    pub fn point(x: f64) -> Self {
        Interval::closed(x, x)
    }

    pub fn real_line() -> Self {
        Interval::open(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    /// Nearest point of the closure.
    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn intersect(&self, other: &Interval) -> Interval {
        let (lo, lo_closed) = if self.lo > other.lo {
            (self.lo, self.lo_closed)
        } else if other.lo > self.lo {
            (other.lo, other.lo_closed)
        } else {
            (self.lo, self.lo_closed && other.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < other.hi {
            (self.hi, self.hi_closed)
        } else if other.hi < self.hi {
            (other.hi, other.hi_closed)
        } else {
            (self.hi, self.hi_closed && other.hi_closed)
        };
        Interval {
            lo,
            hi,
            lo_closed,
            hi_closed,
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fmt_end = |v: f64| {
            if v == f64::INFINITY {
                "inf".to_string()
            } else if v == f64::NEG_INFINITY {
                "-inf".to_string()
            } else {
                format!("{v:?}")
            }
        };
        write!(
            f,
            "{}{},{}{}",
            if self.lo_closed { '[' } else { '(' },
            fmt_end(self.lo),
            fmt_end(self.hi),
            if self.hi_closed { ']' } else { ')' }
        )
    }
}

impl FromStr for Interval {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        let lo_closed = match s.chars().next() {
            Some('[') => true,
            Some('(') => false,
            _ => return Err(format!("interval `{s}` must start with `(` or `[`")),
        };
        let hi_closed = match s.chars().last() {
            Some(']') => true,
            Some(')') => false,
            _ => return Err(format!("interval `{s}` must end with `)` or `]`")),
        };
        let inner = &s[1..s.len() - 1];
        let (lo, hi) = inner
            .split_once(',')
            .ok_or_else(|| format!("interval `{s}` needs two comma-separated ends"))?;
        let parse_end = |v: &str| -> std::result::Result<f64, String> {
            match v.trim() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => other.parse::<f64>().map_err(|e| format!("`{other}`: {e}")),
            }
        };
        let interval = Interval {
            lo: parse_end(lo)?,
            hi: parse_end(hi)?,
            lo_closed,
            hi_closed,
        };
        if interval.is_empty() {
            return Err(format!("interval `{s}` is empty"));
        }
        if (interval.lo_closed && !interval.lo.is_finite()) || (interval.hi_closed && !interval.hi.is_finite()) {
            return Err(format!("interval `{s}` closes an infinite end"));
        }
        Ok(interval)
    }
}

/// A finite union of intervals on one coordinate, kept sorted by lower end.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalSet(Vec<Interval>);

impl IntervalSet {
    pub fn new(mut intervals: Vec<Interval>) -> Self {
        intervals.retain(|i| !i.is_empty());
        intervals.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        IntervalSet(intervals)
    }

    pub fn single(interval: Interval) -> Self {
        IntervalSet::new(vec![interval])
    }

    /// A finite parameter set, modeled as zero-width intervals.
    pub fn points(values: &[f64]) -> Self {
        IntervalSet::new(values.iter().map(|&v| Interval::point(v)).collect())
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.0.iter().any(|i| i.contains(x))
    }

    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = Vec::new();
        for a in &self.0 {
            for b in &other.0 {
                out.push(a.intersect(b));
            }
        }
        IntervalSet::new(out)
    }

    /// Complement in the real line.
    pub fn complement(&self) -> IntervalSet {
        let mut out = Vec::new();
        let mut lo = f64::NEG_INFINITY;
        let mut lo_closed = false;
        for i in &self.0 {
            out.push(Interval {
                lo,
                hi: i.lo,
                lo_closed,
                hi_closed: !i.lo_closed && i.lo.is_finite(),
            });
            if i.hi > lo {
                lo = i.hi;
                lo_closed = !i.hi_closed && i.hi.is_finite();
            } else if i.hi == lo && i.hi_closed {
                lo_closed = false;
            }
        }
        out.push(Interval {
            lo,
            hi: f64::INFINITY,
            lo_closed,
            hi_closed: false,
        });
        // Overlapping members can leave gaps that are actually covered.
        let raw = IntervalSet::new(out);
        IntervalSet::new(
            raw.0
                .into_iter()
                .filter(|g| !self.0.iter().any(|i| covers(i, g)))
                .collect(),
        )
    }

    /// Nearest point of the closure; `None` for an empty set.
    pub fn clamp(&self, x: f64) -> Option<f64> {
        self.0
            .iter()
            .map(|i| i.clamp(x))
            .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
    }
}

fn covers(outer: &Interval, inner: &Interval) -> bool {
    let lo_ok = outer.lo < inner.lo || (outer.lo == inner.lo && (outer.lo_closed || !inner.lo_closed));
    let hi_ok = outer.hi > inner.hi || (outer.hi == inner.hi && (outer.hi_closed || !inner.hi_closed));
    lo_ok && hi_ok
}

impl fmt::Display for IntervalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        f.write_str(&parts.join(" | "))
    }
}

impl FromStr for IntervalSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let intervals = s
            .split('|')
            .map(str::parse::<Interval>)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(IntervalSet::new(intervals))
    }
}

/// A product of per-coordinate interval unions.
#[derive(Clone, Debug, PartialEq)]
pub struct Region(Vec<IntervalSet>);

impl Region {
    pub fn new(coords: Vec<IntervalSet>) -> Self {
        Region(coords)
    }

    pub fn scalar(set: IntervalSet) -> Self {
        Region(vec![set])
    }

    pub fn coords(&self) -> &[IntervalSet] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, theta: Param) -> bool {
        theta.dim() == self.dim() && self.0.iter().zip(theta.coords()).all(|(set, &v)| set.contains(v))
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().any(IntervalSet::is_empty)
    }

    pub fn intersect(&self, other: &Region) -> Region {
        Region(self.0.iter().zip(&other.0).map(|(a, b)| a.intersect(b)).collect())
    }

    /// Whether the two regions share no point.
    pub fn disjoint(&self, other: &Region) -> bool {
        self.intersect(other).is_empty()
    }

    /// Nearest point of the closure, coordinate by coordinate.
    pub fn clamp(&self, theta: Param) -> Param {
        let mut out = theta;
        for (c, set) in self.0.iter().enumerate() {
            if let Some(v) = set.clamp(theta.get(c)) {
                out = out.with(c, v);
            }
        }
        out
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|s| s.to_string()).collect();
        f.write_str(&parts.join(" x "))
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let coords = s
            .split(" x ")
            .map(str::parse::<IntervalSet>)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Region(coords))
    }
}

/// Which part of the parameter space a query refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionKind {
    Theta0,
    Theta1,
    Indiff,
}

/// The partition of `Θ` into normal `Θ⁰`, abnormal `Θ¹` and the indifference
/// region `I = Θ \ (Θ⁰ ∪ Θ¹)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSpace {
    pub full: Region,
    pub theta0: Region,
    pub theta1: Region,
}

impl ParameterSpace {
    pub fn new(full: Region, theta0: Region, theta1: Region) -> Result<Self> {
        let space = ParameterSpace {
            theta0: theta0.intersect(&full),
            theta1: theta1.intersect(&full),
            full,
        };
        space.validate(false)?;
        Ok(space)
    }

    /// Default bounding region `Θ` for a family.
    pub fn default_full(family: &Family) -> Region {
        match family {
            Family::GaussianKnownVariance { .. } | Family::LaplaceKnownScale { .. } => {
                Region::scalar(IntervalSet::single(Interval::real_line()))
            }
            Family::ExponentialRate => Region::scalar(IntervalSet::single(Interval::open(0.0, f64::INFINITY))),
            Family::GaussianMeanVar => Region::new(vec![
                IntervalSet::single(Interval::real_line()),
                IntervalSet::single(Interval {
                    lo: 1e-3,
                    hi: f64::INFINITY,
                    lo_closed: true,
                    hi_closed: false,
                }),
            ]),
        }
    }

    /// Splits the first coordinate at the midpoint of the two nominal
    /// parameters, leaving `[mid - halfwidth, mid + halfwidth]` as the
    /// indifference region. Other coordinates are left unconstrained.
    pub fn split_at_midpoint(full: Region, normal: Param, abnormal: Param, halfwidth: f64) -> Result<Self> {
        if halfwidth.is_nan() || halfwidth < 0.0 {
            return Err(Error::config("space.halfwidth", "must be nonnegative"));
        }
        let mid = 0.5 * (normal.value() + abnormal.value());
        let below = IntervalSet::single(Interval::open(f64::NEG_INFINITY, mid - halfwidth));
        let above = IntervalSet::single(Interval::open(mid + halfwidth, f64::INFINITY));
        let (zero, one) = if normal.value() < abnormal.value() {
            (below, above)
        } else if normal.value() > abnormal.value() {
            (above, below)
        } else {
            return Err(Error::config(
                "theta.abnormal",
                "normal and abnormal parameters coincide on the first coordinate",
            ));
        };
        let mut theta0 = full.coords().to_vec();
        let mut theta1 = full.coords().to_vec();
        theta0[0] = zero;
        theta1[0] = one;
        let space = ParameterSpace {
            theta0: Region::new(theta0).intersect(&full),
            theta1: Region::new(theta1).intersect(&full),
            full,
        };
        space.validate(halfwidth == 0.0)?;
        Ok(space)
    }

    pub fn dim(&self) -> usize {
        self.full.dim()
    }

    pub fn validate(&self, allow_degenerate: bool) -> Result<()> {
        if self.theta0.dim() != self.full.dim() || self.theta1.dim() != self.full.dim() {
            return Err(Error::config("space", "regions have mismatched dimensions"));
        }
        if self.theta0.is_empty() {
            return Err(Error::config("space.normal", "normal region is empty"));
        }
        if self.theta1.is_empty() {
            return Err(Error::config("space.abnormal", "abnormal region is empty"));
        }
        if !self.theta0.disjoint(&self.theta1) {
            return Err(Error::config("space", "normal and abnormal regions overlap"));
        }
        if !allow_degenerate && self.indifference_gaps().iter().all(IntervalSet::is_empty) {
            return Err(Error::config("space", "indifference region is empty"));
        }
        Ok(())
    }

    /// Per coordinate, the part of `Θ` covered by neither region.
    fn indifference_gaps(&self) -> Vec<IntervalSet> {
        (0..self.dim())
            .map(|c| {
                let union = IntervalSet::new(
                    self.theta0.coords()[c]
                        .intervals()
                        .iter()
                        .chain(self.theta1.coords()[c].intervals())
                        .copied()
                        .collect(),
                );
                self.full.coords()[c].intersect(&union.complement())
            })
            .collect()
    }

    /// Exact membership; exactly one kind holds for every `θ ∈ Θ`.
    pub fn region_contains(&self, region: RegionKind, theta: Param) -> bool {
        let in0 = self.theta0.contains(theta);
        let in1 = self.theta1.contains(theta);
        match region {
            RegionKind::Theta0 => in0,
            RegionKind::Theta1 => in1 && !in0,
            RegionKind::Indiff => self.full.contains(theta) && !in0 && !in1,
        }
    }

    pub fn classify(&self, theta: Param) -> RegionKind {
        if self.region_contains(RegionKind::Theta0, theta) {
            RegionKind::Theta0
        } else if self.region_contains(RegionKind::Theta1, theta) {
            RegionKind::Theta1
        } else {
            RegionKind::Indiff
        }
    }

    /// `Θ \ Θ⁰` as a union of product regions (one per coordinate that can
    /// leave `Θ⁰`).
    pub fn not_theta0(&self) -> Vec<Region> {
        let mut pieces = Vec::new();
        for c in 0..self.dim() {
            let outside = self.full.coords()[c].intersect(&self.theta0.coords()[c].complement());
            if outside.is_empty() {
                continue;
            }
            let mut coords = self.full.coords().to_vec();
            coords[c] = outside;
            pieces.push(Region::new(coords));
        }
        pieces
    }

    /// A neutral starting estimate: the middle of the indifference gap on
    /// coordinates that have one, the middle of `Θ` (or 1.0) elsewhere.
    pub fn indifference_midpoint(&self) -> Param {
        let gaps = self.indifference_gaps();
        let coords: Vec<f64> = (0..self.dim())
            .map(|c| {
                let bounded = gaps[c].intervals().iter().find(|i| i.is_bounded());
                match bounded {
                    Some(gap) => gap.midpoint(),
                    None => {
                        let full = &self.full.coords()[c];
                        match full.intervals().first() {
                            Some(i) if i.is_bounded() => i.midpoint(),
                            _ => full.clamp(1.0).unwrap_or(1.0),
                        }
                    }
                }
            })
            .collect();
        Param::from_slice(&coords).expect("one or two coordinates")
    }
}

/// The simulated environment: cells, probing budget, prior and true parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub cells: usize,
    pub probes: usize,
    pub anomalies: usize,
    pub prior: Vec<f64>,
    pub family: Family,
    pub true_theta0: Param,
    pub true_theta1: Param,
    pub space: ParameterSpace,
}

impl EnvConfig {
    /// Uniform prior, one anomaly, indifference region of half-width `1e-3`
    /// around the midpoint of the two parameters.
    pub fn symmetric(family: Family, cells: usize, probes: usize, theta0: Param, theta1: Param) -> Result<Self> {
        let space = ParameterSpace::split_at_midpoint(ParameterSpace::default_full(&family), theta0, theta1, 1e-3)?;
        let env = EnvConfig {
            cells,
            probes,
            anomalies: 1,
            prior: vec![1.0 / cells.max(1) as f64; cells],
            family,
            true_theta0: theta0,
            true_theta1: theta1,
            space,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self.cells < 2 {
            return Err(Error::config("env.cells", "need at least 2 cells"));
        }
        if self.probes == 0 || self.probes > self.cells {
            return Err(Error::config("env.probes", format!("must be in 1..={}", self.cells)));
        }
        if self.anomalies == 0 || self.anomalies >= self.cells {
            return Err(Error::config("env.anomalies", format!("must be in 1..{}", self.cells)));
        }
        if self.prior.len() != self.cells {
            return Err(Error::config("env.prior", format!("expected {} entries", self.cells)));
        }
        if self.prior.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::config("env.prior", "every entry must lie in (0, 1)"));
        }
        let total: f64 = self.prior.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config("env.prior", format!("must sum to 1, sums to {total}")));
        }
        if self.space.dim() != self.family.dim() {
            return Err(Error::config("space", "dimension does not match the family"));
        }
        for (key, theta) in [("theta.normal", self.true_theta0), ("theta.abnormal", self.true_theta1)] {
            if !self.family.valid_param(theta) {
                return Err(Error::config(
                    key,
                    format!("{theta} is not a valid {} parameter", self.family),
                ));
            }
        }
        if !self.space.region_contains(RegionKind::Theta0, self.true_theta0) {
            return Err(Error::config("theta.normal", "must lie in the normal region"));
        }
        if !self.space.region_contains(RegionKind::Theta1, self.true_theta1) {
            return Err(Error::config("theta.abnormal", "must lie in the abnormal region"));
        }
        Ok(())
    }
}
