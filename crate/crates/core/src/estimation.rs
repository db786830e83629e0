//! Maximum-likelihood estimation (unconstrained, region-constrained, pooled
//! across cells), KL divergences and the exploration rate `I₀`.

use crate::error::{Error, Result};
use crate::model::{Family, Param, ParameterSpace, Region, RegionKind};
use crate::numeric::{golden_section_max, golden_section_min, integrate_pieces};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Sufficient statistics of a sample. Running mean and centered second
/// moment serve the Gaussian and exponential families; the Laplace family
/// also keeps the sorted sample with prefix sums.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuffStats {
    n: usize,
    sum: f64,
    mean: f64,
    m2: f64,
    sorted: Option<SortedSample>,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct SortedSample {
    values: Vec<f64>,
    // prefix[i] = sum of the i smallest values
    prefix: Vec<f64>,
}

impl SortedSample {
    fn insert(&mut self, y: f64) {
        let pos = self.values.partition_point(|&v| v <= y);
        self.values.insert(pos, y);
        self.rebuild_prefix_from(pos);
    }

    fn rebuild_prefix_from(&mut self, pos: usize) {
        self.prefix.resize(self.values.len() + 1, 0.0);
        for i in pos..self.values.len() {
            self.prefix[i + 1] = self.prefix[i] + self.values[i];
        }
    }

    fn merge(&mut self, other: &SortedSample) {
        let mut merged = Vec::with_capacity(self.values.len() + other.values.len());
        let (mut i, mut j) = (0, 0);
        while i < self.values.len() && j < other.values.len() {
            if self.values[i] <= other.values[j] {
                merged.push(self.values[i]);
                i += 1;
            } else {
                merged.push(other.values[j]);
                j += 1;
            }
        }
        merged.extend_from_slice(&self.values[i..]);
        merged.extend_from_slice(&other.values[j..]);
        self.values = merged;
        self.prefix.clear();
        self.prefix.push(0.0);
        self.rebuild_prefix_from(0);
    }

    fn sum_abs_deviation(&self, theta: f64) -> f64 {
        let n = self.values.len();
        let k = self.values.partition_point(|&v| v < theta);
        let below = self.prefix[k];
        let above = self.prefix[n] - below;
        (theta * k as f64 - below) + (above - theta * (n - k) as f64)
    }

    fn lower_median(&self) -> f64 {
        self.values[(self.values.len() - 1) / 2]
    }
}

impl SuffStats {
    pub fn new(family: &Family) -> Self {
        SuffStats {
            sorted: matches!(family, Family::LaplaceKnownScale { .. }).then(|| SortedSample {
                values: Vec::new(),
                prefix: vec![0.0],
            }),
            ..Default::default()
        }
    }

    pub fn from_sample(family: &Family, ys: &[f64]) -> Self {
        let mut stats = SuffStats::new(family);
        for &y in ys {
            stats.push(y);
        }
        stats
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn push(&mut self, y: f64) {
        self.n += 1;
        self.sum += y;
        let delta = y - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (y - self.mean);
        if let Some(sorted) = &mut self.sorted {
            sorted.insert(y);
        }
    }

    /// Combines two samples. Associative and commutative up to rounding.
    pub fn merge(&mut self, other: &SuffStats) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.sum += other.sum;
        self.n = n;
        match (&mut self.sorted, &other.sorted) {
            (Some(a), Some(b)) => a.merge(b),
            (a, _) => *a = None,
        }
    }

    /// Sum of squared deviations around `center`.
    fn sum_sq_dev(&self, center: f64) -> f64 {
        let d = self.mean - center;
        self.m2.max(0.0) + self.n as f64 * d * d
    }
}

/// `Σ ln f(y_i | theta)` over the sample summarized by `stats`.
pub fn log_likelihood(family: &Family, stats: &SuffStats, theta: Param) -> f64 {
    let n = stats.n as f64;
    if stats.n == 0 {
        return 0.0;
    }
    match *family {
        Family::GaussianKnownVariance { sigma } => {
            -n * (0.5 * LN_2PI + sigma.ln()) - stats.sum_sq_dev(theta.value()) / (2.0 * sigma * sigma)
        }
        Family::LaplaceKnownScale { scale } => {
            let sorted = stats.sorted.as_ref().expect("Laplace statistics keep the sample");
            -n * (2.0 * scale).ln() - sorted.sum_abs_deviation(theta.value()) / scale
        }
        Family::ExponentialRate => {
            let rate = theta.value();
            n * rate.ln() - rate * stats.sum
        }
        Family::GaussianMeanVar => {
            let sigma = theta.get(1);
            -n * (0.5 * LN_2PI + sigma.ln()) - stats.sum_sq_dev(theta.get(0)) / (2.0 * sigma * sigma)
        }
    }
}

/// Maximizes the sample likelihood over the closure of a product region.
/// Every supported log-likelihood is unimodal per coordinate, so the maximum
/// over an interval is the clamped stationary point; across the intervals of
/// a union the best candidate wins (lowest interval on ties).
pub fn mle_in_region(family: &Family, stats: &SuffStats, region: &Region) -> Result<Param> {
    if stats.n == 0 {
        return Err(Error::Precondition(
            "maximum likelihood needs at least one observation".into(),
        ));
    }
    if region.is_empty() {
        return Err(Error::config("space", "cannot maximize over an empty region"));
    }
    let mut best: Option<(Param, f64)> = None;
    let mut consider = |theta: Param| {
        let ll = log_likelihood(family, stats, theta);
        if best.is_none_or(|(_, b)| ll > b) {
            best = Some((theta, ll));
        }
    };
    match family {
        Family::GaussianMeanVar => {
            for mu_iv in region.coords()[0].intervals() {
                let mu = mu_iv.clamp(stats.mean);
                let sigma_hat = (stats.sum_sq_dev(mu) / stats.n as f64).sqrt();
                for sd_iv in region.coords()[1].intervals() {
                    let sigma = sd_iv.clamp(sigma_hat);
                    if sigma > 0.0 {
                        consider(Param::pair(mu, sigma));
                    }
                }
            }
        }
        _ => {
            let stationary = stationary_point(family, stats);
            for iv in region.coords()[0].intervals() {
                let theta = Param::scalar(iv.clamp(stationary));
                if family.valid_param(theta) {
                    consider(theta);
                }
            }
        }
    }
    best.map(|(theta, _)| theta)
        .ok_or_else(|| Error::domain("region holds no valid parameter for this family"))
}

fn stationary_point(family: &Family, stats: &SuffStats) -> f64 {
    match family {
        Family::GaussianKnownVariance { .. } => stats.mean,
        Family::LaplaceKnownScale { .. } => stats
            .sorted
            .as_ref()
            .expect("Laplace statistics keep the sample")
            .lower_median(),
        Family::ExponentialRate => {
            if stats.sum > 0.0 {
                stats.n as f64 / stats.sum
            } else {
                f64::MAX
            }
        }
        Family::GaussianMeanVar => unreachable!("handled jointly"),
    }
}

/// Unconstrained MLE `θ̂_m(n)`, clamped into the bounding region `Θ`.
pub fn mle_unconstrained(family: &Family, space: &ParameterSpace, stats: &SuffStats) -> Result<Param> {
    mle_in_region(family, stats, &space.full)
}

/// Which side of the partition a constrained estimate is restricted to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constraint {
    /// `Θ⁰`
    Theta0,
    /// `Θ \ Θ⁰`
    ThetaNot0,
}

/// `θ̂_m^{(0)}(n)` or `θ̂_m^{(1)}(n)`: the MLE restricted to the closure of
/// `Θ⁰` or of `Θ \ Θ⁰`.
pub fn mle_constrained(
    family: &Family,
    space: &ParameterSpace,
    stats: &SuffStats,
    constraint: Constraint,
) -> Result<Param> {
    match constraint {
        Constraint::Theta0 => mle_in_region(family, stats, &space.theta0),
        Constraint::ThetaNot0 => {
            let pieces = space.not_theta0();
            if pieces.is_empty() {
                return Err(Error::config(
                    "space.normal",
                    "normal region covers the whole parameter space",
                ));
            }
            let mut best: Option<(Param, f64)> = None;
            for piece in &pieces {
                let theta = mle_in_region(family, stats, piece)?;
                let ll = log_likelihood(family, stats, theta);
                if best.is_none_or(|(_, b)| ll > b) {
                    best = Some((theta, ll));
                }
            }
            Ok(best.expect("at least one piece").0)
        }
    }
}

/// Closed-form `D(f(·|a) ‖ f(·|b))`.
pub fn kl_divergence(family: &Family, a: Param, b: Param) -> f64 {
    let d = match *family {
        Family::GaussianKnownVariance { sigma } => {
            let z = (a.value() - b.value()) / sigma;
            0.5 * z * z
        }
        Family::LaplaceKnownScale { scale } => {
            let z = (a.value() - b.value()).abs() / scale;
            z + (-z).exp() - 1.0
        }
        Family::ExponentialRate => {
            let ratio = b.value() / a.value();
            ratio - ratio.ln() - 1.0
        }
        Family::GaussianMeanVar => {
            let (sa, sb) = (a.get(1), b.get(1));
            let dm = a.get(0) - b.get(0);
            (sb / sa).ln() + (sa * sa + dm * dm) / (2.0 * sb * sb) - 0.5
        }
    };
    d.max(0.0)
}

/// `min_{φ ∈ cl(Θ⁰)} D(θ¹ ‖ φ)`: golden-section within each interval, then the
/// minimum across intervals.
pub fn d_min(family: &Family, theta1: Param, theta0_region: &Region) -> f64 {
    let span = |iv: &crate::model::Interval, center: f64| -> (f64, f64) {
        let reach = 1e4 * (1.0 + center.abs());
        let lo = if iv.lo.is_finite() {
            iv.lo
        } else {
            center.min(iv.hi) - reach
        };
        let hi = if iv.hi.is_finite() {
            iv.hi
        } else {
            center.max(iv.lo) + reach
        };
        (lo, hi)
    };
    let mut best = f64::INFINITY;
    match family.dim() {
        1 => {
            for iv in theta0_region.coords()[0].intervals() {
                let (lo, hi) = span(iv, theta1.value());
                let (_, v) = golden_section_min(|x| kl_divergence(family, theta1, Param::scalar(x)), lo, hi, 1e-12);
                best = best.min(v);
            }
        }
        _ => {
            for mu_iv in theta0_region.coords()[0].intervals() {
                for sd_iv in theta0_region.coords()[1].intervals() {
                    let (mlo, mhi) = span(mu_iv, theta1.get(0));
                    let (slo, shi) = span(sd_iv, theta1.get(1));
                    let slo = slo.max(1e-9);
                    let (_, v) = golden_section_min(
                        |mu| {
                            golden_section_min(|sd| kl_divergence(family, theta1, Param::pair(mu, sd)), slo, shi, 1e-10)
                                .1
                        },
                        mlo,
                        mhi,
                        1e-10,
                    );
                    best = best.min(v);
                }
            }
        }
    }
    best
}

/// `ln E_{f(·|θ⁰)}[e^{-s ℓ}]` with `ℓ = ln f(y|θ⁰)/f(y|θ)`, i.e.
/// `ln ∫ f(y|θ⁰)^{1-s} f(y|θ)^s dy`. `+∞` where the integral diverges.
pub fn log_tilted_mgf(family: &Family, theta0: Param, theta: Param, s: f64) -> f64 {
    match *family {
        Family::GaussianKnownVariance { sigma } => {
            let z = (theta.value() - theta0.value()) / sigma;
            0.5 * s * (s - 1.0) * z * z
        }
        Family::ExponentialRate => {
            let (r0, r) = (theta0.value(), theta.value());
            let denom = (1.0 - s) * r0 + s * r;
            if denom <= 0.0 {
                f64::INFINITY
            } else {
                (1.0 - s) * r0.ln() + s * r.ln() - denom.ln()
            }
        }
        Family::GaussianMeanVar => {
            let (m0, s0, m1, s1) = (theta0.get(0), theta0.get(1), theta.get(0), theta.get(1));
            let precision = (1.0 - s) / (s0 * s0) + s / (s1 * s1);
            if precision <= 0.0 {
                return f64::INFINITY;
            }
            let linear = (1.0 - s) * m0 / (s0 * s0) + s * m1 / (s1 * s1);
            let constant = -0.5 * LN_2PI
                - (1.0 - s) * s0.ln()
                - s * s1.ln()
                - (1.0 - s) * m0 * m0 / (2.0 * s0 * s0)
                - s * m1 * m1 / (2.0 * s1 * s1);
            constant + 0.5 * (LN_2PI - precision.ln()) + linear * linear / (2.0 * precision)
        }
        Family::LaplaceKnownScale { .. } => {
            let integrand = |y: f64| {
                ((1.0 - s) * family.log_pdf_unchecked(theta0, y) + s * family.log_pdf_unchecked(theta, y)).exp()
            };
            let breaks = family.quadrature_breaks(theta0, theta);
            integrate_pieces(&integrand, &breaks, 1e-13).ln()
        }
    }
}

/// Rate `I₀`: the infimum over `grid` of `sup_{s>0} -ln E_{θ⁰}[e^{-s ℓ}]`, with the
/// supremum found by golden-section search over `s ∈ [1e-4, 10]`.
pub fn exploration_rate_i0(family: &Family, theta0: Param, grid: &[Param]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::config("policy.i0_grid", "grid is empty"));
    }
    let mut rate = f64::INFINITY;
    for &theta in grid {
        if theta == theta0 || kl_divergence(family, theta0, theta) == 0.0 {
            return Err(Error::domain(format!(
                "grid point {theta} coincides with the null parameter"
            )));
        }
        let (_, value) = golden_section_max(|s| -log_tilted_mgf(family, theta0, theta, s), 1e-4, 10.0, 1e-9);
        rate = rate.min(value);
    }
    if rate > 0.0 && rate.is_finite() {
        Ok(rate)
    } else {
        Err(Error::domain(format!("exploration rate {rate} is not positive")))
    }
}

/// Side of the partition whose cells feed a pooled estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Cells whose MLE lies in `Θ⁰`.
    Normal,
    /// Cells whose MLE lies outside `Θ⁰`.
    Abnormal,
}

/// Global MLE over `Θ` from the merged statistics of every cell whose current
/// MLE lies on `side`. `None` when no cell qualifies.
pub fn pooled_mle<'a, I>(family: &Family, space: &ParameterSpace, cells: I, side: Side) -> Result<Option<Param>>
where
    I: IntoIterator<Item = (&'a SuffStats, Param)>,
{
    let mut merged = SuffStats::new(family);
    for (stats, mle) in cells {
        let normal = space.region_contains(RegionKind::Theta0, mle);
        if normal == (side == Side::Normal) {
            merged.merge(stats);
        }
    }
    if merged.n == 0 {
        return Ok(None);
    }
    mle_unconstrained(family, space, &merged).map(Some)
}
