//! Brute-force oracles shared by the integration tests. Nothing here calls
//! into the library's estimation code.

#![allow(dead_code)]

use rand::Rng;
use seqsearch::model::{Family, Param};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn log_density(family: &Family, theta: Param, y: f64) -> f64 {
    match *family {
        Family::GaussianKnownVariance { sigma } => {
            let z = (y - theta.value()) / sigma;
            -0.5 * z * z - sigma.ln() - 0.5 * LN_2PI
        }
        Family::LaplaceKnownScale { scale } => -(y - theta.value()).abs() / scale - (2.0 * scale).ln(),
        Family::ExponentialRate => {
            if y < 0.0 {
                f64::NEG_INFINITY
            } else {
                theta.value().ln() - theta.value() * y
            }
        }
        Family::GaussianMeanVar => {
            let (mu, sd) = (theta.get(0), theta.get(1));
            let z = (y - mu) / sd;
            -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
        }
    }
}

pub fn sample_log_likelihood(family: &Family, theta: Param, ys: &[f64]) -> f64 {
    ys.iter().map(|&y| log_density(family, theta, y)).sum()
}

/// Argmax of `f` on `[lo, hi]`: a coarse scan followed by a `1e-5` scan
/// around the coarse winner.
pub fn grid_argmax<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    let scan = |a: f64, b: f64, step: f64| {
        let steps = ((b - a) / step).ceil() as usize;
        let mut best = (a, f(a));
        for i in 1..=steps {
            let x = (a + i as f64 * step).min(b);
            let v = f(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        best.0
    };
    let coarse_step = ((hi - lo) / 2000.0).max(1e-5);
    let x = scan(lo, hi, coarse_step);
    scan((x - 2.0 * coarse_step).max(lo), (x + 2.0 * coarse_step).min(hi), 1e-5)
}

/// Two-dimensional version of [`grid_argmax`] for the mean/std family.
pub fn grid_argmax_2d<F: Fn(f64, f64) -> f64>(f: F, (lo_a, hi_a): (f64, f64), (lo_b, hi_b): (f64, f64)) -> (f64, f64) {
    let scan = |(a0, a1): (f64, f64), (b0, b1): (f64, f64), steps: usize| {
        let (da, db) = ((a1 - a0) / steps as f64, (b1 - b0) / steps as f64);
        let mut best = (a0, b0, f64::NEG_INFINITY);
        for i in 0..=steps {
            for j in 0..=steps {
                let (a, b) = (a0 + i as f64 * da, b0 + j as f64 * db);
                let v = f(a, b);
                if v > best.2 {
                    best = (a, b, v);
                }
            }
        }
        (best.0, best.1, da, db)
    };
    let mut box_a = (lo_a, hi_a);
    let mut box_b = (lo_b, hi_b);
    loop {
        let (a, b, da, db) = scan(box_a, box_b, 200);
        if da < 1e-5 && db < 1e-5 {
            return (a, b);
        }
        box_a = ((a - 2.0 * da).max(lo_a), (a + 2.0 * da).min(hi_a));
        box_b = ((b - 2.0 * db).max(lo_b), (b + 2.0 * db).min(hi_b));
    }
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

/// `D(f(·|a) ‖ f(·|b))` by quadrature of `f_a ln(f_a/f_b)`, split at the
/// density kinks.
pub fn numeric_kl(family: &Family, a: Param, b: Param) -> f64 {
    let integrand = |y: f64| {
        let la = log_density(family, a, y);
        if la == f64::NEG_INFINITY {
            0.0
        } else {
            la.exp() * (la - log_density(family, b, y))
        }
    };
    let breaks: Vec<f64> = match *family {
        Family::GaussianKnownVariance { sigma } => {
            let c = a.value();
            vec![c - 15.0 * sigma, c + 15.0 * sigma]
        }
        Family::LaplaceKnownScale { scale } => {
            let (lo, hi) = (a.value().min(b.value()), a.value().max(b.value()));
            vec![a.value() - 45.0 * scale, lo, hi, a.value() + 45.0 * scale]
        }
        Family::ExponentialRate => vec![0.0, 1.0 / a.value(), 50.0 / a.value()],
        Family::GaussianMeanVar => {
            let (mu, sd) = (a.get(0), a.get(1));
            vec![mu - 15.0 * sd, mu + 15.0 * sd]
        }
    };
    breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| simpson(integrand, w[0], w[1], 20_000))
        .sum()
}

/// A random valid parameter for `family`.
pub fn random_param<R: Rng>(family: &Family, rng: &mut R) -> Param {
    match family {
        Family::ExponentialRate => Param::scalar(rng.random_range(0.2..5.0)),
        Family::GaussianMeanVar => Param::pair(rng.random_range(-2.0..2.0), rng.random_range(0.3..3.0)),
        _ => Param::scalar(rng.random_range(-3.0..3.0)),
    }
}

pub fn families() -> [Family; 4] {
    [
        Family::GaussianKnownVariance { sigma: 1.3 },
        Family::LaplaceKnownScale { scale: 0.7 },
        Family::ExponentialRate,
        Family::GaussianMeanVar,
    ]
}

/// Normal-approximation 95% half-width of a sample mean.
pub fn mean_half_width(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    1.959_963_984_540_054 * (var / n).sqrt()
}

/// Largest discrepancy between the closed-form estimators and the
/// brute-force oracles over `instances` random problems: unconstrained MLE,
/// the MLE restricted to the normal region, and the divergence.
pub fn estimator_oracle_gap(instances: usize, seed: u64) -> (f64, String) {
    use rand::SeedableRng;
    use seqsearch::estimation::{kl_divergence, mle_constrained, mle_unconstrained, Constraint, SuffStats};
    use seqsearch::model::ParameterSpace;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0_f64, String::new());
    let mut record = |gap: f64, what: String| {
        if gap.is_nan() || gap > worst.0 {
            worst = (gap, what);
        }
    };
    for i in 0..instances {
        let family = families()[i % 4];
        let truth = random_param(&family, &mut rng);
        let n = 2 * rng.random_range(1..5) + 1;
        let ys: Vec<f64> = (0..n).map(|_| family.sample(truth, &mut rng)).collect();
        let stats = SuffStats::from_sample(&family, &ys);
        let (a, b) = (random_param(&family, &mut rng), random_param(&family, &mut rng));
        if (a.value() - b.value()).abs() < 0.05 {
            continue;
        }
        let space = ParameterSpace::split_at_midpoint(ParameterSpace::default_full(&family), a, b, 1e-3).unwrap();
        let normal = space.theta0.coords()[0].intervals()[0];
        let ll = |theta: Param| sample_log_likelihood(&family, theta, &ys);
        let ymin = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let ymax = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let free = mle_unconstrained(&family, &space, &stats).unwrap();
        let restricted = mle_constrained(&family, &space, &stats, Constraint::Theta0).unwrap();
        match family {
            Family::GaussianMeanVar => {
                let sd_box = (1e-3, ymax - ymin + 1.0);
                let (mu, sd) = grid_argmax_2d(|m, s| ll(Param::pair(m, s)), (ymin, ymax), sd_box);
                record(
                    (free.get(0) - mu).abs().max((free.get(1) - sd).abs()),
                    format!("{family} mle {ys:?}"),
                );
                let mu_box = if normal.lo <= ymax && normal.hi >= ymin {
                    (normal.lo.max(ymin), normal.hi.min(ymax))
                } else if normal.hi < ymin {
                    (normal.hi, normal.hi)
                } else {
                    (normal.lo, normal.lo)
                };
                let spread = (ymax - mu_box.0).abs().max((ymin - mu_box.1).abs());
                let (mu, sd) = grid_argmax_2d(|m, s| ll(Param::pair(m, s)), mu_box, (1e-3, spread + 1.0));
                record(
                    (restricted.get(0) - mu).abs().max((restricted.get(1) - sd).abs()),
                    format!("{family} constrained mle {ys:?}"),
                );
            }
            _ => {
                let (lo, hi) = match family {
                    Family::ExponentialRate => (1.0 / ymax, 1.0 / ymin),
                    _ => (ymin, ymax),
                };
                let oracle = grid_argmax(|t| ll(Param::scalar(t)), lo, hi);
                record((free.value() - oracle).abs(), format!("{family} mle {ys:?}"));

                let (clo, chi) = (normal.lo.max(lo), normal.hi.min(hi));
                let oracle = if clo <= chi {
                    grid_argmax(|t| ll(Param::scalar(t)), clo, chi)
                } else if normal.hi < lo {
                    normal.hi
                } else {
                    normal.lo
                };
                record(
                    (restricted.value() - oracle).abs(),
                    format!("{family} constrained mle {ys:?}"),
                );
            }
        }
        let kl = kl_divergence(&family, a, b);
        record(
            (kl - numeric_kl(&family, a, b)).abs(),
            format!("{family} kl {a} vs {b}"),
        );
    }
    worst
}
