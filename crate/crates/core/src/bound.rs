//! Bound estimation: repeated partition / carve / evaluate runs followed by a
//! linear regression of test adversarial risk on test risk, interpolated at
//! the reference clean error rate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::error::{Error, Result};
use crate::index::{DistanceMatrix, SortedDistanceIndex};
use crate::metric::{MetricKind, MetricSpace};
use crate::region::{check_epsilon, evaluate_membership_precomputed, fit_error_region, ErrorRegion};
use crate::samples::SampleSet;

pub const DEFAULT_SPHERES: usize = 20;
pub const DEFAULT_ITERATIONS: usize = 10;
pub const DEFAULT_SPLIT: f64 = 0.7;
/// Upper end of the default α range relative to α.
pub const DEFAULT_ALPHA_SPAN: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub metric: MetricKind,
    pub epsilon: f64,
    pub alpha: f64,
    pub spheres: usize,
    pub iterations: usize,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub split_fraction: f64,
    pub seed: u64,
}

impl BoundConfig {
    pub fn new(metric: MetricKind, epsilon: f64, alpha: f64) -> Self {
        Self {
            metric,
            epsilon,
            alpha,
            spheres: DEFAULT_SPHERES,
            iterations: DEFAULT_ITERATIONS,
            alpha_lo: alpha,
            alpha_hi: DEFAULT_ALPHA_SPAN * alpha,
            split_fraction: DEFAULT_SPLIT,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon(&MetricSpace::new(self.metric), self.epsilon)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.alpha_lo > 0.0 && self.alpha_lo <= self.alpha_hi && self.alpha_hi < 1.0) {
            return Err(Error::Config(format!(
                "alpha range [{}, {}] must satisfy 0 < lo <= hi < 1",
                self.alpha_lo, self.alpha_hi
            )));
        }
        if self.iterations < 2 {
            return Err(Error::Config("regression needs at least 2 iterations".into()));
        }
        if self.spheres == 0 {
            return Err(Error::Config("number of spheres must be at least 1".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split fraction {} must lie in (0, 1)",
                self.split_fraction
            )));
        }
        Ok(())
    }

    /// Target training risk of iteration `nu`: `α_l + nu (α_u - α_l) / m`.
    pub fn alpha_at(&self, nu: usize) -> f64 {
        self.alpha_lo + nu as f64 * (self.alpha_hi - self.alpha_lo) / self.iterations as f64
    }
}

/// Outcome of one partition / carve / evaluate iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundPoint {
    pub alpha_nu: f64,
    pub train_risk: f64,
    pub train_advrisk: f64,
    pub test_risk: f64,
    pub test_advrisk: f64,
    /// Region with centres given as indices into the full sample set.
    pub region: ErrorRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub config: BoundConfig,
    pub points: Vec<BoundPoint>,
    pub slope: f64,
    pub intercept: f64,
    /// Regression prediction at `config.alpha`, clamped to `[0, 1]`.
    pub c_adv: f64,
    /// Root-mean-square residual of the regression.
    pub residual_rms: f64,
    pub extrapolated: bool,
    pub degenerate: bool,
    pub clamped: bool,
    pub warnings: Vec<String>,
}

/// Ordinary least squares `y ≈ slope·x + intercept`; `None` when all `x` coincide.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.is_empty() || x.len() != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Seeded split into sorted `(train, test)` index lists; stream `nu` of `seed`.
pub fn partition(n: usize, split: f64, seed: u64, nu: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = (split * n as f64).round() as usize;
    if n_train < 2 || n - n_train.min(n) < 2 {
        return Err(Error::PartitionError(format!(
            "{n} samples with split {split} leave fewer than 2 in a partition"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(nu as u64);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Runs one iteration on the partition of stream `nu` with `spheres` balls.
fn run_iteration(dist: &DistanceMatrix, config: &BoundConfig, nu: usize, spheres: usize) -> Result<BoundPoint> {
    let metric = MetricSpace::new(config.metric);
    let (train, test) = partition(dist.len(), config.split_fraction, config.seed, nu)?;
    let alpha_nu = config.alpha_at(nu);
    let index = SortedDistanceIndex::from_distances(dist.submatrix(&train));
    let (region, state) = fit_error_region(&index, &metric, config.epsilon, alpha_nu, spheres)?;
    let (test_risk, _) = evaluate_membership_precomputed(&region, dist, &train, &test, false)?;
    let (test_advrisk, _) = evaluate_membership_precomputed(&region, dist, &train, &test, true)?;
    debug!(nu, alpha_nu, test_risk, test_advrisk, spheres = region.len(), "bound iteration");
    Ok(BoundPoint {
        alpha_nu,
        train_risk: state.risk(),
        train_advrisk: state.adv_risk(),
        test_risk,
        test_advrisk,
        region: region.remapped(&train),
    })
}

fn check_distances(dist: &DistanceMatrix, config: &BoundConfig) -> Result<()> {
    config.validate()?;
    if dist.metric() != config.metric {
        return Err(Error::MetricMismatch {
            region: config.metric.to_string(),
            request: dist.metric().to_string(),
        });
    }
    Ok(())
}

/// Estimates `c_adv` from a precomputed distance matrix of the full sample set.
pub fn estimate_bound_from_distances(dist: &DistanceMatrix, config: &BoundConfig) -> Result<BoundReport> {
    check_distances(dist, config)?;
    let points = (0..config.iterations)
        .map(|nu| run_iteration(dist, config, nu, config.spheres))
        .collect::<Result<Vec<_>>>()?;
    Ok(regress(config.clone(), points))
}

/// Estimates `c_adv` for `samples` under `config`.
pub fn estimate_bound(samples: &SampleSet, config: &BoundConfig) -> Result<BoundReport> {
    config.validate()?;
    let dist = DistanceMatrix::compute(samples, &MetricSpace::new(config.metric))?;
    estimate_bound_from_distances(&dist, config)
}

/// Fits the regression over finished iterations and interpolates at `config.alpha`.
pub fn regress(config: BoundConfig, points: Vec<BoundPoint>) -> BoundReport {
    let x: Vec<f64> = points.iter().map(|p| p.test_risk).collect();
    let y: Vec<f64> = points.iter().map(|p| p.test_advrisk).collect();
    let mut warnings = Vec::new();
    let (slope, intercept, degenerate) = match linear_fit(&x, &y) {
        Some((s, i)) => (s, i, false),
        None => {
            warnings.push("all test risks identical; reporting the mean adversarial risk".into());
            (0.0, y.iter().sum::<f64>() / y.len().max(1) as f64, true)
        }
    };
    let raw = slope * config.alpha + intercept;
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let extrapolated = config.alpha < lo || config.alpha > hi;
    if extrapolated {
        warnings.push(format!(
            "alpha {} lies outside the observed test risk range [{lo}, {hi}]",
            config.alpha
        ));
    }
    let clamped = !(0.0..=1.0).contains(&raw);
    if clamped {
        warnings.push(format!("regression value {raw} clamped to [0, 1]"));
    }
    let residual_rms = (x
        .iter()
        .zip(&y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum::<f64>()
        / x.len().max(1) as f64)
        .sqrt();
    BoundReport {
        config,
        points,
        slope,
        intercept,
        c_adv: raw.clamp(0.0, 1.0),
        residual_rms,
        extrapolated,
        degenerate,
        clamped,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub spheres: usize,
    pub train_risk: f64,
    pub train_expansion: f64,
    pub test_risk: f64,
    pub test_expansion: f64,
}

/// Mean train/test expansion fractions over the `m` partitions for each sphere count.
pub fn sweep_spheres_from_distances(
    dist: &DistanceMatrix,
    config: &BoundConfig,
    sphere_counts: &[usize],
) -> Result<Vec<SweepRecord>> {
    check_distances(dist, config)?;
    if sphere_counts.is_empty() {
        return Err(Error::Config("at least one sphere count is required".into()));
    }
    if sphere_counts.contains(&0) {
        return Err(Error::Config("sphere counts must be positive".into()));
    }
    let m = config.iterations as f64;
    sphere_counts
        .iter()
        .map(|&t| {
            let pts = (0..config.iterations)
                .map(|nu| run_iteration(dist, config, nu, t))
                .collect::<Result<Vec<_>>>()?;
            let mean = |f: fn(&BoundPoint) -> f64| pts.iter().map(f).sum::<f64>() / m;
            Ok(SweepRecord {
                spheres: t,
                train_risk: mean(|p| p.train_risk),
                train_expansion: mean(|p| p.train_advrisk),
                test_risk: mean(|p| p.test_risk),
                test_expansion: mean(|p| p.test_advrisk),
            })
        })
        .collect()
}

pub fn sweep_spheres(samples: &SampleSet, config: &BoundConfig, sphere_counts: &[usize]) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    let dist = DistanceMatrix::compute(samples, &MetricSpace::new(config.metric))?;
    sweep_spheres_from_distances(&dist, config, sphere_counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub epsilon: f64,
    pub c_adv: f64,
    /// Running maximum of `c_adv` over all probes at smaller or equal ε.
    pub smoothed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub risk_budget: f64,
    pub c_epsilon: f64,
    pub probes: Vec<Probe>,
}

fn smoothed_at(probes: &[Probe], eps: f64, value: f64) -> f64 {
    probes
        .iter()
        .filter(|p| p.epsilon <= eps)
        .map(|p| p.c_adv)
        .fold(value, f64::max)
}

/// Largest attack strength whose (monotonized) bound stays within `risk_budget`.
pub fn invert_bound_from_distances(
    dist: &DistanceMatrix,
    config: &BoundConfig,
    risk_budget: f64,
    eps_hi: f64,
    tol: f64,
) -> Result<Inversion> {
    let mut probe_cfg = config.clone();
    probe_cfg.epsilon = 0.0;
    check_distances(dist, &probe_cfg)?;
    check_epsilon(&MetricSpace::new(config.metric), eps_hi)?;
    if !(tol > 0.0) || !(eps_hi > 0.0) {
        return Err(Error::Config("eps-hi and tol must be positive".into()));
    }
    let mut probes: Vec<Probe> = Vec::new();
    let mut evaluate = |eps: f64, probes: &mut Vec<Probe>| -> Result<f64> {
        probe_cfg.epsilon = eps;
        let c = estimate_bound_from_distances(dist, &probe_cfg)?.c_adv;
        let smoothed = smoothed_at(probes, eps, c);
        probes.push(Probe {
            epsilon: eps,
            c_adv: c,
            smoothed,
        });
        Ok(smoothed)
    };
    let at_zero = evaluate(0.0, &mut probes)?;
    if risk_budget < at_zero {
        return Err(Error::BracketError(format!(
            "risk budget {risk_budget} is below the bound {at_zero} at epsilon 0"
        )));
    }
    let at_hi = evaluate(eps_hi, &mut probes)?;
    if risk_budget >= at_hi {
        return Ok(Inversion {
            risk_budget,
            c_epsilon: eps_hi,
            probes,
        });
    }
    let (mut lo, mut hi) = (0.0, eps_hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if evaluate(mid, &mut probes)? <= risk_budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Inversion {
        risk_budget,
        c_epsilon: lo,
        probes,
    })
}

pub fn invert_bound(
    samples: &SampleSet,
    config: &BoundConfig,
    risk_budget: f64,
    eps_hi: f64,
    tol: f64,
) -> Result<Inversion> {
    let dist = DistanceMatrix::compute(samples, &MetricSpace::new(config.metric))?;
    invert_bound_from_distances(&dist, config, risk_budget, eps_hi, tol)
}
