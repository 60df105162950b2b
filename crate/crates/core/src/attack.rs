//! Projected gradient attacks and clean / adversarial error evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::DifferentiableClassifier;
use crate::error::{Error, Result};
use crate::metric::{dot, l2_unchecked, norm, normalized_trace_distance, MetricKind};
use crate::samples::SampleSet;

/// Slack allowed when checking an emitted sample against its constraint.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_STEPS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub metric: MetricKind,
    pub clamp_nonnegative: bool,
}

impl AttackConfig {
    /// l2 PGD with step `2.5 ε / steps`.
    pub fn pgd_l2(epsilon: f64) -> Self {
        Self {
            epsilon,
            steps: DEFAULT_STEPS,
            step_size: 2.5 * epsilon / DEFAULT_STEPS as f64,
            metric: MetricKind::L2,
            clamp_nonnegative: false,
        }
    }

    /// Trace-distance PGD with geodesic step `2 asin(ε) / steps`.
    pub fn td_pgd(epsilon: f64) -> Self {
        Self {
            epsilon,
            steps: DEFAULT_STEPS,
            step_size: 2.0 * epsilon.clamp(0.0, 1.0).asin() / DEFAULT_STEPS as f64,
            metric: MetricKind::TraceAmplitude,
            clamp_nonnegative: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("attack needs at least one step".into()));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::DomainError(format!("epsilon {} must be non-negative", self.epsilon)));
        }
        if !(self.step_size > 0.0) && self.epsilon > 0.0 {
            return Err(Error::Config(format!("step size {} must be positive", self.step_size)));
        }
        match self.metric {
            MetricKind::L2 => Ok(()),
            MetricKind::TraceAmplitude if self.epsilon < 1.0 => Ok(()),
            MetricKind::TraceAmplitude => Err(Error::DomainError(format!(
                "trace-distance attack strength {} must be below 1",
                self.epsilon
            ))),
            MetricKind::TraceAngle => Err(Error::Config(
                "no attack is defined for the angle-encoding metric".into(),
            )),
        }
    }
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// Keeps the iterate that is misclassified, or failing that has the largest loss.
struct Best {
    x: Vec<f64>,
    wrong: bool,
    loss: f64,
}

impl Best {
    fn new<C: DifferentiableClassifier + ?Sized>(clf: &C, x: Vec<f64>, y: usize) -> Self {
        let wrong = clf.predict(&x) != y;
        let loss = clf.loss(&x, y);
        Self { x, wrong, loss }
    }

    fn offer<C: DifferentiableClassifier + ?Sized>(&mut self, clf: &C, x: &[f64], y: usize) {
        let wrong = clf.predict(x) != y;
        let loss = clf.loss(x, y);
        if (wrong, loss) > (self.wrong, self.loss) {
            self.x = x.to_vec();
            self.wrong = wrong;
            self.loss = loss;
        }
    }
}

/// PGD in the l2 ball of radius ε around `x`, starting from `x`.
pub fn pgd_l2<C: DifferentiableClassifier + ?Sized>(
    clf: &C,
    x: &[f64],
    y: usize,
    config: &AttackConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if config.metric != MetricKind::L2 {
        return Err(Error::Config("pgd_l2 requires the l2 metric".into()));
    }
    if x.len() != clf.dim() {
        return Err(Error::DimensionError {
            expected: clf.dim(),
            got: x.len(),
        });
    }
    let mut best = Best::new(clf, x.to_vec(), y);
    if config.epsilon == 0.0 {
        return Ok(best.x);
    }
    let mut cur = x.to_vec();
    for _ in 0..config.steps {
        let g = clf.ascent_direction(&cur, y);
        let gn = norm(&g);
        if !(gn > 0.0) || !gn.is_finite() {
            break;
        }
        let mut delta: Vec<f64> = cur
            .iter()
            .zip(&g)
            .zip(x)
            .map(|((c, gi), xi)| c + config.step_size * gi / gn - xi)
            .collect();
        let dn = norm(&delta);
        if dn > config.epsilon {
            delta = scaled(&delta, config.epsilon / dn);
        }
        cur = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
        best.offer(clf, &cur, y);
    }
    Ok(best.x)
}

/// Rotates unit vector `v` toward unit vector `u` so their angle is at most `theta_max`.
fn cap_projection(u: &[f64], v: &[f64], theta_max: f64) -> Vec<f64> {
    let c = dot(u, v).clamp(-1.0, 1.0);
    if c.acos() <= theta_max {
        return v.to_vec();
    }
    let w: Vec<f64> = v.iter().zip(u).map(|(vi, ui)| vi - c * ui).collect();
    let wn = norm(&w);
    if wn == 0.0 {
        return u.to_vec();
    }
    let (s, co) = theta_max.sin_cos();
    u.iter().zip(&w).map(|(ui, wi)| co * ui + s * wi / wn).collect()
}

/// PGD on the unit sphere inside the trace-distance cap of radius ε around `x / ‖x‖`.
pub fn td_pgd<C: DifferentiableClassifier + ?Sized>(
    clf: &C,
    x: &[f64],
    y: usize,
    config: &AttackConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if config.metric != MetricKind::TraceAmplitude {
        return Err(Error::Config("td_pgd requires the trace-amplitude metric".into()));
    }
    if x.len() != clf.dim() {
        return Err(Error::DimensionError {
            expected: clf.dim(),
            got: x.len(),
        });
    }
    let n = norm(x);
    if n == 0.0 {
        return Err(Error::ZeroNormSample { index: 0 });
    }
    let u: Vec<f64> = x.iter().map(|v| v / n).collect();
    let mut best = Best::new(clf, u.clone(), y);
    if config.epsilon == 0.0 {
        return Ok(best.x);
    }
    let theta_max = config.epsilon.asin();
    let mut cur = u.clone();
    for _ in 0..config.steps {
        let g = clf.ascent_direction(&cur, y);
        let radial = dot(&g, &cur);
        let tangent: Vec<f64> = g.iter().zip(&cur).map(|(gi, ci)| gi - radial * ci).collect();
        let tn = norm(&tangent);
        if !(tn > 0.0) || !tn.is_finite() {
            break;
        }
        let (s, c) = config.step_size.sin_cos();
        let mut next: Vec<f64> = cur.iter().zip(&tangent).map(|(ci, ti)| c * ci + s * ti / tn).collect();
        if config.clamp_nonnegative {
            next.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let nn = norm(&next);
        if nn == 0.0 {
            break;
        }
        next.iter_mut().for_each(|v| *v /= nn);
        cur = cap_projection(&u, &next, theta_max);
        best.offer(clf, &cur, y);
    }
    Ok(best.x)
}

/// Runs the attack matching `config.metric`.
pub fn attack<C: DifferentiableClassifier + ?Sized>(
    clf: &C,
    x: &[f64],
    y: usize,
    config: &AttackConfig,
) -> Result<Vec<f64>> {
    match config.metric {
        MetricKind::TraceAmplitude => td_pgd(clf, x, y, config),
        _ => pgd_l2(clf, x, y, config),
    }
}

/// True when `adv` satisfies the constraint of `config` relative to `x`.
pub fn within_constraint(x: &[f64], adv: &[f64], config: &AttackConfig) -> bool {
    match config.metric {
        MetricKind::TraceAmplitude => {
            let na = norm(adv);
            (na - 1.0).abs() <= CONSTRAINT_TOLERANCE
                && normalized_trace_distance(x, norm(x), adv, na) <= config.epsilon + CONSTRAINT_TOLERANCE
        }
        _ => l2_unchecked(x, adv) <= config.epsilon + CONSTRAINT_TOLERANCE,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub samples: usize,
    pub clean_error: f64,
    pub adversarial_error: f64,
    /// Attacked samples that violate the ε constraint; zero for a correct attack.
    pub violations: usize,
}

fn check_labels<C: DifferentiableClassifier + ?Sized>(clf: &C, set: &SampleSet) -> Result<()> {
    let labels = set.require_labels()?;
    if set.dim() != clf.dim() {
        return Err(Error::DimensionError {
            expected: clf.dim(),
            got: set.dim(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= clf.num_classes()) {
        return Err(Error::InvalidSample(format!(
            "label {l} outside the classifier's {} classes",
            clf.num_classes()
        )));
    }
    Ok(())
}

/// Fraction of samples whose prediction differs from the label.
pub fn clean_error<C: DifferentiableClassifier + ?Sized>(clf: &C, set: &SampleSet) -> Result<f64> {
    check_labels(clf, set)?;
    let labels = set.require_labels()?;
    let wrong = (0..set.len())
        .into_par_iter()
        .filter(|&i| clf.predict(set.row(i)) != labels[i] as usize)
        .count();
    Ok(wrong as f64 / set.len().max(1) as f64)
}

/// Attacks every sample and reports clean error, adversarial error and violations.
pub fn evaluate_attack<C: DifferentiableClassifier + ?Sized>(
    clf: &C,
    set: &SampleSet,
    config: &AttackConfig,
) -> Result<AttackSummary> {
    check_labels(clf, set)?;
    config.validate()?;
    let labels = set.require_labels()?;
    let outcomes = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let x = set.row(i);
            let y = labels[i] as usize;
            let adv = attack(clf, x, y, config)?;
            Ok((
                clf.predict(x) != y,
                clf.predict(&adv) != y,
                !within_constraint(x, &adv, config),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = set.len().max(1) as f64;
    let count = |f: fn(&(bool, bool, bool)) -> bool| outcomes.iter().filter(|o| f(o)).count();
    Ok(AttackSummary {
        samples: set.len(),
        clean_error: count(|o| o.0) as f64 / n,
        adversarial_error: count(|o| o.1) as f64 / n,
        violations: count(|o| o.2),
    })
}

pub fn adversarial_error<C: DifferentiableClassifier + ?Sized>(
    clf: &C,
    set: &SampleSet,
    config: &AttackConfig,
) -> Result<f64> {
    Ok(evaluate_attack(clf, set, config)?.adversarial_error)
}
