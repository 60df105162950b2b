//! Distance, fidelity and radius-expansion primitives.
//!
//! Three perturbation metrics are supported:
//!
//! * `L2`: Euclidean distance between raw feature vectors.
//! * `TraceAmplitude`: trace distance between amplitude-encoded pure states,
//!   i.e. between the l2-normalized feature vectors.
//! * `TraceAngle`: trace distance between angle-encoded product states, one
//!   feature per qubit.
//!
//! For pure states the trace distance is `sqrt(1 - F)` where `F` is the
//! fidelity, and equals `sin θ` where `θ` is the Bures angle. Balls are closed
//! everywhere (membership uses `<=`).

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on fidelities and cosines before clamping to `[0, 1]`.
pub const FIDELITY_TOLERANCE: f64 = 1e-9;

/// Slack allowed on the norm of vectors that must be unit length.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    L2,
    TraceAmplitude,
    TraceAngle,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::L2 => "l2",
            MetricKind::TraceAmplitude => "trace-amplitude",
            MetricKind::TraceAngle => "trace-angle",
        }
    }

    /// Tag byte used by the binary distance cache.
    pub fn code(self) -> u8 {
        match self {
            MetricKind::L2 => 0,
            MetricKind::TraceAmplitude => 1,
            MetricKind::TraceAngle => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(MetricKind::L2),
            1 => Some(MetricKind::TraceAmplitude),
            2 => Some(MetricKind::TraceAngle),
            _ => None,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(MetricKind::L2),
            "trace-amplitude" => Ok(MetricKind::TraceAmplitude),
            "trace-angle" => Ok(MetricKind::TraceAngle),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

/// A perturbation metric together with its radius-expansion rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSpace {
    pub kind: MetricKind,
    /// Per-feature rotation scale of the angle encoding (fixed at π/2).
    pub angle_scale: f64,
}

impl MetricSpace {
    pub fn new(kind: MetricKind) -> Self {
        Self {
            kind,
            angle_scale: FRAC_PI_2,
        }
    }

    pub fn l2() -> Self {
        Self::new(MetricKind::L2)
    }

    pub fn trace_amplitude() -> Self {
        Self::new(MetricKind::TraceAmplitude)
    }

    pub fn trace_angle() -> Self {
        Self::new(MetricKind::TraceAngle)
    }

    /// Whether distances are trace distances (bounded by one).
    pub fn is_quantum(&self) -> bool {
        !matches!(self.kind, MetricKind::L2)
    }

    /// Distance between two feature vectors under this metric.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self.kind {
            MetricKind::L2 => l2_distance(a, b),
            MetricKind::TraceAmplitude => {
                check_dims(a, b)?;
                check_finite(a)?;
                check_finite(b)?;
                let na = norm(a);
                let nb = norm(b);
                if na == 0.0 || nb == 0.0 {
                    return Err(Error::ZeroNormSample {
                        index: if na == 0.0 { 0 } else { 1 },
                    });
                }
                Ok(normalized_trace_distance(a, na, b, nb))
            }
            MetricKind::TraceAngle => {
                let f = angle_fidelity(a, b)?;
                trace_distance_from_fidelity(f)
            }
        }
    }

    pub fn expand_radius(&self, r: f64, eps: f64) -> Result<f64> {
        expand_radius(self, r, eps)
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionError {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidSample("empty feature vector".into()));
    }
    Ok(())
}

fn check_finite(a: &[f64]) -> Result<()> {
    if let Some(v) = a.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidSample(format!("non-finite entry {v}")));
    }
    Ok(())
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean distance `|a - b|`.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    check_finite(a)?;
    check_finite(b)?;
    Ok(l2_unchecked(a, b))
}

#[inline]
pub(crate) fn l2_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Trace distance between the amplitude encodings of `a` and `b`, given their norms.
///
/// Uses `sin θ = |â - b̂| |â + b̂| / 2`, which stays accurate for nearly
/// identical states and is exactly zero for identical inputs.
#[inline]
pub(crate) fn normalized_trace_distance(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    let (mut minus, mut plus) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let u = x / na;
        let v = y / nb;
        minus += (u - v) * (u - v);
        plus += (u + v) * (u + v);
    }
    ((minus * plus).sqrt() * 0.5).min(1.0)
}

/// Same as [`normalized_trace_distance`] for inputs that already have unit norm.
#[inline]
pub(crate) fn unit_trace_distance(u: &[f64], v: &[f64]) -> f64 {
    let (mut minus, mut plus) = (0.0, 0.0);
    for (x, y) in u.iter().zip(v) {
        minus += (x - y) * (x - y);
        plus += (x + y) * (x + y);
    }
    ((minus * plus).sqrt() * 0.5).min(1.0)
}

#[inline]
pub(crate) fn angle_trace_distance_unchecked(a: &[f64], b: &[f64], scale: f64) -> f64 {
    let f: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let c = (scale * (x - y)).cos();
            c * c
        })
        .product();
    (1.0 - f.clamp(0.0, 1.0)).sqrt()
}

fn clamp_unit(value: f64, what: &str) -> Result<f64> {
    if !(-FIDELITY_TOLERANCE..=1.0 + FIDELITY_TOLERANCE).contains(&value) {
        return Err(Error::NumericalError(format!(
            "{what} {value} outside [0, 1] beyond tolerance"
        )));
    }
    Ok(value.clamp(0.0, 1.0))
}

/// Fidelity of the amplitude encodings: `(x1·x2 / (|x1| |x2|))²`.
pub fn amplitude_fidelity(x1: &[f64], x2: &[f64]) -> Result<f64> {
    check_dims(x1, x2)?;
    check_finite(x1)?;
    check_finite(x2)?;
    let n1 = norm(x1);
    let n2 = norm(x2);
    if n1 == 0.0 {
        return Err(Error::ZeroNormSample { index: 0 });
    }
    if n2 == 0.0 {
        return Err(Error::ZeroNormSample { index: 1 });
    }
    let cos = dot(x1, x2) / (n1 * n2);
    clamp_unit(cos * cos, "fidelity")
}

/// Fidelity of the angle encodings: `Π cos²(π/2 · (x1_i - x2_i))`.
pub fn angle_fidelity(x1: &[f64], x2: &[f64]) -> Result<f64> {
    check_dims(x1, x2)?;
    check_finite(x1)?;
    check_finite(x2)?;
    let f: f64 = x1
        .iter()
        .zip(x2)
        .map(|(a, b)| {
            let c = (FRAC_PI_2 * (a - b)).cos();
            c * c
        })
        .product();
    clamp_unit(f, "fidelity")
}

/// Pure-state trace distance `sqrt(1 - F)`.
pub fn trace_distance_from_fidelity(fidelity: f64) -> Result<f64> {
    let f = clamp_unit(fidelity, "fidelity")?;
    Ok((1.0 - f).sqrt())
}

/// Bures angle `arccos |<u|v>|` between two complex unit vectors.
pub fn bures_angle(u: &[Complex64], v: &[Complex64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionError {
            expected: u.len(),
            got: v.len(),
        });
    }
    for w in [u, v] {
        let n = w.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized { norm: n });
        }
    }
    let overlap: Complex64 = u.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
    let c = clamp_unit(overlap.norm(), "overlap modulus")?;
    Ok(c.acos())
}

/// Radius of the ε-expansion of a closed ball of radius `r`.
///
/// `L2`: `r + eps`. Trace metrics: `r sqrt(1 - eps²) + eps sqrt(1 - r²)`,
/// i.e. `sin(asin r + asin eps)`, saturating at 1 once the angles reach π/2.
pub fn expand_radius(metric: &MetricSpace, r: f64, eps: f64) -> Result<f64> {
    if !(r >= 0.0) || !(eps >= 0.0) || !r.is_finite() || !eps.is_finite() {
        return Err(Error::DomainError(format!(
            "radius {r} and epsilon {eps} must be finite and non-negative"
        )));
    }
    match metric.kind {
        MetricKind::L2 => Ok(r + eps),
        MetricKind::TraceAmplitude | MetricKind::TraceAngle => {
            if r > 1.0 || eps > 1.0 {
                return Err(Error::DomainError(format!(
                    "trace radius {r} and epsilon {eps} must not exceed 1"
                )));
            }
            Ok(expand_trace_radius(r, eps))
        }
    }
}

#[inline]
pub(crate) fn expand_trace_radius(r: f64, eps: f64) -> f64 {
    if r.asin() + eps.asin() >= FRAC_PI_2 {
        return 1.0;
    }
    let expanded = r * (1.0 - eps * eps).sqrt() + eps * (1.0 - r * r).sqrt();
    expanded.clamp(r, 1.0)
}
