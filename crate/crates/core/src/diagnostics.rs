//! Slow reference implementations of the definitions behind the fast paths.
//!
//! Every function here recomputes its answer directly (explicit statevectors,
//! full re-sorts, triple loops) and refuses inputs above an [`OracleBudget`].
//! They are meant for verification on small data slices.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::DistanceMatrix;
use crate::metric::{self, bures_angle, MetricKind, MetricSpace, NORM_TOLERANCE};
use crate::region::{CarveState, ErrorRegion};
use crate::samples::SampleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleBudget {
    pub max_n: usize,
    pub max_d: usize,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self { max_n: 64, max_d: 8 }
    }
}

impl OracleBudget {
    pub fn check(&self, n: usize, d: usize) -> Result<()> {
        if n > self.max_n || d > self.max_d {
            return Err(Error::BudgetExceeded(format!(
                "n={n}, d={d} exceeds oracle budget n<={}, d<={}",
                self.max_n, self.max_d
            )));
        }
        Ok(())
    }
}

/// Pure state of a sample under the metric's encoding.
///
/// Amplitude encoding: the normalized real vector. Angle encoding: the
/// `2^d`-dimensional product state with qubit `i` in
/// `cos(π x_i / 2)|0> - i sin(π x_i / 2)|1>`.
pub fn encode_state(x: &[f64], metric: MetricKind) -> Result<Vec<Complex64>> {
    match metric {
        MetricKind::L2 => Err(Error::DomainError("l2 samples have no quantum encoding".into())),
        MetricKind::TraceAmplitude => {
            let n = metric::norm(x);
            if n == 0.0 {
                return Err(Error::ZeroNormSample { index: 0 });
            }
            Ok(x.iter().map(|v| Complex64::new(v / n, 0.0)).collect())
        }
        MetricKind::TraceAngle => {
            let mut state = vec![Complex64::new(1.0, 0.0)];
            for &xi in x {
                let half = std::f64::consts::FRAC_PI_2 * xi;
                let qubit = [Complex64::new(half.cos(), 0.0), Complex64::new(0.0, -half.sin())];
                state = state
                    .iter()
                    .flat_map(|s| qubit.iter().map(move |q| s * q))
                    .collect();
            }
            Ok(state)
        }
    }
}

fn inner(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

/// Witness state `y = cos θ_r |c> + sin θ_r |x_⊥>` lying in the ball of angle
/// `theta_r` around `c` and as close as possible to `x`.
pub fn bures_witness(c: &[Complex64], x: &[Complex64], theta_r: f64) -> Result<Vec<Complex64>> {
    let theta_xc = bures_angle(c, x)?;
    if theta_xc <= theta_r {
        return Ok(x.to_vec());
    }
    let overlap = inner(c, x);
    // remove the relative phase so that <c|x> is real and non-negative
    let phase = if overlap.norm() > 0.0 {
        overlap.conj() / overlap.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let aligned: Vec<Complex64> = x.iter().map(|v| v * phase).collect();
    let cos = theta_xc.cos();
    let mut perp: Vec<Complex64> = aligned.iter().zip(c).map(|(a, b)| a - b * cos).collect();
    let norm = perp.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    perp.iter_mut().for_each(|v| *v /= norm);
    Ok(c.iter()
        .zip(&perp)
        .map(|(a, b)| a * theta_r.cos() + b * theta_r.sin())
        .collect())
}

/// Membership in the ε-expansion of a region computed two ways.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionMembership {
    /// Distance to some centre is at most the expanded radius.
    pub by_radius: Vec<bool>,
    /// Some point of some (continuous) ball lies within ε.
    pub by_dilation: Vec<bool>,
}

/// Direct membership test of `points` in the ε-expansion of `region`, whose
/// centre indices refer to rows of `reference`.
pub fn direct_expansion_membership(
    reference: &SampleSet,
    region: &ErrorRegion,
    points: &SampleSet,
    eps: f64,
    budget: &OracleBudget,
) -> Result<ExpansionMembership> {
    budget.check(reference.len().max(points.len()), reference.dim())?;
    if reference.dim() != points.dim() {
        return Err(Error::DimensionError {
            expected: reference.dim(),
            got: points.dim(),
        });
    }
    let n = points.len();
    let mut by_radius = vec![false; n];
    let mut by_dilation = vec![false; n];
    match region.metric {
        MetricKind::L2 => {
            for p in 0..n {
                let x = points.row(p);
                for (&c, &r) in region.centers.iter().zip(&region.radii) {
                    let center = reference.row(c);
                    let d = metric::l2_distance(center, x)?;
                    if d <= r + eps {
                        by_radius[p] = true;
                    }
                    // nearest point of the ball to x
                    let y: Vec<f64> = if d <= r {
                        x.to_vec()
                    } else {
                        center
                            .iter()
                            .zip(x)
                            .map(|(a, b)| a + (b - a) * (r / d))
                            .collect()
                    };
                    if metric::l2_distance(&y, x)? <= eps {
                        by_dilation[p] = true;
                    }
                }
            }
        }
        kind => {
            let theta_eps = eps.min(1.0).asin();
            for p in 0..n {
                let x = encode_state(points.row(p), kind)?;
                for (&c, &r) in region.centers.iter().zip(&region.radii) {
                    let center = encode_state(reference.row(c), kind)?;
                    let theta_r = r.min(1.0).asin();
                    let theta_xc = bures_angle(&center, &x)?;
                    let overlap = inner(&center, &x).norm().min(1.0);
                    let trace = (1.0 - overlap * overlap).sqrt();
                    let limit = metric::expand_radius(&MetricSpace::new(kind), r.min(1.0), eps)?;
                    if trace <= limit {
                        by_radius[p] = true;
                    }
                    let y = if theta_xc <= theta_r + theta_eps {
                        bures_witness(&center, &x, theta_r)?
                    } else {
                        continue;
                    };
                    let yx = inner(&y, &x).norm().min(1.0);
                    if (1.0 - yx * yx).max(0.0).sqrt() <= eps + 1e-12 {
                        by_dilation[p] = true;
                    }
                }
            }
        }
    }
    Ok(ExpansionMembership {
        by_radius,
        by_dilation,
    })
}

/// Exhaustive version of one greedy round: recomputes all distances for every
/// candidate and returns the lexicographic minimum `(center, k, delta)`.
pub fn exhaustive_greedy_step(
    samples: &SampleSet,
    metric: &MetricSpace,
    state: &CarveState,
    eps: f64,
    k_l: usize,
    k_u: usize,
    budget: &OracleBudget,
) -> Result<Option<(usize, usize, i64)>> {
    let n = samples.len();
    budget.check(n, samples.dim())?;
    if state.absorbed.len() != n {
        return Err(Error::DimensionError {
            expected: n,
            got: state.absorbed.len(),
        });
    }
    let free = state.absorbed.iter().filter(|&&a| !a).count();
    if k_l < 1 || k_u < k_l {
        return Err(Error::DomainError(format!("invalid range [{k_l}, {k_u}]")));
    }
    if free < k_u {
        return Err(Error::BudgetExhausted {
            needed: k_u,
            available: free,
        });
    }
    let mut best: Option<(i64, usize, usize)> = None;
    for i in 0..n {
        for k in k_l..=k_u {
            let mut dists = Vec::new();
            for j in 0..n {
                if !state.absorbed[j] {
                    dists.push(metric.distance(samples.row(i), samples.row(j))?);
                }
            }
            dists.sort_by(f64::total_cmp);
            let r = dists[k - 1];
            let covered = dists.iter().filter(|&&v| v <= r).count();
            if covered > k_u {
                continue;
            }
            let r_exp = metric.expand_radius(r, eps)?;
            let mut covered_expanded = 0i64;
            for j in 0..n {
                if !state.absorbed_expanded[j]
                    && metric.distance(samples.row(i), samples.row(j))? <= r_exp
                {
                    covered_expanded += 1;
                }
            }
            let cand = (covered_expanded - k as i64, i, k);
            if best.is_none_or(|b| cand < b) {
                best = Some(cand);
            }
        }
    }
    Ok(best.map(|(delta, i, k)| (i, k, delta)))
}

/// Ascending distances from each sample to the samples outside `removed`,
/// re-sorted from scratch.
pub fn naive_condense(
    dist: &DistanceMatrix,
    removed: &[usize],
    budget: &OracleBudget,
) -> Result<Vec<Vec<f64>>> {
    let n = dist.len();
    budget.check(n, 0)?;
    if let Some(&k) = removed.iter().find(|&&k| k >= n) {
        return Err(Error::IndexError(format!("removal index {k} out of range")));
    }
    Ok((0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n)
                .filter(|j| !removed.contains(j))
                .map(|j| dist.get(i, j))
                .collect();
            row.sort_by(f64::total_cmp);
            row
        })
        .collect())
}

/// Real part of the determinant of the Gram matrix `G_ij = <v_i|v_j>`.
pub fn gram_determinant(v1: &[Complex64], v2: &[Complex64], v3: &[Complex64]) -> Result<f64> {
    let vs = [v1, v2, v3];
    for v in vs {
        let n = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized { norm: n });
        }
    }
    let g = |i: usize, j: usize| inner(vs[i], vs[j]);
    let det = g(0, 0) * (g(1, 1) * g(2, 2) - g(1, 2) * g(2, 1))
        - g(0, 1) * (g(1, 0) * g(2, 2) - g(1, 2) * g(2, 0))
        + g(0, 2) * (g(1, 0) * g(2, 1) - g(1, 1) * g(2, 0));
    if det.im.abs() >= 1e-9 {
        return Err(Error::NumericalError(format!(
            "Gram determinant has imaginary part {}",
            det.im
        )));
    }
    Ok(det.re)
}
