//! Greedy carving of an error region as a union of closed balls centred on samples.
//!
//! Each round considers every sample `i` as a centre and every count `k` in
//! `[k_l, k_u]`, takes the radius through the `k`-th closest not-yet-absorbed
//! sample, expands it by ε and counts the samples outside the expanded set
//! that the expanded ball would newly cover. The candidate minimizing the
//! increase `Δ = k' - k` is absorbed, ties broken by `(Δ, i, k)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{condense_mask, find_rank, CondensedView, DistanceMatrix, SortedDistanceIndex};
use crate::metric::{self, MetricKind, MetricSpace};
use crate::samples::SampleSet;

/// Union of closed balls `Sphere(center, radius)`; its ε-expansion uses `expanded_radii`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRegion {
    pub metric: MetricKind,
    pub epsilon: f64,
    pub centers: Vec<usize>,
    pub radii: Vec<f64>,
    pub expanded_radii: Vec<f64>,
}

impl ErrorRegion {
    pub fn empty(metric: MetricKind, epsilon: f64) -> Self {
        Self {
            metric,
            epsilon,
            centers: Vec::new(),
            radii: Vec::new(),
            expanded_radii: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Builds a region from centres and radii, deriving the expanded radii.
    pub fn from_spheres(
        metric: &MetricSpace,
        epsilon: f64,
        centers: Vec<usize>,
        radii: Vec<f64>,
    ) -> Result<Self> {
        if centers.len() != radii.len() {
            return Err(Error::DimensionError {
                expected: centers.len(),
                got: radii.len(),
            });
        }
        let expanded_radii = radii
            .iter()
            .map(|&r| metric.expand_radius(r, epsilon))
            .collect::<Result<_>>()?;
        Ok(Self {
            metric: metric.kind,
            epsilon,
            centers,
            radii,
            expanded_radii,
        })
    }

    /// Same region with centre indices translated through `ids`.
    pub fn remapped(&self, ids: &[usize]) -> ErrorRegion {
        ErrorRegion {
            centers: self.centers.iter().map(|&c| ids[c]).collect(),
            ..self.clone()
        }
    }

    fn membership_by<F>(&self, n_eval: usize, expanded: bool, distance: F) -> (f64, Vec<bool>)
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let radii = if expanded {
            &self.expanded_radii
        } else {
            &self.radii
        };
        let mask: Vec<bool> = (0..n_eval)
            .into_par_iter()
            .map(|p| {
                self.centers
                    .iter()
                    .zip(radii)
                    .any(|(&c, &r)| distance(c, p) <= r)
            })
            .collect();
        let fraction = if n_eval == 0 {
            0.0
        } else {
            mask.iter().filter(|&&m| m).count() as f64 / n_eval as f64
        };
        (fraction, mask)
    }
}

/// Evaluates membership of `samples` in the region (or in its ε-expansion).
///
/// Centre indices refer to rows of `reference`.
pub fn evaluate_membership(
    region: &ErrorRegion,
    reference: &SampleSet,
    samples: &SampleSet,
    expanded: bool,
) -> Result<(f64, Vec<bool>)> {
    if reference.dim() != samples.dim() {
        return Err(Error::DimensionError {
            expected: reference.dim(),
            got: samples.dim(),
        });
    }
    if let Some(&c) = region.centers.iter().find(|&&c| c >= reference.len()) {
        return Err(Error::IndexError(format!("center {c} out of range")));
    }
    let metric = MetricSpace::new(region.metric);
    samples.validate_for(metric.kind)?;
    reference.validate_for(metric.kind)?;
    let dist = |c: usize, p: usize| {
        metric
            .distance(reference.row(c), samples.row(p))
            .unwrap_or(f64::INFINITY)
    };
    Ok(region.membership_by(samples.len(), expanded, dist))
}

/// Membership of the samples `eval` of a precomputed distance matrix; centre
/// `c` of the region is sample `center_ids[c]` of the same matrix.
pub fn evaluate_membership_precomputed(
    region: &ErrorRegion,
    dist: &DistanceMatrix,
    center_ids: &[usize],
    eval: &[usize],
    expanded: bool,
) -> Result<(f64, Vec<bool>)> {
    if dist.metric() != region.metric {
        return Err(Error::MetricMismatch {
            region: region.metric.to_string(),
            request: dist.metric().to_string(),
        });
    }
    if let Some(&c) = region.centers.iter().find(|&&c| c >= center_ids.len()) {
        return Err(Error::IndexError(format!("center {c} out of range")));
    }
    Ok(region.membership_by(eval.len(), expanded, |c, p| {
        dist.get(center_ids[c], eval[p])
    }))
}

/// One selected sphere and the counts behind its selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereChoice {
    pub center: usize,
    /// Loop count: the radius passes through the `k`-th closest unabsorbed sample.
    pub k: usize,
    pub delta: i64,
    pub radius: f64,
    pub expanded_radius: f64,
    /// Unabsorbed samples inside the ball (exceeds `k` only on distance ties).
    pub covered: usize,
    /// Samples outside the expanded set inside the expanded ball.
    pub covered_expanded: usize,
}

/// Absorbed sets `S_E ⊆ S'_E` and their condensed views.
#[derive(Debug, Clone)]
pub struct CarveState {
    pub absorbed: Vec<bool>,
    pub absorbed_expanded: Vec<bool>,
    pub condensed: CondensedView,
    pub condensed_expanded: CondensedView,
    pub history: Vec<SphereChoice>,
}

impl CarveState {
    pub fn new(index: &SortedDistanceIndex) -> Self {
        let n = index.len();
        let view = index.full_view();
        Self {
            absorbed: vec![false; n],
            absorbed_expanded: vec![false; n],
            condensed: view.clone(),
            condensed_expanded: view,
            history: Vec::new(),
        }
    }

    /// State with the given absorbed sets; `absorbed` must be contained in `absorbed_expanded`.
    pub fn from_sets(
        index: &SortedDistanceIndex,
        absorbed: Vec<bool>,
        absorbed_expanded: Vec<bool>,
    ) -> Result<Self> {
        if absorbed
            .iter()
            .zip(&absorbed_expanded)
            .any(|(&a, &b)| a && !b)
        {
            return Err(Error::Config(
                "absorbed set must be contained in the expanded set".into(),
            ));
        }
        Ok(Self {
            condensed: condense_mask(index, &absorbed)?,
            condensed_expanded: condense_mask(index, &absorbed_expanded)?,
            absorbed,
            absorbed_expanded,
            history: Vec::new(),
        })
    }

    pub fn absorbed_count(&self) -> usize {
        self.absorbed.iter().filter(|&&a| a).count()
    }

    pub fn absorbed_expanded_count(&self) -> usize {
        self.absorbed_expanded.iter().filter(|&&a| a).count()
    }

    /// Training-set risk `|S_E| / n`.
    pub fn risk(&self) -> f64 {
        self.absorbed_count() as f64 / self.absorbed.len() as f64
    }

    /// Training-set adversarial risk `|S'_E| / n`.
    pub fn adv_risk(&self) -> f64 {
        self.absorbed_expanded_count() as f64 / self.absorbed.len() as f64
    }
}

pub(crate) fn check_epsilon(metric: &MetricSpace, eps: f64) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() || (metric.is_quantum() && eps > 1.0) {
        return Err(Error::DomainError(format!(
            "epsilon {eps} invalid for metric {}",
            metric.kind
        )));
    }
    Ok(())
}

#[inline]
fn expand_unchecked(metric: &MetricSpace, r: f64, eps: f64) -> f64 {
    if metric.is_quantum() {
        metric::expand_trace_radius(r.min(1.0), eps)
    } else {
        r + eps
    }
}

/// Best candidate sphere of one greedy round, minimizing `(Δ, i, k)`.
///
/// Returns `None` only when every candidate would absorb more than `k_u`
/// samples because of distance ties.
pub fn best_sphere(
    state: &CarveState,
    metric: &MetricSpace,
    eps: f64,
    k_l: usize,
    k_u: usize,
) -> Result<Option<SphereChoice>> {
    check_epsilon(metric, eps)?;
    if k_l < 1 || k_u < k_l {
        return Err(Error::DomainError(format!(
            "invalid sphere size range [{k_l}, {k_u}]"
        )));
    }
    let width = state.condensed.width();
    if width < k_u {
        return Err(Error::BudgetExhausted {
            needed: k_u,
            available: width,
        });
    }
    let best = (0..state.condensed.num_rows())
        .into_par_iter()
        .filter_map(|i| {
            let row = state.condensed.row(i);
            let expanded_row = state.condensed_expanded.row(i);
            let mut best: Option<(i64, usize, usize, usize, f64, f64)> = None;
            for k in k_l..=k_u {
                let r = row[k - 1];
                let covered = find_rank(row, r);
                if covered > k_u {
                    continue;
                }
                let r_exp = expand_unchecked(metric, r, eps);
                let covered_expanded = find_rank(expanded_row, r_exp);
                let delta = covered_expanded as i64 - k as i64;
                if best.is_none_or(|b| delta < b.0) {
                    best = Some((delta, k, covered, covered_expanded, r, r_exp));
                }
            }
            best.map(|(delta, k, covered, covered_expanded, radius, expanded_radius)| SphereChoice {
                center: i,
                k,
                delta,
                radius,
                expanded_radius,
                covered,
                covered_expanded,
            })
        })
        .min_by_key(|c| (c.delta, c.center, c.k));
    Ok(best)
}

/// Absorbs `choice` into the state and re-condenses both views.
pub fn absorb(index: &SortedDistanceIndex, state: &mut CarveState, choice: SphereChoice) -> Result<()> {
    for &j in &state.condensed.survivors(choice.center)[..choice.covered] {
        state.absorbed[j as usize] = true;
        state.absorbed_expanded[j as usize] = true;
    }
    for &j in &state.condensed_expanded.survivors(choice.center)[..choice.covered_expanded] {
        state.absorbed_expanded[j as usize] = true;
    }
    debug_assert_eq!(state.condensed.num_rows(), index.len());
    state.condensed.retain(&state.absorbed)?;
    state.condensed_expanded.retain(&state.absorbed_expanded)?;
    state.history.push(choice);
    Ok(())
}

/// Sphere-size range `[k_l, k_u]` for round `t` of `rounds`, or `None` once
/// the remaining budget `alpha·n - |S_E|` drops below one sample.
pub fn size_range(alpha: f64, n: usize, absorbed: usize, t: usize, rounds: usize) -> Option<(usize, usize)> {
    let budget = alpha * n as f64 - absorbed as f64;
    if budget < 1.0 {
        return None;
    }
    let k_u = budget.ceil() as usize;
    let k_l = ((budget / (rounds - t) as f64).ceil() as usize).max(1);
    Some((k_l.min(k_u), k_u))
}

/// Greedily carves at most `rounds` spheres covering at most `⌈alpha·n⌉` samples.
pub fn fit_error_region(
    index: &SortedDistanceIndex,
    metric: &MetricSpace,
    eps: f64,
    alpha: f64,
    rounds: usize,
) -> Result<(ErrorRegion, CarveState)> {
    check_epsilon(metric, eps)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::DomainError(format!("alpha {alpha} must lie in (0, 1)")));
    }
    if rounds == 0 {
        return Err(Error::DomainError("number of spheres must be at least 1".into()));
    }
    if index.dist.metric() != metric.kind {
        return Err(Error::MetricMismatch {
            region: metric.kind.to_string(),
            request: index.dist.metric().to_string(),
        });
    }
    let n = index.len();
    if alpha * (n as f64) < 1.0 {
        return Err(Error::AlphaTooSmall(alpha * n as f64));
    }
    let mut state = CarveState::new(index);
    let mut region = ErrorRegion::empty(metric.kind, eps);
    let mut absorbed = 0usize;
    for t in 0..rounds {
        let Some((k_l, k_u)) = size_range(alpha, n, absorbed, t, rounds) else {
            break;
        };
        let Some(choice) = best_sphere(&state, metric, eps, k_l, k_u)? else {
            break;
        };
        absorb(index, &mut state, choice)?;
        absorbed += choice.covered;
        region.centers.push(choice.center);
        region.radii.push(choice.radius);
        region.expanded_radii.push(choice.expanded_radius);
    }
    Ok((region, state))
}
