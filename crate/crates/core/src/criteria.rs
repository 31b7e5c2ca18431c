//! Numerical verdicts for the limit and series conditions.
//!
//! Finite data cannot prove convergence of an infinite series, so every
//! verdict here is a fitted-exponent heuristic over the upper half of the
//! grid. The thresholds live in [`VerdictRule`].

use serde::{Deserialize, Serialize};

use crate::chain::ChainSpec;
use crate::error::{LabError, Result};
use crate::projective::{check_horizon, dyadic_grid, horizon_profile, two_sided_profile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesVerdict {
    Converges,
    Diverges,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitVerdict {
    Holds,
    Fails,
    Inconclusive,
}

/// Series verdict: converges iff the fitted exponent of the summand is below
/// `−(1 + delta)`, diverges iff above `−(1 − delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictRule {
    pub delta: f64,
    /// Values at or below `negligible · scale` count as exact zeros.
    pub negligible: f64,
}

impl Default for VerdictRule {
    fn default() -> Self {
        Self {
            delta: 0.1,
            negligible: 1e-24,
        }
    }
}

impl VerdictRule {
    pub fn classify(&self, exponent: f64) -> SeriesVerdict {
        if exponent < -(1.0 + self.delta) {
            SeriesVerdict::Converges
        } else if exponent > -(1.0 - self.delta) {
            SeriesVerdict::Diverges
        } else {
            SeriesVerdict::Inconclusive
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDiagnostic {
    pub condition: String,
    /// Dyadic `n` or dense `k`.
    pub grid: Vec<usize>,
    /// Raw summands at each grid point.
    pub summands: Vec<f64>,
    /// Series terms: block-weighted summands on dyadic grids, summands on dense grids.
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// Log–log slope of summand against index over the top half of the grid.
    pub fitted_exponent: f64,
    pub verdict: SeriesVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitDiagnostic {
    pub condition: String,
    pub grid: Vec<usize>,
    pub values: Vec<f64>,
    pub extrapolated_limit: f64,
    pub fitted_exponent: f64,
    pub verdict: LimitVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchedEquivalenceReport {
    pub grid: Vec<usize>,
    pub sigma_sq: f64,
    pub tolerance: f64,
    /// Per state, max over the top half of the grid of `E^x(S_n²)/n`.
    pub per_state_limsup: Vec<f64>,
    /// Per state, `|E^x(S_n²)/n − σ²|` at the largest `n`.
    pub per_state_limit_gap: Vec<f64>,
    /// Per state, max − min of `E^x(S_n²)/n` over the last three grid points.
    pub per_state_oscillation: Vec<f64>,
    pub condition_a: bool,
    pub condition_b: bool,
}

/// Least-squares slope of `ln(value)` against `ln(index)` over the top half
/// of the grid, skipping values at or below `floor`. All-zero windows give
/// `−∞` (the summand vanishes).
pub fn fitted_exponent(grid: &[usize], values: &[f64], floor: f64) -> f64 {
    let start = grid.len() / 2;
    let points: Vec<(f64, f64)> = grid[start..]
        .iter()
        .zip(&values[start..])
        .filter(|(_, v)| **v > floor)
        .map(|(n, v)| ((*n as f64).ln(), v.ln()))
        .collect();
    if points.len() < 2 {
        return f64::NEG_INFINITY;
    }
    slope(&points)
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn partial_sums(terms: &[f64]) -> Vec<f64> {
    terms
        .iter()
        .scan(0.0, |acc, t| {
            *acc += t;
            Some(*acc)
        })
        .collect()
}

fn series(
    condition: &str,
    grid: Vec<usize>,
    summands: Vec<f64>,
    block_weighted: bool,
    scale: f64,
    rule: &VerdictRule,
) -> SeriesDiagnostic {
    let summands: Vec<f64> = summands.into_iter().map(|s| s.max(0.0)).collect();
    let terms: Vec<f64> = if block_weighted {
        grid.iter()
            .zip(&summands)
            .map(|(n, s)| *n as f64 * s)
            .collect()
    } else {
        summands.clone()
    };
    let fitted_exponent = fitted_exponent(&grid, &summands, rule.negligible * scale);
    SeriesDiagnostic {
        condition: condition.to_string(),
        partial_sums: partial_sums(&terms),
        verdict: rule.classify(fitted_exponent),
        grid,
        summands,
        terms,
        fitted_exponent,
    }
}

fn check_grid(n_max: usize) -> Result<Vec<usize>> {
    check_horizon(n_max, "n_max")?;
    if n_max < 8 {
        return Err(LabError::InvalidArgument("criteria need n_max ≥ 8".into()));
    }
    Ok(dyadic_grid(n_max))
}

fn last3_richardson(values: &[f64]) -> f64 {
    let k = values.len();
    let (a, b, c) = (values[k - 3], values[k - 2], values[k - 1]);
    let first = 2.0 * b - a;
    let second = 2.0 * c - b;
    (4.0 * second - first) / 3.0
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Verdict for `lim sup E(S_n²)/n < ∞` from values on a dyadic grid.
///
/// Holds iff the top-half maximum is at most twice the top-half median and
/// the slope of `values / median` against `ln n` over the top half lies
/// within ±0.05. Fails iff the values grow like a positive power of `n`
/// (log–log exponent above 0.1).
pub fn varsup_verdict(grid: &[usize], values: &[f64]) -> (LimitVerdict, f64) {
    let start = grid.len() / 2;
    let top = &values[start..];
    let med = median(top);
    let max = top.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if med.abs() > 1e-300 { med.abs() } else { 1.0 };
    let pts: Vec<(f64, f64)> = grid[start..]
        .iter()
        .zip(top)
        .map(|(n, v)| ((*n as f64).ln(), v / scale))
        .collect();
    let rel_slope = slope(&pts);
    let growth = fitted_exponent(grid, values, 0.0);
    let verdict = if max <= 2.0 * med + 1e-300 && rel_slope.abs() <= 0.05 {
        LimitVerdict::Holds
    } else if growth > 0.1 {
        LimitVerdict::Fails
    } else {
        LimitVerdict::Inconclusive
    };
    (verdict, rel_slope)
}

pub fn check_varsup(spec: &ChainSpec, n_max: usize) -> Result<LimitDiagnostic> {
    let grid = check_grid(n_max)?;
    let values: Vec<f64> = horizon_profile(spec, &grid)?
        .iter()
        .map(|s| s.annealed_second_moment / s.n as f64)
        .collect();
    let (verdict, rel_slope) = varsup_verdict(&grid, &values);
    Ok(LimitDiagnostic {
        condition: "varsup".into(),
        extrapolated_limit: last3_richardson(&values),
        fitted_exponent: rel_slope,
        grid,
        values,
        verdict,
    })
}

/// Verdict for `||E(S_n|ξ_0,ξ_n)||²/n → 0`: holds iff the last value is at
/// most `1e-3 · E(f²)` and the log–log exponent is at most −0.9; fails iff
/// the values are not decaying (exponent above −0.1) and the last value is
/// above that threshold.
pub fn neglipf_verdict(grid: &[usize], values: &[f64], second_moment: f64) -> (LimitVerdict, f64) {
    let floor = 1e-24 * second_moment.max(f64::MIN_POSITIVE);
    let exponent = fitted_exponent(grid, values, floor);
    let last = *values.last().unwrap();
    let threshold = 1e-3 * second_moment;
    let verdict = if last <= threshold && exponent <= -0.9 {
        LimitVerdict::Holds
    } else if last > threshold && exponent > -0.1 {
        LimitVerdict::Fails
    } else {
        LimitVerdict::Inconclusive
    };
    (verdict, exponent)
}

pub fn check_neglipf(spec: &ChainSpec, n_max: usize) -> Result<LimitDiagnostic> {
    let grid = check_grid(n_max)?;
    let values: Vec<f64> = horizon_profile(spec, &grid)?
        .iter()
        .map(|s| s.bridge_norm_sq / s.n as f64)
        .collect();
    let (verdict, exponent) = neglipf_verdict(&grid, &values, spec.observable_second_moment());
    Ok(LimitDiagnostic {
        condition: "neglipf".into(),
        extrapolated_limit: last3_richardson(&values).max(0.0),
        fitted_exponent: exponent,
        grid,
        values,
        verdict,
    })
}

/// `Σ ||E(S_n|ξ_0)|| / n^{3/2}`.
pub fn check_maxwell_woodroofe(spec: &ChainSpec, n_max: usize) -> Result<SeriesDiagnostic> {
    check_maxwell_woodroofe_with(spec, n_max, &VerdictRule::default())
}

pub fn check_maxwell_woodroofe_with(
    spec: &ChainSpec,
    n_max: usize,
    rule: &VerdictRule,
) -> Result<SeriesDiagnostic> {
    let grid = check_grid(n_max)?;
    let summands = horizon_profile(spec, &grid)?
        .iter()
        .map(|s| s.past_norm_sq.sqrt() / (s.n as f64).powf(1.5))
        .collect();
    let scale = spec.observable_second_moment().sqrt();
    Ok(series(
        "maxwell-woodroofe",
        grid,
        summands,
        true,
        scale,
        rule,
    ))
}

/// `Σ ||E(S_n|ξ_0)||² / n²`.
pub fn check_conjrev(spec: &ChainSpec, n_max: usize) -> Result<SeriesDiagnostic> {
    check_conjrev_with(spec, n_max, &VerdictRule::default())
}

pub fn check_conjrev_with(
    spec: &ChainSpec,
    n_max: usize,
    rule: &VerdictRule,
) -> Result<SeriesDiagnostic> {
    let grid = check_grid(n_max)?;
    let summands = horizon_profile(spec, &grid)?
        .iter()
        .map(|s| s.past_norm_sq / (s.n as f64).powi(2))
        .collect();
    Ok(series(
        "conjrev",
        grid,
        summands,
        true,
        spec.observable_second_moment(),
        rule,
    ))
}

/// `Σ ||E(S_n|ξ_0,ξ_n)||² / n²`.
pub fn check_condpf(spec: &ChainSpec, n_max: usize) -> Result<SeriesDiagnostic> {
    check_condpf_with(spec, n_max, &VerdictRule::default())
}

pub fn check_condpf_with(
    spec: &ChainSpec,
    n_max: usize,
    rule: &VerdictRule,
) -> Result<SeriesDiagnostic> {
    let grid = check_grid(n_max)?;
    let summands = horizon_profile(spec, &grid)?
        .iter()
        .map(|s| s.bridge_norm_sq / (s.n as f64).powi(2))
        .collect();
    Ok(series(
        "condpf",
        grid,
        summands,
        true,
        spec.observable_second_moment(),
        rule,
    ))
}

/// `Σ_k ||E(X_0|ξ_{−k},ξ_k)||²` on the dense grid `k = 1..=k_max`.
pub fn check_mixingale(spec: &ChainSpec, k_max: usize) -> Result<SeriesDiagnostic> {
    check_mixingale_with(spec, k_max, &VerdictRule::default())
}

pub fn check_mixingale_with(
    spec: &ChainSpec,
    k_max: usize,
    rule: &VerdictRule,
) -> Result<SeriesDiagnostic> {
    if k_max < 4 {
        return Err(LabError::InvalidArgument(
            "mixingale needs k_max ≥ 4".into(),
        ));
    }
    let summands = two_sided_profile(spec, k_max)?;
    let grid: Vec<usize> = (1..=k_max).collect();
    Ok(series(
        "mixingale",
        grid,
        summands,
        false,
        spec.observable_second_moment(),
        rule,
    ))
}

/// Per-state conditions (a) and (b) on `E^x(S_n²)/n`, tolerance
/// `max(0.05 σ², 1e-6)`.
///
/// Condition (a) is tested as `lim sup ≤ σ² + tol`; a strict `<` could never
/// hold once the quenched CLT forces `lim inf ≥ σ²`.
pub fn check_quenched_moments(
    spec: &ChainSpec,
    n_max: usize,
    sigma_sq: f64,
) -> Result<QuenchedEquivalenceReport> {
    let grid = check_grid(n_max)?;
    let profile = horizon_profile(spec, &grid)?;
    let tolerance = (0.05 * sigma_sq).max(1e-6);
    let start = grid.len() / 2;
    let states: Vec<usize> = spec.support().collect();
    let d = spec.dim();

    let mut per_state_limsup = vec![0.0; d];
    let mut per_state_limit_gap = vec![0.0; d];
    let mut per_state_oscillation = vec![0.0; d];
    for x in 0..d {
        let series: Vec<f64> = profile
            .iter()
            .map(|s| s.forward_second_moment[x] / s.n as f64)
            .collect();
        per_state_limsup[x] = series[start..]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        per_state_limit_gap[x] = (series.last().unwrap() - sigma_sq).abs();
        let last3 = &series[series.len() - 3..];
        let hi = last3.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = last3.iter().copied().fold(f64::INFINITY, f64::min);
        per_state_oscillation[x] = hi - lo;
    }

    let condition_a = states
        .iter()
        .all(|&x| per_state_limsup[x] <= sigma_sq + tolerance);
    let condition_b = states
        .iter()
        .all(|&x| per_state_oscillation[x] <= tolerance);

    Ok(QuenchedEquivalenceReport {
        grid,
        sigma_sq,
        tolerance,
        per_state_limsup,
        per_state_limit_gap,
        per_state_oscillation,
        condition_a,
        condition_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_of_power_law() {
        let grid: Vec<usize> = (0..12).map(|j| 1 << j).collect();
        let values: Vec<f64> = grid.iter().map(|n| 3.0 / (*n as f64).powi(2)).collect();
        assert!((fitted_exponent(&grid, &values, 0.0) + 2.0).abs() < 1e-12);
        assert_eq!(fitted_exponent(&grid, &[0.0; 12], 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn classification_thresholds() {
        let rule = VerdictRule::default();
        assert_eq!(rule.classify(-1.5), SeriesVerdict::Converges);
        assert_eq!(rule.classify(-1.0), SeriesVerdict::Inconclusive);
        assert_eq!(rule.classify(-0.5), SeriesVerdict::Diverges);
        assert_eq!(rule.classify(f64::NEG_INFINITY), SeriesVerdict::Converges);
    }

    #[test]
    fn varsup_detects_growth() {
        let grid: Vec<usize> = (0..14).map(|j| 1 << j).collect();
        let growing: Vec<f64> = grid.iter().map(|n| (*n as f64).sqrt()).collect();
        assert_eq!(varsup_verdict(&grid, &growing).0, LimitVerdict::Fails);
        let flat = vec![2.0; 14];
        assert_eq!(varsup_verdict(&grid, &flat).0, LimitVerdict::Holds);
        let logarithmic: Vec<f64> = grid.iter().map(|n| 1.0 + (*n as f64).ln()).collect();
        assert_ne!(varsup_verdict(&grid, &logarithmic).0, LimitVerdict::Holds);
    }

    #[test]
    fn neglipf_detects_linear_bridge_growth() {
        let grid: Vec<usize> = (0..14).map(|j| 1 << j).collect();
        let constant = vec![0.5; 14];
        assert_eq!(
            neglipf_verdict(&grid, &constant, 1.0).0,
            LimitVerdict::Fails
        );
        let decaying: Vec<f64> = grid.iter().map(|n| 2.0 / *n as f64).collect();
        assert_eq!(
            neglipf_verdict(&grid, &decaying, 1.0).0,
            LimitVerdict::Holds
        );
    }
}
