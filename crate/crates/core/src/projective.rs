//! Exact conditional-expectation quantities of the partial sums
//! `S_n = f(ξ_1) + … + f(ξ_n)`.
//!
//! Everything is driven by one forward sweep over the horizon `n` that keeps
//!
//! * `Q^n`,
//! * `W_n(x, y) = E^x(S_n · 1{ξ_n = y}) = Σ_{k=1..n} (Q^k F Q^{n−k})(x, y)`
//!   with `F = diag(f)`, updated as `W_n = W_{n−1} Q + Q^n F`,
//! * the forward moments `m1_n(x) = E^x(S_n)` and `m2_n(x) = E^x(S_n²)`.
//!
//! The bridge expectation is then `b_n(x, y) = W_n(x, y) / Q^n(x, y)` on the
//! support of `Q^n`, and zero (with zero weight) elsewhere.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chain::{ergodicity_report, ChainSpec};
use crate::error::{LabError, Result};
use crate::matrix::{dot, Matrix};

/// Largest horizon accepted by the exact engine.
pub const MAX_HORIZON: usize = 1 << 16;

pub(crate) fn check_horizon(n: usize, what: &str) -> Result<()> {
    if n == 0 {
        return Err(LabError::InvalidArgument(format!("{what} must be ≥ 1")));
    }
    if n > MAX_HORIZON {
        return Err(LabError::GuardExceeded {
            grid: what.to_string(),
            detail: format!("{n} exceeds the exact-engine limit {MAX_HORIZON}"),
        });
    }
    Ok(())
}

/// Forward sweep over horizons `0, 1, 2, …`.
#[derive(Debug, Clone)]
pub struct HorizonSweep<'a> {
    spec: &'a ChainSpec,
    n: usize,
    power: Matrix,
    numerator: Matrix,
    m1: Vec<f64>,
    m2: Vec<f64>,
}

impl<'a> HorizonSweep<'a> {
    pub fn new(spec: &'a ChainSpec) -> Self {
        let d = spec.dim();
        Self {
            spec,
            n: 0,
            power: Matrix::identity(d),
            numerator: Matrix::zeros(d),
            m1: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    pub fn horizon(&self) -> usize {
        self.n
    }

    /// Moves from horizon `n` to `n + 1`.
    pub fn advance(&mut self) {
        let q = self.spec.kernel();
        let f = self.spec.observable();
        let d = self.spec.dim();

        let mut m1 = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        for x in 0..d {
            let row = q.row(x);
            let (mut a, mut b) = (0.0, 0.0);
            for y in 0..d {
                if row[y] == 0.0 {
                    continue;
                }
                a += row[y] * (f[y] + self.m1[y]);
                b += row[y] * (f[y] * f[y] + 2.0 * f[y] * self.m1[y] + self.m2[y]);
            }
            m1[x] = a;
            m2[x] = b;
        }
        self.m1 = m1;
        self.m2 = m2;

        self.power = self.power.mul(q);
        let mut numerator = self.numerator.mul(q);
        numerator.add_assign(&self.power.scale_columns(f));
        self.numerator = numerator;
        self.n += 1;
    }

    pub fn advance_to(&mut self, n: usize) {
        while self.n < n {
            self.advance();
        }
    }

    pub fn power(&self) -> &Matrix {
        &self.power
    }

    /// `W_n(x, y) = E^x(S_n 1{ξ_n = y})`.
    pub fn bridge_numerator(&self) -> &Matrix {
        &self.numerator
    }

    pub fn forward_mean(&self) -> &[f64] {
        &self.m1
    }

    pub fn forward_second_moment(&self) -> &[f64] {
        &self.m2
    }

    pub fn bridge(&self) -> BridgeExpectation {
        let d = self.spec.dim();
        let mut b = Matrix::zeros(d);
        let mut support = vec![false; d * d];
        for x in 0..d {
            for y in 0..d {
                let p = self.power[(x, y)];
                if p > 0.0 {
                    support[x * d + y] = true;
                    b[(x, y)] = self.numerator[(x, y)] / p;
                }
            }
        }
        BridgeExpectation {
            n: self.n,
            b,
            support,
        }
    }

    pub fn annealed_second_moment(&self) -> f64 {
        dot(self.spec.stationary(), &self.m2)
    }

    /// `Σ_{x,y} π(x) Q^n(x,y) b_n(x,y)² = Σ π(x) W_n(x,y)² / Q^n(x,y)`.
    pub fn bridge_norm_sq(&self) -> f64 {
        weighted_ratio_norm(self.spec.stationary(), &self.numerator, &self.power)
    }

    pub fn past_norm_sq(&self) -> f64 {
        self.spec
            .stationary()
            .iter()
            .zip(&self.m1)
            .map(|(p, m)| p * m * m)
            .sum()
    }

    pub fn snapshot(&self) -> HorizonSnapshot {
        HorizonSnapshot {
            n: self.n,
            annealed_second_moment: self.annealed_second_moment(),
            bridge_norm_sq: self.bridge_norm_sq(),
            past_norm_sq: self.past_norm_sq(),
            forward_mean: self.m1.clone(),
            forward_second_moment: self.m2.clone(),
        }
    }
}

/// `Σ_{x,y: den>0} π(x) num(x,y)² / den(x,y)`.
fn weighted_ratio_norm(pi: &[f64], num: &Matrix, den: &Matrix) -> f64 {
    let d = num.dim();
    let mut total = 0.0;
    for x in 0..d {
        if pi[x] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for y in 0..d {
            let p = den[(x, y)];
            if p > 0.0 {
                row += num[(x, y)] * num[(x, y)] / p;
            }
        }
        total += pi[x] * row;
    }
    total
}

/// All projective quantities at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSnapshot {
    pub n: usize,
    pub annealed_second_moment: f64,
    pub bridge_norm_sq: f64,
    pub past_norm_sq: f64,
    pub forward_mean: Vec<f64>,
    pub forward_second_moment: Vec<f64>,
}

/// Snapshots at each horizon of an increasing `grid`, from a single sweep.
pub fn horizon_profile(spec: &ChainSpec, grid: &[usize]) -> Result<Vec<HorizonSnapshot>> {
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LabError::InvalidArgument(
            "horizon grid must be strictly increasing".into(),
        ));
    }
    for &n in grid {
        check_horizon(n, "horizon")?;
    }
    let mut sweep = HorizonSweep::new(spec);
    Ok(grid
        .iter()
        .map(|&n| {
            sweep.advance_to(n);
            sweep.snapshot()
        })
        .collect())
}

/// `1, 2, 4, …` up to and including `n_max` when it is a power of two.
pub fn dyadic_grid(n_max: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |n| n.checked_mul(2))
        .take_while(|&n| n <= n_max)
        .collect()
}

fn sweep_to(spec: &ChainSpec, n: usize) -> Result<HorizonSweep<'_>> {
    check_horizon(n, "n")?;
    let mut sweep = HorizonSweep::new(spec);
    sweep.advance_to(n);
    Ok(sweep)
}

/// Forward moments `E^x(S_n)` and `E^x(S_n²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardMoments {
    pub n: usize,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
}

/// `E^x(S_n) = Σ_{k=1..n} (Q^k f)(x)`, iterating `v ← Q(f + v)`.
pub fn forward_mean(spec: &ChainSpec, n: usize) -> Result<Vec<f64>> {
    check_horizon(n, "n")?;
    let q = spec.kernel();
    let f = spec.observable();
    let mut v = vec![0.0; spec.dim()];
    for _ in 0..n {
        let shifted: Vec<f64> = f.iter().zip(&v).map(|(a, b)| a + b).collect();
        v = q.mul_vec(&shifted);
    }
    Ok(v)
}

pub fn forward_second_moment(spec: &ChainSpec, n: usize) -> Result<ForwardMoments> {
    let sweep = sweep_to(spec, n)?;
    Ok(ForwardMoments {
        n,
        m1: sweep.forward_mean().to_vec(),
        m2: sweep.forward_second_moment().to_vec(),
    })
}

/// `E(S_n²)` under the stationary law.
pub fn annealed_second_moment(spec: &ChainSpec, n: usize) -> Result<f64> {
    Ok(sweep_to(spec, n)?.annealed_second_moment())
}

/// Independent route to `E(S_n²)`:
/// `n E(f²) + 2 Σ_{k=1..n−1} (n−k) E_π(f · Q^k f)`.
pub fn annealed_second_moment_by_covariances(spec: &ChainSpec, n: usize) -> Result<f64> {
    check_horizon(n, "n")?;
    let pi = spec.stationary();
    let f = spec.observable();
    let weighted: Vec<f64> = pi.iter().zip(f).map(|(p, v)| p * v).collect();
    let mut total = n as f64 * spec.observable_second_moment();
    let mut h = f.to_vec();
    for k in 1..n {
        h = spec.kernel().mul_vec(&h);
        total += 2.0 * (n - k) as f64 * dot(&weighted, &h);
    }
    Ok(total)
}

/// The matrix `b_n(x, y) = E(S_n | ξ_0 = x, ξ_n = y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeExpectation {
    pub n: usize,
    pub b: Matrix,
    /// Row-major `d × d` mask of `Q^n(x, y) > 0`.
    pub support: Vec<bool>,
}

impl BridgeExpectation {
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.b[(x, y)]
    }

    pub fn in_support(&self, x: usize, y: usize) -> bool {
        self.support[x * self.b.dim() + y]
    }
}

pub fn bridge_sum_expectation(spec: &ChainSpec, n: usize) -> Result<BridgeExpectation> {
    Ok(sweep_to(spec, n)?.bridge())
}

/// `||E(S_n | ξ_0, ξ_n)||²`.
pub fn bridge_norm_sq(spec: &ChainSpec, n: usize) -> Result<f64> {
    Ok(sweep_to(spec, n)?.bridge_norm_sq())
}

/// `||E(S_n | ξ_0)||²`.
pub fn past_norm_sq(spec: &ChainSpec, n: usize) -> Result<f64> {
    Ok(sweep_to(spec, n)?.past_norm_sq())
}

/// `||E(X_0 | ξ_{−k}, ξ_k)||²`, with cell values
/// `(Q^k F Q^k)(x, y) / Q^{2k}(x, y)` weighted by `π(x) Q^{2k}(x, y)`.
pub fn two_sided_single_norm_sq(spec: &ChainSpec, k: usize) -> Result<f64> {
    check_horizon(k, "k")?;
    let power = spec.kernel().pow(k as u64);
    Ok(two_sided_from_power(spec, &power))
}

fn two_sided_from_power(spec: &ChainSpec, power: &Matrix) -> f64 {
    let through = power.scale_columns(spec.observable()).mul(power);
    let double = power.mul(power);
    weighted_ratio_norm(spec.stationary(), &through, &double)
}

/// `two_sided_single_norm_sq` for every `k = 1..=k_max`.
pub fn two_sided_profile(spec: &ChainSpec, k_max: usize) -> Result<Vec<f64>> {
    check_horizon(k_max, "k_max")?;
    let mut power = Matrix::identity(spec.dim());
    let mut out = Vec::with_capacity(k_max);
    for _ in 0..k_max {
        power = power.mul(spec.kernel());
        out.push(two_sided_from_power(spec, &power));
    }
    Ok(out)
}

/// How `SigmaSquared::value` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMethod {
    /// Two-level Richardson extrapolation on the last three dyadic points.
    Richardson,
    /// Chain not totally ergodic: the Poisson-equation value is used.
    Oracle,
    /// Chain not totally ergodic and no oracle: least-squares fit of `a + b/n`
    /// over the last three points.
    CesaroTrend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSquared {
    pub value: f64,
    /// Value before clamping at zero.
    pub raw_value: f64,
    pub method: SigmaMethod,
    /// `(n, (E(S_n²) − ||E(S_n|ξ_0,ξ_n)||²) / n)` on the dyadic grid.
    pub per_n: Vec<(usize, f64)>,
    pub oracle_value: Option<f64>,
    /// Set when the Poisson equation could not be solved.
    pub oracle_unavailable: Option<String>,
}

/// Asymptotic variance from the limit of
/// `(E(S_n²) − ||E(S_n|ξ_0,ξ_n)||²) / n` along `n = 2^j ≤ n_max`.
pub fn sigma_sq(spec: &ChainSpec, n_max: usize) -> Result<SigmaSquared> {
    check_horizon(n_max, "n_max")?;
    let grid = dyadic_grid(n_max);
    if grid.len() < 3 {
        return Err(LabError::InvalidArgument("sigma_sq needs n_max ≥ 4".into()));
    }
    let per_n: Vec<(usize, f64)> = horizon_profile(spec, &grid)?
        .into_iter()
        .map(|s| {
            (
                s.n,
                (s.annealed_second_moment - s.bridge_norm_sq) / s.n as f64,
            )
        })
        .collect();

    let (oracle_value, oracle_unavailable) = match poisson_variance(spec) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let last = &per_n[per_n.len() - 3..];
    let tail: Vec<f64> = last.iter().map(|p| p.1).collect();
    let (raw_value, method) = if ergodicity_report(spec).totally_ergodic {
        (
            richardson(tail[0], tail[1], tail[2]),
            SigmaMethod::Richardson,
        )
    } else if let Some(v) = oracle_value {
        (v, SigmaMethod::Oracle)
    } else {
        (inverse_n_intercept(last), SigmaMethod::CesaroTrend)
    };

    Ok(SigmaSquared {
        value: raw_value.max(0.0),
        raw_value,
        method,
        per_n,
        oracle_value,
        oracle_unavailable,
    })
}

fn inverse_n_intercept(points: &[(usize, f64)]) -> f64 {
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| 1.0 / p.0 as f64).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(points)
        .map(|(x, p)| (x - mx) * (p.1 - my))
        .sum();
    my - sxy / sxx * mx
}

/// Extrapolates `a(n) = L + c₁/n + c₂/n²` from `a(n/4), a(n/2), a(n)`.
fn richardson(quarter: f64, half: f64, full: f64) -> f64 {
    let first = 2.0 * half - quarter;
    let second = 2.0 * full - half;
    (4.0 * second - first) / 3.0
}

/// Poisson-equation oracle: solves `g − Qg = f` with `E_π g = 0` through the
/// fundamental matrix `I − Q + 1πᵀ`, then `σ² = E_π(g²) − E_π((Qg)²)`.
pub fn poisson_variance(spec: &ChainSpec) -> Result<f64> {
    let g = poisson_solution(spec)?;
    let qg = spec.kernel().mul_vec(&g);
    let pi = spec.stationary();
    let e_g2: f64 = pi.iter().zip(&g).map(|(p, v)| p * v * v).sum();
    let e_qg2: f64 = pi.iter().zip(&qg).map(|(p, v)| p * v * v).sum();
    Ok(e_g2 - e_qg2)
}

pub fn poisson_solution(spec: &ChainSpec) -> Result<Vec<f64>> {
    let d = spec.dim();
    let pi = spec.stationary();
    let mut a = DMatrix::<f64>::identity(d, d) - spec.kernel().to_nalgebra();
    for i in 0..d {
        for j in 0..d {
            a[(i, j)] += pi[j];
        }
    }
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-12 * smax.max(1.0) {
        return Err(LabError::NoStationaryLaw(
            "OracleUnavailable: I − Q is singular on the mean-zero subspace".into(),
        ));
    }
    let rhs = nalgebra::DVector::from_column_slice(spec.observable());
    let g = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| LabError::NoStationaryLaw("OracleUnavailable: singular system".into()))?;
    Ok(g.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{validate_chain, RawChain};

    fn chain(kernel: Vec<Vec<f64>>, f: Vec<f64>) -> ChainSpec {
        validate_chain(&RawChain {
            name: "t".into(),
            states: (0..kernel.len()).map(|i| format!("s{i}")).collect(),
            kernel,
            f,
            pi: None,
            auto_center: None,
        })
        .unwrap()
    }

    fn lazy() -> ChainSpec {
        chain(vec![vec![0.75, 0.25], vec![0.25, 0.75]], vec![1.0, -1.0])
    }
    fn iid() -> ChainSpec {
        chain(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![1.0, -1.0])
    }
    fn flip() -> ChainSpec {
        chain(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![1.0, -1.0])
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn forward_mean_examples() {
        for n in [1, 5, 40] {
            assert!(forward_mean(&iid(), n)
                .unwrap()
                .iter()
                .all(|v| v.abs() < 1e-15));
        }
        let m = forward_mean(&lazy(), 1).unwrap();
        close(m[0], 0.5, 1e-15);
        close(m[1], -0.5, 1e-15);
        let m = forward_mean(&lazy(), 60).unwrap();
        close(m[0], 1.0, 1e-12);
        close(m[1], -1.0, 1e-12);
        assert!(forward_mean(&lazy(), 0).is_err());
    }

    #[test]
    fn forward_second_moment_examples() {
        let fm = forward_second_moment(&iid(), 7).unwrap();
        assert!(fm.m2.iter().all(|v| (v - 7.0).abs() < 1e-12));
        close(forward_second_moment(&lazy(), 2).unwrap().m2[0], 3.0, 1e-14);
        assert_eq!(
            forward_second_moment(&flip(), 2).unwrap().m2,
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn annealed_examples() {
        close(annealed_second_moment(&iid(), 9).unwrap(), 9.0, 1e-12);
        close(annealed_second_moment(&lazy(), 2).unwrap(), 3.0, 1e-14);
        assert_eq!(annealed_second_moment(&flip(), 6).unwrap(), 0.0);
        for n in [1, 2, 3, 17, 200] {
            let a = annealed_second_moment(&lazy(), n).unwrap();
            let b = annealed_second_moment_by_covariances(&lazy(), n).unwrap();
            close(a, b, 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn bridge_examples() {
        let b = bridge_sum_expectation(&iid(), 5).unwrap();
        for x in 0..2 {
            close(b.value(x, 0), 1.0, 1e-14);
            close(b.value(x, 1), -1.0, 1e-14);
        }
        let b = bridge_sum_expectation(&lazy(), 2).unwrap();
        close(b.value(0, 0), 1.8, 1e-14);
        close(b.value(0, 1), -1.0, 1e-14);
        let b = bridge_sum_expectation(&flip(), 2).unwrap();
        assert!(b.in_support(0, 0) && !b.in_support(0, 1));
        assert_eq!(b.value(0, 0), 0.0);
        assert_eq!(b.value(0, 1), 0.0);
    }

    #[test]
    fn norm_examples() {
        for spec in [iid(), lazy(), flip()] {
            close(
                bridge_norm_sq(&spec, 1).unwrap(),
                spec.observable_second_moment(),
                1e-14,
            );
        }
        close(bridge_norm_sq(&lazy(), 2).unwrap(), 2.4, 1e-14);
        close(bridge_norm_sq(&iid(), 11).unwrap(), 1.0, 1e-12);
        close(past_norm_sq(&iid(), 3).unwrap(), 0.0, 1e-30);
        close(past_norm_sq(&lazy(), 1).unwrap(), 0.25, 1e-15);
        assert_eq!(past_norm_sq(&flip(), 2).unwrap(), 0.0);
    }

    #[test]
    fn two_sided_examples() {
        close(two_sided_single_norm_sq(&iid(), 3).unwrap(), 0.0, 1e-28);
        close(two_sided_single_norm_sq(&lazy(), 1).unwrap(), 0.4, 1e-14);
        close(two_sided_single_norm_sq(&flip(), 1).unwrap(), 1.0, 1e-15);
        let profile = two_sided_profile(&lazy(), 6).unwrap();
        for (k, v) in profile.iter().enumerate() {
            close(*v, two_sided_single_norm_sq(&lazy(), k + 1).unwrap(), 1e-15);
        }
    }

    #[test]
    fn sigma_examples() {
        let s = sigma_sq(&iid(), 1 << 10).unwrap();
        close(s.value, 1.0, 1e-9);
        let s = sigma_sq(&lazy(), 1 << 12).unwrap();
        close(s.value, 3.0, 1e-6);
        close(s.oracle_value.unwrap(), 3.0, 1e-12);
        assert_eq!(s.method, SigmaMethod::Richardson);
        let s = sigma_sq(&flip(), 1 << 8).unwrap();
        assert_eq!(s.value, 0.0);
        assert_eq!(s.method, SigmaMethod::Oracle);
        assert!(s.per_n.iter().skip(1).all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn oracle_unavailable_for_several_closed_classes() {
        let spec = validate_chain(&RawChain {
            name: "blocks".into(),
            states: (0..4).map(|i| format!("s{i}")).collect(),
            kernel: vec![
                vec![0.5, 0.5, 0.0, 0.0],
                vec![0.5, 0.5, 0.0, 0.0],
                vec![0.0, 0.0, 0.5, 0.5],
                vec![0.0, 0.0, 0.5, 0.5],
            ],
            f: vec![1.0, -1.0, 1.0, -1.0],
            pi: Some(vec![0.25; 4]),
            auto_center: None,
        })
        .unwrap();
        let s = sigma_sq(&spec, 64).unwrap();
        assert!(s.oracle_value.is_none() && s.oracle_unavailable.is_some());
        assert_eq!(s.method, SigmaMethod::CesaroTrend);
        close(s.value, 1.0, 1e-12);
    }

    #[test]
    fn guard_rejects_huge_horizons() {
        assert!(matches!(
            bridge_norm_sq(&lazy(), MAX_HORIZON + 1).unwrap_err(),
            LabError::GuardExceeded { .. }
        ));
    }

    #[test]
    fn dyadic_grid_shape() {
        assert_eq!(dyadic_grid(8), vec![1, 2, 4, 8]);
        assert_eq!(dyadic_grid(12), vec![1, 2, 4, 8]);
    }
}
