//! Finite-state stationary Markov chains: validation, stationary law,
//! structural ergodicity and kernel powers.
//!
//! A chain is a row-stochastic kernel `Q` on `d` labelled states together with
//! a centered observable `f` and the invariant law `π`. Every other module
//! consumes the validated [`ChainSpec`].

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::matrix::{dot, Matrix};

/// Tolerance on raw inputs (row sums, normalization).
pub const INPUT_TOL: f64 = 1e-12;
/// Tolerance on derived identities (invariance, centering, power rows).
pub const DERIVED_TOL: f64 = 1e-10;

/// On-disk chain description.
///
/// ```json
/// { "name": "lazy-flip-0.25", "states": ["s0", "s1"],
///   "kernel": [[0.75, 0.25], [0.25, 0.75]], "f": [1, -1],
///   "pi": [0.5, 0.5], "auto_center": false }
/// ```
///
/// `pi` and `auto_center` are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawChain {
    pub name: String,
    pub states: Vec<String>,
    pub kernel: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_center: Option<bool>,
}

impl RawChain {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::ChainLoadError(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::ChainLoadError(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// A validated chain. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSpec {
    name: String,
    states: Vec<String>,
    kernel: Matrix,
    observable: Vec<f64>,
    stationary: Vec<f64>,
}

impl ChainSpec {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn kernel(&self) -> &Matrix {
        &self.kernel
    }

    pub fn observable(&self) -> &[f64] {
        &self.observable
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// `E_π(f²)`.
    pub fn observable_second_moment(&self) -> f64 {
        self.stationary
            .iter()
            .zip(&self.observable)
            .map(|(p, f)| p * f * f)
            .sum()
    }

    /// States carrying positive stationary mass.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim()).filter(|&x| self.stationary[x] > 0.0)
    }

    pub fn to_raw(&self) -> RawChain {
        RawChain {
            name: self.name.clone(),
            states: self.states.clone(),
            kernel: self.kernel.rows(),
            f: self.observable.clone(),
            pi: Some(self.stationary.clone()),
            auto_center: None,
        }
    }
}

/// Validates a raw description, solving for `π` when it is not supplied.
pub fn validate_chain(raw: &RawChain) -> Result<ChainSpec> {
    let d = raw.kernel.len();
    if d == 0 {
        return Err(LabError::DimensionMismatch("kernel is empty".into()));
    }
    if let Some((i, row)) = raw.kernel.iter().enumerate().find(|(_, r)| r.len() != d) {
        return Err(LabError::DimensionMismatch(format!(
            "kernel row {i} has {} entries, expected {d}",
            row.len()
        )));
    }
    if raw.f.len() != d {
        return Err(LabError::DimensionMismatch(format!(
            "observable has {} values for {d} states",
            raw.f.len()
        )));
    }
    if raw.states.len() != d {
        return Err(LabError::DimensionMismatch(format!(
            "{} state labels for a {d}x{d} kernel",
            raw.states.len()
        )));
    }
    if let Some(pi) = &raw.pi {
        if pi.len() != d {
            return Err(LabError::DimensionMismatch(format!(
                "stationary vector has {} entries for {d} states",
                pi.len()
            )));
        }
    }
    if raw.f.iter().any(|v| !v.is_finite()) {
        return Err(LabError::InvalidArgument(
            "observable has non-finite values".into(),
        ));
    }

    for (i, row) in raw.kernel.iter().enumerate() {
        for (j, &q) in row.iter().enumerate() {
            if !q.is_finite() {
                return Err(LabError::InvalidArgument(format!(
                    "kernel entry ({i}, {j}) is not finite"
                )));
            }
            if q < 0.0 {
                return Err(LabError::NegativeEntry {
                    row: i,
                    col: j,
                    value: q,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > INPUT_TOL {
            return Err(LabError::NonStochasticRow { row: i, sum });
        }
    }
    let kernel = Matrix::from_rows(&raw.kernel);

    let stationary = match &raw.pi {
        Some(pi) => {
            check_stationary(&kernel, pi)?;
            pi.clone()
        }
        None => stationary_law(&kernel)?,
    };

    let mean = dot(&stationary, &raw.f);
    let observable = if mean.abs() <= DERIVED_TOL {
        raw.f.clone()
    } else if raw.auto_center.unwrap_or(false) {
        raw.f.iter().map(|v| v - mean).collect()
    } else {
        return Err(LabError::UncenteredObservable { mean });
    };

    Ok(ChainSpec {
        name: raw.name.clone(),
        states: raw.states.clone(),
        kernel,
        observable,
        stationary,
    })
}

fn check_stationary(kernel: &Matrix, pi: &[f64]) -> Result<()> {
    if let Some(p) = pi.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(LabError::InvalidStationaryLaw(format!(
            "entry {p} is not a probability"
        )));
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > INPUT_TOL {
        return Err(LabError::InvalidStationaryLaw(format!(
            "entries sum to {total}"
        )));
    }
    let image = kernel.vec_mul(pi);
    let err = image
        .iter()
        .zip(pi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if err > DERIVED_TOL {
        return Err(LabError::InvalidStationaryLaw(format!(
            "|πQ − π| = {err:e}"
        )));
    }
    Ok(())
}

/// Solves `πQ = π, Σπ = 1` as the null space of `Qᵀ − I` with the
/// normalization row appended.
pub fn stationary_law(kernel: &Matrix) -> Result<Vec<f64>> {
    let d = kernel.dim();
    let generator = kernel.transpose().to_nalgebra() - DMatrix::<f64>::identity(d, d);
    let svd = generator.clone().svd(false, false);
    let scale = svd.singular_values.max().max(1.0);
    let nullity = svd
        .singular_values
        .iter()
        .filter(|s| **s <= 1e-9 * scale)
        .count();
    if nullity > 1 {
        return Err(LabError::NoStationaryLaw(format!(
            "invariant subspace has dimension {nullity} (several closed classes)"
        )));
    }

    let mut augmented = DMatrix::<f64>::zeros(d + 1, d);
    augmented.view_mut((0, 0), (d, d)).copy_from(&generator);
    augmented.row_mut(d).fill(1.0);
    let mut rhs = DVector::<f64>::zeros(d + 1);
    rhs[d] = 1.0;
    let solved = augmented
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| LabError::NoStationaryLaw(e.to_string()))?;

    let mut pi: Vec<f64> = solved
        .iter()
        .map(|p| if p.abs() < 1e-14 { 0.0 } else { *p })
        .collect();
    if pi.iter().any(|p| *p < -DERIVED_TOL) {
        return Err(LabError::NoStationaryLaw(
            "solution has negative mass".into(),
        ));
    }
    for p in pi.iter_mut() {
        *p = p.max(0.0);
    }
    // A few steps of the lazy kernel (I + Q)/2 remove solver round-off
    // without moving the fixed point, periodic chains included.
    for _ in 0..4 {
        let total: f64 = pi.iter().sum();
        let moved = kernel.vec_mul(&pi);
        for (p, q) in pi.iter_mut().zip(moved) {
            *p = 0.5 * (*p / total + q / total);
        }
    }
    let total: f64 = pi.iter().sum();
    for p in pi.iter_mut() {
        *p /= total;
    }
    check_stationary(kernel, &pi).map_err(|e| LabError::NoStationaryLaw(e.to_string()))?;
    Ok(pi)
}

/// Structural ergodicity flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErgodicityReport {
    pub irreducible: bool,
    pub period: usize,
    pub totally_ergodic: bool,
    pub reversible: bool,
}

pub fn ergodicity_report(spec: &ChainSpec) -> ErgodicityReport {
    let q = spec.kernel();
    let d = q.dim();
    let forward = |x: usize| (0..d).filter(move |&y| q[(x, y)] > 0.0);
    let backward = |y: usize| (0..d).filter(move |&x| q[(x, y)] > 0.0);

    // Reference state: a state of maximal stationary mass, hence recurrent.
    let reference = (0..d)
        .max_by(|&a, &b| spec.stationary()[a].total_cmp(&spec.stationary()[b]))
        .unwrap_or(0);
    let reach_fwd = reachable(d, reference, forward);
    let reach_bwd = reachable(d, reference, backward);
    let class: Vec<bool> = (0..d).map(|x| reach_fwd[x] && reach_bwd[x]).collect();
    let irreducible = class.iter().all(|&c| c);

    let period = class_period(q, reference, &class);
    let pi = spec.stationary();
    let reversible =
        (0..d).all(|x| (0..d).all(|y| (pi[x] * q[(x, y)] - pi[y] * q[(y, x)]).abs() <= INPUT_TOL));

    ErgodicityReport {
        irreducible,
        period,
        totally_ergodic: irreducible && period == 1,
        reversible,
    }
}

fn reachable<I>(d: usize, start: usize, next: impl Fn(usize) -> I) -> Vec<bool>
where
    I: Iterator<Item = usize>,
{
    let mut seen = vec![false; d];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(x) = queue.pop_front() {
        for y in next(x) {
            if !seen[y] {
                seen[y] = true;
                queue.push_back(y);
            }
        }
    }
    seen
}

/// Period of the communicating class of `reference`: gcd over in-class edges
/// `u → v` of `level(u) + 1 − level(v)`, with BFS levels from `reference`.
fn class_period(q: &Matrix, reference: usize, class: &[bool]) -> usize {
    let d = q.dim();
    let mut level: Vec<Option<usize>> = vec![None; d];
    level[reference] = Some(0);
    let mut queue = VecDeque::from([reference]);
    while let Some(x) = queue.pop_front() {
        for y in 0..d {
            if class[y] && q[(x, y)] > 0.0 && level[y].is_none() {
                level[y] = Some(level[x].unwrap() + 1);
                queue.push_back(y);
            }
        }
    }
    let mut g = 0usize;
    for u in (0..d).filter(|&u| class[u]) {
        for v in (0..d).filter(|&v| class[v] && q[(u, v)] > 0.0) {
            let (lu, lv) = (level[u].unwrap() as i64, level[v].unwrap() as i64);
            g = gcd(g, (lu + 1 - lv).unsigned_abs() as usize);
        }
    }
    g.max(1)
}

pub(crate) fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `Q^n` for `n ≥ 1`, by repeated squaring.
pub fn kernel_power(spec: &ChainSpec, n: u64) -> Result<Matrix> {
    if n == 0 {
        return Err(LabError::InvalidArgument("kernel power needs n ≥ 1".into()));
    }
    Ok(spec.kernel().pow(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(kernel: Vec<Vec<f64>>, f: Vec<f64>) -> RawChain {
        RawChain {
            name: "t".into(),
            states: (0..kernel.len()).map(|i| format!("s{i}")).collect(),
            kernel,
            f,
            pi: None,
            auto_center: None,
        }
    }

    #[test]
    fn validates_symmetric_chains() {
        let spec =
            validate_chain(&raw(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![1.0, -1.0])).unwrap();
        assert!(spec.stationary().iter().all(|p| (p - 0.5).abs() < 1e-14));
        let spec = validate_chain(&raw(
            vec![vec![0.75, 0.25], vec![0.25, 0.75]],
            vec![1.0, -1.0],
        ))
        .unwrap();
        assert!((spec.stationary()[0] - 0.5).abs() < 1e-14);
        assert!((spec.stationary()[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_rows() {
        let err = validate_chain(&raw(
            vec![vec![0.9, 0.2], vec![0.25, 0.75]],
            vec![1.0, -1.0],
        ))
        .unwrap_err();
        assert!(matches!(err, LabError::NonStochasticRow { row: 0, .. }));
        let err = validate_chain(&raw(vec![vec![1.1, -0.1], vec![0.5, 0.5]], vec![1.0, -1.0]))
            .unwrap_err();
        assert!(matches!(
            err,
            LabError::NegativeEntry { row: 0, col: 1, .. }
        ));
        let err = validate_chain(&raw(vec![vec![1.0]], vec![1.0, -1.0])).unwrap_err();
        assert!(matches!(err, LabError::DimensionMismatch(_)));
    }

    #[test]
    fn centering_policy() {
        let mut r = raw(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![2.0, 0.0]);
        assert!(matches!(
            validate_chain(&r).unwrap_err(),
            LabError::UncenteredObservable { .. }
        ));
        r.auto_center = Some(true);
        let spec = validate_chain(&r).unwrap();
        assert!((spec.observable()[0] - 1.0).abs() < 1e-14);
        assert!((spec.observable()[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn supplied_stationary_is_checked() {
        let mut r = raw(vec![vec![0.8, 0.2], vec![0.3, 0.7]], vec![0.4, -0.6]);
        r.pi = Some(vec![0.5, 0.5]);
        assert!(matches!(
            validate_chain(&r).unwrap_err(),
            LabError::InvalidStationaryLaw(_)
        ));
        r.pi = Some(vec![0.6, 0.4]);
        assert!(validate_chain(&r).is_ok());
    }

    #[test]
    fn stationary_examples() {
        let doubly = Matrix::from_rows(&[
            vec![0.2, 0.5, 0.3],
            vec![0.5, 0.1, 0.4],
            vec![0.3, 0.4, 0.3],
        ]);
        for p in stationary_law(&doubly).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-14);
        }
        let (p, q) = (0.2, 0.3);
        let two = Matrix::from_rows(&[vec![1.0 - p, p], vec![q, 1.0 - q]]);
        let pi = stationary_law(&two).unwrap();
        assert!((pi[0] - 0.6).abs() < 1e-14 && (pi[1] - 0.4).abs() < 1e-14);
        assert!(matches!(
            stationary_law(&Matrix::identity(3)).unwrap_err(),
            LabError::NoStationaryLaw(_)
        ));
    }

    #[test]
    fn transient_states_get_zero_mass() {
        let q = Matrix::from_rows(&[
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.5, 0.5],
            vec![0.0, 0.5, 0.5],
        ]);
        let pi = stationary_law(&q).unwrap();
        assert_eq!(pi[0], 0.0);
        assert!((pi[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ergodicity_examples() {
        let flip =
            validate_chain(&raw(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![1.0, -1.0])).unwrap();
        let rep = ergodicity_report(&flip);
        assert!(rep.irreducible);
        assert_eq!(rep.period, 2);
        assert!(!rep.totally_ergodic);

        let lazy = validate_chain(&raw(
            vec![vec![0.75, 0.25], vec![0.25, 0.75]],
            vec![1.0, -1.0],
        ))
        .unwrap();
        let rep = ergodicity_report(&lazy);
        assert_eq!(rep.period, 1);
        assert!(rep.totally_ergodic && rep.reversible);

        let mut blocks = raw(
            vec![
                vec![0.5, 0.5, 0.0, 0.0],
                vec![0.5, 0.5, 0.0, 0.0],
                vec![0.0, 0.0, 0.5, 0.5],
                vec![0.0, 0.0, 0.5, 0.5],
            ],
            vec![1.0, -1.0, 1.0, -1.0],
        );
        blocks.pi = Some(vec![0.25; 4]);
        let rep = ergodicity_report(&validate_chain(&blocks).unwrap());
        assert!(!rep.irreducible && !rep.totally_ergodic);
    }

    #[test]
    fn rotation_is_not_reversible() {
        let rot = validate_chain(&raw(
            vec![
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![1.0, 0.0, 0.0],
            ],
            vec![1.0, 0.0, -1.0],
        ))
        .unwrap();
        let rep = ergodicity_report(&rot);
        assert_eq!(rep.period, 3);
        assert!(!rep.reversible);
    }

    #[test]
    fn kernel_power_examples() {
        let lazy = validate_chain(&raw(
            vec![vec![0.75, 0.25], vec![0.25, 0.75]],
            vec![1.0, -1.0],
        ))
        .unwrap();
        assert_eq!(kernel_power(&lazy, 1).unwrap(), *lazy.kernel());
        let sq = kernel_power(&lazy, 2).unwrap();
        assert!(
            sq.max_abs_diff(&Matrix::from_rows(&[
                vec![0.625, 0.375],
                vec![0.375, 0.625]
            ])) < 1e-15
        );
        let flip =
            validate_chain(&raw(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![1.0, -1.0])).unwrap();
        assert_eq!(kernel_power(&flip, 2).unwrap(), Matrix::identity(2));
        assert!(kernel_power(&flip, 0).is_err());
    }
}
