//! Exhaustive weighted path enumeration, the exactness oracle for small
//! chains. Path `(ξ_0, …, ξ_n)` has weight `π(ξ_0) Π Q(ξ_i, ξ_{i+1})`.

use serde::Serialize;

use crate::chain::ChainSpec;
use crate::error::{LabError, Result};

/// Maximum number of paths enumerated in one call.
pub const PATH_GUARD: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedPath {
    pub states: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSet {
    pub n: usize,
    pub paths: Vec<WeightedPath>,
}

impl PathSet {
    pub fn total_weight(&self) -> f64 {
        self.paths.iter().map(|p| p.weight).sum()
    }

    pub fn positive(&self) -> impl Iterator<Item = &WeightedPath> {
        self.paths.iter().filter(|p| p.weight > 0.0)
    }
}

fn total_path_count(d: usize, n: usize) -> u128 {
    (d as u128).checked_pow(n as u32 + 1).unwrap_or(u128::MAX)
}

/// Every path of length `n`, zero-weight ones included, in lexicographic
/// order. Guarded by `d^{n+1} ≤ 10^7`.
pub fn enumerate_paths(spec: &ChainSpec, n: usize) -> Result<PathSet> {
    let d = spec.dim();
    let count = total_path_count(d, n);
    if count > PATH_GUARD {
        return Err(LabError::TooLarge {
            count,
            limit: PATH_GUARD,
        });
    }
    let q = spec.kernel();
    let pi = spec.stationary();
    let mut paths = Vec::with_capacity(count as usize);
    let mut states = vec![0usize; n + 1];
    for index in 0..count as usize {
        let mut rest = index;
        for slot in states.iter_mut().rev() {
            *slot = rest % d;
            rest /= d;
        }
        let weight = states
            .windows(2)
            .fold(pi[states[0]], |w, e| w * q[(e[0], e[1])]);
        paths.push(WeightedPath {
            states: states.clone(),
            weight,
        });
    }
    Ok(PathSet { n, paths })
}

/// Number of positive-weight paths of length `n`.
pub fn positive_path_count(spec: &ChainSpec, n: usize) -> u128 {
    let d = spec.dim();
    let q = spec.kernel();
    let mut counts: Vec<u128> = spec
        .stationary()
        .iter()
        .map(|p| u128::from(*p > 0.0))
        .collect();
    for _ in 0..n {
        let mut next = vec![0u128; d];
        for x in 0..d {
            if counts[x] == 0 {
                continue;
            }
            for y in 0..d {
                if q[(x, y)] > 0.0 {
                    next[y] = next[y].saturating_add(counts[x]);
                }
            }
        }
        counts = next;
    }
    counts.iter().fold(0u128, |a, b| a.saturating_add(*b))
}

/// Streams every positive-weight path of length `n` to `visit` in
/// lexicographic order without materializing the set. Guarded by the number
/// of positive-weight paths, which is what the traversal actually touches.
pub fn visit_positive_paths<F>(spec: &ChainSpec, n: usize, mut visit: F) -> Result<()>
where
    F: FnMut(&[usize], f64),
{
    let count = positive_path_count(spec, n);
    if count > PATH_GUARD {
        return Err(LabError::TooLarge {
            count,
            limit: PATH_GUARD,
        });
    }
    let mut states = vec![0usize; n + 1];
    for x in spec.support() {
        states[0] = x;
        descend(spec, &mut states, 1, spec.stationary()[x], &mut visit);
    }
    Ok(())
}

fn descend<F>(spec: &ChainSpec, states: &mut [usize], depth: usize, weight: f64, visit: &mut F)
where
    F: FnMut(&[usize], f64),
{
    if depth == states.len() {
        visit(states, weight);
        return;
    }
    let q = spec.kernel();
    let from = states[depth - 1];
    for y in 0..spec.dim() {
        let p = q[(from, y)];
        if p > 0.0 {
            states[depth] = y;
            descend(spec, states, depth + 1, weight * p, visit);
        }
    }
}
