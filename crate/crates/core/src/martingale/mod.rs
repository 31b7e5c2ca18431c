//! Block martingale decomposition conditioned on past and future.
//!
//! With blocks of size `m`, `Y_k = X_{km+1} + … + X_{(k+1)m}`,
//! `Z_k = b_m(ξ_{km}, ξ_{(k+1)m}) / √m` and `D_k = Y_k / √m − Z_k`, so that
//! `S_{um} / √m = M_u + R_u` with `M_u = Σ D_k` and `R_u = Σ Z_k`. The
//! `D_k` are martingale differences for the natural filtration sampled at
//! multiples of `m`, and `M_u`, `R_u` are orthogonal given `(ξ_0, ξ_{um})`.

pub mod bounds;
pub mod paths;

use serde::{Deserialize, Serialize};

use crate::chain::ChainSpec;
use crate::error::{LabError, Result};
use crate::projective::{bridge_sum_expectation, check_horizon, BridgeExpectation, HorizonSweep};

pub use bounds::{
    paired_block_chain, verify_dyadic_maximal_bound, verify_paired_maximal_bound, weak_l1_norm,
    DyadicBoundReport, PairedBoundReport, WeakNormValue,
};
pub use paths::{
    enumerate_paths, positive_path_count, visit_positive_paths, PathSet, WeightedPath, PATH_GUARD,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockScheme {
    pub m: usize,
    pub u: usize,
    pub n: usize,
}

impl BlockScheme {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(LabError::InvalidArgument("block size must be ≥ 1".into()));
        }
        Ok(Self { m, u: n / m, n })
    }
}

/// One path's decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub scheme: BlockScheme,
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub z: Vec<f64>,
    pub m_u: f64,
    pub r_u: f64,
    /// `S_{um}`.
    pub partial_sum: f64,
}

impl BlockDecomposition {
    /// `|S_{um} − √m (M_u + R_u)|`.
    pub fn identity_defect(&self) -> f64 {
        (self.partial_sum - (self.scheme.m as f64).sqrt() * (self.m_u + self.r_u)).abs()
    }
}

/// Holds `b_m` so that many paths can be decomposed against it.
#[derive(Debug, Clone)]
pub struct BlockDecomposer<'a> {
    spec: &'a ChainSpec,
    m: usize,
    bridge: BridgeExpectation,
}

impl<'a> BlockDecomposer<'a> {
    pub fn new(spec: &'a ChainSpec, m: usize) -> Result<Self> {
        check_horizon(m, "m")?;
        Ok(Self {
            spec,
            m,
            bridge: bridge_sum_expectation(spec, m)?,
        })
    }

    pub fn bridge(&self) -> &BridgeExpectation {
        &self.bridge
    }

    /// Decomposes `path = (ξ_0, …, ξ_n)` into `u = ⌊n/m⌋` blocks.
    pub fn decompose(&self, path: &[usize]) -> BlockDecomposition {
        let n = path.len().saturating_sub(1);
        let scheme = BlockScheme {
            m: self.m,
            u: n / self.m,
            n,
        };
        let f = self.spec.observable();
        let root = (self.m as f64).sqrt();
        let mut out = BlockDecomposition {
            scheme,
            y: Vec::with_capacity(scheme.u),
            d: Vec::with_capacity(scheme.u),
            z: Vec::with_capacity(scheme.u),
            m_u: 0.0,
            r_u: 0.0,
            partial_sum: 0.0,
        };
        for k in 0..scheme.u {
            let (lo, hi) = (k * self.m, (k + 1) * self.m);
            let y: f64 = path[lo + 1..=hi].iter().map(|&s| f[s]).sum();
            let z = self.bridge.value(path[lo], path[hi]) / root;
            let d = y / root - z;
            out.y.push(y);
            out.z.push(z);
            out.d.push(d);
            out.m_u += d;
            out.r_u += z;
            out.partial_sum += y;
        }
        out
    }
}

pub fn block_decompose(spec: &ChainSpec, path: &[usize], m: usize) -> Result<BlockDecomposition> {
    Ok(BlockDecomposer::new(spec, m)?.decompose(path))
}

/// Length of the first common prefix of two equal-length paths.
fn common_prefix(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Max over positive-probability histories `(ξ_0, …, ξ_{km})` of
/// `|E(D_k | ξ_0, …, ξ_{km})|`, for `k < u`, by exhaustive enumeration.
pub fn verify_martingale_property(spec: &ChainSpec, m: usize, u: usize) -> Result<f64> {
    if u == 0 {
        return Err(LabError::InvalidArgument("u must be ≥ 1".into()));
    }
    let decomposer = BlockDecomposer::new(spec, m)?;
    let n = u * m;
    // Paths arrive in lexicographic order, so each history is a contiguous run.
    let mut groups = vec![(0.0f64, 0.0f64); u];
    let mut previous: Option<Vec<usize>> = None;
    let mut worst = 0.0f64;
    let flush = |group: &mut (f64, f64), worst: &mut f64| {
        if group.0 > 0.0 {
            *worst = worst.max((group.1 / group.0).abs());
        }
        *group = (0.0, 0.0);
    };
    visit_positive_paths(spec, n, |path, w| {
        if let Some(prev) = &previous {
            let shared = common_prefix(prev, path);
            for (k, group) in groups.iter_mut().enumerate() {
                if shared <= k * m {
                    flush(group, &mut worst);
                }
            }
        }
        let row = decomposer.decompose(path);
        for (group, d) in groups.iter_mut().zip(&row.d) {
            group.0 += w;
            group.1 += w * d;
        }
        previous = Some(path.to_vec());
    })?;
    for group in groups.iter_mut() {
        flush(group, &mut worst);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    pub scheme: BlockScheme,
    /// Per start state `x`: `|E^x(S_u(m)²) − E^x(M_u²) − E^x(R_u²)|`
    /// (zero for states without stationary mass).
    pub per_state_residual: Vec<f64>,
    pub max_residual: f64,
    /// Same identity given `(ξ_0, ξ_n)`, max over support cells.
    pub max_conditional_residual: f64,
    /// `E(M_u²) / u` under the stationary law.
    pub martingale_second_moment_per_block: f64,
    /// Max over enumerated paths of `|S_{um} − √m (M_u + R_u)|`.
    pub max_path_identity_defect: f64,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    w: f64,
    s2: f64,
    m2: f64,
    r2: f64,
}

impl Moments {
    fn add(&mut self, w: f64, s: f64, m: f64, r: f64) {
        self.w += w;
        self.s2 += w * s * s;
        self.m2 += w * m * m;
        self.r2 += w * r * r;
    }

    fn residual(&self) -> f64 {
        if self.w == 0.0 {
            return 0.0;
        }
        ((self.s2 - self.m2 - self.r2) / self.w).abs()
    }
}

/// Checks `E(S_u(m)²) = E(M_u²) + E(R_u²)` given `ξ_0` and given
/// `(ξ_0, ξ_{um})`, with `S_u(m) = S_{um}/√m`, by exhaustive enumeration.
pub fn verify_orthogonality_identity(
    spec: &ChainSpec,
    m: usize,
    u: usize,
) -> Result<OrthogonalityReport> {
    if u == 0 {
        return Err(LabError::InvalidArgument("u must be ≥ 1".into()));
    }
    let decomposer = BlockDecomposer::new(spec, m)?;
    let d = spec.dim();
    let n = u * m;
    let root = (m as f64).sqrt();
    let mut by_start = vec![Moments::default(); d];
    let mut by_ends = vec![Moments::default(); d * d];
    let mut annealed_m2 = 0.0;
    let mut defect = 0.0f64;
    visit_positive_paths(spec, n, |path, w| {
        let row = decomposer.decompose(path);
        let s = row.partial_sum / root;
        by_start[path[0]].add(w, s, row.m_u, row.r_u);
        by_ends[path[0] * d + path[n]].add(w, s, row.m_u, row.r_u);
        annealed_m2 += w * row.m_u * row.m_u;
        defect = defect.max(row.identity_defect());
    })?;
    let per_state_residual: Vec<f64> = by_start.iter().map(Moments::residual).collect();
    Ok(OrthogonalityReport {
        scheme: BlockScheme { m, u, n },
        max_residual: per_state_residual.iter().copied().fold(0.0, f64::max),
        per_state_residual,
        max_conditional_residual: by_ends.iter().map(Moments::residual).fold(0.0, f64::max),
        martingale_second_moment_per_block: annealed_m2 / u as f64,
        max_path_identity_defect: defect,
    })
}

/// `E(D_0²) = (E(S_m²) − ||E(S_m|ξ_0,ξ_m)||²) / m`, clamped at zero.
pub fn martingale_variance(spec: &ChainSpec, m: usize) -> Result<f64> {
    check_horizon(m, "m")?;
    let mut sweep = HorizonSweep::new(spec);
    sweep.advance_to(m);
    Ok(((sweep.annealed_second_moment() - sweep.bridge_norm_sq()) / m as f64).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualDecayRow {
    pub m: usize,
    pub u: usize,
    /// `(1/u) E^x(R_u(m)²)` per state.
    pub per_state: Vec<f64>,
    /// Max of `per_state` over states with stationary mass.
    pub value: f64,
}

/// `(1/u) max_x E^x(R_u(m)²)` for each block size.
///
/// `R_u(m)` is an additive functional of the skeleton chain
/// `ξ_0, ξ_m, ξ_{2m}, …` (kernel `Q^m`) with edge reward `b_m(x, y)/√m`, so
/// its conditional second moment is computed exactly by a forward recursion
/// for any `u`.
pub fn residual_decay(
    spec: &ChainSpec,
    m_grid: &[usize],
    u: usize,
) -> Result<Vec<ResidualDecayRow>> {
    if u == 0 {
        return Err(LabError::InvalidArgument("u must be ≥ 1".into()));
    }
    let d = spec.dim();
    m_grid
        .iter()
        .map(|&m| {
            check_horizon(m.saturating_mul(u), "u·m")?;
            let mut sweep = HorizonSweep::new(spec);
            sweep.advance_to(m);
            let skeleton = sweep.power().clone();
            let bridge = sweep.bridge();
            let root = (m as f64).sqrt();
            let mut r1 = vec![0.0; d];
            let mut r2 = vec![0.0; d];
            for _ in 0..u {
                let mut n1 = vec![0.0; d];
                let mut n2 = vec![0.0; d];
                for x in 0..d {
                    for y in 0..d {
                        let p = skeleton[(x, y)];
                        if p <= 0.0 {
                            continue;
                        }
                        let g = bridge.value(x, y) / root;
                        n1[x] += p * (g + r1[y]);
                        n2[x] += p * (g * g + 2.0 * g * r1[y] + r2[y]);
                    }
                }
                r1 = n1;
                r2 = n2;
            }
            let per_state: Vec<f64> = r2.iter().map(|v| v / u as f64).collect();
            let value = spec.support().map(|x| per_state[x]).fold(0.0, f64::max);
            Ok(ResidualDecayRow {
                m,
                u,
                per_state,
                value,
            })
        })
        .collect()
}
