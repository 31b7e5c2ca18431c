//! Monte Carlo checks of the distributional limit statements.

mod ks;
mod sampler;

pub use ks::{ks_distance, ks_tol, KsOutcome, DEGENERATE_EPS, DEGENERATE_SIGMA_SQ};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::ChainSpec;
use crate::error::{LabError, Result};
use crate::martingale::martingale_variance;
use crate::projective::{bridge_sum_expectation, BridgeExpectation};
use sampler::{replica_rng, Purpose, RowSampler};

pub const MIN_REPLICAS: usize = 100;
pub const DEFAULT_KS_BIAS: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    State(usize),
    AllStates,
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub replicas: usize,
    pub seed: u64,
    pub start: Start,
    /// Simulate `M_u(m)/√u` with `u = ⌊n/m⌋` instead of `S_n/√n`.
    pub block_m: Option<usize>,
    /// Also record `(S_n − E(S_n|ξ_0,ξ_n))/√n`.
    pub centered: bool,
    /// Additive allowance in the KS tolerance.
    pub ks_bias: f64,
    /// Thread count; 0 lets rayon decide. Never affects results.
    pub workers: usize,
}

impl SimConfig {
    pub fn new(n: usize, replicas: usize, seed: u64) -> Self {
        SimConfig {
            n,
            replicas,
            seed,
            start: Start::AllStates,
            block_m: None,
            centered: false,
            ks_bias: DEFAULT_KS_BIAS,
            workers: 0,
        }
    }

    fn validate(&self, spec: &ChainSpec) -> Result<()> {
        if self.n == 0 {
            return Err(LabError::InvalidArgument("n must be ≥ 1".into()));
        }
        if self.replicas < MIN_REPLICAS {
            return Err(LabError::InvalidArgument(format!(
                "need at least {MIN_REPLICAS} replicas, got {}",
                self.replicas
            )));
        }
        if let Start::State(x) = self.start {
            if x >= spec.dim() {
                return Err(LabError::InvalidArgument(format!(
                    "start state {x} out of range"
                )));
            }
        }
        if let Some(m) = self.block_m {
            if m == 0 || m > self.n {
                return Err(LabError::InvalidArgument(format!(
                    "block length {m} must lie in 1..={}",
                    self.n
                )));
            }
        }
        if self.ks_bias.is_nan() || self.ks_bias < 0.0 {
            return Err(LabError::InvalidArgument("ks_bias must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Samples for one starting rule. `start = None` means a stationary draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub start: Option<usize>,
    pub n: usize,
    /// `S_n/√n`, or `M_u(m)/√u` in block mode.
    pub values: Vec<f64>,
    pub centered: Option<Vec<f64>>,
}

fn start_list(spec: &ChainSpec, start: Start) -> Vec<Option<usize>> {
    match start {
        Start::State(x) => vec![Some(x)],
        Start::AllStates => spec.support().map(Some).collect(),
        Start::Stationary => vec![None],
    }
}

fn with_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| LabError::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

struct Endpoint {
    sum: f64,
    first: usize,
    last: usize,
}

fn simulate_one(
    spec: &ChainSpec,
    sampler: &RowSampler,
    config: &SimConfig,
    start: Option<usize>,
    bridge: Option<&BridgeExpectation>,
) -> SampleSet {
    let f = spec.observable();
    let n = config.n;
    let tag = start.map_or(u64::MAX, |x| x as u64);
    let root = (n as f64).sqrt();
    let endpoints: Vec<Endpoint> = (0..config.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(config.seed, Purpose::Sums, tag, r);
            let first = start.unwrap_or_else(|| sampler.stationary(&mut rng));
            let mut state = first;
            let mut sum = 0.0;
            for _ in 0..n {
                state = sampler.step(state, &mut rng);
                sum += f[state];
            }
            Endpoint {
                sum,
                first,
                last: state,
            }
        })
        .collect();
    let values = endpoints.iter().map(|e| e.sum / root).collect();
    let centered = bridge.map(|b| {
        endpoints
            .iter()
            .map(|e| (e.sum - b.value(e.first, e.last)) / root)
            .collect()
    });
    SampleSet {
        start,
        n,
        values,
        centered,
    }
}

fn simulate_martingale(
    spec: &ChainSpec,
    sampler: &RowSampler,
    config: &SimConfig,
    start: Option<usize>,
    m: usize,
    bridge: &BridgeExpectation,
) -> SampleSet {
    let f = spec.observable();
    let u = config.n / m;
    let tag = start.map_or(u64::MAX, |x| x as u64);
    let (root_m, root_u) = ((m as f64).sqrt(), (u as f64).sqrt());
    let values = (0..config.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(config.seed, Purpose::Martingale, tag, r);
            let mut state = start.unwrap_or_else(|| sampler.stationary(&mut rng));
            let mut total = 0.0;
            for _ in 0..u {
                let block_start = state;
                let mut y = 0.0;
                for _ in 0..m {
                    state = sampler.step(state, &mut rng);
                    y += f[state];
                }
                total += (y - bridge.value(block_start, state)) / root_m;
            }
            total / root_u
        })
        .collect();
    SampleSet {
        start,
        n: u * m,
        values,
        centered: None,
    }
}

/// Draws `R` replicas per starting rule. Output is a pure function of
/// `(spec, config)` minus `workers`.
pub fn simulate_sums(spec: &ChainSpec, config: &SimConfig) -> Result<Vec<SampleSet>> {
    config.validate(spec)?;
    let sampler = RowSampler::new(spec);
    let starts = start_list(spec, config.start);
    match config.block_m {
        Some(m) => {
            let bridge = bridge_sum_expectation(spec, m)?;
            with_pool(config.workers, || {
                starts
                    .iter()
                    .map(|s| simulate_martingale(spec, &sampler, config, *s, m, &bridge))
                    .collect()
            })
        }
        None => {
            let bridge = if config.centered {
                Some(bridge_sum_expectation(spec, config.n)?)
            } else {
                None
            };
            with_pool(config.workers, || {
                starts
                    .iter()
                    .map(|s| simulate_one(spec, &sampler, config, *s, bridge.as_ref()))
                    .collect()
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub start: Option<usize>,
    pub replicas: usize,
    pub mean: f64,
    pub mean_se: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Sample mean of the squared values, i.e. of `S_n²/n`.
    pub second_moment: f64,
    pub second_moment_se: f64,
    pub ks: f64,
    pub degenerate_mismatch: bool,
    pub pass: bool,
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, r: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / r;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

pub fn summarize(
    start: Option<usize>,
    values: &[f64],
    sigma_sq: f64,
    tol: f64,
) -> Result<SampleSummary> {
    let r = values.len() as f64;
    let (mean, mean_se) = mean_and_se(values.iter().copied(), r);
    let (second_moment, second_moment_se) = mean_and_se(values.iter().map(|v| v * v), r);
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0);
    let ks = ks_distance(values, sigma_sq)?;
    Ok(SampleSummary {
        start,
        replicas: values.len(),
        mean,
        mean_se,
        variance,
        second_moment,
        second_moment_se,
        ks: ks.distance,
        degenerate_mismatch: ks.degenerate_mismatch,
        pass: ks.distance <= tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchedReport {
    pub n: usize,
    pub replicas: usize,
    pub seed: u64,
    pub sigma_sq: f64,
    pub ks_tol: f64,
    pub per_state: Vec<SampleSummary>,
    /// Start drawn from the stationary law.
    pub annealed: SampleSummary,
    /// `(S_n − E(S_n|ξ_0,ξ_n))/√n` per start state.
    pub centered: Vec<SampleSummary>,
    pub quenched_pass: bool,
    pub annealed_pass: bool,
    pub centered_pass: bool,
}

/// Per-start-state KS of `S_n/√n` and of the bridge-centered sums against
/// `N(0, σ²)`, plus the annealed row.
pub fn quenched_clt_check(
    spec: &ChainSpec,
    config: &SimConfig,
    sigma_sq: f64,
) -> Result<QuenchedReport> {
    quenched_clt_check_with_samples(spec, config, sigma_sq).map(|(report, _)| report)
}

/// As [`quenched_clt_check`], also returning the per-state sample sets
/// (with centered values) followed by the stationary-start set.
pub fn quenched_clt_check_with_samples(
    spec: &ChainSpec,
    config: &SimConfig,
    sigma_sq: f64,
) -> Result<(QuenchedReport, Vec<SampleSet>)> {
    let tol = ks_tol(config.replicas, config.ks_bias);
    let mut quenched_cfg = config.clone();
    quenched_cfg.block_m = None;
    quenched_cfg.centered = true;
    if quenched_cfg.start == Start::Stationary {
        quenched_cfg.start = Start::AllStates;
    }
    let sets = simulate_sums(spec, &quenched_cfg)?;
    let mut per_state = Vec::with_capacity(sets.len());
    let mut centered = Vec::with_capacity(sets.len());
    for set in &sets {
        per_state.push(summarize(set.start, &set.values, sigma_sq, tol)?);
        let c = set.centered.as_deref().expect("centered requested");
        centered.push(summarize(set.start, c, sigma_sq, tol)?);
    }

    let mut annealed_cfg = quenched_cfg.clone();
    annealed_cfg.start = Start::Stationary;
    annealed_cfg.centered = false;
    let annealed_set = simulate_sums(spec, &annealed_cfg)?.remove(0);
    let annealed = summarize(None, &annealed_set.values, sigma_sq, tol)?;

    let report = QuenchedReport {
        n: config.n,
        replicas: config.replicas,
        seed: config.seed,
        sigma_sq,
        ks_tol: tol,
        quenched_pass: per_state.iter().all(|s| s.pass),
        annealed_pass: annealed.pass,
        centered_pass: centered.iter().all(|s| s.pass),
        per_state,
        annealed,
        centered,
    };
    let mut sets = sets;
    sets.push(annealed_set);
    Ok((report, sets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleCltReport {
    pub m: usize,
    pub u: usize,
    /// `E(D_0²)`, the target variance.
    pub block_variance: f64,
    pub ks_tol: f64,
    pub per_state: Vec<SampleSummary>,
    pub pass: bool,
}

/// KS of `M_u(m)/√u` against `N(0, E(D_0²))` per start state, `u = ⌊n/m⌋`.
pub fn martingale_clt_check(
    spec: &ChainSpec,
    m: usize,
    config: &SimConfig,
) -> Result<MartingaleCltReport> {
    let mut cfg = config.clone();
    cfg.block_m = Some(m);
    cfg.centered = false;
    let block_variance = martingale_variance(spec, m)?;
    let tol = ks_tol(cfg.replicas, cfg.ks_bias);
    let sets = simulate_sums(spec, &cfg)?;
    let per_state = sets
        .iter()
        .map(|s| summarize(s.start, &s.values, block_variance, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(MartingaleCltReport {
        m,
        u: cfg.n / m,
        block_variance,
        ks_tol: tol,
        pass: per_state.iter().all(|s| s.pass),
        per_state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiEntry {
    pub n: usize,
    pub level: f64,
    /// Estimate of `E^x[(S_n²/n) 1{S_n²/n > M}]`.
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiTable {
    pub start: usize,
    pub replicas: usize,
    pub entries: Vec<UiEntry>,
    /// Max over `n` of the entry at the largest level.
    pub worst_at_top_level: f64,
    pub worst_se: f64,
    pub pass: bool,
}

pub struct UiRequest<'a> {
    pub start: usize,
    pub n_grid: &'a [usize],
    pub levels: &'a [f64],
    pub replicas: usize,
    pub seed: u64,
    pub workers: usize,
}

/// Truncated second moments along nested horizons of one trajectory per
/// replica, so entries are nonincreasing in the level by construction.
pub fn uniform_integrability_diag(
    spec: &ChainSpec,
    req: &UiRequest,
    sigma_sq: f64,
) -> Result<UiTable> {
    if req.n_grid.is_empty() || req.levels.is_empty() {
        return Err(LabError::InvalidArgument("grids must be nonempty".into()));
    }
    if req.replicas < MIN_REPLICAS {
        return Err(LabError::InvalidArgument(format!(
            "need at least {MIN_REPLICAS} replicas"
        )));
    }
    if req.start >= spec.dim() {
        return Err(LabError::InvalidArgument(format!(
            "start state {} out of range",
            req.start
        )));
    }
    if req.n_grid.contains(&0) {
        return Err(LabError::InvalidArgument("horizons must be ≥ 1".into()));
    }
    let mut grid = req.n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let mut levels = req.levels.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let n_max = *grid.last().expect("nonempty");
    let f = spec.observable();
    let sampler = RowSampler::new(spec);

    let scaled: Vec<Vec<f64>> = with_pool(req.workers, || {
        (0..req.replicas as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = replica_rng(req.seed, Purpose::Integrability, req.start as u64, r);
                let mut state = req.start;
                let mut sum = 0.0;
                let mut out = Vec::with_capacity(grid.len());
                let mut next = 0;
                for step in 1..=n_max {
                    state = sampler.step(state, &mut rng);
                    sum += f[state];
                    if step == grid[next] {
                        out.push(sum * sum / step as f64);
                        next += 1;
                    }
                }
                out
            })
            .collect()
    })?;

    let r = req.replicas as f64;
    let mut entries = Vec::with_capacity(grid.len() * levels.len());
    for (i, &n) in grid.iter().enumerate() {
        for &level in &levels {
            let truncated = scaled
                .iter()
                .map(|row| if row[i] > level { row[i] } else { 0.0 });
            let (value, se) = mean_and_se(truncated, r);
            entries.push(UiEntry {
                n,
                level,
                value,
                se,
            });
        }
    }
    let top = *levels.last().expect("nonempty");
    let (worst_at_top_level, worst_se) = entries
        .iter()
        .filter(|e| e.level == top)
        .map(|e| (e.value, e.se))
        .fold(
            (f64::NEG_INFINITY, 0.0),
            |acc, x| if x.0 > acc.0 { x } else { acc },
        );
    Ok(UiTable {
        start: req.start,
        replicas: req.replicas,
        pass: worst_at_top_level <= 0.05 * sigma_sq + 2.0 * worst_se,
        entries,
        worst_at_top_level,
        worst_se,
    })
}
