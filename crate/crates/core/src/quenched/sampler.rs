//! Per-replica random streams and row sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::ChainSpec;

/// Stream purposes, so different experiments with one seed never share draws.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Purpose {
    Sums = 1,
    Martingale = 2,
    Integrability = 3,
}

/// Counter-based stream: the key encodes `(seed, purpose, start)`, the
/// ChaCha stream id is the replica index. Independent of scheduling.
pub(crate) fn replica_rng(seed: u64, purpose: Purpose, start: u64, replica: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&start.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replica);
    rng
}

/// Cumulative rows with the last positive entry pinned above 1, so rounding
/// in the row sums can never select a zero-probability state.
pub(crate) struct RowSampler {
    cumulative: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

fn cumulate(row: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = row
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = row.iter().rposition(|p| *p > 0.0) {
        for c in out[last..].iter_mut() {
            *c = f64::INFINITY;
        }
    }
    out
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .iter()
        .position(|c| u < *c)
        .unwrap_or(cumulative.len() - 1)
}

impl RowSampler {
    pub(crate) fn new(spec: &ChainSpec) -> Self {
        RowSampler {
            cumulative: (0..spec.dim())
                .map(|x| cumulate(spec.kernel().row(x)))
                .collect(),
            initial: cumulate(spec.stationary()),
        }
    }

    #[inline]
    pub(crate) fn step<R: Rng>(&self, from: usize, rng: &mut R) -> usize {
        pick(&self.cumulative[from], rng.random::<f64>())
    }

    pub(crate) fn stationary<R: Rng>(&self, rng: &mut R) -> usize {
        pick(&self.initial, rng.random::<f64>())
    }
}
