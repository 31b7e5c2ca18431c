//! Built-in example chains. Names are stable.

use serde::Serialize;

use crate::chain::{validate_chain, ChainSpec, RawChain};
use crate::error::{LabError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub dim: usize,
    /// Which condition or limit statement the chain exercises.
    pub illustrates: &'static str,
}

const ENTRIES: &[CatalogEntry] = &[
    CatalogEntry {
        name: "iid-pm1",
        dim: 2,
        illustrates: "independent ±1 signs: every projective series vanishes, σ² = 1",
    },
    CatalogEntry {
        name: "lazy-flip-0.1",
        dim: 2,
        illustrates:
            "strongly persistent two-state chain, σ² = 9; slow but geometric decorrelation",
    },
    CatalogEntry {
        name: "lazy-flip-0.25",
        dim: 2,
        illustrates: "reference chain with σ² = (1+ρ)/(1−ρ) = 3; all criteria converge",
    },
    CatalogEntry {
        name: "lazy-flip-0.4",
        dim: 2,
        illustrates: "weakly persistent moves, σ² = 3/2",
    },
    CatalogEntry {
        name: "flip",
        dim: 2,
        illustrates:
            "deterministic period-2 flip: not totally ergodic, σ² = 0, mixingale series diverges",
    },
    CatalogEntry {
        name: "rotation-3",
        dim: 3,
        illustrates:
            "non-reversible rotation with holding; aperiodic, bridge differs from past projection",
    },
    CatalogEntry {
        name: "cycle-5",
        dim: 5,
        illustrates: "symmetric walk on an odd cycle; aperiodic through the odd loop, slow mixing",
    },
    CatalogEntry {
        name: "birth-death-4",
        dim: 4,
        illustrates:
            "reversible birth-death chain with centered position observable (self-adjoint case)",
    },
];

pub fn catalog() -> &'static [CatalogEntry] {
    ENTRIES
}

fn lazy_flip(a: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    (vec![vec![1.0 - a, a], vec![a, 1.0 - a]], vec![1.0, -1.0])
}

fn raw(name: &str) -> Option<RawChain> {
    let (kernel, f, auto_center) = match name {
        "iid-pm1" => (vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![1.0, -1.0], None),
        "lazy-flip-0.1" => {
            let (k, f) = lazy_flip(0.1);
            (k, f, None)
        }
        "lazy-flip-0.25" => {
            let (k, f) = lazy_flip(0.25);
            (k, f, None)
        }
        "lazy-flip-0.4" => {
            let (k, f) = lazy_flip(0.4);
            (k, f, None)
        }
        "flip" => (vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![1.0, -1.0], None),
        "rotation-3" => (
            vec![
                vec![0.5, 0.5, 0.0],
                vec![0.0, 0.5, 0.5],
                vec![0.5, 0.0, 0.5],
            ],
            vec![1.0, 0.0, -1.0],
            None,
        ),
        "cycle-5" => {
            let mut k = vec![vec![0.0; 5]; 5];
            for (i, row) in k.iter_mut().enumerate() {
                row[(i + 1) % 5] = 0.5;
                row[(i + 4) % 5] = 0.5;
            }
            (k, vec![1.0, 1.0, 0.0, -1.0, -1.0], None)
        }
        "birth-death-4" => (
            vec![
                vec![0.7, 0.3, 0.0, 0.0],
                vec![0.5, 0.2, 0.3, 0.0],
                vec![0.0, 0.5, 0.2, 0.3],
                vec![0.0, 0.0, 0.5, 0.5],
            ],
            vec![0.0, 1.0, 2.0, 3.0],
            Some(true),
        ),
        _ => return None,
    };
    Some(RawChain {
        name: name.to_string(),
        states: (0..kernel.len()).map(|i| format!("s{i}")).collect(),
        kernel,
        f,
        pi: None,
        auto_center,
    })
}

pub fn catalog_chain(name: &str) -> Result<ChainSpec> {
    let raw = raw(name)
        .ok_or_else(|| LabError::ChainLoadError(format!("no catalog chain named {name:?}")))?;
    validate_chain(&raw)
}
