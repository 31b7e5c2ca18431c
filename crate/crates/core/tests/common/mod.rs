#![allow(dead_code)]

use qclt_core::ChainSpec;

/// Brute-force path sums: every positive-weight path of length `n` from
/// every start state, accumulated into the moments the engine computes.
pub struct Enumeration {
    pub n: usize,
    /// `E^x(S_n)`.
    pub m1: Vec<f64>,
    /// `E^x(S_n²)`.
    pub m2: Vec<f64>,
    /// `P^x(ξ_n = y)`.
    pub reach: Vec<Vec<f64>>,
    /// `E^x(S_n 1{ξ_n = y})`.
    pub joint: Vec<Vec<f64>>,
    /// `E^x(f(ξ_{n/2}) 1{ξ_n = y})` for even `n`.
    pub middle: Vec<Vec<f64>>,
    pub paths: usize,
}

#[allow(clippy::too_many_arguments)]
fn walk(
    kernel: &[Vec<f64>],
    f: &[f64],
    n: usize,
    path: &mut Vec<usize>,
    weight: f64,
    sum: f64,
    mid: f64,
    out: &mut Enumeration,
) {
    let depth = path.len() - 1;
    if depth == n {
        let (x, y) = (path[0], path[n]);
        out.m1[x] += weight * sum;
        out.m2[x] += weight * sum * sum;
        out.reach[x][y] += weight;
        out.joint[x][y] += weight * sum;
        out.middle[x][y] += weight * mid;
        out.paths += 1;
        return;
    }
    let here = *path.last().unwrap();
    for (next, &p) in kernel[here].iter().enumerate() {
        if p > 0.0 {
            path.push(next);
            let mid = if 2 * (depth + 1) == n { f[next] } else { mid };
            walk(kernel, f, n, path, weight * p, sum + f[next], mid, out);
            path.pop();
        }
    }
}

pub fn enumerate(spec: &ChainSpec, n: usize) -> Enumeration {
    let d = spec.dim();
    let kernel: Vec<Vec<f64>> = (0..d).map(|x| spec.kernel().row(x).to_vec()).collect();
    let mut out = Enumeration {
        n,
        m1: vec![0.0; d],
        m2: vec![0.0; d],
        reach: vec![vec![0.0; d]; d],
        joint: vec![vec![0.0; d]; d],
        middle: vec![vec![0.0; d]; d],
        paths: 0,
    };
    for x in 0..d {
        let mut path = vec![x];
        walk(
            &kernel,
            spec.observable(),
            n,
            &mut path,
            1.0,
            0.0,
            0.0,
            &mut out,
        );
    }
    out
}

impl Enumeration {
    pub fn bridge(&self, x: usize, y: usize) -> f64 {
        if self.reach[x][y] > 0.0 {
            self.joint[x][y] / self.reach[x][y]
        } else {
            0.0
        }
    }

    pub fn bridge_norm_sq(&self, pi: &[f64]) -> f64 {
        let mut total = 0.0;
        for (x, p) in pi.iter().enumerate() {
            for y in 0..pi.len() {
                total += p * self.reach[x][y] * self.bridge(x, y).powi(2);
            }
        }
        total
    }

    pub fn past_norm_sq(&self, pi: &[f64]) -> f64 {
        pi.iter().zip(&self.m1).map(|(p, m)| p * m * m).sum()
    }

    pub fn annealed(&self, pi: &[f64]) -> f64 {
        pi.iter().zip(&self.m2).map(|(p, m)| p * m).sum()
    }

    /// `||E(f(ξ_{n/2}) | ξ_0, ξ_n)||²` under the stationary start.
    pub fn middle_norm_sq(&self, pi: &[f64]) -> f64 {
        let mut total = 0.0;
        for (x, p) in pi.iter().enumerate() {
            for y in 0..pi.len() {
                let r = self.reach[x][y];
                if r > 0.0 {
                    total += p * self.middle[x][y].powi(2) / r;
                }
            }
        }
        total
    }
}

pub fn small_catalog() -> Vec<ChainSpec> {
    qclt_core::catalog()
        .iter()
        .filter(|e| e.dim <= 4)
        .map(|e| qclt_core::catalog_chain(e.name).unwrap())
        .collect()
}

pub fn full_catalog() -> Vec<ChainSpec> {
    qclt_core::catalog()
        .iter()
        .map(|e| qclt_core::catalog_chain(e.name).unwrap())
        .collect()
}
