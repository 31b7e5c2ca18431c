//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::Instant;

use common::{enumerate, full_catalog, small_catalog};
use qclt_core::criteria::{check_condpf, check_conjrev, check_mixingale, SeriesVerdict};
use qclt_core::martingale::{
    verify_dyadic_maximal_bound, verify_martingale_property, verify_orthogonality_identity,
    visit_positive_paths, BlockDecomposer,
};
use qclt_core::projective::{
    bridge_sum_expectation, dyadic_grid, forward_second_moment, horizon_profile, poisson_variance,
    sigma_sq, two_sided_single_norm_sq, HorizonSweep,
};
use qclt_core::quenched::{quenched_clt_check, simulate_sums, SimConfig, Start};
use qclt_core::report::{run, Analysis, ChainSource, RunManifest, RunOptions};
use qclt_core::{catalog_chain, ergodicity_report};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn sigma_oracle() -> Outcome {
    let spec = catalog_chain("lazy-flip-0.25").map_err(err)?;
    let s = sigma_sq(&spec, 1 << 12).map_err(err)?;
    let oracle = poisson_variance(&spec).map_err(err)?;
    let at_4096 = s.per_n.last().map(|p| p.1).unwrap_or(f64::NAN);
    let detail = format!(
        "sigma_sq={:.12} oracle={:.12} sequence(n=4096)={:.6}",
        s.value, oracle, at_4096
    );
    check(
        (s.value - 3.0).abs() <= 1e-6
            && (oracle - 3.0).abs() <= 1e-6
            && (at_4096 - 3.0).abs() <= 0.05 * 3.0,
        detail.clone(),
        detail,
    )
}

fn exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut where_worst = String::new();
    let mut track = |err: f64, what: String| {
        if err > worst || where_worst.is_empty() {
            worst = worst.max(err);
            where_worst = what;
        }
    };
    let chains = small_catalog();
    for spec in &chains {
        let pi = spec.stationary();
        for n in 1..=12 {
            let e = enumerate(spec, n);
            let fm = forward_second_moment(spec, n).map_err(err)?;
            let b = bridge_sum_expectation(spec, n).map_err(err)?;
            let mut sweep = HorizonSweep::new(spec);
            sweep.advance_to(n);
            for x in 0..spec.dim() {
                track(
                    (fm.m1[x] - e.m1[x]).abs(),
                    format!("{} n={n} m1", spec.name()),
                );
                track(
                    (fm.m2[x] - e.m2[x]).abs(),
                    format!("{} n={n} m2", spec.name()),
                );
                for y in 0..spec.dim() {
                    track(
                        (b.value(x, y) - e.bridge(x, y)).abs(),
                        format!("{} n={n} bridge", spec.name()),
                    );
                    if b.in_support(x, y) != (e.reach[x][y] > 0.0) {
                        return Err(format!(
                            "{} n={n}: bridge support differs at ({x},{y})",
                            spec.name()
                        ));
                    }
                }
            }
            track(
                (sweep.bridge_norm_sq() - e.bridge_norm_sq(pi)).abs(),
                format!("{} n={n} bridge norm", spec.name()),
            );
            track(
                (sweep.past_norm_sq() - e.past_norm_sq(pi)).abs(),
                format!("{} n={n} past norm", spec.name()),
            );
            if n.is_multiple_of(2) {
                let t = two_sided_single_norm_sq(spec, n / 2).map_err(err)?;
                track(
                    (t - e.middle_norm_sq(pi)).abs(),
                    format!("{} k={} two-sided", spec.name(), n / 2),
                );
            }
        }
    }
    let detail = format!(
        "{} chains, n<=12, max abs error {worst:.3e} ({where_worst})",
        chains.len()
    );
    check(worst <= 1e-10, detail.clone(), detail)
}

fn martingale_machinery() -> Outcome {
    let mut worst_property: f64 = 0.0;
    let mut worst_orth: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    let mut paths = 0usize;
    let chains = small_catalog();
    for spec in &chains {
        for m in 1..=3 {
            let decomposer = BlockDecomposer::new(spec, m).map_err(err)?;
            for u in 1..=4 {
                worst_property =
                    worst_property.max(verify_martingale_property(spec, m, u).map_err(err)?);
                worst_orth = worst_orth.max(
                    verify_orthogonality_identity(spec, m, u)
                        .map_err(err)?
                        .max_residual,
                );
                visit_positive_paths(spec, u * m, |states, _| {
                    let dec = decomposer.decompose(states);
                    let s: f64 = states[1..].iter().map(|&x| spec.observable()[x]).sum();
                    let rebuilt = (m as f64).sqrt() * (dec.m_u + dec.r_u);
                    worst_identity = worst_identity.max((s - rebuilt).abs());
                    paths += 1;
                })
                .map_err(err)?;
            }
        }
    }
    let detail = format!(
        "{} chains, m<=3, u<=4: martingale residual {worst_property:.2e}, orthogonality residual {worst_orth:.2e}, \
         path identity defect {worst_identity:.2e} over {paths} paths",
        chains.len()
    );
    check(
        worst_property <= 1e-10 && worst_orth <= 1e-10 && worst_identity <= 1e-12,
        detail.clone(),
        detail,
    )
}

fn dyadic_bound() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for spec in full_catalog() {
        let rep = verify_dyadic_maximal_bound(&spec, 1 << 12).map_err(err)?;
        ok &= rep.holds && rep.lhs <= rep.rhs;
        lines.push(format!("{}: {:.4} <= {:.4}", spec.name(), rep.lhs, rep.rhs));
    }
    let iid = catalog_chain("iid-pm1").map_err(err)?;
    let rep = verify_dyadic_maximal_bound(&iid, 1 << 12).map_err(err)?;
    let iid_exact = rep.lhs == 1.0
        && rep
            .cross_terms
            .iter()
            .all(|(_, c)| c.iter().all(|v| *v == 0.0));
    ok &= iid_exact;
    let detail = format!(
        "{}; iid lhs={} cross terms zero={}",
        lines.join(", "),
        rep.lhs,
        iid_exact
    );
    check(ok, detail.clone(), detail)
}

fn quenched_clt() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, seed) in [("lazy-flip-0.25", 1u64), ("iid-pm1", 2)] {
        let spec = catalog_chain(name).map_err(err)?;
        let sigma = sigma_sq(&spec, 1 << 12).map_err(err)?.value;
        let rep =
            quenched_clt_check(&spec, &SimConfig::new(4096, 10_000, seed), sigma).map_err(err)?;
        ok &= rep.quenched_pass && rep.centered_pass;
        let ks: Vec<String> = rep
            .per_state
            .iter()
            .map(|s| format!("{:.4}", s.ks))
            .collect();
        let cks: Vec<String> = rep
            .centered
            .iter()
            .map(|s| format!("{:.4}", s.ks))
            .collect();
        lines.push(format!(
            "{name}: KS [{}] centered [{}] tol {:.4}",
            ks.join(", "),
            cks.join(", "),
            rep.ks_tol
        ));
    }
    let detail = lines.join("; ");
    check(ok, detail.clone(), detail)
}

fn degenerate_flip() -> Outcome {
    let flip = catalog_chain("flip").map_err(err)?;
    let report = ergodicity_report(&flip);
    let sigma = sigma_sq(&flip, 1 << 12).map_err(err)?;
    let mut cfg = SimConfig::new(4096, 1000, 3);
    cfg.start = Start::AllStates;
    let sets = simulate_sums(&flip, &cfg).map_err(err)?;
    let all_zero = sets.iter().all(|s| s.values.iter().all(|v| *v == 0.0));
    let q = quenched_clt_check(&flip, &cfg, sigma.value).map_err(err)?;
    let mix = check_mixingale(&flip, 64).map_err(err)?;
    let terms_one = mix.summands.iter().all(|t| (t - 1.0).abs() < 1e-12);
    let detail = format!(
        "totally_ergodic={} sigma_sq={} all mass at 0={} quenched pass={} mixingale={:?} terms==1={}",
        report.totally_ergodic, sigma.value, all_zero, q.quenched_pass, mix.verdict, terms_one
    );
    check(
        !report.totally_ergodic
            && sigma.value == 0.0
            && all_zero
            && q.quenched_pass
            && mix.verdict == SeriesVerdict::Diverges
            && terms_one,
        detail.clone(),
        detail,
    )
}

fn criteria_ordering() -> Outcome {
    let n_max = 1 << 16;
    let grid = dyadic_grid(n_max);
    let mut violations = Vec::new();
    let chains = full_catalog();
    for spec in &chains {
        let condpf = check_condpf(spec, n_max).map_err(err)?;
        let conjrev = check_conjrev(spec, n_max).map_err(err)?;
        for ((n, a), b) in condpf
            .grid
            .iter()
            .zip(&condpf.summands)
            .zip(&conjrev.summands)
        {
            if *a < b - 1e-9 {
                violations.push(format!("{} n={n}: condpf {a} < conjrev {b}", spec.name()));
            }
        }
        for snap in horizon_profile(spec, &grid).map_err(err)? {
            let slack = 1e-9 * snap.annealed_second_moment.max(1.0);
            if snap.past_norm_sq > snap.bridge_norm_sq + slack
                || snap.bridge_norm_sq > snap.annealed_second_moment + slack
            {
                violations.push(format!(
                    "{} n={}: contraction chain broken",
                    spec.name(),
                    snap.n
                ));
            }
        }
    }
    let detail = format!(
        "{} chains, {} grid points, {} violations",
        chains.len(),
        grid.len(),
        violations.len()
    );
    check(violations.is_empty(), detail, violations.join("; "))
}

fn mc_vs_exact() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut where_worst = String::new();
    let mut comparisons = 0;
    for spec in full_catalog() {
        for n in [64usize, 1024] {
            let exact = forward_second_moment(&spec, n).map_err(err)?;
            let mut cfg = SimConfig::new(n, 10_000, 8);
            cfg.start = Start::AllStates;
            for set in simulate_sums(&spec, &cfg).map_err(err)? {
                let x = set.start.expect("per-state sample");
                let sq: Vec<f64> = set.values.iter().map(|v| v * v).collect();
                let r = sq.len() as f64;
                let mean = sq.iter().sum::<f64>() / r;
                let se =
                    (sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0) / r).sqrt();
                let target = exact.m2[x] / n as f64;
                let z = if se > 0.0 {
                    (mean - target).abs() / se
                } else if (mean - target).abs() <= 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                };
                comparisons += 1;
                if z > worst || where_worst.is_empty() {
                    worst = worst.max(z);
                    where_worst = format!("{} n={n} start {x}", spec.name());
                }
            }
        }
    }
    let detail = format!("{comparisons} comparisons, max |error|/SE = {worst:.2} ({where_worst})");
    check(worst <= 3.0, detail.clone(), detail)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut outputs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for workers in [1usize, 4, 16] {
        let out_dir = dir.path().join(format!("w{workers}"));
        let mut manifest = RunManifest::new(
            ChainSource::Catalog("birth-death-4".into()),
            out_dir.clone(),
        );
        manifest.analyses = Analysis::ALL.to_vec();
        manifest.grids.n_max = 1 << 12;
        manifest.grids.residual_u = 64;
        manifest.monte_carlo.n = 512;
        manifest.monte_carlo.replicas = 2000;
        manifest.monte_carlo.ui_n = vec![64, 512];
        manifest.seed = 12345;
        let bundle = run(&manifest, &RunOptions { workers }).map_err(err)?;
        if bundle.failed() {
            return Err(format!("analysis error: {:?}", bundle.analyses));
        }
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out_dir)
            .map_err(err)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(err)?
            .into_iter()
            .filter(|p| {
                p.file_name()
                    .is_some_and(|f| f != "timings.json" && f != "bundle.json")
            })
            .map(|p| {
                let name = p.file_name().unwrap().to_string_lossy().into_owned();
                std::fs::read(&p).map(|bytes| (name, bytes))
            })
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(err)?;
        files.sort();
        outputs.push(files);
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    let detail = format!(
        "{} files compared under 1, 4, 16 workers, identical={same}",
        outputs[0].len()
    );
    check(same && !outputs[0].is_empty(), detail.clone(), detail)
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("sigma oracle agreement", sigma_oracle),
        ("exactness suite", exactness),
        ("martingale machinery", martingale_machinery),
        ("dyadic maximal bound", dyadic_bound),
        ("quenched CLT simulation", quenched_clt),
        ("degenerate periodic chain", degenerate_flip),
        ("criteria ordering", criteria_ordering),
        ("Monte Carlo vs exact", mc_vs_exact),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        let outcome = f();
        let secs = clock.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name} ({secs:.2}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name} ({secs:.2}s): {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
