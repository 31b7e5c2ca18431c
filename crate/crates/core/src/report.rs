//! Batch runs: manifest in, JSON reports and CSV sidecars out.
//!
//! Every analysis writes `<analysis>.json` holding a block with the module
//! that produced it, the grid it used, a provenance map and the result.
//! `bundle.json` echoes the manifest and lists statuses; wall-clock timings
//! go to `timings.json` so the rest of the output is byte-reproducible.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalog::catalog_chain;
use crate::chain::{ergodicity_report, validate_chain, ChainSpec, RawChain};
use crate::criteria::{
    check_condpf, check_conjrev, check_maxwell_woodroofe, check_mixingale, check_neglipf,
    check_quenched_moments, check_varsup, SeriesDiagnostic,
};
use crate::error::{LabError, Result};
use crate::martingale::{
    martingale_variance, residual_decay, verify_dyadic_maximal_bound, verify_martingale_property,
    verify_orthogonality_identity, verify_paired_maximal_bound,
};
use crate::projective::{
    dyadic_grid, horizon_profile, poisson_solution, sigma_sq, SigmaSquared, MAX_HORIZON,
};
use crate::quenched::{
    martingale_clt_check, quenched_clt_check_with_samples, uniform_integrability_diag, SampleSet,
    SimConfig, Start, UiRequest, DEFAULT_KS_BIAS, MIN_REPLICAS,
};

pub const FORMAT_VERSION: u32 = 1;
const MAX_REPLICAS: usize = 10_000_000;
const HISTOGRAM_BINS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    Validate,
    Analyze,
    Criteria,
    Martingale,
    Quench,
    Bounds,
}

impl Analysis {
    pub const ALL: [Analysis; 6] = [
        Analysis::Validate,
        Analysis::Analyze,
        Analysis::Criteria,
        Analysis::Martingale,
        Analysis::Quench,
        Analysis::Bounds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::Validate => "validate",
            Analysis::Analyze => "analyze",
            Analysis::Criteria => "criteria",
            Analysis::Martingale => "martingale",
            Analysis::Quench => "quench",
            Analysis::Bounds => "bounds",
        }
    }

    fn module(self) -> &'static str {
        match self {
            Analysis::Validate => "chain_core",
            Analysis::Analyze => "projective_calculus",
            Analysis::Criteria => "criteria",
            Analysis::Martingale | Analysis::Bounds => "martingale_lab",
            Analysis::Quench => "quenched_mc",
        }
    }
}

impl std::str::FromStr for Analysis {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Analysis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| LabError::BadManifest(format!("unknown analysis {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainSource {
    Catalog(String),
    File(PathBuf),
}

impl ChainSource {
    pub fn load(&self) -> Result<ChainSpec> {
        match self {
            ChainSource::Catalog(name) => catalog_chain(name),
            ChainSource::File(path) => validate_chain(&RawChain::from_file(path)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    /// Largest horizon for the dyadic projective and criteria grids.
    pub n_max: usize,
    /// Largest lag for the two-sided (mixingale) series.
    pub k_max: usize,
    /// Block sizes for the exact martingale checks.
    pub m: Vec<usize>,
    /// Number of blocks for the exact martingale checks.
    pub u: usize,
    /// Block sizes and block count for the residual decay table.
    pub residual_m: Vec<usize>,
    pub residual_u: usize,
    /// Horizon of the dyadic maximal bound.
    pub dyadic_bound_n: usize,
    /// Block size and horizon of the paired-chain maximal bound.
    pub paired_bound_m: usize,
    pub paired_bound_n: usize,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            n_max: 1 << 16,
            k_max: 256,
            m: vec![1, 2, 3],
            u: 4,
            residual_m: vec![1, 2, 4, 8, 16, 32, 64],
            residual_u: 256,
            dyadic_bound_n: 1 << 12,
            paired_bound_m: 2,
            paired_bound_n: 1 << 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarlo {
    pub n: usize,
    pub replicas: usize,
    pub ks_bias: f64,
    /// Horizons of the uniform-integrability table.
    pub ui_n: Vec<usize>,
    /// Truncation levels; defaults to `max(σ², 1)·{1, 2, 4, 8, 16}`.
    pub ui_levels: Option<Vec<f64>>,
    /// Block size of the martingale CLT check.
    pub martingale_m: usize,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo {
            n: 4096,
            replicas: 10_000,
            ks_bias: DEFAULT_KS_BIAS,
            ui_n: vec![64, 256, 1024, 4096],
            ui_levels: None,
            martingale_m: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub chain: ChainSource,
    #[serde(default = "all_analyses")]
    pub analyses: Vec<Analysis>,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub monte_carlo: MonteCarlo,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn all_analyses() -> Vec<Analysis> {
    Analysis::ALL.to_vec()
}

fn default_out() -> PathBuf {
    PathBuf::from("qclt-out")
}

fn guard(grid: &str, detail: String) -> LabError {
    LabError::GuardExceeded {
        grid: grid.to_string(),
        detail,
    }
}

fn horizon_guard(grid: &str, value: usize, limit: usize) -> Result<()> {
    if value > limit {
        return Err(guard(grid, format!("{value} exceeds the limit {limit}")));
    }
    Ok(())
}

impl RunManifest {
    pub fn new(chain: ChainSource, out_dir: PathBuf) -> Self {
        RunManifest {
            chain,
            analyses: all_analyses(),
            grids: Grids::default(),
            monte_carlo: MonteCarlo::default(),
            out_dir,
            seed: 0,
        }
    }

    /// Parses a manifest; relative paths resolve against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut manifest: RunManifest =
            serde_json::from_str(text).map_err(|e| LabError::BadManifest(e.to_string()))?;
        if let ChainSource::File(p) = &manifest.chain {
            if p.is_relative() {
                manifest.chain = ChainSource::File(base.join(p));
            }
        }
        if manifest.out_dir.is_relative() {
            manifest.out_dir = base.join(&manifest.out_dir);
        }
        Ok(manifest)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::BadManifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    /// Checks grids against the module guards and makes the output
    /// directory.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grids;
        let mc = &self.monte_carlo;
        if self.analyses.is_empty() {
            return Err(LabError::BadManifest("no analyses requested".into()));
        }
        horizon_guard("n_max", g.n_max, MAX_HORIZON)?;
        if g.n_max < 8 {
            return Err(LabError::BadManifest("n_max must be ≥ 8".into()));
        }
        horizon_guard("k_max", g.k_max, MAX_HORIZON / 2)?;
        if g.k_max < 4 {
            return Err(LabError::BadManifest("k_max must be ≥ 4".into()));
        }
        if g.m.is_empty() || g.m.contains(&0) || g.u == 0 {
            return Err(LabError::BadManifest(
                "martingale grid needs positive m and u".into(),
            ));
        }
        if g.residual_m.is_empty() || g.residual_m.contains(&0) || g.residual_u == 0 {
            return Err(LabError::BadManifest(
                "residual grid needs positive m and u".into(),
            ));
        }
        for m in g.m.iter().chain(&g.residual_m) {
            horizon_guard("m", *m, MAX_HORIZON)?;
        }
        horizon_guard("residual_u", g.residual_u, MAX_HORIZON)?;
        if !g.dyadic_bound_n.is_power_of_two() {
            return Err(LabError::BadManifest(
                "dyadic_bound_n must be a power of two".into(),
            ));
        }
        horizon_guard("dyadic_bound_n", g.dyadic_bound_n, 1 << 14)?;
        if g.paired_bound_m == 0 || g.paired_bound_n == 0 {
            return Err(LabError::BadManifest(
                "paired bound grid must be positive".into(),
            ));
        }
        horizon_guard("paired_bound_m", g.paired_bound_m, MAX_HORIZON)?;
        horizon_guard("paired_bound_n", g.paired_bound_n, MAX_HORIZON)?;

        if mc.n == 0 || mc.martingale_m == 0 || mc.martingale_m > mc.n {
            return Err(LabError::BadManifest(
                "Monte Carlo horizon and block size must be positive".into(),
            ));
        }
        horizon_guard("monte_carlo.n", mc.n, MAX_HORIZON)?;
        if mc.replicas < MIN_REPLICAS {
            return Err(LabError::BadManifest(format!(
                "need at least {MIN_REPLICAS} replicas"
            )));
        }
        horizon_guard("monte_carlo.replicas", mc.replicas, MAX_REPLICAS)?;
        if mc.ui_n.is_empty() || mc.ui_n.contains(&0) {
            return Err(LabError::BadManifest(
                "ui_n must be nonempty and positive".into(),
            ));
        }
        for n in &mc.ui_n {
            horizon_guard("monte_carlo.ui_n", *n, MAX_HORIZON)?;
        }
        if let Some(levels) = &mc.ui_levels {
            if levels.is_empty() || levels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(LabError::BadManifest(
                    "ui_levels must be nonempty and ≥ 0".into(),
                ));
            }
        }
        if !(mc.ks_bias.is_finite() && mc.ks_bias >= 0.0) {
            return Err(LabError::BadManifest("ks_bias must be ≥ 0".into()));
        }

        std::fs::create_dir_all(&self.out_dir).map_err(|e| {
            LabError::BadManifest(format!("output directory {}: {e}", self.out_dir.display()))
        })?;
        let probe = self.out_dir.join(".qclt-write-probe");
        std::fs::write(&probe, b"")
            .and_then(|_| std::fs::remove_file(&probe))
            .map_err(|e| {
                LabError::BadManifest(format!(
                    "output directory {} is not writable: {e}",
                    self.out_dir.display()
                ))
            })?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Threads for Monte Carlo; 0 lets rayon decide. Never changes output.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Exact,
    Extrapolated {
        method: String,
    },
    MonteCarlo {
        replicas: usize,
        seed: u64,
        se_field: Option<String>,
    },
}

/// One analysis result with its bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportBlock {
    pub analysis: String,
    pub module: String,
    pub chain: String,
    pub grid: Value,
    /// Field path in `result` (`[]` marks array elements) to provenance.
    pub provenance: BTreeMap<String, Provenance>,
    pub result: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum AnalysisStatus {
    Ok { report: String, tables: Vec<String> },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportBundle {
    pub format_version: u32,
    pub versions: BTreeMap<String, String>,
    pub manifest: RunManifest,
    pub chain: String,
    pub analyses: BTreeMap<String, AnalysisStatus>,
    #[serde(skip)]
    pub blocks: BTreeMap<String, ReportBlock>,
    #[serde(skip)]
    pub timings: BTreeMap<String, f64>,
}

impl ReportBundle {
    pub fn failed(&self) -> bool {
        self.analyses
            .values()
            .any(|s| matches!(s, AnalysisStatus::Error { .. }))
    }
}

struct Output {
    block: ReportBlock,
    tables: Vec<(String, Vec<Vec<String>>)>,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn exact(fields: &[&str]) -> BTreeMap<String, Provenance> {
    fields
        .iter()
        .map(|f| (f.to_string(), Provenance::Exact))
        .collect()
}

fn fmt(x: f64) -> String {
    // Shortest round-trip representation, same as the JSON files.
    serde_json::to_string(&x).expect("float serializes")
}

struct Context<'a> {
    manifest: &'a RunManifest,
    spec: &'a ChainSpec,
    options: RunOptions,
    sigma: Option<SigmaSquared>,
}

impl Context<'_> {
    fn sigma(&mut self) -> Result<SigmaSquared> {
        if self.sigma.is_none() {
            self.sigma = Some(sigma_sq(self.spec, self.manifest.grids.n_max)?);
        }
        Ok(self.sigma.clone().expect("just set"))
    }

    fn block(
        &self,
        analysis: Analysis,
        grid: Value,
        provenance: BTreeMap<String, Provenance>,
        result: Value,
    ) -> ReportBlock {
        ReportBlock {
            analysis: analysis.name().to_string(),
            module: analysis.module().to_string(),
            chain: self.spec.name().to_string(),
            grid,
            provenance,
            result,
        }
    }

    fn sigma_provenance(sigma: &SigmaSquared) -> Provenance {
        Provenance::Extrapolated {
            method: to_value(&sigma.method).as_str().unwrap_or("").to_string(),
        }
    }

    fn run(&mut self, analysis: Analysis) -> Result<Output> {
        match analysis {
            Analysis::Validate => self.validate(),
            Analysis::Analyze => self.analyze(),
            Analysis::Criteria => self.criteria(),
            Analysis::Martingale => self.martingale(),
            Analysis::Quench => self.quench(),
            Analysis::Bounds => self.bounds(),
        }
    }

    fn validate(&mut self) -> Result<Output> {
        let spec = self.spec;
        let result = json!({
            "states": spec.states(),
            "kernel": spec.kernel().rows(),
            "observable": spec.observable(),
            "stationary": spec.stationary(),
            "observable_second_moment": spec.observable_second_moment(),
            "ergodicity": ergodicity_report(spec),
        });
        let prov = exact(&["stationary", "observable_second_moment", "ergodicity"]);
        Ok(Output {
            block: self.block(Analysis::Validate, json!({}), prov, result),
            tables: Vec::new(),
        })
    }

    fn analyze(&mut self) -> Result<Output> {
        let n_max = self.manifest.grids.n_max;
        let grid = dyadic_grid(n_max);
        let profile = horizon_profile(self.spec, &grid)?;
        let sigma = self.sigma()?;
        let poisson = poisson_solution(self.spec).ok();
        let rows: Vec<Value> = profile
            .iter()
            .map(|s| {
                json!({
                    "n": s.n,
                    "annealed_second_moment": s.annealed_second_moment,
                    "bridge_norm_sq": s.bridge_norm_sq,
                    "past_norm_sq": s.past_norm_sq,
                    "forward_mean": s.forward_mean,
                    "forward_second_moment": s.forward_second_moment,
                })
            })
            .collect();
        let result = json!({
            "sigma_sq": sigma,
            "poisson_solution": poisson,
            "profile": rows,
        });
        let mut prov = exact(&[
            "profile[]",
            "poisson_solution",
            "sigma_sq.per_n",
            "sigma_sq.oracle_value",
        ]);
        prov.insert("sigma_sq.value".into(), Self::sigma_provenance(&sigma));
        prov.insert("sigma_sq.raw_value".into(), Self::sigma_provenance(&sigma));

        let mut table = vec![vec![
            "n".to_string(),
            "annealed_second_moment".into(),
            "bridge_norm_sq".into(),
            "past_norm_sq".into(),
            "variance_per_n".into(),
        ]];
        for (s, (_, v)) in profile.iter().zip(&sigma.per_n) {
            table.push(vec![
                s.n.to_string(),
                fmt(s.annealed_second_moment),
                fmt(s.bridge_norm_sq),
                fmt(s.past_norm_sq),
                fmt(*v),
            ]);
        }
        Ok(Output {
            block: self.block(
                Analysis::Analyze,
                json!({ "dyadic_n_max": n_max }),
                prov,
                result,
            ),
            tables: vec![("horizon_profile.csv".into(), table)],
        })
    }

    fn criteria(&mut self) -> Result<Output> {
        let g = &self.manifest.grids;
        let spec = self.spec;
        let series: Vec<SeriesDiagnostic> = vec![
            check_maxwell_woodroofe(spec, g.n_max)?,
            check_conjrev(spec, g.n_max)?,
            check_condpf(spec, g.n_max)?,
            check_mixingale(spec, g.k_max)?,
        ];
        let limits = vec![check_varsup(spec, g.n_max)?, check_neglipf(spec, g.n_max)?];
        let sigma = self.sigma()?;
        let moments = check_quenched_moments(spec, g.n_max, sigma.value)?;
        let result = json!({
            "series": series,
            "limits": limits,
            "quenched_moments": moments,
        });
        let mut prov = exact(&[
            "series[].summands",
            "series[].terms",
            "series[].partial_sums",
            "limits[].values",
            "quenched_moments.per_state_limsup",
            "quenched_moments.per_state_limit_gap",
            "quenched_moments.per_state_oscillation",
        ]);
        let fit = Provenance::Extrapolated {
            method: "log-log slope over the top half of the grid".into(),
        };
        for f in [
            "series[].fitted_exponent",
            "series[].verdict",
            "limits[].fitted_exponent",
            "limits[].verdict",
            "limits[].extrapolated_limit",
        ] {
            prov.insert(f.into(), fit.clone());
        }
        prov.insert(
            "quenched_moments.sigma_sq".into(),
            Self::sigma_provenance(&sigma),
        );

        let mut table = vec![vec![
            "condition".to_string(),
            "index".into(),
            "summand".into(),
            "term".into(),
            "partial_sum".into(),
        ]];
        for s in &series {
            for i in 0..s.grid.len() {
                table.push(vec![
                    s.condition.clone(),
                    s.grid[i].to_string(),
                    fmt(s.summands[i]),
                    fmt(s.terms[i]),
                    fmt(s.partial_sums[i]),
                ]);
            }
        }
        Ok(Output {
            block: self.block(
                Analysis::Criteria,
                json!({ "dyadic_n_max": g.n_max, "k_max": g.k_max }),
                prov,
                result,
            ),
            tables: vec![("series_terms.csv".into(), table)],
        })
    }

    fn martingale(&mut self) -> Result<Output> {
        let g = &self.manifest.grids;
        let spec = self.spec;
        let mut checks = Vec::new();
        for &m in &g.m {
            let property = verify_martingale_property(spec, m, g.u)?;
            let orth = verify_orthogonality_identity(spec, m, g.u)?;
            checks.push(json!({
                "m": m,
                "u": g.u,
                "martingale_property_residual": property,
                "orthogonality": orth,
                "block_variance": martingale_variance(spec, m)?,
            }));
        }
        let decay = residual_decay(spec, &g.residual_m, g.residual_u)?;
        let result = json!({ "checks": checks, "residual_decay": decay });
        let prov = exact(&["checks[]", "residual_decay[]"]);
        let mut table = vec![vec!["m".to_string(), "u".into(), "value".into()]];
        for row in &decay {
            table.push(vec![row.m.to_string(), row.u.to_string(), fmt(row.value)]);
        }
        Ok(Output {
            block: self.block(
                Analysis::Martingale,
                json!({ "m": g.m, "u": g.u, "residual_m": g.residual_m, "residual_u": g.residual_u }),
                prov,
                result,
            ),
            tables: vec![("residual_decay.csv".into(), table)],
        })
    }

    fn quench(&mut self) -> Result<Output> {
        let mc = self.manifest.monte_carlo.clone();
        let seed = self.manifest.seed;
        let spec = self.spec;
        let sigma = self.sigma()?;
        let s2 = sigma.value;
        let config = SimConfig {
            n: mc.n,
            replicas: mc.replicas,
            seed,
            start: Start::AllStates,
            block_m: None,
            centered: true,
            ks_bias: mc.ks_bias,
            workers: self.options.workers,
        };
        let (report, samples) = quenched_clt_check_with_samples(spec, &config, s2)?;
        let mart = martingale_clt_check(spec, mc.martingale_m, &config)?;

        let levels = mc.ui_levels.clone().unwrap_or_else(|| {
            [1.0, 2.0, 4.0, 8.0, 16.0]
                .iter()
                .map(|k| k * s2.max(1.0))
                .collect()
        });
        let mut ui = Vec::new();
        for x in spec.support() {
            let req = UiRequest {
                start: x,
                n_grid: &mc.ui_n,
                levels: &levels,
                replicas: mc.replicas,
                seed,
                workers: self.options.workers,
            };
            ui.push(uniform_integrability_diag(spec, &req, s2)?);
        }

        let result = json!({
            "sigma_sq": s2,
            "quenched": report,
            "martingale_clt": mart,
            "ui_tables": ui,
            "ui_pass": ui.iter().all(|t| t.pass),
        });
        let mc_prov = |se: Option<&str>| Provenance::MonteCarlo {
            replicas: mc.replicas,
            seed,
            se_field: se.map(str::to_string),
        };
        let mut prov = BTreeMap::new();
        prov.insert("sigma_sq".into(), Self::sigma_provenance(&sigma));
        prov.insert("martingale_clt.block_variance".into(), Provenance::Exact);
        for row in [
            "quenched.per_state[]",
            "quenched.centered[]",
            "martingale_clt.per_state[]",
        ] {
            prov.insert(
                format!("{row}.mean"),
                mc_prov(Some(&format!("{row}.mean_se"))),
            );
            prov.insert(
                format!("{row}.second_moment"),
                mc_prov(Some(&format!("{row}.second_moment_se"))),
            );
            prov.insert(format!("{row}.variance"), mc_prov(None));
            prov.insert(format!("{row}.ks"), mc_prov(None));
        }
        prov.insert(
            "quenched.annealed.mean".into(),
            mc_prov(Some("quenched.annealed.mean_se")),
        );
        prov.insert(
            "quenched.annealed.second_moment".into(),
            mc_prov(Some("quenched.annealed.second_moment_se")),
        );
        prov.insert("quenched.annealed.ks".into(), mc_prov(None));
        prov.insert(
            "ui_tables[].entries[].value".into(),
            mc_prov(Some("ui_tables[].entries[].se")),
        );

        let mut ui_csv = vec![vec![
            "start".to_string(),
            "n".into(),
            "level".into(),
            "value".into(),
            "se".into(),
        ]];
        for t in &ui {
            for e in &t.entries {
                ui_csv.push(vec![
                    spec.states()[t.start].clone(),
                    e.n.to_string(),
                    fmt(e.level),
                    fmt(e.value),
                    fmt(e.se),
                ]);
            }
        }
        let histograms = histogram_table(spec, &samples, s2);
        Ok(Output {
            block: self.block(
                Analysis::Quench,
                json!({
                    "n": mc.n,
                    "replicas": mc.replicas,
                    "seed": seed,
                    "martingale_m": mc.martingale_m,
                    "ui_n": mc.ui_n,
                    "ui_levels": levels,
                    "sigma_n_max": self.manifest.grids.n_max,
                }),
                prov,
                result,
            ),
            tables: vec![
                ("ui_table.csv".into(), ui_csv),
                ("histograms.csv".into(), histograms),
            ],
        })
    }

    fn bounds(&mut self) -> Result<Output> {
        let g = &self.manifest.grids;
        let dyadic = verify_dyadic_maximal_bound(self.spec, g.dyadic_bound_n)?;
        let paired = verify_paired_maximal_bound(self.spec, g.paired_bound_m, g.paired_bound_n)?;
        let result = json!({ "dyadic": dyadic, "paired": paired });
        let mut prov = exact(&["dyadic", "paired"]);
        prov.insert(
            "dyadic.tail_estimate".into(),
            Provenance::Extrapolated {
                method: "largest computed cross term times 12/N".into(),
            },
        );
        Ok(Output {
            block: self.block(
                Analysis::Bounds,
                json!({
                    "dyadic_bound_n": g.dyadic_bound_n,
                    "paired_bound_m": g.paired_bound_m,
                    "paired_bound_n": g.paired_bound_n,
                }),
                prov,
                result,
            ),
            tables: Vec::new(),
        })
    }
}

/// Fixed bins over `±5σ` (or `±1` when σ² vanishes) plus two overflow bins.
fn histogram_table(spec: &ChainSpec, samples: &[SampleSet], sigma_sq: f64) -> Vec<Vec<String>> {
    let half = if sigma_sq > 1e-12 {
        5.0 * sigma_sq.sqrt()
    } else {
        1.0
    };
    let width = 2.0 * half / HISTOGRAM_BINS as f64;
    let mut table = vec![vec![
        "sample".to_string(),
        "start".into(),
        "bin_lo".into(),
        "bin_hi".into(),
        "count".into(),
    ]];
    let mut emit = |label: &str, start: &str, values: &[f64]| {
        let mut counts = vec![0usize; HISTOGRAM_BINS + 2];
        for v in values {
            let idx = if *v < -half {
                0
            } else if *v >= half {
                HISTOGRAM_BINS + 1
            } else {
                1 + (((v + half) / width) as usize).min(HISTOGRAM_BINS - 1)
            };
            counts[idx] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let (lo, hi) = match i {
                0 => (f64::NEG_INFINITY, -half),
                _ if i == HISTOGRAM_BINS + 1 => (half, f64::INFINITY),
                _ => (-half + (i - 1) as f64 * width, -half + i as f64 * width),
            };
            table.push(vec![
                label.to_string(),
                start.to_string(),
                if lo.is_finite() {
                    fmt(lo)
                } else {
                    "-inf".into()
                },
                if hi.is_finite() {
                    fmt(hi)
                } else {
                    "inf".into()
                },
                c.to_string(),
            ]);
        }
    };
    for set in samples {
        let start = set
            .start
            .map_or("stationary".to_string(), |x| spec.states()[x].clone());
        emit("scaled_sum", &start, &set.values);
        if let Some(c) = &set.centered {
            emit("centered_sum", &start, c);
        }
    }
    table
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| LabError::Io(e.to_string()))?;
    for row in rows {
        w.write_record(row)
            .map_err(|e| LabError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| LabError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Runs every requested analysis and persists the bundle. Returns an error
/// only when the manifest or chain is unusable; analysis failures are
/// recorded per analysis and reported by [`ReportBundle::failed`].
pub fn run(manifest: &RunManifest, options: &RunOptions) -> Result<ReportBundle> {
    manifest.validate()?;
    let spec = manifest.chain.load()?;
    let mut ctx = Context {
        manifest,
        spec: &spec,
        options: *options,
        sigma: None,
    };
    let mut requested = manifest.analyses.clone();
    requested.sort();
    requested.dedup();

    let mut analyses = BTreeMap::new();
    let mut blocks = BTreeMap::new();
    let mut timings = BTreeMap::new();
    for analysis in requested {
        let clock = Instant::now();
        let outcome = ctx.run(analysis).and_then(|out| {
            let report = format!("{}.json", analysis.name());
            write_json(&manifest.out_dir.join(&report), &out.block)?;
            let mut tables = Vec::new();
            for (name, rows) in &out.tables {
                write_csv(&manifest.out_dir.join(name), rows)?;
                tables.push(name.clone());
            }
            Ok((out.block, AnalysisStatus::Ok { report, tables }))
        });
        timings.insert(analysis.name().to_string(), clock.elapsed().as_secs_f64());
        match outcome {
            Ok((block, status)) => {
                blocks.insert(analysis.name().to_string(), block);
                analyses.insert(analysis.name().to_string(), status);
            }
            Err(e) => {
                analyses.insert(
                    analysis.name().to_string(),
                    AnalysisStatus::Error {
                        message: e.to_string(),
                    },
                );
            }
        }
    }

    let versions = BTreeMap::from([
        (
            "qclt-core".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        ),
        ("format".to_string(), FORMAT_VERSION.to_string()),
    ]);
    let bundle = ReportBundle {
        format_version: FORMAT_VERSION,
        versions,
        manifest: manifest.clone(),
        chain: spec.name().to_string(),
        analyses,
        blocks,
        timings,
    };
    write_json(&manifest.out_dir.join("bundle.json"), &bundle)?;
    write_json(&manifest.out_dir.join("timings.json"), &bundle.timings)?;
    Ok(bundle)
}
