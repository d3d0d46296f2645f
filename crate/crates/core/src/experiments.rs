//! Batch experiments behind the `bbm` command line: convergence studies,
//! condition audits, measure probes, Parseval cross-checks and scaling
//! identities. Each run yields a CSV table, a JSON report and a list of
//! failures; an empty failure list means every row evaluated and every
//! declared tolerance was met.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::diagnostics::{self, default_probes, ConditionReport, MeasureProbe, Verdict};
use crate::energy::{energy_fourier, energy_physical, limit_local, limit_nonlocal};
use crate::error::{Error, Result};
use crate::kernels::{builtin_catalog, KernelFamily};
use crate::measures::AtomicMeasure;
use crate::quad::{integrate_region, EnergyEstimate, LineHints, QuadratureScheme, Region};
use crate::testfuncs::{builtin_function, TestFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Converge,
    Conditions,
    ProbeNu,
    SphereMeasure,
    Parseval,
    Scaling,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Converge => "converge",
            Experiment::Conditions => "conditions",
            Experiment::ProbeNu => "probe-nu",
            Experiment::SphereMeasure => "sphere-measure",
            Experiment::Parseval => "parseval",
            Experiment::Scaling => "scaling",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Partially specified configuration, as read from a JSON file or from
/// command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigOverrides {
    pub experiment: Option<Experiment>,
    pub family: Option<String>,
    pub function: Option<String>,
    pub dim: Option<usize>,
    pub eps_seq: Option<Vec<f64>>,
    pub r_grid: Option<Vec<f64>>,
    pub delta: Option<f64>,
    pub tol: Option<f64>,
    /// Missing fields take their default values.
    pub scheme: Option<QuadratureScheme>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

impl ConfigOverrides {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Fields set in `self` win over those in `lower`.
    pub fn over(self, lower: ConfigOverrides) -> ConfigOverrides {
        ConfigOverrides {
            experiment: self.experiment.or(lower.experiment),
            family: self.family.or(lower.family),
            function: self.function.or(lower.function),
            dim: self.dim.or(lower.dim),
            eps_seq: self.eps_seq.or(lower.eps_seq),
            r_grid: self.r_grid.or(lower.r_grid),
            delta: self.delta.or(lower.delta),
            tol: self.tol.or(lower.tol),
            scheme: self.scheme.or(lower.scheme),
            out: self.out.or(lower.out),
            format: self.format.or(lower.format),
        }
    }
}

/// Family id that expands to the built-in catalog.
pub const ALL_FAMILIES: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub family: String,
    pub function: String,
    pub dim: usize,
    pub eps_seq: Vec<f64>,
    pub r_grid: Vec<f64>,
    /// Short-range radius for sphere measures; `None` means `√ε`.
    pub delta: Option<f64>,
    /// Acceptance tolerance; `None` means the experiment's default.
    pub tol: Option<f64>,
    pub scheme: QuadratureScheme,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

impl ExperimentConfig {
    /// Built-in defaults for `experiment`, overridden by `given`.
    pub fn resolve(experiment: Experiment, given: ConfigOverrides) -> Result<Self> {
        if let Some(e) = given.experiment {
            if e != experiment {
                return Err(Error::Parameter(format!(
                    "config is for '{}' but '{}' was requested",
                    e.name(),
                    experiment.name()
                )));
            }
        }
        let family_default = match experiment {
            Experiment::Parseval | Experiment::Conditions => ALL_FAMILIES,
            _ => "gaussian",
        };
        let eps_default = match experiment {
            Experiment::Parseval => vec![0.5, 0.1, 0.02],
            _ => diagnostics::default_eps_seq(),
        };
        let r_default = match experiment {
            Experiment::Scaling => vec![0.25, 1.0, 4.0, 16.0],
            _ => diagnostics::default_r_grid(),
        };
        let cfg = Self {
            experiment,
            family: given.family.unwrap_or_else(|| family_default.to_string()),
            function: given.function.unwrap_or_else(|| "gaussian".to_string()),
            dim: given.dim.unwrap_or(1),
            eps_seq: given.eps_seq.unwrap_or(eps_default),
            r_grid: given.r_grid.unwrap_or(r_default),
            delta: given.delta,
            tol: given.tol,
            scheme: given.scheme.unwrap_or_default(),
            out: given.out,
            format: given.format.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if self.eps_seq.is_empty()
            || self.eps_seq.iter().any(|&e| !(e > 0.0 && e < 1.0))
            || self.eps_seq.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::Parameter("ε sequence must be nonempty, strictly decreasing, in (0,1)".into()));
        }
        if self.r_grid.is_empty() || self.r_grid.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::Parameter("R grid must be nonempty and positive".into()));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::Parameter(format!("δ must lie in (0,1), got {d}")));
            }
        }
        if let Some(t) = self.tol {
            if !(t > 0.0) {
                return Err(Error::Parameter(format!("tolerance must be positive, got {t}")));
            }
        }
        self.families()?;
        builtin_function(&self.function, self.dim)?;
        Ok(())
    }

    pub fn families(&self) -> Result<Vec<KernelFamily>> {
        if self.family == ALL_FAMILIES {
            builtin_catalog(self.dim)
        } else {
            Ok(vec![KernelFamily::from_id(&self.family, self.dim)?])
        }
    }

    pub fn single_family(&self) -> Result<KernelFamily> {
        if self.family == ALL_FAMILIES {
            return Err(Error::Parameter(format!("'{}' needs a single --family", self.experiment.name())));
        }
        KernelFamily::from_id(&self.family, self.dim)
    }

    pub fn function(&self) -> Result<TestFunction> {
        builtin_function(&self.function, self.dim)
    }

    pub fn delta_for(&self, eps: f64) -> f64 {
        self.delta.unwrap_or_else(|| diagnostics::default_delta(eps))
    }
}

/// One cell of a CSV table.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Num(f64),
    Int(i64),
    Text(String),
    Missing,
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Num(v)
    }
}

impl From<Option<f64>> for Field {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Field::Missing, Field::Num)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.to_string())
    }
}

impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::Text(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as i64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Field>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Header row, `.` decimal point, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, f) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                match f {
                    Field::Num(v) if v.is_finite() => write!(out, "{v:.16e}").unwrap(),
                    Field::Num(v) => write!(out, "{v}").unwrap(),
                    Field::Int(v) => write!(out, "{v}").unwrap(),
                    Field::Text(s) if s.contains([',', '"', '\n']) => {
                        write!(out, "\"{}\"", s.replace('"', "\"\"")).unwrap()
                    }
                    Field::Text(s) => out.push_str(s),
                    Field::Missing => {}
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    /// What failed: a row, a checker or a tolerance.
    pub scope: String,
    pub message: String,
}

impl Failure {
    fn new(scope: impl Into<String>, message: impl Into<String>) -> Self {
        Self { scope: scope.into(), message: message.into() }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub table: Table,
    pub report: serde_json::Value,
    pub failures: Vec<Failure>,
}

impl ExperimentOutput {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn render(&self) -> String {
        match self.config.format {
            OutputFormat::Csv => self.table.to_csv(),
            OutputFormat::Json => serde_json::to_string_pretty(&self.report).expect("report serializes") + "\n",
        }
    }

    pub fn failure_manifest(&self) -> serde_json::Value {
        json!({
            "experiment": self.config.experiment.name(),
            "config": self.config,
            "failures": self.failures,
        })
    }
}

/// On-disk memo of energy evaluations, enabled by `BBM_LAB_CACHE=<dir>`.
/// Values are stored as raw bits, so cached and fresh runs agree exactly.
#[derive(Debug, Clone, Default)]
pub struct EnergyCache {
    dir: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct CachedEstimate {
    value: u64,
    abs_error_est: u64,
}

impl EnergyCache {
    pub const ENV: &'static str = "BBM_LAB_CACHE";

    pub fn from_env() -> Self {
        Self { dir: std::env::var_os(Self::ENV).filter(|v| !v.is_empty()).map(PathBuf::from) }
    }

    pub fn disabled() -> Self {
        Self { dir: None }
    }

    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    fn path(&self, key: &serde_json::Value) -> Option<PathBuf> {
        let dir = self.dir.as_ref()?;
        let digest = Sha256::digest(key.to_string().as_bytes());
        Some(dir.join(format!("{}.json", hex::encode(digest))))
    }

    pub fn get_or_compute<F>(&self, key: serde_json::Value, f: F) -> Result<EnergyEstimate>
    where
        F: FnOnce() -> Result<EnergyEstimate>,
    {
        let Some(path) = self.path(&key) else {
            return f();
        };
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(c) = serde_json::from_str::<CachedEstimate>(&text) {
                return Ok(EnergyEstimate {
                    value: f64::from_bits(c.value),
                    abs_error_est: f64::from_bits(c.abs_error_est),
                    breakdown: None,
                });
            }
        }
        let est = f()?;
        let entry = CachedEstimate { value: est.value.to_bits(), abs_error_est: est.abs_error_est.to_bits() };
        // a failed write only costs a recomputation next time
        if std::fs::create_dir_all(path.parent().unwrap()).is_ok() {
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            if std::fs::write(&tmp, serde_json::to_string(&entry).unwrap()).is_ok() {
                let _ = std::fs::rename(&tmp, &path);
            }
        }
        Ok(est)
    }
}

fn energy_key(kind: &str, u: &TestFunction, family: &KernelFamily, eps: f64, scheme: &QuadratureScheme) -> serde_json::Value {
    json!({
        "kind": kind,
        "function": u.id(),
        "family": family.id(),
        "dim": family.dim(),
        "eps": eps.to_bits(),
        "scheme": scheme,
    })
}

fn physical(cache: &EnergyCache, u: &TestFunction, fam: &KernelFamily, eps: f64, s: &QuadratureScheme) -> Result<EnergyEstimate> {
    cache.get_or_compute(energy_key("physical", u, fam, eps, s), || energy_physical(u, fam, eps, s))
}

fn fourier(cache: &EnergyCache, u: &TestFunction, fam: &KernelFamily, eps: f64, s: &QuadratureScheme) -> Result<EnergyEstimate> {
    cache.get_or_compute(energy_key("fourier", u, fam, eps, s), || energy_fourier(u, fam, eps, s))
}

pub fn run(cfg: &ExperimentConfig, cache: &EnergyCache) -> Result<ExperimentOutput> {
    match cfg.experiment {
        Experiment::Converge => run_converge(cfg, cache).map(|s| s.into_output(cfg)),
        Experiment::Conditions => run_conditions(cfg),
        Experiment::ProbeNu => run_probe_nu(cfg),
        Experiment::SphereMeasure => run_sphere_measure(cfg),
        Experiment::Parseval => run_parseval(cfg, cache),
        Experiment::Scaling => run_scaling(cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub delta: f64,
    pub f_physical: Option<f64>,
    pub f_fourier: Option<f64>,
    pub predicted_local: Option<f64>,
    pub predicted_nonlocal: f64,
    pub predicted_total: Option<f64>,
    /// `|F_physical − predicted_total| / max(|predicted_total|, 1e−300)`.
    pub relative_gap: Option<f64>,
    pub error: Option<String>,
}

pub fn relative_gap(value: f64, predicted: f64) -> f64 {
    (value - predicted).abs() / predicted.abs().max(1e-300)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub family: String,
    pub function: String,
    pub dim: usize,
    pub rows: Vec<ConvergenceRow>,
    /// Estimated off-origin limit measure.
    pub nu_hat: AtomicMeasure,
    pub probe: MeasureProbe,
    /// Gap strictly decreasing over the last four rows.
    pub gap_decreasing: bool,
    pub last_gap: Option<f64>,
    pub summary: String,
    pub failures: Vec<Failure>,
}

/// Atomic estimate of `ν`: nothing if the probes look like `αδ₀`; otherwise
/// the extrapolated mass of the dominant shell, spread isotropically over the
/// angular nodes at the shell radius (the family's concentration radius when
/// it has one).
pub fn estimate_nu(family: &KernelFamily, probe: &MeasureProbe, scheme: &QuadratureScheme) -> Result<AtomicMeasure> {
    let dim = family.dim();
    if probe.delta_likeness {
        return Ok(AtomicMeasure::zero(dim));
    }
    let shells = probe.rows.iter().filter(|r| !r.probe.is_origin());
    let (radius, mass) = match family.concentration_radius() {
        Some(r0) => {
            let mass = shells
                .filter(|r| r.probe.eval(r0) == 1.0)
                .filter_map(|r| r.extrapolated)
                .fold(0.0, f64::max);
            (r0, mass)
        }
        None => match probe.heaviest_shell() {
            Some(row) => (row.probe.center, row.extrapolated.unwrap_or(0.0)),
            None => return Ok(AtomicMeasure::zero(dim)),
        },
    };
    if mass <= 0.0 {
        return Ok(AtomicMeasure::zero(dim));
    }
    let rule = match dim {
        2 => crate::quad::AngularRule::circle(64),
        _ => scheme.angular_rule(dim)?,
    };
    AtomicMeasure::sphere(dim, radius, mass, &rule)
}

pub fn run_converge(cfg: &ExperimentConfig, cache: &EnergyCache) -> Result<ConvergenceStudy> {
    let family = cfg.single_family()?;
    let u = cfg.function()?;
    let s = &cfg.scheme;
    let probe_eps = if cfg.eps_seq.len() >= 3 { cfg.eps_seq.clone() } else { diagnostics::default_eps_seq() };
    let probe = diagnostics::probe_nu(&family, &probe_eps, &default_probes(), s)?;
    let nu_hat = estimate_nu(&family, &probe, s)?;
    let predicted_nonlocal = limit_nonlocal(&u, &nu_hat)?;

    let rows: Vec<ConvergenceRow> = cfg
        .eps_seq
        .par_iter()
        .map(|&eps| {
            let delta = cfg.delta_for(eps);
            let mut errors = Vec::new();
            let mut keep = |r: Result<f64>| r.map_err(|e| errors.push(e.to_string())).ok();
            let f_physical = keep(physical(cache, &u, &family, eps, s).map(|e| e.value));
            let f_fourier = keep(fourier(cache, &u, &family, eps, s).map(|e| e.value));
            let predicted_local =
                keep(diagnostics::sphere_measure(&family, eps, delta, s).and_then(|mu| limit_local(&u, &mu)));
            let predicted_total = predicted_local.map(|l| l + predicted_nonlocal);
            let relative_gap = f_physical.zip(predicted_total).map(|(f, p)| relative_gap(f, p));
            ConvergenceRow {
                eps,
                delta,
                f_physical,
                f_fourier,
                predicted_local,
                predicted_nonlocal,
                predicted_total,
                relative_gap,
                error: (!errors.is_empty()).then(|| errors.join("; ")),
            }
        })
        .collect();

    let gaps: Vec<Option<f64>> = rows.iter().map(|r| r.relative_gap).collect();
    let tail = &gaps[gaps.len().saturating_sub(4)..];
    let gap_decreasing =
        tail.len() == 4 && tail.iter().all(Option::is_some) && tail.windows(2).all(|w| w[1].unwrap() < w[0].unwrap());
    let last_gap = gaps.last().copied().flatten();
    let mut failures: Vec<Failure> = rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| Failure::new(format!("row eps={:e}", r.eps), e.clone())))
        .collect();
    if let Some(tol) = cfg.tol {
        match last_gap {
            Some(g) if g <= tol => {}
            Some(g) => failures.push(Failure::new("tolerance", format!("last relative gap {g:.3e} exceeds {tol:.3e}"))),
            None => failures.push(Failure::new("tolerance", "last relative gap unavailable")),
        }
    }
    let summary = format!(
        "relative gap {} over the last four ε; last value {}",
        if gap_decreasing { "decreasing" } else { "not decreasing" },
        last_gap.map_or("unavailable".to_string(), |g| format!("{g:.6e}")),
    );
    Ok(ConvergenceStudy {
        family: family.id().to_string(),
        function: u.id().to_string(),
        dim: cfg.dim,
        rows,
        nu_hat,
        probe,
        gap_decreasing,
        last_gap,
        summary,
        failures,
    })
}

impl ConvergenceStudy {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "eps",
            "delta",
            "f_physical",
            "f_fourier",
            "predicted_local",
            "predicted_nonlocal",
            "predicted_total",
            "relative_gap",
            "error",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.eps.into(),
                r.delta.into(),
                r.f_physical.into(),
                r.f_fourier.into(),
                r.predicted_local.into(),
                r.predicted_nonlocal.into(),
                r.predicted_total.into(),
                r.relative_gap.into(),
                r.error.clone().map_or(Field::Missing, Field::Text),
            ]);
        }
        t
    }

    pub fn into_output(self, cfg: &ExperimentConfig) -> ExperimentOutput {
        ExperimentOutput {
            config: cfg.clone(),
            table: self.table(),
            report: serde_json::to_value(&self).expect("study serializes"),
            failures: self.failures,
        }
    }
}

/// Verdicts of every checker for one family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionAudit {
    pub family: String,
    pub reports: Vec<ConditionReport>,
    pub probe: Option<MeasureProbe>,
}

impl ConditionAudit {
    pub fn verdict(&self, id: diagnostics::ConditionId) -> Option<Verdict> {
        self.reports.iter().find(|r| r.condition_id == id).map(|r| r.verdict)
    }
}

/// Runs (i), (i′), Lévy, (levy2), the ω-condition and (ii) on one family.
pub fn audit_family(
    family: &KernelFamily,
    eps_seq: &[f64],
    r_grid: &[f64],
    scheme: &QuadratureScheme,
) -> (ConditionAudit, Vec<Failure>) {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let mut take = |label: &str, r: Result<ConditionReport>| match r {
        Ok(rep) => {
            for c in rep.values.iter().filter(|c| c.error.is_some()) {
                failures.push(Failure::new(
                    format!("{} {label} eps={:e} R={:e}", family.id(), c.eps, c.r),
                    c.error.clone().unwrap(),
                ));
            }
            reports.push(rep);
        }
        Err(e) => failures.push(Failure::new(format!("{} {label}", family.id()), e.to_string())),
    };
    take("i", diagnostics::check_condition_i(family, eps_seq, r_grid, scheme));
    take("i_prime", diagnostics::check_condition_i_prime(family, eps_seq, r_grid, scheme));
    take("levy", diagnostics::check_levy(family, eps_seq, scheme));
    take("levy2", diagnostics::check_levy2(family, eps_seq, scheme));
    take("omega_suff", diagnostics::check_omega_sufficient(family, eps_seq, scheme));
    let mut probe = None;
    match diagnostics::check_condition_ii(family, eps_seq, &default_probes(), scheme) {
        Ok((rep, mp)) => {
            for e in &mp.errors {
                failures.push(Failure::new(format!("{} ii", family.id()), e.clone()));
            }
            reports.push(rep);
            probe = Some(mp);
        }
        Err(e) => failures.push(Failure::new(format!("{} ii", family.id()), e.to_string())),
    }
    (ConditionAudit { family: family.id().to_string(), reports, probe }, failures)
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Inconclusive => "inconclusive",
    }
}

pub fn run_conditions(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let families = cfg.families()?;
    let audits: Vec<(ConditionAudit, Vec<Failure>)> =
        families.par_iter().map(|f| audit_family(f, &cfg.eps_seq, &cfg.r_grid, &cfg.scheme)).collect();
    let mut table = Table::new(&["family", "condition", "verdict", "m_hat", "witness"]);
    let mut matrix = serde_json::Map::new();
    let mut failures = Vec::new();
    let mut reports = Vec::new();
    for (audit, fails) in audits {
        let mut row = serde_json::Map::new();
        for rep in &audit.reports {
            table.push(vec![
                audit.family.as_str().into(),
                rep.condition_id.label().into(),
                verdict_name(rep.verdict).into(),
                rep.m_hat.into(),
                rep.witnesses.first().map_or(Field::Missing, |w| Field::Text(w.reason.clone())),
            ]);
            row.insert(rep.condition_id.label().into(), json!(rep.verdict));
        }
        matrix.insert(audit.family.clone(), row.into());
        failures.extend(fails);
        reports.push(audit);
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        table,
        report: json!({ "matrix": matrix, "audits": reports }),
        failures,
    })
}

pub fn run_probe_nu(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let family = cfg.single_family()?;
    let mp = diagnostics::probe_nu(&family, &cfg.eps_seq, &default_probes(), &cfg.scheme)?;
    let mut table = Table::new(&["probe", "center", "width", "eps", "pairing"]);
    for row in &mp.rows {
        for (eps, p) in cfg.eps_seq.iter().zip(&row.pairings) {
            table.push(vec![
                row.label.as_str().into(),
                row.probe.center.into(),
                row.probe.width.into(),
                (*eps).into(),
                (*p).into(),
            ]);
        }
    }
    let failures = mp.errors.iter().map(|e| Failure::new("probe", e.clone())).collect();
    let nu_hat = estimate_nu(&family, &mp, &cfg.scheme)?;
    Ok(ExperimentOutput {
        config: cfg.clone(),
        table,
        report: json!({ "probe": mp, "nu_hat": nu_hat }),
        failures,
    })
}

pub fn run_sphere_measure(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let family = cfg.single_family()?;
    let results: Vec<Result<crate::measures::SphericalMeasure>> = cfg
        .eps_seq
        .par_iter()
        .map(|&eps| diagnostics::sphere_measure(&family, eps, cfg.delta_for(eps), &cfg.scheme))
        .collect();
    let mut header = vec!["eps", "delta", "node"];
    let axes = ["sigma_1", "sigma_2", "sigma_3"];
    header.extend(&axes[..cfg.dim]);
    header.push("weight");
    let mut table = Table::new(&header);
    let mut failures = Vec::new();
    let mut measures = Vec::new();
    for (&eps, res) in cfg.eps_seq.iter().zip(results) {
        match res {
            Ok(mu) => {
                for (j, (node, w)) in mu.nodes.iter().zip(&mu.weights).enumerate() {
                    let mut row: Vec<Field> = vec![eps.into(), cfg.delta_for(eps).into(), j.into()];
                    row.extend(node.iter().map(|&c| Field::Num(c)));
                    row.push((*w).into());
                    table.push(row);
                }
                let a = mu.anisotropy();
                measures.push(json!({
                    "eps": eps,
                    "delta": cfg.delta_for(eps),
                    "total_mass": mu.total_mass(),
                    "anisotropy": a,
                    "eigenvalues": a.eigenvalues(),
                    "measure": mu,
                }));
            }
            Err(e) => failures.push(Failure::new(format!("eps={eps:e}"), e.to_string())),
        }
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        table,
        report: json!({ "family": family.id(), "dim": cfg.dim, "measures": measures }),
        failures,
    })
}

/// Default Parseval tolerance: 1e-5 on the line, 1e-4 in higher dimension.
pub fn parseval_tol(dim: usize) -> f64 {
    if dim == 1 {
        1e-5
    } else {
        1e-4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsevalRow {
    pub family: String,
    pub eps: f64,
    pub physical: Option<f64>,
    pub fourier: Option<f64>,
    pub discrepancy: Option<f64>,
    pub error: Option<String>,
}

pub fn parseval_discrepancy(physical: f64, fourier: f64) -> f64 {
    if physical == fourier {
        0.0
    } else {
        (physical - fourier).abs() / physical.abs().max(fourier.abs())
    }
}

pub fn run_parseval(cfg: &ExperimentConfig, cache: &EnergyCache) -> Result<ExperimentOutput> {
    let families = cfg.families()?;
    let u = cfg.function()?;
    let s = &cfg.scheme;
    let cells: Vec<(&KernelFamily, f64)> =
        families.iter().flat_map(|f| cfg.eps_seq.iter().map(move |&e| (f, e))).collect();
    let rows: Vec<ParsevalRow> = cells
        .par_iter()
        .map(|&(fam, eps)| {
            let p = physical(cache, &u, fam, eps, s);
            let f = fourier(cache, &u, fam, eps, s);
            let error = [&p, &f]
                .iter()
                .filter_map(|r| r.as_ref().err().map(|e| e.to_string()))
                .reduce(|a, b| a + "; " + &b);
            let (physical, fourier) = (p.ok().map(|e| e.value), f.ok().map(|e| e.value));
            ParsevalRow {
                family: fam.id().to_string(),
                eps,
                physical,
                fourier,
                discrepancy: physical.zip(fourier).map(|(a, b)| parseval_discrepancy(a, b)),
                error,
            }
        })
        .collect();
    let tol = cfg.tol.unwrap_or_else(|| parseval_tol(cfg.dim));
    let mut failures = Vec::new();
    let mut table = Table::new(&["family", "eps", "physical", "fourier", "discrepancy"]);
    for r in &rows {
        let scope = format!("{} eps={:e}", r.family, r.eps);
        if let Some(e) = &r.error {
            failures.push(Failure::new(scope.clone(), e.clone()));
        }
        if let Some(d) = r.discrepancy.filter(|&d| !(d <= tol)) {
            failures.push(Failure::new(scope, format!("discrepancy {d:.3e} exceeds {tol:.3e}")));
        }
        table.push(vec![
            r.family.as_str().into(),
            r.eps.into(),
            r.physical.into(),
            r.fourier.into(),
            r.discrepancy.into(),
        ]);
    }
    let max = rows.iter().filter_map(|r| r.discrepancy).fold(0.0, f64::max);
    Ok(ExperimentOutput {
        config: cfg.clone(),
        table,
        report: json!({ "function": u.id(), "dim": cfg.dim, "tol": tol, "max_discrepancy": max, "rows": rows }),
        failures,
    })
}

/// Both sides of the two rescaling identities for `ψ = û`:
/// `∫_{B(0,1/R)^c} |ψ_R|² = ∫_{B(0,1)^c} |ψ|²` and
/// `∫ |ξ|²|ψ_R|² = R^{−2} ∫ |ξ|²|ψ|²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub r: f64,
    pub exterior_rescaled: f64,
    pub exterior: f64,
    pub exterior_rel: f64,
    pub moment_rescaled: f64,
    pub moment: f64,
    pub moment_rel: f64,
}

pub fn scaling_identities(u: &TestFunction, r: f64, scheme: &QuadratureScheme) -> Result<ScalingRow> {
    let ur = u.rescale_fourier(r)?;
    let dim = u.dim();
    let hints = LineHints::default();
    let exterior_of = |v: &TestFunction, radius: f64| {
        integrate_region(&|xi: &[f64]| v.fourier_sq(xi), dim, Region::Complement { radius }, &hints, scheme)
    };
    let moment_of = |v: &TestFunction| {
        let f = |xi: &[f64]| xi.iter().map(|x| x * x).sum::<f64>() * v.fourier_sq(xi);
        integrate_region(&f, dim, Region::Full, &hints, scheme)
    };
    let exterior_rescaled = exterior_of(&ur, 1.0 / r)?.value;
    let exterior = exterior_of(u, 1.0)?.value;
    let moment_rescaled = moment_of(&ur)?.value;
    let moment = moment_of(u)?.value / (r * r);
    Ok(ScalingRow {
        r,
        exterior_rescaled,
        exterior,
        exterior_rel: relative_gap(exterior_rescaled, exterior),
        moment_rescaled,
        moment,
        moment_rel: relative_gap(moment_rescaled, moment),
    })
}

pub fn run_scaling(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let u = cfg.function()?;
    let results: Vec<Result<ScalingRow>> =
        cfg.r_grid.par_iter().map(|&r| scaling_identities(&u, r, &cfg.scheme)).collect();
    let tol = cfg.tol.unwrap_or(1e-10);
    let mut table = Table::new(&[
        "R",
        "exterior_rescaled",
        "exterior",
        "exterior_rel",
        "moment_rescaled",
        "moment",
        "moment_rel",
    ]);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&r, res) in cfg.r_grid.iter().zip(results) {
        match res {
            Ok(row) => {
                let worst = row.exterior_rel.max(row.moment_rel);
                if !(worst <= tol) {
                    failures.push(Failure::new(format!("R={r:e}"), format!("relative error {worst:.3e} exceeds {tol:.3e}")));
                }
                table.push(vec![
                    r.into(),
                    row.exterior_rescaled.into(),
                    row.exterior.into(),
                    row.exterior_rel.into(),
                    row.moment_rescaled.into(),
                    row.moment.into(),
                    row.moment_rel.into(),
                ]);
                rows.push(row);
            }
            Err(e) => failures.push(Failure::new(format!("R={r:e}"), e.to_string())),
        }
    }
    Ok(ExperimentOutput {
        config: cfg.clone(),
        table,
        report: json!({ "function": u.id(), "dim": cfg.dim, "tol": tol, "rows": rows }),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(experiment: Experiment, given: ConfigOverrides) -> ExperimentConfig {
        ExperimentConfig::resolve(experiment, given).unwrap()
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let file = ConfigOverrides { dim: Some(2), family: Some("fractional".into()), ..Default::default() };
        let flags = ConfigOverrides { family: Some("gaussian".into()), ..Default::default() };
        let c = cfg(Experiment::Converge, flags.over(file));
        assert_eq!((c.family.as_str(), c.dim), ("gaussian", 2));
        assert_eq!(c.eps_seq, diagnostics::default_eps_seq());
        assert_eq!(c.format, OutputFormat::Csv);
    }

    #[test]
    fn partial_scheme_in_json() {
        let o: ConfigOverrides = serde_json::from_str(r#"{"scheme": {"n_theta": 64}, "eps_seq": [0.5, 0.25]}"#).unwrap();
        let c = cfg(Experiment::Converge, o);
        assert_eq!(c.scheme.n_theta, 64);
        assert_eq!(c.scheme.r_min, QuadratureScheme::default().r_min);
        assert!(serde_json::from_str::<ConfigOverrides>(r#"{"famly": "x"}"#).is_err());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let bad = |o: ConfigOverrides| ExperimentConfig::resolve(Experiment::Converge, o).is_err();
        assert!(bad(ConfigOverrides { eps_seq: Some(vec![0.1, 0.2]), ..Default::default() }));
        assert!(bad(ConfigOverrides { family: Some("nope".into()), ..Default::default() }));
        assert!(bad(ConfigOverrides { function: Some("nope".into()), ..Default::default() }));
        assert!(bad(ConfigOverrides { experiment: Some(Experiment::Scaling), ..Default::default() }));
    }

    #[test]
    fn csv_has_seventeen_digits() {
        let mut t = Table::new(&["a", "b", "c"]);
        t.push(vec![0.1.into(), Field::Missing, "x,y".into()]);
        assert_eq!(t.to_csv(), "a,b,c\n1.0000000000000001e-1,,\"x,y\"\n");
        let back: f64 = "1.0000000000000001e-1".parse().unwrap();
        assert_eq!(back, 0.1);
    }

    #[test]
    fn zero_function_parseval_is_exactly_zero() {
        let c = cfg(
            Experiment::Parseval,
            ConfigOverrides { function: Some("zero".into()), ..Default::default() },
        );
        let out = run_parseval(&c, &EnergyCache::disabled()).unwrap();
        assert!(out.succeeded(), "{:?}", out.failures);
        for row in &out.table.rows {
            assert_eq!(row[2], Field::Num(0.0));
            assert_eq!(row[3], Field::Num(0.0));
        }
    }

    #[test]
    fn scaling_identities_hold() {
        let c = cfg(Experiment::Scaling, ConfigOverrides::default());
        let out = run_scaling(&c).unwrap();
        assert!(out.succeeded(), "{:?}", out.failures);
        let r1 = scaling_identities(&c.function().unwrap(), 1.0, &c.scheme).unwrap();
        assert_eq!(r1.exterior_rel, 0.0);
        assert_eq!(r1.moment_rel, 0.0);
        // off the dyadic lattice the two sides use different nodes
        for dim in 1..=2 {
            let u = builtin_function("gaussian_shifted", dim).unwrap();
            for r in [0.3, 3.0, 11.0] {
                let row = scaling_identities(&u, r, &c.scheme).unwrap();
                assert!(row.exterior_rel < 1e-10 && row.moment_rel < 1e-10, "{row:?}");
            }
        }
    }

    #[test]
    fn annulus_nu_hat_sits_on_the_unit_sphere() {
        let c = cfg(
            Experiment::Converge,
            ConfigOverrides {
                family: Some("annulus_bump".into()),
                eps_seq: Some((1..=7).map(|k| 0.5f64.powi(k)).collect()),
                ..Default::default()
            },
        );
        let study = run_converge(&c, &EnergyCache::disabled()).unwrap();
        assert_eq!(study.nu_hat.atoms, vec![vec![1.0], vec![-1.0]]);
        assert!((study.nu_hat.total_mass() - 2.0).abs() < 1e-6);
        let last = study.rows.last().unwrap();
        assert_eq!(last.predicted_local, Some(0.0));
        assert!(last.relative_gap.unwrap() < 1e-2, "{}", study.summary);
    }

    #[test]
    fn cache_round_trips_bits() {
        let dir = std::env::temp_dir().join(format!("bbm-cache-test-{}", std::process::id()));
        let cache = EnergyCache::in_dir(&dir);
        let key = json!({"k": 1});
        let v = EnergyEstimate { value: 0.1 + 0.2, abs_error_est: 1e-17, breakdown: None };
        let first = cache.get_or_compute(key.clone(), || Ok(v)).unwrap();
        let second = cache.get_or_compute(key, || panic!("should hit the cache")).unwrap();
        assert_eq!(first.value.to_bits(), second.value.to_bits());
        let _ = std::fs::remove_dir_all(dir);
    }
}
