//! Numerical audits of kernel families: the uniform-decay condition (i) and
//! its variant (i′), the Lévy conditions, the ω_ε-weighted bound, locality
//! (ii) via probe pairings, and estimators for the limit measures.
//!
//! Every "limsup as ε → 0" is replaced by a declared proxy computed from the
//! tail of a finite decreasing ε sequence; see [`TrendSummary`].

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::multiplier;
use crate::error::{Error, Result};
use crate::kernels::KernelFamily;
use crate::measures::{AnisotropyMatrix, SphericalMeasure};
use crate::quad::{EnergyEstimate, QuadratureScheme, RangeBreakdown, Region};
use crate::special::sphere_area;

/// `2^{-1}, …, 2^{-12}`.
pub fn default_eps_seq() -> Vec<f64> {
    (1..=12).map(|k| 0.5f64.powi(k)).collect()
}

/// `10^{-2}, …, 10^{3}`, 11 log-spaced points.
pub fn default_r_grid() -> Vec<f64> {
    (0..11).map(|k| 10f64.powf(-2.0 + 0.5 * k as f64)).collect()
}

/// Log-slope in `1/ε` beyond which a monotone trend counts as growing or
/// decaying rather than settled.
pub const TREND_SLOPE: f64 = 0.1;
/// Log-log slope of the per-R bound beyond which it is taken as unbounded in R.
pub const R_GROWTH_SLOPE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionId {
    I,
    IPrime,
    Levy,
    Levy2,
    OmegaSuff,
    Ii,
}

impl ConditionId {
    pub fn label(&self) -> &'static str {
        match self {
            ConditionId::I => "i",
            ConditionId::IPrime => "i_prime",
            ConditionId::Levy => "levy",
            ConditionId::Levy2 => "levy2",
            ConditionId::OmegaSuff => "omega_suff",
            ConditionId::Ii => "ii",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    /// Strictly increasing over the last three ε with log-slope ≥ [`TREND_SLOPE`].
    Growing,
    /// Strictly decreasing with log-slope ≤ −[`TREND_SLOPE`].
    Decaying,
    Settled,
}

/// How the limsup proxy of one series was formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub trend: Trend,
    /// Log-slope of the last three values against `ln(1/ε)`.
    pub slope: f64,
    /// Max of the last three values for settled series, the Aitken limit
    /// (clamped to `[0, last]`) for decaying ones, `None` when growing.
    pub proxy: Option<f64>,
}

/// Aitken Δ² limit of three consecutive terms; returns the last term when the
/// sequence is not geometric enough to extrapolate.
pub fn aitken(x0: f64, x1: f64, x2: f64) -> f64 {
    let d1 = x1 - x0;
    let d2 = x2 - x1;
    let den = d2 - d1;
    if den.abs() <= 1e-14 * (x0.abs() + x1.abs() + x2.abs()) || d1 == 0.0 {
        return x2;
    }
    let ratio = d2 / d1;
    if !(ratio > -1.0 && ratio < 1.0) {
        return x2;
    }
    x2 - d2 * d2 / den
}

/// Classifies the last three entries of a series sampled at decreasing ε.
pub fn summarize_trend(eps: &[f64], values: &[f64]) -> TrendSummary {
    let n = values.len();
    assert!(n >= 3 && eps.len() == n, "trend needs at least three points");
    let (e, v) = (&eps[n - 3..], &values[n - 3..]);
    let span = (e[0] / e[2]).ln();
    let slope = if v[0] > 0.0 && v[2] > 0.0 {
        (v[2] / v[0]).ln() / span
    } else if v[2] > v[0] {
        f64::INFINITY
    } else if v[2] < v[0] {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    let increasing = v[0] < v[1] && v[1] < v[2];
    let decreasing = v[0] > v[1] && v[1] > v[2];
    if increasing && slope >= TREND_SLOPE {
        TrendSummary { trend: Trend::Growing, slope, proxy: None }
    } else if decreasing && slope <= -TREND_SLOPE {
        let lim = aitken(v[0], v[1], v[2]).clamp(0.0, v[2]);
        TrendSummary { trend: Trend::Decaying, slope, proxy: Some(lim) }
    } else {
        TrendSummary { trend: Trend::Settled, slope, proxy: Some(v.iter().copied().fold(f64::MIN, f64::max)) }
    }
}

/// One cell of a condition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub eps: f64,
    /// `R` for (i)/(i′), 1 for the single-integral checks.
    pub r: f64,
    pub value: Option<f64>,
    pub abs_error_est: Option<f64>,
    pub error: Option<String>,
}

/// Limsup proxy of one row (fixed R) of a condition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub r: f64,
    pub trend: Option<TrendSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub eps: f64,
    pub r: f64,
    pub value: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition_id: ConditionId,
    pub family: String,
    pub dim: usize,
    pub eps_seq: Vec<f64>,
    pub grid: Vec<f64>,
    pub values: Vec<Cell>,
    pub rows: Vec<RowSummary>,
    /// Estimated uniform bound; `None` stands for +∞.
    pub m_hat: Option<f64>,
    pub verdict: Verdict,
    pub witnesses: Vec<Witness>,
    pub notes: Vec<String>,
}

fn check_eps_seq(eps: &[f64]) -> Result<()> {
    if eps.len() < 3 {
        return Err(Error::Parameter("ε sequence needs at least three entries".into()));
    }
    if eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) || eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Parameter("ε sequence must be strictly decreasing in (0,1)".into()));
    }
    Ok(())
}

fn check_r_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid.iter().any(|&r| !(r > 0.0 && r.is_finite())) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("R grid must be strictly increasing and positive".into()));
    }
    Ok(())
}

fn fill_cells<F>(eps_seq: &[f64], grid: &[f64], f: F) -> Vec<Cell>
where
    F: Fn(f64, f64) -> Result<EnergyEstimate> + Sync,
{
    let idx: Vec<(f64, f64)> = grid.iter().flat_map(|&r| eps_seq.iter().map(move |&e| (e, r))).collect();
    idx.par_iter()
        .map(|&(eps, r)| match f(eps, r) {
            Ok(est) => Cell { eps, r, value: Some(est.value), abs_error_est: Some(est.abs_error_est), error: None },
            Err(e) => Cell { eps, r, value: None, abs_error_est: None, error: Some(e.to_string()) },
        })
        .collect()
}

enum Bound {
    /// Limsup proxy per R, then the sup over R (conditions (i), (i′), levy2, ω).
    Limsup,
    /// Uniform bound over all ε (Lévy).
    Uniform,
}

fn assemble(
    id: ConditionId,
    family: &KernelFamily,
    eps_seq: &[f64],
    grid: &[f64],
    cells: Vec<Cell>,
    bound: Bound,
) -> ConditionReport {
    let n_eps = eps_seq.len();
    let failed = cells.iter().filter(|c| c.value.is_none()).count();
    let mut notes = Vec::new();
    let mut witnesses = Vec::new();
    let mut rows = Vec::new();
    let mut proxies = Vec::new();
    let mut growing = false;
    for (ri, &r) in grid.iter().enumerate() {
        let row = &cells[ri * n_eps..(ri + 1) * n_eps];
        let vals: Option<Vec<f64>> = row.iter().map(|c| c.value).collect();
        let trend = vals.as_ref().map(|v| summarize_trend(eps_seq, v));
        if let (Some(t), Some(v)) = (&trend, &vals) {
            match (t.proxy, &bound) {
                (None, _) => {
                    growing = true;
                    witnesses.push(Witness {
                        eps: eps_seq[n_eps - 1],
                        r,
                        value: v[n_eps - 1],
                        reason: format!("grows like ε^{:.3} along the ε tail", -t.slope),
                    });
                }
                (Some(p), Bound::Limsup) => proxies.push((r, p)),
                (Some(_), Bound::Uniform) => {
                    proxies.push((r, v.iter().copied().fold(f64::MIN, f64::max)))
                }
            }
        }
        rows.push(RowSummary { r, trend });
    }

    // A bound that keeps growing at either end of the R grid is unbounded in R.
    let mut unbounded_in_r = false;
    if proxies.len() >= 2 {
        let ends = [(proxies[proxies.len() - 2], proxies[proxies.len() - 1], 1.0), (proxies[1], proxies[0], -1.0)];
        for ((r_in, m_in), (r_out, m_out), dir) in ends {
            if m_out > 1e-8 && m_in > 0.0 {
                let slope = (m_out / m_in).ln() / (r_out / r_in).ln();
                if dir * slope >= R_GROWTH_SLOPE {
                    unbounded_in_r = true;
                    witnesses.push(Witness {
                        eps: eps_seq[n_eps - 1],
                        r: r_out,
                        value: m_out,
                        reason: format!("bound grows like R^{slope:.3} at the edge of the R grid"),
                    });
                }
            }
        }
    }

    let m_hat = if growing || unbounded_in_r {
        None
    } else {
        Some(proxies.iter().map(|p| p.1).fold(0.0, f64::max))
    };
    let verdict = if failed * 10 > cells.len() {
        notes.push(format!("{failed} of {} cells failed to integrate", cells.len()));
        Verdict::Inconclusive
    } else if m_hat.is_none() {
        Verdict::Fail
    } else if failed > 0 {
        notes.push(format!("{failed} cells failed to integrate and were skipped"));
        Verdict::Pass
    } else {
        Verdict::Pass
    };
    match bound {
        Bound::Limsup => notes.push(
            "limsup proxy: max of the last three ε, Aitken limit for monotonically decaying tails".into(),
        ),
        Bound::Uniform => notes.push("uniform bound: max over the whole ε sequence".into()),
    }
    ConditionReport {
        condition_id: id,
        family: family.id().to_string(),
        dim: family.dim(),
        eps_seq: eps_seq.to_vec(),
        grid: grid.to_vec(),
        values: cells,
        rows,
        m_hat,
        verdict,
        witnesses,
        notes,
    }
}

/// Condition (i): `∫_{B(0,R)} ρ_ε + R² ∫_{B(0,R)^c} ρ_ε/|z|²` bounded in R
/// along ε → 0.
pub fn check_condition_i(
    family: &KernelFamily,
    eps_seq: &[f64],
    r_grid: &[f64],
    scheme: &QuadratureScheme,
) -> Result<ConditionReport> {
    check_eps_seq(eps_seq)?;
    check_r_grid(r_grid)?;
    let cells = fill_cells(eps_seq, r_grid, |eps, r| {
        let ball = family.ball_mass(eps, r, scheme)?;
        let tail = family.tail_mass(eps, r, scheme)?;
        Ok(ball.plus(tail.scaled(r * r)))
    });
    Ok(assemble(ConditionId::I, family, eps_seq, r_grid, cells, Bound::Limsup))
}

/// Condition (i′): `R² ∫ ρ_ε/(R² + |z|²)` bounded in R along ε → 0.
pub fn check_condition_i_prime(
    family: &KernelFamily,
    eps_seq: &[f64],
    r_grid: &[f64],
    scheme: &QuadratureScheme,
) -> Result<ConditionReport> {
    check_eps_seq(eps_seq)?;
    check_r_grid(r_grid)?;
    let cells = fill_cells(eps_seq, r_grid, |eps, r| {
        let k = family.at(eps)?;
        let r2 = r * r;
        k.radial_moment(Region::Full, &|t| r2 / (r2 + t * t), &[r], scheme)
    });
    Ok(assemble(ConditionId::IPrime, family, eps_seq, r_grid, cells, Bound::Limsup))
}

/// Lévy conditions: `∫_{B(0,1)} ρ_ε + ∫_{B(0,1)^c} ρ_ε/|z|²` bounded
/// uniformly in ε.
pub fn check_levy(family: &KernelFamily, eps_seq: &[f64], scheme: &QuadratureScheme) -> Result<ConditionReport> {
    check_eps_seq(eps_seq)?;
    let cells = fill_cells(eps_seq, &[1.0], |eps, _| {
        Ok(family.ball_mass(eps, 1.0, scheme)?.plus(family.tail_mass(eps, 1.0, scheme)?))
    });
    Ok(assemble(ConditionId::Levy, family, eps_seq, &[1.0], cells, Bound::Uniform))
}

/// `limsup ∫ ρ_ε/(1 + |z|²) < ∞`.
pub fn check_levy2(family: &KernelFamily, eps_seq: &[f64], scheme: &QuadratureScheme) -> Result<ConditionReport> {
    check_eps_seq(eps_seq)?;
    let cells = fill_cells(eps_seq, &[1.0], |eps, _| {
        family.at(eps)?.radial_moment(Region::Full, &|t| 1.0 / (1.0 + t * t), &[1.0], scheme)
    });
    Ok(assemble(ConditionId::Levy2, family, eps_seq, &[1.0], cells, Bound::Limsup))
}

/// `limsup ∫ ρ_ε/(1 + ω_ε|z|²) < ∞`, with `ω_ε ≡ 1` for families that do
/// not carry a decay parameter.
pub fn check_omega_sufficient(
    family: &KernelFamily,
    eps_seq: &[f64],
    scheme: &QuadratureScheme,
) -> Result<ConditionReport> {
    check_eps_seq(eps_seq)?;
    let cells = fill_cells(eps_seq, &[1.0], |eps, _| {
        let w = family.omega(eps).unwrap_or(1.0);
        let knee = 1.0 / w.sqrt();
        family.at(eps)?.radial_moment(Region::Full, &|t| 1.0 / (1.0 + w * t * t), &[knee], scheme)
    });
    let mut report = assemble(ConditionId::OmegaSuff, family, eps_seq, &[1.0], cells, Bound::Limsup);
    if family.omega(eps_seq[0]).is_none() {
        report.notes.push("family has no ω_ε parameter; ω_ε ≡ 1 used".into());
    }
    Ok(report)
}

/// Continuous, compactly supported radial probe: `f = 1` for
/// `| |z| − center | ≤ width/2`, a cosine ramp down to 0 at distance `width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub center: f64,
    pub width: f64,
}

impl Probe {
    pub fn origin(width: f64) -> Self {
        Self { center: 0.0, width }
    }

    pub fn shell(center: f64, width: f64) -> Self {
        Self { center, width }
    }

    pub fn label(&self) -> String {
        format!("c={}:w={}", self.center, self.width)
    }

    pub fn is_origin(&self) -> bool {
        self.center == 0.0
    }

    pub fn eval(&self, r: f64) -> f64 {
        let d = (r - self.center).abs() / self.width;
        if d <= 0.5 {
            1.0
        } else if d >= 1.0 {
            0.0
        } else {
            0.5 * (1.0 + (2.0 * PI * (d - 0.5)).cos())
        }
    }

    pub fn value_at_origin(&self) -> f64 {
        self.eval(0.0)
    }

    /// Radii where the probe changes form.
    pub fn breakpoints(&self) -> Vec<f64> {
        let c = self.center;
        let w = self.width;
        [c - w, c - 0.5 * w, c + 0.5 * w, c + w].into_iter().filter(|&x| x > 0.0).collect()
    }

    pub fn support(&self) -> Region {
        let lo = self.center - self.width;
        let hi = self.center + self.width;
        if lo <= 0.0 {
            Region::Ball { radius: hi }
        } else {
            Region::Annulus { inner: lo, outer: hi }
        }
    }
}

/// Two origin plateaus and shells at `|z| ∈ {0.5, 1, 2}` of widths
/// `{0.25, 0.5}`.
pub fn default_probes() -> Vec<Probe> {
    let mut out = vec![Probe::origin(0.25), Probe::origin(0.5)];
    for c in [0.5, 1.0, 2.0] {
        for w in [0.25, 0.5] {
            out.push(Probe::shell(c, w));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub probe: Probe,
    pub label: String,
    pub pairings: Vec<Option<f64>>,
    pub trend: Option<TrendSummary>,
    /// Aitken limit of the last three pairings.
    pub extrapolated: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureProbe {
    pub family: String,
    pub dim: usize,
    pub eps_seq: Vec<f64>,
    pub rows: Vec<ProbeRow>,
    /// Dirac weight estimated from the origin probes.
    pub alpha_hat: Option<f64>,
    pub delta_likeness: bool,
    pub witness: Option<String>,
    pub errors: Vec<String>,
}

impl MeasureProbe {
    /// Shell probe with the largest extrapolated pairing, if any is positive.
    pub fn heaviest_shell(&self) -> Option<&ProbeRow> {
        self.rows
            .iter()
            .filter(|r| !r.probe.is_origin())
            .filter(|r| r.extrapolated.is_some_and(|x| x > 0.0))
            .max_by(|a, b| a.extrapolated.partial_cmp(&b.extrapolated).unwrap())
    }
}

/// Relative tolerance on vanishing shell pairings and on the agreement of the
/// two origin probes.
pub const PROBE_TOL: f64 = 1e-3;

/// `⟨ν_ε, f⟩ = ∫ ρ_ε f` for each probe and ε.
pub fn probe_nu(
    family: &KernelFamily,
    eps_seq: &[f64],
    probes: &[Probe],
    scheme: &QuadratureScheme,
) -> Result<MeasureProbe> {
    check_eps_seq(eps_seq)?;
    if probes.is_empty() {
        return Err(Error::Parameter("no probes supplied".into()));
    }
    let idx: Vec<(usize, usize)> =
        (0..probes.len()).flat_map(|p| (0..eps_seq.len()).map(move |e| (p, e))).collect();
    let results: Vec<Result<f64>> = idx
        .par_iter()
        .map(|&(p, e)| {
            let probe = probes[p];
            let k = family.at(eps_seq[e])?;
            Ok(k.radial_moment(probe.support(), &|r| probe.eval(r), &probe.breakpoints(), scheme)?.value)
        })
        .collect();
    let mut errors = Vec::new();
    let mut rows = Vec::new();
    for (p, probe) in probes.iter().enumerate() {
        let pairings: Vec<Option<f64>> = results[p * eps_seq.len()..(p + 1) * eps_seq.len()]
            .iter()
            .map(|r| match r {
                Ok(v) => Some(*v),
                Err(e) => {
                    errors.push(format!("{}: {e}", probe.label()));
                    None
                }
            })
            .collect();
        let full: Option<Vec<f64>> = pairings.iter().copied().collect();
        let trend = full.as_ref().map(|v| summarize_trend(eps_seq, v));
        let extrapolated = full.as_ref().map(|v| {
            let n = v.len();
            aitken(v[n - 3], v[n - 2], v[n - 1]).max(0.0)
        });
        rows.push(ProbeRow { probe: *probe, label: probe.label(), pairings, trend, extrapolated });
    }

    let origin: Vec<&ProbeRow> = rows.iter().filter(|r| r.probe.is_origin()).collect();
    let alpha_candidates: Vec<f64> = origin
        .iter()
        .filter(|r| r.trend.as_ref().is_some_and(|t| t.trend != Trend::Growing))
        .filter_map(|r| r.extrapolated.map(|x| x / r.probe.value_at_origin()))
        .collect();
    let alpha_hat = (!alpha_candidates.is_empty() && alpha_candidates.len() == origin.len())
        .then(|| alpha_candidates.iter().sum::<f64>() / alpha_candidates.len() as f64);

    let mut witness = None;
    let scale = alpha_hat.unwrap_or(0.0).max(1.0);
    for r in rows.iter().filter(|r| !r.probe.is_origin()) {
        match r.extrapolated {
            Some(x) if x > PROBE_TOL * scale => {
                witness.get_or_insert(format!("{} extrapolates to {x:.6e}, not 0", r.label));
            }
            None => {
                witness.get_or_insert(format!("{} could not be evaluated", r.label));
            }
            _ => {}
        }
    }
    match alpha_hat {
        None => {
            witness.get_or_insert("origin probes do not settle to a finite weight".to_string());
        }
        Some(a) => {
            let spread = alpha_candidates.iter().map(|x| (x - a).abs()).fold(0.0, f64::max);
            if spread > PROBE_TOL * a.max(f64::MIN_POSITIVE) && a > 0.0 {
                witness.get_or_insert(format!("origin probes disagree: {alpha_candidates:?}"));
            }
        }
    }
    Ok(MeasureProbe {
        family: family.id().to_string(),
        dim: family.dim(),
        eps_seq: eps_seq.to_vec(),
        rows,
        alpha_hat,
        delta_likeness: witness.is_none(),
        witness,
        errors,
    })
}

/// Condition (ii) as a report: pass iff the probe pairings look like `αδ₀`.
pub fn check_condition_ii(
    family: &KernelFamily,
    eps_seq: &[f64],
    probes: &[Probe],
    scheme: &QuadratureScheme,
) -> Result<(ConditionReport, MeasureProbe)> {
    let mp = probe_nu(family, eps_seq, probes, scheme)?;
    let mut values = Vec::new();
    for (pi, row) in mp.rows.iter().enumerate() {
        for (e, v) in eps_seq.iter().zip(&row.pairings) {
            values.push(Cell { eps: *e, r: pi as f64, value: *v, abs_error_est: None, error: None });
        }
    }
    let failed = values.iter().filter(|c| c.value.is_none()).count();
    let verdict = if failed * 10 > values.len() {
        Verdict::Inconclusive
    } else if mp.delta_likeness {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let report = ConditionReport {
        condition_id: ConditionId::Ii,
        family: family.id().to_string(),
        dim: family.dim(),
        eps_seq: eps_seq.to_vec(),
        grid: (0..probes.len()).map(|i| i as f64).collect(),
        values,
        rows: Vec::new(),
        m_hat: mp.alpha_hat,
        verdict,
        witnesses: mp
            .witness
            .iter()
            .map(|w| Witness { eps: eps_seq[eps_seq.len() - 1], r: 0.0, value: 0.0, reason: w.clone() })
            .collect(),
        notes: vec![
            "grid indexes the probe list; probes: ".to_string()
                + &probes.iter().map(|p| p.label()).collect::<Vec<_>>().join(", "),
            "a finite probe family is evidence for weak-* convergence to αδ₀, not proof".into(),
        ],
    };
    Ok((report, mp))
}

/// `δ = ε^{1/2}`.
pub fn default_delta(eps: f64) -> f64 {
    eps.sqrt()
}

/// `μ_ε^{(δ)}` on the scheme's angular nodes:
/// `w_j = a_j · w(σ_j) · ∫_0^δ t^{N−1} m_ε(t) dt`.
pub fn sphere_measure(
    family: &KernelFamily,
    eps: f64,
    delta: f64,
    scheme: &QuadratureScheme,
) -> Result<SphericalMeasure> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("δ must lie in (0,1), got {delta}")));
    }
    let k = family.at(eps)?;
    let dim = family.dim();
    let ball = match k.closed_ball_mass(delta) {
        Some(v) => v,
        None => k.radial_moment(Region::Ball { radius: delta }, &|_| 1.0, &[], scheme)?.value,
    };
    let radial = ball / sphere_area(dim);
    let rule = scheme.angular_rule(dim)?;
    let nodes: Vec<Vec<f64>> = rule.iter().map(|(s, _)| normalize(s)).collect();
    let weights = rule.iter().map(|(s, a)| a * k.angular(s) * radial).collect();
    let mut mu = SphericalMeasure::new(dim, nodes, weights)?;
    mu.delta = Some(delta);
    mu.eps = Some(eps);
    Ok(mu)
}

fn normalize(s: &[f64]) -> Vec<f64> {
    let n = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    s.iter().map(|x| x / n).collect()
}

/// `A = Σ w_j σ_j ⊗ σ_j`.
pub fn anisotropy(mu: &SphericalMeasure) -> AnisotropyMatrix {
    mu.anisotropy()
}

/// `I_ε(ξ; ·)` on `B(0,δ)`, `{δ < |z| < 1/δ}` and `B(0,1/δ)^c`.
pub fn range_decomposition(
    family: &KernelFamily,
    eps: f64,
    xi: &[f64],
    delta: f64,
    scheme: &QuadratureScheme,
) -> Result<RangeBreakdown> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("δ must lie in (0,1), got {delta}")));
    }
    let m = |region| multiplier(family, eps, xi, region, scheme).map(|s| s.value);
    Ok(RangeBreakdown {
        delta,
        short: m(Region::Ball { radius: delta })?,
        medium: m(Region::Annulus { inner: delta, outer: 1.0 / delta })?,
        long: m(Region::Complement { radius: 1.0 / delta })?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme() -> QuadratureScheme {
        QuadratureScheme::default()
    }

    #[test]
    fn aitken_recovers_geometric_limits() {
        let x = |k: i32| 3.0 + 0.5f64.powi(k);
        assert!((aitken(x(1), x(2), x(3)) - 3.0).abs() < 1e-14);
        assert_eq!(aitken(1.0, 1.0, 1.0), 1.0);
        // alternating growth is not extrapolated
        assert_eq!(aitken(1.0, 3.0, 7.0), 7.0);
    }

    #[test]
    fn trend_classes() {
        let eps = [0.25, 0.125, 0.0625];
        assert_eq!(summarize_trend(&eps, &[1.0, 2.0, 4.0]).trend, Trend::Growing);
        let d = summarize_trend(&eps, &[4.0, 2.0, 1.0]);
        assert_eq!(d.trend, Trend::Decaying);
        assert_eq!(d.proxy, Some(0.0));
        let s = summarize_trend(&eps, &[2.0, 2.0 + 1e-9, 2.0 + 2e-9]);
        assert_eq!(s.trend, Trend::Settled);
        assert_eq!(s.proxy, Some(2.0 + 2e-9));
    }

    #[test]
    fn fractional_passes_condition_i_with_bound_two() {
        let fam = KernelFamily::fractional(1).unwrap();
        let r = check_condition_i(&fam, &default_eps_seq(), &default_r_grid(), &scheme()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.m_hat.unwrap() <= 2.0);
    }

    #[test]
    fn constant_one_fails_condition_i_but_passes_levy() {
        let fam = KernelFamily::constant_one();
        let s = scheme();
        let r = check_condition_i(&fam, &default_eps_seq(), &default_r_grid(), &s).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.m_hat.is_none() && !r.witnesses.is_empty());
        let l = check_levy(&fam, &default_eps_seq(), &s).unwrap();
        assert_eq!(l.verdict, Verdict::Pass);
        for c in &l.values {
            assert!((c.value.unwrap() - 4.0).abs() < 1e-14);
        }
        let l2 = check_levy2(&fam, &default_eps_seq(), &s).unwrap();
        assert_eq!(l2.verdict, Verdict::Pass);
        assert!((l2.m_hat.unwrap() - PI).abs() < 1e-9);
        let ip = check_condition_i_prime(&fam, &default_eps_seq(), &default_r_grid(), &s).unwrap();
        assert_eq!(ip.verdict, Verdict::Fail);
        // R² ∫ dz/(R²+z²) = πR
        for c in &ip.values {
            assert!((c.value.unwrap() / (PI * c.r) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn blowing_up_boxes_fail_levy() {
        let s = scheme();
        let one = KernelFamily::box_indicator(1, 1.0).unwrap();
        assert_eq!(check_levy(&one, &default_eps_seq(), &s).unwrap().verdict, Verdict::Fail);
        let two = KernelFamily::box_indicator(1, 2.0).unwrap();
        assert_eq!(check_levy2(&two, &default_eps_seq(), &s).unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn omega_condition() {
        let s = scheme();
        let sc = KernelFamily::scaled_constant(1.0).unwrap();
        assert_eq!(check_omega_sufficient(&sc, &default_eps_seq(), &s).unwrap().verdict, Verdict::Fail);
        assert_eq!(
            check_condition_i(&sc, &default_eps_seq(), &default_r_grid(), &s).unwrap().verdict,
            Verdict::Pass
        );
        let g = KernelFamily::gaussian_mollifier(1).unwrap();
        assert_eq!(check_omega_sufficient(&g, &default_eps_seq(), &s).unwrap().verdict, Verdict::Pass);
        let z = KernelFamily::zero(1).unwrap();
        let zr = check_omega_sufficient(&z, &default_eps_seq(), &s).unwrap();
        assert_eq!(zr.verdict, Verdict::Pass);
        assert_eq!(zr.m_hat, Some(0.0));
    }

    #[test]
    fn probes_see_the_dirac_weight() {
        let s = scheme();
        let g = KernelFamily::gaussian_mollifier(1).unwrap();
        let mp = probe_nu(&g, &default_eps_seq(), &default_probes(), &s).unwrap();
        assert!(mp.delta_likeness, "{:?}", mp.witness);
        assert!((mp.alpha_hat.unwrap() - 2.0).abs() < 1e-9);

        let a = KernelFamily::annulus_bump(1, 1.0).unwrap();
        let mp = probe_nu(&a, &default_eps_seq(), &default_probes(), &s).unwrap();
        assert!(!mp.delta_likeness);
        let inner = probe_nu(&a, &[0.4, 0.2, 0.1], &[Probe::origin(0.25)], &s).unwrap();
        assert!(inner.rows[0].pairings.iter().all(|p| *p == Some(0.0)));
        assert_eq!(mp.heaviest_shell().unwrap().probe.center, 1.0);
    }

    #[test]
    fn fractional_shell_pairings_vanish_like_power_difference() {
        // ⟨ν_ε, 1_{δ<|z|<R}⟩ = R^{2ε} − δ^{2ε} over the two rays, halved
        let fam = KernelFamily::fractional(1).unwrap();
        let k = fam.at(0.01).unwrap();
        let v = k.radial_moment(Region::Annulus { inner: 0.5, outer: 2.0 }, &|_| 1.0, &[], &scheme()).unwrap();
        let want = 0.5 * (2f64.powf(0.02) - 0.5f64.powf(0.02));
        assert!((v.value / want - 1.0).abs() < 1e-10);
        let mp = probe_nu(&fam, &default_eps_seq(), &default_probes(), &scheme()).unwrap();
        assert!(mp.delta_likeness, "{:?}", mp.witness);
        assert!((mp.alpha_hat.unwrap() - 0.5).abs() < 1e-3);
    }

    #[test]
    fn sphere_measure_examples() {
        let s = scheme();
        let fam = KernelFamily::fractional(1).unwrap();
        for &(eps, delta) in &[(0.5, 0.3), (0.01, 0.1)] {
            let mu = sphere_measure(&fam, eps, delta, &s).unwrap();
            for w in &mu.weights {
                assert!((w - 0.25 * f64::powf(delta, 2.0 * eps)).abs() < 1e-15);
            }
        }
        let g = KernelFamily::gaussian_mollifier(2).unwrap();
        let mu = sphere_measure(&g, 0.1, 0.3, &s).unwrap();
        let w0 = mu.weights[0];
        assert!(mu.weights.iter().all(|w| (w - w0).abs() <= 1e-10 * w0));
        let a = anisotropy(&mu);
        assert!((a.trace() - mu.total_mass()).abs() < 1e-12);
    }

    #[test]
    fn aniso_sphere_measure_has_expected_matrix() {
        let fam = KernelFamily::from_id("aniso:a2=0.5", 2).unwrap();
        let eps = 0.01;
        let mu = sphere_measure(&fam, eps, 0.1, &scheme()).unwrap();
        let m = mu.total_mass();
        let a = anisotropy(&mu);
        assert!((a.a[0][0] - 0.5 * m * 1.25).abs() < 1e-12 * m);
        assert!((a.a[1][1] - 0.5 * m * 0.75).abs() < 1e-12 * m);
        assert!(a.a[0][1].abs() < 1e-12 * m);
    }

    #[test]
    fn long_range_bound() {
        let fam = KernelFamily::fractional(1).unwrap();
        let s = scheme();
        let b = range_decomposition(&fam, 0.01, &[1.0], 0.1, &s).unwrap();
        assert!(b.long <= 2.0 * 2.0 * 0.01);
        let full = multiplier(&fam, 0.01, &[1.0], Region::Full, &s).unwrap().value;
        assert!((b.total() - full).abs() <= 1e-9 * full);
        let z = range_decomposition(&fam, 0.01, &[0.0], 0.1, &s).unwrap();
        assert_eq!((z.short, z.medium, z.long), (0.0, 0.0, 0.0));
    }
}
