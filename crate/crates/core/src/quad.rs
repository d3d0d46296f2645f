//! Radially decomposed quadrature over R^N, N ≤ 3.
//!
//! Every integral is written in polar form `∫ r^{N-1} ∫_{S^{N-1}} f(rσ) dσ dr`.
//! The radial line is cut into dyadic panels, each integrated with a
//! Gauss–Legendre pair of orders `p` and `2p`; the difference drives local
//! bisection and the error estimate. The piece of the line below the
//! innermost panel is extrapolated geometrically from the last three panels,
//! which is exact for power-law behaviour at the origin. Unbounded lines are
//! continued on dyadic annuli until a panel contributes less than
//! `tail_rel_cutoff` of the running total, or `tail_doublings` panels have
//! been added; a tail that fails to decay is reported as divergent.
//!
//! Panels are evaluated in parallel and reduced in panel order, so results do
//! not depend on the size of the worker pool.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("integral does not stabilize: {0}")]
    Divergence(String),
    #[error("integrand returned NaN at {point:?}")]
    Evaluation { point: Vec<f64> },
    #[error("relative error estimate {rel_err:.3e} above tolerance {tol:.3e}")]
    Accuracy { rel_err: f64, tol: f64 },
    #[error("invalid quadrature parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureScheme {
    /// Innermost dyadic point; the line below it is extrapolated.
    pub r_min: f64,
    /// Outermost dyadic point of the regular grid; tails continue past it.
    pub r_max: f64,
    pub nodes_per_panel: usize,
    /// Trapezoid nodes on the circle (N = 2).
    pub n_theta: usize,
    /// Gauss–Legendre nodes in cos θ (N = 3).
    pub n_polar: usize,
    /// Trapezoid nodes in φ (N = 3).
    pub n_azimuth: usize,
    /// Target relative accuracy of each panel.
    pub rel_tol: f64,
    /// Relative error estimate above which a result is rejected.
    pub accept_tol: f64,
    pub max_depth: usize,
    pub tail_doublings: usize,
    pub tail_rel_cutoff: f64,
    /// Oscillation periods allowed per panel when a frequency is supplied.
    pub periods_per_panel: f64,
    /// Periods resolved explicitly before an oscillatory tail is summed
    /// by series acceleration.
    pub resolved_periods: f64,
}

impl Default for QuadratureScheme {
    fn default() -> Self {
        Self {
            r_min: 1e-8,
            r_max: 1e6,
            nodes_per_panel: 32,
            n_theta: 256,
            n_polar: 64,
            n_azimuth: 128,
            rel_tol: 1e-9,
            accept_tol: 1e-6,
            max_depth: 40,
            tail_doublings: 60,
            tail_rel_cutoff: 1e-14,
            periods_per_panel: 2.0,
            resolved_periods: 200.0,
        }
    }
}

impl QuadratureScheme {
    pub fn validate(&self) -> Result<(), QuadError> {
        let bad = |m: &str| Err(QuadError::Parameter(m.to_string()));
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            return bad("need 0 < r_min < r_max < inf");
        }
        if self.nodes_per_panel < 2 {
            return bad("nodes_per_panel must be at least 2");
        }
        if self.n_theta < 4 || self.n_polar < 2 || self.n_azimuth < 4 {
            return bad("angular rule too coarse");
        }
        if !(self.rel_tol > 0.0 && self.accept_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.periods_per_panel > 0.0 && self.resolved_periods >= self.periods_per_panel) {
            return bad("oscillation controls must be positive");
        }
        Ok(())
    }

    /// Angular rule for dimension `dim` built from this scheme's node counts.
    pub fn angular_rule(&self, dim: usize) -> Result<AngularRule, QuadError> {
        match dim {
            1 => Ok(AngularRule::line()),
            2 => Ok(AngularRule::circle(self.n_theta)),
            3 => Ok(AngularRule::sphere(self.n_polar, self.n_azimuth)),
            _ => Err(QuadError::Parameter(format!("dimension {dim} not supported (N ≤ 3)"))),
        }
    }
}

/// Nodes on S^{N-1} with weights summing to the surface measure.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularRule {
    pub dim: usize,
    nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AngularRule {
    pub fn line() -> Self {
        Self { dim: 1, nodes: vec![1.0, -1.0], weights: vec![1.0, 1.0] }
    }

    pub fn circle(n: usize) -> Self {
        let h = 2.0 * PI / n as f64;
        let mut nodes = Vec::with_capacity(2 * n);
        for k in 0..n {
            let t = h * k as f64;
            nodes.push(t.cos());
            nodes.push(t.sin());
        }
        Self { dim: 2, nodes, weights: vec![h; n] }
    }

    pub fn sphere(n_polar: usize, n_azimuth: usize) -> Self {
        let gl = gauss_legendre(n_polar);
        let h = 2.0 * PI / n_azimuth as f64;
        let mut nodes = Vec::with_capacity(3 * n_polar * n_azimuth);
        let mut weights = Vec::with_capacity(n_polar * n_azimuth);
        for (&c, &wc) in gl.nodes.iter().zip(&gl.weights) {
            let s = (1.0 - c * c).max(0.0).sqrt();
            for k in 0..n_azimuth {
                let phi = h * k as f64;
                nodes.extend_from_slice(&[s * phi.cos(), s * phi.sin(), c]);
                weights.push(wc * h);
            }
        }
        Self { dim: 3, nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.dim..(j + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.nodes.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Gauss–Legendre rule on [-1, 1].
#[derive(Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Cached Gauss–Legendre rule of order `n` (Newton iteration on P_n).
pub fn gauss_legendre(n: usize) -> Arc<GaussLegendre> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("gauss-legendre cache poisoned");
    map.entry(n).or_insert_with(|| Arc::new(compute_gauss_legendre(n))).clone()
}

fn compute_gauss_legendre(n: usize) -> GaussLegendre {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    GaussLegendre { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integration region in R^N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Full,
    Ball { radius: f64 },
    Annulus { inner: f64, outer: f64 },
    Complement { radius: f64 },
}

impl Region {
    /// Radial interval `[lo, hi)`; `hi` may be infinite.
    pub fn radial_bounds(&self) -> Result<(f64, f64), QuadError> {
        let check = |r: f64| {
            if r > 0.0 && r.is_finite() {
                Ok(r)
            } else {
                Err(QuadError::Parameter(format!("region radius must be positive, got {r}")))
            }
        };
        match *self {
            Region::Full => Ok((0.0, f64::INFINITY)),
            Region::Ball { radius } => Ok((0.0, check(radius)?)),
            Region::Complement { radius } => Ok((check(radius)?, f64::INFINITY)),
            Region::Annulus { inner, outer } => {
                let inner = check(inner)?;
                let outer = check(outer)?;
                if outer < inner {
                    return Err(QuadError::Parameter("annulus outer radius below inner".into()));
                }
                Ok((inner, outer))
            }
        }
    }

    pub fn contains_radius(&self, r: f64) -> bool {
        match *self {
            Region::Full => true,
            Region::Ball { radius } => r < radius,
            Region::Complement { radius } => r >= radius,
            Region::Annulus { inner, outer } => r >= inner && r < outer,
        }
    }
}

/// Short / medium / long range split of an integral at radii `δ` and `1/δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeBreakdown {
    pub delta: f64,
    pub short: f64,
    pub medium: f64,
    pub long: f64,
}

impl RangeBreakdown {
    pub fn total(&self) -> f64 {
        self.short + self.medium + self.long
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub value: f64,
    pub abs_error_est: f64,
    pub breakdown: Option<RangeBreakdown>,
}

impl EnergyEstimate {
    pub fn zero() -> Self {
        Self { value: 0.0, abs_error_est: 0.0, breakdown: None }
    }

    pub fn scaled(self, c: f64) -> Self {
        Self {
            value: c * self.value,
            abs_error_est: c.abs() * self.abs_error_est,
            breakdown: self.breakdown.map(|b| RangeBreakdown {
                delta: b.delta,
                short: c * b.short,
                medium: c * b.medium,
                long: c * b.long,
            }),
        }
    }

    pub fn plus(self, other: Self) -> Self {
        Self {
            value: self.value + other.value,
            abs_error_est: self.abs_error_est + other.abs_error_est,
            breakdown: None,
        }
    }

    pub fn relative_error(&self) -> f64 {
        if self.value == 0.0 {
            if self.abs_error_est == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.abs_error_est / self.value.abs()
        }
    }
}

/// Extra structure of a radial integrand that the panel layout should honour.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LineHints {
    /// Radii where the integrand has kinks or jumps.
    pub breakpoints: Vec<f64>,
    /// Angular frequency of an oscillating factor; panels are sized to it.
    pub frequency: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct PanelResult {
    value: f64,
    err: f64,
    abs: f64,
}

enum LineFailure {
    Nan(f64),
    Quad(QuadError),
}

impl From<QuadError> for LineFailure {
    fn from(e: QuadError) -> Self {
        LineFailure::Quad(e)
    }
}

/// `∫_lo^hi h(r) dr` for a one-dimensional integrand on the radial half-line.
///
/// `h` must already include the Jacobian `r^{N-1}`.
pub fn integrate_line<F>(
    h: &F,
    lo: f64,
    hi: f64,
    hints: &LineHints,
    scheme: &QuadratureScheme,
) -> Result<EnergyEstimate, QuadError>
where
    F: Fn(f64) -> f64 + Sync,
{
    integrate_line_inner(h, lo, hi, hints, scheme).map_err(|f| match f {
        LineFailure::Nan(r) => QuadError::Evaluation { point: vec![r] },
        LineFailure::Quad(e) => e,
    })
}

fn integrate_line_inner<F>(
    h: &F,
    lo: f64,
    hi: f64,
    hints: &LineHints,
    scheme: &QuadratureScheme,
) -> Result<EnergyEstimate, LineFailure>
where
    F: Fn(f64) -> f64 + Sync,
{
    scheme.validate()?;
    if !(lo >= 0.0) || hi.is_nan() {
        return Err(QuadError::Parameter(format!("bad radial interval [{lo}, {hi})")).into());
    }
    if hi <= lo {
        return Ok(EnergyEstimate::zero());
    }
    let low = gauss_legendre(scheme.nodes_per_panel);
    let high = gauss_legendre(2 * scheme.nodes_per_panel);
    let rules = Rules { low: &low, high: &high };

    let points = panel_points(lo, hi, hints, scheme);
    let panels: Vec<(f64, f64)> = points.windows(2).map(|w| (w[0], w[1])).collect();

    // First pass: one Gauss pair per panel, used to fix the global scale.
    let first: Vec<PanelResult> = panels
        .par_iter()
        .map(|&(a, b)| gauss_pair(h, a, b, &rules))
        .collect::<Result<_, _>>()?;
    let scale: f64 = first.iter().map(|p| p.value.abs()).sum();
    let floor = 1e-3 * scheme.rel_tol * scale;

    let refined: Vec<PanelResult> = panels
        .par_iter()
        .zip(first.par_iter())
        .map(|(&(a, b), &p)| refine(h, a, b, p, floor, 0, scheme, &rules))
        .collect::<Result<_, _>>()?;

    let mut value = 0.0;
    let mut err = 0.0;
    let mut abs = 0.0;
    for p in &refined {
        value += p.value;
        err += p.err;
        abs += p.abs;
    }

    if lo == 0.0 {
        let origin = origin_piece(h, points[0], floor, scheme, &rules)?;
        value += origin.value;
        err += origin.err;
        abs += origin.abs;
    }

    if hi.is_infinite() {
        let start = *points.last().expect("panel grid is never empty");
        let tail = tail_piece(h, start, value, floor, scheme, &rules)?;
        value += tail.value;
        err += tail.err;
        abs += tail.abs;
    }

    err += 4.0 * f64::EPSILON * abs;
    Ok(EnergyEstimate { value, abs_error_est: err, breakdown: None })
}

struct Rules<'a> {
    low: &'a GaussLegendre,
    high: &'a GaussLegendre,
}

fn panel_points(lo: f64, hi: f64, hints: &LineHints, scheme: &QuadratureScheme) -> Vec<f64> {
    let mut pts = Vec::new();
    if lo > 0.0 {
        let top = if hi.is_finite() { hi } else { scheme.r_max.max(2.0 * lo) };
        let mut r = lo;
        while r < top {
            pts.push(r);
            r *= 2.0;
        }
        pts.push(top);
    } else if hi.is_finite() {
        let mut r = hi;
        pts.push(r);
        while r > scheme.r_min {
            r *= 0.5;
            pts.push(r);
        }
        pts.reverse();
    } else {
        let kmin = scheme.r_min.log2().floor() as i32;
        let kmax = scheme.r_max.log2().ceil() as i32;
        pts.extend((kmin..=kmax).map(|k| 2f64.powi(k)));
    }
    let first = pts[0];
    let last = *pts.last().unwrap();
    pts.extend(hints.breakpoints.iter().copied().filter(|&b| b > first && b < last));
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs());

    if let Some(freq) = hints.frequency.filter(|f| *f > 0.0 && f.is_finite()) {
        let width = scheme.periods_per_panel * 2.0 * PI / freq;
        let mut split = Vec::with_capacity(pts.len());
        for w in pts.windows(2) {
            let n = ((w[1] - w[0]) / width).ceil().max(1.0) as usize;
            for k in 0..n {
                split.push(w[0] + (w[1] - w[0]) * k as f64 / n as f64);
            }
        }
        split.push(last);
        pts = split;
    }
    pts
}

fn gauss_pair<F>(h: &F, a: f64, b: f64, rules: &Rules) -> Result<PanelResult, LineFailure>
where
    F: Fn(f64) -> f64 + Sync,
{
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let mut q_low = 0.0;
    for (&x, &w) in rules.low.nodes.iter().zip(&rules.low.weights) {
        let r = c + hw * x;
        let v = h(r);
        if v.is_nan() {
            return Err(LineFailure::Nan(r));
        }
        q_low += w * v;
    }
    let mut q_high = 0.0;
    let mut abs = 0.0;
    for (&x, &w) in rules.high.nodes.iter().zip(&rules.high.weights) {
        let r = c + hw * x;
        let v = h(r);
        if v.is_nan() {
            return Err(LineFailure::Nan(r));
        }
        q_high += w * v;
        abs += w * v.abs();
    }
    Ok(PanelResult {
        value: hw * q_high,
        err: (hw * (q_high - q_low)).abs(),
        abs: hw * abs,
    })
}

#[allow(clippy::too_many_arguments)]
fn refine<F>(
    h: &F,
    a: f64,
    b: f64,
    p: PanelResult,
    floor: f64,
    depth: usize,
    scheme: &QuadratureScheme,
    rules: &Rules,
) -> Result<PanelResult, LineFailure>
where
    F: Fn(f64) -> f64 + Sync,
{
    if p.err <= (scheme.rel_tol * p.value.abs()).max(floor) || depth >= scheme.max_depth {
        return Ok(p);
    }
    let m = 0.5 * (a + b);
    if m <= a || m >= b {
        return Ok(p);
    }
    let left = gauss_pair(h, a, m, rules)?;
    let right = gauss_pair(h, m, b, rules)?;
    let left = refine(h, a, m, left, 0.5 * floor, depth + 1, scheme, rules)?;
    let right = refine(h, m, b, right, 0.5 * floor, depth + 1, scheme, rules)?;
    Ok(PanelResult {
        value: left.value + right.value,
        err: left.err + right.err,
        abs: left.abs + right.abs,
    })
}

// ∫_0^p0 h from the three dyadic panels below p0 plus a geometric remainder.
fn origin_piece<F>(
    h: &F,
    p0: f64,
    floor: f64,
    scheme: &QuadratureScheme,
    rules: &Rules,
) -> Result<PanelResult, LineFailure>
where
    F: Fn(f64) -> f64 + Sync,
{
    let mut q = [PanelResult { value: 0.0, err: 0.0, abs: 0.0 }; 3];
    for (k, slot) in q.iter_mut().enumerate() {
        let b = p0 * 0.5f64.powi(k as i32);
        let a = 0.5 * b;
        let first = gauss_pair(h, a, b, rules)?;
        *slot = refine(h, a, b, first, floor, 0, scheme, rules)?;
    }
    let mut out = PanelResult {
        value: q.iter().map(|p| p.value).sum(),
        err: q.iter().map(|p| p.err).sum(),
        abs: q.iter().map(|p| p.abs).sum(),
    };
    let (q1, q2, q3) = (q[0].value, q[1].value, q[2].value);
    if q3 == 0.0 {
        return Ok(out);
    }
    let t = q3 / q2;
    let t_prev = q2 / q1;
    if !(t > 0.0 && t < 1.0 - 1e-12) {
        if q3.abs() <= 1e-15 * out.abs {
            out.err += q3.abs();
            return Ok(out);
        }
        return Err(QuadError::Divergence(format!(
            "integrand not integrable at the origin (panel ratio {t:.6})"
        ))
        .into());
    }
    let rem = q3 * t / (1.0 - t);
    let rem_prev = if t_prev > 0.0 && t_prev < 1.0 { q3 * t_prev / (1.0 - t_prev) } else { 2.0 * rem };
    out.value += rem;
    out.err += (rem - rem_prev).abs() + rem.abs() * 1e-14 / (1.0 - t);
    out.abs += rem.abs();
    Ok(out)
}

fn tail_piece<F>(
    h: &F,
    start: f64,
    head: f64,
    floor: f64,
    scheme: &QuadratureScheme,
    rules: &Rules,
) -> Result<PanelResult, LineFailure>
where
    F: Fn(f64) -> f64 + Sync,
{
    let mut out = PanelResult { value: 0.0, err: 0.0, abs: 0.0 };
    let mut r = start;
    let mut prev: Option<f64> = None;
    for _ in 0..scheme.tail_doublings {
        let first = gauss_pair(h, r, 2.0 * r, rules)?;
        let p = refine(h, r, 2.0 * r, first, floor, 0, scheme, rules)?;
        out.value += p.value;
        out.err += p.err;
        out.abs += p.abs;
        let total = head + out.value;
        if p.value.abs() <= scheme.tail_rel_cutoff * total.abs() || (p.value == 0.0 && total == 0.0) {
            if let Some(pv) = prev {
                let t = p.value / pv;
                if t > 0.0 && t < 1.0 {
                    let rem = p.value * t / (1.0 - t);
                    out.value += rem;
                    out.err += rem.abs();
                }
            }
            return Ok(out);
        }
        prev = Some(p.value);
        r *= 2.0;
    }
    // Ran out of doublings: accept only a clearly geometric decay.
    let last_panel = prev.unwrap_or(0.0);
    let second = gauss_pair(h, r, 2.0 * r, rules)?.value;
    let t = if last_panel != 0.0 { second / last_panel } else { 0.0 };
    if t > 0.0 && t < 0.9 {
        let rem = second / (1.0 - t);
        out.value += rem;
        out.err += rem.abs();
        Ok(out)
    } else {
        Err(QuadError::Divergence(format!(
            "tail panels stop decaying beyond r = {r:.3e} (ratio {t:.6})"
        ))
        .into())
    }
}

fn check_accuracy(est: &EnergyEstimate, scheme: &QuadratureScheme) -> Result<(), QuadError> {
    let rel = est.abs_error_est / est.value.abs().max(f64::MIN_POSITIVE);
    if est.abs_error_est > scheme.accept_tol * est.value.abs() && est.abs_error_est > 1e-14 {
        return Err(QuadError::Accuracy { rel_err: rel, tol: scheme.accept_tol });
    }
    Ok(())
}

/// `∫_region r^{N-1} g(r) dr` where `g(r)` is the sphere integral of the
/// integrand at radius `r`.
pub fn integrate_radial<G>(
    g: &G,
    dim: usize,
    region: Region,
    hints: &LineHints,
    scheme: &QuadratureScheme,
) -> Result<EnergyEstimate, QuadError>
where
    G: Fn(f64) -> f64 + Sync,
{
    check_dim(dim)?;
    let (lo, hi) = region.radial_bounds()?;
    let power = (dim - 1) as i32;
    let h = |r: f64| {
        let v = g(r);
        if v == 0.0 {
            0.0
        } else {
            r.powi(power) * v
        }
    };
    let est = integrate_line(&h, lo, hi, hints, scheme)?;
    check_accuracy(&est, scheme)?;
    Ok(est)
}

/// `∫_region f(z) dz` for a general integrand, using the scheme's angular rule.
pub fn integrate_region<F>(
    f: &F,
    dim: usize,
    region: Region,
    hints: &LineHints,
    scheme: &QuadratureScheme,
) -> Result<EnergyEstimate, QuadError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check_dim(dim)?;
    let rule = scheme.angular_rule(dim)?;
    let sphere_sum = |r: f64| {
        let mut z = [0.0; 3];
        let mut acc = 0.0;
        for (sigma, w) in rule.iter() {
            for (zi, si) in z.iter_mut().zip(sigma) {
                *zi = r * si;
            }
            acc += w * f(&z[..dim]);
        }
        acc
    };
    integrate_radial(&sphere_sum, dim, region, hints, scheme).map_err(|e| match e {
        QuadError::Evaluation { point } => {
            // recover the offending direction on the reported radius
            let r = point[0];
            let mut z = [0.0; 3];
            for (sigma, _) in rule.iter() {
                for (zi, si) in z.iter_mut().zip(sigma) {
                    *zi = r * si;
                }
                if f(&z[..dim]).is_nan() {
                    return QuadError::Evaluation { point: z[..dim].to_vec() };
                }
            }
            QuadError::Evaluation { point }
        }
        other => other,
    })
}

/// `∫_{R^N} f(z) dz`.
pub fn integrate_rn<F>(
    f: &F,
    dim: usize,
    hints: &LineHints,
    scheme: &QuadratureScheme,
) -> Result<EnergyEstimate, QuadError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    integrate_region(f, dim, Region::Full, hints, scheme)
}

/// Integral over `R^N` split at radii `δ` and `1/δ`; the total is the sum of
/// the three pieces.
pub fn integrate_split<G>(
    g: &G,
    dim: usize,
    delta: f64,
    hints: &LineHints,
    scheme: &QuadratureScheme,
) -> Result<EnergyEstimate, QuadError>
where
    G: Fn(f64) -> f64 + Sync,
{
    if !(delta > 0.0 && delta < 1.0) {
        return Err(QuadError::Parameter(format!("split radius δ must lie in (0,1), got {delta}")));
    }
    let short = integrate_radial(g, dim, Region::Ball { radius: delta }, hints, scheme)?;
    let medium = integrate_radial(g, dim, Region::Annulus { inner: delta, outer: 1.0 / delta }, hints, scheme)?;
    let long = integrate_radial(g, dim, Region::Complement { radius: 1.0 / delta }, hints, scheme)?;
    Ok(EnergyEstimate {
        value: short.value + medium.value + long.value,
        abs_error_est: short.abs_error_est + medium.abs_error_est + long.abs_error_est,
        breakdown: Some(RangeBreakdown {
            delta,
            short: short.value,
            medium: medium.value,
            long: long.value,
        }),
    })
}

fn check_dim(dim: usize) -> Result<(), QuadError> {
    if (1..=3).contains(&dim) {
        Ok(())
    } else {
        Err(QuadError::Parameter(format!("dimension {dim} not supported (N ≤ 3)")))
    }
}

/// `∫_start^∞ amp(r) · osc(freq · r) dr` for a slowly varying amplitude and an
/// oscillating factor with asymptotic half-period `π`.
///
/// The line is cut into half-period intervals and the partial sums are
/// accelerated with Wynn's ε-algorithm.
pub fn oscillatory_tail<A, O>(
    amp: &A,
    osc: &O,
    freq: f64,
    start: f64,
    breakpoints: &[f64],
    scale: f64,
    scheme: &QuadratureScheme,
) -> Result<EnergyEstimate, QuadError>
where
    A: Fn(f64) -> f64 + Sync,
    O: Fn(f64) -> f64 + Sync,
{
    if !(freq > 0.0 && freq.is_finite()) {
        return Err(QuadError::Parameter(format!("oscillation frequency must be positive, got {freq}")));
    }
    let low = gauss_legendre(scheme.nodes_per_panel);
    let high = gauss_legendre(2 * scheme.nodes_per_panel);
    let rules = Rules { low: &low, high: &high };
    let h = |r: f64| {
        let a = amp(r);
        if a == 0.0 {
            0.0
        } else {
            a * osc(freq * r)
        }
    };
    let half = PI / freq;
    let mut wynn = Wynn::default();
    let mut partial = 0.0;
    let mut err = 0.0;
    let mut abs = 0.0;
    let mut last_est = f64::NAN;
    let mut stable = 0;
    let mut quiet = 0;
    let mut a = start;
    let scale = scale.abs().max(f64::MIN_POSITIVE);
    for n in 0..2000 {
        let b = a + half;
        let mut cuts = vec![a];
        cuts.extend(breakpoints.iter().copied().filter(|&x| x > a && x < b));
        cuts.push(b);
        let mut piece = 0.0;
        for w in cuts.windows(2) {
            let p = gauss_pair(&h, w[0], w[1], &rules).map_err(|f| match f {
                LineFailure::Nan(r) => QuadError::Evaluation { point: vec![r] },
                LineFailure::Quad(e) => e,
            })?;
            piece += p.value;
            err += p.err;
            abs += p.abs;
        }
        partial += piece;
        let est = wynn.push(partial);
        if piece.abs() <= 1e-17 * scale {
            quiet += 1;
            if quiet >= 3 {
                return Ok(EnergyEstimate {
                    value: partial,
                    abs_error_est: err + 4.0 * f64::EPSILON * abs,
                    breakdown: None,
                });
            }
        } else {
            quiet = 0;
        }
        if n >= 8 && (est - last_est).abs() <= 1e-15 * scale {
            stable += 1;
            if stable >= 2 {
                return Ok(EnergyEstimate {
                    value: est,
                    abs_error_est: err + (est - last_est).abs() + 4.0 * f64::EPSILON * abs,
                    breakdown: None,
                });
            }
        } else {
            stable = 0;
        }
        last_est = est;
        a = b;
    }
    Err(QuadError::Divergence("oscillatory tail series did not converge".into()))
}

/// Incremental Wynn ε-algorithm on a sequence of partial sums.
#[derive(Debug, Default, Clone)]
pub struct Wynn {
    diagonal: Vec<f64>,
}

impl Wynn {
    /// Adds the next partial sum and returns the current best limit estimate.
    pub fn push(&mut self, s: f64) -> f64 {
        let mut next = Vec::with_capacity(self.diagonal.len() + 1);
        next.push(s);
        for k in 0..self.diagonal.len() {
            let d = next[k] - self.diagonal[k];
            if d == 0.0 || !d.is_finite() {
                break;
            }
            let below = if k == 0 { 0.0 } else { self.diagonal[k - 1] };
            let v = below + 1.0 / d;
            if !v.is_finite() {
                break;
            }
            next.push(v);
        }
        self.diagonal = next;
        let last_even = (self.diagonal.len() - 1) & !1;
        self.diagonal[last_even]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme() -> QuadratureScheme {
        QuadratureScheme::default()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let gl = gauss_legendre(32);
        let sum: f64 = gl.weights.iter().sum();
        assert!((sum - 2.0).abs() < 1e-14);
        let q: f64 = gl.nodes.iter().zip(&gl.weights).map(|(x, w)| w * x.powi(62)).sum();
        assert!((q - 2.0 / 63.0).abs() < 1e-14);
    }

    #[test]
    fn angular_weights_sum_to_surface_measure() {
        let s = scheme();
        assert!((s.angular_rule(1).unwrap().total_weight() - 2.0).abs() < 1e-12);
        assert!((s.angular_rule(2).unwrap().total_weight() - 2.0 * PI).abs() < 1e-12);
        assert!((s.angular_rule(3).unwrap().total_weight() - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn panel_points_strictly_increasing() {
        let s = scheme();
        let hints = LineHints { breakpoints: vec![0.3, 1.0, 1.0 + 1e-17], frequency: Some(7.0) };
        for (lo, hi) in [(0.0, f64::INFINITY), (0.0, 2.0), (0.5, 3.0), (0.1, f64::INFINITY)] {
            let pts = panel_points(lo, hi, &hints, &s);
            assert!(pts.windows(2).all(|w| w[0] < w[1]), "{lo} {hi}");
        }
    }

    #[test]
    fn gaussian_in_plane() {
        let f = |z: &[f64]| (-(z[0] * z[0] + z[1] * z[1])).exp();
        let est = integrate_rn(&f, 2, &LineHints::default(), &scheme()).unwrap();
        assert!((est.value - PI).abs() < 1e-10, "{}", est.value);
    }

    #[test]
    fn inverse_square_root_singularity() {
        let f = |z: &[f64]| z[0].abs().powf(-0.5);
        let est = integrate_region(&f, 1, Region::Ball { radius: 1.0 }, &LineHints::default(), &scheme()).unwrap();
        assert!((est.value - 4.0).abs() < 1e-10, "{}", est.value);
    }

    #[test]
    fn zero_integrand_is_exactly_zero() {
        let f = |_: &[f64]| 0.0;
        for dim in 1..=3 {
            let est = integrate_rn(&f, dim, &LineHints::default(), &scheme()).unwrap();
            assert_eq!(est.value, 0.0);
        }
    }

    #[test]
    fn inverse_square_outside_unit_ball() {
        let f = |z: &[f64]| 1.0 / (z[0] * z[0]);
        let est =
            integrate_region(&f, 1, Region::Complement { radius: 1.0 }, &LineHints::default(), &scheme()).unwrap();
        assert!((est.value - 2.0).abs() < 1e-10, "{}", est.value);
    }

    #[test]
    fn null_annulus_and_disk_area() {
        let f = |_: &[f64]| 1.0;
        let est = integrate_region(&f, 2, Region::Annulus { inner: 1.5, outer: 1.5 }, &LineHints::default(), &scheme())
            .unwrap();
        assert_eq!(est.value, 0.0);
        let est = integrate_region(&f, 2, Region::Ball { radius: 2.0 }, &LineHints::default(), &scheme()).unwrap();
        assert!((est.value - 4.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn slow_tail_is_flagged_divergent() {
        let f = |z: &[f64]| 1.0 / z[0].abs();
        let err = integrate_region(&f, 1, Region::Complement { radius: 1.0 }, &LineHints::default(), &scheme())
            .unwrap_err();
        assert!(matches!(err, QuadError::Divergence(_)), "{err:?}");
    }

    #[test]
    fn non_integrable_origin_is_flagged() {
        let f = |z: &[f64]| 1.0 / (z[0] * z[0]);
        let err =
            integrate_region(&f, 1, Region::Ball { radius: 1.0 }, &LineHints::default(), &scheme()).unwrap_err();
        assert!(matches!(err, QuadError::Divergence(_)), "{err:?}");
    }

    #[test]
    fn nan_reports_the_point() {
        let f = |z: &[f64]| if z[1] > 0.5 && z[0] > 0.0 { f64::NAN } else { (-z[0] * z[0] - z[1] * z[1]).exp() };
        match integrate_rn(&f, 2, &LineHints::default(), &scheme()) {
            Err(QuadError::Evaluation { point }) => {
                assert_eq!(point.len(), 2);
                assert!(point[1] > 0.5 && point[0] > 0.0);
            }
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn oscillatory_tail_of_cosine_over_square() {
        let s = scheme();
        let amp = |t: f64| 1.0 / (t * t);
        let est = oscillatory_tail(&amp, &f64::cos, 1.0, 1.0, &[], 1.0, &s).unwrap();
        let want = -0.084_410_950_559_573_89; // mpmath quadosc
        assert!((est.value - want).abs() < 1e-13, "{}", est.value);
    }

    #[test]
    fn wynn_accelerates_alternating_series() {
        // ln 2 = 1 - 1/2 + 1/3 - ...
        let mut w = Wynn::default();
        let mut s = 0.0;
        let mut est = 0.0;
        for k in 1..=20 {
            s += if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
            est = w.push(s);
        }
        assert!((est - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn split_sums_to_whole() {
        let g = |r: f64| 2.0 * (-r * r).exp() * (1.0 + r);
        let s = scheme();
        let whole = integrate_radial(&g, 1, Region::Full, &LineHints::default(), &s).unwrap();
        let split = integrate_split(&g, 1, 0.1, &LineHints::default(), &s).unwrap();
        let b = split.breakdown.unwrap();
        assert_eq!(split.value, b.short + b.medium + b.long);
        assert!((split.value - whole.value).abs() <= split.abs_error_est + whole.abs_error_est + 1e-15);
    }

    #[test]
    fn deterministic_across_pool_sizes() {
        let g = |r: f64| r.powf(-0.9) * (-r).exp() * (3.0 * r).cos().abs();
        let s = scheme();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| integrate_radial(&g, 1, Region::Full, &LineHints::default(), &s).unwrap().value)
        };
        assert_eq!(run(1).to_bits(), run(3).to_bits());
    }
}
