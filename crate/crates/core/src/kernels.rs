//! Kernel families `ρ_ε : R^N → [0, ∞)`, `ε ∈ (0, 1)`.
//!
//! Every family in the catalog factors as `ρ_ε(rσ) = m_ε(r) · w(σ)` with an
//! angular weight `w` of unit mean on the sphere; radial families have
//! `w ≡ 1`. The factorization lets masses and sphere measures be computed
//! from one-dimensional radial integrals.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, EnergyEstimate, LineHints, QuadratureScheme, Region};
use crate::special::{erf, sphere_area};

/// Radius, in units of ε, beyond which the Gaussian profile is below
/// `1e-40` of its peak.
pub const GAUSS_CUTOFF: f64 = 13.572_088_082_974_531;

/// One term `a cos(kθ) + b sin(kθ)` of a direction weight on the circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: u32,
    pub cos: f64,
    pub sin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// Mass-2 Gaussian mollifier with standard deviation ε.
    Gaussian,
    /// `ε / (2 |z|^{N-2ε})`, the normalized Gagliardo kernel with `s = 1 - ε`.
    Fractional,
    /// `ρ_ε ≡ 1` on the line.
    ConstantOne,
    /// Triangular radial bump of mass 2 on `r0 - ε < |z| < r0 + ε`.
    AnnulusBump { r0: f64 },
    /// Gaussian radial profile times a positive trigonometric weight (N = 2).
    AnisoMollifier { harmonics: Vec<Harmonic> },
    /// `ρ_ε ≡ ω_ε^{1/4}` on the line, with `ω_ε = ε^p`.
    ScaledConstant { omega_exponent: f64 },
    /// `ε^{-p}` on the unit ball.
    Box { height_exponent: f64 },
    Zero,
    Tabulated(Arc<KernelTable>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelFamily {
    id: String,
    dim: usize,
    kind: KernelKind,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (N={})", self.id, self.dim)
    }
}

fn check_dim(dim: usize) -> Result<usize> {
    if (1..=3).contains(&dim) {
        Ok(dim)
    } else {
        Err(Error::Parameter(format!("dimension must be 1, 2 or 3, got {dim}")))
    }
}

impl KernelFamily {
    pub fn gaussian_mollifier(dim: usize) -> Result<Self> {
        Ok(Self { id: "gaussian".into(), dim: check_dim(dim)?, kind: KernelKind::Gaussian })
    }

    pub fn fractional(dim: usize) -> Result<Self> {
        Ok(Self { id: "fractional".into(), dim: check_dim(dim)?, kind: KernelKind::Fractional })
    }

    pub fn constant_one() -> Self {
        Self { id: "constant1".into(), dim: 1, kind: KernelKind::ConstantOne }
    }

    pub fn annulus_bump(dim: usize, r0: f64) -> Result<Self> {
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::Parameter(format!("annulus radius must be positive, got {r0}")));
        }
        Ok(Self { id: format!("annulus:r0={r0}"), dim: check_dim(dim)?, kind: KernelKind::AnnulusBump { r0 } })
    }

    pub fn aniso_mollifier(harmonics: Vec<Harmonic>) -> Result<Self> {
        let amplitude: f64 = harmonics.iter().map(|h| h.cos.abs() + h.sin.abs()).sum();
        if harmonics.iter().any(|h| h.order == 0) {
            return Err(Error::Parameter("direction weight harmonics must have order ≥ 1".into()));
        }
        if !(amplitude < 1.0) {
            return Err(Error::Parameter(format!(
                "direction weight must stay positive: Σ(|a_k|+|b_k|) = {amplitude} ≥ 1"
            )));
        }
        let params = harmonics
            .iter()
            .map(|h| format!("a{k}={},b{k}={}", h.cos, h.sin, k = h.order))
            .collect::<Vec<_>>()
            .join(",");
        Ok(Self { id: format!("aniso:{params}"), dim: 2, kind: KernelKind::AnisoMollifier { harmonics } })
    }

    pub fn scaled_constant(omega_exponent: f64) -> Result<Self> {
        if !(omega_exponent > 0.0) {
            return Err(Error::Parameter("ω_ε = ε^p needs p > 0".into()));
        }
        Ok(Self {
            id: format!("scaled_constant:p={omega_exponent}"),
            dim: 1,
            kind: KernelKind::ScaledConstant { omega_exponent },
        })
    }

    pub fn box_indicator(dim: usize, height_exponent: f64) -> Result<Self> {
        Ok(Self {
            id: format!("box:p={height_exponent}"),
            dim: check_dim(dim)?,
            kind: KernelKind::Box { height_exponent },
        })
    }

    pub fn zero(dim: usize) -> Result<Self> {
        Ok(Self { id: "zero".into(), dim: check_dim(dim)?, kind: KernelKind::Zero })
    }

    pub fn tabulated(dim: usize, table: KernelTable) -> Result<Self> {
        Ok(Self {
            id: format!("table:{}", table.source),
            dim: check_dim(dim)?,
            kind: KernelKind::Tabulated(Arc::new(table)),
        })
    }

    /// Resolves an id such as `fractional`, `gaussian`, `constant1`,
    /// `annulus:r0=1.0`, `aniso:a2=0.5`, `scaled_constant:p=1`, `box:p=1`,
    /// `zero` or `table:<path.csv>`.
    pub fn from_id(spec: &str, dim: usize) -> Result<Self> {
        let (name, rest) = match spec.split_once(':') {
            Some((n, r)) => (n.trim(), Some(r.trim())),
            None => (spec.trim(), None),
        };
        if name == "table" {
            let path = rest.ok_or_else(|| Error::Lookup("table kernel needs a path: table:<file.csv>".into()))?;
            return Self::tabulated(dim, KernelTable::from_path(path)?);
        }
        let params = parse_params(rest.unwrap_or(""))?;
        let get = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
        let only_line = |fam: Self| {
            if dim == 1 {
                Ok(fam)
            } else {
                Err(Error::Parameter(format!("{} is only defined for N = 1", fam.id)))
            }
        };
        let family = match name {
            "gaussian" | "gaussian_mollifier" | "mollifier" => Self::gaussian_mollifier(dim)?,
            "fractional" => Self::fractional(dim)?,
            "constant1" | "constant_one" => only_line(Self::constant_one())?,
            "annulus" | "annulus_bump" => Self::annulus_bump(dim, get("r0", 1.0))?,
            "aniso" | "aniso_mollifier" => {
                if dim != 2 {
                    return Err(Error::Parameter("aniso_mollifier is only defined for N = 2".into()));
                }
                let mut orders: Vec<u32> = params
                    .keys()
                    .filter_map(|k| k.get(1..).and_then(|n| n.parse().ok()))
                    .collect();
                orders.sort_unstable();
                orders.dedup();
                let harmonics = if orders.is_empty() {
                    vec![Harmonic { order: 2, cos: 0.5, sin: 0.0 }]
                } else {
                    orders
                        .into_iter()
                        .map(|k| Harmonic { order: k, cos: get(&format!("a{k}"), 0.0), sin: get(&format!("b{k}"), 0.0) })
                        .collect()
                };
                Self::aniso_mollifier(harmonics)?
            }
            "scaled_constant" => only_line(Self::scaled_constant(get("p", 1.0))?)?,
            "box" => Self::box_indicator(dim, get("p", 1.0))?,
            "zero" => Self::zero(dim)?,
            other => return Err(Error::Lookup(format!("unknown kernel family '{other}'"))),
        };
        Ok(family)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn is_radial(&self) -> bool {
        !matches!(self.kind, KernelKind::AnisoMollifier { .. })
    }

    /// Named real parameters of the family.
    pub fn params(&self) -> BTreeMap<String, f64> {
        let mut p = BTreeMap::new();
        match &self.kind {
            KernelKind::AnnulusBump { r0 } => {
                p.insert("r0".into(), *r0);
            }
            KernelKind::AnisoMollifier { harmonics } => {
                for h in harmonics {
                    p.insert(format!("a{}", h.order), h.cos);
                    p.insert(format!("b{}", h.order), h.sin);
                }
            }
            KernelKind::ScaledConstant { omega_exponent } => {
                p.insert("p".into(), *omega_exponent);
            }
            KernelKind::Box { height_exponent } => {
                p.insert("p".into(), *height_exponent);
            }
            _ => {}
        }
        p
    }

    /// Radius of the sphere on which the kernel mass concentrates, if the
    /// family has one.
    pub fn concentration_radius(&self) -> Option<f64> {
        match self.kind {
            KernelKind::AnnulusBump { r0 } => Some(r0),
            _ => None,
        }
    }

    /// `ω_ε` for families built from a decay family.
    pub fn omega(&self, eps: f64) -> Option<f64> {
        match self.kind {
            KernelKind::ScaledConstant { omega_exponent } => Some(eps.powf(omega_exponent)),
            _ => None,
        }
    }

    /// Binds the family to one `ε`, validating it.
    pub fn at(&self, eps: f64) -> Result<KernelAt<'_>> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Parameter(format!("ε must lie in (0, 1), got {eps}")));
        }
        let slice = match &self.kind {
            KernelKind::Tabulated(t) => Some(t.slice(eps)?),
            _ => None,
        };
        let radial_scale = match &self.kind {
            KernelKind::Gaussian | KernelKind::AnisoMollifier { .. } => {
                2.0 * (2.0 * PI * eps * eps).powf(-0.5 * self.dim as f64)
            }
            KernelKind::Fractional => 0.5 * eps,
            KernelKind::ConstantOne | KernelKind::Zero | KernelKind::Tabulated(_) => 1.0,
            KernelKind::AnnulusBump { r0 } => {
                let unit = annulus_moment(self.dim, *r0, eps, f64::INFINITY);
                2.0 / (sphere_area(self.dim) * unit)
            }
            KernelKind::ScaledConstant { omega_exponent } => eps.powf(0.25 * omega_exponent),
            KernelKind::Box { height_exponent } => eps.powf(-height_exponent),
        };
        Ok(KernelAt { family: self, eps, radial_scale, table: slice })
    }

    /// `ρ_ε(z)`.
    pub fn eval(&self, eps: f64, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim {
            return Err(Error::Parameter(format!("point has dimension {}, kernel has N = {}", z.len(), self.dim)));
        }
        if z.iter().all(|&c| c == 0.0) {
            return Err(Error::Domain("kernels are not evaluated at z = 0".into()));
        }
        Ok(self.at(eps)?.value(z))
    }

    /// `∫_{B(0,R)} ρ_ε`, in closed form when available.
    pub fn ball_mass(&self, eps: f64, radius: f64, scheme: &QuadratureScheme) -> Result<EnergyEstimate> {
        check_radius(radius)?;
        let k = self.at(eps)?;
        if let Some(v) = k.closed_ball_mass(radius) {
            return Ok(exact(v));
        }
        k.radial_moment(Region::Ball { radius }, &|_| 1.0, &[], scheme)
    }

    /// `∫_{B(0,R)^c} ρ_ε / |z|²`, in closed form when available.
    pub fn tail_mass(&self, eps: f64, radius: f64, scheme: &QuadratureScheme) -> Result<EnergyEstimate> {
        check_radius(radius)?;
        let k = self.at(eps)?;
        if let Some(v) = k.closed_tail_mass(radius) {
            return Ok(exact(v));
        }
        k.radial_moment(Region::Complement { radius }, &|r| 1.0 / (r * r), &[], scheme)
    }
}

fn exact(v: f64) -> EnergyEstimate {
    EnergyEstimate { value: v, abs_error_est: 4.0 * f64::EPSILON * v.abs(), breakdown: None }
}

fn check_radius(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("radius must be positive and finite, got {r}")))
    }
}

fn parse_params(s: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("expected key=value, got '{item}'")))?;
        let v: f64 = v.trim().parse().map_err(|_| Error::Format(format!("not a number: '{v}'")))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

/// `∫_0^R r^{N-1} tri(r) dr` for the unit-height triangle centred at `r0`
/// with half-width `eps`, truncated to `r ≥ 0`.
fn annulus_moment(dim: usize, r0: f64, eps: f64, radius: f64) -> f64 {
    let n = (dim - 1) as i32;
    // ∫_a^b r^n (α + β r) dr
    let piece = |a: f64, b: f64, alpha: f64, beta: f64| {
        if b <= a {
            return 0.0;
        }
        let p1 = (n + 1) as f64;
        let p2 = (n + 2) as f64;
        alpha * (b.powi(n + 1) - a.powi(n + 1)) / p1 + beta * (b.powi(n + 2) - a.powi(n + 2)) / p2
    };
    let lo = (r0 - eps).max(0.0);
    let rising = piece(lo, r0.min(radius), 1.0 - r0 / eps, 1.0 / eps);
    let falling = piece(r0, (r0 + eps).min(radius), 1.0 + r0 / eps, -1.0 / eps);
    rising + falling
}

/// A kernel family bound to one admissible `ε`.
#[derive(Debug, Clone, Copy)]
pub struct KernelAt<'a> {
    pub family: &'a KernelFamily,
    pub eps: f64,
    radial_scale: f64,
    table: Option<&'a TableSlice>,
}

impl<'a> KernelAt<'a> {
    pub fn dim(&self) -> usize {
        self.family.dim
    }

    /// Radial factor `m_ε(r)`.
    pub fn radial(&self, r: f64) -> f64 {
        let eps = self.eps;
        match &self.family.kind {
            KernelKind::Gaussian | KernelKind::AnisoMollifier { .. } => {
                let t = r / eps;
                self.radial_scale * (-0.5 * t * t).exp()
            }
            KernelKind::Fractional => self.radial_scale * r.powf(2.0 * eps - self.family.dim as f64),
            KernelKind::ConstantOne | KernelKind::ScaledConstant { .. } => self.radial_scale,
            KernelKind::AnnulusBump { r0 } => self.radial_scale * (1.0 - (r - r0).abs() / eps).max(0.0),
            KernelKind::Box { .. } => {
                if r < 1.0 {
                    self.radial_scale
                } else {
                    0.0
                }
            }
            KernelKind::Zero => 0.0,
            KernelKind::Tabulated(_) => self.table.map_or(0.0, |t| t.interpolate(r)),
        }
    }

    /// Direction weight `w(σ)`, unit mean over the sphere.
    pub fn angular(&self, sigma: &[f64]) -> f64 {
        match &self.family.kind {
            KernelKind::AnisoMollifier { harmonics } => {
                let theta = sigma[1].atan2(sigma[0]);
                1.0 + harmonics
                    .iter()
                    .map(|h| {
                        let k = h.order as f64 * theta;
                        h.cos * k.cos() + h.sin * k.sin()
                    })
                    .sum::<f64>()
            }
            _ => 1.0,
        }
    }

    /// Harmonics of the direction weight; empty for radial families.
    pub fn harmonics(&self) -> &'a [Harmonic] {
        match &self.family.kind {
            KernelKind::AnisoMollifier { harmonics } => harmonics,
            _ => &[],
        }
    }

    /// `ρ_ε(z)` for `z ≠ 0` (not checked).
    pub fn value(&self, z: &[f64]) -> f64 {
        let r = z.iter().map(|c| c * c).sum::<f64>().sqrt();
        let m = self.radial(r);
        if m == 0.0 || self.family.is_radial() {
            return m;
        }
        let sigma: Vec<f64> = z.iter().map(|c| c / r).collect();
        m * self.angular(&sigma)
    }

    /// `∫_{S^{N-1}} ρ_ε(rσ) dσ`.
    pub fn sphere_density(&self, r: f64) -> f64 {
        sphere_area(self.family.dim) * self.radial(r)
    }

    /// Radius beyond which the kernel vanishes (or is below 1e-40 of its peak).
    pub fn support_radius(&self) -> Option<f64> {
        match &self.family.kind {
            KernelKind::Gaussian | KernelKind::AnisoMollifier { .. } => Some(GAUSS_CUTOFF * self.eps),
            KernelKind::AnnulusBump { r0 } => Some(r0 + self.eps),
            KernelKind::Box { .. } => Some(1.0),
            KernelKind::Zero => Some(0.0),
            KernelKind::Tabulated(_) => self.table.map(|t| t.r.last().copied().unwrap_or(0.0)),
            KernelKind::Fractional | KernelKind::ConstantOne | KernelKind::ScaledConstant { .. } => None,
        }
    }

    /// Radii where the radial factor has kinks or jumps.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.family.kind {
            KernelKind::AnnulusBump { r0 } => {
                [r0 - self.eps, *r0, r0 + self.eps].into_iter().filter(|&x| x > 0.0).collect()
            }
            KernelKind::Box { .. } => vec![1.0],
            KernelKind::Tabulated(_) => self.table.map(|t| t.r.clone()).unwrap_or_default(),
            _ => Vec::new(),
        }
    }

    pub fn closed_ball_mass(&self, radius: f64) -> Option<f64> {
        let dim = self.family.dim;
        let area = sphere_area(dim);
        let eps = self.eps;
        match &self.family.kind {
            KernelKind::Gaussian | KernelKind::AnisoMollifier { .. } => {
                let t = radius / eps;
                Some(match dim {
                    1 => 2.0 * erf(t / std::f64::consts::SQRT_2),
                    2 => -2.0 * (-0.5 * t * t).exp_m1(),
                    _ => {
                        2.0 * (erf(t / std::f64::consts::SQRT_2)
                            - (2.0 / PI).sqrt() * t * (-0.5 * t * t).exp())
                    }
                })
            }
            KernelKind::Fractional => Some(0.25 * area * radius.powf(2.0 * eps)),
            KernelKind::ConstantOne | KernelKind::ScaledConstant { .. } => Some(2.0 * radius * self.radial_scale),
            KernelKind::AnnulusBump { r0 } => {
                Some(area * self.radial_scale * annulus_moment(dim, *r0, eps, radius))
            }
            KernelKind::Box { .. } => Some(self.radial_scale * area * radius.min(1.0).powi(dim as i32) / dim as f64),
            KernelKind::Zero => Some(0.0),
            KernelKind::Tabulated(_) => None,
        }
    }

    pub fn closed_tail_mass(&self, radius: f64) -> Option<f64> {
        let dim = self.family.dim;
        let area = sphere_area(dim);
        let eps = self.eps;
        match &self.family.kind {
            KernelKind::Fractional => {
                Some(0.25 * area * eps * radius.powf(2.0 * eps - 2.0) / (1.0 - eps))
            }
            KernelKind::ConstantOne | KernelKind::ScaledConstant { .. } => Some(2.0 * self.radial_scale / radius),
            KernelKind::Box { .. } => {
                if radius >= 1.0 {
                    return Some(0.0);
                }
                let integral = match dim {
                    1 => 1.0 / radius - 1.0,
                    2 => -radius.ln(),
                    _ => 1.0 - radius,
                };
                Some(self.radial_scale * area * integral)
            }
            KernelKind::Zero => Some(0.0),
            _ => None,
        }
    }

    /// `∫_region ρ_ε(z) φ(|z|) dz` for a radial weight `φ`.
    pub fn radial_moment<W>(
        &self,
        region: Region,
        weight: &W,
        extra_breakpoints: &[f64],
        scheme: &QuadratureScheme,
    ) -> Result<EnergyEstimate>
    where
        W: Fn(f64) -> f64 + Sync,
    {
        let region = match self.clip(region) {
            Some(r) => r,
            None => return Ok(EnergyEstimate::zero()),
        };
        let mut breaks = self.breakpoints();
        breaks.extend_from_slice(extra_breakpoints);
        let hints = LineHints { breakpoints: breaks, frequency: None };
        let g = |r: f64| {
            let m = self.sphere_density(r);
            if m == 0.0 {
                0.0
            } else {
                m * weight(r)
            }
        };
        Ok(quad::integrate_radial(&g, self.family.dim, region, &hints, scheme)?)
    }

    /// Restricts a region to the kernel's support; `None` if they are disjoint.
    pub fn clip(&self, region: Region) -> Option<Region> {
        let Some(s) = self.support_radius() else {
            return Some(region);
        };
        if s <= 0.0 {
            return None;
        }
        match region {
            Region::Full => Some(Region::Ball { radius: s }),
            Region::Ball { radius } => Some(Region::Ball { radius: radius.min(s) }),
            Region::Complement { radius } => {
                (radius < s).then_some(Region::Annulus { inner: radius, outer: s })
            }
            Region::Annulus { inner, outer } => {
                (inner < s).then_some(Region::Annulus { inner, outer: outer.min(s) })
            }
        }
    }
}

/// Fractional-family constants in `∫_{B(0,δ)} ρ_ε = α₀ δ^{2ε}` and
/// `∫_{B(0,δ)^c} ρ_ε/|z|² = α₁ ε / ((1-ε) δ^{2(1-ε)})`.
pub fn fractional_constants(dim: usize) -> (f64, f64) {
    let a = 0.25 * sphere_area(dim);
    (a, a)
}

/// The built-in families that are defined in dimension `dim`.
pub fn builtin_catalog(dim: usize) -> Result<Vec<KernelFamily>> {
    check_dim(dim)?;
    let mut out = vec![
        KernelFamily::gaussian_mollifier(dim)?,
        KernelFamily::fractional(dim)?,
        KernelFamily::annulus_bump(dim, 1.0)?,
    ];
    if dim == 1 {
        out.push(KernelFamily::constant_one());
        out.push(KernelFamily::scaled_constant(1.0)?);
    }
    if dim == 2 {
        out.push(KernelFamily::aniso_mollifier(vec![Harmonic { order: 2, cos: 0.5, sin: 0.0 }])?);
    }
    Ok(out)
}

/// Radial kernel values tabulated per ε.
///
/// CSV layout: a header row `eps,r,value` followed by one row per sample.
/// Rows sharing an `eps` form one profile; radii must be positive and values
/// nonnegative. Between samples the profile is interpolated linearly in
/// `log r`; outside the sampled range it is zero. Evaluation is only defined
/// at tabulated `ε` values (matched to 1e-12 relative).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    pub source: String,
    slices: Vec<TableSlice>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableSlice {
    pub eps: f64,
    pub r: Vec<f64>,
    pub value: Vec<f64>,
}

impl TableSlice {
    fn interpolate(&self, r: f64) -> f64 {
        let n = self.r.len();
        if n == 0 || r < self.r[0] || r > self.r[n - 1] {
            return 0.0;
        }
        if n == 1 {
            return self.value[0];
        }
        let i = match self.r.binary_search_by(|x| x.partial_cmp(&r).unwrap()) {
            Ok(i) => return self.value[i],
            Err(i) => i,
        };
        let (r0, r1) = (self.r[i - 1], self.r[i]);
        let t = (r / r0).ln() / (r1 / r0).ln();
        self.value[i - 1] + t * (self.value[i] - self.value[i - 1])
    }
}

impl KernelTable {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Format("empty kernel table".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["eps", "r", "value"] {
            return Err(Error::Format(format!("kernel table header must be 'eps,r,value', got '{header}'")));
        }
        let mut rows: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
        for (lineno, line) in lines.enumerate() {
            let nums: Vec<f64> = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format(format!("row {}: not numeric: '{line}'", lineno + 2)))?;
            let [eps, r, v] = nums[..] else {
                return Err(Error::Format(format!("row {}: expected 3 columns", lineno + 2)));
            };
            if !(eps > 0.0 && eps < 1.0) || !(r > 0.0) || !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Format(format!("row {}: need 0<eps<1, r>0, value≥0", lineno + 2)));
            }
            rows.entry(eps.to_bits()).or_default().push((r, v));
        }
        if rows.is_empty() {
            return Err(Error::Format("kernel table has no rows".into()));
        }
        let slices = rows
            .into_iter()
            .map(|(bits, mut pts)| {
                pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                if pts.windows(2).any(|w| w[0].0 == w[1].0) {
                    return Err(Error::Format("duplicate radius in kernel table".into()));
                }
                Ok(TableSlice {
                    eps: f64::from_bits(bits),
                    r: pts.iter().map(|p| p.0).collect(),
                    value: pts.iter().map(|p| p.1).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { source: source.to_string(), slices })
    }

    pub fn eps_values(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.eps).collect()
    }

    fn slice(&self, eps: f64) -> Result<&TableSlice> {
        self.slices
            .iter()
            .find(|s| (s.eps - eps).abs() <= 1e-12 * eps)
            .ok_or_else(|| Error::Parameter(format!("ε = {eps} is not tabulated in {}", self.source)))
    }
}
