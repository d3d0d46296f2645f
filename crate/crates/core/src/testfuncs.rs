//! Separable H¹ test functions `u(x) = A ∏ p_i((x_i − c_i)/w_i)`.
//!
//! Fourier transforms use the unitary angular-frequency convention
//! `û(ξ) = (2π)^{-N/2} ∫ u(x) e^{-i x·ξ} dx`. Because every builtin is a
//! tensor product, norms and shift differences reduce to one-dimensional
//! integrals.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quad::gauss_legendre;
use crate::special::{erf, one_minus_cos, sinc};

/// Default Gaussian smoothing of the hat profile.
pub const HAT_SMOOTHING: f64 = 0.25;

/// Builtin ids accepted by [`builtin_function`].
pub const BUILTIN_IDS: [&str; 3] = ["gaussian", "gaussian_shifted", "hat_smoothed"];

const SHIFT: [f64; 3] = [0.7, -0.3, 0.45];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileKind {
    /// `e^{-x²/2}`.
    Gaussian,
    /// The hat `max(0, 1−|x|)` convolved with a centred Gaussian of standard
    /// deviation `smoothing`.
    HatSmoothed { smoothing: f64 },
}

/// One factor `p((x − center)/width)` of a separable function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile1D {
    pub kind: ProfileKind,
    pub width: f64,
    pub center: f64,
}

/// Norms of a unit-width profile.
#[derive(Debug, Clone, Copy, PartialEq)]
struct UnitNorms {
    l2_sq: f64,
    deriv_l2_sq: f64,
}

impl ProfileKind {
    fn value(&self, x: f64) -> f64 {
        match *self {
            ProfileKind::Gaussian => (-0.5 * x * x).exp(),
            ProfileKind::HatSmoothed { smoothing: s } => {
                // the hat is a second difference of the ramp t₊; each ramp
                // convolved with the Gaussian is t Φ(t/s) + s φ(t/s)
                let ramp = |t: f64| t * normal_cdf(t / s) + s * normal_pdf(t / s);
                ramp(x + 1.0) - 2.0 * ramp(x) + ramp(x - 1.0)
            }
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match *self {
            ProfileKind::Gaussian => -x * (-0.5 * x * x).exp(),
            ProfileKind::HatSmoothed { smoothing: s } => {
                normal_cdf((x + 1.0) / s) - 2.0 * normal_cdf(x / s) + normal_cdf((x - 1.0) / s)
            }
        }
    }

    /// Unitary transform of the unit-width profile (real and even).
    fn fourier(&self, xi: f64) -> f64 {
        match *self {
            ProfileKind::Gaussian => (-0.5 * xi * xi).exp(),
            ProfileKind::HatSmoothed { smoothing: s } => {
                let c = sinc(0.5 * xi);
                c * c * (-0.5 * s * s * xi * xi).exp() / (2.0 * PI).sqrt()
            }
        }
    }

    /// Half-width beyond which the unit profile is below ~1e-30.
    fn reach(&self) -> f64 {
        match *self {
            ProfileKind::Gaussian => 12.0,
            ProfileKind::HatSmoothed { smoothing } => 1.0 + 12.0 * smoothing,
        }
    }

    /// Frequency beyond which `|p̂|²` is negligible.
    fn fourier_reach(&self) -> f64 {
        match *self {
            ProfileKind::Gaussian => 9.0,
            ProfileKind::HatSmoothed { smoothing } => 7.0 / smoothing,
        }
    }

    fn norms(&self) -> UnitNorms {
        match *self {
            ProfileKind::Gaussian => UnitNorms { l2_sq: PI.sqrt(), deriv_l2_sq: 0.5 * PI.sqrt() },
            ProfileKind::HatSmoothed { .. } => {
                let top = self.fourier_reach();
                let l2 = 2.0 * smooth_integral(&|t| self.fourier(t).powi(2), 0.0, top, 0.5);
                let d = 2.0 * smooth_integral(&|t| (t * self.fourier(t)).powi(2), 0.0, top, 0.5);
                UnitNorms { l2_sq: l2, deriv_l2_sq: d }
            }
        }
    }

    /// `∫ |p(x+z) − p(x)|² dx` for the unit-width profile, without
    /// cancellation at small `z`.
    fn shift_l2(&self, z: f64, norms: &UnitNorms) -> f64 {
        let z = z.abs();
        match *self {
            ProfileKind::Gaussian => -2.0 * PI.sqrt() * (-0.25 * z * z).exp_m1(),
            ProfileKind::HatSmoothed { .. } => {
                if z < 2.0 {
                    // 2∫(1 − cos zξ)|p̂|² dξ, non-oscillatory for small z
                    let top = self.fourier_reach();
                    4.0 * smooth_integral(&|t| one_minus_cos(z * t) * self.fourier(t).powi(2), 0.0, top, 0.5)
                } else {
                    let reach = self.reach();
                    let lo = -reach;
                    let hi = reach - z;
                    let corr = if hi > lo {
                        smooth_integral(&|x| self.value(x) * self.value(x + z), lo, hi, 0.25)
                    } else {
                        0.0
                    };
                    2.0 * (norms.l2_sq - corr)
                }
            }
        }
    }
}

fn normal_cdf(t: f64) -> f64 {
    0.5 * (1.0 + erf(t / SQRT_2))
}

fn normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// Composite 32-point Gauss–Legendre rule on panels no wider than `panel`,
/// for smooth integrands.
pub fn smooth_integral<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panel: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let rule = gauss_legendre(32);
    let n = ((b - a) / panel).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    let mut sum = 0.0;
    for k in 0..n {
        let c = a + (k as f64 + 0.5) * h;
        let mut s = 0.0;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            s += w * f(c + 0.5 * h * x);
        }
        sum += 0.5 * h * s;
    }
    sum
}

/// A separable test function with its analytic transform and norms.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    id: String,
    amplitude: f64,
    factors: Vec<Profile1D>,
    unit_norms: Vec<UnitNorms>,
    closed_shift: bool,
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (N={})", self.id, self.dim())
    }
}

/// Looks up a builtin test function by id.
pub fn builtin_function(id: &str, dim: usize) -> Result<TestFunction> {
    if !(1..=3).contains(&dim) {
        return Err(Error::Parameter(format!("dimension must be 1, 2 or 3, got {dim}")));
    }
    let (kind, centers): (ProfileKind, &[f64]) = match id {
        "gaussian" => (ProfileKind::Gaussian, &[0.0; 3]),
        "gaussian_shifted" => (ProfileKind::Gaussian, &SHIFT),
        "hat_smoothed" => (ProfileKind::HatSmoothed { smoothing: HAT_SMOOTHING }, &[0.0; 3]),
        "zero" => (ProfileKind::Gaussian, &[0.0; 3]),
        other => return Err(Error::Lookup(format!("unknown test function '{other}'"))),
    };
    let factors = centers[..dim]
        .iter()
        .map(|&center| Profile1D { kind, width: 1.0, center })
        .collect();
    let amplitude = if id == "zero" { 0.0 } else { 1.0 };
    TestFunction::separable(id, amplitude, factors)
}

impl TestFunction {
    pub fn separable(id: &str, amplitude: f64, factors: Vec<Profile1D>) -> Result<Self> {
        if !(1..=3).contains(&factors.len()) {
            return Err(Error::Parameter("a test function needs 1 to 3 factors".into()));
        }
        if factors.iter().any(|p| !(p.width > 0.0 && p.width.is_finite())) || !amplitude.is_finite() {
            return Err(Error::Parameter("widths must be positive and the amplitude finite".into()));
        }
        let mut unit_norms = Vec::with_capacity(factors.len());
        for (i, p) in factors.iter().enumerate() {
            // the norm quadrature is shared between identical profiles
            let cached = factors[..i].iter().position(|q| q.kind == p.kind);
            unit_norms.push(match cached {
                Some(j) => unit_norms[j],
                None => p.kind.norms(),
            });
        }
        let closed_shift = factors.iter().all(|p| p.kind == ProfileKind::Gaussian);
        Ok(Self { id: id.to_string(), amplitude, factors, unit_norms, closed_shift })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn factors(&self) -> &[Profile1D] {
        &self.factors
    }

    /// `c · u`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { amplitude: self.amplitude * c, ..self.clone() }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.amplitude
            * self
                .factors
                .iter()
                .zip(x)
                .map(|(p, &xi)| p.kind.value((xi - p.center) / p.width))
                .product::<f64>()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let vals: Vec<f64> =
            self.factors.iter().zip(x).map(|(p, &xi)| p.kind.value((xi - p.center) / p.width)).collect();
        (0..self.dim())
            .map(|j| {
                let p = &self.factors[j];
                let d = p.kind.derivative((x[j] - p.center) / p.width) / p.width;
                let others: f64 = vals.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, v)| v).product();
                self.amplitude * d * others
            })
            .collect()
    }

    /// `û(ξ)`.
    pub fn fourier(&self, xi: &[f64]) -> Complex64 {
        let mut modulus = self.amplitude;
        let mut phase = 0.0;
        for (p, &k) in self.factors.iter().zip(xi) {
            modulus *= p.width * p.kind.fourier(p.width * k);
            phase -= k * p.center;
        }
        Complex64::from_polar(modulus, phase)
    }

    /// `|û(ξ)|²`, without forming the phase.
    pub fn fourier_sq(&self, xi: &[f64]) -> f64 {
        let m: f64 = self.factors.iter().zip(xi).map(|(p, &k)| p.width * p.kind.fourier(p.width * k)).product();
        (self.amplitude * m).powi(2)
    }

    fn factor_l2(&self, i: usize) -> f64 {
        self.factors[i].width * self.unit_norms[i].l2_sq
    }

    fn factor_deriv_l2(&self, i: usize) -> f64 {
        self.unit_norms[i].deriv_l2_sq / self.factors[i].width
    }

    /// `‖u‖²`.
    pub fn l2_sq(&self) -> f64 {
        self.amplitude.powi(2) * (0..self.dim()).map(|i| self.factor_l2(i)).product::<f64>()
    }

    /// `‖∇u‖²`.
    pub fn grad_l2_sq(&self) -> f64 {
        self.gram().iter().enumerate().map(|(j, row)| row[j]).sum()
    }

    /// `G = ∫ ∇u ⊗ ∇u dx`; diagonal because `∫ p p' = 0` for each factor.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut g = vec![vec![0.0; n]; n];
        for (j, row) in g.iter_mut().enumerate() {
            let others: f64 = (0..n).filter(|&i| i != j).map(|i| self.factor_l2(i)).product();
            row[j] = self.amplitude.powi(2) * self.factor_deriv_l2(j) * others;
        }
        g
    }

    /// Whether `g(z)` and `|û(ξ)|²` depend only on `|z|` and `|ξ|`.
    pub fn is_isotropic(&self) -> bool {
        let w = self.factors[0].width;
        self.factors.iter().all(|p| p.kind == ProfileKind::Gaussian && p.width == w)
    }

    /// Whether [`Self::g_shift_closed`] is available.
    pub fn has_closed_shift(&self) -> bool {
        self.closed_shift
    }

    /// Closed-form `∫ |u(x+z) − u(x)|² dx`, for functions that have one.
    pub fn g_shift_closed(&self, z: &[f64]) -> Option<f64> {
        self.closed_shift.then(|| self.shift_l2(z))
    }

    /// `∫ |u(x+z) − u(x)|² dx` from one-dimensional integrals.
    ///
    /// Writing `u(x+z) − u(x)` as a telescoping sum over coordinates gives
    /// `Σ_k D_k ∏_{i≠k} n_i − ½ Σ_{k<l} D_k D_l ∏_{i<k} n_i ∏_{k<i<l} C_i ∏_{i>l} n_i`
    /// with `n_i = ‖p_i‖²`, `D_i` the 1-D shift integral and `C_i = n_i − D_i/2`,
    /// which has no cancellation as `z → 0`.
    pub fn shift_l2(&self, z: &[f64]) -> f64 {
        let n = self.dim();
        let mut norm = [0.0; 3];
        let mut diff = [0.0; 3];
        let mut corr = [0.0; 3];
        for i in 0..n {
            let p = &self.factors[i];
            norm[i] = self.factor_l2(i);
            diff[i] = p.width * p.kind.shift_l2(z[i] / p.width, &self.unit_norms[i]);
            corr[i] = norm[i] - 0.5 * diff[i];
        }
        let mut total = 0.0;
        for k in 0..n {
            if diff[k] == 0.0 {
                continue;
            }
            let rest: f64 = (0..n).filter(|&i| i != k).map(|i| norm[i]).product();
            total += diff[k] * rest;
            for l in k + 1..n {
                let mut t = diff[k] * diff[l];
                for i in 0..n {
                    if i < k || i > l {
                        t *= norm[i];
                    } else if i > k && i < l {
                        t *= corr[i];
                    }
                }
                total -= 0.5 * t;
            }
        }
        (self.amplitude.powi(2) * total).max(0.0)
    }

    /// `ψ_R(ξ) = R^{N/2} ψ(Rξ)`, i.e. `u_R(x) = R^{-N/2} u(x/R)`.
    pub fn rescale_fourier(&self, r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Parameter(format!("rescaling factor must be positive, got {r}")));
        }
        let factors = self
            .factors
            .iter()
            .map(|p| Profile1D { kind: p.kind, width: p.width * r, center: p.center * r })
            .collect();
        Ok(Self {
            id: format!("{}@R={r}", self.id),
            amplitude: self.amplitude * r.powf(-0.5 * self.dim() as f64),
            factors,
            unit_norms: self.unit_norms.clone(),
            closed_shift: self.closed_shift,
        })
    }

    /// Box `∏ [lo_i, hi_i]` outside which `u` is negligible (below ~1e-30 of
    /// its peak).
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        self.factors
            .iter()
            .map(|p| {
                let reach = p.kind.reach() * p.width;
                (p.center - reach, p.center + reach)
            })
            .collect()
    }

    /// Radius beyond which `|û|²(1+|ξ|²)` is negligible.
    pub fn fourier_radius(&self) -> f64 {
        let per_axis = self.factors.iter().map(|p| p.kind.fourier_reach() / p.width).fold(0.0, f64::max);
        per_axis * (self.dim() as f64).sqrt()
    }

    /// Fourier profile `v` with `û(ξ) = v(|ξ|)`, when `û` is radial and real.
    pub fn radial_profile(&self) -> Option<RadialProfile> {
        let w = self.factors[0].width;
        let radial = self
            .factors
            .iter()
            .all(|p| p.kind == ProfileKind::Gaussian && p.center == 0.0 && p.width == w);
        if !radial {
            return None;
        }
        let a = self.amplitude * w.powi(self.dim() as i32);
        RadialProfile::new(self.dim(), move |t| a * (-0.5 * w * w * t * t).exp()).ok()
    }
}

/// A radial Fourier profile `ψ(ξ) = v(|ξ|)` with the moment
/// `∫ t^{N−1}(1+t²) v(t)² dt` cached.
#[derive(Clone)]
pub struct RadialProfile {
    dim: usize,
    v: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    moment: f64,
}

impl fmt::Debug for RadialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialProfile").field("dim", &self.dim).field("moment", &self.moment).finish()
    }
}

impl RadialProfile {
    pub fn new(dim: usize, v: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let scheme = crate::quad::QuadratureScheme::default();
        let p = (dim - 1) as i32;
        let est = crate::quad::integrate_line(
            &|t: f64| t.powi(p) * (1.0 + t * t) * v(t).powi(2),
            0.0,
            f64::INFINITY,
            &Default::default(),
            &scheme,
        )?;
        if !(est.value > 0.0 && est.value.is_finite()) {
            return Err(Error::Parameter("radial profile moment must be positive and finite".into()));
        }
        Ok(Self { dim, v: Arc::new(v), moment: est.value })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.v)(t)
    }

    pub fn moment(&self) -> f64 {
        self.moment
    }
}
