//! The energies `F_ε[u]` in physical and Fourier form, the multiplier
//! `I_ε(ξ; A)`, and the limit functionals.
//!
//! Physical form: `F_ε[u] = ½ ∫ ρ_ε(z) g(z)/|z|² dz` with
//! `g(z) = ∫ |u(x+z) − u(x)|² dx`.
//! Fourier form: `F_ε[u] = ∫ |û(ξ)|² I_ε(ξ; R^N) dξ` with
//! `I_ε(ξ; A) = ∫_A ρ_ε(z) (1 − cos z·ξ)/|z|² dz`.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelAt, KernelFamily};
use crate::measures::{AnisotropyMatrix, AtomicMeasure, SphericalMeasure};
use crate::quad::{self, AngularRule, EnergyEstimate, LineHints, QuadratureScheme, RangeBreakdown, Region};
use crate::special::{bessel_jn, one_minus_cos, one_minus_j0, one_minus_sinc, sinc, sphere_area};
use crate::testfuncs::TestFunction;

/// One evaluation of `I_ε(ξ; region)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSample {
    pub xi: Vec<f64>,
    pub value: f64,
    pub abs_error_est: f64,
    pub region: Region,
    pub eps: f64,
}

fn check_dims(u: &TestFunction, family: &KernelFamily) -> Result<()> {
    if u.dim() != family.dim() {
        return Err(Error::Parameter(format!("{u} and {family} live in different dimensions")));
    }
    Ok(())
}

/// `∫ |u(x+z) − u(x)|² dx`.
pub fn g_shift(u: &TestFunction, z: &[f64]) -> Result<f64> {
    if z.len() != u.dim() {
        return Err(Error::Parameter(format!("shift has dimension {}, {u} needs {}", z.len(), u.dim())));
    }
    Ok(u.g_shift_closed(z).unwrap_or_else(|| u.shift_l2(z)))
}

// ∫_S w(σ) g(rσ) dσ
fn sphere_shift(u: &TestFunction, k: &KernelAt, rule: &AngularRule, r: f64) -> f64 {
    let dim = u.dim();
    let mut z = [0.0; 3];
    if u.is_isotropic() {
        // g is radial and w has unit mean
        z[0] = r;
        return sphere_area(dim) * u.shift_l2(&z[..dim]);
    }
    let radial = k.family.is_radial();
    rule.iter()
        .map(|(sigma, w)| {
            for (zi, si) in z.iter_mut().zip(sigma) {
                *zi = r * si;
            }
            let a = if radial { 1.0 } else { k.angular(sigma) };
            w * a * u.shift_l2(&z[..dim])
        })
        .sum()
}

/// `F_ε[u]` by quadrature in `z`.
pub fn energy_physical(
    u: &TestFunction,
    family: &KernelFamily,
    eps: f64,
    scheme: &QuadratureScheme,
) -> Result<EnergyEstimate> {
    energy_physical_region(u, family, eps, Region::Full, scheme)
}

/// The part of `F_ε[u]` coming from displacements `z` in `region`.
pub fn energy_physical_region(
    u: &TestFunction,
    family: &KernelFamily,
    eps: f64,
    region: Region,
    scheme: &QuadratureScheme,
) -> Result<EnergyEstimate> {
    check_dims(u, family)?;
    let k = family.at(eps)?;
    let Some(region) = k.clip(region) else {
        return Ok(EnergyEstimate::zero());
    };
    let rule = scheme.angular_rule(u.dim())?;
    let g = |r: f64| {
        let m = k.radial(r);
        if m == 0.0 {
            0.0
        } else {
            0.5 * m * sphere_shift(u, &k, &rule, r) / (r * r)
        }
    };
    let hints = LineHints { breakpoints: k.breakpoints(), frequency: None };
    Ok(quad::integrate_radial(&g, u.dim(), region, &hints, scheme)?)
}

/// `F_ε[u]` with its short (`|z| < δ`), medium and long (`|z| > 1/δ`) parts.
pub fn energy_physical_split(
    u: &TestFunction,
    family: &KernelFamily,
    eps: f64,
    delta: f64,
    scheme: &QuadratureScheme,
) -> Result<EnergyEstimate> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("split radius δ must lie in (0,1), got {delta}")));
    }
    let short = energy_physical_region(u, family, eps, Region::Ball { radius: delta }, scheme)?;
    let medium =
        energy_physical_region(u, family, eps, Region::Annulus { inner: delta, outer: 1.0 / delta }, scheme)?;
    let long = energy_physical_region(u, family, eps, Region::Complement { radius: 1.0 / delta }, scheme)?;
    Ok(EnergyEstimate {
        value: short.value + medium.value + long.value,
        abs_error_est: short.abs_error_est + medium.abs_error_est + long.abs_error_est,
        breakdown: Some(RangeBreakdown { delta, short: short.value, medium: medium.value, long: long.value }),
    })
}

/// `∫_S w(σ) (1 − cos(s σ·ê)) dσ` for the direction `ê` at polar angle `phi`.
///
/// For the weight `1 + Σ a_k cos kθ + b_k sin kθ` on the circle the
/// Jacobi–Anger expansion leaves only even harmonics:
/// `2π [1 − J₀(s) − Σ_{k even} (−1)^{k/2} J_k(s)(a_k cos kφ + b_k sin kφ)]`.
fn angular_transform(k: &KernelAt, s: f64, phi: f64) -> f64 {
    match k.dim() {
        1 => 2.0 * one_minus_cos(s),
        2 => {
            let mut v = one_minus_j0(s);
            for h in k.harmonics().iter().filter(|h| h.order % 2 == 0) {
                let sign = if (h.order / 2) % 2 == 0 { 1.0 } else { -1.0 };
                let kp = h.order as f64 * phi;
                v -= sign * bessel_jn(h.order, s) * (h.cos * kp.cos() + h.sin * kp.sin());
            }
            2.0 * PI * v
        }
        _ => 4.0 * PI * one_minus_sinc(s),
    }
}

// Oscillating part of the radial angular transform: Φ(s) = |S| (1 − osc(s)).
fn radial_oscillation(dim: usize, s: f64) -> f64 {
    match dim {
        1 => s.cos(),
        2 => crate::special::bessel_j0(s),
        _ => sinc(s),
    }
}

fn span(lo: f64, hi: f64) -> Option<Region> {
    if hi <= lo {
        None
    } else if lo == 0.0 && hi.is_infinite() {
        Some(Region::Full)
    } else if lo == 0.0 {
        Some(Region::Ball { radius: hi })
    } else if hi.is_infinite() {
        Some(Region::Complement { radius: lo })
    } else {
        Some(Region::Annulus { inner: lo, outer: hi })
    }
}

/// `I_ε(ξ; region)`.
pub fn multiplier(
    family: &KernelFamily,
    eps: f64,
    xi: &[f64],
    region: Region,
    scheme: &QuadratureScheme,
) -> Result<MultiplierSample> {
    if xi.len() != family.dim() {
        return Err(Error::Parameter(format!("ξ has dimension {}, {family} needs {}", xi.len(), family.dim())));
    }
    let k = family.at(eps)?;
    let t = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let phi = if xi.len() == 2 { xi[1].atan2(xi[0]) } else { 0.0 };
    let est = multiplier_at(&k, t, phi, region, scheme)?;
    Ok(MultiplierSample {
        xi: xi.to_vec(),
        value: est.value,
        abs_error_est: est.abs_error_est,
        region,
        eps,
    })
}

/// `I_ε(t ê; region)` for the direction `ê` at polar angle `phi` (N = 2).
pub fn multiplier_at(
    k: &KernelAt,
    t: f64,
    phi: f64,
    region: Region,
    scheme: &QuadratureScheme,
) -> Result<EnergyEstimate> {
    region.radial_bounds()?;
    if t == 0.0 {
        return Ok(EnergyEstimate::zero());
    }
    let Some(region) = k.clip(region) else {
        return Ok(EnergyEstimate::zero());
    };
    let dim = k.dim();
    let (lo, hi) = region.radial_bounds()?;
    let breaks = k.breakpoints();
    let integrand = |r: f64| {
        let m = k.radial(r);
        if m == 0.0 {
            0.0
        } else {
            m * angular_transform(k, r * t, phi) / (r * r)
        }
    };
    let hints = LineHints { breakpoints: breaks.clone(), frequency: Some(t) };
    let r_osc = scheme.resolved_periods * 2.0 * PI / t;
    if hi <= r_osc || k.support_radius().is_some() {
        return Ok(quad::integrate_radial(&integrand, dim, region, &hints, scheme)?);
    }
    if !k.family.is_radial() {
        return Err(Error::Parameter(format!(
            "{}: multipliers of non-radial kernels need bounded support",
            k.family
        )));
    }

    // Resolved head, then Φ = |S|(1 − osc) on the remainder: the constant
    // part by dyadic tail quadrature, the oscillating part by acceleration.
    let head = match span(lo, r_osc.min(hi)) {
        Some(r) => quad::integrate_radial(&integrand, dim, r, &hints, scheme)?,
        None => EnergyEstimate::zero(),
    };
    let a = lo.max(r_osc);
    let area = sphere_area(dim);
    let mean_part = quad::integrate_radial(
        &|r: f64| area * k.radial(r) / (r * r),
        dim,
        span(a, hi).expect("tail interval is nonempty"),
        &LineHints { breakpoints: breaks.clone(), frequency: None },
        scheme,
    )?;
    let power = dim as i32 - 3;
    let amp = |r: f64| area * k.radial(r) * r.powi(power);
    let osc = |s: f64| radial_oscillation(dim, s);
    let scale = head.value.abs() + mean_part.value.abs();
    let mut wave = quad::oscillatory_tail(&amp, &osc, t, a, &breaks, scale, scheme)?;
    if hi.is_finite() {
        let beyond = quad::oscillatory_tail(&amp, &osc, t, hi, &breaks, scale, scheme)?;
        wave = EnergyEstimate {
            value: wave.value - beyond.value,
            abs_error_est: wave.abs_error_est + beyond.abs_error_est,
            breakdown: None,
        };
    }
    Ok(EnergyEstimate {
        value: head.value + mean_part.value - wave.value,
        abs_error_est: head.abs_error_est + mean_part.abs_error_est + wave.abs_error_est,
        breakdown: None,
    })
}

/// Records the first failure inside a quadrature callback and the largest
/// relative error of the inner integrals.
struct InnerLog {
    failure: Mutex<Option<Error>>,
    max_rel_err: AtomicU64,
}

impl InnerLog {
    fn new() -> Self {
        Self { failure: Mutex::new(None), max_rel_err: AtomicU64::new(0) }
    }

    fn record(&self, r: Result<EnergyEstimate>) -> f64 {
        match r {
            Ok(est) => {
                let rel = if est.value == 0.0 { 0.0 } else { est.abs_error_est / est.value.abs() };
                // nonnegative floats order like their bit patterns
                self.max_rel_err.fetch_max(rel.to_bits(), Ordering::Relaxed);
                est.value
            }
            Err(e) => {
                let mut slot = self.failure.lock().expect("inner log poisoned");
                slot.get_or_insert(e);
                f64::NAN
            }
        }
    }

    fn finish(self, outer: std::result::Result<EnergyEstimate, quad::QuadError>) -> Result<EnergyEstimate> {
        if let Some(e) = self.failure.into_inner().expect("inner log poisoned") {
            return Err(e);
        }
        let mut est = outer?;
        est.abs_error_est += f64::from_bits(self.max_rel_err.into_inner()) * est.value.abs();
        Ok(est)
    }
}

/// `F_ε[u]` as `∫ |û(ξ)|² I_ε(ξ) dξ`.
///
/// The ξ-integral is radial; the sphere integral at each radius uses the
/// isotropy of `|û|²` when available, and for direction-weighted kernels the
/// fact that `I_ε(tσ)` is a trigonometric polynomial in the angle of `σ`.
pub fn energy_fourier(
    u: &TestFunction,
    family: &KernelFamily,
    eps: f64,
    scheme: &QuadratureScheme,
) -> Result<EnergyEstimate> {
    check_dims(u, family)?;
    let k = family.at(eps)?;
    let dim = u.dim();
    let rule = scheme.angular_rule(dim)?;
    let top = u.fourier_radius();
    let degree = k.harmonics().iter().map(|h| h.order).max().unwrap_or(0) as usize;
    let log = InnerLog::new();
    let area = sphere_area(dim);

    let fourier_sphere = |t: f64| -> f64 {
        let mut xi = [0.0; 3];
        if u.is_isotropic() {
            xi[0] = t;
            return area * u.fourier_sq(&xi[..dim]);
        }
        rule.iter()
            .map(|(sigma, w)| {
                for (x, s) in xi.iter_mut().zip(sigma) {
                    *x = t * s;
                }
                w * u.fourier_sq(&xi[..dim])
            })
            .sum()
    };

    let g = |t: f64| -> f64 {
        if degree == 0 {
            let s = fourier_sphere(t);
            if s == 0.0 {
                return 0.0;
            }
            return s * log.record(multiplier_at(&k, t, 0.0, Region::Full, scheme));
        }
        // N = 2: ∫ I U dφ = 2π Σ_{k≤K} (cos/sin coefficients of I)·(those of U)
        let n_i = 2 * degree + 1;
        let n_u = rule.len();
        let coeffs = |f: &dyn Fn(f64) -> f64, n: usize| -> Vec<(f64, f64)> {
            let vals: Vec<(f64, f64)> = (0..n)
                .map(|m| {
                    let p = 2.0 * PI * m as f64 / n as f64;
                    (p, f(p))
                })
                .collect();
            (0..=degree)
                .map(|kk| {
                    let norm = if kk == 0 { 1.0 } else { 2.0 } / n as f64;
                    let c: f64 = vals.iter().map(|(p, v)| v * (kk as f64 * p).cos()).sum();
                    let s: f64 = vals.iter().map(|(p, v)| v * (kk as f64 * p).sin()).sum();
                    (norm * c, norm * s)
                })
                .collect()
        };
        let uc = coeffs(&|p: f64| u.fourier_sq(&[t * p.cos(), t * p.sin()]), n_u);
        if uc.iter().all(|&(c, s)| c == 0.0 && s == 0.0) {
            return 0.0;
        }
        let ic = coeffs(&|p: f64| log.record(multiplier_at(&k, t, p, Region::Full, scheme)), n_i);
        let mut total = ic[0].0 * uc[0].0;
        for kk in 1..=degree {
            total += 0.5 * (ic[kk].0 * uc[kk].0 + ic[kk].1 * uc[kk].1);
        }
        2.0 * PI * total
    };

    let outer = quad::integrate_radial(&g, dim, Region::Ball { radius: top }, &LineHints::default(), scheme);
    log.finish(outer)
}

/// `½ ∫ ∫_S |∇u·σ|² dμ(σ) dx`.
pub fn limit_local(u: &TestFunction, mu: &SphericalMeasure) -> Result<f64> {
    if mu.dim != u.dim() {
        return Err(Error::Parameter(format!("measure on S^{} cannot pair with {u}", mu.dim - 1)));
    }
    let gram = u.gram();
    let n = u.dim();
    let total: f64 = mu
        .nodes
        .iter()
        .zip(&mu.weights)
        .map(|(s, w)| {
            let mut q = 0.0;
            for i in 0..n {
                for j in 0..n {
                    q += s[i] * gram[i][j] * s[j];
                }
            }
            w * q
        })
        .sum();
    Ok(0.5 * total)
}

/// `½ ∫ A∇u·∇u dx`.
pub fn limit_local_from_matrix(u: &TestFunction, a: &AnisotropyMatrix) -> Result<f64> {
    if a.dim() != u.dim() {
        return Err(Error::Parameter(format!("{}×{} matrix cannot pair with {u}", a.dim(), a.dim())));
    }
    Ok(0.5 * a.contract(&u.gram()))
}

/// `½ Σ_i w_i g(z_i)/|z_i|²`.
pub fn limit_nonlocal(u: &TestFunction, nu: &AtomicMeasure) -> Result<f64> {
    if nu.dim != u.dim() {
        return Err(Error::Parameter(format!("measure on R^{} cannot pair with {u}", nu.dim)));
    }
    let mut total = 0.0;
    for (z, &w) in nu.atoms.iter().zip(&nu.weights) {
        let r2: f64 = z.iter().map(|c| c * c).sum();
        if r2 == 0.0 {
            return Err(Error::Domain("atom at the origin".into()));
        }
        total += w * g_shift(u, z)? / r2;
    }
    Ok(0.5 * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfuncs::builtin_function;

    fn scheme() -> QuadratureScheme {
        QuadratureScheme::default()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn g_shift_examples() {
        let u = builtin_function("gaussian", 1).unwrap();
        assert_eq!(g_shift(&u, &[0.0]).unwrap(), 0.0);
        let want = 2.0 * PI.sqrt() * (1.0 - (-0.25f64).exp());
        assert!(rel(g_shift(&u, &[1.0]).unwrap(), want) < 1e-14);
        assert!((want - 0.78412).abs() < 5e-5);
    }

    #[test]
    fn zero_function_has_zero_energy() {
        let u = builtin_function("gaussian", 1).unwrap().scaled(0.0);
        let fam = KernelFamily::fractional(1).unwrap();
        assert_eq!(energy_physical(&u, &fam, 0.5, &scheme()).unwrap().value, 0.0);
        assert_eq!(energy_fourier(&u, &fam, 0.5, &scheme()).unwrap().value, 0.0);
    }

    #[test]
    fn energy_is_quadratic() {
        let u = builtin_function("gaussian_shifted", 2).unwrap();
        let fam = KernelFamily::gaussian_mollifier(2).unwrap();
        let e1 = energy_physical(&u, &fam, 0.1, &scheme()).unwrap().value;
        let e3 = energy_physical(&u.scaled(3.0), &fam, 0.1, &scheme()).unwrap().value;
        assert!(rel(e3, 9.0 * e1) < 1e-13);
    }

    #[test]
    fn multiplier_of_constant_kernel() {
        // ∫ (1 − cos tξ)/t² dt = π|ξ|
        let fam = KernelFamily::constant_one();
        let m = multiplier(&fam, 0.3, &[2.0], Region::Full, &scheme()).unwrap();
        assert!(rel(m.value, 2.0 * PI) < 1e-9, "{}", m.value);
        assert_eq!(multiplier(&fam, 0.3, &[0.0], Region::Full, &scheme()).unwrap().value, 0.0);
    }

    #[test]
    fn fractional_multiplier_is_homogeneous() {
        // ε∫_0^∞ t^{2ε−3}(1−cos t|ξ|) dt = −ε Γ(−α) cos(πα/2) |ξ|^α, α = 2−2ε
        let fam = KernelFamily::fractional(1).unwrap();
        for &eps in &[0.4, 0.1, 0.01] {
            let alpha = 2.0 - 2.0 * eps;
            let c = -eps * libm::tgamma(-alpha) * (0.5 * PI * alpha).cos();
            for &x in &[1e-3, 0.7, 5.0, 40.0] {
                let m = multiplier(&fam, eps, &[x], Region::Full, &scheme()).unwrap();
                let want = c * x.powf(alpha);
                assert!(rel(m.value, want) < 1e-8, "ε={eps} ξ={x}: {} vs {want}", m.value);
            }
        }
    }

    #[test]
    fn multiplier_regions_add_up() {
        let s = scheme();
        for fam in [KernelFamily::fractional(2).unwrap(), KernelFamily::annulus_bump(2, 1.0).unwrap()] {
            let xi = [3.0, -1.0];
            let d = 0.1;
            let parts: f64 = [
                Region::Ball { radius: d },
                Region::Annulus { inner: d, outer: 1.0 / d },
                Region::Complement { radius: 1.0 / d },
            ]
            .iter()
            .map(|&r| multiplier(&fam, 0.05, &xi, r, &s).unwrap().value)
            .sum();
            let full = multiplier(&fam, 0.05, &xi, Region::Full, &s).unwrap().value;
            assert!(rel(parts, full) < 1e-9, "{fam}: {parts} vs {full}");
        }
    }

    #[test]
    fn aniso_multiplier_matches_direct_angular_sum() {
        let fam = KernelFamily::from_id("aniso:a2=0.5,b2=0.2,a1=0.1", 2).unwrap();
        let eps = 0.3;
        let k = fam.at(eps).unwrap();
        let s = scheme();
        for xi in [[2.0, 1.0], [-0.5, 4.0]] {
            let direct = quad::integrate_region(
                &|z: &[f64]| {
                    let r2 = z[0] * z[0] + z[1] * z[1];
                    k.value(z) * one_minus_cos(z[0] * xi[0] + z[1] * xi[1]) / r2
                },
                2,
                Region::Ball { radius: crate::kernels::GAUSS_CUTOFF * eps },
                &LineHints::default(),
                &s,
            )
            .unwrap()
            .value;
            let m = multiplier(&fam, eps, &xi, Region::Full, &s).unwrap().value;
            assert!(rel(m, direct) < 1e-9, "{xi:?}: {m} vs {direct}");
        }
    }

    #[test]
    fn parseval_bridge_in_one_dimension() {
        let u = builtin_function("gaussian", 1).unwrap();
        let fam = KernelFamily::fractional(1).unwrap();
        let p = energy_physical(&u, &fam, 0.5, &scheme()).unwrap().value;
        let f = energy_fourier(&u, &fam, 0.5, &scheme()).unwrap().value;
        assert!(rel(p, f) < 1e-5, "{p} vs {f}");
    }

    #[test]
    fn limit_examples() {
        let u = builtin_function("gaussian", 1).unwrap();
        let mu = SphericalMeasure::new(1, vec![vec![1.0], vec![-1.0]], vec![0.25, 0.25]).unwrap();
        assert!(rel(limit_local(&u, &mu).unwrap(), PI.sqrt() / 8.0) < 1e-15);
        assert_eq!(limit_local(&u, &SphericalMeasure::zero(1)).unwrap(), 0.0);
        let nu = AtomicMeasure::new(1, vec![vec![1.0], vec![-1.0]], vec![1.0, 1.0]).unwrap();
        let g1 = g_shift(&u, &[1.0]).unwrap();
        assert!(rel(limit_nonlocal(&u, &nu).unwrap(), g1) < 1e-15);
        assert!(rel(limit_nonlocal(&u, &nu.scaled(3.0)).unwrap(), 3.0 * g1) < 1e-15);
        assert_eq!(limit_nonlocal(&u, &AtomicMeasure::zero(1)).unwrap(), 0.0);

        let u2 = builtin_function("hat_smoothed", 2).unwrap();
        let m = 1.7;
        let uni = SphericalMeasure::uniform(2, m, &AngularRule::circle(64)).unwrap();
        assert!(rel(limit_local(&u2, &uni).unwrap(), m / 4.0 * u2.grad_l2_sq()) < 1e-13);
        assert!(rel(limit_local_from_matrix(&u2, &uni.anisotropy()).unwrap(), limit_local(&u2, &uni).unwrap()) < 1e-13);
    }
}
