//! Special functions needed by the angular reductions of radial integrands.
//!
//! The surface integral of `1 - cos(s σ·e)` over the unit sphere has a closed
//! form in each supported dimension; the helpers below evaluate those forms
//! without cancellation for small arguments.

use std::f64::consts::PI;

/// Bessel function of the first kind, order zero.
pub fn bessel_j0(s: f64) -> f64 {
    let s = s.abs();
    if s < 6.0 {
        j0_series(s)
    } else if s <= 40.0 {
        j0_trapezoid(s)
    } else {
        j0_hankel(s)
    }
}

/// Bessel function of the first kind of integer order `n ≥ 0`.
pub fn bessel_jn(n: u32, s: f64) -> f64 {
    if n == 0 {
        return bessel_j0(s);
    }
    let sign = if s < 0.0 && n % 2 == 1 { -1.0 } else { 1.0 };
    let s = s.abs();
    if s < 8.0 {
        // (s/2)^n / n! · Σ (−s²/4)^m / (m! (m+1)_n)
        let half = 0.5 * s;
        let mut lead = 1.0;
        for k in 1..=n {
            lead *= half / k as f64;
        }
        let q = half * half;
        let mut term = 1.0;
        let mut sum = 1.0;
        for m in 1..80 {
            let mf = m as f64;
            term *= -q / (mf * (mf + n as f64));
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sign * lead * sum
    } else {
        // J_n(s) = (1/2π) ∫_0^{2π} cos(nτ − s sin τ) dτ, trapezoid on the period
        let nf = n as f64;
        let m = (s + nf + 20.0 * s.cbrt() + 32.0).ceil() as usize;
        let h = 2.0 * PI / m as f64;
        let sum: f64 = (0..m)
            .map(|k| {
                let t = h * k as f64;
                (nf * t - s * t.sin()).cos()
            })
            .sum();
        sign * sum / m as f64
    }
}

/// `1 - J0(s)`, accurate to relative precision for small `s`.
pub fn one_minus_j0(s: f64) -> f64 {
    let s = s.abs();
    if s < 2.0 {
        let q = 0.25 * s * s;
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 1..40 {
            let kf = k as f64;
            term *= -q / (kf * kf);
            sum -= term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        1.0 - bessel_j0(s)
    }
}

/// `1 - cos(s)` without cancellation.
pub fn one_minus_cos(s: f64) -> f64 {
    let h = (0.5 * s).sin();
    2.0 * h * h
}

/// `1 - sin(s)/s`, with the removable singularity filled in.
pub fn one_minus_sinc(s: f64) -> f64 {
    let s = s.abs();
    if s < 0.5 {
        let q = s * s;
        let mut term = 1.0;
        let mut sum = 0.0;
        let mut k = 1.0_f64;
        loop {
            term *= -q / ((2.0 * k) * (2.0 * k + 1.0));
            sum -= term;
            if term.abs() <= 1e-18 * sum.abs() || k > 30.0 {
                break;
            }
            k += 1.0;
        }
        sum
    } else {
        1.0 - s.sin() / s
    }
}

pub fn sinc(s: f64) -> f64 {
    1.0 - one_minus_sinc(s)
}

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Surface measure of the unit sphere in R^N.
pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => {
            // 2 π^{N/2} / Γ(N/2), only reached by callers that validate dim elsewhere
            let n = dim as f64;
            2.0 * PI.powf(0.5 * n) / libm::tgamma(0.5 * n)
        }
    }
}

fn j0_series(s: f64) -> f64 {
    let q = 0.25 * s * s;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let kf = k as f64;
        term *= -q / (kf * kf);
        sum += term;
        if term.abs() < 1e-18 {
            break;
        }
    }
    sum
}

// J0(s) = (1/π) ∫_0^π cos(s sin θ) dθ; the integrand is π-periodic and entire,
// so the trapezoid rule converges once the node count exceeds the Bessel cutoff.
fn j0_trapezoid(s: f64) -> f64 {
    let n = ((s + 20.0 * s.cbrt() + 24.0) * 0.5).ceil() as usize;
    let h = PI / n as f64;
    let sum: f64 = (0..n).map(|k| (s * (h * k as f64).sin()).cos()).sum();
    sum / n as f64
}

fn j0_hankel(s: f64) -> f64 {
    let eight_s = 8.0 * s;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut t = 1.0;
    for k in 1..200 {
        let odd = (2 * k - 1) as f64;
        let next = t * odd * odd / (k as f64 * eight_s);
        if next > t {
            break;
        }
        t = next;
        // sign pattern: k=1 → −, k=2 → −, k=3 → +, k=4 → +, ...
        let sign = if ((k + 1) / 2) % 2 == 1 { -1.0 } else { 1.0 };
        if k % 2 == 0 {
            p += sign * t;
        } else {
            q += sign * t;
        }
        if t < 1e-17 {
            break;
        }
    }
    let chi = s - 0.25 * PI;
    (2.0 / (PI * s)).sqrt() * (p * chi.cos() - q * chi.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from mpmath at 30 digits.
    const J0_TABLE: &[(f64, f64)] = &[
        (0.0, 1.0),
        (0.5, 0.938_469_807_240_812_9),
        (1.0, 0.765_197_686_557_966_6),
        (2.404_825_557_695_773, 0.0),
        (5.0, -0.177_596_771_314_338_3),
        (5.999, 0.150_368_475_052_629_24),
        (6.0, 0.150_645_257_250_996_9),
        (10.0, -0.245_935_764_451_348_3),
        (25.0, 0.096_266_783_275_958_16),
        (40.0, 0.007_366_890_584_237_29),
        (40.5, -0.053_582_675_632_262_95),
        (100.0, 0.019_985_850_304_223_12),
        (1000.0, 0.024_786_686_152_420_17),
    ];

    #[test]
    fn j0_matches_reference_values() {
        for &(s, want) in J0_TABLE {
            let got = bessel_j0(s);
            assert!((got - want).abs() < 2e-15, "J0({s}) = {got}, want {want}");
        }
    }

    #[test]
    fn jn_matches_reference_values() {
        // mpmath besselj
        let table = [
            (2, 0.1, 0.001_248_958_658_799_919),
            (2, 1.0, 0.114_903_484_931_900_48),
            (2, 7.9, -0.138_873_389_164_885_53),
            (2, 8.1, -0.086_379_733_802_009_056),
            (4, 3.0, 0.132_034_183_924_612_21),
            (1, 20.0, 0.066_833_124_175_850_05),
            (6, 55.5, -0.006_340_388_695_239_933_5),
        ];
        for (n, s, want) in table {
            let got = bessel_jn(n, s);
            assert!((got - want).abs() < 2e-15 + 1e-13 * want.abs(), "J{n}({s}) = {got}, want {want}");
        }
        assert_eq!(bessel_jn(0, 1.0), bessel_j0(1.0));
    }

    #[test]
    fn one_minus_j0_on_both_branches() {
        assert!((one_minus_j0(1.99) - 0.770_338_815_954_410_56).abs() < 1e-15);
        assert!((one_minus_j0(2.01) - 0.781_873_178_674_151_09).abs() < 1e-15);
        // small-argument asymptote s²/4
        let s = 1e-6;
        assert!((one_minus_j0(s) / (0.25 * s * s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_minus_sinc_small_and_large() {
        let s = 1e-5;
        assert!((one_minus_sinc(s) / (s * s / 6.0) - 1.0).abs() < 1e-9);
        assert!((one_minus_sinc(0.49) - 0.039_539_003_732_330_537).abs() < 1e-16);
        assert!((one_minus_sinc(0.51) - 0.042_789_711_994_299_032).abs() < 1e-16);
        assert!((one_minus_sinc(3.0) - (1.0 - 3.0_f64.sin() / 3.0)).abs() < 1e-16);
    }

    #[test]
    fn sphere_areas() {
        assert_eq!(sphere_area(1), 2.0);
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-15);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-15);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-12);
    }
}
