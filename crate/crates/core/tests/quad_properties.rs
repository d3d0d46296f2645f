use std::f64::consts::PI;

use bbm_core::quad::{integrate_radial, integrate_region, integrate_rn, LineHints, QuadratureScheme, Region};
use bbm_core::special::sphere_area;
use rand::{rngs::StdRng, Rng, SeedableRng};

#[test]
fn region_splits_add_up() {
    let s = QuadratureScheme { n_theta: 64, n_polar: 16, n_azimuth: 32, ..Default::default() };
    let mut rng = StdRng::seed_from_u64(11);
    for case in 0..5 {
        let dim = 1 + case % 3;
        let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = rng.gen_range(0.3..3.0);
        let a = rng.gen_range(-0.5..0.5);
        let f = move |z: &[f64]| {
            let d2: f64 = z.iter().zip(&c).map(|(x, y)| (x - y) * (x - y)).sum();
            (1.0 + a * z[0]) * (-b * d2).exp() + 1.0 / (1.0 + z.iter().map(|x| x * x).sum::<f64>()).powi(3)
        };
        let h = LineHints::default();
        let full = integrate_rn(&f, dim, &h, &s).unwrap();
        for delta in [0.1, 0.5] {
            let parts = [
                Region::Ball { radius: delta },
                Region::Annulus { inner: delta, outer: 1.0 / delta },
                Region::Complement { radius: 1.0 / delta },
            ]
            .map(|r| integrate_region(&f, dim, r, &h, &s).unwrap());
            let sum: f64 = parts.iter().map(|p| p.value).sum();
            let budget: f64 = parts.iter().map(|p| p.abs_error_est).sum::<f64>() + full.abs_error_est;
            let roundoff = 1e-14 * full.value.abs();
            assert!(
                (sum - full.value).abs() <= budget + roundoff,
                "case {case} δ={delta}: {sum} vs {} (budget {budget:e})",
                full.value
            );
        }
    }
}

struct Case {
    dim: usize,
    region: Region,
    g: Box<dyn Fn(f64) -> f64 + Sync>,
    exact: f64,
}

fn corpus() -> Vec<Case> {
    let mut rng = StdRng::seed_from_u64(3);
    let mut out = Vec::new();
    // ∫ |z|^a e^{-b|z|²} dz = |S| Γ((N+a)/2) / (2 b^{(N+a)/2})
    for _ in 0..40 {
        let dim = rng.gen_range(1..=3);
        let a = rng.gen_range(-(dim as f64) + 0.3..4.0);
        let b = rng.gen_range(0.05..20.0);
        let k = 0.5 * (dim as f64 + a);
        out.push(Case {
            dim,
            region: Region::Full,
            g: Box::new(move |r: f64| sphere_area(dim) * r.powf(a) * (-b * r * r).exp()),
            exact: sphere_area(dim) * libm::tgamma(k) / (2.0 * b.powf(k)),
        });
    }
    // ∫_{B(0,R)} |z|^a dz = |S| R^{N+a} / (N+a)
    for _ in 0..30 {
        let dim = rng.gen_range(1..=3);
        let a = rng.gen_range(-(dim as f64) + 0.2..3.0);
        let radius = 10f64.powf(rng.gen_range(-2.0..2.0));
        let p = dim as f64 + a;
        out.push(Case {
            dim,
            region: Region::Ball { radius },
            g: Box::new(move |r: f64| sphere_area(dim) * r.powf(a)),
            exact: sphere_area(dim) * radius.powf(p) / p,
        });
    }
    // ∫_{B(0,R)^c} |z|^{-p} dz = |S| R^{N-p} / (p-N), and a Lorentzian tail
    for i in 0..30 {
        let dim = rng.gen_range(1..=3);
        let radius = 10f64.powf(rng.gen_range(-2.0..2.0));
        if i % 2 == 0 {
            let p = dim as f64 + rng.gen_range(0.5..4.0);
            out.push(Case {
                dim,
                region: Region::Complement { radius },
                g: Box::new(move |r: f64| sphere_area(dim) * r.powf(-p)),
                exact: sphere_area(dim) * radius.powf(dim as f64 - p) / (p - dim as f64),
            });
        } else {
            // ∫_R^∞ dr / (1 + r²) = π/2 − atan R on the line
            out.push(Case {
                dim: 1,
                region: Region::Complement { radius },
                g: Box::new(|r: f64| 2.0 / (1.0 + r * r)),
                exact: 2.0 * (0.5 * PI - radius.atan()),
            });
        }
    }
    out
}

#[test]
fn error_estimates_are_honest() {
    let s = QuadratureScheme::default();
    let cases = corpus();
    assert_eq!(cases.len(), 100);
    let mut honest = 0;
    for (i, c) in cases.iter().enumerate() {
        let est = integrate_radial(&c.g, c.dim, c.region, &LineHints::default(), &s).unwrap();
        let err = (est.value - c.exact).abs();
        if err <= 10.0 * est.abs_error_est {
            honest += 1;
        } else {
            println!("case {i}: error {err:e} vs estimate {:e} (value {})", est.abs_error_est, c.exact);
        }
        assert!(err <= 1e-8 * c.exact.abs(), "case {i}: {} vs {}", est.value, c.exact);
    }
    assert!(honest >= 95, "only {honest}/100 estimates cover the true error");
}
