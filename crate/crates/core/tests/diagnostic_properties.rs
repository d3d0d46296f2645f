use bbm_core::diagnostics::*;
use bbm_core::kernels::{builtin_catalog, KernelFamily};
use bbm_core::quad::{QuadratureScheme, Region};

fn s() -> QuadratureScheme {
    QuadratureScheme::default()
}

#[test]
fn conditions_i_and_i_prime_agree_on_builtins() {
    for dim in 1..=2 {
        for fam in builtin_catalog(dim).unwrap() {
            let a = check_condition_i(&fam, &default_eps_seq(), &default_r_grid(), &s()).unwrap();
            let b = check_condition_i_prime(&fam, &default_eps_seq(), &default_r_grid(), &s()).unwrap();
            assert_eq!(a.verdict, b.verdict, "{} N={dim}", fam.id());
            if a.verdict == Verdict::Pass {
                let l2 = check_levy2(&fam, &default_eps_seq(), &s()).unwrap();
                assert_eq!(l2.verdict, Verdict::Pass, "{} N={dim}", fam.id());
            }
        }
    }
    let c = KernelFamily::constant_one();
    assert_eq!(check_condition_i(&c, &default_eps_seq(), &default_r_grid(), &s()).unwrap().verdict, Verdict::Fail);
    assert_eq!(check_levy2(&c, &default_eps_seq(), &s()).unwrap().verdict, Verdict::Pass);
}

#[test]
fn ball_tail_sum_brackets_the_lorentzian_moment() {
    // ½(ball + R²·tail) ≤ R²∫ρ/(R²+|z|²) ≤ ball + R²·tail
    for fam in builtin_catalog(1).unwrap() {
        let a = check_condition_i(&fam, &default_eps_seq(), &default_r_grid(), &s()).unwrap();
        let b = check_condition_i_prime(&fam, &default_eps_seq(), &default_r_grid(), &s()).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            let (x, y) = (x.value.unwrap(), y.value.unwrap());
            assert!(0.5 * x <= y * (1.0 + 1e-9) && y <= x * (1.0 + 1e-9), "{}: {x} {y}", fam.id());
        }
    }
}

#[test]
fn radial_sphere_measures_are_uniform() {
    for dim in 1..=3 {
        for fam in builtin_catalog(dim).unwrap() {
            for eps in [0.3, 0.01] {
                let mu = sphere_measure(&fam, eps, 0.5, &s()).unwrap();
                assert!(mu.weights.iter().all(|&w| w >= 0.0));
                if fam.is_radial() {
                    // weights are proportional to the angular rule's
                    let rule = s().angular_rule(dim).unwrap();
                    let ratio = mu.total_mass() / rule.total_weight();
                    for (w, a) in mu.weights.iter().zip(&rule.weights) {
                        assert!((w - ratio * a).abs() <= 1e-10 * ratio * a + 1e-300, "{}", fam.id());
                    }
                }
            }
        }
    }
}

#[test]
fn probe_pairings_are_linear() {
    let fam = KernelFamily::gaussian_mollifier(2).unwrap();
    let k = fam.at(0.2).unwrap();
    let (p, q) = (Probe::origin(0.5), Probe::shell(1.0, 0.5));
    let pair = |f: &(dyn Fn(f64) -> f64 + Sync)| {
        k.radial_moment(Region::Full, &f, &[0.25, 0.5, 0.75, 1.25, 1.5], &s()).unwrap().value
    };
    let a = pair(&|r| p.eval(r));
    let b = pair(&|r| q.eval(r));
    let combined = pair(&|r| 2.5 * p.eval(r) - 0.75 * q.eval(r));
    assert!((combined - (2.5 * a - 0.75 * b)).abs() <= 1e-12 * combined.abs());
}
