use pqobstacle::integrand::{check_convexity, SampleShape};
use pqobstacle::{BoxDomain, Coefficient, Expr, Integrand};
use proptest::prelude::*;

fn zoo() -> Vec<Integrand> {
    let stripes = Coefficient::Expr(Expr::Stripes {
        axis: 0,
        frequency: 2.0,
        amplitude: 0.8,
        offset: 0.2,
    });
    let holder = Coefficient::Expr(Expr::AbsPower {
        axis: 1,
        center: 0.5,
        exponent: 0.5,
        scale: 1.0,
    });
    let mut out = Vec::new();
    for p in [2.0, 3.0, 4.0] {
        out.push(Integrand::p_power(p).unwrap());
        out.push(Integrand::p_power_regularized(p, 0.5).unwrap());
        out.push(Integrand::double_phase(p, p + 1.0, stripes.clone()).unwrap());
        out.push(Integrand::holder_modulated(p, 0.5, holder.clone()).unwrap());
    }
    out
}

fn matrix(dir: [f64; 4], magnitude: f64) -> Vec<f64> {
    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
    dir.iter().map(|v| v * magnitude / n).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_central_differences(
        x in prop::array::uniform2(0.0f64..1.0),
        dir in prop::array::uniform4(-1.0f64..1.0),
        log_mag in (0.1f64).ln()..(10.0f64).ln(),
    ) {
        let z = matrix(dir, log_mag.exp());
        for f in zoo() {
            let g = f.grad_z(&x, &z).unwrap();
            for k in 0..4 {
                let h = 1e-6 * z[k].abs().max(1e-2);
                let mut zp = z.clone();
                zp[k] += h;
                let mut zm = z.clone();
                zm[k] -= h;
                let fd = (f.eval(&x, &zp).unwrap() - f.eval(&x, &zm).unwrap()) / (2.0 * h);
                let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                prop_assert!((fd - g[k]).abs() <= 1e-6 * scale, "{}: {fd} vs {}", f.kind().name(), g[k]);
            }
        }
    }

    #[test]
    fn autonomous_densities_ignore_x(
        x in prop::array::uniform2(0.0f64..1.0),
        y in prop::array::uniform2(0.0f64..1.0),
        dir in prop::array::uniform4(-1.0f64..1.0),
    ) {
        let z = matrix(dir, 2.0);
        let constant = Coefficient::Expr(Expr::constant(0.7));
        for f in [
            Integrand::p_power(3.0).unwrap(),
            Integrand::p_power_regularized(2.5, 1.0).unwrap(),
            Integrand::double_phase(2.0, 2.5, constant).unwrap(),
        ] {
            prop_assert!(f.is_autonomous());
            prop_assert_eq!(f.eval(&x, &z).unwrap().to_bits(), f.eval(&y, &z).unwrap().to_bits());
        }
    }
}

#[test]
fn every_builtin_is_midpoint_convex() {
    for f in zoo() {
        let r = check_convexity(
            &f,
            &BoxDomain::unit_square(),
            SampleShape::new(2, 2),
            2000,
            5.0,
            11,
        );
        assert_eq!(r.violations, 0, "{}", f.kind().name());
    }
}

#[test]
fn double_phase_gradient_example() {
    let f = Integrand::double_phase(2.0, 4.0, Coefficient::Expr(Expr::constant(1.0))).unwrap();
    let g = f.grad_z(&[0.3, 0.3], &[1.0, 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(g, vec![6.0, 0.0, 0.0, 0.0]);
}
