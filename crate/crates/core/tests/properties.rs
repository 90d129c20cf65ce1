use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use proptest::prelude::*;
use smlab::blowup::{from_polar, to_polar, PhasePoint, ProjectiveChart};
use smlab::coisotropic::LinearCoisotropic;
use smlab::fit::loglog_fit;
use smlab::hamiltonian::{flow, taylor_split, RegisteredSymbol, SplitPart, DEFAULT_DT};
use smlab::quantize::{adjoint_defect, apply_exact, Quantization};
use smlab::symbol::{Profile, Symbol, SymbolTerm};
use smlab::torus::{make_uk_family, TorusFunction};
use smlab::wavefront::{classify, Order, ProbePoint, ProbeWidths};

fn kind() -> impl Strategy<Value = Quantization> {
    prop_oneof![Just(Quantization::Left), Just(Quantization::Right), Just(Quantization::Weyl)]
}

fn small_symbol() -> impl Strategy<Value = Symbol> {
    (-2i64..=2, -2i64..=2, -1.0..1.0f64, -1.0..1.0f64, 0usize..2).prop_map(|(k0, k1, re, im, axis)| {
        Symbol::new(
            2,
            vec![
                SymbolTerm::new(vec![(vec![k0, k1], Complex64::new(re, im))], Profile::axis_gaussian(2, axis)),
                SymbolTerm::new(vec![(vec![0, 0], Complex64::new(0.5, 0.0))], Profile::coordinate(1 - axis)),
            ],
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parseval_matches_quadrature(seed in 0u64..1000) {
        let u = TorusFunction::random_dense(2, 3, seed).unwrap();
        let n = 8;
        let mut mean = 0.0;
        for a in 0..n {
            for b in 0..n {
                mean += u.eval(&[TAU * a as f64 / n as f64, TAU * b as f64 / n as f64]).norm_sqr();
            }
        }
        mean /= (n * n) as f64;
        prop_assert!((mean - u.l2_norm().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn adjoint_identity(a in small_symbol(), q in kind(), seed in 0u64..100, j in 2u32..40) {
        let probes: Vec<_> = (0..2).map(|s| TorusFunction::random_dense(2, 4, seed * 7 + s).unwrap()).collect();
        prop_assert!(adjoint_defect(&a, q, 1.0 / j as f64, &probes).unwrap() < 1e-12);
    }

    #[test]
    fn quantization_is_linear(a in small_symbol(), q in kind(), s1 in 0u64..50, s2 in 0u64..50, c in -2.0..2.0f64) {
        let h = 0.1;
        let u = TorusFunction::random_dense(2, 3, s1).unwrap();
        let v = TorusFunction::random_dense(2, 3, s2 + 100).unwrap();
        let c = Complex64::new(c, 0.5);
        let lhs = apply_exact(&a, q, &u.add(&v.scale(c)).unwrap(), h).unwrap();
        let rhs = apply_exact(&a, q, &u, h).unwrap().add(&apply_exact(&a, q, &v, h).unwrap().scale(c)).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().l2_norm() < 1e-12);
    }

    #[test]
    fn conj_is_involution_and_bracket_antisymmetric(a in small_symbol(), b in small_symbol(),
                                                    x in 0.0..TAU, xi in -2.0..2.0f64) {
        prop_assert_eq!(a.conj().conj(), a.clone());
        let ab = a.poisson_bracket(&b).unwrap().eval(&[x, 0.3], &[xi, -0.4], 0.1);
        let ba = b.poisson_bracket(&a).unwrap().eval(&[x, 0.3], &[xi, -0.4], 0.1);
        prop_assert!((ab + ba).norm() < 1e-9 * (1.0 + ab.norm()));
    }

    #[test]
    fn loglog_recovers_power(p in -3.0..3.0f64, c in 0.1..10.0f64) {
        let hs = [0.5, 0.25, 0.125, 0.0625];
        let ys: Vec<f64> = hs.iter().map(|h: &f64| c * h.powf(p)).collect();
        let fit = loglog_fit(&hs, &ys).unwrap();
        prop_assert!((fit.slope - p).abs() < 1e-10);
        prop_assert!(fit.residual < 1e-10);
    }

    #[test]
    fn projective_round_trip(x in prop::collection::vec(0.0..TAU, 4),
                             xi in prop::collection::vec(-2.0..2.0f64, 4),
                             h in 0.01..1.0f64, sign in prop_oneof![Just(1i8), Just(-1i8)]) {
        let c = LinearCoisotropic::new(vec![vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]]).unwrap();
        let chart = ProjectiveChart::new(c, 0, sign).unwrap();
        let zeta = xi[0] + xi[2];
        prop_assume!(zeta * f64::from(sign) > 0.1);
        let p = PhasePoint { x, xi, h };
        let back = chart.from_projective(&chart.to_projective(&p).unwrap()).unwrap();
        for (a, b) in back.xi.iter().zip(&p.xi) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((back.h - p.h).abs() < 1e-14);
    }

    #[test]
    fn polar_round_trip(xi in prop::collection::vec(-2.0..2.0f64, 3)) {
        let c = LinearCoisotropic::coordinate(3, &[0, 1]).unwrap();
        prop_assume!(xi[0].hypot(xi[1]) > 1e-3);
        let p = to_polar(&c, &[0.1, 0.2, 0.3], &xi, None).unwrap();
        let th = p.theta().unwrap();
        prop_assert!((-PI..=PI).contains(&th));
        let (_, back) = from_polar(&c, &p).unwrap();
        for (a, b) in back.iter().zip(&xi) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn h1_flow_is_a_group(t1 in 0.0..1.5f64, t2 in 0.0..1.5f64, a in -1.0..1.0f64, b in -1.0..1.0f64) {
        let c = LinearCoisotropic::new(vec![vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]]).unwrap();
        let s = taylor_split(RegisteredSymbol::HalfSquaredNorm { dim: 4 }, c).unwrap();
        let field = s.field(SplitPart::H1);
        let fiber = [0.0, 0.6, 0.8, a, b];
        let x0 = [0.5, 1.0, 1.5, 2.0];
        let one = flow(&field, &x0, &fiber, t1, DEFAULT_DT).unwrap();
        let (xm, fm) = one.end();
        let two = flow(&field, xm, fm, t2, DEFAULT_DT).unwrap();
        let direct = flow(&field, &x0, &fiber, t1 + t2, DEFAULT_DT).unwrap();
        for (p, q) in two.end().0.iter().zip(direct.end().0) {
            let d = (p - q).rem_euclid(TAU);
            prop_assert!(d.min(TAU - d) < 1e-9);
        }
        prop_assert_eq!(direct.end().1, &fiber[..]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn classification_is_translation_equivariant(a in prop::collection::vec(0.0..TAU, 3), cell in 0usize..8) {
        let c = LinearCoisotropic::coordinate(3, &[0, 1]).unwrap();
        let fam = make_uk_family(3, &(8..=30).collect::<Vec<_>>()).unwrap();
        let shifted = fam.map("shifted", |_, u| Ok(u.translate(&a))).unwrap();
        let th = TAU * cell as f64 / 8.0;
        let p = ProbePoint::Boundary { x0: vec![0.4, 1.1, 2.0], gamma0: vec![th.cos(), th.sin()], xi2: vec![1.0] };
        let x1: Vec<f64> = p.x0().iter().zip(&a).map(|(x, s)| x + s).collect();
        let q = p.with_x0(x1);
        let w = ProbeWidths::default();
        let cfg = Default::default();
        let v0 = classify(&fam, &p, Some(&c), &w, Order::Infinite, 0.0, &cfg).unwrap();
        let v1 = classify(&shifted, &q, Some(&c), &w, Order::Infinite, 0.0, &cfg).unwrap();
        prop_assert_eq!(v0.classification, v1.classification);
        for ((_, n0), (_, n1)) in v0.table.iter().zip(&v1.table) {
            prop_assert!((n0 - n1).abs() <= 1e-12 * (1.0 + n0));
        }
    }
}
