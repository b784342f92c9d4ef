//! BD-Rate, break-even, information and PSNR properties.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scalecodec::eval::{
    bd_rate, break_even, ib_discrete_check, psnr_from_mse, relative_rate, BreakEvenInput, Point,
    QualityKind, RateQualityCurve,
};

fn arb_curve() -> impl Strategy<Value = RateQualityCurve> {
    (4usize..9, 0.01f64..1.0, 10.0f64..40.0).prop_flat_map(|(n, r0, q0)| {
        (
            prop::collection::vec(1.05f64..2.0, n - 1),
            prop::collection::vec(0.1f64..5.0, n - 1),
        )
            .prop_map(move |(rs, qs)| {
                let mut pts = vec![Point { bpp: r0, quality: q0 }];
                for (r, q) in rs.iter().zip(&qs) {
                    let last = *pts.last().unwrap();
                    pts.push(Point { bpp: last.bpp * r, quality: last.quality + q });
                }
                RateQualityCurve::new("c", QualityKind::Psnr, pts).unwrap()
            })
    })
}

/// Reference value by brute force: dense trapezoid over a piecewise-linear
/// log-rate interpolant, which agrees with any interpolant when the two
/// curves differ by a constant log offset.
fn trapezoid_oracle(reference: &[(f64, f64)], test: &[(f64, f64)]) -> f64 {
    let lin = |pts: &[(f64, f64)], q: f64| {
        let i = pts.windows(2).position(|w| q <= w[1].1).unwrap_or(pts.len() - 2);
        let (a, b) = (pts[i], pts[i + 1]);
        let t = (q - a.1) / (b.1 - a.1);
        a.0.log10() + t * (b.0.log10() - a.0.log10())
    };
    let lo = reference[0].1.max(test[0].1);
    let hi = reference.last().unwrap().1.min(test.last().unwrap().1);
    let n = 100_000;
    let mut acc = 0.0;
    for i in 0..=n {
        let q = lo + (hi - lo) * i as f64 / n as f64;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        acc += w * (lin(test, q) - lin(reference, q));
    }
    (10f64.powf(acc / n as f64) - 1.0) * 100.0
}

proptest! {
    #[test]
    fn identical_curves_give_zero(c in arb_curve()) {
        prop_assert!(bd_rate(&c, &c).unwrap().percent.abs() < 1e-9);
    }

    #[test]
    fn pure_rate_scaling_is_exact(c in arb_curve(), k in 0.2f64..5.0) {
        let t = c.scale_rate(k).unwrap();
        let got = bd_rate(&c, &t).unwrap().percent;
        prop_assert!((got - (k - 1.0) * 100.0).abs() < 1e-6, "k {} got {}", k, got);
    }

    #[test]
    fn quality_shift_leaves_bd_rate_unchanged(a in arb_curve(), k in 0.6f64..1.5, d in -20.0f64..20.0) {
        let b = a.scale_rate(k).unwrap();
        let base = bd_rate(&a, &b).unwrap().percent;
        let shifted = bd_rate(&a.shift_quality(d).unwrap(), &b.shift_quality(d).unwrap()).unwrap().percent;
        prop_assert!((base - shifted).abs() < 1e-9);
    }

    #[test]
    fn break_even_matches_a_dense_scan(r_b in 0.01f64..3.0, r_t in 0.01f64..3.0) {
        let input = BreakEvenInput { r_b, r_t };
        let f = break_even(input).unwrap();
        let n = 10_000;
        let best = (0..=n)
            .map(|i| i as f64 / n as f64)
            .filter(|&f| relative_rate(input, f) <= 1.0)
            .fold(0.0f64, f64::max);
        let any = (0..=n).any(|i| relative_rate(input, i as f64 / n as f64) <= 1.0);
        let expect = if any { best } else { 0.0 };
        prop_assert!((f - expect).abs() <= 1e-4, "closed form {} scan {}", f, expect);
    }

    #[test]
    fn break_even_is_monotone(r_b in 0.01f64..0.99, r_t in 1.01f64..4.0, e in 0.0f64..0.5) {
        let f = break_even(BreakEvenInput { r_b, r_t }).unwrap();
        let wider = break_even(BreakEvenInput { r_b, r_t: r_t + e }).unwrap();
        let heavier = break_even(BreakEvenInput { r_b: (r_b + e).min(0.999), r_t }).unwrap();
        prop_assert!(wider <= f && heavier <= f);
    }

    #[test]
    fn information_bounds(n in 1usize..64, m in 1usize..64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let z: f64 = w.iter().sum();
        let px: Vec<f64> = w.iter().map(|v| v / z).collect();
        let r = ib_discrete_check(&table, &px).unwrap();
        prop_assert!(r.i_xy <= r.h_x.min(r.h_y) + 1e-9);
        prop_assert!((r.i_xy - r.h_y).abs() < 1e-9);
        prop_assert_eq!(r.h_y_given_x, 0.0);
    }

    #[test]
    fn psnr_strictly_decreases_in_mse(a in 1e-9f64..1.0, b in 1e-9f64..1.0) {
        prop_assume!(a < b);
        prop_assert!(psnr_from_mse(a) > psnr_from_mse(b));
    }
}

#[test]
fn halved_rate_is_minus_fifty_percent() {
    let reference = [(0.2, 30.0), (0.4, 33.0), (0.8, 36.0), (1.6, 39.0)];
    let test: Vec<(f64, f64)> = reference.iter().map(|&(r, q)| (r / 2.0, q)).collect();
    let mk = |v: &[(f64, f64)]| {
        RateQualityCurve::new(
            "c",
            QualityKind::Psnr,
            v.iter().map(|&(bpp, quality)| Point { bpp, quality }).collect(),
        )
        .unwrap()
    };
    let got = bd_rate(&mk(&reference), &mk(&test)).unwrap().percent;
    assert!((got + 50.0).abs() < 1e-6);
    assert!((trapezoid_oracle(&reference, &test) + 50.0).abs() < 1e-6);
    let scaled = reference.map(|(r, q)| (r * 1.25, q));
    assert!((bd_rate(&mk(&reference), &mk(&scaled)).unwrap().percent - 25.0).abs() < 1e-6);
}

#[test]
fn non_constant_offsets_agree_with_the_dense_oracle_on_linear_curves() {
    // log-rate linear in quality on both curves: every interpolant is exact.
    let reference: Vec<(f64, f64)> = (0..5).map(|i| (0.1 * 2f64.powi(i), 30.0 + 3.0 * i as f64)).collect();
    let test: Vec<(f64, f64)> = (0..5).map(|i| (0.08 * 2.2f64.powi(i), 31.0 + 3.0 * i as f64)).collect();
    let mk = |v: &[(f64, f64)]| {
        RateQualityCurve::new(
            "c",
            QualityKind::Psnr,
            v.iter().map(|&(bpp, quality)| Point { bpp, quality }).collect(),
        )
        .unwrap()
    };
    let got = bd_rate(&mk(&reference), &mk(&test)).unwrap().percent;
    let oracle = trapezoid_oracle(&reference, &test);
    assert!((got - oracle).abs() < 1e-3, "{got} vs {oracle}");
}

#[test]
fn bd_rate_rejects_short_or_disjoint_curves() {
    let mk = |v: &[(f64, f64)]| {
        RateQualityCurve::new(
            "c",
            QualityKind::Psnr,
            v.iter().map(|&(bpp, quality)| Point { bpp, quality }).collect(),
        )
        .unwrap()
    };
    let four = mk(&[(0.1, 1.0), (0.2, 2.0), (0.3, 3.0), (0.4, 4.0)]);
    let three = mk(&[(0.1, 1.0), (0.2, 2.0), (0.3, 3.0)]);
    let far = mk(&[(0.1, 11.0), (0.2, 12.0), (0.3, 13.0), (0.4, 14.0)]);
    let bumpy = mk(&[(0.1, 1.0), (0.2, 3.0), (0.3, 2.0), (0.4, 4.0)]);
    assert!(bd_rate(&four, &three).is_err());
    assert!(bd_rate(&four, &far).is_err());
    assert!(bd_rate(&four, &bumpy).is_err());
}
