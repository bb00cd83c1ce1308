use std::f64::consts::PI;

use isar_core::channel::{inner, steering, EchoFrame};
use isar_core::config::WrapCorrector;
use isar_core::estimator::{
    compensate_wrap_with, correlate_direct, median, preprocess_wrap, Correlator,
};
use isar_core::imaging::{flip_image, IsarImage};
use isar_core::rng::split_seed;
use isar_core::waveform::{build_preamble, generate_golay_pair};
use num_complex::Complex64;
use proptest::prelude::*;

fn acf(x: &[i8], k: usize) -> i64 {
    x.iter()
        .zip(&x[k..])
        .map(|(&a, &b)| a as i64 * b as i64)
        .sum()
}

/// Principal value of `nu` on a grid of `2π d` Hz.
fn wrapped(nu: f64, d: f64) -> f64 {
    let step = 2.0 * PI * d;
    nu - step * (nu / step).round()
}

proptest! {
    #[test]
    fn golay_pairs_are_complementary(e in 1u32..=10) {
        let n = 1usize << e;
        let p = generate_golay_pair(n).unwrap();
        for k in 0..n {
            let s = acf(&p.a, k) + acf(&p.b, k);
            prop_assert_eq!(s, if k == 0 { 2 * n as i64 } else { 0 });
        }
    }

    #[test]
    fn flip_twice_is_identity(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
        let mut x = seed;
        let magnitude = (0..rows)
            .map(|_| (0..cols).map(|_| { x = split_seed(x, 0); (x >> 11) as f64 }).collect())
            .collect();
        let img = IsarImage { magnitude, range_origin: 1.0, delta_r: 0.1, delta_cr: 0.2, flipped: false };
        let once = flip_image(&img);
        prop_assert!(once.flipped);
        // Each column keeps its range label when it moves.
        for c in 0..cols {
            let src = cols - 1 - c;
            prop_assert!((once.range_m(c) - img.range_m(src)).abs() < 1e-12);
            for q in 0..rows {
                prop_assert_eq!(once.magnitude[q][c], img.magnitude[q][src]);
            }
        }
        prop_assert_eq!(flip_image(&once), img);
    }

    /// Both correctors undo 0..5 turns when the two residuals share a sign.
    #[test]
    fn same_sign_residuals_are_unwrapped(
        turns in 0i64..5,
        frac in 0.05f64..0.45,
        negative in any::<bool>(),
        change in -2.0f64..2.0,
    ) {
        let (dl, de) = (159.116, 166.869);
        let sign = if negative { -1.0 } else { 1.0 };
        // True Doppler sits `frac` of a turn past `turns` full turns at the
        // later frame; the earlier frame differs by a few Hz.
        let nl = sign * 2.0 * PI * dl * (turns as f64 + frac);
        let ne = nl - change;
        let (a, b) = (wrapped(nl, dl), wrapped(ne, de));
        prop_assume!(a.signum() == b.signum());
        let mut a2 = [a];
        let mut b2 = [b];
        preprocess_wrap(&mut a2, &mut b2, dl, de);
        for corrector in [WrapCorrector::Absolute, WrapCorrector::Signed] {
            let out = compensate_wrap_with(&a2, &b2, dl, de, corrector);
            prop_assert!((out.later[0] - nl).abs() < 1e-6, "{corrector:?}: {} vs {nl}", out.later[0]);
            prop_assert!((out.earlier[0] - ne).abs() < 1e-6);
        }
    }

    #[test]
    fn correctors_are_odd(a in -400.0f64..400.0, b in -400.0f64..400.0) {
        for corrector in [WrapCorrector::Absolute, WrapCorrector::Signed] {
            let pos = compensate_wrap_with(&[a], &[b], 80.0, 82.0, corrector);
            let neg = compensate_wrap_with(&[-a], &[-b], 80.0, 82.0, corrector);
            if a != 0.0 {
                prop_assert_eq!(pos.wraps[0], -neg.wraps[0]);
            }
        }
    }

    #[test]
    fn median_ignores_a_minority_of_outliers(
        clean in prop::collection::vec(-1.0f64..1.0, 5..20),
        junk in prop::collection::vec(-1e6f64..1e6, 0..4),
    ) {
        prop_assume!(junk.len() * 2 < clean.len());
        let mut all = clean.clone();
        all.extend(&junk);
        let m = median(&all);
        let lo = clean.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = clean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= m && m <= hi);
    }

    #[test]
    fn steering_vectors_have_unit_modulus(az in -1.5f64..1.5, el in -0.7f64..0.7) {
        let a = steering(az, el, 8, 8);
        prop_assert!((inner(&a, &a).re - 64.0).abs() < 1e-9);
        prop_assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fft_correlator_matches_direct_sum(start in 1i64..400, seed in any::<u64>()) {
        let pre = build_preamble();
        let n = 3265;
        let mut x = seed;
        let samples: Vec<Complex64> = (0..n)
            .map(|_| {
                x = split_seed(x, 1);
                Complex64::new(((x >> 40) as f64) / 1e7 - 0.8, ((x & 0xffff) as f64) / 4e4 - 0.8)
            })
            .collect();
        let frame = EchoFrame { start, samples };
        let fast = Correlator::for_preamble(&pre, n).correlate(&frame).unwrap();
        let slow = correlate_direct(&frame, &pre.segment).unwrap();
        prop_assert_eq!(fast.first_lag, slow.first_lag);
        prop_assert_eq!(fast.values.len(), slow.values.len());
        for (f, s) in fast.values.iter().zip(&slow.values) {
            prop_assert!((f - s).norm() < 1e-8 * (1.0 + s.norm()));
        }
    }
}
