//! Deterministic elementary functions.
//!
//! `ln`, `sin`, and `cos` here are fixed-degree polynomial evaluations over
//! IEEE-exact decompositions, so results are bitwise identical on every
//! platform. libm implementations are only guaranteed faithful to ~1 ulp and
//! may differ between systems, which would leak into noise draws, time
//! embeddings, and therefore every downstream artifact byte.

use std::f64::consts::{FRAC_PI_2, LN_2, SQRT_2};

/// Natural log for positive, normal `x`. Max relative error a few 1e-17.
pub fn ln(x: f64) -> f64 {
    debug_assert!(x.is_finite() && x > 0.0 && x >= f64::MIN_POSITIVE);
    let bits = x.to_bits();
    let mut e = ((bits >> 52) & 0x7ff) as i64 - 1023;
    let mut m = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | 0x3ff0_0000_0000_0000);
    if m > SQRT_2 {
        m *= 0.5;
        e += 1;
    }
    // ln m = 2 atanh(s) with s = (m-1)/(m+1), |s| <= 0.172.
    let s = (m - 1.0) / (m + 1.0);
    let s2 = s * s;
    let mut p = 0.0;
    for k in (0..=10).rev() {
        p = p * s2 + 1.0 / (2 * k + 1) as f64;
    }
    2.0 * s * p + e as f64 * LN_2
}

// Cody-Waite split of pi/2 (fdlibm constants). k * PIO2_1 is exact for
// |k| < 2^20, which covers every argument this crate produces.
const PIO2_1: f64 = f64::from_bits(0x3FF9_21FB_5440_0000);
const PIO2_1T: f64 = f64::from_bits(0x3DD0_B461_1A62_6331);

fn reduce(x: f64) -> (i64, f64) {
    debug_assert!(x.is_finite() && x.abs() < 1.0e6);
    let k = (x / FRAC_PI_2).round();
    let r = (x - k * PIO2_1) - k * PIO2_1T;
    (k as i64, r)
}

fn sin_poly(r: f64) -> f64 {
    let s = r * r;
    let mut p = 0.0;
    // Taylor terms through r^15; truncation ~5e-17 on |r| <= pi/4.
    const COEFFS: [f64; 7] = [
        -1.0 / 6.0,
        1.0 / 120.0,
        -1.0 / 5040.0,
        1.0 / 362_880.0,
        -1.0 / 39_916_800.0,
        1.0 / 6_227_020_800.0,
        -1.0 / 1_307_674_368_000.0,
    ];
    for c in COEFFS.iter().rev() {
        p = (p + c) * s;
    }
    r * (1.0 + p)
}

fn cos_poly(r: f64) -> f64 {
    let s = r * r;
    let mut p = 0.0;
    const COEFFS: [f64; 8] = [
        -0.5,
        1.0 / 24.0,
        -1.0 / 720.0,
        1.0 / 40_320.0,
        -1.0 / 3_628_800.0,
        1.0 / 479_001_600.0,
        -1.0 / 87_178_291_200.0,
        1.0 / 20_922_789_888_000.0,
    ];
    for c in COEFFS.iter().rev() {
        p = (p + c) * s;
    }
    1.0 + p
}

pub fn sin(x: f64) -> f64 {
    let (k, r) = reduce(x);
    match k.rem_euclid(4) {
        0 => sin_poly(r),
        1 => cos_poly(r),
        2 => -sin_poly(r),
        _ => -cos_poly(r),
    }
}

pub fn cos(x: f64) -> f64 {
    let (k, r) = reduce(x);
    match k.rem_euclid(4) {
        0 => cos_poly(r),
        1 => -sin_poly(r),
        2 => -cos_poly(r),
        _ => sin_poly(r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ln_matches_std_on_grid() {
        let mut x = 1.0e-16;
        while x < 1.0e3 {
            let got = ln(x);
            let want = x.ln();
            assert!((got - want).abs() <= 1e-13 * (1.0 + want.abs()), "x={x}");
            x *= 1.7;
        }
    }

    #[test]
    fn trig_matches_std_on_grid() {
        let mut x = -500.0;
        while x < 500.0 {
            assert!((sin(x) - x.sin()).abs() < 1e-12, "sin x={x}");
            assert!((cos(x) - x.cos()).abs() < 1e-12, "cos x={x}");
            x += 0.37;
        }
    }

    #[test]
    fn sin_pi_is_tiny_and_cos_pi_is_minus_one() {
        assert!(sin(std::f64::consts::PI).abs() <= 1e-15);
        assert!((cos(std::f64::consts::PI) + 1.0).abs() <= 1e-15);
    }

    proptest! {
        #[test]
        fn ln_close_to_std(x in 1.0e-12f64..1.0e6) {
            let want = x.ln();
            prop_assert!((ln(x) - want).abs() <= 1e-13 * (1.0 + want.abs()));
        }

        #[test]
        fn trig_close_to_std(x in -1000.0f64..1000.0) {
            prop_assert!((sin(x) - x.sin()).abs() < 1e-12);
            prop_assert!((cos(x) - x.cos()).abs() < 1e-12);
        }
    }
}
