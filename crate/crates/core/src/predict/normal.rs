//! Standard normal distribution function and its inverse.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};

/// Φ(x), via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Φ⁻¹(p) for `0 < p < 1`, using Wichura's AS 241 (PPND16) rational
/// approximations; relative accuracy is about 1e-16 over the whole domain.
pub fn inv_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            value: p,
            domain: "(0, 1)",
        });
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = poly(&CENTRAL_NUM, r);
        let den = poly(&CENTRAL_DEN, r);
        return Ok(q * num / den);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        poly(&NEAR_NUM, r) / poly(&NEAR_DEN, r)
    } else {
        r -= 5.0;
        poly(&FAR_NUM, r) / poly(&FAR_DEN, r)
    };
    Ok(if q < 0.0 { -val } else { val })
}

/// Horner evaluation; coefficients are in ascending powers.
#[inline]
fn poly(coeffs: &[f64; 8], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

#[allow(clippy::excessive_precision)]
const CENTRAL_NUM: [f64; 8] = [
    3.387_132_872_796_366_608,
    133.141_667_891_784_377_45,
    1_971.590_950_306_551_442_7,
    13_731.693_765_509_461_125,
    45_921.953_931_549_871_457,
    67_265.770_927_008_700_853,
    33_430.575_583_588_128_105,
    2_509.080_928_730_122_672_7,
];
#[allow(clippy::excessive_precision)]
const CENTRAL_DEN: [f64; 8] = [
    1.0,
    42.313_330_701_600_911_252,
    687.187_007_492_057_908_3,
    5_394.196_021_424_751_107_7,
    21_213.794_301_586_595_867,
    39_307.895_800_092_710_61,
    28_729.085_735_721_942_674,
    5_226.495_278_852_545_925,
];
#[allow(clippy::excessive_precision)]
const NEAR_NUM: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    0.241_780_725_177_450_611_77,
    0.022_723_844_989_269_184_583_3,
    7.745_450_142_783_414_076_4e-4,
];
#[allow(clippy::excessive_precision)]
const NEAR_DEN: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    0.689_767_334_985_100_004_55,
    0.148_103_976_427_480_074_59,
    0.015_198_666_563_616_457_196_6,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
#[allow(clippy::excessive_precision)]
const FAR_NUM: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    0.296_560_571_828_504_891_23,
    0.026_532_189_526_576_123_093,
    0.001_242_660_947_388_078_438_6,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
#[allow(clippy::excessive_precision)]
const FAR_DEN: [f64; 8] = [
    1.0,
    0.599_832_206_555_887_937_69,
    0.136_929_880_922_735_805_31,
    0.014_875_361_290_850_614_852_5,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_is_zero() {
        assert_eq!(inv_normal_cdf(0.5).unwrap(), 0.0);
    }

    #[test]
    fn tenth_percentile() {
        // Reference value from bisection against a high-precision Φ.
        let q = inv_normal_cdf(0.1).unwrap();
        assert!((q - -1.281_551_565_544_600_5).abs() < 1e-12, "{q}");
    }

    #[test]
    fn symmetric_about_median() {
        for p in [1e-5, 0.01, 0.2, 0.4] {
            let lo = inv_normal_cdf(p).unwrap();
            let hi = inv_normal_cdf(1.0 - p).unwrap();
            assert!((lo + hi).abs() <= 1e-9 * lo.abs().max(1.0), "{p}: {lo} vs {hi}");
        }
    }

    #[test]
    fn deep_tail_is_finite() {
        let q = inv_normal_cdf(1e-300).unwrap();
        assert!(q.is_finite() && q < -37.0, "{q}");
    }

    #[test]
    fn domain_errors() {
        for p in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(inv_normal_cdf(p), Err(Error::Domain { .. })));
        }
    }

    #[test]
    fn cdf_round_trip() {
        for i in 1..50 {
            let p = i as f64 / 100.0;
            let back = normal_cdf(inv_normal_cdf(p).unwrap());
            assert!((back - p).abs() <= 1e-8, "{p} -> {back}");
        }
    }
}
