//! Special functions behind the analytic angle law: log-gamma, regularized
//! incomplete beta (forward and inverse), the Gaussian hypergeometric 2F1
//! (series only, used as a cross-check), and normal/Student-t quantiles.

use crate::error::{Error, Result};

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Complete beta function on a log scale.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta I_x(a, b), absolute error below 1e-12.
///
/// Continued-fraction evaluation (modified Lentz), with the standard
/// symmetry split at x = (a+1)/(a+b+2) so the fraction always converges
/// from its fast side.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::DomainError { what: format!("beta parameters a={a}, b={b} must be positive") });
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::DomainError { what: format!("beta argument x={x} outside [0,1]") });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cont_frac(x, a, b) / a)
    } else {
        Ok(1.0 - front * beta_cont_frac(1.0 - x, b, a) / b)
    }
}

fn beta_cont_frac(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..400 {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Inverse of `reg_inc_beta` in x: returns x with I_x(a,b) = p within 1e-10.
/// Bracketed Newton iteration with bisection fallback.
pub fn inv_reg_inc_beta(p: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::DomainError { what: format!("beta parameters a={a}, b={b} must be positive") });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::DomainError { what: format!("probability p={p} outside [0,1]") });
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let ln_b = ln_beta(a, b);
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut x = 0.5_f64;
    for _ in 0..200 {
        let f = reg_inc_beta(x, a, b)? - p;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if f.abs() < 1e-14 {
            break;
        }
        // density of the regularized beta at x
        let ln_pdf = (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_b;
        let step = f / ln_pdf.exp();
        let candidate = x - step;
        x = if candidate > lo && candidate < hi {
            candidate
        } else {
            0.5 * (lo + hi)
        };
        // Relative interval width: roots can sit arbitrarily close to zero
        // (tiny tail probabilities), where an absolute cutoff would return
        // orders of magnitude too early.
        if hi - lo < 1e-15 * x {
            break;
        }
    }
    Ok(x)
}

/// Gaussian hypergeometric 2F1(a, b; c; z) by direct series summation.
/// Converges for |z| < 1; the parameter family used for the angle-law
/// cross-check keeps z in [0, 1) and b integer-adjacent.
pub fn gauss_2f1(a: f64, b: f64, c: f64, z: f64) -> Result<f64> {
    if z.abs() >= 1.0 {
        return Err(Error::DomainError { what: format!("2F1 argument |z|={} >= 1", z.abs()) });
    }
    if c <= 0.0 && c == c.floor() {
        return Err(Error::DomainError { what: format!("2F1 parameter c={c} is a nonpositive integer") });
    }
    const MAX_TERMS: usize = 1_000_000;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    for m in 0..MAX_TERMS {
        let m = m as f64;
        term *= (a + m) * (b + m) / (c + m) * z / (m + 1.0);
        sum += term;
        if term == 0.0 || term.abs() < 1e-13 * sum.abs().max(1.0) {
            return Ok(sum);
        }
    }
    Err(Error::NoConvergence { terms: MAX_TERMS })
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile (Wichura's AS 241, double precision).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DomainError { what: format!("normal quantile probability p={p} outside (0,1)") });
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Ok(q * poly(&A_NQ, r) / poly(&B_NQ, r));
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C_NQ, r) / poly(&D_NQ, r)
    } else {
        let r = r - 5.0;
        poly(&E_NQ, r) / poly(&F_NQ, r)
    };
    Ok(if q < 0.0 { -val } else { val })
}

fn poly(coef: &[f64], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

const A_NQ: [f64; 8] = [
    3.387_132_872_796_366_6e0,
    1.331_416_678_917_843_8e2,
    1.971_590_950_306_551_3e3,
    1.373_169_376_550_946e4,
    4.592_195_393_154_987e4,
    6.726_577_092_700_87e4,
    3.343_057_558_358_813e4,
    2.509_080_928_730_122_7e3,
];
const B_NQ: [f64; 8] = [
    1.0,
    4.231_333_070_160_091e1,
    6.871_870_074_920_579e2,
    5.394_196_021_424_751e3,
    2.121_379_430_158_659_7e4,
    3.930_789_580_009_271e4,
    2.872_908_573_572_194_3e4,
    5.226_495_278_852_545_6e3,
];
const C_NQ: [f64; 8] = [
    1.423_437_110_749_683_5e0,
    4.630_337_846_156_546e0,
    5.769_497_221_460_691e0,
    3.647_848_324_763_204_5e0,
    1.270_458_252_452_368_4e0,
    2.417_807_251_774_506e-1,
    2.272_384_498_926_918_4e-2,
    7.745_450_142_783_414e-4,
];
const D_NQ: [f64; 8] = [
    1.0,
    2.053_191_626_637_759e0,
    1.676_384_830_183_803_8e0,
    6.897_673_349_851e-1,
    1.481_039_764_274_800_8e-1,
    1.519_866_656_361_645_7e-2,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
const E_NQ: [f64; 8] = [
    6.657_904_643_501_103e0,
    5.463_784_911_164_114e0,
    1.784_826_539_917_291_3e0,
    2.965_605_718_285_048_7e-1,
    2.653_218_952_657_612_4e-2,
    1.242_660_947_388_078_4e-3,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const F_NQ: [f64; 8] = [
    1.0,
    5.998_322_065_558_88e-1,
    1.369_298_809_227_358e-1,
    1.487_536_129_085_061_5e-2,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_7e-15,
];

/// Student-t quantile with `df` degrees of freedom, via the inverse
/// regularized beta.
pub fn student_t_quantile(p: f64, df: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DomainError { what: format!("t quantile probability p={p} outside (0,1)") });
    }
    if df <= 0.0 {
        return Err(Error::DomainError { what: format!("degrees of freedom df={df} must be positive") });
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let tail = if p < 0.5 { 2.0 * p } else { 2.0 * (1.0 - p) };
    let x = inv_reg_inc_beta(tail, 0.5 * df, 0.5)?;
    let t = (df * (1.0 - x) / x).sqrt();
    Ok(if p < 0.5 { -t } else { t })
}
