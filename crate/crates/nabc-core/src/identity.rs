//! The fully analytic angle law under the Gaussian identity baseline:
//! per-cell pdf/cdf/quantile, the inverse-transform matrix sampler, and
//! exact cell/matrix inference. No kernels are ever fit on this path.

use rand::Rng;
use rayon::prelude::*;

use crate::cell::{lower_triangle_cells, CellIndex};
use crate::error::{Error, Result};
use crate::matrix::{angles_to_corr, AngleMatrix, DependenceMatrix};
use crate::measures::MeasureKind;
use crate::rng::substream_rng;
use crate::special::{gauss_2f1, inv_reg_inc_beta, ln_gamma, reg_inc_beta};

use std::f64::consts::PI;

/// The analytic angle density c_k * sin^k(x) on (0, pi).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityAngleLaw {
    k: u64,
    ln_ck: f64,
}

impl IdentityAngleLaw {
    pub fn new(k: u64) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidK { k: k as i64 });
        }
        let kf = k as f64;
        // c_k = Gamma(k/2 + 1) / (sqrt(pi) * Gamma(k/2 + 1/2))
        let ln_ck = ln_gamma(kf / 2.0 + 1.0) - 0.5 * PI.ln() - ln_gamma(kf / 2.0 + 0.5);
        Ok(IdentityAngleLaw { k, ln_ck })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn normalization(&self) -> f64 {
        self.ln_ck.exp()
    }
}

/// Sample-size inputs to the degrees-of-freedom exponent.
#[derive(Debug, Clone, Copy)]
pub struct SampleSizeContext {
    pub n: usize,
    pub p: usize,
}

impl SampleSizeContext {
    pub fn new(n: usize, p: usize) -> Result<Self> {
        if n <= p {
            return Err(Error::OutOfRange {
                what: format!("need n > p for a full-rank panel (n={n}, p={p})"),
            });
        }
        Ok(SampleSizeContext { n, p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KMode {
    /// Law of angles of a uniformly distributed correlation matrix:
    /// k = p - column.
    Uniform,
    /// Finite-sample law of estimated-matrix angles: k = n - column - 2.
    FiniteSample,
}

/// Exponent for a given cell; depends only on the (1-based) column.
pub fn k_for_cell(ctx: SampleSizeContext, cell: CellIndex, mode: KMode) -> Result<u64> {
    let j = cell.col as i64;
    let k = match mode {
        KMode::Uniform => ctx.p as i64 - j,
        KMode::FiniteSample => ctx.n as i64 - j - 2,
    };
    if k < 1 {
        return Err(Error::InvalidK { k });
    }
    Ok(k as u64)
}

pub fn angle_pdf(x: f64, law: IdentityAngleLaw) -> f64 {
    if x <= 0.0 || x >= PI {
        return 0.0;
    }
    (law.ln_ck + law.k as f64 * x.sin().ln()).exp()
}

/// CDF via the signed regularized-beta form.
pub fn angle_cdf(x: f64, law: IdentityAngleLaw) -> Result<f64> {
    if !(x > 0.0 && x < PI) {
        return Err(Error::OutOfRange { what: format!("angle {x} outside (0, pi)") });
    }
    let c = x.cos();
    let tail = 0.5 * reg_inc_beta(c * c, 0.5, (1.0 + law.k as f64) / 2.0)?;
    Ok(if x < PI / 2.0 { 0.5 - tail } else { 0.5 + tail })
}

/// CDF via the hypergeometric form; retained purely as a cross-check on the
/// beta form.
pub fn angle_cdf_hypergeometric(x: f64, law: IdentityAngleLaw) -> Result<f64> {
    let c = x.cos();
    let kf = law.k as f64;
    let h = gauss_2f1(0.5, (1.0 - kf) / 2.0, 1.5, c * c)?;
    Ok(0.5 - law.normalization() * c * h)
}

/// Quantile via the inverse regularized beta, branch-split at 0.5.
pub fn angle_quantile(prob: f64, law: IdentityAngleLaw) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::DomainError { what: format!("quantile probability {prob} outside (0,1)") });
    }
    let b = (1.0 + law.k as f64) / 2.0;
    if prob < 0.5 {
        let r = inv_reg_inc_beta(1.0 - 2.0 * prob, 0.5, b)?;
        Ok(r.sqrt().acos())
    } else {
        let r = inv_reg_inc_beta(2.0 * prob - 1.0, 0.5, b)?;
        Ok(PI - r.sqrt().acos())
    }
}

/// Laws for every lower-triangle cell under the finite-sample exponent.
pub fn cell_laws(ctx: SampleSizeContext, mode: KMode) -> Result<Vec<IdentityAngleLaw>> {
    lower_triangle_cells(ctx.p)
        .into_iter()
        .map(|cell| IdentityAngleLaw::new(k_for_cell(ctx, cell, mode)?))
        .collect()
}

/// Inverse-transform sampler: N correlation matrices whose angles are drawn
/// i.i.d. from their per-column finite-sample laws. Replicates use
/// independent seeded substreams, so output is deterministic and
/// order-independent.
pub fn sample_identity_matrices(
    p: usize,
    n: usize,
    n_matrices: usize,
    seed: u64,
) -> Result<Vec<DependenceMatrix>> {
    let ctx = SampleSizeContext::new(n, p)?;
    let laws = cell_laws(ctx, KMode::FiniteSample)?;
    (0..n_matrices)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream_rng(seed, rep as u64);
            let angles: Result<Vec<f64>> = laws
                .iter()
                .map(|&law| angle_quantile(rng.gen_range(1e-15..1.0 - 1e-15), law))
                .collect();
            let theta = AngleMatrix::from_lower_triangle(p, MeasureKind::Pearson, angles?)?;
            Ok(angles_to_corr(&theta))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sides {
    One,
    Two,
}

/// Cell-level p-value under the identity law: minimum tail, doubled for the
/// two-sided test (the law is exactly symmetric about pi/2).
pub fn cell_pvalue(x: f64, law: IdentityAngleLaw, sides: Sides) -> Result<f64> {
    let cdf = angle_cdf(x, law)?;
    let one = cdf.min(1.0 - cdf);
    Ok(match sides {
        Sides::One => one,
        Sides::Two => (2.0 * one).min(1.0),
    })
}

/// Central confidence interval for one cell's angle and its correlation
/// image. cos is decreasing, so the high angle gives the low correlation.
pub fn cell_ci(law: IdentityAngleLaw, alpha: f64) -> Result<CellInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange { what: format!("alpha {alpha} outside (0,1)") });
    }
    let x_low = angle_quantile(alpha / 2.0, law)?;
    let x_high = angle_quantile(1.0 - alpha / 2.0, law)?;
    Ok(CellInterval { angle_low: x_low, angle_high: x_high, corr_low: x_high.cos(), corr_high: x_low.cos() })
}

#[derive(Debug, Clone, Copy)]
pub struct CellInterval {
    pub angle_low: f64,
    pub angle_high: f64,
    pub corr_low: f64,
    pub corr_high: f64,
}

/// Matrix-level p-value: probability that at least one cell is as extreme
/// as observed, assuming independent cells.
pub fn matrix_pvalue(cell_pvalues: &[f64]) -> Result<f64> {
    let mut survive = 1.0;
    for &p in cell_pvalues {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange { what: format!("p-value {p} outside [0,1]") });
        }
        survive *= 1.0 - p;
    }
    Ok(1.0 - survive)
}

/// Per-cell quantile levels whose cell-wise quantile matrices bound (1-alpha)
/// of sampled matrices simultaneously.
pub fn simultaneous_alphas(alpha: f64, n_cells: usize) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange { what: format!("alpha {alpha} outside (0,1)") });
    }
    if n_cells < 1 {
        return Err(Error::OutOfRange { what: "need at least one cell".into() });
    }
    let low = 1.0 - (1.0 - alpha / 2.0).powf(1.0 / n_cells as f64);
    Ok((low, 1.0 - low))
}

/// A commonly quoted closed form for the probability that a matrix with
/// uniform off-diagonals is positive definite. NOTE: as transcribed this
/// gives sqrt(pi)/2 ~ 0.886 at p=2, where the true probability is exactly 1
/// (any |r| < 1 works), so the formula appears garbled in typesetting; the
/// Monte Carlo estimator below is ground truth and both are reported
/// side by side.
pub fn pd_probability_closed_form(p: usize) -> f64 {
    let mut ln_num = 0.0;
    for j in 1..p {
        let jf = j as f64;
        ln_num += jf * (0.5 * PI.ln() + ln_gamma((jf + 1.0) / 2.0));
    }
    let cells = (p * (p - 1) / 2) as f64;
    (ln_num - cells * 2.0f64.ln()).exp()
}

/// The quoted upper bound (sqrt(pi)/2)^(p(p-1)/2); this part of the formula
/// is self-consistent and underlies the "vanishingly rare at p=25" claim.
pub fn pd_probability_upper_bound(p: usize) -> f64 {
    let cells = (p * (p - 1) / 2) as f64;
    (PI.sqrt() / 2.0).powf(cells)
}

/// Monte Carlo estimate of the PD probability with uniform(-1,1)
/// off-diagonals; returns (estimate, binomial standard error).
pub fn pd_probability_monte_carlo(p: usize, draws: usize, seed: u64) -> (f64, f64) {
    let cells = lower_triangle_cells(p);
    let hits: usize = (0..draws)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream_rng(seed, rep as u64);
            let lower: Vec<f64> = cells.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = DependenceMatrix::from_lower_triangle(p, MeasureKind::Pearson, &lower)
                .expect("construction from lower triangle cannot fail");
            usize::from(m.is_positive_definite())
        })
        .sum();
    let est = hits as f64 / draws as f64;
    let se = (est * (1.0 - est) / draws as f64).sqrt();
    (est, se)
}
