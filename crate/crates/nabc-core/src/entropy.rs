//! Matrix-level aggregate diagnostics: the log-product of cell p-values
//! (a probability-based generalized entropy), eigenvalue entropy, and
//! Minkowski norms of cell-wise differences.
//!
//! The norms are shipped as a deliberate foil: cell-wise distances ignore
//! both the sampling distribution and positive definiteness, so probability
//! (p-values and their log product) is the only defensible "distance"
//! between dependence matrices. The norms exist so that the comparison can
//! be made, not because they are recommended.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DependenceMatrix;

/// Sum of log p-values over the q = p(p-1)/2 cells; always <= 0, with 0
/// meaning every cell is maximally unsurprising.
pub fn lnp(two_sided_pvalues: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for &p in two_sided_pvalues {
        if p == 0.0 {
            return Err(Error::ZeroPValue);
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::OutOfRange { what: format!("p-value {p} outside (0,1]") });
        }
        acc += p.ln();
    }
    Ok(acc)
}

/// Eigenvalue entropy of R/p: -sum(lambda ln lambda), with 0 ln 0 := 0.
/// Ranges over [0, ln p]; the identity maximizes it.
pub fn matrix_entropy(r: &DependenceMatrix) -> Result<f64> {
    let p = r.dim() as f64;
    let mut acc = 0.0;
    for &lambda in &r.eigenvalues()? {
        let l = lambda / p;
        if l > 0.0 {
            acc -= l * l.ln();
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    One,
    Two,
    Inf,
}

/// Minkowski norm of the lower-triangle cell-wise differences between two
/// same-sized matrices (m = 1: taxicab, 2: Frobenius-style, inf: Chebyshev).
pub fn minkowski_norm(r: &DependenceMatrix, r_ref: &DependenceMatrix, order: NormOrder) -> Result<f64> {
    if r.dim() != r_ref.dim() {
        return Err(Error::DimensionMismatch { expected: r.dim(), got: r_ref.dim() });
    }
    let diffs: Vec<f64> = r
        .lower_triangle()
        .iter()
        .zip(r_ref.lower_triangle())
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(match order {
        NormOrder::One => diffs.iter().sum(),
        NormOrder::Two => diffs.iter().map(|d| d * d).sum::<f64>().sqrt(),
        NormOrder::Inf => diffs.iter().fold(0.0, |m, &d| m.max(d)),
    })
}

/// The three standard norms at once, for report embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormTriple {
    pub taxicab: f64,
    pub euclidean: f64,
    pub chebyshev: f64,
}

pub fn norm_triple(r: &DependenceMatrix, r_ref: &DependenceMatrix) -> Result<NormTriple> {
    Ok(NormTriple {
        taxicab: minkowski_norm(r, r_ref, NormOrder::One)?,
        euclidean: minkowski_norm(r, r_ref, NormOrder::Two)?,
        chebyshev: minkowski_norm(r, r_ref, NormOrder::Inf)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::MeasureKind;

    #[test]
    fn lnp_arithmetic() {
        assert_eq!(lnp(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        let v = lnp(&[(-1.0f64).exp(), (-2.0f64).exp()]).unwrap();
        assert!((v + 3.0).abs() < 1e-12);
        let v = lnp(&[0.5; 10]).unwrap();
        assert!((v - 10.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!(lnp(&[0.0]).is_err());
        assert!(lnp(&[1.1]).is_err());
    }

    #[test]
    fn entropy_known_values() {
        let id = DependenceMatrix::identity(5, MeasureKind::Pearson);
        assert!((matrix_entropy(&id).unwrap() - 5.0f64.ln()).abs() < 1e-9);
        let ones =
            DependenceMatrix::from_lower_triangle(3, MeasureKind::Pearson, &[1.0, 1.0, 1.0])
                .unwrap();
        assert!(matrix_entropy(&ones).unwrap().abs() < 1e-7);
        let block = DependenceMatrix::from_lower_triangle(
            5,
            MeasureKind::Pearson,
            &[-0.3, -0.3, -0.3, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.7],
        )
        .unwrap();
        let e = matrix_entropy(&block).unwrap();
        assert!(e > 0.0 && e < 5.0f64.ln());
    }

    #[test]
    fn identity_maximizes_entropy() {
        use crate::cell::cell_count;
        use crate::matrix::{angles_to_corr, AngleMatrix};
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let p = 4;
        let id_entropy = matrix_entropy(&DependenceMatrix::identity(p, MeasureKind::Pearson)).unwrap();
        for _ in 0..500 {
            let angles: Vec<f64> = (0..cell_count(p))
                .map(|_| rng.gen_range(0.2..std::f64::consts::PI - 0.2))
                .collect();
            let theta = AngleMatrix::from_lower_triangle(p, MeasureKind::Pearson, angles).unwrap();
            let r = angles_to_corr(&theta);
            assert!(matrix_entropy(&r).unwrap() <= id_entropy + 1e-9);
        }
    }

    #[test]
    fn norm_arithmetic() {
        let a = DependenceMatrix::from_lower_triangle(3, MeasureKind::Pearson, &[0.3, 0.0, 0.0])
            .unwrap();
        let b = DependenceMatrix::from_lower_triangle(3, MeasureKind::Pearson, &[0.0, 0.4, 0.0])
            .unwrap();
        assert_eq!(minkowski_norm(&a, &a, NormOrder::One).unwrap(), 0.0);
        assert_eq!(minkowski_norm(&a, &a, NormOrder::Inf).unwrap(), 0.0);
        let single =
            DependenceMatrix::from_lower_triangle(3, MeasureKind::Pearson, &[0.0, 0.0, 0.0])
                .unwrap();
        assert!((minkowski_norm(&a, &single, NormOrder::One).unwrap() - 0.3).abs() < 1e-15);
        assert!((minkowski_norm(&a, &single, NormOrder::Two).unwrap() - 0.3).abs() < 1e-15);
        assert!((minkowski_norm(&a, &single, NormOrder::Inf).unwrap() - 0.3).abs() < 1e-15);
        assert!((minkowski_norm(&a, &b, NormOrder::One).unwrap() - 0.7).abs() < 1e-15);
        assert!((minkowski_norm(&a, &b, NormOrder::Two).unwrap() - 0.5).abs() < 1e-15);
        assert!((minkowski_norm(&a, &b, NormOrder::Inf).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn norms_obey_triangle_inequality() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                let lower: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.9..0.9)).collect();
                DependenceMatrix::from_lower_triangle(3, MeasureKind::Pearson, &lower).unwrap()
            };
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            for order in [NormOrder::One, NormOrder::Two, NormOrder::Inf] {
                let ab = minkowski_norm(&a, &b, order).unwrap();
                let bc = minkowski_norm(&b, &c, order).unwrap();
                let ac = minkowski_norm(&a, &c, order).unwrap();
                assert!(ac <= ab + bc + 1e-12);
            }
        }
    }
}
