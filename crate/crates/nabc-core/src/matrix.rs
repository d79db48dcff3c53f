use serde::{Deserialize, Serialize};

use crate::cell::{cell_count, lower_triangle_cells, CellIndex};
use crate::error::{Error, Result};
use crate::measures::MeasureKind;

/// Pivot tolerance for Cholesky factorization; a diagonal pivot at or below
/// this is treated as "not positive definite" rather than ground through.
pub const PD_PIVOT_TOL: f64 = 1e-12;

/// Correlations are clamped to +/-(1 - CORR_CLAMP_MARGIN) before arccos so
/// angles stay inside the open interval (0, pi).
pub const CORR_CLAMP_MARGIN: f64 = 1e-12;

/// Cumulative sine products below this flag the input as numerically singular.
pub const SINE_UNDERFLOW: f64 = 1e-300;

/// p x p symmetric unit-diagonal matrix of a chosen dependence measure.
#[derive(Debug, Clone, PartialEq)]
pub struct DependenceMatrix {
    dim: usize,
    pub measure: MeasureKind,
    values: Vec<f64>, // row-major, dim*dim
}

impl DependenceMatrix {
    /// Build from a full row-major value table, checking symmetry and the
    /// unit diagonal (both to 1e-12).
    pub fn from_values(dim: usize, measure: MeasureKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: values.len() });
        }
        for i in 0..dim {
            if (values[i * dim + i] - 1.0).abs() > 1e-12 {
                return Err(Error::Parse { reason: format!("diagonal entry ({i},{i}) is not 1"), });
            }
            for j in 0..i {
                if (values[i * dim + j] - values[j * dim + i]).abs() > 1e-12 {
                    return Err(Error::Parse { reason: format!("matrix not symmetric at ({i},{j})") });
                }
            }
        }
        Ok(DependenceMatrix { dim, measure, values })
    }

    /// Build a symmetric unit-diagonal matrix from lower-triangle values in
    /// canonical order ((2,1), (3,1), (3,2), ...).
    pub fn from_lower_triangle(dim: usize, measure: MeasureKind, lower: &[f64]) -> Result<Self> {
        if lower.len() != cell_count(dim) {
            return Err(Error::DimensionMismatch { expected: cell_count(dim), got: lower.len() });
        }
        let mut values = vec![0.0; dim * dim];
        for i in 0..dim {
            values[i * dim + i] = 1.0;
        }
        for (k, cell) in lower_triangle_cells(dim).into_iter().enumerate() {
            values[cell.i() * dim + cell.j()] = lower[k];
            values[cell.j() * dim + cell.i()] = lower[k];
        }
        Ok(DependenceMatrix { dim, measure, values })
    }

    pub fn identity(dim: usize, measure: MeasureKind) -> Self {
        let mut values = vec![0.0; dim * dim];
        for i in 0..dim {
            values[i * dim + i] = 1.0;
        }
        DependenceMatrix { dim, measure, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// 0-based accessor.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    pub fn cell(&self, cell: CellIndex) -> f64 {
        self.get(cell.i(), cell.j())
    }

    /// Lower-triangle values in canonical cell order.
    pub fn lower_triangle(&self) -> Vec<f64> {
        lower_triangle_cells(self.dim).iter().map(|c| self.cell(*c)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cholesky factorization R = B * B^T with lower-triangular B.
    pub fn cholesky_lower(&self) -> Result<CholeskyFactor> {
        let p = self.dim;
        let mut b = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..=i {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= b[i * p + k] * b[j * p + k];
                }
                if i == j {
                    if s <= PD_PIVOT_TOL {
                        return Err(Error::NotPositiveDefinite { row: i + 1, pivot: s });
                    }
                    b[i * p + j] = s.sqrt();
                } else {
                    b[i * p + j] = s / b[j * p + j];
                }
            }
        }
        Ok(CholeskyFactor { dim: p, values: b })
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky_lower().is_ok()
    }

    /// Simultaneous row/column reordering. `sigma[k]` is the 1-based index of
    /// the original asset placed at (1-based) position k+1, so the output's
    /// cell (a,b) equals the input's cell (sigma[a-1], sigma[b-1]).
    pub fn permute(&self, sigma: &[usize]) -> Result<Self> {
        validate_permutation(sigma, self.dim)?;
        let p = self.dim;
        let mut values = vec![0.0; p * p];
        for a in 0..p {
            for b in 0..p {
                values[a * p + b] = self.get(sigma[a] - 1, sigma[b] - 1);
            }
        }
        Ok(DependenceMatrix { dim: p, measure: self.measure, values })
    }

    /// Real spectrum in descending order via cyclic Jacobi rotations.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        jacobi_eigenvalues(self.dim, &self.values)
    }

    /// CSV serialization: p rows of p comma-separated values, no header.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for i in 0..self.dim {
            let row: Vec<String> =
                (0..self.dim).map(|j| format!("{}", self.get(i, j))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parse the CSV form. The format carries no measure tag, so the caller
    /// supplies one.
    pub fn from_csv_str(text: &str, measure: MeasureKind) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|tok| tok.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| Error::Parse {
                reason: format!("line {}: {}", lineno + 1, e),
            })?;
            rows.push(row);
        }
        let dim = rows.len();
        let mut values = Vec::with_capacity(dim * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::Parse { reason: format!("expected {dim} columns, got {}", row.len()) });
            }
            values.extend_from_slice(row);
        }
        DependenceMatrix::from_values(dim, measure, values)
    }

    pub fn to_json(&self) -> MatrixJson {
        MatrixJson { dim: self.dim, measure: self.measure, values: self.values.clone() }
    }

    pub fn from_json(json: MatrixJson) -> Result<Self> {
        DependenceMatrix::from_values(json.dim, json.measure, json.values)
    }
}

/// JSON wire form: {"dim": p, "measure": tag, "values": row-major array}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub measure: MeasureKind,
    pub values: Vec<f64>,
}

pub fn validate_permutation(sigma: &[usize], dim: usize) -> Result<()> {
    if sigma.len() != dim {
        return Err(Error::InvalidPermutation {
            reason: format!("length {} does not match dimension {}", sigma.len(), dim),
        });
    }
    let mut seen = vec![false; dim];
    for &s in sigma {
        if s < 1 || s > dim || seen[s - 1] {
            return Err(Error::InvalidPermutation {
                reason: format!("entries must be a bijection of 1..={dim}"),
            });
        }
        seen[s - 1] = true;
    }
    Ok(())
}

/// Lower-triangular Cholesky factor; rows lie on the unit hypersphere.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    dim: usize,
    values: Vec<f64>, // row-major, entries above the diagonal are zero
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    /// B * B^T.
    pub fn reconstruct(&self, measure: MeasureKind) -> DependenceMatrix {
        let p = self.dim;
        let mut values = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..=i {
                let mut s = 0.0;
                for k in 0..=j.min(i) {
                    s += self.get(i, k) * self.get(j, k);
                }
                values[i * p + j] = s;
                values[j * p + i] = s;
            }
            values[i * p + i] = 1.0;
        }
        DependenceMatrix { dim: p, measure, values }
    }
}

/// Strictly-lower-triangular matrix of angles in (0, pi); the bijective image
/// of a positive-definite dependence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleMatrix {
    dim: usize,
    pub measure: MeasureKind,
    angles: Vec<f64>, // canonical lower-triangle order
}

impl AngleMatrix {
    pub fn from_lower_triangle(dim: usize, measure: MeasureKind, angles: Vec<f64>) -> Result<Self> {
        if angles.len() != cell_count(dim) {
            return Err(Error::DimensionMismatch { expected: cell_count(dim), got: angles.len() });
        }
        for (k, &a) in angles.iter().enumerate() {
            if !(a > 0.0 && a < std::f64::consts::PI) {
                return Err(Error::OutOfRange {
                    what: format!("angle {a} at flat index {k} outside (0, pi)"),
                });
            }
        }
        Ok(AngleMatrix { dim, measure, angles })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell(&self, cell: CellIndex) -> f64 {
        self.angles[cell.linear_index()]
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn angles_mut(&mut self) -> &mut [f64] {
        &mut self.angles
    }
}

/// Forward transform: angles of the Cholesky factor of a PD matrix.
pub fn corr_to_angles(r: &DependenceMatrix) -> Result<AngleMatrix> {
    let b = r.cholesky_lower()?;
    let p = r.dim();
    let mut angles = Vec::with_capacity(cell_count(p));
    let clamp = 1.0 - CORR_CLAMP_MARGIN;
    for i in 1..p {
        let mut sine_product = 1.0;
        for j in 0..i {
            if sine_product < SINE_UNDERFLOW {
                return Err(Error::DegenerateSine { row: i + 1, col: j + 1 });
            }
            let c = (b.get(i, j) / sine_product).clamp(-clamp, clamp);
            let theta = c.acos();
            angles.push(theta);
            sine_product *= theta.sin();
        }
    }
    Ok(AngleMatrix { dim: p, measure: r.measure, angles })
}

/// Reverse transform: rebuild the Cholesky factor from angles and multiply
/// out. Outputs are positive definite by construction.
pub fn angles_to_corr(theta: &AngleMatrix) -> DependenceMatrix {
    let p = theta.dim;
    let mut b = vec![0.0; p * p];
    b[0] = 1.0;
    for i in 1..p {
        let mut sine_product = 1.0;
        for j in 0..i {
            let a = theta.angles[CellIndex { row: i + 1, col: j + 1 }.linear_index()];
            b[i * p + j] = a.cos() * sine_product;
            sine_product *= a.sin();
        }
        b[i * p + i] = sine_product;
    }
    let factor = CholeskyFactor { dim: p, values: b };
    factor.reconstruct(theta.measure)
}

fn jacobi_eigenvalues(p: usize, values: &[f64]) -> Result<Vec<f64>> {
    let mut a = values.to_vec();
    let max_sweeps = 100;
    for _sweep in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                off += a[i * p + j] * a[i * p + j];
            }
        }
        if off.sqrt() < 1e-13 * (p as f64) {
            let mut eig: Vec<f64> = (0..p).map(|i| a[i * p + i]).collect();
            eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
            return Ok(eig);
        }
        for i in 0..p {
            for j in (i + 1)..p {
                let apq = a[i * p + j];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[i * p + i];
                let aqq = a[j * p + j];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..p {
                    let aki = a[k * p + i];
                    let akj = a[k * p + j];
                    a[k * p + i] = c * aki - s * akj;
                    a[k * p + j] = s * aki + c * akj;
                }
                for k in 0..p {
                    let aik = a[i * p + k];
                    let ajk = a[j * p + k];
                    a[i * p + k] = c * aik - s * ajk;
                    a[j * p + k] = s * aik + c * ajk;
                }
            }
        }
    }
    Err(Error::ConvergenceFailure { sweeps: max_sweeps })
}
