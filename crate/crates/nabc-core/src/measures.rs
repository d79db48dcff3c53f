//! Bivariate dependence estimators and construction of the all-pairwise
//! matrix from a returns panel.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{lower_triangle_cells, CellIndex};
use crate::error::{Error, Result};
use crate::matrix::DependenceMatrix;
use crate::special::normal_quantile;

/// Which dependence measure a matrix or estimation run refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Pearson,
    Spearman,
    Kendall,
    KendallB,
    TailUpper,
    TailLower,
    Szekely,
    Lancaster,
    LancasterLinear,
    Chatterjee,
    ChatterjeeSym,
    ChatterjeeImproved,
    Zhang,
    TailKendall,
}

impl MeasureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MeasureKind::Pearson => "pearson",
            MeasureKind::Spearman => "spearman",
            MeasureKind::Kendall => "kendall",
            MeasureKind::KendallB => "kendall_b",
            MeasureKind::TailUpper => "tail_upper",
            MeasureKind::TailLower => "tail_lower",
            MeasureKind::Szekely => "szekely",
            MeasureKind::Lancaster => "lancaster",
            MeasureKind::LancasterLinear => "lancaster_linear",
            MeasureKind::Chatterjee => "chatterjee",
            MeasureKind::ChatterjeeSym => "chatterjee_sym",
            MeasureKind::ChatterjeeImproved => "chatterjee_improved",
            MeasureKind::Zhang => "zhang",
            MeasureKind::TailKendall => "tail_kendall",
        }
    }

    pub fn needs_quantile(&self) -> bool {
        matches!(self, MeasureKind::TailUpper | MeasureKind::TailLower | MeasureKind::TailKendall)
    }
}

impl std::fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MeasureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Parse { reason: format!("unknown measure '{s}'") })
    }
}

/// Full specification of an estimation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    /// Quantile for the tail measures; must be present iff a tail measure is
    /// selected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    /// Base seed for random tie-breaking (Chatterjee family). Per-cell seeds
    /// are derived deterministically from this and the cell index.
    #[serde(default)]
    pub tie_seed: u64,
}

impl MeasureSpec {
    pub fn new(kind: MeasureKind) -> Self {
        MeasureSpec { kind, q: None, tie_seed: 0 }
    }

    pub fn with_quantile(kind: MeasureKind, q: f64) -> Self {
        MeasureSpec { kind, q: Some(q), tie_seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind.needs_quantile(), self.q) {
            (true, Some(q)) if q > 0.0 && q < 1.0 => Ok(()),
            (true, _) => Err(Error::InvalidSpec {
                reason: format!("measure {} requires a quantile q in (0,1)", self.kind),
            }),
            (false, Some(_)) => Err(Error::InvalidSpec {
                reason: format!("measure {} does not take a quantile", self.kind),
            }),
            (false, None) => Ok(()),
        }
    }
}

/// An n x p table of asset returns; columns are stored contiguously.
#[derive(Debug, Clone)]
pub struct ReturnsPanel {
    n: usize,
    p: usize,
    labels: Vec<String>,
    values: Vec<f64>, // column-major: values[j*n + t]
}

impl ReturnsPanel {
    pub fn from_columns(labels: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let p = columns.len();
        if p == 0 {
            return Err(Error::Parse { reason: "panel has no columns".into() });
        }
        let n = columns[0].len();
        if labels.len() != p {
            return Err(Error::Parse { reason: "label count does not match column count".into() });
        }
        if n <= p {
            return Err(Error::Parse {
                reason: format!("need more observations than assets (n={n}, p={p})"),
            });
        }
        let mut values = Vec::with_capacity(n * p);
        for col in &columns {
            if col.len() != n {
                return Err(Error::Parse { reason: "ragged panel columns".into() });
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse { reason: "panel contains non-finite values".into() });
            }
            values.extend_from_slice(col);
        }
        Ok(ReturnsPanel { n, p, labels, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// 0-based column accessor.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.n..(j + 1) * self.n]
    }

    /// Reorder columns: new column k = old column sigma[k]-1 (1-based sigma).
    pub fn permute_columns(&self, sigma: &[usize]) -> Result<Self> {
        crate::matrix::validate_permutation(sigma, self.p)?;
        let columns: Vec<Vec<f64>> = sigma.iter().map(|&s| self.column(s - 1).to_vec()).collect();
        let labels: Vec<String> = sigma.iter().map(|&s| self.labels[s - 1].clone()).collect();
        ReturnsPanel::from_columns(labels, columns)
    }

    /// CSV with a header row of asset labels; rows are observations.
    pub fn to_csv_string(&self) -> String {
        let mut out = self.labels.join(",");
        out.push('\n');
        for t in 0..self.n {
            let row: Vec<String> =
                (0..self.p).map(|j| format!("{}", self.column(j)[t])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse { reason: "empty panel file".into() })?;
        let labels: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let p = labels.len();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); p];
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != p {
                return Err(Error::Parse {
                    reason: format!("row {}: expected {p} fields, got {}", lineno + 2, fields.len()),
                });
            }
            for (j, tok) in fields.iter().enumerate() {
                let v = tok.trim().parse::<f64>().map_err(|e| Error::Parse {
                    reason: format!("row {}: {}", lineno + 2, e),
                })?;
                columns[j].push(v);
            }
        }
        ReturnsPanel::from_columns(labels, columns)
    }
}

fn check_lengths(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < min {
        return Err(Error::OutOfRange {
            what: format!("need at least {min} observations, got {}", x.len()),
        });
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn is_constant(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[0] == w[1])
}

/// Sample Pearson correlation with (n-1) denominators.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 3)?;
    if is_constant(x) || is_constant(y) {
        return Err(Error::ConstantSeries);
    }
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Average (midrank) ranks, 1-based.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0; // mean of ranks start+1 ..= end
        for &k in &idx[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson on midranks (valid with ties); equal
/// to the classical sum-of-squared-rank-differences form when tie-free.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 3)?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

/// Tie-free shortcut form of the rank correlation; used as an internal
/// cross-check against `spearman`.
pub fn spearman_d2(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 3)?;
    let n = x.len() as f64;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - 6.0 * d2 / (n * n * n - n))
}

fn kendall_scan(x: &[f64], y: &[f64]) -> (i64, i64, i64) {
    // returns (concordant - discordant, x tie pairs, y tie pairs)
    let n = x.len();
    let mut s = 0i64;
    let mut tx = 0i64;
    let mut ty = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tx += 1;
            }
            if dy == 0.0 {
                ty += 1;
            }
            let prod = dx * dy;
            if prod > 0.0 {
                s += 1;
            } else if prod < 0.0 {
                s -= 1;
            }
        }
    }
    (s, tx, ty)
}

/// Kendall's tau-a: (concordant - discordant) / (n(n-1)/2).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 2)?;
    let n0 = (x.len() * (x.len() - 1) / 2) as f64;
    let (s, _, _) = kendall_scan(x, y);
    Ok(s as f64 / n0)
}

/// Kendall's tau-b with exact tie-group corrections.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 2)?;
    let n0 = (x.len() * (x.len() - 1) / 2) as i64;
    let (s, tx, ty) = kendall_scan(x, y);
    let denom = ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::AllTied);
    }
    Ok(s as f64 / denom)
}

/// Type-7 empirical quantile (linear interpolation of order statistics).
pub fn empirical_quantile(x: &[f64], q: f64) -> f64 {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (sorted.len() as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    Upper,
    Lower,
}

/// Empirical conditional exceedance frequency at finite q: for the upper
/// side, P(Y > Q_Y(q) | X > Q_X(q)); lower side mirrors with <=.
pub fn tail_dependence(x: &[f64], y: &[f64], q: f64, side: TailSide) -> Result<f64> {
    check_lengths(x, y, 2)?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::OutOfRange { what: format!("tail quantile q={q} outside (0,1)") });
    }
    let qx = empirical_quantile(x, q);
    let qy = empirical_quantile(y, q);
    let mut cond = 0usize;
    let mut joint = 0usize;
    for (&a, &b) in x.iter().zip(y) {
        let (xin, yin) = match side {
            TailSide::Upper => (a > qx, b > qy),
            TailSide::Lower => (a <= qx, b <= qy),
        };
        if xin {
            cond += 1;
            if yin {
                joint += 1;
            }
        }
    }
    if cond == 0 {
        return Err(Error::NoExceedances { q });
    }
    Ok(joint as f64 / cond as f64)
}

/// Szekely's distance correlation (square-root form), by explicit
/// double-centering of the pairwise distance matrices.
pub fn szekely_dcorr(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 2)?;
    if is_constant(x) || is_constant(y) {
        return Err(Error::ConstantSeries);
    }
    let n = x.len();
    let a = centered_distance_matrix(x);
    let b = centered_distance_matrix(y);
    let mut vxy = 0.0;
    let mut vxx = 0.0;
    let mut vyy = 0.0;
    for k in 0..n * n {
        vxy += a[k] * b[k];
        vxx += a[k] * a[k];
        vyy += b[k] * b[k];
    }
    let n2 = (n * n) as f64;
    let dcov2 = vxy / n2;
    let dvarx = vxx / n2;
    let dvary = vyy / n2;
    if dvarx <= 0.0 || dvary <= 0.0 {
        return Err(Error::ConstantSeries);
    }
    Ok((dcov2.max(0.0) / (dvarx * dvary).sqrt()).sqrt())
}

fn centered_distance_matrix(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    let mut row_means = vec![0.0; n];
    let mut grand = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = (x[i] - x[j]).abs();
            d[i * n + j] = v;
            row_means[i] += v;
        }
        grand += row_means[i];
        row_means[i] /= n as f64;
    }
    grand /= (n * n) as f64;
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] += grand - row_means[i] - row_means[j];
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LancasterVariant {
    /// Margins mapped through rank/(n+1) then the standard normal quantile.
    Normalized,
    /// Margins standardized to zero mean and unit variance.
    Linear,
}

/// Lancaster's measure: max(|r(X~,Y~)|, |r(X~^2,Y~^2)|) over transformed
/// margins.
pub fn lancaster(x: &[f64], y: &[f64], variant: LancasterVariant) -> Result<f64> {
    check_lengths(x, y, 3)?;
    if is_constant(x) || is_constant(y) {
        return Err(Error::ConstantSeries);
    }
    let n = x.len() as f64;
    let transform = |v: &[f64]| -> Result<Vec<f64>> {
        match variant {
            LancasterVariant::Normalized => average_ranks(v)
                .iter()
                .map(|&r| normal_quantile(r / (n + 1.0)))
                .collect(),
            LancasterVariant::Linear => {
                let m = mean(v);
                let var = v.iter().map(|&a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
                Ok(v.iter().map(|&a| (a - m) / var.sqrt()).collect())
            }
        }
    };
    let xt = transform(x)?;
    let yt = transform(y)?;
    let linear = pearson(&xt, &yt)?.abs();
    let x2: Vec<f64> = xt.iter().map(|&a| a * a).collect();
    let y2: Vec<f64> = yt.iter().map(|&a| a * a).collect();
    let squared = pearson(&x2, &y2)?.abs();
    Ok(linear.max(squared))
}

/// Order of observations after sorting by x, ties broken uniformly at random
/// with the given seed.
fn x_sorted_order(x: &[f64], tie_seed: u64) -> Vec<usize> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let has_ties = {
        let mut sorted = x.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.windows(2).any(|w| w[0] == w[1])
    };
    if has_ties {
        let mut rng = ChaCha12Rng::seed_from_u64(tie_seed);
        idx.shuffle(&mut rng);
    }
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
    idx
}

/// Chatterjee's rank correlation, directional (X explains Y). Tie-free data
/// uses the simple n^2-1 form; data with ties uses the general tie-aware
/// form with x-ties broken uniformly at random (seeded).
pub fn chatterjee(x: &[f64], y: &[f64], tie_seed: u64) -> Result<f64> {
    check_lengths(x, y, 3)?;
    let n = x.len();
    let order = x_sorted_order(x, tie_seed);
    // r_i = #{j : y_j <= y_i}, l_i = #{j : y_j >= y_i}, in x-sorted order
    let mut r = vec![0.0; n];
    let mut l = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        let yi = y[i];
        let mut le = 0usize;
        let mut ge = 0usize;
        for &yj in y.iter() {
            if yj <= yi {
                le += 1;
            }
            if yj >= yi {
                ge += 1;
            }
        }
        r[pos] = le as f64;
        l[pos] = ge as f64;
    }
    let jumps: f64 = r.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let y_has_ties = {
        let mut sorted = y.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.windows(2).any(|w| w[0] == w[1])
    };
    let x_has_ties = {
        let mut sorted = x.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.windows(2).any(|w| w[0] == w[1])
    };
    let nf = n as f64;
    if x_has_ties || y_has_ties {
        let denom: f64 = l.iter().map(|&li| li * (nf - li)).sum();
        if denom == 0.0 {
            return Err(Error::AllTied);
        }
        Ok(1.0 - nf * jumps / (2.0 * denom))
    } else {
        Ok(1.0 - 3.0 * jumps / (nf * nf - 1.0))
    }
}

/// Symmetrized Chatterjee: max over both directions.
pub fn chatterjee_sym(x: &[f64], y: &[f64], tie_seed: u64) -> Result<f64> {
    let a = chatterjee(x, y, tie_seed)?;
    let b = chatterjee(y, x, tie_seed.wrapping_add(1))?;
    Ok(a.max(b))
}

/// Improved (positively biased-corrected) variant of Chatterjee's measure:
/// the x-sorted rank jumps are compared against their independence-case
/// expectation, using the harmonic weighting over index gaps.
pub fn chatterjee_improved(x: &[f64], y: &[f64], tie_seed: u64) -> Result<f64> {
    check_lengths(x, y, 3)?;
    let n = x.len();
    let order = x_sorted_order(x, tie_seed);
    let ry = average_ranks(y);
    let r: Vec<f64> = order.iter().map(|&i| ry[i]).collect();
    let nf = n as f64;
    // numerator: total absolute rank variation over all ordered index gaps,
    // weighted by 1/gap; denominator: its independence-case expectation
    // (a uniform rank pair has mean absolute difference (n+1)/3)
    let mut num = 0.0;
    let mut den = 0.0;
    for gap in 1..n {
        let w = 1.0 / gap as f64;
        for i in 0..(n - gap) {
            num += w * (r[i + gap] - r[i]).abs();
        }
        den += w * (n - gap) as f64;
    }
    den *= (nf + 1.0) / 3.0;
    Ok(1.0 - num / den)
}

/// Zhang's combined measure: max(|Spearman|, sqrt(5/2) * Chatterjee),
/// clamped to [0,1] (the Chatterjee term can overshoot in finite samples).
pub fn zhang_combined(x: &[f64], y: &[f64], tie_seed: u64) -> Result<f64> {
    let sr = spearman(x, y)?.abs();
    let xi = chatterjee(x, y, tie_seed)?;
    Ok(sr.max((2.5f64).sqrt() * xi).clamp(0.0, 1.0))
}

/// Tail-restricted Kendall statistic: the concordance sum over pairs whose
/// x-values both exceed the (n-k)-th order statistic, normalized by C(k,2)
/// with k = round(n(1-q)). Directional in (x, y).
pub fn tail_kendall(x: &[f64], y: &[f64], q: f64) -> Result<f64> {
    check_lengths(x, y, 2)?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::OutOfRange { what: format!("tail quantile q={q} outside (0,1)") });
    }
    let n = x.len();
    let k = (n as f64 * (1.0 - q)).round() as usize;
    if k < 2 {
        return Err(Error::TooFewExceedances { k });
    }
    let selected: Vec<usize> = if k >= n {
        (0..n).collect()
    } else {
        let mut sorted = x.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let threshold = sorted[n - k - 1]; // X_(n-k), 1-based order statistic
        (0..n).filter(|&i| x[i] > threshold).collect()
    };
    let mut s = 0i64;
    for (a, &i) in selected.iter().enumerate() {
        for &j in &selected[a + 1..] {
            let prod = (x[i] - x[j]) * (y[i] - y[j]);
            if prod > 0.0 {
                s += 1;
            } else if prod < 0.0 {
                s -= 1;
            }
        }
    }
    let pairs = (k * (k - 1) / 2) as f64;
    Ok(s as f64 / pairs)
}

/// Per-cell tie-break seed, derived deterministically from the base seed and
/// the (1-based) cell coordinates.
pub fn cell_tie_seed(base: u64, cell: CellIndex) -> u64 {
    splitmix(base ^ (cell.row as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ (cell.col as u64))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Evaluate a single measure on a pair of columns.
pub fn evaluate_measure(spec: &MeasureSpec, x: &[f64], y: &[f64], tie_seed: u64) -> Result<f64> {
    match spec.kind {
        MeasureKind::Pearson => pearson(x, y),
        MeasureKind::Spearman => spearman(x, y),
        MeasureKind::Kendall => kendall_tau(x, y),
        MeasureKind::KendallB => kendall_tau_b(x, y),
        MeasureKind::TailUpper => tail_dependence(x, y, spec.q.unwrap(), TailSide::Upper),
        MeasureKind::TailLower => tail_dependence(x, y, spec.q.unwrap(), TailSide::Lower),
        MeasureKind::Szekely => szekely_dcorr(x, y),
        MeasureKind::Lancaster => lancaster(x, y, LancasterVariant::Normalized),
        MeasureKind::LancasterLinear => lancaster(x, y, LancasterVariant::Linear),
        MeasureKind::Chatterjee => chatterjee(x, y, tie_seed),
        MeasureKind::ChatterjeeSym => chatterjee_sym(x, y, tie_seed),
        MeasureKind::ChatterjeeImproved => chatterjee_improved(x, y, tie_seed),
        MeasureKind::Zhang => zhang_combined(x, y, tie_seed),
        MeasureKind::TailKendall => tail_kendall(x, y, spec.q.unwrap()),
    }
}

/// Build the all-pairwise matrix. For asymmetric measures the cell value is
/// measure(lower-column-index asset, higher-column-index asset), mirrored to
/// both triangle positions; the diagonal is forced to 1.
///
/// The assembled matrix is returned as-is: positive definiteness is a
/// property the caller checks (`is_positive_definite`) and reports — it is
/// never repaired here.
pub fn pairwise_matrix(panel: &ReturnsPanel, spec: &MeasureSpec) -> Result<DependenceMatrix> {
    spec.validate()?;
    let p = panel.p();
    let cells = lower_triangle_cells(p);
    let lower: Result<Vec<f64>> = cells
        .par_iter()
        .map(|&cell| {
            let x = panel.column(cell.j()); // lower column index first
            let y = panel.column(cell.i());
            evaluate_measure(spec, x, y, cell_tie_seed(spec.tie_seed, cell)).map_err(|e| {
                Error::CellEstimationFailure { cell, reason: e.to_string() }
            })
        })
        .collect();
    DependenceMatrix::from_lower_triangle(p, spec.kind, &lower?)
}

/// Conversions between Pearson's r and the rank measures under bivariate
/// normality.
pub fn tau_from_pearson(r: f64) -> Result<f64> {
    check_unit_interval(r)?;
    Ok(2.0 / std::f64::consts::PI * r.asin())
}

pub fn pearson_from_tau(tau: f64) -> Result<f64> {
    check_unit_interval(tau)?;
    Ok((tau * std::f64::consts::PI / 2.0).sin())
}

pub fn rho_s_from_pearson(r: f64) -> Result<f64> {
    check_unit_interval(r)?;
    Ok(6.0 / std::f64::consts::PI * (r / 2.0).asin())
}

pub fn pearson_from_rho_s(s: f64) -> Result<f64> {
    check_unit_interval(s)?;
    Ok(2.0 * (s * std::f64::consts::PI / 6.0).sin())
}

fn check_unit_interval(v: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange { what: format!("correlation argument {v} outside [-1,1]") })
    }
}

/// Convert a matrix cell-wise between the elliptically-related measures
/// (Pearson, Kendall, Spearman), routing through Pearson scale.
pub fn convert_matrix(r: &DependenceMatrix, target: MeasureKind) -> Result<DependenceMatrix> {
    let to_pearson = |v: f64| -> Result<f64> {
        match r.measure {
            MeasureKind::Pearson => Ok(v),
            MeasureKind::Kendall | MeasureKind::KendallB => pearson_from_tau(v),
            MeasureKind::Spearman => pearson_from_rho_s(v),
            other => Err(Error::InvalidSpec {
                reason: format!("no closed-form conversion from {other}"),
            }),
        }
    };
    let from_pearson = |v: f64| -> Result<f64> {
        match target {
            MeasureKind::Kendall | MeasureKind::KendallB => tau_from_pearson(v),
            MeasureKind::Spearman => rho_s_from_pearson(v),
            MeasureKind::Pearson => Ok(v),
            other => Err(Error::InvalidSpec {
                reason: format!("no closed-form conversion to {other}"),
            }),
        }
    };
    let lower: Result<Vec<f64>> =
        r.lower_triangle().iter().map(|&v| from_pearson(to_pearson(v)?)).collect();
    DependenceMatrix::from_lower_triangle(r.dim(), target, &lower?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_small_cases() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn spearman_small_cases() {
        assert!((spearman(&[1.0, 5.0, 9.0], &[2.0, 3.0, 7.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_forms_agree_without_ties() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
            let y: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
            let a = spearman(&x, &y).unwrap();
            let b = spearman_d2(&x, &y).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kendall_small_cases() {
        let t = kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((t - 1.0 / 3.0).abs() < 1e-12);
        let t = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.0, 5.0, 9.0]).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        let tb = kendall_tau_b(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.0, 5.0, 9.0]).unwrap();
        assert!((tb - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_tau_b_handles_tie_group() {
        // x = (1,1,2): one x-tie pair; S counts only the two untied pairs
        let x = [1.0, 1.0, 2.0];
        let y = [1.0, 2.0, 3.0];
        let tb = kendall_tau_b(&x, &y).unwrap();
        // S = 2, n0 = 3, tx = 1, ty = 0 -> 2/sqrt(2*3)
        assert!((tb - 2.0 / (6.0f64).sqrt()).abs() < 1e-12);
        assert!(kendall_tau_b(&[1.0, 1.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn tail_dependence_extremes() {
        let x: Vec<f64> = (0..200).map(|i| i as f64).collect();
        assert!((tail_dependence(&x, &x, 0.9, TailSide::Upper).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(tail_dependence(&x, &neg, 0.95, TailSide::Upper).unwrap(), 0.0);
    }

    #[test]
    fn tail_dependence_independent_uniforms() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let t = tail_dependence(&x, &y, 0.9, TailSide::Upper).unwrap();
        assert!((t - 0.1).abs() < 0.01, "t={t}");
    }

    #[test]
    fn szekely_affine_and_quadratic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..400).map(|_| rng.gen::<f64>() - 0.5).collect();
        assert!((szekely_dcorr(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let affine: Vec<f64> = x.iter().map(|&v| 3.0 - 2.0 * v).collect();
        assert!((szekely_dcorr(&x, &affine).unwrap() - 1.0).abs() < 1e-12);
        let sq: Vec<f64> = x.iter().map(|&v| v * v).collect();
        let d = szekely_dcorr(&x, &sq).unwrap();
        assert!(d > 0.1 && d < 1.0, "d={d}");
        let r = pearson(&x, &sq).unwrap();
        assert!(r.abs() < 0.35, "pearson on quadratic should be small, got {r}");
    }

    #[test]
    fn lancaster_catches_quadratic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let x: Vec<f64> = (0..200).map(|_| rng.gen::<f64>() - 0.5).collect();
        assert!((lancaster(&x, &x, LancasterVariant::Normalized).unwrap() - 1.0).abs() < 1e-12);
        let sq: Vec<f64> = x.iter().map(|&v| v * v).collect();
        assert!(lancaster(&x, &sq, LancasterVariant::Normalized).unwrap() > 0.3);
        assert!(lancaster(&x, &sq, LancasterVariant::Linear).unwrap() > 0.3);
        // independence: small on average
        let mut acc = 0.0;
        for _ in 0..100 {
            let a: Vec<f64> = (0..100).map(|_| rng.gen::<f64>()).collect();
            let b: Vec<f64> = (0..100).map(|_| rng.gen::<f64>()).collect();
            acc += lancaster(&a, &b, LancasterVariant::Normalized).unwrap();
        }
        assert!(acc / 100.0 < 0.2);
    }

    #[test]
    fn chatterjee_monotone_and_asymmetry() {
        // strictly increasing, n=5: jumps sum to 4, xi = 1 - 12/24 = 0.5
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [10.0, 20.0, 30.0, 40.0, 50.0];
        assert!((chatterjee(&x, &y, 0).unwrap() - 0.5).abs() < 1e-12);
        // larger n approaches 1
        let xb: Vec<f64> = (0..2000).map(|i| i as f64).collect();
        assert!(chatterjee(&xb, &xb, 0).unwrap() > 0.99);
        // asymmetric on a noisy parabola
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let xs: Vec<f64> = (0..400).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&v| v * v + 0.01 * rng.gen::<f64>()).collect();
        let fwd = chatterjee(&xs, &ys, 0).unwrap();
        let rev = chatterjee(&ys, &xs, 0).unwrap();
        assert!((fwd - rev).abs() > 0.1, "fwd={fwd} rev={rev}");
        assert!(chatterjee_sym(&xs, &ys, 0).unwrap() >= fwd.max(rev) - 1e-12);
    }

    #[test]
    fn chatterjee_tie_form_is_deterministic_given_seed() {
        let x = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0];
        let y = [1.0, 2.0, 1.0, 3.0, 2.0, 4.0, 4.0];
        let a = chatterjee(&x, &y, 42).unwrap();
        let b = chatterjee(&x, &y, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
    }

    #[test]
    fn chatterjee_improved_baselines() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        // independence: near zero on average
        let mut acc = 0.0;
        let reps = 50;
        for _ in 0..reps {
            let x: Vec<f64> = (0..150).map(|_| rng.gen::<f64>()).collect();
            let y: Vec<f64> = (0..150).map(|_| rng.gen::<f64>()).collect();
            acc += chatterjee_improved(&x, &y, 0).unwrap();
        }
        let mean_ind = acc / reps as f64;
        assert!(mean_ind.abs() < 0.05, "independence baseline {mean_ind}");
        // perfect monotone dependence: converges to 1 (slowly, ~1/ln n);
        // at n=500 the exact value is 1 - (n(n-1)/2) / ((n+1)/3 * sum (n-g)/g)
        let x: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let v = chatterjee_improved(&x, &x, 0).unwrap();
        assert!(v > 0.7, "monotone value {v}");
        // and grows with n
        let x2: Vec<f64> = (0..2000).map(|i| i as f64).collect();
        assert!(chatterjee_improved(&x2, &x2, 0).unwrap() > v);
    }

    #[test]
    fn zhang_combined_cases() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert!((zhang_combined(&x, &x, 0).unwrap() - 1.0).abs() < 1e-12);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        let xs: Vec<f64> = (0..500).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&v| v * v).collect();
        let z = zhang_combined(&xs, &ys, 0).unwrap();
        let sr = spearman(&xs, &ys).unwrap().abs();
        assert!(z > sr, "chatterjee term should dominate: z={z} sr={sr}");
        let mut acc = 0.0;
        for _ in 0..50 {
            let a: Vec<f64> = (0..300).map(|_| rng.gen::<f64>()).collect();
            let b: Vec<f64> = (0..300).map(|_| rng.gen::<f64>()).collect();
            acc += zhang_combined(&a, &b, 0).unwrap();
        }
        assert!(acc / 50.0 < 0.2);
    }

    #[test]
    fn tail_kendall_cases() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert!((tail_kendall(&x, &x, 0.8).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|&v| -v).collect();
        assert!((tail_kendall(&x, &neg, 0.8).unwrap() + 1.0).abs() < 1e-12);
        assert!(tail_kendall(&x, &x, 0.999).is_err());
        // directional
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(55);
        let xs: Vec<f64> = (0..300).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&v| v * v + 0.1 * rng.gen::<f64>()).collect();
        let fwd = tail_kendall(&xs, &ys, 0.8).unwrap();
        let rev = tail_kendall(&ys, &xs, 0.8).unwrap();
        assert!((fwd - rev).abs() > 1e-6);
    }

    #[test]
    fn pairwise_matrix_p2_matches_bivariate() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(66);
        let a: Vec<f64> = (0..50).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.gen::<f64>()).collect();
        let panel =
            ReturnsPanel::from_columns(vec!["a".into(), "b".into()], vec![a.clone(), b.clone()])
                .unwrap();
        let m = pairwise_matrix(&panel, &MeasureSpec::new(MeasureKind::Spearman)).unwrap();
        assert!((m.get(1, 0) - spearman(&a, &b).unwrap()).abs() < 1e-15);
        assert_eq!(m.get(0, 1), m.get(1, 0));
        assert_eq!(m.get(0, 0), 1.0);
    }

    #[test]
    fn asymmetric_measure_uses_column_order_convention() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let a: Vec<f64> = (0..200).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let b: Vec<f64> = a.iter().map(|&v| v * v + 0.01 * rng.gen::<f64>()).collect();
        let panel =
            ReturnsPanel::from_columns(vec!["a".into(), "b".into()], vec![a.clone(), b.clone()])
                .unwrap();
        let spec = MeasureSpec::new(MeasureKind::Chatterjee);
        let m = pairwise_matrix(&panel, &spec).unwrap();
        let cell = CellIndex::new(2, 1).unwrap();
        let expected = chatterjee(&a, &b, cell_tie_seed(spec.tie_seed, cell)).unwrap();
        assert_eq!(m.get(1, 0), expected);
    }

    #[test]
    fn conversions_round_trip() {
        assert!((tau_from_pearson(0.2).unwrap() - 0.12819).abs() < 1e-5);
        assert!((tau_from_pearson(0.6).unwrap() - 0.40966).abs() < 1e-5);
        assert_eq!(tau_from_pearson(0.0).unwrap(), 0.0);
        assert!((tau_from_pearson(1.0).unwrap() - 1.0).abs() < 1e-12);
        for &v in &[-0.9, -0.4, 0.0, 0.3, 0.77] {
            let t = tau_from_pearson(v).unwrap();
            assert!((pearson_from_tau(t).unwrap() - v).abs() < 1e-12);
            let s = rho_s_from_pearson(v).unwrap();
            assert!((pearson_from_rho_s(s).unwrap() - v).abs() < 1e-12);
        }
        assert!(tau_from_pearson(1.5).is_err());
    }

    #[test]
    fn panel_csv_round_trip() {
        let panel = ReturnsPanel::from_columns(
            vec!["x".into(), "y".into()],
            vec![vec![0.5, -1.25, 2.0], vec![1.0, 0.0, -0.5]],
        )
        .unwrap();
        let text = panel.to_csv_string();
        let back = ReturnsPanel::from_csv_str(&text).unwrap();
        assert_eq!(back.labels(), panel.labels());
        assert_eq!(back.column(0), panel.column(0));
        assert_eq!(back.column(1), panel.column(1));
    }
}
