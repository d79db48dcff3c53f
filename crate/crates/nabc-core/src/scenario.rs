//! Scenario-restricted analysis: perturb a chosen subset of cells while the
//! rest of the matrix is held exactly at its calibrated mean.
//!
//! The angle coordinates make this possible without losing positive
//! definiteness, but an angle does not control a single correlation: cell
//! (i, j) of the angle matrix feeds every correlation in row i to the right
//! of j and every correlation below it in column i. The one family of cell
//! sets that is closed under this dependence structure is the prefixes of a
//! specific fill order (rightmost lower-triangle column first, top-down
//! within each column). A scenario is therefore realized by relabeling the
//! variables so the targeted cells land inside the shortest possible fill
//! prefix, sampling the prefix angles from their kernel laws, pinning every
//! other angle at the mean matrix's angles, and mapping back. Cells dragged
//! into the prefix that were not requested are reported as forced extras.

use serde::{Deserialize, Serialize};

use crate::cell::{cell_count, CellIndex};
use crate::error::{Error, Result};
use crate::kernel::{
    inference_with_roles, two_sample_with_roles, AngleDistributionSet,
};
use crate::matrix::{angles_to_corr, AngleMatrix, DependenceMatrix, MatrixJson};
use crate::report::{CellRole, InferenceReport, ReportKind};
use crate::rng::substream_rng;

/// Limit below which the permutation search is exhaustive (8! = 40320).
const EXHAUSTIVE_DIM_LIMIT: usize = 8;

/// User-facing description of a scenario: which cells may move.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub label: String,
    pub dim: usize,
    /// Targeted cells as (row, col) pairs, 1-based, row > col.
    pub targets: Vec<(usize, usize)>,
}

impl ScenarioSpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: ScenarioSpec =
            serde_json::from_str(text).map_err(|e| Error::Parse { reason: e.to_string() })?;
        spec.target_cells()?;
        Ok(spec)
    }

    /// Validated, deduplicated, canonically ordered target cells.
    pub fn target_cells(&self) -> Result<Vec<CellIndex>> {
        if self.dim < 2 {
            return Err(Error::InvalidScenario { reason: format!("dimension {} too small", self.dim) });
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidScenario { reason: "no target cells".into() });
        }
        let mut cells = Vec::with_capacity(self.targets.len());
        for &(row, col) in &self.targets {
            let (r, c) = if row > col { (row, col) } else { (col, row) };
            let cell = CellIndex::new(r, c)?;
            if cell.row > self.dim {
                return Err(Error::InvalidCell { row, col });
            }
            if !cells.contains(&cell) {
                cells.push(cell);
            }
        }
        cells.sort_by_key(|c| c.linear_index());
        Ok(cells)
    }
}

/// The cells of the lower triangle in "safe perturbation" order: columns
/// from right to left, rows top-down within a column. Every prefix of this
/// sequence is closed under the angle dependence structure — varying the
/// angles of a prefix never moves a correlation outside the prefix.
pub fn fill_order(dim: usize) -> Vec<CellIndex> {
    let mut order = Vec::with_capacity(cell_count(dim));
    for col in (1..dim).rev() {
        for row in col + 1..=dim {
            order.push(CellIndex::new(row, col).expect("valid lower-triangle cell"));
        }
    }
    order
}

/// Cells whose correlations move when the angle of `cell` moves.
pub fn affected_cells(cell: CellIndex, dim: usize) -> Vec<CellIndex> {
    let mut out = Vec::new();
    for m in cell.col..cell.row {
        out.push(CellIndex::new(cell.row, m).expect("valid cell"));
    }
    for m in cell.row + 1..=dim {
        out.push(CellIndex::new(m, cell.row).expect("valid cell"));
    }
    out
}

/// A realized scenario: the relabeling, the fill prefix, and the role of
/// every cell in the relabeled basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioPlan {
    pub label: String,
    pub dim: usize,
    /// sigma[k] is the 1-based original variable placed at position k+1.
    pub sigma: Vec<usize>,
    /// Targets in original labels.
    pub targets: Vec<CellIndex>,
    /// Images of the targets in the relabeled basis.
    pub target_images: Vec<CellIndex>,
    /// Non-target cells that the prefix structure forces to vary, in the
    /// relabeled basis.
    pub forced_extras: Vec<CellIndex>,
    /// Length of the fill-order prefix that is sampled.
    pub prefix_len: usize,
}

impl ScenarioPlan {
    /// Role of every cell in the relabeled basis, canonical cell order.
    pub fn roles(&self) -> Vec<CellRole> {
        let mut roles = vec![CellRole::Frozen; cell_count(self.dim)];
        for c in &self.forced_extras {
            roles[c.linear_index()] = CellRole::ForcedExtra;
        }
        for c in &self.target_images {
            roles[c.linear_index()] = CellRole::Target;
        }
        roles
    }

    /// Inverse relabeling: maps a relabeled-basis matrix back to original
    /// variable labels.
    pub fn inverse_sigma(&self) -> Vec<usize> {
        let mut inv = vec![0usize; self.dim];
        for (pos, &orig) in self.sigma.iter().enumerate() {
            inv[orig - 1] = pos + 1;
        }
        inv
    }

    /// Map a relabeled-basis cell back to original labels.
    pub fn original_cell(&self, image: CellIndex) -> CellIndex {
        let a = self.sigma[image.row - 1];
        let b = self.sigma[image.col - 1];
        CellIndex::new(a.max(b), a.min(b)).expect("distinct variables")
    }
}

/// Cost of realizing `targets` (original labels) under a relabeling: the
/// number of forced extra cells, or None if any image is invalid.
fn prefix_cost(
    targets: &[CellIndex],
    position_of: &[usize],
    fill_pos: &[usize],
) -> usize {
    let mut deepest = 0usize;
    for t in targets {
        let a = position_of[t.row - 1];
        let b = position_of[t.col - 1];
        let image = CellIndex::new(a.max(b), a.min(b)).expect("distinct variables");
        deepest = deepest.max(fill_pos[image.linear_index()] + 1);
    }
    deepest - targets.len()
}

/// Choose a relabeling that realizes the scenario with as few forced extra
/// cells as possible: exhaustive over all permutations for small dimensions,
/// a target-degree heuristic beyond.
pub fn plan_scenario(spec: &ScenarioSpec) -> Result<ScenarioPlan> {
    let targets = spec.target_cells()?;
    let dim = spec.dim;
    let order = fill_order(dim);
    // fill_pos[linear cell index] = position in the fill order.
    let mut fill_pos = vec![0usize; cell_count(dim)];
    for (pos, c) in order.iter().enumerate() {
        fill_pos[c.linear_index()] = pos;
    }

    let best_sigma = if dim <= EXHAUSTIVE_DIM_LIMIT {
        let mut best: Option<(usize, Vec<usize>)> = None;
        let mut sigma: Vec<usize> = (1..=dim).collect();
        // Heap's algorithm; the identity is visited first, so ties resolve
        // toward no relabeling at all.
        let mut c = vec![0usize; dim];
        let consider = |sigma: &[usize], best: &mut Option<(usize, Vec<usize>)>| {
            let mut position_of = vec![0usize; dim];
            for (pos, &orig) in sigma.iter().enumerate() {
                position_of[orig - 1] = pos + 1;
            }
            let cost = prefix_cost(&targets, &position_of, &fill_pos);
            if best.as_ref().map_or(true, |(bc, _)| cost < *bc) {
                *best = Some((cost, sigma.to_vec()));
            }
        };
        consider(&sigma, &mut best);
        let mut i = 0;
        while i < dim {
            if c[i] < i {
                if i % 2 == 0 {
                    sigma.swap(0, i);
                } else {
                    sigma.swap(c[i], i);
                }
                consider(&sigma, &mut best);
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        best.expect("at least the identity was considered").1
    } else {
        // Heuristic: variables that participate in targets go to the top
        // positions (rightmost columns), most-connected last.
        let mut degree = vec![0usize; dim];
        for t in &targets {
            degree[t.row - 1] += 1;
            degree[t.col - 1] += 1;
        }
        let mut vars: Vec<usize> = (1..=dim).collect();
        vars.sort_by_key(|&v| (degree[v - 1], v));
        vars
    };

    let mut position_of = vec![0usize; dim];
    for (pos, &orig) in best_sigma.iter().enumerate() {
        position_of[orig - 1] = pos + 1;
    }
    let target_images: Vec<CellIndex> = targets
        .iter()
        .map(|t| {
            let a = position_of[t.row - 1];
            let b = position_of[t.col - 1];
            CellIndex::new(a.max(b), a.min(b)).expect("distinct variables")
        })
        .collect();
    let prefix_len = target_images
        .iter()
        .map(|c| fill_pos[c.linear_index()] + 1)
        .max()
        .expect("targets are non-empty");
    let forced_extras: Vec<CellIndex> = order[..prefix_len]
        .iter()
        .copied()
        .filter(|c| !target_images.contains(c))
        .collect();
    Ok(ScenarioPlan {
        label: spec.label.clone(),
        dim,
        sigma: best_sigma,
        targets,
        target_images,
        forced_extras,
        prefix_len,
    })
}

fn check_plan(set: &AngleDistributionSet, plan: &ScenarioPlan) -> Result<()> {
    if set.dim() != plan.dim {
        return Err(Error::DimensionMismatch { expected: plan.dim, got: set.dim() });
    }
    Ok(())
}

/// Draw scenario matrices: active cells sample their kernel angle laws in
/// the relabeled basis, frozen cells sit exactly at the mean matrix, and
/// the result is returned in the original variable labels. Every draw is
/// positive definite and its frozen correlations equal the calibrated mean
/// values exactly.
pub fn scenario_sample(
    set: &AngleDistributionSet,
    plan: &ScenarioPlan,
    count: usize,
    seed: u64,
) -> Result<Vec<DependenceMatrix>> {
    check_plan(set, plan)?;
    let relabeled = set.permute(&plan.sigma)?;
    let roles = plan.roles();
    let inv = plan.inverse_sigma();
    let base_angles = relabeled.mean_angles().angles().to_vec();
    let mut out = Vec::with_capacity(count);
    for draw in 0..count as u64 {
        let mut rng = substream_rng(seed, draw);
        let mut angles = base_angles.clone();
        for (idx, role) in roles.iter().enumerate() {
            if *role != CellRole::Frozen {
                angles[idx] = relabeled.cells()[idx].kde().sample(&mut rng);
            }
        }
        let theta = AngleMatrix::from_lower_triangle(plan.dim, set.measure(), angles)?;
        out.push(angles_to_corr(&theta).permute(&inv)?);
    }
    Ok(out)
}

fn relabel_report(mut report: InferenceReport, plan: &ScenarioPlan) -> Result<InferenceReport> {
    let inv = plan.inverse_sigma();
    for cell in report.cells.iter_mut() {
        let original = plan.original_cell(CellIndex::new(cell.row, cell.col)?);
        cell.row = original.row;
        cell.col = original.col;
    }
    report.cells.sort_by_key(|c| {
        CellIndex::new(c.row, c.col).map(|i| i.linear_index()).unwrap_or(usize::MAX)
    });
    let unpermute = |m: Option<MatrixJson>| -> Result<Option<MatrixJson>> {
        match m {
            None => Ok(None),
            Some(json) => {
                let matrix = DependenceMatrix::from_json(json)?;
                Ok(Some(matrix.permute(&inv)?.to_json()))
            }
        }
    };
    report.cell_ci_low = unpermute(report.cell_ci_low.take())?;
    report.cell_ci_high = unpermute(report.cell_ci_high.take())?;
    report.matrix_ci_low = unpermute(report.matrix_ci_low.take())?;
    report.matrix_ci_high = unpermute(report.matrix_ci_high.take())?;
    report.provenance = serde_json::json!({
        "calibration": report.provenance,
        "scenario": {
            "label": plan.label,
            "sigma": plan.sigma,
            "targets": plan.targets.iter().map(|c| (c.row, c.col)).collect::<Vec<_>>(),
            "forced_extras": plan
                .forced_extras
                .iter()
                .map(|c| {
                    let o = plan.original_cell(*c);
                    (o.row, o.col)
                })
                .collect::<Vec<_>>(),
        },
    });
    Ok(report)
}

/// One-sample inference restricted to the scenario's active cells: the
/// matrix p-value, simultaneous levels, and the aggregate diagnostics range
/// over targets and forced extras only, while frozen cells are echoed at
/// their calibrated mean values. Reported in original variable labels.
pub fn scenario_inference(
    set: &AngleDistributionSet,
    plan: &ScenarioPlan,
    observed: &DependenceMatrix,
    alpha: f64,
) -> Result<InferenceReport> {
    check_plan(set, plan)?;
    let relabeled = set.permute(&plan.sigma)?;
    let observed_relabeled = observed.permute(&plan.sigma)?;
    // Pin the frozen cells to their calibrated mean values before the angle
    // conversion. An angle is fed by every correlation earlier in its
    // Cholesky rows, so without this a deviation in a frozen cell would
    // leak into the active cells' angles and contaminate the restricted
    // test. The hybrid must still be positive definite; if the observed
    // active cells are incompatible with the frozen means, the conversion
    // reports the offending pivot.
    let roles = plan.roles();
    let mut lower = observed_relabeled.lower_triangle();
    for (idx, role) in roles.iter().enumerate() {
        if *role == CellRole::Frozen {
            lower[idx] = relabeled.mean_matrix().lower_triangle()[idx];
        }
    }
    let hybrid =
        DependenceMatrix::from_lower_triangle(plan.dim, observed.measure, &lower)?;
    let report = inference_with_roles(&relabeled, &hybrid, alpha, &roles, ReportKind::Scenario)?;
    let report = relabel_report(report, plan)?;
    report.assert_consistent()?;
    Ok(report)
}

/// Two-sample comparison restricted to the scenario's active cells.
pub fn scenario_two_sample(
    set_a: &AngleDistributionSet,
    set_b: &AngleDistributionSet,
    plan: &ScenarioPlan,
    alpha: f64,
    seed: u64,
) -> Result<InferenceReport> {
    check_plan(set_a, plan)?;
    check_plan(set_b, plan)?;
    let a = set_a.permute(&plan.sigma)?;
    let b = set_b.permute(&plan.sigma)?;
    let report =
        two_sample_with_roles(&a, &b, alpha, seed, &plan.roles(), ReportKind::Scenario)?;
    let report = relabel_report(report, plan)?;
    report.assert_consistent()?;
    Ok(report)
}
