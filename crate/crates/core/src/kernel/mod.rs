//! Estimation of per-parameter transition matrices and the block kernel.
//!
//! Rows index the current state and hold next-state distributions, so a
//! distribution propagates as a row vector: `next = dist × P`.

mod io;
mod sinkhorn;

pub use io::{read_kernel, read_matrix, write_kernel, write_matrix, write_matrix_csv};
pub use sinkhorn::{
    barycenter_on_grid, debiased_sinkhorn_barycenter, Barycenter, GibbsKernel, SinkhornConfig,
    SinkhornStatus,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::provider::{hierarchy_pdf, DigitProvider};
use crate::quantizer::{serialize, Band, Precision, StateId, DEFAULT_TARGET_HI, DEFAULT_TARGET_LO};

pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Highest precision stored densely over all `10^k` states.
pub const MAX_DENSE_PRECISION: u8 = 3;

/// Transition matrix over a band of states, with a filled mask per row.
///
/// Rows and columns are both restricted to `band`; entries outside it are
/// implicitly zero. Unfilled rows are all-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialTransitionMatrix {
    precision: Precision,
    band: Band,
    data: Vec<f64>,
    filled: Vec<bool>,
    visits: Vec<u64>,
}

impl PartialTransitionMatrix {
    /// Empty matrix; dense over all states for `k ≤ 3`, otherwise restricted
    /// to the reachable `[1.5, 8.5]` band.
    pub fn new(precision: Precision) -> Self {
        let band = if precision.digits() <= MAX_DENSE_PRECISION as usize {
            Band::full(precision)
        } else {
            Band::reachable(precision, DEFAULT_TARGET_LO, DEFAULT_TARGET_HI)
                .expect("default band fits every precision")
        };
        Self::with_band(precision, band)
    }

    pub fn with_band(precision: Precision, band: Band) -> Self {
        let n = band.len();
        Self {
            precision,
            band,
            data: vec![0.0; n * n],
            filled: vec![false; n],
            visits: vec![0; n],
        }
    }

    /// Fully filled matrix from dense rows over the band.
    pub fn from_rows(precision: Precision, band: Band, rows: &[Vec<f64>]) -> Result<Self> {
        let n = band.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(format!("expected {n} rows of {n} entries")));
        }
        let mut m = Self::with_band(precision, band);
        for (r, row) in rows.iter().enumerate() {
            m.set_local_row(r, row, 0)?;
        }
        Ok(m)
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn band(&self) -> Band {
        self.band
    }

    /// Number of stored rows (and columns).
    pub fn size(&self) -> usize {
        self.band.len()
    }

    fn local(&self, index: u32) -> Result<usize> {
        if self.band.contains(index) {
            Ok((index - self.band.lo) as usize)
        } else {
            Err(Error::OutOfRange {
                value: index as f64,
                index: index as i64,
                max: self.band.hi,
            })
        }
    }

    /// Row for band-local index `r`.
    pub fn local_row(&self, r: usize) -> &[f64] {
        let n = self.size();
        &self.data[r * n..(r + 1) * n]
    }

    /// Row of state `index` over the band columns.
    pub fn row(&self, index: u32) -> Result<&[f64]> {
        Ok(self.local_row(self.local(index)?))
    }

    /// Row of state `index` expanded to all `10^k` columns.
    pub fn full_row(&self, index: u32) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.precision.num_states()];
        let row = self.row(index)?;
        out[self.band.lo as usize..=self.band.hi as usize].copy_from_slice(row);
        Ok(out)
    }

    pub fn is_filled(&self, index: u32) -> bool {
        self.local(index).map(|r| self.filled[r]).unwrap_or(false)
    }

    pub fn visit_count(&self, index: u32) -> u64 {
        self.local(index).map(|r| self.visits[r]).unwrap_or(0)
    }

    pub fn filled_mask(&self) -> &[bool] {
        &self.filled
    }

    pub fn visit_counts(&self) -> &[u64] {
        &self.visits
    }

    /// Filled state indices, ascending.
    pub fn filled_states(&self) -> Vec<u32> {
        self.filled
            .iter()
            .enumerate()
            .filter(|(_, f)| **f)
            .map(|(r, _)| self.band.lo + r as u32)
            .collect()
    }

    pub fn is_fully_filled(&self) -> bool {
        self.filled.iter().all(|f| *f)
    }

    fn set_local_row(&mut self, r: usize, row: &[f64], visits: u64) -> Result<()> {
        check_row(row)?;
        let n = self.size();
        self.data[r * n..(r + 1) * n].copy_from_slice(row);
        self.filled[r] = true;
        self.visits[r] = visits;
        Ok(())
    }

    /// Folds one predicted next-state distribution (over all `10^k` states)
    /// into row `index` as a visit-count-weighted running mean.
    pub fn accumulate(&mut self, index: u32, pdf: &[f64]) -> Result<()> {
        if pdf.len() != self.precision.num_states() {
            return Err(Error::DimensionMismatch(format!(
                "prediction has {} entries, expected {}",
                pdf.len(),
                self.precision.num_states()
            )));
        }
        let r = self.local(index)?;
        let banded = &pdf[self.band.lo as usize..=self.band.hi as usize];
        let mass: f64 = banded.iter().sum();
        if !(mass > 0.0) {
            return Err(Error::NumericalUnderflow("prediction has no mass inside the band"));
        }
        let n = self.size();
        let c = self.visits[r] as f64;
        let row = &mut self.data[r * n..(r + 1) * n];
        for (v, p) in row.iter_mut().zip(banded) {
            *v = (*v * c + p / mass) / (c + 1.0);
        }
        self.visits[r] += 1;
        self.filled[r] = true;
        Ok(())
    }

    /// Asserts every filled row is a probability vector and every unfilled
    /// row is zero.
    pub fn check_stochastic(&self, tol: f64) -> Result<()> {
        for r in 0..self.size() {
            let row = self.local_row(r);
            if self.filled[r] {
                check_row_tol(row, tol)
                    .map_err(|e| Error::InvalidArgument(format!("row {}: {e}", self.band.lo + r as u32)))?;
            } else if row.iter().any(|v| *v != 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "unfilled row {} is not zero",
                    self.band.lo + r as u32
                )));
            }
        }
        Ok(())
    }

    /// Dense `10^k × 10^k` rows; unfilled and out-of-band rows are zero.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.precision.num_states();
        (0..n as u32)
            .map(|i| {
                if self.band.contains(i) {
                    self.full_row(i).expect("in band")
                } else {
                    vec![0.0; n]
                }
            })
            .collect()
    }
}

fn check_row(row: &[f64]) -> Result<()> {
    check_row_tol(row, STOCHASTIC_TOL)
}

fn check_row_tol(row: &[f64], tol: f64) -> Result<()> {
    if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument("row has a negative or non-finite entry".into()));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::InvalidArgument(format!("row sums to {total}")));
    }
    Ok(())
}

/// Fills the rows of visited states from provider predictions.
///
/// For every time `t` of every trajectory, the context is the serialized
/// prefix up to and including `s_t`; its [`hierarchy_pdf`] is averaged into
/// row `s_t`. Predictions run in parallel and are folded in trajectory order.
pub fn estimate_rows<P: DigitProvider + ?Sized>(
    trajectories: &[Vec<StateId>],
    provider: &P,
    precision: Precision,
    budget: usize,
) -> Result<PartialTransitionMatrix> {
    estimate_rows_into(PartialTransitionMatrix::new(precision), trajectories, provider, budget)
}

/// [`estimate_rows`] into an existing (possibly band-restricted) matrix.
pub fn estimate_rows_into<P: DigitProvider + ?Sized>(
    mut matrix: PartialTransitionMatrix,
    trajectories: &[Vec<StateId>],
    provider: &P,
    budget: usize,
) -> Result<PartialTransitionMatrix> {
    let precision = matrix.precision();
    if trajectories.is_empty() || trajectories.iter().any(Vec::is_empty) {
        return Err(Error::EmptyTrajectory);
    }
    for traj in trajectories {
        if traj.iter().any(|s| s.precision() != precision) {
            return Err(Error::InvalidArgument("trajectory precision differs from the matrix".into()));
        }
        let mut text = serialize(traj);
        text.push(',');
        let stride = precision.digits() + 1;
        let pdfs: Vec<Vec<f64>> = (0..traj.len())
            .into_par_iter()
            .map(|t| {
                hierarchy_pdf(provider, &text[..(t + 1) * stride], precision, budget)
                    .map(|p| p.dist.into_probs())
            })
            .collect::<Result<_>>()?;
        for (state, pdf) in traj.iter().zip(&pdfs) {
            matrix.accumulate(state.index(), pdf)?;
        }
    }
    Ok(matrix)
}

/// Fills every unfilled row.
///
/// Between consecutive filled rows `a < c`, row `m` becomes the debiased
/// Sinkhorn barycenter of rows `a` and `c` with weights
/// `((c − m)/(c − a), (m − a)/(c − a))`. Rows before the first filled row
/// copy it; rows after the last filled row copy that one.
pub fn impute_missing_rows(
    matrix: &PartialTransitionMatrix,
    cfg: &SinkhornConfig,
) -> Result<PartialTransitionMatrix> {
    cfg.validate()?;
    let filled: Vec<usize> = (0..matrix.size()).filter(|&r| matrix.filled[r]).collect();
    let (&first, &last) = match (filled.first(), filled.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::NoFilledRows),
    };
    let mut out = matrix.clone();
    if filled.len() == matrix.size() {
        return Ok(out);
    }

    let mut jobs: Vec<(usize, usize, usize)> = Vec::new();
    for pair in filled.windows(2) {
        let (a, c) = (pair[0], pair[1]);
        jobs.extend((a + 1..c).map(|m| (a, m, c)));
    }
    let kernel = if jobs.is_empty() {
        None
    } else {
        Some(GibbsKernel::on_states(
            matrix.precision,
            matrix.band.lo,
            matrix.band.hi,
            cfg.epsilon,
        ))
    };
    let rows: Vec<(usize, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(a, m, c)| {
            let span = (c - a) as f64;
            let weights = [(c - m) as f64 / span, (m - a) as f64 / span];
            let kernel = kernel.as_ref().expect("built when jobs exist");
            let bary = barycenter_on_grid(
                kernel,
                &[matrix.local_row(a), matrix.local_row(c)],
                &weights,
                cfg,
            )?;
            Ok((m, bary.probs))
        })
        .collect::<Result<_>>()?;
    for (m, row) in rows {
        out.set_local_row(m, &row, 0)?;
    }
    let head = matrix.local_row(first).to_vec();
    for r in 0..first {
        out.set_local_row(r, &head, 0)?;
    }
    let tail = matrix.local_row(last).to_vec();
    for r in last + 1..matrix.size() {
        out.set_local_row(r, &tail, 0)?;
    }
    Ok(out)
}

/// `Q` as diagonal blocks `P^(i,i)`, optional cross blocks `P^(i,j)` and
/// mixing weights `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockKernel {
    precision: Precision,
    band: Band,
    diagonal: Vec<PartialTransitionMatrix>,
    cross: Vec<((usize, usize), PartialTransitionMatrix)>,
    lambda: Vec<Vec<f64>>,
}

/// Builds `Q` from fully filled diagonal blocks; `λ` defaults to identity.
pub fn assemble(
    blocks: Vec<PartialTransitionMatrix>,
    lambda: Option<Vec<Vec<f64>>>,
) -> Result<BlockKernel> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::DimensionMismatch("no blocks".into()))?;
    let (precision, band) = (first.precision, first.band);
    let d = blocks.len();
    for (i, b) in blocks.iter().enumerate() {
        if b.precision != precision || b.band != band {
            return Err(Error::DimensionMismatch(format!("block {i} has a different precision or band")));
        }
        if !b.is_fully_filled() {
            return Err(Error::InvalidArgument(format!("block {i} has unfilled rows")));
        }
    }
    let lambda = lambda.unwrap_or_else(|| {
        (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    });
    if lambda.len() != d || lambda.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch(format!("λ must be {d} x {d}")));
    }
    for (i, row) in lambda.iter().enumerate() {
        check_row(row).map_err(|e| Error::InvalidArgument(format!("λ row {i}: {e}")))?;
    }
    Ok(BlockKernel {
        precision,
        band,
        diagonal: blocks,
        cross: Vec::new(),
        lambda,
    })
}

impl BlockKernel {
    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn band(&self) -> Band {
        self.band
    }

    /// Number of parameters `d`.
    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn lambda(&self) -> &[Vec<f64>] {
        &self.lambda
    }

    pub fn diagonal(&self) -> &[PartialTransitionMatrix] {
        &self.diagonal
    }

    pub fn is_diagonal(&self) -> bool {
        self.lambda
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &w)| i == j || w == 0.0))
    }

    /// Adds `P^(i,j)`: rows index states of parameter `j`, columns states of `i`.
    pub fn with_cross_block(mut self, i: usize, j: usize, block: PartialTransitionMatrix) -> Result<Self> {
        if i >= self.dim() || j >= self.dim() || i == j {
            return Err(Error::InvalidArgument(format!("({i}, {j}) is not an off-diagonal block")));
        }
        if block.precision != self.precision || block.band != self.band || !block.is_fully_filled() {
            return Err(Error::DimensionMismatch(format!("cross block ({i}, {j}) does not fit")));
        }
        self.cross.retain(|(key, _)| *key != (i, j));
        self.cross.push(((i, j), block));
        Ok(self)
    }

    pub fn cross_blocks(&self) -> &[((usize, usize), PartialTransitionMatrix)] {
        &self.cross
    }

    /// `P^(i,j)`, if present.
    pub fn block(&self, i: usize, j: usize) -> Option<&PartialTransitionMatrix> {
        if i == j {
            self.diagonal.get(i)
        } else {
            self.cross.iter().find(|(key, _)| *key == (i, j)).map(|(_, b)| b)
        }
    }

    pub(crate) fn from_parts(
        diagonal: Vec<PartialTransitionMatrix>,
        cross: Vec<((usize, usize), PartialTransitionMatrix)>,
        lambda: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut kernel = assemble(diagonal, Some(lambda))?;
        for ((i, j), b) in cross {
            kernel = kernel.with_cross_block(i, j, b)?;
        }
        Ok(kernel)
    }

    /// Checks all stored blocks are row-stochastic.
    pub fn check_stochastic(&self, tol: f64) -> Result<()> {
        for b in self.diagonal.iter().chain(self.cross.iter().map(|(_, b)| b)) {
            b.check_stochastic(tol)?;
        }
        Ok(())
    }
}
