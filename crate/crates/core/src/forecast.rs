//! Running an estimated kernel as a Markov chain from new starting points.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{BlockKernel, PartialTransitionMatrix};
use crate::quantizer::{CoordinateCodec, StateDistribution, StateId};
use crate::sim::Trajectory;

pub const DEFAULT_WINDOW: usize = 100;
pub const DEFAULT_TOL_BINS: u32 = 2;

/// One simulated chain started from `initial`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub initial: Vec<f64>,
    /// Whether each coordinate of `initial` had to be clamped into range.
    pub clamped: Vec<bool>,
    /// `states[i][t]`: state of parameter `i` at step `t`.
    pub states: Vec<Vec<StateId>>,
    /// `decoded[t][i]`: raw-unit value of parameter `i` at step `t`.
    pub decoded: Vec<Vec<f64>>,
    pub seed: u64,
    pub convergence: Option<Vec<ConvergedBin>>,
}

impl ForecastRun {
    pub fn steps(&self) -> usize {
        self.decoded.len().saturating_sub(1)
    }

    /// `t,state_1,theta_1,...,state_d,theta_d`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t")?;
        for i in 1..=self.states.len() {
            write!(w, ",state_{i},theta_{i}")?;
        }
        writeln!(w)?;
        for (t, row) in self.decoded.iter().enumerate() {
            write!(w, "{t}")?;
            for (i, v) in row.iter().enumerate() {
                write!(w, ",{},{v}", self.states[i][t])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConvergedBin {
    /// Mode of the trailing window.
    pub bin: u32,
    /// At least half the window lies within `tol` bins of the mode.
    pub converged: bool,
    /// Fraction of the window within `tol` bins of the mode, in thousandths.
    pub near_mode_permille: u32,
}

fn mass_in_band(kernel: &BlockKernel, dist: &StateDistribution) -> Result<Vec<f64>> {
    let band = kernel.band();
    let probs = dist.probs();
    let outside: f64 = probs[..band.lo as usize].iter().chain(&probs[band.hi as usize + 1..]).sum();
    if outside > 0.0 {
        return Err(Error::DimensionMismatch(format!(
            "distribution puts mass {outside} outside the kernel band"
        )));
    }
    Ok(probs[band.lo as usize..=band.hi as usize].to_vec())
}

fn row_times(acc: &mut [f64], weight: f64, dist: &[f64], block: &PartialTransitionMatrix) {
    for (u, &p) in dist.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let c = weight * p;
        for (a, q) in acc.iter_mut().zip(block.local_row(u)) {
            *a += c * q;
        }
    }
}

/// One step of `Θ ← QΘ` on distributions: `next_i = Σ_j λ_ij (dist_j × P^(i,j))`.
pub fn propagate(kernel: &BlockKernel, dists: &[StateDistribution]) -> Result<Vec<StateDistribution>> {
    let d = kernel.dim();
    if dists.len() != d {
        return Err(Error::DimensionMismatch(format!("{} distributions for {d} parameters", dists.len())));
    }
    let precision = kernel.precision();
    if dists.iter().any(|x| x.precision() != precision) {
        return Err(Error::DimensionMismatch("distribution precision differs from kernel".into()));
    }
    let banded = dists.iter().map(|x| mass_in_band(kernel, x)).collect::<Result<Vec<_>>>()?;
    let band = kernel.band();
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let mut acc = vec![0.0; band.len()];
        for (j, &w) in kernel.lambda()[i].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let block = kernel
                .block(i, j)
                .ok_or_else(|| Error::InvalidArgument(format!("λ[{i}][{j}] > 0 but block P^({i},{j}) is missing")))?;
            row_times(&mut acc, w, &banded[j], block);
        }
        let mut full = vec![0.0; precision.num_states()];
        full[band.lo as usize..=band.hi as usize].copy_from_slice(&acc);
        out.push(StateDistribution::from_weights(full, precision)?);
    }
    Ok(out)
}

fn sample_row<R: Rng>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (v, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = v;
            if u < acc {
                return v;
            }
        }
    }
    last
}

/// Samples `steps` transitions from `θ0` and decodes them to raw units.
///
/// Coordinates of `θ0` outside a codec's source range are clamped (reported in
/// [`ForecastRun::clamped`]). Under a diagonal `λ` each parameter evolves
/// independently; otherwise parameter `i` first picks a source parameter `j`
/// with probability `λ_ij` and then moves along row `s_j` of `P^(i,j)`.
pub fn sample_trajectory(
    kernel: &BlockKernel,
    theta0: &[f64],
    steps: usize,
    seed: u64,
    codecs: &[CoordinateCodec],
) -> Result<ForecastRun> {
    let d = kernel.dim();
    if theta0.len() != d || codecs.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "kernel has {d} parameters, θ0 has {}, {} codecs",
            theta0.len(),
            codecs.len()
        )));
    }
    let band = kernel.band();
    let mut clamped = Vec::with_capacity(d);
    let mut current = Vec::with_capacity(d);
    for (x, codec) in theta0.iter().zip(codecs) {
        if codec.precision != kernel.precision() {
            return Err(Error::DimensionMismatch("codec precision differs from kernel".into()));
        }
        if !x.is_finite() {
            return Err(Error::OutOfRange {
                value: *x,
                index: i64::MAX,
                max: band.hi,
            });
        }
        let (c, moved) = codec.map.clamp_source(*x);
        clamped.push(moved);
        let s = codec.encode(c)?;
        if !band.contains(s.index()) {
            return Err(Error::OutOfRange {
                value: *x,
                index: s.index() as i64,
                max: band.hi,
            });
        }
        current.push(s);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diagonal = kernel.is_diagonal();
    let mut states: Vec<Vec<StateId>> = current.iter().map(|s| vec![*s]).collect();
    let mut next = current.clone();
    for _ in 0..steps {
        for i in 0..d {
            let j = if diagonal { i } else { sample_row(&kernel.lambda()[i], &mut rng) };
            let block = kernel
                .block(i, j)
                .ok_or_else(|| Error::InvalidArgument(format!("block P^({i},{j}) is missing")))?;
            let row = block.local_row((current[j].index() - band.lo) as usize);
            let v = sample_row(row, &mut rng);
            next[i] = StateId::new(band.lo + v as u32, kernel.precision())?;
        }
        current.copy_from_slice(&next);
        for (traj, s) in states.iter_mut().zip(&current) {
            traj.push(*s);
        }
    }
    let decoded = (0..=steps)
        .map(|t| (0..d).map(|i| codecs[i].decode(states[i][t])).collect())
        .collect();
    Ok(ForecastRun {
        initial: theta0.to_vec(),
        clamped,
        states,
        decoded,
        seed,
        convergence: None,
    })
}

/// Mode of the last `window` states, with a concentration check.
pub fn converged_bin(states: &[StateId], window: usize, tol: u32) -> Result<ConvergedBin> {
    if window == 0 || states.len() < window + 1 {
        return Err(Error::InvalidArgument(format!(
            "window {window} needs at least {} states, have {}",
            window + 1,
            states.len()
        )));
    }
    let tail = &states[states.len() - window..];
    let mut counts = std::collections::BTreeMap::new();
    for s in tail {
        *counts.entry(s.index()).or_insert(0usize) += 1;
    }
    let (&mode, _) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .expect("window is nonempty");
    let near = tail.iter().filter(|s| s.index().abs_diff(mode) <= tol).count();
    Ok(ConvergedBin {
        bin: mode,
        converged: 2 * near >= window,
        near_mode_permille: (near * 1000 / window) as u32,
    })
}

/// Per-parameter converged bins of a forecast run.
pub fn detect_convergence(run: &ForecastRun, window: usize, tol: u32) -> Result<Vec<ConvergedBin>> {
    run.states.iter().map(|s| converged_bin(s, window, tol)).collect()
}

/// Encodes an SGD trajectory and finds its converged bins.
pub fn detect_trajectory_convergence(
    traj: &Trajectory,
    codecs: &[CoordinateCodec],
    window: usize,
    tol: u32,
) -> Result<Vec<ConvergedBin>> {
    if traj.dim() != codecs.len() {
        return Err(Error::DimensionMismatch("one codec per coordinate required".into()));
    }
    codecs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let states = traj
                .states
                .iter()
                .map(|s| c.encode(s[i]))
                .collect::<Result<Vec<_>>>()?;
            converged_bin(&states, window, tol)
        })
        .collect()
}

/// A minimum reached by a reference SGD run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceMinimum {
    pub bins: Vec<u32>,
    /// Decoded raw-unit location of the bins.
    pub point: Vec<f64>,
}

impl ReferenceMinimum {
    pub fn from_trajectory(
        traj: &Trajectory,
        codecs: &[CoordinateCodec],
        window: usize,
        tol: u32,
    ) -> Result<Self> {
        let bins = detect_trajectory_convergence(traj, codecs, window, tol)?;
        if let Some(i) = bins.iter().position(|b| !b.converged) {
            return Err(Error::InvalidArgument(format!(
                "reference run did not converge in coordinate {}",
                i + 1
            )));
        }
        Self::from_bins(bins.iter().map(|b| b.bin).collect(), codecs)
    }

    pub fn from_bins(bins: Vec<u32>, codecs: &[CoordinateCodec]) -> Result<Self> {
        let point = bins
            .iter()
            .zip(codecs)
            .map(|(&b, c)| Ok(c.decode(StateId::new(b, c.precision)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bins, point })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunComparison {
    pub initial: Vec<f64>,
    pub bins: Vec<u32>,
    pub converged: bool,
    pub nearest_reference: usize,
    pub distance: f64,
    pub bin_offsets: Vec<i64>,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub runs: Vec<RunComparison>,
    pub successes: usize,
    pub success_fraction: f64,
}

/// Matches each forecast to its nearest reference minimum (Euclidean, raw
/// units). A run succeeds when every coordinate converged and sits within
/// `tol` bins of that minimum.
pub fn compare_to_sgd(
    runs: &[ForecastRun],
    references: &[ReferenceMinimum],
    codecs: &[CoordinateCodec],
    window: usize,
    tol: u32,
) -> Result<ComparisonReport> {
    if references.is_empty() {
        return Err(Error::InvalidArgument("no reference minima".into()));
    }
    let mut out = Vec::with_capacity(runs.len());
    for run in runs {
        let conv = match &run.convergence {
            Some(c) => c.clone(),
            None => detect_convergence(run, window, tol)?,
        };
        let bins: Vec<u32> = conv.iter().map(|c| c.bin).collect();
        let point = ReferenceMinimum::from_bins(bins.clone(), codecs)?.point;
        let (nearest, distance) = references
            .iter()
            .enumerate()
            .map(|(r, m)| {
                let d2: f64 = m.point.iter().zip(&point).map(|(a, b)| (a - b).powi(2)).sum();
                (r, d2.sqrt())
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("references nonempty");
        let offsets: Vec<i64> = bins
            .iter()
            .zip(&references[nearest].bins)
            .map(|(&a, &b)| a as i64 - b as i64)
            .collect();
        let converged = conv.iter().all(|c| c.converged);
        let matched = converged && offsets.iter().all(|o| o.unsigned_abs() <= tol as u64);
        out.push(RunComparison {
            initial: run.initial.clone(),
            bins,
            converged,
            nearest_reference: nearest,
            distance,
            bin_offsets: offsets,
            matched,
        });
    }
    let successes = out.iter().filter(|r| r.matched).count();
    let success_fraction = if out.is_empty() { 0.0 } else { successes as f64 / out.len() as f64 };
    Ok(ComparisonReport {
        runs: out,
        successes,
        success_fraction,
    })
}
