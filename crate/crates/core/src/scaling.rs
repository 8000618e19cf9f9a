//! Two-state chains: spectral gap, mixing, and estimation-error scaling.
//!
//! For `P = [[p, 1−p], [1−q, q]]` the spectrum is `{1, p+q−1}`, the spectral
//! gap is `ρ = 1 − |p+q−1|`, and the total variation distance to the
//! stationary law contracts by exactly `|p+q−1|` per step.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::provider::{hierarchy_pdf, make_empirical, make_oracle, ProviderBinding};
use crate::quantizer::{serialize, Precision, StateId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoStateChain {
    pub p: f64,
    pub q: f64,
}

impl TwoStateChain {
    /// Accepts `p, q ∈ [0, 1]`; the boundary cases are the periodic and
    /// reducible chains.
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidArgument(format!("p, q must lie in [0, 1], got {p}, {q}")));
        }
        Ok(Self { p, q })
    }

    /// Symmetric chain `p = q` with the given spectral gap `ρ ∈ (0, 1]`.
    pub fn with_gap(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidArgument(format!("gap must be in (0, 1], got {rho}")));
        }
        let p = 1.0 - rho / 2.0;
        Self::new(p, p)
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.p, 1.0 - self.p], [1.0 - self.q, self.q]]
    }

    /// Second eigenvalue `p + q − 1`.
    pub fn second_eigenvalue(&self) -> f64 {
        self.p + self.q - 1.0
    }

    pub fn step(&self, dist: [f64; 2]) -> [f64; 2] {
        let m = self.matrix();
        [
            dist[0] * m[0][0] + dist[1] * m[1][0],
            dist[0] * m[0][1] + dist[1] * m[1][1],
        ]
    }
}

pub fn spectral_gap(chain: &TwoStateChain) -> f64 {
    1.0 - chain.second_eigenvalue().abs()
}

/// `((1−q)/(2−p−q), (1−p)/(2−p−q))`.
pub fn stationary(chain: &TwoStateChain) -> Result<[f64; 2]> {
    if spectral_gap(chain) <= 0.0 {
        return Err(Error::PeriodicOrReducible);
    }
    let z = 2.0 - chain.p - chain.q;
    Ok([(1.0 - chain.q) / z, (1.0 - chain.p) / z])
}

/// `½ Σ |a_i − b_i|`.
pub fn tv_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} states", a.len(), b.len())));
    }
    Ok(0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// `Σ a_i ln(a_i / max(b_i, floor))`.
pub fn kl_divergence(a: &[f64], b: &[f64], floor: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} states", a.len(), b.len())));
    }
    Ok(a.iter()
        .zip(b)
        .filter(|(x, _)| **x > 0.0)
        .map(|(x, y)| x * (x / y.max(floor)).ln())
        .sum())
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination; 1 when the data have no spread.
    pub r_squared: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("line fit needs at least two paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("line fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingFit {
    /// Negated slope of `log d_TV(π_t, π)` against `t`; infinite when the
    /// chain mixes too fast to fit.
    pub rate: f64,
    /// `d_TV(π_t, π)` for `t = 0..=steps`.
    pub distances: Vec<f64>,
    pub points_used: usize,
}

/// Distances below this are excluded from the decay fit.
pub const MIXING_FLOOR: f64 = 1e-12;

/// Propagates `π0` for `steps` steps and fits the exponential TV decay.
///
/// The deviation `π_t − π` is propagated instead of `π_t` itself; since
/// `πP = π` this is the same recursion without cancellation error.
pub fn mixing_bound_check(chain: &TwoStateChain, pi0: [f64; 2], steps: usize) -> Result<MixingFit> {
    let pi = stationary(chain)?;
    if (pi0[0] + pi0[1] - 1.0).abs() > 1e-9 || pi0.iter().any(|p| *p < 0.0) {
        return Err(Error::InvalidArgument("π0 is not a distribution".into()));
    }
    let mut dev = [pi0[0] - pi[0], pi0[1] - pi[1]];
    let mut distances = Vec::with_capacity(steps + 1);
    distances.push(0.5 * (dev[0].abs() + dev[1].abs()));
    for _ in 0..steps {
        dev = chain.step(dev);
        distances.push(0.5 * (dev[0].abs() + dev[1].abs()));
    }
    let (ts, logs): (Vec<f64>, Vec<f64>) = distances
        .iter()
        .enumerate()
        .take_while(|(_, d)| **d > MIXING_FLOOR)
        .map(|(t, d)| (t as f64, d.ln()))
        .unzip();
    let rate = if ts.len() < 2 {
        f64::INFINITY
    } else {
        -fit_line(&ts, &logs)?.slope
    };
    Ok(MixingFit {
        rate,
        points_used: ts.len(),
        distances,
    })
}

/// Fitted `log e ≈ α log t + β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Errors are floored before taking logs so exact zeros fit as a flat line.
pub const LOG_ERROR_FLOOR: f64 = 1e-15;

/// Shortest context lengths are dominated by count noise and are skipped.
pub const MIN_FIT_LENGTH: usize = 10;

pub fn fit_power_law(lengths: &[usize], errors: &[f64], min_length: usize) -> Result<PowerLawFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = lengths
        .iter()
        .zip(errors)
        .filter(|(t, _)| **t >= min_length)
        .map(|(&t, &e)| ((t as f64).ln(), e.max(LOG_ERROR_FLOOR).ln()))
        .unzip();
    let fit = fit_line(&xs, &ys)?;
    Ok(PowerLawFit {
        exponent: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        points: xs.len(),
    })
}

/// Centered moving average; windows shrink at the edges.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

pub fn is_nonincreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

/// Encoding of the two chain states as single-digit in-band bins.
pub const TWO_STATE_BINS: [u32; 2] = [2, 8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub length: usize,
    pub kl: f64,
    pub tv: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingCurve {
    pub chain: TwoStateChain,
    pub rho: f64,
    pub points: Vec<ScalingPoint>,
    pub fit_kl: PowerLawFit,
    pub fit_tv: PowerLawFit,
}

impl ScalingCurve {
    pub fn tv(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.tv).collect()
    }

    pub fn kl(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.kl).collect()
    }
}

/// Builds a provider for one simulated sequence.
pub type ProviderFactory<'a> = dyn Fn(&TwoStateChain, &[StateId]) -> Result<ProviderBinding> + Sync + 'a;

fn k1() -> Precision {
    Precision::new(1).expect("valid")
}

/// Oracle over the two bins, knowing the chain exactly.
pub fn oracle_factory() -> Box<ProviderFactory<'static>> {
    Box::new(|chain: &TwoStateChain, _seq: &[StateId]| {
        let mut rows = vec![vec![0.0; 10]; 10];
        let m = chain.matrix();
        for (a, &from) in TWO_STATE_BINS.iter().enumerate() {
            for (b, &to) in TWO_STATE_BINS.iter().enumerate() {
                rows[from as usize][to as usize] = m[a][b];
            }
        }
        make_oracle(rows, k1())
    })
}

/// First-order digit model trained on the sequence itself.
pub fn empirical_factory(smoothing: f64) -> Box<ProviderFactory<'static>> {
    Box::new(move |_chain: &TwoStateChain, seq: &[StateId]| make_empirical(&[seq.to_vec()], k1(), 1, smoothing))
}

fn trial_seed(master: u64, chain: usize, length: usize, trial: usize) -> u64 {
    let mut z = master
        ^ (chain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (length as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (trial as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn simulate(chain: &TwoStateChain, length: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let pi = stationary(chain)?;
    let m = chain.matrix();
    let mut s = usize::from(rng.gen::<f64>() >= pi[0]);
    let mut out = Vec::with_capacity(length);
    out.push(s);
    while out.len() < length {
        s = usize::from(rng.gen::<f64>() >= m[s][0]);
        out.push(s);
    }
    Ok(out)
}

/// Error of the two estimated rows for one simulated sequence: `(kl, tv)`
/// averaged over both rows.
fn trial_error(
    chain: &TwoStateChain,
    factory: &ProviderFactory<'_>,
    length: usize,
    seed: u64,
    budget: usize,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq = simulate(chain, length, &mut rng)?;
    let p = k1();
    let ids: Vec<StateId> = seq
        .iter()
        .map(|&s| StateId::new(TWO_STATE_BINS[s], p))
        .collect::<Result<_>>()?;
    let provider = factory(chain, &ids)?;
    let truth = chain.matrix();
    let (mut kl, mut tv) = (0.0, 0.0);
    for (s, row) in truth.iter().enumerate() {
        // context ends at the last occurrence of s; an unseen state is
        // appended as a hypothetical final observation
        let context = match seq.iter().rposition(|&x| x == s) {
            Some(last) => format!("{},", serialize(&ids[..=last])),
            None => {
                let mut c = serialize(&ids);
                c.push(',');
                c.push_str(&StateId::new(TWO_STATE_BINS[s], p)?.digits());
                c.push(',');
                c
            }
        };
        let pdf = hierarchy_pdf(&provider, &context, p, budget)?;
        let raw = [
            pdf.dist.probs()[TWO_STATE_BINS[0] as usize],
            pdf.dist.probs()[TWO_STATE_BINS[1] as usize],
        ];
        let mass = raw[0] + raw[1];
        let est = if mass > 0.0 { [raw[0] / mass, raw[1] / mass] } else { [0.5, 0.5] };
        kl += kl_divergence(row, &est, 1e-12)?;
        tv += tv_distance(row, &est)?;
    }
    Ok((kl / 2.0, tv / 2.0))
}

/// Mean per-row estimation error against context length, one curve per chain.
pub fn icl_scaling_experiment(
    chains: &[TwoStateChain],
    factory: &ProviderFactory<'_>,
    lengths: &[usize],
    trials: usize,
    seed: u64,
    budget: usize,
) -> Result<Vec<ScalingCurve>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    if lengths.is_empty() || lengths[0] == 0 || lengths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("context lengths must be positive and increasing".into()));
    }
    chains
        .iter()
        .enumerate()
        .map(|(c, chain)| {
            let mut points = Vec::with_capacity(lengths.len());
            for &length in lengths {
                let errs = (0..trials)
                    .into_par_iter()
                    .map(|trial| trial_error(chain, factory, length, trial_seed(seed, c, length, trial), budget))
                    .collect::<Result<Vec<_>>>()?;
                let n = trials as f64;
                points.push(ScalingPoint {
                    length,
                    kl: errs.iter().map(|e| e.0).sum::<f64>() / n,
                    tv: errs.iter().map(|e| e.1).sum::<f64>() / n,
                    trials,
                });
            }
            let ts: Vec<usize> = points.iter().map(|p| p.length).collect();
            let kl: Vec<f64> = points.iter().map(|p| p.kl).collect();
            let tv: Vec<f64> = points.iter().map(|p| p.tv).collect();
            Ok(ScalingCurve {
                chain: *chain,
                rho: spectral_gap(chain),
                fit_kl: fit_power_law(&ts, &kl, MIN_FIT_LENGTH)?,
                fit_tv: fit_power_law(&ts, &tv, MIN_FIT_LENGTH)?,
                points,
            })
        })
        .collect()
}

/// `chain,rho,t,kl,tv,trials` rows.
pub fn write_curves_csv<W: Write>(curves: &[ScalingCurve], mut w: W) -> std::io::Result<()> {
    writeln!(w, "chain,rho,t,kl,tv,trials")?;
    for (c, curve) in curves.iter().enumerate() {
        for p in &curve.points {
            writeln!(w, "{c},{},{},{},{},{}", curve.rho, p.length, p.kl, p.tv, p.trials)?;
        }
    }
    Ok(())
}
