//! End-to-end experiment recipes driven by [`ExperimentConfig`].

mod config;
mod output;

pub use config::{
    ExperimentConfig, ExperimentKind, ForecastConfig, KernelSource, ObjectiveConfig, ProviderConfig, ProviderKind,
    QuantizerConfig, RegimeConfig, ScalingConfig, SgdConfig, SinkhornSection,
};
pub use output::{write_estimate, write_forecast, write_regime, write_scaling, write_training, CONFIG_HASH_PREFIX};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forecast::{compare_to_sgd, detect_convergence, sample_trajectory, ComparisonReport, ForecastRun, ReferenceMinimum};
use crate::kernel::{assemble, estimate_rows_into, impute_missing_rows, BlockKernel, PartialTransitionMatrix, STOCHASTIC_TOL};
use crate::provider::{hierarchy_pdf, make_empirical, make_oracle, ProviderBinding, RemoteProvider};
use crate::quantizer::{serialize, CoordinateCodec, Precision, StateId};
use crate::scaling::{
    empirical_factory, icl_scaling_experiment, mixing_bound_check, oracle_factory, ProviderFactory, ScalingCurve,
    TwoStateChain,
};
use crate::sim::{make_linreg, make_sine, run_sgd, Objective, Trajectory};

fn codec_for(series: &[f64], precision: Precision, target: [f64; 2]) -> Result<CoordinateCodec> {
    match CoordinateCodec::fit(series, precision, target[0], target[1]) {
        Err(Error::DegenerateSeries(_)) => {
            // a constant coordinate gets a unit-wide range centered on it
            let v = series[0];
            CoordinateCodec::fit(&[v - 0.5, v + 0.5], precision, target[0], target[1])
        }
        other => other,
    }
}

/// One codec per coordinate, fit on the values of all runs together.
pub fn fit_codecs(trajs: &[Trajectory], precision: Precision, target: [f64; 2]) -> Result<Vec<CoordinateCodec>> {
    let d = trajs.first().ok_or(Error::EmptyTrajectory)?.dim();
    (0..d)
        .map(|i| {
            let values: Vec<f64> = trajs.iter().flat_map(|t| t.coordinate(i)).collect();
            codec_for(&values, precision, target)
        })
        .collect()
}

/// Encoded sequences of coordinate `i`, one per run.
pub fn encode_coordinate(trajs: &[Trajectory], codec: &CoordinateCodec, i: usize) -> Result<Vec<Vec<StateId>>> {
    trajs
        .iter()
        .map(|t| t.coordinate(i).iter().map(|&v| codec.encode(v)).collect())
        .collect()
}

/// Unsmoothed transition frequencies of the sequences; states never left
/// get a self-loop.
pub fn frequency_rows(seqs: &[Vec<StateId>], precision: Precision) -> Vec<Vec<f64>> {
    let n = precision.num_states();
    let mut rows = vec![vec![0.0; n]; n];
    for seq in seqs {
        for w in seq.windows(2) {
            rows[w[0].index() as usize][w[1].index() as usize] += 1.0;
        }
    }
    for (s, row) in rows.iter_mut().enumerate() {
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            row[s] = 1.0;
        } else {
            row.iter_mut().for_each(|x| *x /= total);
        }
    }
    rows
}

/// Provider for one coordinate, trained on (or built from) its sequences.
pub fn build_provider(cfg: &ProviderConfig, seqs: &[Vec<StateId>], precision: Precision) -> Result<ProviderBinding> {
    match cfg.kind {
        ProviderKind::Oracle => make_oracle(frequency_rows(seqs, precision), precision),
        ProviderKind::Empirical => make_empirical(
            seqs,
            precision,
            cfg.order.unwrap_or(precision.digits()),
            cfg.smoothing,
        ),
        ProviderKind::Remote => Ok(ProviderBinding::Remote(RemoteProvider::new(cfg.remote_config()?)?)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSummary {
    pub coordinate: usize,
    pub visited_states: usize,
    pub band_states: usize,
}

/// Estimates and imputes one band-restricted block per coordinate.
pub fn estimate_kernel(
    cfg: &ExperimentConfig,
    trajs: &[Trajectory],
    codecs: &[CoordinateCodec],
) -> Result<(BlockKernel, Vec<BlockSummary>)> {
    let precision = cfg.precision()?;
    let sinkhorn = cfg.sinkhorn.resolve(precision);
    let mut blocks = Vec::with_capacity(codecs.len());
    let mut summaries = Vec::with_capacity(codecs.len());
    for (i, codec) in codecs.iter().enumerate() {
        let seqs = encode_coordinate(trajs, codec, i)?;
        let provider = build_provider(&cfg.provider, &seqs, precision)?;
        let empty = PartialTransitionMatrix::with_band(precision, codec.band()?);
        let partial = estimate_rows_into(empty, &seqs, &provider, cfg.provider.budget)?;
        summaries.push(BlockSummary {
            coordinate: i,
            visited_states: partial.filled_states().len(),
            band_states: partial.size(),
        });
        let full = impute_missing_rows(&partial, &sinkhorn)?;
        full.check_stochastic(STOCHASTIC_TOL)?;
        blocks.push(full);
    }
    let kernel = assemble(blocks, None)?;
    kernel.check_stochastic(STOCHASTIC_TOL)?;
    Ok((kernel, summaries))
}

/// Identity blocks over each codec's band.
pub fn identity_kernel(precision: Precision, codecs: &[CoordinateCodec]) -> Result<BlockKernel> {
    let blocks = codecs
        .iter()
        .map(|c| {
            let band = c.band()?;
            let rows: Vec<Vec<f64>> = (0..band.len())
                .map(|r| {
                    let mut row = vec![0.0; band.len()];
                    row[r] = 1.0;
                    row
                })
                .collect();
            PartialTransitionMatrix::from_rows(precision, band, &rows)
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(blocks, None)
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn objective_for(cfg: &ExperimentConfig) -> Result<Objective> {
    let o = &cfg.objective;
    match cfg.kind {
        ExperimentKind::NonconvexForecast => make_sine(o.samples, cfg.data_seed(), o.noise),
        _ => make_linreg(o.samples, o.dim, cfg.data_seed(), o.noise),
    }
}

fn default_inits(kind: ExperimentKind, dim: usize) -> Vec<Vec<f64>> {
    match kind {
        ExperimentKind::NonconvexForecast => vec![vec![0.5, 0.3], vec![2.8, 1.8]],
        _ => vec![(0..dim).map(|i| if i % 2 == 0 { 3.0 } else { -3.0 }).collect()],
    }
}

/// Runs the configured SGD runs on the configured objective.
pub fn run_training(cfg: &ExperimentConfig) -> Result<(Objective, Vec<Trajectory>)> {
    let obj = objective_for(cfg)?;
    let inits = if cfg.sgd.inits.is_empty() {
        default_inits(cfg.kind, obj.dim())
    } else {
        cfg.sgd.inits.clone()
    };
    let m = cfg.sgd.batch_size.min(obj.num_samples());
    let trajs = inits
        .iter()
        .enumerate()
        .map(|(r, init)| {
            if init.len() != obj.dim() {
                return Err(Error::Config(format!(
                    "sgd.inits[{r}] has {} entries, the objective has {} parameters",
                    init.len(),
                    obj.dim()
                )));
            }
            run_sgd(&obj, init, cfg.sgd.step_size, m, cfg.sgd.steps, cfg.run_seed(r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((obj, trajs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateVerdict {
    pub coordinate: usize,
    pub max_mass: f64,
    pub dirac_like: bool,
    /// Mean and variance of the predicted next state, in raw units.
    pub mean: f64,
    pub variance: f64,
    /// Mean and variance of the second half of the SGD run, in raw units.
    pub sgd_tail_mean: f64,
    pub sgd_tail_variance: f64,
    pub final_state: u32,
    #[serde(skip)]
    pub pdf: Vec<f64>,
    #[serde(skip)]
    pub codec: CoordinateCodec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeCase {
    pub samples: usize,
    pub dim: usize,
    pub coordinates: Vec<CoordinateVerdict>,
    /// Every coordinate is Dirac-like.
    pub dirac_like: bool,
    /// No coordinate is Dirac-like.
    pub diffuse: bool,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub config_hash: String,
    pub provider: String,
    pub over: RegimeCase,
    pub under: RegimeCase,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

fn probe_case(cfg: &ExperimentConfig, samples: usize, dim: usize, stream: u64) -> Result<RegimeCase> {
    let precision = cfg.precision()?;
    let obj = make_linreg(samples, dim, mix_seed(cfg.data_seed(), stream), cfg.objective.noise)?;
    let init = match cfg.sgd.inits.first() {
        Some(i) if i.len() == dim => i.clone(),
        _ => vec![0.0; dim],
    };
    let m = cfg.sgd.batch_size.min(samples);
    let traj = run_sgd(&obj, &init, cfg.sgd.step_size, m, cfg.sgd.steps, mix_seed(cfg.run_seed(0), stream))?;
    let single = std::slice::from_ref(&traj);
    let codecs = fit_codecs(single, precision, cfg.quantizer.target)?;
    let mut coordinates = Vec::with_capacity(dim);
    for (i, codec) in codecs.iter().enumerate() {
        let seqs = encode_coordinate(single, codec, i)?;
        let provider = build_provider(&cfg.provider, &seqs, precision)?;
        let mut context = serialize(&seqs[0]);
        context.push(',');
        let pdf = hierarchy_pdf(&provider, &context, precision, cfg.provider.budget)?.dist;
        let decoded: Vec<f64> = (0..precision.num_states() as u32)
            .map(|s| codec.decode(StateId::new(s, precision).expect("in range")))
            .collect();
        let mean: f64 = pdf.probs().iter().zip(&decoded).map(|(p, x)| p * x).sum();
        let variance: f64 = pdf.probs().iter().zip(&decoded).map(|(p, x)| p * (x - mean).powi(2)).sum();
        let series = traj.coordinate(i);
        let (tail_mean, tail_var) = mean_var(&series[series.len() / 2..]);
        coordinates.push(CoordinateVerdict {
            coordinate: i,
            max_mass: pdf.max_mass(),
            dirac_like: pdf.max_mass() > cfg.regime.dirac_threshold,
            mean,
            variance,
            sgd_tail_mean: tail_mean,
            sgd_tail_variance: tail_var,
            final_state: seqs[0].last().expect("nonempty").index(),
            pdf: pdf.into_probs(),
            codec: *codec,
        });
    }
    Ok(RegimeCase {
        samples,
        dim,
        dirac_like: coordinates.iter().all(|c| c.dirac_like),
        diffuse: coordinates.iter().all(|c| !c.dirac_like),
        coordinates,
        trajectory: traj,
    })
}

/// SGD in an over- and an underparametrized regression; classifies the
/// predicted next-state distribution after the full run.
pub fn run_regime_probe(cfg: &ExperimentConfig) -> Result<RegimeReport> {
    cfg.validate()?;
    let r = &cfg.regime;
    Ok(RegimeReport {
        config_hash: cfg.hash(),
        provider: format!("{:?}", cfg.provider.kind).to_lowercase(),
        over: probe_case(cfg, r.over_samples, r.over_dim, 1)?,
        under: probe_case(cfg, r.under_samples, r.under_dim, 2)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastReport {
    pub config_hash: String,
    pub provider: String,
    pub kernel: KernelSource,
    pub references: Vec<ReferenceMinimum>,
    pub blocks: Vec<BlockSummary>,
    pub comparison: ComparisonReport,
    #[serde(skip)]
    pub codecs: Vec<CoordinateCodec>,
    #[serde(skip)]
    pub training: Vec<Trajectory>,
    #[serde(skip)]
    pub forecasts: Vec<ForecastRun>,
    #[serde(skip)]
    pub block_kernel: BlockKernel,
}

/// Starting points: the configured ones, or uniform draws in each codec's
/// source range.
pub fn forecast_inits(cfg: &ExperimentConfig, codecs: &[CoordinateCodec]) -> Vec<Vec<f64>> {
    if !cfg.forecast.inits.is_empty() {
        return cfg.forecast.inits.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 3));
    (0..cfg.forecast.runs)
        .map(|_| codecs.iter().map(|c| rng.gen_range(c.map.source_lo..=c.map.source_hi)).collect())
        .collect()
}

/// Distinct converged minima of the training runs.
pub fn reference_minima(
    trajs: &[Trajectory],
    codecs: &[CoordinateCodec],
    window: usize,
    tol: u32,
) -> Result<Vec<ReferenceMinimum>> {
    let mut refs: Vec<ReferenceMinimum> = Vec::new();
    for t in trajs {
        let r = ReferenceMinimum::from_trajectory(t, codecs, window, tol)?;
        if !refs.iter().any(|x| x.bins == r.bins) {
            refs.push(r);
        }
    }
    Ok(refs)
}

/// Train, estimate, forecast, compare; shared by the convex and non-convex
/// recipes.
pub fn run_forecast(cfg: &ExperimentConfig) -> Result<ForecastReport> {
    cfg.validate()?;
    let precision = cfg.precision()?;
    let (_, training) = run_training(cfg)?;
    let codecs = fit_codecs(&training, precision, cfg.quantizer.target)?;
    let fc = &cfg.forecast;
    let references = reference_minima(&training, &codecs, fc.window, fc.tol)?;
    let (kernel, blocks) = match fc.kernel {
        KernelSource::Estimated => estimate_kernel(cfg, &training, &codecs)?,
        KernelSource::Identity => (identity_kernel(precision, &codecs)?, Vec::new()),
    };
    let inits = forecast_inits(cfg, &codecs);
    let forecasts = inits
        .par_iter()
        .enumerate()
        .map(|(r, init)| {
            let mut run = sample_trajectory(&kernel, init, fc.steps, mix_seed(cfg.seed, 100 + r as u64), &codecs)?;
            run.convergence = Some(detect_convergence(&run, fc.window, fc.tol)?);
            Ok(run)
        })
        .collect::<Result<Vec<_>>>()?;
    let comparison = compare_to_sgd(&forecasts, &references, &codecs, fc.window, fc.tol)?;
    Ok(ForecastReport {
        config_hash: cfg.hash(),
        provider: format!("{:?}", cfg.provider.kind).to_lowercase(),
        kernel: fc.kernel,
        references,
        blocks,
        comparison,
        codecs,
        training,
        forecasts,
        block_kernel: kernel,
    })
}

/// One SGD run on a regression problem.
pub fn run_convex_forecast(cfg: &ExperimentConfig) -> Result<ForecastReport> {
    if cfg.kind != ExperimentKind::ConvexForecast {
        return Err(Error::Config("config kind is not convex-forecast".into()));
    }
    run_forecast(cfg)
}

/// Several SGD runs on the sine model, merged into one corpus.
pub fn run_nonconvex_forecast(cfg: &ExperimentConfig) -> Result<ForecastReport> {
    if cfg.kind != ExperimentKind::NonconvexForecast {
        return Err(Error::Config("config kind is not nonconvex-forecast".into()));
    }
    run_forecast(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingRow {
    pub p: f64,
    pub q: f64,
    pub rho: f64,
    pub rate: f64,
    pub points_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub config_hash: String,
    pub provider: String,
    pub curves: Vec<ScalingCurve>,
    pub mixing: Vec<MixingRow>,
}

/// The configured two-state chains: symmetric chains per gap, then the
/// explicit `(p, q)` pairs.
pub fn scaling_chains(cfg: &ScalingConfig) -> Result<Vec<TwoStateChain>> {
    let mut chains = cfg.gaps.iter().map(|&g| TwoStateChain::with_gap(g)).collect::<Result<Vec<_>>>()?;
    for [p, q] in &cfg.chains {
        chains.push(TwoStateChain::new(*p, *q)?);
    }
    if chains.is_empty() {
        return Err(Error::Config("scaling needs at least one chain".into()));
    }
    Ok(chains)
}

/// Estimation error against context length plus the mixing-rate check.
pub fn run_scaling(cfg: &ExperimentConfig) -> Result<ScalingReport> {
    cfg.validate()?;
    let sc = &cfg.scaling;
    let chains = scaling_chains(sc)?;
    let factory: Box<ProviderFactory<'_>> = match cfg.provider.kind {
        ProviderKind::Oracle => oracle_factory(),
        ProviderKind::Empirical => empirical_factory(cfg.provider.smoothing),
        ProviderKind::Remote => {
            let remote = cfg.provider.remote_config()?;
            Box::new(move |_: &TwoStateChain, _: &[StateId]| {
                Ok(ProviderBinding::Remote(RemoteProvider::new(remote.clone())?))
            })
        }
    };
    let curves = icl_scaling_experiment(&chains, &*factory, &sc.lengths, sc.trials, cfg.seed, cfg.provider.budget)?;
    let mixing = chains
        .iter()
        .map(|c| {
            let fit = mixing_bound_check(c, [1.0, 0.0], sc.mixing_steps)?;
            Ok(MixingRow {
                p: c.p,
                q: c.q,
                rho: crate::scaling::spectral_gap(c),
                rate: fit.rate,
                points_used: fit.points_used,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalingReport {
        config_hash: cfg.hash(),
        provider: format!("{:?}", cfg.provider.kind).to_lowercase(),
        curves,
        mixing,
    })
}
