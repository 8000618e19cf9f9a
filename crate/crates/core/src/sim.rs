//! SGD and gradient Langevin dynamics on toy objectives.
//!
//! Two per-sample losses are supported:
//!
//! * linear regression, `f(x, θ) = ½(⟨x, θ⟩ − y)²`
//! * a sine fit, `f(x, θ) = ½(θ₀ sin(θ₁ x) − y)²`, which is non-convex in θ.
//!
//! All runs use a constant stepsize, so the iterates form a homogeneous
//! Markov chain.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iterates with any coordinate above this magnitude count as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let dim = inputs[0].len();
        if dim == 0 || inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::DimensionMismatch("inputs must share a nonzero dimension".into()));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    LinearRegression,
    Sine,
}

/// Empirical risk `F(θ) = (1/N) Σ f(x_i, θ)`.
#[derive(Debug, Clone)]
pub struct Objective {
    dataset: Dataset,
    kind: LossKind,
    dim: usize,
    /// Parameters used to generate the targets, when known.
    pub ground_truth: Option<Vec<f64>>,
}

impl Objective {
    pub fn new(dataset: Dataset, kind: LossKind) -> Result<Self> {
        let dim = match kind {
            LossKind::LinearRegression => dataset.input_dim(),
            LossKind::Sine => {
                if dataset.input_dim() != 1 {
                    return Err(Error::DimensionMismatch("sine objective needs scalar inputs".into()));
                }
                2
            }
        };
        Ok(Self {
            dataset,
            kind,
            dim,
            ground_truth: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_samples(&self) -> usize {
        self.dataset.len()
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    fn residual(&self, i: usize, theta: &[f64]) -> f64 {
        let x = &self.dataset.inputs[i];
        let y = self.dataset.targets[i];
        match self.kind {
            LossKind::LinearRegression => dot(x, theta) - y,
            LossKind::Sine => theta[0] * (theta[1] * x[0]).sin() - y,
        }
    }

    pub fn sample_loss(&self, i: usize, theta: &[f64]) -> f64 {
        0.5 * self.residual(i, theta).powi(2)
    }

    /// Adds `scale · ∇f(x_i, θ)` into `out`.
    pub fn add_sample_grad(&self, i: usize, theta: &[f64], scale: f64, out: &mut [f64]) {
        let r = self.residual(i, theta) * scale;
        let x = &self.dataset.inputs[i];
        match self.kind {
            LossKind::LinearRegression => {
                for (o, xj) in out.iter_mut().zip(x) {
                    *o += r * xj;
                }
            }
            LossKind::Sine => {
                let (s, c) = (theta[1] * x[0]).sin_cos();
                out[0] += r * s;
                out[1] += r * theta[0] * x[0] * c;
            }
        }
    }

    pub fn sample_grad(&self, i: usize, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.add_sample_grad(i, theta, 1.0, &mut g);
        g
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let n = self.num_samples();
        (0..n).map(|i| self.sample_loss(i, theta)).sum::<f64>() / n as f64
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.num_samples();
        let mut g = vec![0.0; self.dim];
        for i in 0..n {
            self.add_sample_grad(i, theta, 1.0 / n as f64, &mut g);
        }
        g
    }

    pub fn batch_grad(&self, batch: &[usize], theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        let w = 1.0 / batch.len() as f64;
        for &i in batch {
            self.add_sample_grad(i, theta, w, &mut g);
        }
        g
    }

    /// Realized minibatch noise `ξ(θ) = ∇F(θ) − ∇f̃(θ)`.
    pub fn batch_noise(&self, batch: &[usize], theta: &[f64]) -> Vec<f64> {
        let full = self.grad(theta);
        let b = self.batch_grad(batch, theta);
        full.iter().zip(&b).map(|(f, b)| f - b).collect()
    }

    /// Empirical covariance of the per-sample gradients at `θ` (1/N normalization).
    pub fn gradient_covariance(&self, theta: &[f64]) -> DMatrix<f64> {
        let n = self.num_samples();
        let mean = DVector::from_vec(self.grad(theta));
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for i in 0..n {
            let g = DVector::from_vec(self.sample_grad(i, theta)) - &mean;
            cov += &g * g.transpose();
        }
        cov / n as f64
    }

    /// Symmetric PSD square root of the gradient covariance, with negative
    /// eigenvalues clamped to zero.
    pub fn noise_sqrt(&self, theta: &[f64]) -> DMatrix<f64> {
        psd_sqrt(self.gradient_covariance(theta))
    }
}

pub(crate) fn psd_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear regression with standard-normal inputs and `y = ⟨x, θ_true⟩ + noise`.
pub fn make_linreg(n: usize, d: usize, seed: u64, label_noise: f64) -> Result<Objective> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("linreg needs N >= 1 and d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta_true: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let eps: f64 = rng.sample(StandardNormal);
        targets.push(dot(&x, &theta_true) + label_noise * eps);
        inputs.push(x);
    }
    let mut obj = Objective::new(Dataset::new(inputs, targets)?, LossKind::LinearRegression)?;
    obj.ground_truth = Some(theta_true);
    Ok(obj)
}

/// Sine fit with inputs uniform on `[−π, π]` and `y = a sin(b x) + noise`,
/// where `a ∈ [1, 2]` and `b ∈ [0.5, 1.5]` are drawn from the seed.
pub fn make_sine(n: usize, seed: u64, label_noise: f64) -> Result<Objective> {
    if n == 0 {
        return Err(Error::InvalidArgument("sine objective needs N >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rng.gen_range(1.0..2.0);
    let b = rng.gen_range(0.5..1.5);
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.gen_range(-PI..=PI);
        let eps: f64 = rng.sample(StandardNormal);
        targets.push(a * (b * x).sin() + label_noise * eps);
        inputs.push(vec![x]);
    }
    let mut obj = Objective::new(Dataset::new(inputs, targets)?, LossKind::Sine)?;
    obj.ground_truth = Some(vec![a, b]);
    Ok(obj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Sgd,
    Gld,
    Gd,
    KernelSim,
}

/// Iterates `θ^0..θ^T` of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub step_size: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub kind: TrajectoryKind,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Values of coordinate `i` over time.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }

    /// One row per step: `t,theta_1,...,theta_d`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t")?;
        for i in 1..=self.dim() {
            write!(w, ",theta_{i}")?;
        }
        writeln!(w)?;
        for (t, s) in self.states.iter().enumerate() {
            write!(w, "{t}")?;
            for v in s {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn check_start(obj: &Objective, theta0: &[f64], gamma: f64) -> Result<()> {
    if theta0.len() != obj.dim() {
        return Err(Error::DimensionMismatch(format!(
            "θ0 has {} entries, objective has dimension {}",
            theta0.len(),
            obj.dim()
        )));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("stepsize must be finite and >= 0, got {gamma}")));
    }
    Ok(())
}

fn guard(theta: &[f64], step: usize) -> Result<()> {
    if theta.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_BOUND) {
        Ok(())
    } else {
        Err(Error::Divergence { step })
    }
}

/// Minibatch SGD with constant stepsize. Each step draws `m` distinct indices
/// uniformly; steps are independent.
pub fn run_sgd(
    obj: &Objective,
    theta0: &[f64],
    gamma: f64,
    m: usize,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    check_start(obj, theta0, gamma)?;
    let n = obj.num_samples();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("batch size must be in 1..={n}, got {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(steps + 1);
    let mut theta = theta0.to_vec();
    states.push(theta.clone());
    let mut batch = Vec::with_capacity(m);
    for t in 0..steps {
        batch.clear();
        if m == n {
            batch.extend(0..n);
        } else {
            batch.extend(index::sample(&mut rng, n, m).iter());
        }
        let g = obj.batch_grad(&batch, &theta);
        for (th, gi) in theta.iter_mut().zip(&g) {
            *th -= gamma * gi;
        }
        guard(&theta, t + 1)?;
        states.push(theta.clone());
    }
    Ok(Trajectory {
        states,
        step_size: gamma,
        batch_size: m,
        seed,
        kind: TrajectoryKind::Sgd,
    })
}

/// Full-batch gradient descent.
pub fn run_gd(obj: &Objective, theta0: &[f64], gamma: f64, steps: usize) -> Result<Trajectory> {
    let mut traj = run_gld_scaled(obj, theta0, gamma, steps, 0, 0.0)?;
    traj.kind = TrajectoryKind::Gd;
    traj.batch_size = obj.num_samples();
    Ok(traj)
}

/// Gradient Langevin dynamics `θ ← θ − γ∇F(θ) + γ C(θ) Z` with
/// `C(θ)` the square root of the per-sample gradient covariance.
pub fn run_gld(obj: &Objective, theta0: &[f64], gamma: f64, steps: usize, seed: u64) -> Result<Trajectory> {
    run_gld_scaled(obj, theta0, gamma, steps, seed, 1.0)
}

/// [`run_gld`] with the noise matrix multiplied by `noise_scale`.
pub fn run_gld_scaled(
    obj: &Objective,
    theta0: &[f64],
    gamma: f64,
    steps: usize,
    seed: u64,
    noise_scale: f64,
) -> Result<Trajectory> {
    check_start(obj, theta0, gamma)?;
    let d = obj.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(steps + 1);
    let mut theta = theta0.to_vec();
    states.push(theta.clone());
    for t in 0..steps {
        let g = obj.grad(&theta);
        let noise = if noise_scale != 0.0 {
            let c = obj.noise_sqrt(&theta);
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            (c * z) * noise_scale
        } else {
            DVector::zeros(d)
        };
        for j in 0..d {
            theta[j] += -gamma * g[j] + gamma * noise[j];
        }
        guard(&theta, t + 1)?;
        states.push(theta.clone());
    }
    Ok(Trajectory {
        states,
        step_size: gamma,
        batch_size: obj.num_samples(),
        seed,
        kind: TrajectoryKind::Gld,
    })
}
