//! Next-digit distribution providers.
//!
//! A provider answers one question: given a serialized digit context, what is
//! the distribution of the next digit? Three bindings exist:
//!
//! * [`OracleProvider`] reads exact digit conditionals off a known transition
//!   matrix, for testing and ground-truth studies.
//! * [`EmpiricalProvider`] is a Laplace-smoothed digit n-gram trained on the
//!   observed state sequences; it makes the pipeline runnable offline.
//! * [`RemoteProvider`] posts the context to an inference server exposing
//!   next-token logits.
//!
//! [`hierarchy_pdf`] turns per-digit answers into a distribution over all
//! `10^k` next states.

mod empirical;
mod hierarchy;
mod oracle;
mod remote;

pub use empirical::EmpiricalProvider;
pub use hierarchy::{hierarchy_pdf, query_bound, DigitPdf, DEFAULT_BRANCH_BUDGET};
pub use oracle::OracleProvider;
pub use remote::{RemoteConfig, RemoteMode, RemoteProvider, ENDPOINT_ENV};

use crate::error::{Error, Result};
use crate::quantizer::{parse_state, Precision, StateId};

/// Distribution over the ten digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DigitDistribution {
    probs: [f64; 10],
    temperature: f64,
}

impl DigitDistribution {
    pub fn new(probs: [f64; 10], temperature: f64) -> Result<Self> {
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument("digit probabilities must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("digit probabilities sum to {total}")));
        }
        Ok(Self { probs, temperature })
    }

    pub fn uniform() -> Self {
        Self {
            probs: [0.1; 10],
            temperature: 1.0,
        }
    }

    /// Normalizes nonnegative weights; all-zero weights give the uniform law.
    pub(crate) fn from_weights(weights: [f64; 10]) -> Self {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Self::uniform();
        }
        Self {
            probs: weights.map(|w| w / total),
            temperature: 1.0,
        }
    }

    /// Tempered softmax over ten logits.
    pub fn softmax(logits: &[f64; 10], temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("non-finite logit".into()));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps = logits.map(|l| ((l - max) / temperature).exp());
        let total: f64 = exps.iter().sum();
        Ok(Self {
            probs: exps.map(|e| e / total),
            temperature,
        })
    }

    pub fn probs(&self) -> &[f64; 10] {
        &self.probs
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Anything that can score the next digit of a context.
///
/// Queries must be pure functions of the provider's configuration and the
/// context string, so providers can be shared across threads.
pub trait DigitProvider: Send + Sync {
    fn next_digit_probs(&self, context: &str) -> Result<DigitDistribution>;
}

/// The active provider kind together with its configuration.
#[derive(Debug)]
pub enum ProviderBinding {
    Oracle(OracleProvider),
    Empirical(EmpiricalProvider),
    Remote(RemoteProvider),
}

impl ProviderBinding {
    pub fn kind(&self) -> &'static str {
        match self {
            ProviderBinding::Oracle(_) => "oracle",
            ProviderBinding::Empirical(_) => "empirical",
            ProviderBinding::Remote(_) => "remote",
        }
    }
}

impl DigitProvider for ProviderBinding {
    fn next_digit_probs(&self, context: &str) -> Result<DigitDistribution> {
        match self {
            ProviderBinding::Oracle(p) => p.next_digit_probs(context),
            ProviderBinding::Empirical(p) => p.next_digit_probs(context),
            ProviderBinding::Remote(p) => p.next_digit_probs(context),
        }
    }
}

/// Oracle binding over a row-stochastic `10^k × 10^k` matrix (rows may be all zero).
pub fn make_oracle(rows: Vec<Vec<f64>>, precision: Precision) -> Result<ProviderBinding> {
    Ok(ProviderBinding::Oracle(OracleProvider::new(rows, precision)?))
}

/// Empirical n-gram binding trained on encoded trajectories.
pub fn make_empirical(
    trajectories: &[Vec<StateId>],
    precision: Precision,
    order: usize,
    smoothing: f64,
) -> Result<ProviderBinding> {
    Ok(ProviderBinding::Empirical(EmpiricalProvider::train(
        trajectories,
        precision,
        order,
        smoothing,
    )?))
}

/// A context split at its last comma.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ContextTail<'a> {
    /// Everything before the state currently being emitted, commas included.
    pub head: &'a str,
    /// Digits of the state currently being emitted (fewer than k).
    pub partial: &'a str,
}

impl<'a> ContextTail<'a> {
    /// Validates the context shape: complete `k`-digit fields separated by
    /// commas, then an optional partial field shorter than `k`.
    pub fn parse(context: &'a str, precision: Precision) -> Result<Self> {
        let k = precision.digits();
        let (head, partial) = match context.rfind(',') {
            Some(pos) => (&context[..pos + 1], &context[pos + 1..]),
            None => ("", context),
        };
        if partial.len() >= k || !partial.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::MalformedContext(format!(
                "tail {partial:?} is not a partial {k}-digit state"
            )));
        }
        if !head.is_empty() {
            for field in head[..head.len() - 1].split(',') {
                parse_state(field, precision)?;
            }
        }
        Ok(Self { head, partial })
    }

    /// The last complete state before the partial one, if any.
    pub fn previous_state(&self, precision: Precision) -> Option<StateId> {
        if self.head.is_empty() {
            return None;
        }
        let body = &self.head[..self.head.len() - 1];
        let field = body.rsplit(',').next()?;
        parse_state(field, precision).ok()
    }

    /// Up to `n` digits immediately preceding the partial state, oldest first.
    pub fn history_digits(&self, n: usize) -> String {
        let mut digits: Vec<u8> = self
            .head
            .bytes()
            .rev()
            .filter(u8::is_ascii_digit)
            .take(n)
            .collect();
        digits.reverse();
        String::from_utf8(digits).expect("ascii digits")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(d: u8) -> Precision {
        Precision::new(d).unwrap()
    }

    #[test]
    fn context_tail_parsing() {
        let t = ContextTail::parse("150,516,85", k(3)).unwrap();
        assert_eq!(t.head, "150,516,");
        assert_eq!(t.partial, "85");
        assert_eq!(t.previous_state(k(3)).unwrap().index(), 516);
        assert_eq!(t.history_digits(4), "0516");
        assert_eq!(t.history_digits(100), "150516");

        let t = ContextTail::parse("", k(2)).unwrap();
        assert!(t.previous_state(k(2)).is_none());
        assert_eq!(t.history_digits(2), "");

        assert!(ContextTail::parse("150,516", k(3)).is_err());
        assert!(ContextTail::parse("15,516,", k(3)).is_err());
        assert!(ContextTail::parse("1a0,", k(3)).is_err());
    }

    #[test]
    fn softmax_shift_invariance() {
        let logits = [0.3, -1.0, 2.5, 0.0, 0.1, 4.0, -3.0, 1.0, 0.5, 0.2];
        let a = DigitDistribution::softmax(&logits, 1.0).unwrap();
        let b = DigitDistribution::softmax(&logits.map(|l| l + 123.4), 1.0).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(DigitDistribution::softmax(&logits, 0.0).is_err());
    }

    #[test]
    fn softmax_temperature_flattens() {
        let logits = [0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let cold = DigitDistribution::softmax(&logits, 0.5).unwrap();
        let hot = DigitDistribution::softmax(&logits, 4.0).unwrap();
        assert!(cold.probs()[2] > hot.probs()[2]);
        assert_eq!(hot.temperature(), 4.0);
    }
}
