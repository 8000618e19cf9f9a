use std::collections::HashMap;

use super::{ContextTail, DigitDistribution, DigitProvider};
use crate::error::{Error, Result};
use crate::quantizer::{Precision, StateId};

/// Laplace-smoothed digit n-gram.
///
/// The next digit is conditioned on the digits already emitted for the
/// current state plus the `order` digits preceding that state (commas are
/// not counted). With `order = k` this conditions on exactly the previous
/// state, so the model is a smoothed empirical Markov transition estimate
/// read out one digit at a time.
#[derive(Debug, Clone)]
pub struct EmpiricalProvider {
    precision: Precision,
    order: usize,
    smoothing: f64,
    counts: HashMap<String, [u64; 10]>,
}

fn key(history: &str, partial: &str) -> String {
    let mut k = String::with_capacity(history.len() + partial.len() + 1);
    k.push_str(history);
    k.push('|');
    k.push_str(partial);
    k
}

impl EmpiricalProvider {
    pub fn train(
        trajectories: &[Vec<StateId>],
        precision: Precision,
        order: usize,
        smoothing: f64,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("n-gram order must be >= 1".into()));
        }
        if !(smoothing > 0.0) {
            return Err(Error::InvalidArgument(format!("smoothing must be > 0, got {smoothing}")));
        }
        let mut counts: HashMap<String, [u64; 10]> = HashMap::new();
        for traj in trajectories {
            let mut emitted: Vec<u8> = Vec::with_capacity(traj.len() * precision.digits());
            for state in traj {
                if state.precision() != precision {
                    return Err(Error::InvalidArgument(format!(
                        "state {state} has precision {}, expected {precision}",
                        state.precision()
                    )));
                }
                let digits = state.digits();
                let start = emitted.len().saturating_sub(order);
                let history = std::str::from_utf8(&emitted[start..]).expect("ascii");
                for p in 0..digits.len() {
                    let next = (digits.as_bytes()[p] - b'0') as usize;
                    counts.entry(key(history, &digits[..p])).or_insert([0; 10])[next] += 1;
                }
                emitted.extend_from_slice(digits.as_bytes());
            }
        }
        Ok(Self {
            precision,
            order,
            smoothing,
            counts,
        })
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Raw counts for a `(history, partial)` key.
    pub fn counts(&self, history: &str, partial: &str) -> [u64; 10] {
        self.counts.get(&key(history, partial)).copied().unwrap_or([0; 10])
    }
}

impl DigitProvider for EmpiricalProvider {
    fn next_digit_probs(&self, context: &str) -> Result<DigitDistribution> {
        let tail = ContextTail::parse(context, self.precision)?;
        let history = tail.history_digits(self.order);
        let c = self.counts(&history, tail.partial);
        let total: u64 = c.iter().sum();
        let denom = total as f64 + 10.0 * self.smoothing;
        let probs = c.map(|n| (n as f64 + self.smoothing) / denom);
        DigitDistribution::new(probs, 1.0)
    }
}
