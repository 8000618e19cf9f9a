use super::{ContextTail, DigitDistribution, DigitProvider};
use crate::error::{Error, Result};
use crate::quantizer::Precision;

/// Ground-truth provider: digit conditionals are the exact prefix marginals
/// of the transition row of the last complete state in the context.
#[derive(Debug, Clone)]
pub struct OracleProvider {
    precision: Precision,
    /// Per-row prefix sums, `cumulative[s][j] = Σ_{i<j} P[s][i]`.
    cumulative: Vec<Vec<f64>>,
}

impl OracleProvider {
    pub fn new(rows: Vec<Vec<f64>>, precision: Precision) -> Result<Self> {
        let n = precision.num_states();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(format!("oracle matrix must be {n} x {n}")));
        }
        let mut cumulative = Vec::with_capacity(n);
        for (s, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(Error::InvalidArgument(format!("row {s} has a negative entry")));
            }
            let total: f64 = row.iter().sum();
            if total != 0.0 && (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("row {s} sums to {total}")));
            }
            let mut acc = Vec::with_capacity(n + 1);
            let mut sum = 0.0;
            acc.push(0.0);
            for p in row {
                sum += p;
                acc.push(sum);
            }
            cumulative.push(acc);
        }
        Ok(Self {
            precision,
            cumulative,
        })
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Exact transition row `s`.
    pub fn row(&self, s: usize) -> Vec<f64> {
        self.cumulative[s].windows(2).map(|w| w[1] - w[0]).collect()
    }
}

impl DigitProvider for OracleProvider {
    fn next_digit_probs(&self, context: &str) -> Result<DigitDistribution> {
        let tail = ContextTail::parse(context, self.precision)?;
        let state = tail
            .previous_state(self.precision)
            .ok_or_else(|| Error::MalformedContext("oracle needs a complete previous state".into()))?;
        let acc = &self.cumulative[state.index() as usize];
        if *acc.last().unwrap() == 0.0 {
            return Err(Error::UnknownState(state.index()));
        }
        let k = self.precision.digits();
        let prefix: usize = if tail.partial.is_empty() {
            0
        } else {
            tail.partial.parse().expect("validated digits")
        };
        // states whose first (len+1) digits are prefix·d span a block of width 10^(k-len-1)
        let width = 10usize.pow((k - tail.partial.len() - 1) as u32);
        let base = prefix * 10 * width;
        let mut weights = [0.0; 10];
        for (d, w) in weights.iter_mut().enumerate() {
            let lo = base + d * width;
            *w = (acc[lo + width] - acc[lo]).max(0.0);
        }
        Ok(DigitDistribution::from_weights(weights))
    }
}
