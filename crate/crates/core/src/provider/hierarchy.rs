use super::DigitProvider;
use crate::error::{Error, Result};
use crate::quantizer::{Precision, StateDistribution};

/// Expand every child of the running mode's level.
pub const DEFAULT_BRANCH_BUDGET: usize = 10;

/// Next-state distribution assembled digit by digit.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitPdf {
    pub dist: StateDistribution,
    pub query_count: usize,
}

/// Upper bound on provider calls made by [`hierarchy_pdf`].
pub fn query_bound(precision: Precision, budget: usize) -> usize {
    1 + budget * (precision.digits() - 1)
}

/// Refines per-digit provider answers into a distribution over `10^k` states.
///
/// Level 1 queries the context once. At every deeper level the `budget`
/// heaviest prefixes (by cumulative probability, ties broken by prefix value)
/// are extended by one more query each; a child's weight is its parent's
/// weight times the digit probability. Prefixes left unexpanded spread their
/// weight uniformly over all their descendants. Zero-weight prefixes are
/// never expanded.
///
/// `context` must end at a state boundary: empty, or ending with a comma.
pub fn hierarchy_pdf<P: DigitProvider + ?Sized>(
    provider: &P,
    context: &str,
    precision: Precision,
    budget: usize,
) -> Result<DigitPdf> {
    if budget == 0 {
        return Err(Error::InvalidArgument("branch budget must be >= 1".into()));
    }
    if !(context.is_empty() || context.ends_with(',')) {
        return Err(Error::MalformedContext(
            "hierarchy expansion must start at a state boundary".into(),
        ));
    }
    let k = precision.digits();
    let mut out = vec![0.0; precision.num_states()];

    let first = provider.next_digit_probs(context)?;
    let mut calls = 1;
    // (prefix value, weight) at the current level
    let mut frontier: Vec<(usize, f64)> = first.probs().iter().copied().enumerate().collect();

    let mut query = String::with_capacity(context.len() + k);
    for level in 1..k {
        frontier.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let expand = frontier
            .iter()
            .take(budget)
            .take_while(|(_, w)| *w > 0.0)
            .count();

        // descendants of a level-`level` prefix among full states
        let span = 10usize.pow((k - level) as u32);
        for &(prefix, w) in &frontier[expand..] {
            if w > 0.0 {
                let share = w / span as f64;
                out[prefix * span..(prefix + 1) * span]
                    .iter_mut()
                    .for_each(|v| *v += share);
            }
        }

        let mut next = Vec::with_capacity(expand * 10);
        for &(prefix, w) in &frontier[..expand] {
            query.clear();
            query.push_str(context);
            query.push_str(&format!("{:0width$}", prefix, width = level));
            let probs = provider.next_digit_probs(&query)?;
            calls += 1;
            for (d, p) in probs.probs().iter().enumerate() {
                next.push((prefix * 10 + d, w * p));
            }
        }
        frontier = next;
    }
    for (state, w) in frontier {
        out[state] += w;
    }
    Ok(DigitPdf {
        dist: StateDistribution::from_weights(out, precision)?,
        query_count: calls,
    })
}
