//! Digit-state quantization of continuous iterates.
//!
//! A raw coordinate value is first rescaled by an [`AffineMap`] into the
//! encoding interval (by default `[1.5, 8.5]`, which keeps the leading digit
//! away from 0 and 9), then rounded onto the lattice `index / 10^(k-1)` to give
//! a [`StateId`] with `k` digits. Sequences of states serialize to the
//! comma-separated context strings consumed by digit providers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TARGET_LO: f64 = 1.5;
pub const DEFAULT_TARGET_HI: f64 = 8.5;

/// Largest supported digit count. `10^6` states is already far past what a
/// dense kernel can hold.
pub const MAX_PRECISION: u8 = 6;

/// Number of decimal digits per encoded state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Precision(u8);

impl Precision {
    pub fn new(k: u8) -> Result<Self> {
        if k == 0 || k > MAX_PRECISION {
            return Err(Error::InvalidArgument(format!(
                "precision must be in 1..={MAX_PRECISION}, got {k}"
            )));
        }
        Ok(Self(k))
    }

    pub fn digits(self) -> usize {
        self.0 as usize
    }

    /// `10^k`, the size of the state space.
    pub fn num_states(self) -> usize {
        10usize.pow(self.0 as u32)
    }

    /// `10^(k-1)`, the lattice density per unit of rescaled value.
    pub fn scale(self) -> f64 {
        10f64.powi(self.0 as i32 - 1)
    }

    /// Distance between adjacent lattice points in rescaled units.
    pub fn bin_width(self) -> f64 {
        1.0 / self.scale()
    }
}

impl TryFrom<u8> for Precision {
    type Error = Error;
    fn try_from(k: u8) -> Result<Self> {
        Self::new(k)
    }
}

impl From<Precision> for u8 {
    fn from(p: Precision) -> u8 {
        p.0
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A discretized state: an index in `[0, 10^k)` together with its precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId {
    index: u32,
    precision: Precision,
}

impl StateId {
    pub fn new(index: u32, precision: Precision) -> Result<Self> {
        if index as usize >= precision.num_states() {
            return Err(Error::OutOfRange {
                value: index as f64,
                index: index as i64,
                max: precision.num_states() as u32 - 1,
            });
        }
        Ok(Self { index, precision })
    }

    pub fn index(self) -> u32 {
        self.index
    }

    pub fn precision(self) -> Precision {
        self.precision
    }

    /// Zero-padded decimal digits, most significant first.
    pub fn digits(self) -> String {
        format!("{:0width$}", self.index, width = self.precision.digits())
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.digits())
    }
}

/// Inclusive range of state indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub lo: u32,
    pub hi: u32,
}

impl Band {
    pub fn full(precision: Precision) -> Self {
        Self {
            lo: 0,
            hi: precision.num_states() as u32 - 1,
        }
    }

    /// States reachable from values inside `[target_lo, target_hi]`.
    pub fn reachable(precision: Precision, target_lo: f64, target_hi: f64) -> Result<Self> {
        let lo = encode(target_lo, precision)?.index;
        let hi = encode(target_hi, precision)?.index;
        Ok(Self { lo, hi })
    }

    pub fn len(self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn contains(self, index: u32) -> bool {
        (self.lo..=self.hi).contains(&index)
    }

    pub fn indices(self) -> std::ops::RangeInclusive<u32> {
        self.lo..=self.hi
    }
}

/// Invertible map `x ↦ target_lo + scale·(x − source_lo)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: f64,
    pub offset: f64,
    pub source_lo: f64,
    pub source_hi: f64,
    pub target_lo: f64,
    pub target_hi: f64,
}

impl AffineMap {
    /// Fits the map sending `min(series)` to `target_lo` and `max(series)` to
    /// `target_hi`.
    pub fn fit(series: &[f64], target_lo: f64, target_hi: f64) -> Result<Self> {
        if !(target_lo < target_hi) || !target_lo.is_finite() || !target_hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "target interval [{target_lo}, {target_hi}] is empty"
            )));
        }
        if series.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("series contains non-finite values".into()));
        }
        let (lo, hi) = series
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if series.is_empty() || !(lo < hi) {
            return Err(Error::DegenerateSeries(series.len()));
        }
        let scale = (target_hi - target_lo) / (hi - lo);
        Ok(Self {
            scale,
            offset: target_lo - scale * lo,
            source_lo: lo,
            source_hi: hi,
            target_lo,
            target_hi,
        })
    }

    /// Fits onto the default `[1.5, 8.5]` interval.
    pub fn fit_default(series: &[f64]) -> Result<Self> {
        Self::fit(series, DEFAULT_TARGET_LO, DEFAULT_TARGET_HI)
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.target_lo + self.scale * (x - self.source_lo)
    }

    pub fn invert(&self, y: f64) -> f64 {
        self.source_lo + (y - self.target_lo) / self.scale
    }

    /// Clamps `x` into the source range; the flag reports whether it moved.
    pub fn clamp_source(&self, x: f64) -> (f64, bool) {
        let c = x.clamp(self.source_lo, self.source_hi);
        (c, c != x)
    }
}

/// Rounds a rescaled value onto the `k`-digit lattice (half away from zero).
pub fn encode(value: f64, precision: Precision) -> Result<StateId> {
    let max = precision.num_states() as u32 - 1;
    if !value.is_finite() {
        return Err(Error::OutOfRange {
            value,
            index: i64::MAX,
            max,
        });
    }
    // f64::round rounds half away from zero.
    let rounded = (value * precision.scale()).round();
    if rounded < 0.0 || rounded > max as f64 {
        return Err(Error::OutOfRange {
            value,
            index: rounded as i64,
            max,
        });
    }
    Ok(StateId {
        index: rounded as u32,
        precision,
    })
}

/// Lattice value of a state in rescaled units.
pub fn decode(state: StateId) -> f64 {
    state.index as f64 / state.precision.scale()
}

/// Comma-joined zero-padded digit strings, no trailing comma.
pub fn serialize(states: &[StateId]) -> String {
    let mut out = String::with_capacity(states.len() * (states.first().map_or(0, |s| s.precision.digits()) + 1));
    for (i, s) in states.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&s.digits());
    }
    out
}

/// Inverse of [`serialize`]. Every field must have exactly `k` digits.
pub fn parse(text: &str, precision: Precision) -> Result<Vec<StateId>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|field| parse_state(field, precision))
        .collect()
}

pub(crate) fn parse_state(field: &str, precision: Precision) -> Result<StateId> {
    if field.len() != precision.digits() || !field.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::MalformedContext(format!(
            "expected {precision} digits, got {field:?}"
        )));
    }
    let index: u32 = field
        .parse()
        .map_err(|_| Error::MalformedContext(field.to_string()))?;
    StateId::new(index, precision)
}

/// Dirac distribution at `state`.
pub fn one_hot(state: StateId) -> StateDistribution {
    let mut probs = vec![0.0; state.precision.num_states()];
    probs[state.index as usize] = 1.0;
    StateDistribution {
        probs,
        precision: state.precision,
    }
}

/// Probability vector over the `10^k` states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    probs: Vec<f64>,
    precision: Precision,
}

pub const SIMPLEX_TOL: f64 = 1e-9;

impl StateDistribution {
    pub fn new(probs: Vec<f64>, precision: Precision) -> Result<Self> {
        if probs.len() != precision.num_states() {
            return Err(Error::DimensionMismatch(format!(
                "distribution has {} entries, precision {} needs {}",
                probs.len(),
                precision,
                precision.num_states()
            )));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument("negative or non-finite probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs, precision })
    }

    /// Normalizes nonnegative weights. Fails when the total mass is zero.
    pub fn from_weights(mut weights: Vec<f64>, precision: Precision) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("negative or non-finite weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::NumericalUnderflow("distribution normalization"));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(weights, precision)
    }

    pub fn uniform(precision: Precision) -> Self {
        let n = precision.num_states();
        Self {
            probs: vec![1.0 / n as f64; n],
            precision,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn get(&self, state: StateId) -> f64 {
        self.probs[state.index as usize]
    }

    pub fn max_mass(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }

    /// Lowest index attaining the maximum mass.
    pub fn mode(&self) -> StateId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        StateId {
            index: best as u32,
            precision: self.precision,
        }
    }

    /// Mean of the decoded lattice values.
    pub fn mean(&self) -> f64 {
        let s = self.precision.scale();
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| p * i as f64 / s)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let s = self.precision.scale();
        let m = self.mean();
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| p * (i as f64 / s - m).powi(2))
            .sum()
    }
}

/// Per-coordinate codec: an affine map plus a precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCodec {
    pub map: AffineMap,
    pub precision: Precision,
}

impl CoordinateCodec {
    pub fn fit(series: &[f64], precision: Precision, target_lo: f64, target_hi: f64) -> Result<Self> {
        Ok(Self {
            map: AffineMap::fit(series, target_lo, target_hi)?,
            precision,
        })
    }

    pub fn encode(&self, raw: f64) -> Result<StateId> {
        encode(self.map.apply(raw), self.precision)
    }

    pub fn decode(&self, state: StateId) -> f64 {
        self.map.invert(decode(state))
    }

    pub fn band(&self) -> Result<Band> {
        Band::reachable(self.precision, self.map.target_lo, self.map.target_hi)
    }

    /// Bin width expressed in raw (source) units.
    pub fn raw_bin_width(&self) -> f64 {
        self.precision.bin_width() / self.map.scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(d: u8) -> Precision {
        Precision::new(d).unwrap()
    }

    #[test]
    fn fit_matches_worked_example() {
        let m = AffineMap::fit(&[0.2513, 5.2387, 9.7889], 1.5, 8.5).unwrap();
        assert!((m.apply(0.2513) - 1.5).abs() < 1e-12);
        assert!((m.apply(9.7889) - 8.5).abs() < 1e-12);
        assert!((m.apply(5.2387) - 5.16).abs() < 5e-3);
        assert_eq!(encode(m.apply(5.2387), k(3)).unwrap().index(), 516);
    }

    #[test]
    fn fit_identity_and_midpoint() {
        let m = AffineMap::fit(&[0.0, 1.0], 0.0, 1.0).unwrap();
        assert_eq!(m.scale, 1.0);
        assert_eq!(m.offset, 0.0);
        let m = AffineMap::fit(&[-3.0, 7.0], 1.5, 8.5).unwrap();
        assert!((m.apply(2.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_constant_series() {
        assert!(matches!(
            AffineMap::fit(&[2.0, 2.0, 2.0], 1.5, 8.5),
            Err(Error::DegenerateSeries(3))
        ));
        assert!(AffineMap::fit(&[0.0, 1.0], 2.0, 2.0).is_err());
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode(1.5, k(3)).unwrap().index(), 150);
        assert_eq!(encode(8.5, k(3)).unwrap().index(), 850);
        assert_eq!(encode(0.0, k(2)).unwrap().index(), 0);
        // half away from zero
        assert_eq!(encode(0.25, k(2)).unwrap().index(), 3);
        assert!(matches!(encode(-0.1, k(2)), Err(Error::OutOfRange { .. })));
        assert!(matches!(encode(9.96, k(2)), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn decode_examples() {
        assert!((decode(StateId::new(516, k(3)).unwrap()) - 5.16).abs() < 1e-12);
        assert_eq!(decode(StateId::new(0, k(1)).unwrap()), 0.0);
    }

    #[test]
    fn decode_encode_roundtrip_all_states() {
        for d in 1..=4 {
            let p = k(d);
            for i in 0..p.num_states() as u32 {
                let s = StateId::new(i, p).unwrap();
                assert_eq!(encode(decode(s), p).unwrap(), s);
            }
        }
    }

    #[test]
    fn serialize_examples() {
        let p = k(3);
        let states: Vec<_> = [150, 516, 850]
            .iter()
            .map(|&i| StateId::new(i, p).unwrap())
            .collect();
        assert_eq!(serialize(&states), "150,516,850");
        assert_eq!(serialize(&[StateId::new(5, p).unwrap()]), "005");
        let p1 = k(1);
        let s: Vec<_> = (1..=3).map(|i| StateId::new(i, p1).unwrap()).collect();
        assert_eq!(serialize(&s), "1,2,3");
        assert_eq!(parse("150,516,850", p).unwrap(), states);
        assert!(parse("15,516", p).is_err());
        assert!(parse("150,", p).is_err());
    }

    #[test]
    fn one_hot_examples() {
        let d = one_hot(StateId::new(150, k(3)).unwrap());
        assert_eq!(d.probs()[150], 1.0);
        assert_eq!(d.probs().iter().sum::<f64>(), 1.0);
        let d = one_hot(StateId::new(0, k(1)).unwrap());
        assert_eq!(d.probs(), &[1.0, 0., 0., 0., 0., 0., 0., 0., 0., 0.]);
    }

    #[test]
    fn reachable_band() {
        let b = Band::reachable(k(3), 1.5, 8.5).unwrap();
        assert_eq!((b.lo, b.hi), (150, 850));
        let b = Band::reachable(k(2), 1.5, 8.5).unwrap();
        assert_eq!((b.lo, b.hi), (15, 85));
    }

    #[test]
    fn precision_bounds() {
        assert!(Precision::new(0).is_err());
        assert!(Precision::new(7).is_err());
        assert_eq!(k(3).num_states(), 1000);
    }

    #[test]
    fn distribution_validation() {
        assert!(StateDistribution::new(vec![0.5, 0.5], k(1)).is_err());
        let mut v = vec![0.0; 10];
        v[3] = 0.4;
        v[4] = 0.6;
        let d = StateDistribution::new(v, k(1)).unwrap();
        assert_eq!(d.mode().index(), 4);
        assert!((d.mean() - 3.6).abs() < 1e-12);
        assert!(StateDistribution::from_weights(vec![0.0; 10], k(1)).is_err());
    }
}
