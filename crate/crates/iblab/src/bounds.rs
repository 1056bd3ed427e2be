//! Generalization-bound calculators built on the input-compression bound
//! ε² ≤ (2^I(X;T) + log2(2/δ)) / (2m).

use crate::scalar::{lit, Real};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("i_xt must be nonnegative, got {0}")]
    NegativeInformation(f64),
    #[error("sample count must be >= 1")]
    NoSamples,
    #[error("delta must lie in (0, 1], got {0}")]
    BadDelta(f64),
    #[error("extra compression must be nonnegative, got {0}")]
    NegativeCompression(f64),
}

/// Inputs to the compression bound.
#[derive(Debug, Clone, Copy)]
pub struct CompressionBoundInput<F> {
    /// I(X;T) in bits.
    pub i_xt: F,
    /// Training sample count m.
    pub m: u64,
    /// Confidence parameter δ.
    pub delta: F,
}

impl<F: Real> CompressionBoundInput<F> {
    fn validate(&self) -> Result<(), BoundsError> {
        if self.i_xt < F::zero() {
            return Err(BoundsError::NegativeInformation(self.i_xt.to_f64().unwrap()));
        }
        if self.m < 1 {
            return Err(BoundsError::NoSamples);
        }
        let d = self.delta.to_f64().unwrap();
        if !(d > 0.0 && d <= 1.0) {
            return Err(BoundsError::BadDelta(d));
        }
        Ok(())
    }
}

/// Bound on the typical expected squared generalization gap:
/// ε² ≤ (2^I + log2(2/δ)) / (2m). The log term is base 2 for unit
/// consistency with I(X;T) in bits.
pub fn input_compression_bound<F: Real>(
    input: &CompressionBoundInput<F>,
) -> Result<F, BoundsError> {
    input.validate()?;
    let two = lit::<F>(2.0);
    let numerator = input.i_xt.exp2() + (two / input.delta).log2();
    Ok(numerator / (two * lit::<F>(input.m as f64)))
}

/// Outcome of the compression-vs-samples equivalence probe.
#[derive(Debug, Clone, Copy)]
pub struct SampleEquivalence<F> {
    /// bound(I−M, m) / bound(I, 2^M·m); → 1 when the exponential term
    /// dominates the confidence term.
    pub ratio: F,
    /// True when 2^(I−M) dominates log2(2/δ) so the equivalence is valid.
    pub dominant_regime: bool,
}

/// Threshold on 2^(I−M) / log2(2/δ) above which the regime counts as
/// dominated by the compression term.
pub const DOMINANCE_FACTOR: f64 = 50.0;

/// Checks that M bits of extra compression trade against a 2^M-fold larger
/// training set: the two bounds agree in the dominant-term regime.
pub fn sample_equivalence_check<F: Real>(
    i_xt: F,
    m: u64,
    extra_bits: F,
    delta: F,
) -> Result<SampleEquivalence<F>, BoundsError> {
    if extra_bits < F::zero() {
        return Err(BoundsError::NegativeCompression(extra_bits.to_f64().unwrap()));
    }
    let compressed = CompressionBoundInput { i_xt: i_xt - extra_bits, m, delta };
    if compressed.i_xt < F::zero() {
        return Err(BoundsError::NegativeInformation(compressed.i_xt.to_f64().unwrap()));
    }
    let scaled_m = (lit::<F>(m as f64) * extra_bits.exp2()).to_f64().unwrap().round() as u64;
    let enlarged = CompressionBoundInput { i_xt, m: scaled_m.max(1), delta };
    let ratio = input_compression_bound(&compressed)? / input_compression_bound(&enlarged)?;
    let log_term = (lit::<F>(2.0) / delta).log2();
    let dominant_regime = compressed.i_xt.exp2() >= lit::<F>(DOMINANCE_FACTOR) * log_term;
    Ok(SampleEquivalence { ratio, dominant_regime })
}
