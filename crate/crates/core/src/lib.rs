//! Sleep-phase classification from wrist heart rate and inter-beat intervals.
//!
//! The pipeline runs from night files ([`signals`]) through 22 time-domain
//! features per 30-s epoch ([`features`]) into a stack of four small dense
//! networks and a meta network ([`stacking`]), all trained by the from-scratch
//! [`nn`] module. [`baselines`] holds the larger comparison models, [`eval`] the
//! unweighted metrics and cross-validation, [`synth`] a synthetic corpus
//! generator and [`budget`] the static memory accounting plus an
//! allocation-free inference path.

pub mod baselines;
pub mod budget;
pub mod bundle;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod nn;
pub mod signals;
pub mod stacking;
pub mod synth;

pub use error::{Error, Result};

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
