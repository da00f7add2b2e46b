//! Right-continuous step functions indexed by jump times.
//!
//! The carrier type for cumulative hazards, censoring survival and absolute
//! risk curves. `value(t)` sums all increments with jump time <= t
//! (right-continuous evaluation), `left_value(t)` sums increments with jump
//! time strictly below t.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    times: Vec<f64>,
    increments: Vec<f64>,
    cumulative: Vec<f64>,
}

impl StepFunction {
    pub fn new(times: Vec<f64>, increments: Vec<f64>) -> Result<Self> {
        if times.len() != increments.len() {
            return Err(Error::validation(format!(
                "step function: {} jump times but {} increments",
                times.len(),
                increments.len()
            )));
        }
        for w in times.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::validation(format!(
                    "step function: jump times must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if times.iter().any(|t| !t.is_finite()) || increments.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(
                "step function: non-finite jump time or increment",
            ));
        }
        let mut cumulative = Vec::with_capacity(increments.len());
        let mut acc = 0.0;
        for v in &increments {
            acc += v;
            cumulative.push(acc);
        }
        Ok(StepFunction {
            times,
            increments,
            cumulative,
        })
    }

    pub fn zero() -> Self {
        StepFunction {
            times: Vec::new(),
            increments: Vec::new(),
            cumulative: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.times
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Number of jumps with time <= t.
    pub fn index_at(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }

    /// Number of jumps with time < t.
    pub fn index_before(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s < t)
    }

    /// Right-continuous evaluation: sum of increments at jump times <= t.
    pub fn value(&self, t: f64) -> f64 {
        match self.index_at(t) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }

    /// Left limit: sum of increments at jump times strictly below t.
    pub fn left_value(&self, t: f64) -> f64 {
        match self.index_before(t) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }

    pub fn last_value(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Pointwise scaling, sharing the jump times.
    pub fn scaled(&self, factor: f64) -> StepFunction {
        StepFunction {
            times: self.times.clone(),
            increments: self.increments.iter().map(|v| v * factor).collect(),
            cumulative: self.cumulative.iter().map(|v| v * factor).collect(),
        }
    }
}
