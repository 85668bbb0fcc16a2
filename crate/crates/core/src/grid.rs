//! Time grids refined geometrically toward the horizon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a refined grid on `[t0, T]`.
///
/// The first `1 - refine_fraction` of the interval carries `intervals` uniform
/// steps; the remainder is split into `refine_intervals` steps whose lengths
/// shrink by `ratio` toward `T`, the final step closing at `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub intervals: usize,
    pub refine_fraction: f64,
    pub refine_intervals: usize,
    pub ratio: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { intervals: 64, refine_fraction: 0.1, refine_intervals: 16, ratio: 0.5 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.intervals == 0 {
            return Err(Error::param("grid.intervals", "must be positive"));
        }
        if !(self.refine_fraction >= 0.0 && self.refine_fraction < 1.0) {
            return Err(Error::param("grid.refine_fraction", "must lie in [0, 1)"));
        }
        if self.refine_fraction > 0.0 && self.refine_intervals == 0 {
            return Err(Error::param("grid.refine_intervals", "must be positive when refining"));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::param("grid.ratio", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Twice the resolution; the original grid is every other point of the result.
    pub fn doubled(&self) -> Self {
        Self {
            intervals: 2 * self.intervals,
            refine_intervals: 2 * self.refine_intervals,
            ratio: self.ratio.sqrt(),
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::param("grid", "must contain at least one time"));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::param("grid", "times must be finite and non-negative"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("grid", "times must be strictly increasing"));
        }
        Ok(Self { times })
    }

    pub fn uniform(t0: f64, horizon: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 || !(horizon > t0) {
            return Err(Error::param("grid", "need t0 < T and at least one interval"));
        }
        let h = (horizon - t0) / intervals as f64;
        let mut times: Vec<f64> = (0..intervals).map(|i| t0 + i as f64 * h).collect();
        times.push(horizon);
        Self::new(times)
    }

    pub fn refined(t0: f64, horizon: f64, spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        if !(horizon > t0) || t0 < 0.0 {
            return Err(Error::param("grid", "need 0 <= t0 < T"));
        }
        let len = horizon - t0;
        if spec.refine_fraction == 0.0 {
            return Self::uniform(t0, horizon, spec.intervals);
        }
        let tail = spec.refine_fraction * len;
        let knee = horizon - tail;
        let h = (knee - t0) / spec.intervals as f64;
        let mut times: Vec<f64> = (0..spec.intervals).map(|i| t0 + i as f64 * h).collect();
        for k in 0..spec.refine_intervals {
            times.push(horizon - tail * spec.ratio.powi(k as i32));
        }
        times.push(horizon);
        Self::new(times)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.times[0]
    }

    pub fn last(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Every `stride`-th point, always keeping the last.
    pub fn subgrid(&self, stride: usize) -> Result<Self> {
        if stride == 0 || !(self.times.len() - 1).is_multiple_of(stride) {
            return Err(Error::param("grid", "stride must divide the number of intervals"));
        }
        Ok(Self { times: self.times.iter().copied().step_by(stride).collect() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_refined_layout() {
        let g = TimeGrid::refined(0.0, 1.0, &GridSpec::default()).unwrap();
        assert_eq!(g.len(), 81);
        assert_eq!(g.first(), 0.0);
        assert_eq!(g.last(), 1.0);
        assert!((g.times[64] - 0.9).abs() < 1e-15);
        let last = g.times[79];
        assert!((1.0 - last - 0.1 * 0.5f64.powi(15)).abs() < 1e-15);
    }

    #[test]
    fn doubled_contains_original() {
        let spec = GridSpec::default();
        let g = TimeGrid::refined(0.2, 1.0, &spec).unwrap();
        let d = TimeGrid::refined(0.2, 1.0, &spec.doubled()).unwrap();
        let sub = d.subgrid(2).unwrap();
        assert_eq!(sub.len(), g.len());
        for (a, b) in sub.times.iter().zip(&g.times) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::refined(1.0, 1.0, &GridSpec::default()).is_err());
        let bad = GridSpec { ratio: 0.0, ..GridSpec::default() };
        assert!(bad.validate().is_err());
    }
}
