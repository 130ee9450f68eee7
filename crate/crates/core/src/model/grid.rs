use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform time grid `t_0 = 0 < t_1 < ... < t_n = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    n_steps: usize,
    dt: f64,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("T", format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(invalid("n_steps", "at least one step is required"));
        }
        let dt = horizon / n_steps as f64;
        let mut times: Vec<f64> = (0..n_steps).map(|k| k as f64 * dt).collect();
        // last node is pinned so that rounding never leaves t_n != T
        times.push(horizon);
        Ok(Self { n_steps, dt, times })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.n_steps]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// Grid with half as many steps over the same horizon. Fails on odd step counts.
    pub fn coarsened(&self) -> Result<Self> {
        if !self.n_steps.is_multiple_of(2) {
            return Err(invalid("n_steps", "cannot coarsen an odd number of steps"));
        }
        Self::new(self.horizon(), self.n_steps / 2)
    }

    /// Index of the first node with `t_k >= t` (clamped to the last node).
    pub fn step_at(&self, t: f64) -> usize {
        let k = (t / self.dt - 1e-9).ceil().max(0.0) as usize;
        k.min(self.n_steps)
    }
}
