use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::model::TimeGrid;

/// Increments of the two independent Brownian motions `B = (Y, W)` under the
/// reference measure, for `n_paths` paths on a shared grid.
///
/// Path `i` draws from its own counter-based stream, so it does not depend on
/// the ensemble size or on how the work is split across threads. Storage is
/// step-major: `dw[k * n_paths + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianBundle {
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    dw: Vec<f64>,
    dy: Vec<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fills a step-major `n_steps × n_paths` matrix of `N(0, dt)` draws where
/// path `i` uses stream `2 i + offset`.
fn draw_matrix(grid: &TimeGrid, n_paths: usize, seed: u64, offset: u64) -> Vec<f64> {
    let n = grid.n_steps();
    let sd = grid.dt().sqrt();
    let mut path_major = vec![0.0; n * n_paths];
    path_major
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            let mut rng = stream_rng(seed, 2 * i as u64 + offset);
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = sd * z;
            }
        });
    let mut step_major = vec![0.0; n * n_paths];
    step_major
        .par_chunks_mut(n_paths)
        .enumerate()
        .for_each(|(k, col)| {
            for (i, v) in col.iter_mut().enumerate() {
                *v = path_major[i * n + k];
            }
        });
    step_major
}

/// Draws a reproducible bundle of increments.
pub fn generate_drivers(grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<BrownianBundle> {
    if n_paths == 0 {
        return Err(invalid("n_paths", "at least one path is required"));
    }
    Ok(BrownianBundle {
        grid: grid.clone(),
        n_paths,
        seed,
        dw: draw_matrix(grid, n_paths, seed, 0),
        dy: draw_matrix(grid, n_paths, seed, 1),
    })
}

/// A single path of `N(0, dt)` increments from its own stream, e.g. for an
/// observation record. Independent of every bundle drawn with the same seed.
pub fn brownian_increments(grid: &TimeGrid, seed: u64, stream: u64) -> Vec<f64> {
    let sd = grid.dt().sqrt();
    // streams at the top of the range never collide with bundle streams
    let mut rng = stream_rng(seed, u64::MAX - stream);
    (0..grid.n_steps())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect()
}

impl BrownianBundle {
    /// Assembles a bundle from explicit step-major increments.
    pub fn from_parts(grid: TimeGrid, n_paths: usize, dw: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        let len = grid.n_steps() * n_paths;
        if n_paths == 0 || dw.len() != len || dy.len() != len {
            return Err(Error::Shape(format!(
                "expected {} increments per stream, got dW {} / dY {}",
                len,
                dw.len(),
                dy.len()
            )));
        }
        Ok(Self {
            grid,
            n_paths,
            seed: 0,
            dw,
            dy,
        })
    }

    /// Replaces every path's `dY` by one common observation record.
    pub fn with_common_observation(mut self, dy_path: &[f64]) -> Result<Self> {
        if dy_path.len() != self.grid.n_steps() {
            return Err(Error::Shape(format!(
                "observation record has {} increments, grid has {} steps",
                dy_path.len(),
                self.grid.n_steps()
            )));
        }
        for (k, &d) in dy_path.iter().enumerate() {
            self.dy[k * self.n_paths..(k + 1) * self.n_paths].fill(d);
        }
        Ok(self)
    }

    /// Same Brownian paths on a grid with half the steps (pairwise sums).
    pub fn coarsened(&self) -> Result<Self> {
        let grid = self.grid.coarsened()?;
        let n = self.n_paths;
        let sum_pairs = |v: &[f64]| -> Vec<f64> {
            (0..grid.n_steps())
                .flat_map(|k| {
                    let a = &v[2 * k * n..(2 * k + 1) * n];
                    let b = &v[(2 * k + 1) * n..(2 * k + 2) * n];
                    a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>()
                })
                .collect()
        };
        Ok(Self {
            dw: sum_pairs(&self.dw),
            dy: sum_pairs(&self.dy),
            grid,
            n_paths: n,
            seed: self.seed,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dw(&self, path: usize, step: usize) -> f64 {
        self.dw[step * self.n_paths + path]
    }

    pub fn dy(&self, path: usize, step: usize) -> f64 {
        self.dy[step * self.n_paths + path]
    }

    /// `dW` of every path at one step.
    pub fn dw_step(&self, step: usize) -> &[f64] {
        &self.dw[step * self.n_paths..(step + 1) * self.n_paths]
    }

    pub fn dy_step(&self, step: usize) -> &[f64] {
        &self.dy[step * self.n_paths..(step + 1) * self.n_paths]
    }

    pub fn dw_all(&self) -> &[f64] {
        &self.dw
    }

    pub fn dy_all(&self) -> &[f64] {
        &self.dy
    }
}
