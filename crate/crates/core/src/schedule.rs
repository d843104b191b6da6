//! Adaptive timestep scheduling.
//!
//! A dual-piecewise Gaussian density over diffusion timesteps is fitted so the
//! mass it puts on each timestep range matches that range's share of training
//! steps. Inverting its upper-tail cumulative sum yields a non-increasing
//! timestep-per-training-step curve, and per-phase lower bounds turn the curve
//! into a sampling interval.
//!
//! Timestep ranges are indexed in timestep order: range 0 holds the smallest
//! timesteps. Training visits them in reverse (large timesteps first), so the
//! first training phase lives in the last range.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of discrete diffusion timesteps; valid timesteps are `1..=MAX_TIMESTEP`.
pub const MAX_TIMESTEP: u32 = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseTable {
    /// `t1 < t2 < t3 < t4`; range k is `[t_k, t_{k+1})`, the last one closed.
    pub boundaries: [u32; 4],
    /// Training steps assigned to each range.
    pub budgets: [u32; 3],
    /// Lowest timestep sampled while the curve sits in each range.
    pub lower_bounds: [u32; 3],
    /// Steps `i < geometry_cutoff` sample uniformly from `[geometry_floor, t4]`.
    pub geometry_cutoff: u32,
    pub geometry_floor: u32,
}

impl Default for PhaseTable {
    fn default() -> Self {
        Self {
            boundaries: [20, 350, 450, 800],
            budgets: [900, 500, 1000],
            lower_bounds: [20, 150, 400],
            geometry_cutoff: 500,
            geometry_floor: 500,
        }
    }
}

impl PhaseTable {
    pub fn total_steps(&self) -> u32 {
        self.budgets.iter().sum()
    }

    pub fn t_min(&self) -> u32 {
        self.boundaries[0]
    }

    pub fn t_max(&self) -> u32 {
        self.boundaries[3]
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.boundaries;
        if !(b[0] < b[1] && b[1] < b[2] && b[2] < b[3]) {
            return Err(Error::Param(format!("boundaries {b:?} are not increasing")));
        }
        if b[0] < 1 || b[3] > MAX_TIMESTEP {
            return Err(Error::Param(format!("boundaries {b:?} leave [1, {MAX_TIMESTEP}]")));
        }
        if self.budgets.iter().any(|&n| n == 0) {
            return Err(Error::Param(format!("zero step budget in {:?}", self.budgets)));
        }
        for k in 0..3 {
            if self.lower_bounds[k] > b[k] || self.lower_bounds[k] < 1 {
                return Err(Error::Param(format!(
                    "lower bound {} for range {k} must lie in [1, {}]",
                    self.lower_bounds[k], b[k]
                )));
            }
        }
        if self.geometry_floor < 1 || self.geometry_floor > b[3] {
            return Err(Error::Param(format!(
                "geometry floor {} outside [1, {}]",
                self.geometry_floor, b[3]
            )));
        }
        Ok(())
    }

    /// Inclusive timestep bounds of range `k`.
    pub fn range(&self, k: usize) -> (u32, u32) {
        let lo = self.boundaries[k];
        let hi = if k == 2 {
            self.boundaries[3]
        } else {
            self.boundaries[k + 1] - 1
        };
        (lo, hi)
    }

    /// Range holding timestep `t`, with timesteps outside `[t1, t4]` assigned to
    /// the nearest end range.
    pub fn range_of(&self, t: u32) -> usize {
        if t < self.boundaries[1] {
            0
        } else if t < self.boundaries[2] {
            1
        } else {
            2
        }
    }

    /// Desired probability mass per range, `n_k / N`.
    pub fn target_mass(&self) -> [f64; 3] {
        let n = self.total_steps() as f64;
        self.budgets.map(|b| b as f64 / n)
    }

    /// Same proportions for a run of `total` steps (largest-remainder rounding,
    /// each range keeping at least one step); the warm-up cutoff scales along.
    pub fn scaled_to(&self, total: u32) -> Result<PhaseTable> {
        if total < 3 {
            return Err(Error::Param(format!("cannot spread {total} steps over three phases")));
        }
        let old = self.total_steps() as f64;
        let exact: Vec<f64> = self.budgets.iter().map(|&b| b as f64 * total as f64 / old).collect();
        let mut budgets = exact.iter().map(|&e| (e.floor() as u32).max(1)).collect::<Vec<_>>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        let mut k = 0;
        while budgets.iter().sum::<u32>() < total {
            budgets[order[k % 3]] += 1;
            k += 1;
        }
        while budgets.iter().sum::<u32>() > total {
            let i = (0..3).max_by_key(|&i| budgets[i]).unwrap();
            budgets[i] -= 1;
        }
        Ok(PhaseTable {
            budgets: [budgets[0], budgets[1], budgets[2]],
            geometry_cutoff: (self.geometry_cutoff as f64 * total as f64 / old).round() as u32,
            ..self.clone()
        })
    }
}

/// Parameters of the dual-piecewise Gaussian weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    /// Spread left of the mode (`t ≤ T`).
    pub s1: f64,
    /// Spread right of the mode (`t > T`).
    pub s2: f64,
    /// Mode timestep `T`.
    pub mode: f64,
    /// Discrete normalizer: sum of the raw weight over `1..=MAX_TIMESTEP`.
    pub normalizer: f64,
}

fn bell(t: f64, mode: f64, s: f64) -> f64 {
    (-(t - mode) * (t - mode) / (2.0 * s * s)).exp() / (2.0 * PI * s * s).sqrt()
}

impl ScheduleParams {
    pub fn new(s1: f64, s2: f64, mode: f64) -> Result<Self> {
        if !(s1 > 0.0 && s2 > 0.0) || !s1.is_finite() || !s2.is_finite() {
            return Err(Error::Param(format!("spreads must be positive, got s1={s1}, s2={s2}")));
        }
        if !mode.is_finite() {
            return Err(Error::Param(format!("mode {mode}")));
        }
        let mut p = Self {
            s1,
            s2,
            mode,
            normalizer: 1.0,
        };
        p.normalizer = (1..=MAX_TIMESTEP).map(|t| p.raw(t)).sum();
        if !(p.normalizer > 0.0) {
            return Err(Error::Param(format!(
                "weight vanishes on [1, {MAX_TIMESTEP}] for mode {mode}"
            )));
        }
        Ok(p)
    }

    /// Unnormalized weight. The left branch owns `t == T`.
    pub fn raw(&self, t: u32) -> f64 {
        let t = t as f64;
        if t <= self.mode {
            bell(t, self.mode, self.s1)
        } else {
            bell(t, self.mode, self.s2)
        }
    }

    /// Normalized weight for timestep `t`.
    pub fn weight(&self, t: u32) -> Result<f64> {
        if !(1..=MAX_TIMESTEP).contains(&t) {
            return Err(Error::Range(t, MAX_TIMESTEP));
        }
        Ok(self.raw(t) / self.normalizer)
    }

    /// Normalized weights for timesteps `1..=MAX_TIMESTEP` (index `t - 1`).
    pub fn weights(&self) -> Vec<f64> {
        (1..=MAX_TIMESTEP).map(|t| self.raw(t) / self.normalizer).collect()
    }

    /// Normalized mass on each range of `table`.
    pub fn range_mass(&self, table: &PhaseTable) -> [f64; 3] {
        let w = self.weights();
        let mut m = [0.0; 3];
        for (k, slot) in m.iter_mut().enumerate() {
            let (lo, hi) = table.range(k);
            *slot = (lo..=hi).map(|t| w[t as usize - 1]).sum();
        }
        m
    }
}

/// Normalized dual-piecewise Gaussian weight `W_DG(t)`.
pub fn w_dg(t: u32, params: &ScheduleParams) -> Result<f64> {
    params.weight(t)
}

/// Squared mismatch between range masses and step shares.
pub fn fit_objective(params: &ScheduleParams, table: &PhaseTable) -> f64 {
    let mass = params.range_mass(table);
    let target = table.target_mass();
    (0..3).map(|k| (mass[k] - target[k]).powi(2)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchGrid {
    pub spread_min: f64,
    pub spread_max: f64,
    pub spread_step: f64,
    pub mode_step: f64,
    /// Coordinate-descent sweeps after the grid search.
    pub refine_iterations: u32,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            spread_min: 10.0,
            spread_max: 400.0,
            spread_step: 10.0,
            mode_step: 10.0,
            refine_iterations: 40,
        }
    }
}

impl SearchGrid {
    fn spreads(&self) -> Vec<f64> {
        grid_values(self.spread_min, self.spread_max, self.spread_step)
    }

    fn validate(&self) -> Result<()> {
        if !(self.spread_min > 0.0 && self.spread_max >= self.spread_min && self.spread_step > 0.0 && self.mode_step > 0.0) {
            return Err(Error::Param(format!("empty or invalid search grid {self:?}")));
        }
        Ok(())
    }
}

fn grid_values(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + step * k as f64).collect()
}

/// Attached to a fit whose objective stayed above [`FIT_WARNING_LEVEL`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWarning {
    pub objective: f64,
}

pub const FIT_WARNING_LEVEL: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFit {
    pub params: ScheduleParams,
    pub objective: f64,
    pub range_mass: [f64; 3],
    pub warning: Option<FitWarning>,
}

/// Per-(spread, mode) partial sums of one branch: mass on each range and in total.
type BranchSums = [f64; 4];

fn branch_sums(table: &PhaseTable, mode: f64, s: f64, left: bool) -> BranchSums {
    let mut out = [0.0; 4];
    for t in 1..=MAX_TIMESTEP {
        let tf = t as f64;
        if (tf <= mode) != left {
            continue;
        }
        let v = bell(tf, mode, s);
        out[3] += v;
        if t >= table.t_min() && t <= table.t_max() {
            out[table.range_of(t)] += v;
        }
    }
    out
}

/// Grid search over `(s1, s2, T)` followed by coordinate descent with step
/// halving. Deterministic for identical inputs regardless of thread count.
pub fn fit_schedule(table: &PhaseTable, grid: &SearchGrid) -> Result<ScheduleFit> {
    table.validate()?;
    grid.validate()?;
    let spreads = grid.spreads();
    let modes = grid_values(table.t_min() as f64, table.t_max() as f64, grid.mode_step);
    let target = table.target_mass();

    // Each mode is scored independently; the reduction below runs in grid order.
    let per_mode: Vec<(f64, f64, f64, f64)> = modes
        .par_iter()
        .map(|&mode| {
            let left: Vec<BranchSums> = spreads.iter().map(|&s| branch_sums(table, mode, s, true)).collect();
            let right: Vec<BranchSums> = spreads.iter().map(|&s| branch_sums(table, mode, s, false)).collect();
            let mut best = (f64::INFINITY, 0.0, 0.0, mode);
            for (i, l) in left.iter().enumerate() {
                for (j, r) in right.iter().enumerate() {
                    let z = l[3] + r[3];
                    let obj: f64 = (0..3).map(|k| ((l[k] + r[k]) / z - target[k]).powi(2)).sum();
                    if obj < best.0 {
                        best = (obj, spreads[i], spreads[j], mode);
                    }
                }
            }
            best
        })
        .collect();
    let (_, s1, s2, mode) = per_mode
        .into_iter()
        .fold((f64::INFINITY, 0.0, 0.0, 0.0), |acc, c| if c.0 < acc.0 { c } else { acc });

    let eval = |x: &[f64; 3]| -> f64 {
        ScheduleParams::new(x[0], x[1], x[2])
            .map(|p| fit_objective(&p, table))
            .unwrap_or(f64::INFINITY)
    };
    let lo = [1e-3, 1e-3, table.t_min() as f64];
    let hi = [f64::INFINITY, f64::INFINITY, table.t_max() as f64];
    let mut x = [s1, s2, mode];
    let mut fx = eval(&x);
    let mut step = [grid.spread_step / 2.0, grid.spread_step / 2.0, grid.mode_step / 2.0];
    for _ in 0..grid.refine_iterations {
        let mut improved = false;
        for k in 0..3 {
            for dir in [1.0, -1.0] {
                let mut y = x;
                y[k] = (y[k] + dir * step[k]).clamp(lo[k], hi[k]);
                let fy = eval(&y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }

    let params = ScheduleParams::new(x[0], x[1], x[2])?;
    let objective = fit_objective(&params, table);
    Ok(ScheduleFit {
        params,
        objective,
        range_mass: params.range_mass(table),
        warning: (objective > FIT_WARNING_LEVEL).then_some(FitWarning { objective }),
    })
}

/// Timestep for every training step `i = 1..=N` (stored at index `i - 1`).
///
/// `t(i)` minimizes `|Σ_{t=τ}^{MAX} W(t) − i/N|` over `τ` (ties go to the smaller
/// `τ`), then `offset` is added and the result clamped to `[t1, t4]`.
pub fn t_curve(params: &ScheduleParams, table: &PhaseTable, offset: i32) -> Vec<u32> {
    let w = params.weights();
    let n = table.total_steps();
    // upper[τ - 1] = Σ_{t=τ}^{MAX} W(t), accumulated from the top.
    let mut upper = vec![0.0; w.len()];
    let mut acc = 0.0;
    for t in (0..w.len()).rev() {
        acc += w[t];
        upper[t] = acc;
    }
    (1..=n)
        .map(|i| {
            let target = i as f64 / n as f64;
            let mut best = 0usize;
            let mut best_gap = f64::INFINITY;
            for (k, &u) in upper.iter().enumerate() {
                let gap = (u - target).abs();
                if gap < best_gap {
                    best_gap = gap;
                    best = k;
                }
            }
            let tau = best as i64 + 1 + offset as i64;
            tau.clamp(table.t_min() as i64, table.t_max() as i64) as u32
        })
        .collect()
}

/// Number of training steps whose curve value falls in each range.
pub fn range_occupancy(curve: &[u32], table: &PhaseTable) -> [u32; 3] {
    let mut occ = [0; 3];
    for &t in curve {
        occ[table.range_of(t)] += 1;
    }
    occ
}

/// Draws the timestep for training step `i` (1-based).
///
/// During warm-up (`i < geometry_cutoff`) the draw is uniform on
/// `[geometry_floor, t4]`. Afterwards it is uniform between the active range's
/// lower bound and the curve value, collapsing to the bound when the curve dips
/// below it.
pub fn sample_timestep<R: Rng>(i: u32, curve: &[u32], table: &PhaseTable, rng: &mut R) -> Result<u32> {
    if i == 0 || i as usize > curve.len() {
        return Err(Error::Param(format!("training step {i} outside [1, {}]", curve.len())));
    }
    if i < table.geometry_cutoff {
        let lo = table.geometry_floor.min(table.t_max());
        return Ok(rng.random_range(lo..=table.t_max()));
    }
    let t_dg = curve[i as usize - 1];
    let bound = table.lower_bounds[table.range_of(t_dg)];
    if t_dg <= bound {
        Ok(bound)
    } else {
        Ok(rng.random_range(bound..=t_dg))
    }
}
