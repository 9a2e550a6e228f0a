//! Wall-clock throughput measurement, cache-block autotuning, and thread
//! scaling sweeps.
//!
//! Every measurement builds a fresh propagator (fresh first-touch layout),
//! runs `warmup` untimed steps, then times `steps` steps, repeated `reps`
//! times; the reported time is the median repetition and the noise band is
//! the max−min spread. Derived rates satisfy exactly
//! `sweeps_per_sec = steps / elapsed_sec`,
//! `points_per_sec = sweeps_per_sec · interior_points`, and
//! `modeled_flops_per_sec = points_per_sec · flops_per_point`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DampingProfile, EarthModel};
use crate::perfmodel::flops_per_point;
use crate::propagator::{CpuTopology, KernelVariant, Propagator, SimConfig};
use crate::real::Real;
use crate::stencil::StencilWeights;

/// One timed configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThroughputReport {
    /// Kernel description, e.g. `blocked(z=28,y=20)`.
    pub kernel: String,
    /// `"single"` or `"double"`.
    pub precision: String,
    /// Interior extents [nx, ny, nz].
    pub grid: [usize; 3],
    /// Stencil radii [r_xy, r_z].
    pub radii: [usize; 2],
    pub threads: usize,
    pub warmup_steps: u64,
    pub steps_timed: u64,
    /// Timed seconds of every repetition, in run order.
    pub rep_seconds: Vec<f64>,
    /// Median of `rep_seconds`.
    pub elapsed_sec: f64,
    /// max − min over `rep_seconds`; the resolution of any comparison
    /// between two reports.
    pub noise_band_sec: f64,
    pub sweeps_per_sec: f64,
    pub points_per_sec: f64,
    pub modeled_flops_per_point: u64,
    pub modeled_flops_per_sec: f64,
    /// RFC 3339 UTC time the measurement finished.
    pub timestamp: String,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Times `base` (its `n_steps` is ignored) on the given model.
pub fn measure<T: Real>(
    model: &EarthModel<T>,
    weights: &StencilWeights,
    damping: &DampingProfile<T>,
    base: &SimConfig,
    steps: u64,
    warmup: u64,
    reps: usize,
) -> Result<ThroughputReport> {
    if steps == 0 || reps == 0 {
        return Err(Error::Parameter(
            "throughput measurement needs at least one step and one repetition".into(),
        ));
    }
    let mut rep_seconds = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut prop = Propagator::new(model, weights, damping, base.clone())?;
        prop.advance_steps(warmup)?;
        let t0 = Instant::now();
        prop.advance_steps(steps)?;
        rep_seconds.push(t0.elapsed().as_secs_f64());
    }
    let mut sorted = rep_seconds.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let elapsed_sec = median(&sorted);
    let noise_band_sec = sorted[sorted.len() - 1] - sorted[0];

    let grid = model.grid();
    let flops_pp = flops_per_point(grid.pad_xy(), grid.pad_z());
    let sweeps_per_sec = steps as f64 / elapsed_sec;
    let points_per_sec = sweeps_per_sec * grid.n_interior() as f64;
    let modeled_flops_per_sec = points_per_sec * flops_pp;
    Ok(ThroughputReport {
        kernel: base.kernel.describe(),
        precision: T::PRECISION.to_string(),
        grid: [grid.nx(), grid.ny(), grid.nz()],
        radii: [grid.pad_xy(), grid.pad_z()],
        threads: base.threads,
        warmup_steps: warmup,
        steps_timed: steps,
        rep_seconds,
        elapsed_sec,
        noise_band_sec,
        sweeps_per_sec,
        points_per_sec,
        modeled_flops_per_point: flops_pp as u64,
        modeled_flops_per_sec,
        timestamp: chrono::Utc::now().to_rfc3339(),
    })
}

/// Candidate lists and measurement depth for the block-size sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutotuneConfig {
    pub block_z_candidates: Vec<usize>,
    pub block_y_candidates: Vec<usize>,
    pub steps: u64,
    pub warmup: u64,
    pub reps: usize,
}

impl Default for AutotuneConfig {
    fn default() -> Self {
        Self {
            block_z_candidates: vec![8, 16, 28, 32],
            block_y_candidates: vec![8, 16, 20, 32],
            steps: 10,
            warmup: 2,
            reps: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockCandidate {
    pub block_z: usize,
    pub block_y: usize,
    pub report: ThroughputReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutotuneResult {
    pub candidates: Vec<BlockCandidate>,
    pub best_block_z: usize,
    pub best_block_y: usize,
    pub best_points_per_sec: f64,
}

/// Sweeps the cross product of the candidate lists — always including the
/// (z=28, y=20) default — over the blocked kernel and picks the fastest.
pub fn autotune<T: Real>(
    model: &EarthModel<T>,
    weights: &StencilWeights,
    damping: &DampingProfile<T>,
    base: &SimConfig,
    tune: &AutotuneConfig,
) -> Result<AutotuneResult> {
    if tune.block_z_candidates.is_empty() || tune.block_y_candidates.is_empty() {
        return Err(Error::Parameter("autotune needs non-empty candidate lists".into()));
    }
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for &bz in &tune.block_z_candidates {
        for &by in &tune.block_y_candidates {
            if !pairs.contains(&(bz, by)) {
                pairs.push((bz, by));
            }
        }
    }
    if !pairs.contains(&(28, 20)) {
        pairs.push((28, 20));
    }

    let mut candidates = Vec::with_capacity(pairs.len());
    for (bz, by) in pairs {
        let mut config = base.clone();
        config.kernel = KernelVariant::Blocked { block_z: bz, block_y: by };
        let report = measure(model, weights, damping, &config, tune.steps, tune.warmup, tune.reps)?;
        candidates.push(BlockCandidate { block_z: bz, block_y: by, report });
    }
    let best = candidates
        .iter()
        .max_by(|a, b| a.report.points_per_sec.total_cmp(&b.report.points_per_sec))
        .expect("candidate list is non-empty");
    Ok(AutotuneResult {
        best_block_z: best.block_z,
        best_block_y: best.block_y,
        best_points_per_sec: best.report.points_per_sec,
        candidates,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRow {
    pub threads: usize,
    pub elapsed_sec: f64,
    pub points_per_sec: f64,
    /// Relative to the first row.
    pub speedup: f64,
    /// speedup · baseline_threads / threads.
    pub efficiency: f64,
    /// More threads than physical cores.
    pub oversubscribed: bool,
    pub report: ThroughputReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingReport {
    pub physical_cores: usize,
    pub logical_cpus: usize,
    pub rows: Vec<ScalingRow>,
}

impl ScalingReport {
    /// The scaling table as CSV (header plus one line per thread count).
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("threads,elapsed_sec,points_per_sec,speedup,efficiency,oversubscribed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.threads,
                r.elapsed_sec,
                r.points_per_sec,
                r.speedup,
                r.efficiency,
                r.oversubscribed
            ));
        }
        out
    }
}

/// Measures `base` at each thread count; the first entry is the speedup
/// baseline (put 1 first for classic strong scaling).
pub fn scaling_report<T: Real>(
    model: &EarthModel<T>,
    weights: &StencilWeights,
    damping: &DampingProfile<T>,
    base: &SimConfig,
    thread_counts: &[usize],
    steps: u64,
    warmup: u64,
    reps: usize,
) -> Result<ScalingReport> {
    if thread_counts.is_empty() {
        return Err(Error::Parameter("scaling report needs at least one thread count".into()));
    }
    let physical_cores = physical_core_count();
    let logical_cpus = logical_cpu_count();
    let mut rows: Vec<ScalingRow> = Vec::with_capacity(thread_counts.len());
    for &t in thread_counts {
        let mut config = base.clone();
        config.threads = t;
        let report = measure(model, weights, damping, &config, steps, warmup, reps)?;
        let (base_pps, base_threads) = rows
            .first()
            .map(|r: &ScalingRow| (r.points_per_sec, r.threads))
            .unwrap_or((report.points_per_sec, t));
        let speedup = report.points_per_sec / base_pps;
        rows.push(ScalingRow {
            threads: t,
            elapsed_sec: report.elapsed_sec,
            points_per_sec: report.points_per_sec,
            speedup,
            efficiency: speedup * base_threads as f64 / t as f64,
            oversubscribed: t > physical_cores,
            report,
        });
    }
    Ok(ScalingReport { physical_cores, logical_cpus, rows })
}

/// Physical cores on this machine (unique (package, core) pairs).
pub fn physical_core_count() -> usize {
    CpuTopology::detect().physical_cores().max(1)
}

/// Logical CPUs (hardware threads) on this machine.
pub fn logical_cpu_count() -> usize {
    CpuTopology::detect().logical_cpus().max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Grid;
    use crate::synth::smooth_random_model;

    #[test]
    fn report_identities_hold() {
        let grid = Grid::uniform(12, 10, 14, 10.0, 10.0, 2, 2).unwrap();
        let model = smooth_random_model::<f32>(&grid, 1, (2000.0, 3000.0), 0.2).unwrap();
        let weights = grid.stencil_weights().unwrap();
        let damping = DampingProfile::disabled(&grid);
        let mut config = SimConfig::new(0.5 * crate::propagator::stability_dt(&model, &weights), 0);
        config.source_pos = [6, 5, 7];
        let rep = measure(&model, &weights, &damping, &config, 4, 1, 3).unwrap();

        assert_eq!(rep.rep_seconds.len(), 3);
        assert_eq!(rep.sweeps_per_sec, 4.0 / rep.elapsed_sec);
        assert_eq!(rep.points_per_sec, rep.sweeps_per_sec * (12 * 10 * 14) as f64);
        assert_eq!(rep.modeled_flops_per_point, 5 * 2 + 4 * 2);
        assert_eq!(rep.modeled_flops_per_sec, rep.points_per_sec * 18.0);
        let mut sorted = rep.rep_seconds.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(rep.elapsed_sec, sorted[1]);
        assert_eq!(rep.noise_band_sec, sorted[2] - sorted[0]);
    }

    #[test]
    fn autotune_covers_default_pair() {
        let grid = Grid::uniform(10, 9, 11, 10.0, 10.0, 1, 1).unwrap();
        let model = smooth_random_model::<f32>(&grid, 2, (2000.0, 2500.0), 0.1).unwrap();
        let weights = grid.stencil_weights().unwrap();
        let damping = DampingProfile::disabled(&grid);
        let mut config = SimConfig::new(0.5 * crate::propagator::stability_dt(&model, &weights), 0);
        config.source_pos = [5, 4, 5];
        let tune = AutotuneConfig {
            block_z_candidates: vec![4],
            block_y_candidates: vec![4],
            steps: 2,
            warmup: 0,
            reps: 1,
        };
        let result = autotune(&model, &weights, &damping, &config, &tune).unwrap();
        assert_eq!(result.candidates.len(), 2);
        assert!(result
            .candidates
            .iter()
            .any(|c| c.block_z == 28 && c.block_y == 20));
        assert!(result.best_points_per_sec > 0.0);
    }
}
