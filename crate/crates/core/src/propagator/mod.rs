//! Time stepping for the reduced VTI system.
//!
//! One step is four barrier-separated phases executed by a pool of workers
//! that persists for the whole run:
//!
//! 1. kernel sweep — every worker updates the `next` level of its own tiles
//!    from the shared `cur`/`prev` levels;
//! 2. source injection — worker 0 adds `dt²·s(tⁿ)` at the source point;
//! 3. damping — each worker scales its contiguous slab of interior planes,
//!    all three time levels of both fields, inside the sponge band;
//! 4. bookkeeping — worker 0 runs the (optional) finite check, rotates the
//!    buffer roles, and emits due snapshots.
//!
//! Buffers never move: rotation just reassigns which of the three
//! allocations plays prev/cur/next. On an instability or sink failure the
//! run aborts at the end of the offending step with the state left at the
//! last completed rotation.

pub(crate) mod kernels;
pub(crate) mod parallel;

use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Barrier, Mutex};

use crate::error::{Error, Result};
use crate::field::Field3;
use crate::model::{DampingProfile, EarthModel, Grid};
use crate::real::Real;
use crate::snapshot::{Snapshot, SnapshotExtent, SnapshotRequest, SnapshotSink, WaveField};
use crate::stencil::StencilWeights;

pub use kernels::ColumnWidth;
pub use parallel::{CpuSlot, CpuTopology, Placement};

use kernels::{
    sweep_blocked, sweep_column, sweep_reference, BlockScratch, ColumnScratch, CountLog,
    KernelArgs, NoLog, WriteLog,
};
use parallel::{
    chunk_range, partition_blocks, partition_columns, pin_current_thread, worker_tiles, BlockTile,
    ColTile, SendPtr,
};

/// Default Ricker center frequency in Hz.
pub const DEFAULT_RICKER_FREQ: f64 = 15.0;
/// Default cache-block extent along z.
pub const DEFAULT_BLOCK_Z: usize = 28;
/// Default cache-block extent along y.
pub const DEFAULT_BLOCK_Y: usize = 20;
/// Default column-tile extent along x.
pub const DEFAULT_TILE_X: usize = 32;
/// Default column-tile extent along y.
pub const DEFAULT_TILE_Y: usize = 8;

/// Ricker wavelet s(t) = (1 − 2π²f²(t−t0)²)·exp(−π²f²(t−t0)²).
pub fn ricker(t: f64, f: f64, t0: f64) -> f64 {
    let a = std::f64::consts::PI.powi(2) * f * f * (t - t0) * (t - t0);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Conservative explicit-step bound from the row sums of the stencils:
/// dt_max = 2 / √(max(νx², νn²)·S_xy/h² + max(νz²)·S_z) with
/// S_xy = |w0| + 4·Σ|w_l| and S_z = max_k Σ|w_k,l|. Halving h halves the
/// bound (the z table carries its 1/dz² internally and scales along).
pub fn stability_dt<T: Real>(model: &EarthModel<T>, weights: &StencilWeights) -> f64 {
    let w = weights.xy.w();
    let s_xy = w[0].abs() + 4.0 * w[1..].iter().map(|v| v.abs()).sum::<f64>();
    let mut s_z = 0.0f64;
    for ki in 0..weights.z.n_z() {
        s_z = s_z.max(weights.z.row(ki).iter().map(|v| v.abs()).sum());
    }
    let h = weights.xy.h();
    let horiz = model.max_horizontal_v2() * s_xy / (h * h);
    let vert = model.max_vz2() * s_z;
    2.0 / (horiz + vert).sqrt()
}

/// Which sweep implementation a simulation uses. All variants produce
/// bit-identical fields; see the kernel module docs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelVariant {
    /// Single-threaded triple loop; the correctness baseline.
    Reference,
    /// (z, y) cache tiles, x full-extent and stride-1 innermost.
    Blocked { block_z: usize, block_y: usize },
    /// (x, y) column tiles swept in depth with staged plane + rolling
    /// window; the accelerator-shaped design, kept for comparison.
    Column { tile_x: usize, tile_y: usize, width: ColumnWidth },
}

impl Default for KernelVariant {
    fn default() -> Self {
        KernelVariant::Blocked { block_z: DEFAULT_BLOCK_Z, block_y: DEFAULT_BLOCK_Y }
    }
}

impl KernelVariant {
    pub fn name(&self) -> &'static str {
        match self {
            KernelVariant::Reference => "reference",
            KernelVariant::Blocked { .. } => "blocked",
            KernelVariant::Column { .. } => "column",
        }
    }

    /// Short human/report form, e.g. `blocked(z=28,y=20)`.
    pub fn describe(&self) -> String {
        match self {
            KernelVariant::Reference => "reference".into(),
            KernelVariant::Blocked { block_z, block_y } => {
                format!("blocked(z={block_z},y={block_y})")
            }
            KernelVariant::Column { tile_x, tile_y, width } => {
                format!("column(x={tile_x},y={tile_y},w={})", width.count())
            }
        }
    }
}

/// Per-run simulation parameters (everything the propagator needs beyond
/// the model, weights, and damping profile).
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Time step in seconds; checked against [`stability_dt`] unless
    /// `allow_unstable` is set.
    pub dt: f64,
    pub n_steps: u64,
    /// Source point, interior-relative indices.
    pub source_pos: [usize; 3],
    /// Ricker center frequency, Hz.
    pub source_freq: f64,
    /// Ricker delay, seconds.
    pub source_t0: f64,
    /// Multiplier on the injected wavelet; 0 silences the source entirely.
    pub source_amplitude: f64,
    /// Divide the injected amplitude by the cell volume h²·Δz at the source.
    pub volume_normalized_source: bool,
    /// Harness-only: inject the source into q as well as p (used by the
    /// p ≡ q degeneracy test).
    pub inject_q: bool,
    pub kernel: KernelVariant,
    pub threads: usize,
    pub placement: Placement,
    /// Scan for non-finite values every this many steps (and on the final
    /// step); 0 disables the check.
    pub check_finite_every: u64,
    pub allow_unstable: bool,
    /// Evaluate the reference kernel's points entirely in f64 (test
    /// baselines only; ignored by the other kernels).
    pub wide_accum_reference: bool,
}

impl SimConfig {
    pub fn new(dt: f64, n_steps: u64) -> Self {
        Self {
            dt,
            n_steps,
            source_pos: [0, 0, 0],
            source_freq: DEFAULT_RICKER_FREQ,
            source_t0: 0.0,
            source_amplitude: 1.0,
            volume_normalized_source: false,
            inject_q: false,
            kernel: KernelVariant::default(),
            threads: 1,
            placement: Placement::None,
            check_finite_every: 0,
            allow_unstable: false,
            wide_accum_reference: false,
        }
    }
}

/// The three rotating time levels of both fields.
///
/// Exterior (halo and alignment pad) of every level is zero and the kernels
/// never write it; code that pokes the arrays directly (test harnesses
/// setting initial conditions) must keep it that way.
#[derive(Debug, Clone)]
pub struct WaveState<T: Real> {
    p: [Field3<T>; 3],
    q: [Field3<T>; 3],
    rot: usize,
    t_index: u64,
}

impl<T: Real> WaveState<T> {
    /// Zeroed state on the padded grid.
    pub fn allocate(grid: &Grid) -> Self {
        let dims = grid.padded_dims();
        Self {
            p: [Field3::zeros(dims), Field3::zeros(dims), Field3::zeros(dims)],
            q: [Field3::zeros(dims), Field3::zeros(dims), Field3::zeros(dims)],
            rot: 0,
            t_index: 0,
        }
    }

    #[inline]
    fn cur(&self) -> usize {
        self.rot
    }

    #[inline]
    fn prev(&self) -> usize {
        (self.rot + 2) % 3
    }

    #[inline]
    fn next(&self) -> usize {
        (self.rot + 1) % 3
    }

    pub fn p_cur(&self) -> &Field3<T> {
        &self.p[self.cur()]
    }

    pub fn p_prev(&self) -> &Field3<T> {
        &self.p[self.prev()]
    }

    pub fn p_next(&self) -> &Field3<T> {
        &self.p[self.next()]
    }

    pub fn q_cur(&self) -> &Field3<T> {
        &self.q[self.cur()]
    }

    pub fn q_prev(&self) -> &Field3<T> {
        &self.q[self.prev()]
    }

    pub fn q_next(&self) -> &Field3<T> {
        &self.q[self.next()]
    }

    pub fn p_cur_mut(&mut self) -> &mut Field3<T> {
        let c = self.cur();
        &mut self.p[c]
    }

    pub fn p_prev_mut(&mut self) -> &mut Field3<T> {
        let c = self.prev();
        &mut self.p[c]
    }

    pub fn q_cur_mut(&mut self) -> &mut Field3<T> {
        let c = self.cur();
        &mut self.q[c]
    }

    pub fn q_prev_mut(&mut self) -> &mut Field3<T> {
        let c = self.prev();
        &mut self.q[c]
    }

    /// Completed steps since allocation.
    pub fn t_index(&self) -> u64 {
        self.t_index
    }

    /// Swaps the cur/prev roles of both fields (O(1) handle swaps). The
    /// centered recurrence is time-symmetric, so stepping the swapped state
    /// forward traverses the original history backwards — the seed of the
    /// time-reversal test.
    pub fn reverse_time(&mut self) {
        let (c, p) = (self.cur(), self.prev());
        self.p.swap(c, p);
        self.q.swap(c, p);
    }

    /// All six buffers, for whole-state sweeps like exterior zeroing.
    pub fn all_fields_mut(&mut self) -> impl Iterator<Item = &mut Field3<T>> {
        self.p.iter_mut().chain(self.q.iter_mut())
    }
}

/// Per-point right-hand side (F_p, F_q) evaluated through the direct
/// apply-at oracles with f64 accumulation — the slow, obviously-correct
/// definition the kernels are compared against, also handy for consistent
/// Taylor starts in tests. Point indices are padded coordinates.
pub fn rhs_point<T: Real>(
    state: &WaveState<T>,
    model: &EarthModel<T>,
    weights: &StencilWeights,
    i: usize,
    j: usize,
    k: usize,
) -> Result<(f64, f64)> {
    let h = weights.xy.h();
    let inv_h2 = 1.0 / (h * h);
    let l2 = weights.xy.apply_at(state.p_cur(), i, j, k)? * inv_h2;
    let dzz = weights.z.apply_at(state.q_cur(), i, j, k)?;
    let vx2 = model.vx2().get(i, j, k).to_f64();
    let vn2 = model.vn2().get(i, j, k).to_f64();
    let vz2 = model.vz2().get(i, j, k).to_f64();
    Ok((vx2 * l2 + vz2 * dzz, vn2 * l2 + vz2 * dzz))
}

/// Outcome of a completed (or aborted) run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunStats {
    pub steps_done: u64,
    /// State time index after the run.
    pub t_index: u64,
    pub snapshots_emitted: u64,
}

/// Write-coverage report from an instrumented kernel phase.
#[derive(Debug)]
pub struct CoverageCounts {
    /// Stores per flat padded index, p field.
    pub p_writes: Vec<u32>,
    /// Stores per flat padded index, q field.
    pub q_writes: Vec<u32>,
    /// Every interior value was actually stored (NaN prefill gone) and finite.
    pub interior_values_finite: bool,
    /// No exterior value was stored (NaN prefill intact).
    pub exterior_untouched: bool,
}

/// A configured simulation: borrowed model/damping, derived kernel tables,
/// owned wave state, and the tile decomposition for the chosen kernel.
pub struct Propagator<'m, T: Real> {
    model: &'m EarthModel<T>,
    damping: &'m DampingProfile<T>,
    config: SimConfig,
    state: WaveState<T>,
    wxy: Vec<T>,
    wz: Vec<T>,
    inv_h2: T,
    dt2: T,
    inv_h2_f64: f64,
    dt2_f64: f64,
    dt_max: f64,
    src_idx: usize,
    src_scale: f64,
    tiles_block: Vec<BlockTile>,
    tiles_col: Vec<ColTile>,
    worker_cpus: Option<Vec<usize>>,
}

impl<'m, T: Real> Propagator<'m, T> {
    pub fn new(
        model: &'m EarthModel<T>,
        weights: &StencilWeights,
        damping: &'m DampingProfile<T>,
        config: SimConfig,
    ) -> Result<Self> {
        let grid = model.grid();
        if weights.xy.r_xy() != grid.pad_xy() {
            return Err(Error::Geometry(format!(
                "x–y radius {} does not match the grid halo {}",
                weights.xy.r_xy(),
                grid.pad_xy()
            )));
        }
        let h = grid.h();
        if (weights.xy.h() - h).abs() > 1e-12 * h {
            return Err(Error::Geometry(format!(
                "weights were derived for h = {} but the grid has h = {h}",
                weights.xy.h()
            )));
        }
        if weights.z.r_z() != grid.pad_z() || weights.z.n_z() != grid.nz() {
            return Err(Error::Geometry(format!(
                "z table ({} rows, radius {}) does not match the grid ({} planes, halo {})",
                weights.z.n_z(),
                weights.z.r_z(),
                grid.nz(),
                grid.pad_z()
            )));
        }
        if damping.gx().len() != grid.nx()
            || damping.gy().len() != grid.ny()
            || damping.gz().len() != grid.nz()
        {
            return Err(Error::Geometry(
                "damping profile was built for a different grid".into(),
            ));
        }
        if !(config.dt.is_finite() && config.dt > 0.0) {
            return Err(Error::Parameter(format!("dt must be positive, got {}", config.dt)));
        }
        if config.threads < 1 {
            return Err(Error::Parameter("thread count must be at least 1".into()));
        }
        if !(config.source_freq.is_finite() && config.source_freq > 0.0) {
            return Err(Error::Parameter(format!(
                "source frequency must be positive, got {}",
                config.source_freq
            )));
        }
        if !config.source_t0.is_finite() {
            return Err(Error::Parameter("source delay must be finite".into()));
        }
        if !config.source_amplitude.is_finite() {
            return Err(Error::Parameter("source amplitude must be finite".into()));
        }
        let interior = [grid.nx(), grid.ny(), grid.nz()];
        for (axis, (&pos, &n)) in config.source_pos.iter().zip(&interior).enumerate() {
            if pos >= n {
                return Err(Error::Parameter(format!(
                    "source position {pos} is outside the interior extent {n} on axis {axis}"
                )));
            }
        }
        match config.kernel {
            KernelVariant::Blocked { block_z, block_y } if block_z < 1 || block_y < 1 => {
                return Err(Error::Parameter("block extents must be at least 1".into()));
            }
            KernelVariant::Column { tile_x, tile_y, .. } if tile_x < 1 || tile_y < 1 => {
                return Err(Error::Parameter("column tile extents must be at least 1".into()));
            }
            _ => {}
        }
        let dt_max = stability_dt(model, weights);
        if !config.allow_unstable && config.dt > dt_max * (1.0 + 1e-12) {
            return Err(Error::Parameter(format!(
                "dt = {} exceeds the stability bound {dt_max:.6e}; reduce dt or set \
                 allow_unstable",
                config.dt
            )));
        }

        let wxy: Vec<T> = weights.xy.w().iter().map(|&v| T::from_f64(v)).collect();
        let wz: Vec<T> = weights.z.rows_flat().iter().map(|&v| T::from_f64(v)).collect();
        let inv_h2_f64 = 1.0 / (h * h);
        let dt2_f64 = config.dt * config.dt;
        let src_k = grid.interior_z().start + config.source_pos[2];
        let src_idx = grid.idx(
            grid.interior_x().start + config.source_pos[0],
            grid.interior_y().start + config.source_pos[1],
            src_k,
        );
        let src_scale = config.source_amplitude
            * if config.volume_normalized_source {
                1.0 / (h * h * grid.local_dz(src_k))
            } else {
                1.0
            };
        let (tiles_block, tiles_col) = match config.kernel {
            KernelVariant::Reference => (Vec::new(), Vec::new()),
            KernelVariant::Blocked { block_z, block_y } => {
                (partition_blocks(grid, block_z, block_y), Vec::new())
            }
            KernelVariant::Column { tile_x, tile_y, .. } => {
                (Vec::new(), partition_columns(grid, tile_x, tile_y))
            }
        };
        let worker_cpus = CpuTopology::detect().placement_order(config.placement);

        let mut prop = Self {
            model,
            damping,
            config,
            state: WaveState::allocate(grid),
            wxy,
            wz,
            inv_h2: T::from_f64(inv_h2_f64),
            dt2: T::from_f64(dt2_f64),
            inv_h2_f64,
            dt2_f64,
            dt_max,
            src_idx,
            src_scale,
            tiles_block,
            tiles_col,
            worker_cpus,
        };
        prop.first_touch();
        Ok(prop)
    }

    /// Zeroes every buffer with the same worker/tile assignment the kernel
    /// phase uses, so pages land on the NUMA node of the worker that will
    /// write them; the exterior is then zeroed from the coordinating thread.
    fn first_touch(&mut self) {
        let grid = self.model.grid().clone();
        let [px, py, _] = grid.padded_dims();
        let threads = self.config.threads;
        let n = self.state.p[0].len();
        let ptrs: Vec<SendPtr<T>> = self
            .state
            .all_fields_mut()
            .map(|f| SendPtr(f.as_mut_slice().as_mut_ptr()))
            .collect();
        let cpus = self.worker_cpus.as_deref();
        let kernel = self.config.kernel;
        let tiles_block = &self.tiles_block;
        let tiles_col = &self.tiles_col;
        let xr = grid.interior_x();
        std::thread::scope(|s| {
            for w in 0..threads {
                let ptrs = &ptrs;
                let grid = &grid;
                s.spawn(move || {
                    if let Some(order) = cpus {
                        pin_current_thread(order[w % order.len()]);
                    }
                    let touch_row = |start: usize, len: usize| {
                        for ptr in ptrs {
                            // Safety: rows/segments are disjoint across workers
                            // (same tiling argument as the kernel phase).
                            unsafe { ptr.row_mut(start, len) }.fill(T::zero());
                        }
                    };
                    match kernel {
                        KernelVariant::Reference => {
                            if w == 0 {
                                for k in grid.interior_z() {
                                    for j in grid.interior_y() {
                                        touch_row((k * py + j) * px, px);
                                    }
                                }
                            }
                        }
                        KernelVariant::Blocked { .. } => {
                            for ti in worker_tiles(tiles_block.len(), w, threads) {
                                let t = tiles_block[ti];
                                for k in t.z0..t.z1 {
                                    for j in t.y0..t.y1 {
                                        touch_row((k * py + j) * px, px);
                                    }
                                }
                            }
                        }
                        KernelVariant::Column { .. } => {
                            for ti in worker_tiles(tiles_col.len(), w, threads) {
                                let t = tiles_col[ti];
                                for k in grid.interior_z() {
                                    for j in t.y0..t.y1 {
                                        touch_row((k * py + j) * px + t.x0, t.x1 - t.x0);
                                    }
                                }
                            }
                        }
                    }
                });
            }
        });
        // Exterior pages (halo planes/rows, alignment columns) from here.
        for ptr in &ptrs {
            let data = unsafe { ptr.row_mut(0, n) };
            for k in 0..grid.padded_dims()[2] {
                for j in 0..py {
                    let interior_row =
                        grid.interior_z().contains(&k) && grid.interior_y().contains(&j);
                    let base = (k * py + j) * px;
                    if interior_row {
                        data[base..base + xr.start].fill(T::zero());
                        data[base + xr.end..base + px].fill(T::zero());
                    } else {
                        data[base..base + px].fill(T::zero());
                    }
                }
            }
        }
    }

    pub fn grid(&self) -> &Grid {
        self.model.grid()
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// The stability bound computed for this model/weights pair.
    pub fn dt_max(&self) -> f64 {
        self.dt_max
    }

    pub fn state(&self) -> &WaveState<T> {
        &self.state
    }

    /// Direct state access for harnesses that set initial conditions. The
    /// exterior-zero invariant is the caller's to keep.
    pub fn state_mut(&mut self) -> &mut WaveState<T> {
        &mut self.state
    }

    /// Advances exactly one step (phases 1–4, no snapshots).
    pub fn step(&mut self) -> Result<()> {
        self.advance(1, None).map(|_| ())
    }

    /// Advances `steps` steps without snapshots.
    pub fn advance_steps(&mut self, steps: u64) -> Result<u64> {
        self.advance(steps, None)
    }

    /// Runs the configured number of steps without snapshots.
    pub fn run(&mut self) -> Result<RunStats> {
        let snaps = self.advance(self.config.n_steps, None)?;
        Ok(RunStats {
            steps_done: self.config.n_steps,
            t_index: self.state.t_index,
            snapshots_emitted: snaps,
        })
    }

    /// Runs the configured number of steps, emitting the requested
    /// snapshots through `sink`.
    pub fn run_with_snapshots(
        &mut self,
        requests: &[SnapshotRequest],
        sink: &mut dyn SnapshotSink<T>,
    ) -> Result<RunStats> {
        let grid = self.model.grid();
        for req in requests {
            if req.every == 0 {
                return Err(Error::Parameter("snapshot cadence must be at least 1".into()));
            }
            if let SnapshotExtent::Plane { axis, index } = req.extent {
                let n = match axis {
                    crate::snapshot::Axis::X => grid.nx(),
                    crate::snapshot::Axis::Y => grid.ny(),
                    crate::snapshot::Axis::Z => grid.nz(),
                };
                if index >= n {
                    return Err(Error::Parameter(format!(
                        "snapshot plane index {index} is outside the interior extent {n} \
                         on axis {}",
                        axis.as_str()
                    )));
                }
            }
        }
        let steps = self.config.n_steps;
        let snaps = self.advance(steps, Some((requests, sink)))?;
        Ok(RunStats {
            steps_done: steps,
            t_index: self.state.t_index,
            snapshots_emitted: snaps,
        })
    }

    /// One instrumented kernel phase: prefills the `next` buffers with NaN,
    /// sweeps with per-store counting, and reports exactly-once coverage.
    /// Time does not advance; the `next` buffers are rezeroed afterwards.
    pub fn kernel_coverage(&mut self) -> CoverageCounts {
        let n = self.state.p[0].len();
        let next = self.state.next();
        self.state.p[next].fill(T::nan());
        self.state.q[next].fill(T::nan());

        let p_counts: Vec<AtomicU32> = (0..n).map(|_| AtomicU32::new(0)).collect();
        let q_counts: Vec<AtomicU32> = (0..n).map(|_| AtomicU32::new(0)).collect();
        {
            let log = CountLog { p: &p_counts, q: &q_counts };
            let rot = self.state.rot;
            let state_ptrs = StatePtrs::of(&mut self.state);
            let engine = self.engine();
            let threads = self.config.threads;
            std::thread::scope(|s| {
                for w in 0..threads {
                    let engine = &engine;
                    let log = &log;
                    let state_ptrs = &state_ptrs;
                    s.spawn(move || {
                        let mut scratch = engine.make_scratch();
                        let args = engine.kernel_args(state_ptrs, rot);
                        engine.sweep(w, &args, &mut scratch, log);
                    });
                }
            });
        }

        let grid = self.model.grid();
        let mut interior_values_finite = true;
        let mut exterior_untouched = true;
        {
            let pn = self.state.p_next().as_slice();
            let qn = self.state.q_next().as_slice();
            let [px, py, pz] = grid.padded_dims();
            for k in 0..pz {
                for j in 0..py {
                    for i in 0..px {
                        let at = (k * py + j) * px + i;
                        if grid.is_interior(i, j, k) {
                            interior_values_finite &=
                                pn[at].is_finite() && qn[at].is_finite();
                        } else {
                            exterior_untouched &= pn[at].is_nan() && qn[at].is_nan();
                        }
                    }
                }
            }
        }
        let next = self.state.next();
        self.state.p[next].fill(T::zero());
        self.state.q[next].fill(T::zero());
        CoverageCounts {
            p_writes: p_counts.into_iter().map(|c| c.into_inner()).collect(),
            q_writes: q_counts.into_iter().map(|c| c.into_inner()).collect(),
            interior_values_finite,
            exterior_untouched,
        }
    }

    /// Immutable kernel-phase context (everything but the rotating state).
    fn engine(&self) -> Engine<'_, T> {
        let grid = self.model.grid();
        let [px, py, _] = grid.padded_dims();
        Engine {
            vx2: self.model.vx2().as_slice(),
            vn2: self.model.vn2().as_slice(),
            vz2: self.model.vz2().as_slice(),
            wxy: &self.wxy,
            wz: &self.wz,
            r_xy: grid.pad_xy(),
            r_z: grid.pad_z(),
            sx: px,
            sxy: px * py,
            x0: grid.interior_x().start,
            x1: grid.interior_x().end,
            y0: grid.interior_y().start,
            y1: grid.interior_y().end,
            z0: grid.interior_z().start,
            z1: grid.interior_z().end,
            inv_h2: self.inv_h2,
            dt2: self.dt2,
            inv_h2_f64: self.inv_h2_f64,
            dt2_f64: self.dt2_f64,
            kernel: self.config.kernel,
            wide: self.config.wide_accum_reference,
            threads: self.config.threads,
            tiles_block: &self.tiles_block,
            tiles_col: &self.tiles_col,
            n: self.model.vx2().len(),
        }
    }

    /// The phased stepping loop. Returns the number of snapshots emitted.
    fn advance<'a>(
        &mut self,
        steps: u64,
        snapshots: Option<(&'a [SnapshotRequest], &'a mut dyn SnapshotSink<T>)>,
    ) -> Result<u64> {
        if steps == 0 {
            return Ok(0);
        }
        let state_ptrs = StatePtrs::of(&mut self.state);
        let engine = self.engine();
        let threads = self.config.threads;
        let model = self.model;
        let grid = model.grid();
        let damping = self.damping;
        let cpus = self.worker_cpus.as_deref();
        let dt = self.config.dt;
        let src = SourceSpec {
            idx: self.src_idx,
            freq: self.config.source_freq,
            t0: self.config.source_t0,
            scale: self.src_scale,
            inject_q: self.config.inject_q,
            dt2: self.dt2_f64,
        };
        let check_every = self.config.check_finite_every;

        let shared = Shared {
            rot: AtomicUsize::new(self.state.rot),
            abort: AtomicBool::new(false),
            steps_done: AtomicU64::new(0),
            snaps_emitted: AtomicU64::new(0),
            failure: Mutex::new(None),
            barrier: Barrier::new(threads),
            base_t: self.state.t_index,
        };

        std::thread::scope(|s| {
            for w in 1..threads {
                let engine = &engine;
                let shared = &shared;
                let state_ptrs = &state_ptrs;
                s.spawn(move || {
                    if let Some(order) = cpus {
                        pin_current_thread(order[w % order.len()]);
                    }
                    worker_loop(w, steps, engine, state_ptrs, shared, damping, grid, None);
                });
            }
            // Worker 0 runs on the calling thread and owns the serial duties.
            if let Some(order) = cpus {
                pin_current_thread(order[0]);
            }
            let mut serial =
                SerialDuties { src, check_every, dt, snapshots, scratch: Vec::new(), grid };
            worker_loop(
                0,
                steps,
                &engine,
                &state_ptrs,
                &shared,
                damping,
                grid,
                Some(&mut serial),
            );
        });

        self.state.rot = shared.rot.load(Ordering::Relaxed);
        let done = shared.steps_done.load(Ordering::Relaxed);
        self.state.t_index = shared.base_t + done;
        if let Some(err) = shared.failure.into_inner().unwrap() {
            return Err(err);
        }
        Ok(shared.snaps_emitted.load(Ordering::Relaxed))
    }
}

/// Raw base pointers to the six rotating buffers.
struct StatePtrs<T> {
    p: [SendPtr<T>; 3],
    q: [SendPtr<T>; 3],
}

impl<T: Real> StatePtrs<T> {
    fn of(state: &mut WaveState<T>) -> Self {
        Self {
            p: [
                SendPtr(state.p[0].as_mut_slice().as_mut_ptr()),
                SendPtr(state.p[1].as_mut_slice().as_mut_ptr()),
                SendPtr(state.p[2].as_mut_slice().as_mut_ptr()),
            ],
            q: [
                SendPtr(state.q[0].as_mut_slice().as_mut_ptr()),
                SendPtr(state.q[1].as_mut_slice().as_mut_ptr()),
                SendPtr(state.q[2].as_mut_slice().as_mut_ptr()),
            ],
        }
    }
}

/// Immutable per-run tables shared by all workers.
struct Engine<'a, T: Real> {
    vx2: &'a [T],
    vn2: &'a [T],
    vz2: &'a [T],
    wxy: &'a [T],
    wz: &'a [T],
    r_xy: usize,
    r_z: usize,
    sx: usize,
    sxy: usize,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    z0: usize,
    z1: usize,
    inv_h2: T,
    dt2: T,
    inv_h2_f64: f64,
    dt2_f64: f64,
    kernel: KernelVariant,
    wide: bool,
    threads: usize,
    tiles_block: &'a [BlockTile],
    tiles_col: &'a [ColTile],
    n: usize,
}

/// Per-worker kernel scratch, variant-dependent.
enum Scratch<T> {
    None,
    Block(BlockScratch<T>),
    Column(ColumnScratch<T>),
}

impl<'a, T: Real> Engine<'a, T> {
    fn make_scratch(&self) -> Scratch<T> {
        match self.kernel {
            KernelVariant::Reference => Scratch::None,
            KernelVariant::Blocked { .. } => Scratch::Block(BlockScratch::new(self.x1 - self.x0)),
            KernelVariant::Column { tile_x, tile_y, .. } => {
                Scratch::Column(ColumnScratch::new(tile_x, tile_y, self.r_xy, self.r_z))
            }
        }
    }

    /// Builds the kernel view for the current rotation.
    fn kernel_args(&self, ptrs: &StatePtrs<T>, rot: usize) -> KernelArgs<'a, T> {
        let cur = rot;
        let prev = (rot + 2) % 3;
        let next = (rot + 1) % 3;
        // Safety: cur/prev are only read and next only written during the
        // kernel phase; the barrier protocol keeps the phases exclusive.
        KernelArgs {
            p_cur: unsafe { ptrs.p[cur].view(self.n) },
            p_prev: unsafe { ptrs.p[prev].view(self.n) },
            q_cur: unsafe { ptrs.q[cur].view(self.n) },
            q_prev: unsafe { ptrs.q[prev].view(self.n) },
            p_next: ptrs.p[next],
            q_next: ptrs.q[next],
            vx2: self.vx2,
            vn2: self.vn2,
            vz2: self.vz2,
            wxy: self.wxy,
            wz: self.wz,
            r_xy: self.r_xy,
            r_z: self.r_z,
            sx: self.sx,
            sxy: self.sxy,
            x0: self.x0,
            x1: self.x1,
            y0: self.y0,
            y1: self.y1,
            z0: self.z0,
            z1: self.z1,
            inv_h2: self.inv_h2,
            dt2: self.dt2,
            inv_h2_f64: self.inv_h2_f64,
            dt2_f64: self.dt2_f64,
        }
    }

    /// Worker `w`'s share of the kernel phase.
    fn sweep<L: WriteLog>(
        &self,
        w: usize,
        args: &KernelArgs<'_, T>,
        scratch: &mut Scratch<T>,
        log: &L,
    ) {
        match (self.kernel, scratch) {
            (KernelVariant::Reference, _) => {
                if w == 0 {
                    sweep_reference(args, self.wide, log);
                }
            }
            (KernelVariant::Blocked { .. }, Scratch::Block(sc)) => {
                for ti in worker_tiles(self.tiles_block.len(), w, self.threads) {
                    sweep_blocked(args, &self.tiles_block[ti], sc, log);
                }
            }
            (KernelVariant::Column { width, .. }, Scratch::Column(sc)) => {
                for ti in worker_tiles(self.tiles_col.len(), w, self.threads) {
                    sweep_column(args, &self.tiles_col[ti], width, sc, log);
                }
            }
            _ => unreachable!("scratch kind always matches the kernel variant"),
        }
    }
}

struct SourceSpec {
    idx: usize,
    freq: f64,
    t0: f64,
    scale: f64,
    inject_q: bool,
    dt2: f64,
}

/// Cross-worker step coordination.
struct Shared {
    rot: AtomicUsize,
    abort: AtomicBool,
    steps_done: AtomicU64,
    snaps_emitted: AtomicU64,
    failure: Mutex<Option<Error>>,
    barrier: Barrier,
    base_t: u64,
}

impl Shared {
    fn fail(&self, err: Error) {
        let mut slot = self.failure.lock().unwrap();
        if slot.is_none() {
            *slot = Some(err);
        }
        self.abort.store(true, Ordering::Release);
    }
}

/// Worker 0's extra equipment.
struct SerialDuties<'a, 'g, T: Real> {
    src: SourceSpec,
    check_every: u64,
    dt: f64,
    snapshots: Option<(&'a [SnapshotRequest], &'a mut dyn SnapshotSink<T>)>,
    scratch: Vec<T>,
    grid: &'g Grid,
}

#[allow(clippy::too_many_arguments)]
fn worker_loop<T: Real>(
    w: usize,
    steps: u64,
    engine: &Engine<'_, T>,
    ptrs: &StatePtrs<T>,
    shared: &Shared,
    damping: &DampingProfile<T>,
    grid: &Grid,
    mut serial: Option<&mut SerialDuties<'_, '_, T>>,
) {
    let mut scratch = engine.make_scratch();
    for s in 0..steps {
        if shared.abort.load(Ordering::Acquire) {
            break;
        }
        let rot = shared.rot.load(Ordering::Relaxed);
        let next = (rot + 1) % 3;

        // Phase 1: kernel sweep into `next`.
        let args = engine.kernel_args(ptrs, rot);
        engine.sweep(w, &args, &mut scratch, &NoLog);
        shared.barrier.wait();

        // Phase 2: source injection (serial).
        if let Some(duties) = serial.as_deref_mut() {
            let t_n = (shared.base_t + s) as f64 * duties.dt;
            let amp = duties.src.dt2 * ricker(t_n, duties.src.freq, duties.src.t0)
                * duties.src.scale;
            // Safety: only worker 0 touches the source point in this phase.
            unsafe {
                let p = ptrs.p[next].0.add(duties.src.idx);
                *p = *p + T::from_f64(amp);
                if duties.src.inject_q {
                    let q = ptrs.q[next].0.add(duties.src.idx);
                    *q = *q + T::from_f64(amp);
                }
            }
        }
        shared.barrier.wait();

        // Phase 3: sponge band, all three levels of both fields.
        if !damping.is_identity() {
            apply_damping(w, engine, ptrs, damping, grid);
        }
        shared.barrier.wait();

        // Phase 4: bookkeeping (serial).
        if let Some(duties) = serial.as_deref_mut() {
            let new_t = shared.base_t + s + 1;
            let due_check = duties.check_every > 0
                && (new_t % duties.check_every == 0 || s + 1 == steps);
            let mut ok = true;
            if due_check {
                // Safety: all kernel/damping writes are barrier-ordered
                // before this read.
                let pn = unsafe { ptrs.p[next].view(engine.n) };
                let qn = unsafe { ptrs.q[next].view(engine.n) };
                if let Some(field) = first_non_finite(pn, qn) {
                    shared.fail(Error::Instability { step: new_t, field });
                    ok = false;
                }
            }
            if ok {
                shared.rot.store(next, Ordering::Relaxed);
                shared.steps_done.store(s + 1, Ordering::Relaxed);
                if let Some((requests, sink)) = duties.snapshots.as_mut() {
                    let scratch = &mut duties.scratch;
                    for req in requests.iter() {
                        if new_t % req.every != 0 {
                            continue;
                        }
                        let data = unsafe {
                            match req.field {
                                WaveField::P => ptrs.p[next].view(engine.n),
                                WaveField::Q => ptrs.q[next].view(engine.n),
                            }
                        };
                        let dims = extract_into(scratch, data, duties.grid, req.extent);
                        let snap = Snapshot {
                            step: new_t,
                            time: new_t as f64 * duties.dt,
                            field: req.field,
                            extent: req.extent,
                            dims,
                            data: scratch.as_slice(),
                        };
                        if let Err(message) = sink.emit(&snap) {
                            shared.fail(Error::Sink { step: new_t, message });
                            break;
                        }
                        shared.snaps_emitted.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
        }
        shared.barrier.wait();
    }
}

fn first_non_finite<T: Real>(p: &[T], q: &[T]) -> Option<&'static str> {
    if p.iter().any(|v| !v.is_finite()) {
        return Some("p");
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Some("q");
    }
    None
}

/// Applies the sponge gains to worker `w`'s slab of interior planes. Points
/// outside the band multiply by exactly 1 and are skipped; the per-point
/// expression is value · (gx·(gy·gz)), matching [`DampingProfile::g`].
fn apply_damping<T: Real>(
    w: usize,
    engine: &Engine<'_, T>,
    ptrs: &StatePtrs<T>,
    damping: &DampingProfile<T>,
    grid: &Grid,
) {
    let (k_lo, k_hi) = chunk_range(grid.nz(), w, engine.threads);
    let gx = damping.gx();
    let gy = damping.gy();
    let gz = damping.gz();
    let band = damping.width();
    let nx = engine.x1 - engine.x0;
    let one = T::one();
    for ptr in ptrs.p.iter().chain(ptrs.q.iter()) {
        for kz in k_lo..k_hi {
            let k = engine.z0 + kz;
            let gzv = gz[kz];
            for jy in 0..grid.ny() {
                let j = engine.y0 + jy;
                let gyz = gy[jy] * gzv;
                let start = k * engine.sxy + j * engine.sx + engine.x0;
                // Safety: slabs are disjoint across workers and the phase is
                // barrier-separated from every reader.
                let row = unsafe { ptr.row_mut(start, nx) };
                if gyz == one {
                    for i in (0..band).chain(nx - band..nx) {
                        row[i] = row[i] * gx[i];
                    }
                } else {
                    for i in 0..nx {
                        row[i] = row[i] * (gx[i] * gyz);
                    }
                }
            }
        }
    }
}

/// Copies an interior volume or plane into `out` (x-fastest) and returns
/// the logical dims of the copy.
fn extract_into<T: Real>(
    out: &mut Vec<T>,
    data: &[T],
    grid: &Grid,
    extent: SnapshotExtent,
) -> Vec<usize> {
    use crate::snapshot::Axis;
    let [px, py, _] = grid.padded_dims();
    let xr = grid.interior_x();
    out.clear();
    match extent {
        SnapshotExtent::Volume => {
            for k in grid.interior_z() {
                for j in grid.interior_y() {
                    let base = (k * py + j) * px;
                    out.extend_from_slice(&data[base + xr.start..base + xr.end]);
                }
            }
            vec![grid.nx(), grid.ny(), grid.nz()]
        }
        SnapshotExtent::Plane { axis: Axis::Z, index } => {
            let k = grid.interior_z().start + index;
            for j in grid.interior_y() {
                let base = (k * py + j) * px;
                out.extend_from_slice(&data[base + xr.start..base + xr.end]);
            }
            vec![grid.nx(), grid.ny()]
        }
        SnapshotExtent::Plane { axis: Axis::Y, index } => {
            let j = grid.interior_y().start + index;
            for k in grid.interior_z() {
                let base = (k * py + j) * px;
                out.extend_from_slice(&data[base + xr.start..base + xr.end]);
            }
            vec![grid.nx(), grid.nz()]
        }
        SnapshotExtent::Plane { axis: Axis::X, index } => {
            let i = grid.interior_x().start + index;
            for k in grid.interior_z() {
                for j in grid.interior_y() {
                    out.push(data[(k * py + j) * px + i]);
                }
            }
            vec![grid.ny(), grid.nz()]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::smooth_random_model;

    fn small_setup(
        kernel: KernelVariant,
        threads: usize,
        damp: bool,
    ) -> (EarthModel<f32>, StencilWeights, DampingProfile<f32>, SimConfig) {
        let grid = Grid::uniform(20, 13, 17, 10.0, 12.0, 2, 3).unwrap();
        let model = smooth_random_model::<f32>(&grid, 11, (1800.0, 3200.0), 0.25).unwrap();
        let weights = grid.stencil_weights().unwrap();
        let damping = if damp {
            DampingProfile::build(&grid, 4, 0.05).unwrap()
        } else {
            DampingProfile::disabled(&grid)
        };
        let mut config = SimConfig::new(0.5 * stability_dt(&model, &weights), 7);
        config.source_pos = [10, 6, 8];
        config.kernel = kernel;
        config.threads = threads;
        (model, weights, damping, config)
    }

    #[test]
    fn first_step_from_rest_is_just_the_source() {
        let (model, weights, damping, mut config) = small_setup(KernelVariant::Reference, 1, false);
        config.n_steps = 1;
        let mut prop = Propagator::new(&model, &weights, &damping, config.clone()).unwrap();
        prop.run().unwrap();
        let grid = model.grid();
        let src = (
            grid.interior_x().start + 10,
            grid.interior_y().start + 6,
            grid.interior_z().start + 8,
        );
        let expect = (config.dt * config.dt * ricker(0.0, config.source_freq, 0.0)) as f32;
        let p = prop.state().p_cur();
        assert_eq!(p.get(src.0, src.1, src.2), expect);
        let nonzero = p.as_slice().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 1, "only the source point moves on the first step");
        assert!(prop.state().q_cur().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(prop.state().t_index(), 1);
    }

    #[test]
    fn kernels_and_thread_counts_agree_bitwise() {
        let runs = [
            (KernelVariant::Reference, 1),
            (KernelVariant::Reference, 2),
            (KernelVariant::Blocked { block_z: 5, block_y: 4 }, 1),
            (KernelVariant::Blocked { block_z: 28, block_y: 20 }, 3),
            (KernelVariant::Column { tile_x: 7, tile_y: 3, width: ColumnWidth::One }, 2),
            (KernelVariant::Column { tile_x: 8, tile_y: 4, width: ColumnWidth::Two }, 3),
        ];
        let mut baseline: Option<(Vec<f32>, Vec<f32>)> = None;
        for (kernel, threads) in runs {
            let (model, weights, damping, config) = small_setup(kernel, threads, true);
            let mut prop = Propagator::new(&model, &weights, &damping, config).unwrap();
            prop.run().unwrap();
            let p = prop.state().p_cur().as_slice().to_vec();
            let q = prop.state().q_cur().as_slice().to_vec();
            assert!(p.iter().any(|&v| v != 0.0), "wave went somewhere");
            match &baseline {
                None => baseline = Some((p, q)),
                Some((bp, bq)) => {
                    assert_eq!(&p, bp, "{} differs in p", kernel.describe());
                    assert_eq!(&q, bq, "{} differs in q", kernel.describe());
                }
            }
        }
    }

    #[test]
    fn stepped_value_matches_the_apply_at_oracle() {
        // f64 run: kernel arithmetic and the oracle are the same ops in the
        // same order, so the comparison is exact.
        let grid = Grid::uniform(18, 14, 16, 10.0, 11.0, 2, 2).unwrap();
        let model = smooth_random_model::<f64>(&grid, 3, (2000.0, 3000.0), 0.2).unwrap();
        let weights = grid.stencil_weights().unwrap();
        let damping = DampingProfile::disabled(&grid);
        let mut config = SimConfig::new(0.4 * stability_dt(&model, &weights), 0);
        config.source_pos = [9, 7, 8];
        let mut prop = Propagator::new(&model, &weights, &damping, config.clone()).unwrap();
        prop.advance_steps(5).unwrap();

        let probe = (grid.interior_x().start + 5, grid.interior_y().start + 9,
            grid.interior_z().start + 3);
        let (fp, fq) =
            rhs_point(prop.state(), &model, &weights, probe.0, probe.1, probe.2).unwrap();
        let pc = prop.state().p_cur().get(probe.0, probe.1, probe.2);
        let pp = prop.state().p_prev().get(probe.0, probe.1, probe.2);
        let qc = prop.state().q_cur().get(probe.0, probe.1, probe.2);
        let qp = prop.state().q_prev().get(probe.0, probe.1, probe.2);
        let dt2 = config.dt * config.dt;
        let want_p = (2.0 * pc - pp) + dt2 * fp;
        let want_q = (2.0 * qc - qp) + dt2 * fq;

        prop.step().unwrap();
        assert_eq!(prop.state().p_cur().get(probe.0, probe.1, probe.2), want_p);
        assert_eq!(prop.state().q_cur().get(probe.0, probe.1, probe.2), want_q);
    }

    #[test]
    fn coverage_is_exactly_once_on_the_interior() {
        for (kernel, threads) in [
            (KernelVariant::Reference, 1),
            (KernelVariant::Blocked { block_z: 6, block_y: 5 }, 3),
            (KernelVariant::Column { tile_x: 6, tile_y: 5, width: ColumnWidth::Two }, 2),
        ] {
            let (model, weights, damping, config) = small_setup(kernel, threads, false);
            let mut prop = Propagator::new(&model, &weights, &damping, config).unwrap();
            let cov = prop.kernel_coverage();
            let grid = model.grid();
            let [px, py, pz] = grid.padded_dims();
            for k in 0..pz {
                for j in 0..py {
                    for i in 0..px {
                        let at = (k * py + j) * px + i;
                        let want = u32::from(grid.is_interior(i, j, k));
                        assert_eq!(cov.p_writes[at], want, "p at ({i},{j},{k})");
                        assert_eq!(cov.q_writes[at], want, "q at ({i},{j},{k})");
                    }
                }
            }
            assert!(cov.interior_values_finite);
            assert!(cov.exterior_untouched);
            // The probe leaves no residue: a subsequent run is unperturbed.
            assert!(prop.state().p_next().as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unstable_dt_is_rejected_up_front() {
        let (model, weights, damping, mut config) = small_setup(KernelVariant::Reference, 1, false);
        let dt_max = stability_dt(&model, &weights);
        config.dt = dt_max * 1.01;
        let err = match Propagator::new(&model, &weights, &damping, config.clone()) {
            Err(e) => e,
            Ok(_) => panic!("an over-limit dt must be rejected"),
        };
        assert!(matches!(err, Error::Parameter(_)), "got {err}");
        config.allow_unstable = true;
        assert!(Propagator::new(&model, &weights, &damping, config).is_ok());
    }

    #[test]
    fn blowup_is_detected_at_the_check_cadence() {
        let (model, weights, damping, mut config) = small_setup(KernelVariant::Reference, 1, false);
        config.dt = stability_dt(&model, &weights) * 2.0;
        config.allow_unstable = true;
        config.check_finite_every = 5;
        config.n_steps = 400;
        let mut prop = Propagator::new(&model, &weights, &damping, config).unwrap();
        let err = prop.run().unwrap_err();
        match err {
            Error::Instability { step, .. } => {
                assert!(step % 5 == 0 || step == 400, "step {step}");
                // The poisoned level was never rotated in.
                assert_eq!(prop.state().t_index(), step - 1);
                let poisoned = prop.state().p_next().as_slice().iter().any(|v| !v.is_finite())
                    || prop.state().q_next().as_slice().iter().any(|v| !v.is_finite());
                assert!(poisoned);
            }
            other => panic!("expected instability, got {other}"),
        }
    }

    #[test]
    fn ricker_shape() {
        // Peak of 1 at t = t0.
        assert_eq!(ricker(0.25, 15.0, 0.25), 1.0);
        // Zero crossing at t − t0 = 1/(√2·π·f).
        let f = 15.0;
        let tz = 1.0 / (std::f64::consts::SQRT_2 * std::f64::consts::PI * f);
        assert!(ricker(tz, f, 0.0).abs() < 1e-14);
        // Symmetric and decaying.
        assert_eq!(ricker(0.1, f, 0.0), ricker(-0.1, f, 0.0));
        assert!(ricker(0.5, f, 0.0).abs() < 1e-10);
    }

    #[test]
    fn rotation_roles() {
        let grid = Grid::uniform(4, 4, 4, 1.0, 1.0, 1, 1).unwrap();
        let mut st = WaveState::<f32>::allocate(&grid);
        st.p_cur_mut().set(2, 2, 2, 1.0);
        st.p_prev_mut().set(2, 2, 2, 2.0);
        assert_eq!(st.p_cur().get(2, 2, 2), 1.0);
        assert_eq!(st.p_prev().get(2, 2, 2), 2.0);
        st.reverse_time();
        assert_eq!(st.p_cur().get(2, 2, 2), 2.0);
        assert_eq!(st.p_prev().get(2, 2, 2), 1.0);
    }
}
