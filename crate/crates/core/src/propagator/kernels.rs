//! The three interchangeable sweep kernels.
//!
//! Every kernel evaluates the identical per-point operation sequence, fixed
//! once and for all so kernel choice never changes results at the bit level:
//!
//! ```text
//!   lap  = w0·p[c]                                     (x–y stencil, h²-scaled)
//!   lap += w_l·((p[c+l·x] + p[c−l·x]) + (p[c+l·y] + p[c−l·y]))   l = 1..R_xy
//!   dzz  = Σ_{m=0..2·R_z} wz[m]·q[c + (m − R_z)·z]               m ascending
//!   l2   = lap·(1/h²)
//!   F_p  = νx²·l2 + νz²·dzz        F_q = νn²·l2 + νz²·dzz
//!   u⁺   = (2·u − u⁻) + dt²·F                 (for u = p and u = q alike)
//! ```
//!
//! (symmetric partners first, x pair before y pair, ascending offsets; the
//! pairing is also what the 5·r_xy + 4·r_z flop model counts). What differs
//! between kernels is purely traversal and staging:
//!
//! - `reference`: plain z→y→x triple loop over the interior, one point at a
//!   time, single-threaded — the baseline everything else is diffed against.
//!   Optionally accumulates the whole point update in f64 for test baselines.
//! - `blocked`: (z, y) tiles, loops y → z → x inside a tile, row-staged into
//!   scratch so the stride-1 x loops vectorize.
//! - `column`: (x, y) column tiles swept in z with a staged p-plane tile
//!   (apron r_xy) and a rolling 2·r_z+1 window of q per column — the
//!   accelerator-shaped variant, kept for comparison on CPUs.

use std::sync::atomic::{AtomicU32, Ordering};

use super::parallel::{BlockTile, ColTile, SendPtr};
use crate::real::Real;

/// Observer of kernel stores, for write-coverage instrumentation. The
/// default no-op methods vanish under monomorphization in production sweeps.
pub(crate) trait WriteLog: Sync {
    #[inline(always)]
    fn log_p(&self, _start: usize, _len: usize) {}
    #[inline(always)]
    fn log_q(&self, _start: usize, _len: usize) {}
}

/// Production path: no logging.
pub(crate) struct NoLog;

impl WriteLog for NoLog {}

/// Coverage path: counts stores per flat index.
pub(crate) struct CountLog<'a> {
    pub p: &'a [AtomicU32],
    pub q: &'a [AtomicU32],
}

impl WriteLog for CountLog<'_> {
    fn log_p(&self, start: usize, len: usize) {
        for c in &self.p[start..start + len] {
            c.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn log_q(&self, start: usize, len: usize) {
        for c in &self.q[start..start + len] {
            c.fetch_add(1, Ordering::Relaxed);
        }
    }
}

/// Everything a sweep needs for one step, with output arrays as raw base
/// pointers (workers write disjoint tiles).
pub(crate) struct KernelArgs<'a, T: Real> {
    pub p_cur: &'a [T],
    pub p_prev: &'a [T],
    pub q_cur: &'a [T],
    pub q_prev: &'a [T],
    pub p_next: SendPtr<T>,
    pub q_next: SendPtr<T>,
    pub vx2: &'a [T],
    pub vn2: &'a [T],
    pub vz2: &'a [T],
    /// Combined x–y weights [w0, w1, ..., w_R] at simulation precision.
    pub wxy: &'a [T],
    /// z rows, flat, `2·r_z+1` per interior plane.
    pub wz: &'a [T],
    pub r_xy: usize,
    pub r_z: usize,
    /// y stride (padded x extent) and z stride (padded plane size).
    pub sx: usize,
    pub sxy: usize,
    /// Interior ranges in padded coordinates.
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub z0: usize,
    pub z1: usize,
    pub inv_h2: T,
    pub dt2: T,
    /// f64 twins for the wide-accumulation reference path.
    pub inv_h2_f64: f64,
    pub dt2_f64: f64,
}

impl<T: Real> KernelArgs<'_, T> {
    #[inline(always)]
    fn z_row(&self, k: usize) -> &[T] {
        let width = 2 * self.r_z + 1;
        let ki = k - self.z0;
        &self.wz[ki * width..(ki + 1) * width]
    }
}

/// Tail of the per-point sequence shared verbatim by all kernels.
#[inline(always)]
fn combine<T: Real>(
    lap: T,
    dzz: T,
    vx2: T,
    vn2: T,
    vz2: T,
    pc: T,
    pp: T,
    qc: T,
    qp: T,
    inv_h2: T,
    dt2: T,
) -> (T, T) {
    let two = T::one() + T::one();
    let l2 = lap * inv_h2;
    let fp = vx2 * l2 + vz2 * dzz;
    let fq = vn2 * l2 + vz2 * dzz;
    ((two * pc - pp) + dt2 * fp, (two * qc - qp) + dt2 * fq)
}

/// Reference sweep: whole interior, one point at a time. `wide` evaluates
/// each point entirely in f64 and rounds once on store.
pub(crate) fn sweep_reference<T: Real, L: WriteLog>(a: &KernelArgs<'_, T>, wide: bool, log: &L) {
    for k in a.z0..a.z1 {
        let zrow = a.z_row(k);
        for j in a.y0..a.y1 {
            let base = k * a.sxy + j * a.sx;
            for i in a.x0..a.x1 {
                let c = base + i;
                let (pn, qn) = if wide {
                    point_wide(a, zrow, c)
                } else {
                    point_narrow(a, zrow, c)
                };
                // Safety: every interior point belongs to exactly one
                // traversal position; nothing else writes during this phase.
                unsafe {
                    *a.p_next.0.add(c) = pn;
                    *a.q_next.0.add(c) = qn;
                }
                log.log_p(c, 1);
                log.log_q(c, 1);
            }
        }
    }
}

#[inline(always)]
fn point_narrow<T: Real>(a: &KernelArgs<'_, T>, zrow: &[T], c: usize) -> (T, T) {
    let mut lap = a.wxy[0] * a.p_cur[c];
    for l in 1..=a.r_xy {
        let x_pair = a.p_cur[c + l] + a.p_cur[c - l];
        let y_pair = a.p_cur[c + l * a.sx] + a.p_cur[c - l * a.sx];
        lap = lap + a.wxy[l] * (x_pair + y_pair);
    }
    let zbase = c - a.r_z * a.sxy;
    let mut dzz = T::zero();
    for (m, &wm) in zrow.iter().enumerate() {
        dzz = dzz + wm * a.q_cur[zbase + m * a.sxy];
    }
    combine(
        lap,
        dzz,
        a.vx2[c],
        a.vn2[c],
        a.vz2[c],
        a.p_cur[c],
        a.p_prev[c],
        a.q_cur[c],
        a.q_prev[c],
        a.inv_h2,
        a.dt2,
    )
}

#[inline(always)]
fn point_wide<T: Real>(a: &KernelArgs<'_, T>, zrow: &[T], c: usize) -> (T, T) {
    let mut lap = a.wxy[0].to_f64() * a.p_cur[c].to_f64();
    for l in 1..=a.r_xy {
        let x_pair = a.p_cur[c + l].to_f64() + a.p_cur[c - l].to_f64();
        let y_pair = a.p_cur[c + l * a.sx].to_f64() + a.p_cur[c - l * a.sx].to_f64();
        lap += a.wxy[l].to_f64() * (x_pair + y_pair);
    }
    let zbase = c - a.r_z * a.sxy;
    let mut dzz = 0.0f64;
    for (m, &wm) in zrow.iter().enumerate() {
        dzz += wm.to_f64() * a.q_cur[zbase + m * a.sxy].to_f64();
    }
    let l2 = lap * a.inv_h2_f64;
    let fp = a.vx2[c].to_f64() * l2 + a.vz2[c].to_f64() * dzz;
    let fq = a.vn2[c].to_f64() * l2 + a.vz2[c].to_f64() * dzz;
    let pn = (2.0 * a.p_cur[c].to_f64() - a.p_prev[c].to_f64()) + a.dt2_f64 * fp;
    let qn = (2.0 * a.q_cur[c].to_f64() - a.q_prev[c].to_f64()) + a.dt2_f64 * fq;
    (T::from_f64(pn), T::from_f64(qn))
}

/// Row scratch for the blocked sweep, one per worker, reused across steps.
pub(crate) struct BlockScratch<T> {
    lap: Vec<T>,
    dzz: Vec<T>,
}

impl<T: Real> BlockScratch<T> {
    pub fn new(nx: usize) -> Self {
        Self { lap: vec![T::zero(); nx], dzz: vec![T::zero(); nx] }
    }
}

/// Cache-blocked sweep over one (z, y) tile: y outermost, z in the middle,
/// the stride-1 x loops innermost, staged through row scratch so each l-ring
/// pass is a clean vectorizable row operation. The staging changes only
/// *when* terms are computed, not the per-point accumulation order.
pub(crate) fn sweep_blocked<T: Real, L: WriteLog>(
    a: &KernelArgs<'_, T>,
    tile: &BlockTile,
    scratch: &mut BlockScratch<T>,
    log: &L,
) {
    let len = a.x1 - a.x0;
    let lap = &mut scratch.lap[..len];
    let dzz = &mut scratch.dzz[..len];
    let zw_width = 2 * a.r_z + 1;
    for j in tile.y0..tile.y1 {
        for k in tile.z0..tile.z1 {
            let start = k * a.sxy + j * a.sx + a.x0;
            let pc = &a.p_cur[start..start + len];
            for i in 0..len {
                lap[i] = a.wxy[0] * pc[i];
            }
            for l in 1..=a.r_xy {
                let wl = a.wxy[l];
                let east = &a.p_cur[start + l..start + l + len];
                let west = &a.p_cur[start - l..start - l + len];
                let north = &a.p_cur[start + l * a.sx..start + l * a.sx + len];
                let south = &a.p_cur[start - l * a.sx..start - l * a.sx + len];
                for i in 0..len {
                    lap[i] = lap[i] + wl * ((east[i] + west[i]) + (north[i] + south[i]));
                }
            }
            let zrow = a.z_row(k);
            let zstart = start - a.r_z * a.sxy;
            {
                let w0 = zrow[0];
                let q0 = &a.q_cur[zstart..zstart + len];
                for i in 0..len {
                    dzz[i] = w0 * q0[i];
                }
            }
            for (m, &wm) in zrow.iter().enumerate().take(zw_width).skip(1) {
                let qm = &a.q_cur[zstart + m * a.sxy..zstart + m * a.sxy + len];
                for i in 0..len {
                    dzz[i] = dzz[i] + wm * qm[i];
                }
            }
            let pp = &a.p_prev[start..start + len];
            let qc = &a.q_cur[start..start + len];
            let qp = &a.q_prev[start..start + len];
            let vx2 = &a.vx2[start..start + len];
            let vn2 = &a.vn2[start..start + len];
            let vz2 = &a.vz2[start..start + len];
            // Safety: rows of distinct (j, k) are disjoint and each (j, k)
            // belongs to exactly one tile of one worker.
            let pn = unsafe { a.p_next.row_mut(start, len) };
            let qn = unsafe { a.q_next.row_mut(start, len) };
            for i in 0..len {
                let (p, q) = combine(
                    lap[i], dzz[i], vx2[i], vn2[i], vz2[i], pc[i], pp[i], qc[i], qp[i], a.inv_h2,
                    a.dt2,
                );
                pn[i] = p;
                qn[i] = q;
            }
            log.log_p(start, len);
            log.log_q(start, len);
        }
    }
}

/// How many columns a column-kernel worker advances in lockstep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnWidth {
    One,
    Two,
}

impl ColumnWidth {
    pub fn count(self) -> usize {
        match self {
            ColumnWidth::One => 1,
            ColumnWidth::Two => 2,
        }
    }
}

/// Scratch for the column sweep: the staged p-plane tile (with apron) and
/// the per-column q windows.
pub(crate) struct ColumnScratch<T> {
    buf: Vec<T>,
    ring: Vec<T>,
}

impl<T: Real> ColumnScratch<T> {
    pub fn new(tile_x: usize, tile_y: usize, r_xy: usize, r_z: usize) -> Self {
        Self {
            buf: vec![T::zero(); (tile_x + 2 * r_xy) * (tile_y + 2 * r_xy)],
            ring: vec![T::zero(); tile_x * tile_y * (2 * r_z + 1)],
        }
    }
}

/// Copies the p-plane slice covering `tile` plus its r_xy apron at depth `k`
/// into `dst` (rows contiguous, width `tile_x + 2·r_xy`). Split out so tests
/// can compare the staged content against the source plane directly.
pub(crate) fn stage_plane_tile<T: Real>(
    dst: &mut [T],
    p_cur: &[T],
    tile: &ColTile,
    r_xy: usize,
    k: usize,
    sx: usize,
    sxy: usize,
) {
    let btx = (tile.x1 - tile.x0) + 2 * r_xy;
    let bty = (tile.y1 - tile.y0) + 2 * r_xy;
    for bj in 0..bty {
        let j = tile.y0 - r_xy + bj;
        let src = k * sxy + j * sx + (tile.x0 - r_xy);
        dst[bj * btx..(bj + 1) * btx].copy_from_slice(&p_cur[src..src + btx]);
    }
}

/// Column sweep over one (x, y) tile: all columns advance depth-in-lockstep;
/// per depth the p plane is staged once per tile and each column's ∂zz comes
/// out of its rolling window, primed with the first 2·r_z+1 planes and
/// shifted by one plane per depth.
pub(crate) fn sweep_column<T: Real, L: WriteLog>(
    a: &KernelArgs<'_, T>,
    tile: &ColTile,
    width: ColumnWidth,
    scratch: &mut ColumnScratch<T>,
    log: &L,
) {
    let tx = tile.x1 - tile.x0;
    let ty = tile.y1 - tile.y0;
    let ncol = tx * ty;
    let w = 2 * a.r_z + 1;
    let btx = tx + 2 * a.r_xy;
    let ring = &mut scratch.ring[..ncol * w];
    let buf = &mut scratch.buf[..btx * (ty + 2 * a.r_xy)];

    // Prime every column's window with the halo planes plus the first
    // interior planes: slots 0..w hold depths z0 − r_z .. z0 + r_z.
    for cy in 0..ty {
        for cx in 0..tx {
            let c = cy * tx + cx;
            let col = (tile.y0 + cy) * a.sx + (tile.x0 + cx);
            for m in 0..w {
                ring[c * w + m] = a.q_cur[(a.z0 - a.r_z + m) * a.sxy + col];
            }
        }
    }
    let mut head = 0usize;

    for k in a.z0..a.z1 {
        stage_plane_tile(buf, a.p_cur, tile, a.r_xy, k, a.sx, a.sxy);
        let zrow = a.z_row(k);
        let split = w - head;
        let step = width.count();
        let mut c = 0usize;
        while c < ncol {
            let last = (c + step).min(ncol);
            for cc in c..last {
                let cx = cc % tx;
                let cy = cc / tx;
                let bc = (cy + a.r_xy) * btx + (cx + a.r_xy);
                let mut lap = a.wxy[0] * buf[bc];
                for l in 1..=a.r_xy {
                    let x_pair = buf[bc + l] + buf[bc - l];
                    let y_pair = buf[bc + l * btx] + buf[bc - l * btx];
                    lap = lap + a.wxy[l] * (x_pair + y_pair);
                }
                // Window slots are a ring: ordered offset m lives at
                // (head + m) mod w; the two segments keep m ascending.
                let rs = &ring[cc * w..cc * w + w];
                let mut dzz = T::zero();
                for m in 0..split {
                    dzz = dzz + zrow[m] * rs[head + m];
                }
                for m in split..w {
                    dzz = dzz + zrow[m] * rs[m - split];
                }
                let idx = k * a.sxy + (tile.y0 + cy) * a.sx + (tile.x0 + cx);
                let qc = rs[(head + a.r_z) % w];
                let (pn, qn) = combine(
                    lap,
                    dzz,
                    a.vx2[idx],
                    a.vn2[idx],
                    a.vz2[idx],
                    buf[bc],
                    a.p_prev[idx],
                    qc,
                    a.q_prev[idx],
                    a.inv_h2,
                    a.dt2,
                );
                // Safety: one worker owns this tile; columns are disjoint.
                unsafe {
                    *a.p_next.0.add(idx) = pn;
                    *a.q_next.0.add(idx) = qn;
                }
                log.log_p(idx, 1);
                log.log_q(idx, 1);
            }
            c = last;
        }
        // Roll: drop depth k − r_z, load k + r_z + 1 (skip after the last
        // interior plane, where the window is no longer needed).
        if k + 1 < a.z1 {
            let incoming = (k + a.r_z + 1) * a.sxy;
            for cy in 0..ty {
                for cx in 0..tx {
                    let c = cy * tx + cx;
                    let col = (tile.y0 + cy) * a.sx + (tile.x0 + cx);
                    ring[c * w + head] = a.q_cur[incoming + col];
                }
            }
            head = (head + 1) % w;
        }
    }
}
