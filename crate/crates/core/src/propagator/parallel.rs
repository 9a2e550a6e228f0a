//! Worker tiling, CPU topology, and thread placement.
//!
//! Parallelism is plain data decomposition: the interior is cut into tiles,
//! tiles are dealt round-robin to workers, and a worker only ever writes
//! points of its own tiles, so a step's kernel phase needs no locks — just
//! a barrier at the end. The same assignment is used to first-touch the
//! field pages, which is what makes `compact`/`scatter` placement matter on
//! NUMA machines.

use serde::{Deserialize, Serialize};

use crate::model::Grid;

/// Thread → CPU placement policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Fill cores package by package (neighboring workers share a socket).
    Compact,
    /// Spread workers round-robin across packages.
    Scatter,
    /// Leave scheduling to the OS.
    #[default]
    None,
}

impl Placement {
    pub fn as_str(self) -> &'static str {
        match self {
            Placement::Compact => "compact",
            Placement::Scatter => "scatter",
            Placement::None => "none",
        }
    }
}

impl std::str::FromStr for Placement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "compact" => Ok(Placement::Compact),
            "scatter" => Ok(Placement::Scatter),
            "none" => Ok(Placement::None),
            other => Err(format!("unknown placement '{other}' (compact|scatter|none)")),
        }
    }
}

/// Raw mutable pointer that may cross thread boundaries. Safety rests on the
/// tiling contract: concurrent users write strictly disjoint index ranges,
/// and phases that read what another phase wrote are barrier-separated.
pub(crate) struct SendPtr<T>(pub *mut T);

unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

impl<T> Clone for SendPtr<T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for SendPtr<T> {}

impl<T> SendPtr<T> {
    /// Reinterprets `len` elements starting at `start` as a mutable row.
    ///
    /// # Safety
    /// The range must lie inside the allocation and must not be aliased by
    /// any other live reference or concurrent access.
    #[inline(always)]
    pub unsafe fn row_mut<'a>(self, start: usize, len: usize) -> &'a mut [T] {
        std::slice::from_raw_parts_mut(self.0.add(start), len)
    }

    /// Shared view of the whole allocation.
    ///
    /// # Safety
    /// No concurrent mutable access to the viewed elements.
    #[inline(always)]
    pub unsafe fn view<'a>(self, len: usize) -> &'a [T] {
        std::slice::from_raw_parts(self.0 as *const T, len)
    }
}

/// A (z, y) tile for the cache-blocked kernel; x always spans the full
/// interior. Bounds are padded coordinates, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BlockTile {
    pub z0: usize,
    pub z1: usize,
    pub y0: usize,
    pub y1: usize,
}

/// An (x, y) tile of columns for the column kernel; each column spans the
/// whole interior depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ColTile {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

/// Cuts the interior into (z, y) tiles of at most `block_z × block_y`
/// planes×rows; edge tiles are clipped, never merged, so every interior
/// point lands in exactly one tile.
pub(crate) fn partition_blocks(grid: &Grid, block_z: usize, block_y: usize) -> Vec<BlockTile> {
    debug_assert!(block_z >= 1 && block_y >= 1);
    let mut tiles = Vec::new();
    let zr = grid.interior_z();
    let yr = grid.interior_y();
    let mut z0 = zr.start;
    while z0 < zr.end {
        let z1 = (z0 + block_z).min(zr.end);
        let mut y0 = yr.start;
        while y0 < yr.end {
            let y1 = (y0 + block_y).min(yr.end);
            tiles.push(BlockTile { z0, z1, y0, y1 });
            y0 = y1;
        }
        z0 = z1;
    }
    tiles
}

/// Cuts the interior into (x, y) column tiles of at most `tile_x × tile_y`.
pub(crate) fn partition_columns(grid: &Grid, tile_x: usize, tile_y: usize) -> Vec<ColTile> {
    debug_assert!(tile_x >= 1 && tile_y >= 1);
    let mut tiles = Vec::new();
    let xr = grid.interior_x();
    let yr = grid.interior_y();
    let mut y0 = yr.start;
    while y0 < yr.end {
        let y1 = (y0 + tile_y).min(yr.end);
        let mut x0 = xr.start;
        while x0 < xr.end {
            let x1 = (x0 + tile_x).min(xr.end);
            tiles.push(ColTile { x0, x1, y0, y1 });
            x0 = x1;
        }
        y0 = y1;
    }
    tiles
}

/// Indices of the tiles worker `w` owns under round-robin dealing.
#[inline]
pub(crate) fn worker_tiles(n_tiles: usize, worker: usize, threads: usize) -> impl Iterator<Item = usize> {
    (worker..n_tiles).step_by(threads.max(1))
}

/// Contiguous chunk `[start, end)` of `n` items for worker `w` of `threads`.
pub(crate) fn chunk_range(n: usize, worker: usize, threads: usize) -> (usize, usize) {
    let base = n / threads;
    let rem = n % threads;
    let start = worker * base + worker.min(rem);
    let len = base + usize::from(worker < rem);
    (start, start + len)
}

/// One schedulable CPU with its topology coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpuSlot {
    pub cpu: usize,
    pub package: usize,
    pub core: usize,
}

/// Machine CPU topology as far as placement needs it.
#[derive(Debug, Clone)]
pub struct CpuTopology {
    slots: Vec<CpuSlot>,
}

impl CpuTopology {
    /// Detects topology from /proc/cpuinfo on Linux; elsewhere (or if
    /// parsing fails) falls back to one package with one core per
    /// schedulable CPU.
    pub fn detect() -> Self {
        #[cfg(target_os = "linux")]
        if let Some(t) = Self::from_proc_cpuinfo() {
            return t;
        }
        let n = std::thread::available_parallelism().map(|v| v.get()).unwrap_or(1);
        Self { slots: (0..n).map(|cpu| CpuSlot { cpu, package: 0, core: cpu }).collect() }
    }

    #[cfg(target_os = "linux")]
    fn from_proc_cpuinfo() -> Option<Self> {
        let text = std::fs::read_to_string("/proc/cpuinfo").ok()?;
        let mut slots = Vec::new();
        let mut cpu: Option<usize> = None;
        let mut package = 0usize;
        let mut core: Option<usize> = None;
        let flush = |cpu: &mut Option<usize>, package: &mut usize, core: &mut Option<usize>,
                         slots: &mut Vec<CpuSlot>| {
            if let Some(c) = cpu.take() {
                slots.push(CpuSlot { cpu: c, package: *package, core: core.take().unwrap_or(c) });
                *package = 0;
            }
        };
        for line in text.lines() {
            let mut parts = line.splitn(2, ':');
            let key = parts.next().unwrap_or("").trim();
            let value = parts.next().unwrap_or("").trim();
            match key {
                "processor" => {
                    flush(&mut cpu, &mut package, &mut core, &mut slots);
                    cpu = value.parse().ok();
                }
                "physical id" => package = value.parse().unwrap_or(0),
                "core id" => core = value.parse().ok(),
                _ => {}
            }
        }
        flush(&mut cpu, &mut package, &mut core, &mut slots);
        if slots.is_empty() {
            None
        } else {
            Some(Self { slots })
        }
    }

    /// Number of schedulable CPUs (hardware threads).
    pub fn logical_cpus(&self) -> usize {
        self.slots.len()
    }

    /// Number of distinct (package, core) pairs.
    pub fn physical_cores(&self) -> usize {
        let mut pairs: Vec<(usize, usize)> =
            self.slots.iter().map(|s| (s.package, s.core)).collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs.len()
    }

    /// CPU ids in worker order for a placement policy, or None when the OS
    /// should schedule freely.
    pub fn placement_order(&self, placement: Placement) -> Option<Vec<usize>> {
        match placement {
            Placement::None => None,
            Placement::Compact => {
                let mut s = self.slots.clone();
                s.sort_by_key(|slot| (slot.package, slot.core, slot.cpu));
                Some(s.iter().map(|slot| slot.cpu).collect())
            }
            Placement::Scatter => {
                // Round-robin across packages, cores ordered within each.
                let mut packages: Vec<usize> = self.slots.iter().map(|s| s.package).collect();
                packages.sort_unstable();
                packages.dedup();
                let mut groups: Vec<Vec<usize>> = packages
                    .iter()
                    .map(|&p| {
                        let mut g: Vec<&CpuSlot> =
                            self.slots.iter().filter(|s| s.package == p).collect();
                        g.sort_by_key(|slot| (slot.core, slot.cpu));
                        g.iter().map(|slot| slot.cpu).collect()
                    })
                    .collect();
                let mut order = Vec::with_capacity(self.slots.len());
                let mut level = 0;
                while order.len() < self.slots.len() {
                    for g in &mut groups {
                        if level < g.len() {
                            order.push(g[level]);
                        }
                    }
                    level += 1;
                }
                Some(order)
            }
        }
    }
}

/// Pins the calling thread to one CPU. Best-effort: failures (cgroup
/// restrictions, exotic platforms) are silently ignored — placement is a
/// performance hint, never correctness.
pub(crate) fn pin_current_thread(cpu: usize) {
    #[cfg(target_os = "linux")]
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_ZERO(&mut set);
        libc::CPU_SET(cpu % libc::CPU_SETSIZE as usize, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set);
    }
    #[cfg(not(target_os = "linux"))]
    let _ = cpu;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::uniform(61, 33, 47, 10.0, 10.0, 2, 2).unwrap()
    }

    #[test]
    fn block_partition_covers_every_point_once() {
        let g = grid();
        let tiles = partition_blocks(&g, 28, 20);
        let mut seen = vec![0u32; g.padded_dims()[1] * g.padded_dims()[2]];
        for t in &tiles {
            assert!(t.z1 > t.z0 && t.y1 > t.y0);
            assert!(t.z1 - t.z0 <= 28 && t.y1 - t.y0 <= 20);
            for k in t.z0..t.z1 {
                for j in t.y0..t.y1 {
                    seen[k * g.padded_dims()[1] + j] += 1;
                }
            }
        }
        for k in 0..g.padded_dims()[2] {
            for j in 0..g.padded_dims()[1] {
                let want = u32::from(g.interior_z().contains(&k) && g.interior_y().contains(&j));
                assert_eq!(seen[k * g.padded_dims()[1] + j], want, "at (j={j}, k={k})");
            }
        }
        // 47 planes in blocks of 28 → 2; 33 rows in blocks of 20 → 2.
        assert_eq!(tiles.len(), 4);
    }

    #[test]
    fn column_partition_covers_every_column_once() {
        let g = grid();
        let tiles = partition_columns(&g, 32, 8);
        let mut count = 0usize;
        for t in &tiles {
            assert!(t.x1 - t.x0 <= 32 && t.y1 - t.y0 <= 8);
            count += (t.x1 - t.x0) * (t.y1 - t.y0);
        }
        assert_eq!(count, 61 * 33);
    }

    #[test]
    fn round_robin_dealing_is_a_partition() {
        let n = 17;
        let threads = 5;
        let mut owner = vec![usize::MAX; n];
        for w in 0..threads {
            for t in worker_tiles(n, w, threads) {
                assert_eq!(owner[t], usize::MAX);
                owner[t] = w;
            }
        }
        assert!(owner.iter().all(|&w| w < threads));
    }

    #[test]
    fn chunks_tile_the_range() {
        for n in [0usize, 1, 7, 64, 101] {
            for threads in [1usize, 2, 3, 8] {
                let mut next = 0;
                for w in 0..threads {
                    let (s, e) = chunk_range(n, w, threads);
                    assert_eq!(s, next);
                    next = e;
                }
                assert_eq!(next, n);
            }
        }
    }

    #[test]
    fn topology_and_placement_orders() {
        let topo = CpuTopology::detect();
        assert!(topo.logical_cpus() >= 1);
        assert!(topo.physical_cores() >= 1);
        assert!(topo.physical_cores() <= topo.logical_cpus());
        assert!(topo.placement_order(Placement::None).is_none());
        for p in [Placement::Compact, Placement::Scatter] {
            let order = topo.placement_order(p).unwrap();
            assert_eq!(order.len(), topo.logical_cpus());
            let mut sorted = order.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), order.len(), "placement order must not repeat CPUs");
        }
    }
}
