//! Snapshot requests and the sink interface the propagator emits through.
//!
//! The propagator extracts interior-only data (a full volume or a single
//! plane) at a step cadence and hands it to a [`SnapshotSink`]; what happens
//! to the bytes (files, sockets, test buffers) is the sink's business. Sink
//! failures abort the run and surface as [`crate::Error::Sink`].

use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Which wavefield a snapshot captures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveField {
    P,
    Q,
}

impl WaveField {
    pub fn as_str(self) -> &'static str {
        match self {
            WaveField::P => "p",
            WaveField::Q => "q",
        }
    }
}

/// Grid axis, for plane snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

/// What part of the interior a snapshot covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SnapshotExtent {
    /// The whole interior, x fastest.
    Volume,
    /// One interior plane; `index` is interior-relative along `axis`.
    Plane { axis: Axis, index: usize },
}

/// A standing request: capture `field` over `extent` every `every` steps
/// (i.e. at steps `every`, `2·every`, ...).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotRequest {
    pub field: WaveField,
    pub every: u64,
    pub extent: SnapshotExtent,
}

/// One extracted snapshot, borrowed from the propagator's scratch buffer.
///
/// `dims` are the logical extents of `data` in x-fastest order: 3 entries
/// for a volume, 2 for a plane (the in-plane axes in grid order).
#[derive(Debug)]
pub struct Snapshot<'a, T> {
    pub step: u64,
    /// Physical time `step · dt` in seconds.
    pub time: f64,
    pub field: WaveField,
    pub extent: SnapshotExtent,
    pub dims: Vec<usize>,
    pub data: &'a [T],
}

/// Consumer of extracted snapshots. Errors are plain messages; the
/// propagator attaches the failing step and aborts the run.
pub trait SnapshotSink<T: Real>: Send {
    fn emit(&mut self, snapshot: &Snapshot<'_, T>) -> Result<(), String>;
}

/// An owned copy of a snapshot, for sinks that keep data in memory.
#[derive(Debug, Clone)]
pub struct OwnedSnapshot<T> {
    pub step: u64,
    pub time: f64,
    pub field: WaveField,
    pub extent: SnapshotExtent,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

/// Sink that collects every snapshot in memory; handy in tests and for
/// post-processing inside a single process.
#[derive(Debug, Default)]
pub struct MemorySink<T> {
    pub snapshots: Vec<OwnedSnapshot<T>>,
}

impl<T: Real> MemorySink<T> {
    pub fn new() -> Self {
        Self { snapshots: Vec::new() }
    }
}

impl<T: Real> SnapshotSink<T> for MemorySink<T> {
    fn emit(&mut self, s: &Snapshot<'_, T>) -> Result<(), String> {
        self.snapshots.push(OwnedSnapshot {
            step: s.step,
            time: s.time,
            field: s.field,
            extent: s.extent,
            dims: s.dims.clone(),
            data: s.data.to_vec(),
        });
        Ok(())
    }
}
