//! Thread-parallel, high-order finite-difference propagator for the reduced
//! elastic VTI wave system
//!
//! ```text
//!   ∂²p/∂t² = νx² (∂²p/∂x² + ∂²p/∂y²) + νz² ∂²q/∂z² + s(t) δ(x − xᵢ)
//!   ∂²q/∂t² = νn² (∂²p/∂x² + ∂²p/∂y²) + νz² ∂²q/∂z²
//! ```
//!
//! with νx² = νz²(1 + 2ε) and νn² = νz²(1 + 2δ). Space is discretized with a
//! symmetric high-order stencil in x–y (radius `r_xy`, uniform spacing `h`)
//! and an asymmetric per-plane stencil in z (radius `r_z`, arbitrary monotone
//! plane coordinates); time stepping is explicit second-order centered. A
//! sponge band multiplies the outer interior shell by a smooth gain < 1 each
//! step to emulate absorbing boundaries.
//!
//! Modules:
//! - [`stencil`]: finite-difference weight construction and a direct
//!   apply-at-a-point reference used as the test oracle.
//! - [`model`]: grid geometry (halo + x alignment padding), earth model
//!   (νz², ε, δ and the derived νx², νn²), sponge profile.
//! - [`propagator`]: wave state, source wavelet, time stepping, and the three
//!   interchangeable sweep kernels (reference / cache-blocked / column).
//! - [`perfmodel`]: computational-intensity and roofline calculator plus the
//!   resolution growth model.
//! - [`bench`]: throughput measurement, block-size autotuning, thread-scaling
//!   reports.
//! - [`synth`]: deterministic synthetic models for tests and benchmarks.
//!
//! Numerical contract: weights are always derived in f64 regardless of the
//! simulation precision, and every kernel evaluates the identical per-point
//! operation sequence, so kernel outputs are bit-identical for a given
//! precision and the choice of kernel is purely a performance decision.

pub mod bench;
pub mod error;
pub mod field;
pub mod model;
pub mod perfmodel;
pub mod propagator;
pub mod real;
pub mod snapshot;
pub mod stencil;
pub mod synth;

pub use error::{Error, Result};
pub use field::Field3;
pub use model::{
    extend_z_coords, DampingProfile, EarthModel, Grid, DEFAULT_DAMPING_ALPHA,
    DEFAULT_DAMPING_WIDTH,
};
pub use propagator::{
    ricker, stability_dt, ColumnWidth, KernelVariant, Placement, Propagator, SimConfig, WaveState,
    DEFAULT_BLOCK_Y, DEFAULT_BLOCK_Z, DEFAULT_RICKER_FREQ, DEFAULT_TILE_X, DEFAULT_TILE_Y,
};
pub use real::Real;
pub use snapshot::{Snapshot, SnapshotExtent, SnapshotRequest, SnapshotSink, WaveField};
pub use stencil::{StencilWeights, XYWeights, ZWeights};
