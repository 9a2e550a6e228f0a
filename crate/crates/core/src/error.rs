use thiserror::Error;

/// Unified error type for the propagator library.
///
/// The CLI maps these onto process exit codes: everything that means "the
/// inputs don't describe a runnable simulation" (parameters, geometry, model
/// consistency) is a validation failure, `Instability` is its own failure
/// class, and `Sink` wraps I/O trouble reported by a snapshot consumer.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or combination of scalars is out of its documented range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Grid extents, padding, stencil radii, or coordinate arrays disagree.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Model fields are malformed (shape mismatch, non-positive νz², ...).
    #[error("model error: {0}")]
    Model(String),

    /// `strict_aniso` was requested and ε < δ somewhere.
    #[error(
        "anisotropy violation: ε − δ < 0 at {count} point(s), first at interior index \
         ({x}, {y}, {z})"
    )]
    Anisotropy { count: usize, x: usize, y: usize, z: usize },

    /// A point index fell outside the range a stencil application allows.
    #[error("index out of range: {0}")]
    Index(String),

    /// A non-finite value appeared in the wavefield.
    #[error("instability: non-finite value in field {field} at step {step}")]
    Instability { step: u64, field: &'static str },

    /// A snapshot sink (usually file output) failed.
    #[error("snapshot sink failed at step {step}: {message}")]
    Sink { step: u64, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
