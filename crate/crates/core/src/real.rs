use std::fmt;
use std::iter::Sum;

/// Floating-point element type of a simulation (f32 or f64).
///
/// Stencil weights and geometry are always *derived* in f64; this trait is
/// the single funnel through which they are narrowed to the simulation
/// precision, and it carries the few constants the performance model and the
/// I/O layer need (size in bytes, a human-readable precision name).
pub trait Real:
    num_traits::Float + Send + Sync + Sum + fmt::Debug + fmt::Display + 'static
{
    /// Size of one value in bytes (4 or 8); feeds the intensity model.
    const BYTES: usize;
    /// Precision label used in reports and snapshot sidecars.
    const PRECISION: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Raw bit pattern widened to u64, for exact-equality assertions.
    fn bits(self) -> u64;
}

impl Real for f32 {
    const BYTES: usize = 4;
    const PRECISION: &'static str = "single";

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn bits(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Real for f64 {
    const BYTES: usize = 8;
    const PRECISION: &'static str = "double";

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline(always)]
    fn bits(self) -> u64 {
        self.to_bits()
    }
}
