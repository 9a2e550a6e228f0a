//! Analytic performance model: flop counts, computational intensity, the
//! roofline-attainable fraction, and the resolution growth law.
//!
//! Per updated point the propagator spends 5·r_xy flops on the x–y stencil
//! (two symmetric pair sums, their combination, one multiply, one
//! accumulate per ring) and 4·r_z on the z stencil (multiply + accumulate
//! over 2·r_z+1 planes, constant terms dropped), so
//!
//! ```text
//!   flops_per_point = 5·r_xy + 4·r_z
//! ```
//!
//! Intensity brackets come from two cache scenarios for the same flops:
//!
//! - pessimistic: every distinct stencil input is fetched from memory —
//!   4·r_xy + 2·r_z values per point;
//! - optimistic: stencil reuse is perfect and only the compulsory traffic
//!   remains — 7 values per point (3 model coefficients, the two current
//!   fields, the two updated fields; the two previous-level reads alias the
//!   stores in a write-allocate cache).
//!
//! Both scale with the value size, so double precision halves them.

use serde::{Deserialize, Serialize};

/// Value precision, as the performance model sees it (bytes per value).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }
}

/// Flops spent per updated point (covers both fields p and q).
pub fn flops_per_point(r_xy: usize, r_z: usize) -> f64 {
    assert!(r_xy >= 1 && r_z >= 1, "stencil radii must be at least 1");
    (5 * r_xy + 4 * r_z) as f64
}

/// Computational-intensity bracket for one stencil configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CIEstimate {
    pub r_xy: usize,
    pub r_z: usize,
    pub precision: Precision,
    pub bytes_per_value: usize,
    pub flops_per_point: f64,
    /// Cold-cache bound: flops / ((4·r_xy + 2·r_z) values).
    pub ci_pessimistic: f64,
    /// Perfect-reuse bound: flops / (7 values).
    pub ci_optimistic: f64,
    /// The popular single-precision shorthand 0.3·(r_xy + r_z), rescaled by
    /// value size; reported alongside the exact formula, never asserted on.
    pub ci_optimistic_rule_of_thumb: f64,
}

/// Computes the intensity bracket in flops/byte.
pub fn ci_estimate(r_xy: usize, r_z: usize, precision: Precision) -> CIEstimate {
    let flops = flops_per_point(r_xy, r_z);
    let bytes = precision.bytes();
    let cold_values = (4 * r_xy + 2 * r_z) as f64;
    CIEstimate {
        r_xy,
        r_z,
        precision,
        bytes_per_value: bytes,
        flops_per_point: flops,
        ci_pessimistic: flops / (cold_values * bytes as f64),
        ci_optimistic: flops / (7.0 * bytes as f64),
        ci_optimistic_rule_of_thumb: 0.3 * (r_xy + r_z) as f64 * (4.0 / bytes as f64),
    }
}

/// Points per dimension needed to carry M modes per dimension at half-order
/// R with prefactor c_p: Ñ_d = c_p · M^(1 + 1/(2R)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionEstimate {
    pub modes: f64,
    pub half_order: usize,
    pub c_p: f64,
    pub points_per_dim: f64,
}

pub fn resolution_points(modes: f64, half_order: usize, c_p: f64) -> ResolutionEstimate {
    assert!(modes >= 1.0, "mode count must be at least 1");
    assert!(half_order >= 1, "half-order must be at least 1");
    assert!(c_p > 0.0, "prefactor must be positive");
    ResolutionEstimate {
        modes,
        half_order,
        c_p,
        points_per_dim: c_p * modes.powf(1.0 + 1.0 / (2.0 * half_order as f64)),
    }
}

/// Roofline placement of a measured throughput against machine peaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflineSummary {
    pub peak_flops_per_sec: f64,
    pub peak_bytes_per_sec: f64,
    /// The optimistic intensity used for the attainable bound.
    pub ci: f64,
    /// min(1, CI · peak_bw / peak_flops): the fraction of peak flops the
    /// memory system permits at this intensity.
    pub attainable_fraction: f64,
    pub achieved_flops_per_sec: f64,
    pub achieved_fraction_of_peak: f64,
    /// Convention caveat carried into every report.
    pub note: String,
}

/// Places a measured point rate on the roofline using the *exact*
/// optimistic intensity from `ci`.
pub fn peak_fraction(
    points_per_sec: f64,
    ci: &CIEstimate,
    peak_flops_per_sec: f64,
    peak_bytes_per_sec: f64,
) -> RooflineSummary {
    assert!(peak_flops_per_sec > 0.0 && peak_bytes_per_sec > 0.0, "machine peaks must be positive");
    assert!(points_per_sec >= 0.0, "measured rate cannot be negative");
    let achieved = points_per_sec * ci.flops_per_point;
    RooflineSummary {
        peak_flops_per_sec,
        peak_bytes_per_sec,
        ci: ci.ci_optimistic,
        attainable_fraction: (ci.ci_optimistic * peak_bytes_per_sec / peak_flops_per_sec).min(1.0),
        achieved_flops_per_sec: achieved,
        achieved_fraction_of_peak: achieved / peak_flops_per_sec,
        note: "attainable fraction uses the unrounded optimistic intensity \
               (flops_per_point / (7 values × bytes_per_value)); headline figures \
               derived from an intensity rounded to one decimal, or from a different \
               compulsory-traffic convention, can differ by a few percent."
            .to_string(),
    }
}
