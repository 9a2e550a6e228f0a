//! TOML configuration schema and its resolution into core types.
//!
//! Unknown keys anywhere in the file are rejected, so typos fail loudly
//! instead of silently running defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use vtiprop_core::snapshot::{Axis, SnapshotExtent, SnapshotRequest, WaveField};
use vtiprop_core::{
    extend_z_coords, ColumnWidth, Grid, KernelVariant, Placement, StencilWeights, XYWeights,
    ZWeights,
};

use crate::formats;
use crate::{CliError, CliResult};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    /// single | double.
    #[serde(default = "default_precision")]
    pub precision: String,
    pub grid: GridSection,
    pub stencil: StencilSection,
    pub model: ModelSection,
    pub time: TimeSection,
    pub source: SourceSection,
    #[serde(default)]
    pub damping: DampingSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub snapshots: Vec<SnapshotSection>,
}

fn default_precision() -> String {
    "single".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Horizontal spacing, meters.
    pub h: f64,
    /// Uniform plane spacing — or give explicit `z_coords`.
    pub dz: Option<f64>,
    /// Interior plane depths, strictly increasing (halo planes are
    /// extrapolated with the edge spacing).
    pub z_coords: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StencilSection {
    pub radius_xy: usize,
    pub radius_z: usize,
    /// Override file: one whitespace-separated combined row `w0..wR`.
    pub xy_weights_file: Option<PathBuf>,
    /// Override file: one row of `2·radius_z+1` values per interior plane.
    pub z_weights_file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Binary model file with a .json sidecar.
    pub file: Option<PathBuf>,
    /// Constant model: vertical velocity, m/s.
    pub vz: Option<f64>,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub synthetic: Option<SyntheticSection>,
    #[serde(default)]
    pub strict_anisotropy: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub seed: u64,
    pub vz_min: f64,
    pub vz_max: f64,
    #[serde(default = "default_eps_max")]
    pub eps_max: f64,
}

fn default_eps_max() -> f64 {
    0.3
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    /// Either a number (seconds) or the string "auto".
    pub dt: DtSpec,
    /// Fraction of the stability bound used when dt = "auto".
    #[serde(default = "default_auto_fraction")]
    pub auto_fraction: f64,
    pub steps: u64,
}

fn default_auto_fraction() -> f64 {
    0.9
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum DtSpec {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    /// Interior-relative [ix, iy, iz].
    pub position: [usize; 3],
    #[serde(default = "default_frequency")]
    pub frequency: f64,
    #[serde(default)]
    pub t0: f64,
    /// Multiplier on the injected wavelet.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Divide the injected amplitude by the source cell volume.
    #[serde(default)]
    pub normalized: bool,
}

fn default_frequency() -> f64 {
    vtiprop_core::DEFAULT_RICKER_FREQ
}

fn default_amplitude() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DampingSection {
    pub width: usize,
    pub alpha: f64,
}

impl Default for DampingSection {
    fn default() -> Self {
        Self {
            width: vtiprop_core::DEFAULT_DAMPING_WIDTH,
            alpha: vtiprop_core::DEFAULT_DAMPING_ALPHA,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    /// reference | blocked | column.
    pub variant: String,
    pub block_z: usize,
    pub block_y: usize,
    pub tile_x: usize,
    pub tile_y: usize,
    /// Columns advanced in lockstep: 1 or 2.
    pub column_width: usize,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            variant: "blocked".into(),
            block_z: vtiprop_core::DEFAULT_BLOCK_Z,
            block_y: vtiprop_core::DEFAULT_BLOCK_Y,
            tile_x: vtiprop_core::DEFAULT_TILE_X,
            tile_y: vtiprop_core::DEFAULT_TILE_Y,
            column_width: 1,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub threads: Option<usize>,
    /// none | compact | scatter.
    pub placement: Option<String>,
    pub check_finite_every: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Snapshot directory (created if missing).
    pub directory: Option<PathBuf>,
    /// Also write the run summary JSON here.
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSection {
    /// p | q.
    pub field: String,
    pub every: u64,
    /// Omit for a full-volume snapshot.
    pub plane: Option<PlaneSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneSection {
    /// x | y | z.
    pub axis: String,
    /// Interior-relative index along the axis.
    pub index: usize,
}

/// How the earth model is obtained, after file loading.
pub enum ModelSource {
    /// Interior arrays: vz (m/s), ε, δ.
    Arrays { vz: Vec<f64>, eps: Vec<f64>, delta: Vec<f64> },
    Constant { vz: f64, eps: f64, delta: f64 },
    Synthetic(SyntheticSection),
}

/// A fully validated configuration in core types (precision-independent).
pub struct Resolved {
    pub precision: String,
    pub grid: Grid,
    pub weights: StencilWeights,
    pub model: ModelSource,
    pub strict_anisotropy: bool,
    pub damping_width: usize,
    pub damping_alpha: f64,
    pub dt: DtValue,
    pub steps: u64,
    pub source_pos: [usize; 3],
    pub source_freq: f64,
    pub source_t0: f64,
    pub source_amplitude: f64,
    pub source_normalized: bool,
    pub kernel: KernelVariant,
    pub threads: Option<usize>,
    pub placement: Option<Placement>,
    pub check_finite_every: u64,
    pub snapshots: Vec<SnapshotRequest>,
    pub out_dir: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
pub enum DtValue {
    Fixed(f64),
    /// Fraction of the stability bound.
    AutoFraction(f64),
}

pub fn load(path: &Path) -> CliResult<RunConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    toml::from_str(&text)
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

pub fn resolve(cfg: &RunConfigFile, config_dir: &Path) -> CliResult<Resolved> {
    if cfg.precision != "single" && cfg.precision != "double" {
        return Err(CliError::invalid(format!(
            "precision must be \"single\" or \"double\", got \"{}\"",
            cfg.precision
        )));
    }

    let g = &cfg.grid;
    let grid = match (&g.dz, &g.z_coords) {
        (Some(dz), None) => {
            Grid::uniform(g.nx, g.ny, g.nz, g.h, *dz, cfg.stencil.radius_xy, cfg.stencil.radius_z)?
        }
        (None, Some(coords)) => {
            let padded = if coords.len() == g.nz {
                extend_z_coords(coords, cfg.stencil.radius_z)?
            } else {
                coords.clone()
            };
            Grid::new(g.nx, g.ny, g.nz, g.h, padded, cfg.stencil.radius_xy, cfg.stencil.radius_z)?
        }
        _ => {
            return Err(CliError::invalid(
                "[grid] needs exactly one of `dz` or `z_coords`",
            ));
        }
    };

    let xy = match &cfg.stencil.xy_weights_file {
        Some(p) => {
            let row = formats::read_xy_weights(&config_dir.join(p))?;
            XYWeights::from_row(cfg.stencil.radius_xy, g.h, row)?
        }
        None => XYWeights::compute(cfg.stencil.radius_xy, g.h)?,
    };
    let z = match &cfg.stencil.z_weights_file {
        Some(p) => {
            let rows = formats::read_z_weights(&config_dir.join(p), cfg.stencil.radius_z)?;
            ZWeights::from_rows(grid.z_coords(), cfg.stencil.radius_z, rows)?
        }
        None => ZWeights::compute(grid.z_coords(), cfg.stencil.radius_z)?,
    };
    let weights = StencilWeights { xy, z };

    let m = &cfg.model;
    let model = match (&m.file, m.vz, &m.synthetic) {
        (Some(path), None, None) => {
            let loaded = formats::read_model(&config_dir.join(path), &grid)?;
            ModelSource::Arrays { vz: loaded.0, eps: loaded.1, delta: loaded.2 }
        }
        (None, Some(vz), None) => {
            let (eps, delta) = match (m.eps, m.delta) {
                (Some(e), Some(d)) => (e, d),
                _ => {
                    return Err(CliError::invalid(
                        "[model] with `vz` also needs `eps` and `delta`",
                    ));
                }
            };
            ModelSource::Constant { vz, eps, delta }
        }
        (None, None, Some(synth)) => ModelSource::Synthetic(synth.clone()),
        _ => {
            return Err(CliError::invalid(
                "[model] needs exactly one of `file`, `vz`, or `synthetic`",
            ));
        }
    };

    let dt = match &cfg.time.dt {
        DtSpec::Fixed(v) => DtValue::Fixed(*v),
        DtSpec::Named(s) if s == "auto" => {
            let f = cfg.time.auto_fraction;
            if !(f.is_finite() && f > 0.0 && f <= 1.0) {
                return Err(CliError::invalid(format!(
                    "[time].auto_fraction must be in (0, 1], got {f}"
                )));
            }
            DtValue::AutoFraction(f)
        }
        DtSpec::Named(s) => {
            return Err(CliError::invalid(format!(
                "[time].dt must be a number or \"auto\", got \"{s}\""
            )));
        }
    };

    let kernel = kernel_variant(&cfg.kernel)?;
    let placement = cfg.run.placement.as_deref().map(parse_placement).transpose()?;

    let mut snapshots = Vec::with_capacity(cfg.snapshots.len());
    for s in &cfg.snapshots {
        let field = match s.field.as_str() {
            "p" => WaveField::P,
            "q" => WaveField::Q,
            other => {
                return Err(CliError::invalid(format!(
                    "snapshot field must be \"p\" or \"q\", got \"{other}\""
                )));
            }
        };
        let extent = match &s.plane {
            None => SnapshotExtent::Volume,
            Some(p) => {
                let axis = match p.axis.as_str() {
                    "x" => Axis::X,
                    "y" => Axis::Y,
                    "z" => Axis::Z,
                    other => {
                        return Err(CliError::invalid(format!(
                            "snapshot axis must be x, y, or z, got \"{other}\""
                        )));
                    }
                };
                SnapshotExtent::Plane { axis, index: p.index }
            }
        };
        snapshots.push(SnapshotRequest { field, every: s.every, extent });
    }

    Ok(Resolved {
        precision: cfg.precision.clone(),
        grid,
        weights,
        model,
        strict_anisotropy: cfg.model.strict_anisotropy,
        damping_width: cfg.damping.width,
        damping_alpha: cfg.damping.alpha,
        dt,
        steps: cfg.time.steps,
        source_pos: cfg.source.position,
        source_freq: cfg.source.frequency,
        source_t0: cfg.source.t0,
        source_amplitude: cfg.source.amplitude,
        source_normalized: cfg.source.normalized,
        kernel,
        threads: cfg.run.threads,
        placement,
        check_finite_every: cfg.run.check_finite_every.unwrap_or(100),
        snapshots,
        out_dir: cfg.output.directory.as_ref().map(|p| config_dir.join(p)),
        summary_path: cfg.output.summary.as_ref().map(|p| config_dir.join(p)),
    })
}

fn kernel_variant(k: &KernelSection) -> CliResult<KernelVariant> {
    match k.variant.as_str() {
        "reference" => Ok(KernelVariant::Reference),
        "blocked" => Ok(KernelVariant::Blocked { block_z: k.block_z, block_y: k.block_y }),
        "column" => {
            let width = match k.column_width {
                1 => ColumnWidth::One,
                2 => ColumnWidth::Two,
                other => {
                    return Err(CliError::invalid(format!(
                        "column_width must be 1 or 2, got {other}"
                    )));
                }
            };
            Ok(KernelVariant::Column { tile_x: k.tile_x, tile_y: k.tile_y, width })
        }
        other => Err(CliError::invalid(format!(
            "kernel variant must be reference, blocked, or column, got \"{other}\""
        ))),
    }
}

pub fn parse_placement(s: &str) -> CliResult<Placement> {
    s.parse::<Placement>().map_err(|_| {
        CliError::invalid(format!("placement must be none, compact, or scatter, got \"{s}\""))
    })
}

/// Applies a `reference|blocked|column` name on top of the config's
/// kernel parameters.
pub fn kernel_override(name: &str, base: &KernelSection) -> CliResult<KernelVariant> {
    let mut section = KernelSection {
        variant: name.to_string(),
        block_z: base.block_z,
        block_y: base.block_y,
        tile_x: base.tile_x,
        tile_y: base.tile_y,
        column_width: base.column_width,
    };
    if name.is_empty() {
        section.variant = base.variant.clone();
    }
    kernel_variant(&section)
}
