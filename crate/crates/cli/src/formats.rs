//! On-disk formats: binary model files, stencil-weight override files, and
//! the snapshot file sink.
//!
//! A model file holds three interior volumes (vz in m/s, ε, δ), x fastest,
//! little-endian f32, back to back; `<file>.json` next to it describes the
//! dims and layout and is validated against the configured grid on load.
//! Snapshots use the same pattern: raw values at simulation precision plus
//! a JSON sidecar.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vtiprop_core::snapshot::{Snapshot, SnapshotExtent, SnapshotSink};
use vtiprop_core::{Grid, Real};

use crate::{CliError, CliResult};

const MODEL_FIELDS: [&str; 3] = ["vz", "eps", "delta"];

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub h: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_coords: Option<Vec<f64>>,
    pub dtype: String,
    pub byte_order: String,
    pub fields: Vec<String>,
}

fn sidecar_path(bin: &Path) -> PathBuf {
    let mut name = bin.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    bin.with_file_name(name)
}

/// Writes the three interior arrays plus sidecar. `dz` is recorded when
/// the grid has uniform plane spacing.
pub fn write_model(
    path: &Path,
    grid: &Grid,
    vz: &[f64],
    eps: &[f64],
    delta: &[f64],
) -> CliResult<()> {
    let ctx = |what: &str| format!("writing {what} {}", path.display());
    let file = fs::File::create(path).map_err(|e| CliError::io(&ctx("model"), e))?;
    let mut w = BufWriter::new(file);
    for arr in [vz, eps, delta] {
        for &v in arr {
            w.write_all(&(v as f32).to_le_bytes())
                .map_err(|e| CliError::io(&ctx("model"), e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(&ctx("model"), e))?;

    let z = grid.z_coords();
    let steps: Vec<f64> = z.windows(2).map(|w| w[1] - w[0]).collect();
    let uniform = steps.windows(2).all(|s| (s[1] - s[0]).abs() < 1e-9 * s[0].abs());
    let interior_z: Vec<f64> = grid.interior_z().map(|k| z[k]).collect();
    let sidecar = ModelSidecar {
        nx: grid.nx(),
        ny: grid.ny(),
        nz: grid.nz(),
        h: grid.h(),
        dz: uniform.then(|| steps[0]),
        z_coords: (!uniform).then_some(interior_z),
        dtype: "f32".into(),
        byte_order: "little".into(),
        fields: MODEL_FIELDS.iter().map(|s| s.to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&sidecar)
        .expect("sidecar serialization cannot fail");
    fs::write(sidecar_path(path), text).map_err(|e| CliError::io(&ctx("sidecar for"), e))
}

/// Loads a model file, validating the sidecar against `grid`. Returns
/// (vz, eps, delta) interior arrays.
pub fn read_model(path: &Path, grid: &Grid) -> CliResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let sc_path = sidecar_path(path);
    let sc_text = fs::read_to_string(&sc_path)
        .map_err(|e| CliError::io(&format!("reading sidecar {}", sc_path.display()), e))?;
    let sc: ModelSidecar = serde_json::from_str(&sc_text)
        .map_err(|e| CliError::invalid(format!("{}: {e}", sc_path.display())))?;
    if (sc.nx, sc.ny, sc.nz) != (grid.nx(), grid.ny(), grid.nz()) {
        return Err(CliError::invalid(format!(
            "model file is {}×{}×{} but the configured grid is {}×{}×{}",
            sc.nx,
            sc.ny,
            sc.nz,
            grid.nx(),
            grid.ny(),
            grid.nz()
        )));
    }
    if sc.dtype != "f32" || sc.byte_order != "little" {
        return Err(CliError::invalid(format!(
            "unsupported model layout: dtype {} / {} byte order",
            sc.dtype, sc.byte_order
        )));
    }
    if sc.fields != MODEL_FIELDS {
        return Err(CliError::invalid(format!(
            "model file fields {:?} (expected {MODEL_FIELDS:?})",
            sc.fields
        )));
    }

    let n = grid.n_interior();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::io(&format!("reading model {}", path.display()), e))?;
    if bytes.len() != 3 * 4 * n {
        return Err(CliError::invalid(format!(
            "model file {} holds {} bytes, expected {} (3 volumes × {n} points × 4)",
            path.display(),
            bytes.len(),
            3 * 4 * n
        )));
    }
    let volume = |which: usize| -> Vec<f64> {
        let base = which * 4 * n;
        (0..n)
            .map(|i| {
                let at = base + 4 * i;
                f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
                    as f64
            })
            .collect()
    };
    Ok((volume(0), volume(1), volume(2)))
}

fn parse_numbers(path: &Path, text: &str) -> CliResult<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        rows.push(row.map_err(|e| {
            CliError::invalid(format!("{} line {}: {e}", path.display(), ln + 1))
        })?);
    }
    Ok(rows)
}

/// One combined x–y row `w0..wR`, whitespace-separated ('#' comments).
pub fn read_xy_weights(path: &Path) -> CliResult<Vec<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading weights {}", path.display()), e))?;
    Ok(parse_numbers(path, &text)?.into_iter().flatten().collect())
}

/// One z row per line, each `2·r_z+1` values; returned flat.
pub fn read_z_weights(path: &Path, r_z: usize) -> CliResult<Vec<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading weights {}", path.display()), e))?;
    let rows = parse_numbers(path, &text)?;
    let width = 2 * r_z + 1;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(CliError::invalid(format!(
                "{} row {} has {} values, expected {width}",
                path.display(),
                i + 1,
                row.len()
            )));
        }
    }
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Serialize)]
struct SnapshotSidecar<'a> {
    step: u64,
    time: f64,
    field: &'a str,
    extent: SnapshotExtent,
    dims: &'a [usize],
    dtype: &'a str,
    byte_order: &'a str,
}

/// Writes each snapshot as `<field>_step<NNNNNNN>[_<plane>].bin` + sidecar
/// in `dir`.
pub struct FileSink {
    dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl FileSink {
    pub fn create(dir: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&dir)
            .map_err(|e| CliError::io(&format!("creating {}", dir.display()), e))?;
        Ok(Self { dir, written: Vec::new() })
    }
}

impl<T: Real> SnapshotSink<T> for FileSink {
    fn emit(&mut self, snap: &Snapshot<'_, T>) -> Result<(), String> {
        let tag = match snap.extent {
            SnapshotExtent::Volume => String::new(),
            SnapshotExtent::Plane { axis, index } => format!("_{}{index}", axis.as_str()),
        };
        let stem = format!("{}_step{:07}{tag}", snap.field.as_str(), snap.step);
        let bin = self.dir.join(format!("{stem}.bin"));
        let write = || -> std::io::Result<()> {
            let mut w = BufWriter::new(fs::File::create(&bin)?);
            for &v in snap.data {
                let bits = v.bits();
                if T::BYTES == 4 {
                    w.write_all(&(bits as u32).to_le_bytes())?;
                } else {
                    w.write_all(&bits.to_le_bytes())?;
                }
            }
            w.flush()?;
            let sidecar = SnapshotSidecar {
                step: snap.step,
                time: snap.time,
                field: snap.field.as_str(),
                extent: snap.extent,
                dims: &snap.dims,
                dtype: if T::BYTES == 4 { "f32" } else { "f64" },
                byte_order: "little",
            };
            fs::write(
                self.dir.join(format!("{stem}.json")),
                serde_json::to_string_pretty(&sidecar).expect("sidecar serialization"),
            )
        };
        write().map_err(|e| format!("{}: {e}", bin.display()))?;
        self.written.push(bin);
        Ok(())
    }
}
