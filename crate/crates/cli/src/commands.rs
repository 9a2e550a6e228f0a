//! Subcommand implementations.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use vtiprop_core::bench::{autotune as core_autotune, measure, AutotuneConfig};
use vtiprop_core::model::{interior_l2, interior_max_abs};
use vtiprop_core::perfmodel::{ci_estimate, flops_per_point, peak_fraction, resolution_points, Precision};
use vtiprop_core::synth::{smooth_random_arrays, smooth_random_model};
use vtiprop_core::{
    stability_dt, DampingProfile, EarthModel, Placement, Propagator, Real, SimConfig, XYWeights,
    ZWeights,
};

use crate::config::{self, DtValue, ModelSource, Resolved};
use crate::formats::{self, FileSink};
use crate::{
    AutotuneArgs, BenchArgs, CliError, CliResult, PerfmodelArgs, RunArgs, SynthArgs, WeightsArgs,
};

/// CLI flag > environment variable > config file > fallback.
fn resolve_threads(cli: Option<usize>, from_config: Option<usize>) -> CliResult<usize> {
    if let Some(t) = cli {
        return Ok(t);
    }
    if let Ok(v) = std::env::var("VTIPROP_THREADS") {
        return v
            .parse()
            .map_err(|_| CliError::invalid(format!("VTIPROP_THREADS must be a count, got \"{v}\"")));
    }
    Ok(from_config.unwrap_or(1))
}

fn resolve_placement(
    cli: Option<&str>,
    from_config: Option<Placement>,
) -> CliResult<Placement> {
    if let Some(s) = cli {
        return config::parse_placement(s);
    }
    if let Ok(v) = std::env::var("VTIPROP_PLACEMENT") {
        return config::parse_placement(&v);
    }
    Ok(from_config.unwrap_or(Placement::None))
}

fn config_dir(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn build_model<T: Real>(resolved: &Resolved) -> CliResult<EarthModel<T>> {
    let grid = &resolved.grid;
    let strict = resolved.strict_anisotropy;
    let model = match &resolved.model {
        ModelSource::Arrays { vz, eps, delta } => {
            let vz2: Vec<T> = vz.iter().map(|&v| T::from_f64(v * v)).collect();
            let e: Vec<T> = eps.iter().map(|&v| T::from_f64(v)).collect();
            let d: Vec<T> = delta.iter().map(|&v| T::from_f64(v)).collect();
            EarthModel::build(grid.clone(), &vz2, &e, &d, strict)?
        }
        ModelSource::Constant { vz, eps, delta } => {
            EarthModel::constant(grid.clone(), *vz, *eps, *delta, strict)?
        }
        ModelSource::Synthetic(s) => {
            smooth_random_model::<T>(grid, s.seed, (s.vz_min, s.vz_max), s.eps_max)?
        }
    };
    Ok(model)
}

fn sim_config(resolved: &Resolved, dt: f64, steps: u64, threads: usize, placement: Placement)
    -> SimConfig {
    let mut c = SimConfig::new(dt, steps);
    c.source_pos = resolved.source_pos;
    c.source_freq = resolved.source_freq;
    c.source_t0 = resolved.source_t0;
    c.source_amplitude = resolved.source_amplitude;
    c.volume_normalized_source = resolved.source_normalized;
    c.kernel = resolved.kernel;
    c.threads = threads;
    c.placement = placement;
    c.check_finite_every = resolved.check_finite_every;
    c
}

fn resolve_dt(spec: DtValue, dt_max: f64) -> f64 {
    match spec {
        DtValue::Fixed(v) => v,
        DtValue::AutoFraction(f) => f * dt_max,
    }
}

#[derive(Serialize)]
struct RunSummary {
    precision: String,
    grid: [usize; 3],
    radii: [usize; 2],
    kernel: String,
    threads: usize,
    dt: f64,
    dt_max: f64,
    /// dt / dt_max; < 1 means stable by the Gershgorin-style bound.
    stability_margin: f64,
    steps: u64,
    t_index: u64,
    interior_points: usize,
    elapsed_sec: f64,
    points_per_sec: f64,
    snapshots_emitted: u64,
    max_abs_p: f64,
    final_l2_p: f64,
}

pub fn run(args: RunArgs) -> CliResult<()> {
    let cfg = config::load(&args.config)?;
    let mut resolved = config::resolve(&cfg, config_dir(&args.config))?;
    if let Some(steps) = args.steps {
        resolved.steps = steps;
    }
    if let Some(name) = &args.kernel {
        resolved.kernel = config::kernel_override(name, &cfg.kernel)?;
    }
    let threads = resolve_threads(args.threads, resolved.threads)?;
    let placement = resolve_placement(args.placement.as_deref(), resolved.placement)?;
    let summary = match resolved.precision.as_str() {
        "double" => run_typed::<f64>(&resolved, threads, placement)?,
        _ => run_typed::<f32>(&resolved, threads, placement)?,
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serialization");
    println!("{text}");
    if let Some(path) = &resolved.summary_path {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::io(&format!("creating {}", dir.display()), e))?;
        }
        std::fs::write(path, &text)
            .map_err(|e| CliError::io(&format!("writing {}", path.display()), e))?;
    }
    Ok(())
}

fn run_typed<T: Real>(
    resolved: &Resolved,
    threads: usize,
    placement: Placement,
) -> CliResult<RunSummary> {
    let model = build_model::<T>(resolved)?;
    let damping =
        DampingProfile::<T>::build(&resolved.grid, resolved.damping_width, resolved.damping_alpha)?;
    let dt_max = stability_dt(&model, &resolved.weights);
    let dt = resolve_dt(resolved.dt, dt_max);
    let config = sim_config(resolved, dt, resolved.steps, threads, placement);
    let mut prop = Propagator::new(&model, &resolved.weights, &damping, config)?;

    let t0 = Instant::now();
    let stats = if resolved.snapshots.is_empty() {
        prop.run()?
    } else {
        let dir = resolved
            .out_dir
            .clone()
            .ok_or_else(|| CliError::invalid("snapshots need [output].directory"))?;
        let mut sink = FileSink::create(dir)?;
        prop.run_with_snapshots(&resolved.snapshots, &mut sink)?
    };
    let elapsed = t0.elapsed().as_secs_f64();

    let grid = &resolved.grid;
    let total_points = stats.steps_done as f64 * grid.n_interior() as f64;
    Ok(RunSummary {
        precision: T::PRECISION.to_string(),
        grid: [grid.nx(), grid.ny(), grid.nz()],
        radii: [grid.pad_xy(), grid.pad_z()],
        kernel: prop.config().kernel.describe(),
        threads,
        dt,
        dt_max,
        stability_margin: dt / dt_max,
        steps: stats.steps_done,
        t_index: stats.t_index,
        interior_points: grid.n_interior(),
        elapsed_sec: elapsed,
        points_per_sec: if elapsed > 0.0 { total_points / elapsed } else { 0.0 },
        snapshots_emitted: stats.snapshots_emitted,
        max_abs_p: interior_max_abs(prop.state().p_cur(), grid),
        final_l2_p: interior_l2(prop.state().p_cur(), grid),
    })
}

pub fn synth(args: SynthArgs) -> CliResult<()> {
    let cfg = config::load(&args.config)?;
    let resolved = config::resolve(&cfg, config_dir(&args.config))?;
    let synth = match &resolved.model {
        ModelSource::Synthetic(s) => s.clone(),
        _ => return Err(CliError::invalid("synth needs [model.synthetic] in the config")),
    };
    let (vz, eps, delta) = smooth_random_arrays(
        &resolved.grid,
        synth.seed,
        (synth.vz_min, synth.vz_max),
        synth.eps_max,
    );
    formats::write_model(&args.out, &resolved.grid, &vz, &eps, &delta)?;
    println!(
        "wrote {} ({}×{}×{} interior points + sidecar)",
        args.out.display(),
        resolved.grid.nx(),
        resolved.grid.ny(),
        resolved.grid.nz()
    );
    Ok(())
}

pub fn bench(args: BenchArgs) -> CliResult<()> {
    let cfg = config::load(&args.config)?;
    let mut resolved = config::resolve(&cfg, config_dir(&args.config))?;
    if let Some(name) = &args.kernel {
        resolved.kernel = config::kernel_override(name, &cfg.kernel)?;
    }
    let threads = resolve_threads(args.threads, resolved.threads)?;
    let placement = resolve_placement(args.placement.as_deref(), resolved.placement)?;
    let report = match resolved.precision.as_str() {
        "double" => bench_typed::<f64>(&resolved, &args, threads, placement)?,
        _ => bench_typed::<f32>(&resolved, &args, threads, placement)?,
    };
    println!("{report}");
    Ok(())
}

fn bench_typed<T: Real>(
    resolved: &Resolved,
    args: &BenchArgs,
    threads: usize,
    placement: Placement,
) -> CliResult<String> {
    let model = build_model::<T>(resolved)?;
    let damping =
        DampingProfile::<T>::build(&resolved.grid, resolved.damping_width, resolved.damping_alpha)?;
    let dt = resolve_dt(resolved.dt, stability_dt(&model, &resolved.weights));
    let config = sim_config(resolved, dt, 0, threads, placement);
    let report = measure(
        &model,
        &resolved.weights,
        &damping,
        &config,
        args.steps,
        args.warmup,
        args.reps,
    )?;
    Ok(serde_json::to_string_pretty(&report).expect("report serialization"))
}

fn parse_list(name: &str, csv: &str) -> CliResult<Vec<usize>> {
    csv.split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::invalid(format!("--{name} must be comma-separated counts: {csv}")))
}

pub fn autotune(args: AutotuneArgs) -> CliResult<()> {
    let cfg = config::load(&args.config)?;
    let resolved = config::resolve(&cfg, config_dir(&args.config))?;
    let threads = resolve_threads(args.threads, resolved.threads)?;
    let placement = resolve_placement(args.placement.as_deref(), resolved.placement)?;
    let tune = AutotuneConfig {
        block_z_candidates: parse_list("block-z", &args.block_z)?,
        block_y_candidates: parse_list("block-y", &args.block_y)?,
        steps: args.steps,
        warmup: args.warmup,
        reps: args.reps,
    };
    let text = match resolved.precision.as_str() {
        "double" => autotune_typed::<f64>(&resolved, &tune, threads, placement)?,
        _ => autotune_typed::<f32>(&resolved, &tune, threads, placement)?,
    };
    println!("{text}");
    Ok(())
}

fn autotune_typed<T: Real>(
    resolved: &Resolved,
    tune: &AutotuneConfig,
    threads: usize,
    placement: Placement,
) -> CliResult<String> {
    let model = build_model::<T>(resolved)?;
    let damping =
        DampingProfile::<T>::build(&resolved.grid, resolved.damping_width, resolved.damping_alpha)?;
    let dt = resolve_dt(resolved.dt, stability_dt(&model, &resolved.weights));
    let config = sim_config(resolved, dt, 0, threads, placement);
    let result = core_autotune(&model, &resolved.weights, &damping, &config, tune)?;
    Ok(serde_json::to_string_pretty(&result).expect("result serialization"))
}

#[derive(Serialize)]
struct PerfmodelOutput {
    flops_per_point: f64,
    intensity: vtiprop_core::perfmodel::CIEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    roofline: Option<vtiprop_core::perfmodel::RooflineSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    resolution: Option<vtiprop_core::perfmodel::ResolutionEstimate>,
}

pub fn perfmodel(args: PerfmodelArgs) -> CliResult<()> {
    if args.rxy < 1 || args.rz < 1 {
        return Err(CliError::invalid("stencil radii must be at least 1"));
    }
    let precision = match args.precision.as_str() {
        "single" => Precision::Single,
        "double" => Precision::Double,
        other => {
            return Err(CliError::invalid(format!(
                "precision must be \"single\" or \"double\", got \"{other}\""
            )));
        }
    };
    let intensity = ci_estimate(args.rxy, args.rz, precision);
    let roofline = match (args.peak_flops, args.peak_bandwidth) {
        (Some(fl), Some(bw)) => {
            Some(peak_fraction(args.points_per_sec.unwrap_or(0.0), &intensity, fl, bw))
        }
        (None, None) => None,
        _ => {
            return Err(CliError::invalid(
                "a roofline needs both --peak-flops and --peak-bandwidth",
            ));
        }
    };
    let resolution = args
        .modes
        .map(|m| resolution_points(m, args.order.unwrap_or(args.rxy), args.cp));
    let out = PerfmodelOutput {
        flops_per_point: flops_per_point(args.rxy, args.rz),
        intensity,
        roofline,
        resolution,
    };
    println!("{}", serde_json::to_string_pretty(&out).expect("output serialization"));
    Ok(())
}

pub fn weights(args: WeightsArgs) -> CliResult<()> {
    let xy = XYWeights::compute(args.rxy, args.h).map_err(CliError::from)?;
    let fmt = |row: &[f64]| {
        row.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
    };
    println!("combined_xy: {}", fmt(xy.w()));
    println!("one_dimensional: {}", fmt(&xy.one_dimensional()));
    match (args.dz, args.rz) {
        (Some(dz), Some(rz)) => {
            // A uniform interior large enough that the middle row is pure
            // central differencing.
            let n = 2 * rz + 1;
            let coords: Vec<f64> = (0..n + 2 * rz).map(|i| i as f64 * dz).collect();
            let z = ZWeights::compute(&coords, rz).map_err(CliError::from)?;
            println!("z_row_uniform: {}", fmt(z.row(rz)));
        }
        (None, None) => {}
        _ => return Err(CliError::invalid("printing a z row needs both --dz and --rz")),
    }
    Ok(())
}
