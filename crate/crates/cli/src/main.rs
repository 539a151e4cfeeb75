//! `surfdefect` command-line front end. Lengths on the command line are in
//! millimetres unless the flag name says otherwise.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use surfdefect_core::estimator::Checkpoint;
use surfdefect_core::evaluation::{
    border_mask, defect_center_face, evaluate, export_error_map, reference_state, selection_mask, EvalReport,
    FlagOptions,
};
use surfdefect_core::mesh::{add_spherical_defect, generate_tablet, write_stl_file, Protrusion, SphericalDefect, StlFormat};
use surfdefect_core::pipeline::{
    check_same_provenance, load_clouds, read_mesh_with_tag, rerun_from_dir, run_pipeline, sweep, write_quartiles_csv,
    write_sweep_csv, EstimateOptions, Estimator, RunConfig, Stage, SweepAxis,
};
use surfdefect_core::raycast::build_bvh;
use surfdefect_core::registration::IcpOptions;
use surfdefect_core::sensor::{derive_seed, simulate_cloud, write_cloud, CameraPose};
use surfdefect_core::Point;

#[derive(Parser)]
#[command(name = "surfdefect", version, about = "Per-face surface deviation estimation against a CAD mesh")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a flat tablet mesh, optionally with a spherical defect.
    Mesh(MeshArgs),
    /// Simulate noisy point clouds of a mesh.
    Simulate(SimulateArgs),
    /// Fuse clouds into a per-face deviation estimate.
    Estimate(EstimateArgs),
    /// Score a checkpoint against a ground-truth mesh.
    Evaluate(EvaluateArgs),
    /// Generate, simulate, estimate and evaluate in one go.
    Pipeline(PipelineArgs),
    /// Recompute a pipeline run from its persisted artifacts.
    Rerun(RerunArgs),
    /// Run the pipeline over several values of one parameter.
    Sweep(SweepArgs),
    /// Print the default run configuration as TOML.
    Config,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn on(self) -> bool {
        matches!(self, OnOff::On)
    }
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long, default_value_t = 160.0)]
    width_mm: f64,
    #[arg(long, default_value_t = 100.0)]
    height_mm: f64,
    #[arg(long, default_value_t = 5.0)]
    mesh_size_mm: f64,
    /// Add a hemispherical defect of this radius.
    #[arg(long)]
    defect_radius_mm: Option<f64>,
    #[arg(long, value_parser = parse_xy, default_value = "0,0")]
    defect_center_mm: [f64; 2],
    #[arg(long)]
    inward: bool,
    #[arg(long)]
    ascii: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Ground-truth mesh to image.
    #[arg(long)]
    mesh: PathBuf,
    /// JSON file with `position` (m) and `quaternion` [w,x,y,z]; overrides
    /// --distance-mm and --heading-deg.
    #[arg(long)]
    pose: Option<PathBuf>,
    #[arg(long, default_value_t = 500.0)]
    distance_mm: f64,
    #[arg(long, default_value_t = 0.0)]
    heading_deg: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    n_clouds: u64,
    #[arg(long)]
    stride: Option<u32>,
    /// Noise scale `a` in metres.
    #[arg(long)]
    noise_a: Option<f64>,
    /// Output directory for `cloud_NNN.ply` and sidecars.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Nominal (CAD) mesh.
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    clouds: PathBuf,
    #[arg(long, default_value_t = 50.0)]
    sigma0_mm: f64,
    #[arg(long, default_value_t = 6.0)]
    border_mm: f64,
    #[arg(long, default_value = "info")]
    mode: String,
    #[arg(long, default_value = "ray")]
    correspondence: String,
    #[arg(long, value_enum, default_value_t = OnOff::Off)]
    icp: OnOff,
    /// Continue from this checkpoint instead of the prior.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory for `state_NNN.json` checkpoints.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    truth_mesh: PathBuf,
    #[arg(long)]
    nominal_mesh: PathBuf,
    #[arg(long, default_value_t = 6.0)]
    border_mm: f64,
    /// Report the estimate at the face nearest to this point.
    #[arg(long, value_parser = parse_xy)]
    defect_center_mm: Option<[f64; 2]>,
    #[arg(long, default_value_t = 1.0)]
    flag_threshold_mm: f64,
    #[arg(long, default_value_t = 3.0)]
    flag_z: f64,
    /// Report path; an error map is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_clouds: Option<usize>,
    #[arg(long)]
    distance_mm: Option<f64>,
    #[arg(long)]
    heading_deg: Option<f64>,
    #[arg(long)]
    mesh_size_mm: Option<f64>,
    #[arg(long)]
    sigma0_mm: Option<f64>,
    #[arg(long)]
    border_mm: Option<f64>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    correspondence: Option<String>,
    #[arg(long, value_enum)]
    icp: Option<OnOff>,
    #[arg(long)]
    stride: Option<u32>,
    #[arg(long)]
    no_defect: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.n_clouds {
            cfg.n_clouds = v;
        }
        if let Some(v) = self.distance_mm {
            cfg.distance_m = v * 1e-3;
        }
        if let Some(v) = self.heading_deg {
            cfg.heading_deg = v;
        }
        if let Some(v) = self.mesh_size_mm {
            cfg.mesh_size_mm = v;
        }
        if let Some(v) = self.sigma0_mm {
            cfg.sigma0_mm = v;
        }
        if let Some(v) = self.border_mm {
            cfg.border_mm = v;
        }
        if let Some(v) = &self.mode {
            cfg.mode = v.clone();
        }
        if let Some(v) = &self.correspondence {
            cfg.correspondence = v.clone();
        }
        if let Some(v) = self.icp {
            cfg.icp = v.on();
        }
        if let Some(v) = self.stride {
            cfg.camera.stride = v;
        }
        if self.no_defect {
            cfg.defect.enabled = false;
        }
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// TOML or JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Run directory; nothing is written when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    Estimate,
    Evaluate,
}

#[derive(Args)]
struct RerunArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, value_enum, default_value_t = StageArg::Evaluate)]
    stage: StageArg,
    /// Write the recomputed report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// distance (values in mm), heading (degrees) or seed.
    #[arg(long)]
    axis: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Directory for `sweep.csv`, `quartiles.csv` and per-run reports.
    #[arg(long)]
    out: PathBuf,
}

/// `x,y` pair.
fn parse_xy(s: &str) -> std::result::Result<[f64; 2], String> {
    match s.split(',').map(|v| v.trim().parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>() {
        Ok(v) if v.len() == 2 => Ok([v[0], v[1]]),
        _ => Err(format!("expected `x,y`, got `{s}`")),
    }
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(report)?).with_context(|| format!("writing {}", path.display()))
}

fn cmd_mesh(a: MeshArgs) -> Result<()> {
    let mut mesh = generate_tablet(a.width_mm * 1e-3, a.height_mm * 1e-3, a.mesh_size_mm * 1e-3)?;
    if let Some(r) = a.defect_radius_mm {
        let protrusion = if a.inward { Protrusion::Inward } else { Protrusion::Outward };
        let d = SphericalDefect::hemisphere([a.defect_center_mm[0] * 1e-3, a.defect_center_mm[1] * 1e-3], r * 1e-3, protrusion);
        mesh = add_spherical_defect(&mesh, &d)?;
    }
    let format = if a.ascii { StlFormat::Ascii } else { StlFormat::Binary };
    write_stl_file(&a.out, &mesh, format, None)?;
    println!("{}", serde_json::to_string(&mesh.report())?);
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let (mesh, tag) = read_mesh_with_tag(&a.mesh)?;
    let bvh = build_bvh(&mesh)?;
    let pose = match &a.pose {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let position: [f64; 3] = serde_json::from_value(v["position"].clone()).context("pose needs `position`")?;
            let q: [f64; 4] = serde_json::from_value(v["quaternion"].clone()).context("pose needs `quaternion`")?;
            CameraPose::from_wxyz(position, q)?
        }
        None => {
            let c = mesh.bbox();
            let centre = Point::from(std::array::from_fn::<f64, 3, _>(|i| (c.min[i] + c.max[i]) * 0.5));
            CameraPose::orbit(centre, a.distance_mm * 1e-3, a.heading_deg.to_radians())?
        }
    };
    let mut model = RunConfig::default().camera.model();
    if let Some(s) = a.stride {
        model.stride = s;
    }
    if let Some(n) = a.noise_a {
        model.noise.a = n;
    }
    model.validate()?;
    std::fs::create_dir_all(&a.out)?;
    for seq in 1..=a.n_clouds {
        let mut cloud = simulate_cloud(&mesh, &bvh, &pose, &model, derive_seed(a.seed, seq))?;
        cloud.seq = seq;
        cloud.config_hash = tag.clone();
        let path = a.out.join(format!("cloud_{seq:03}.ply"));
        write_cloud(&cloud, &path)?;
        println!("{} {} points", path.display(), cloud.len());
    }
    Ok(())
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let (mesh, tag) = read_mesh_with_tag(&a.mesh)?;
    let clouds = load_clouds(&a.clouds)?;
    if clouds.is_empty() {
        bail!("no .ply clouds in {}", a.clouds.display());
    }
    let hash = check_same_provenance(
        std::iter::once(tag.as_deref()).chain(clouds.iter().map(|c| c.config_hash.as_deref())),
    )?;
    let bvh = build_bvh(&mesh)?;
    let opts = EstimateOptions {
        sigma0: a.sigma0_mm * 1e-3,
        border: a.border_mm * 1e-3,
        mode: a.mode,
        correspondence: a.correspondence,
        icp: a.icp.on().then(IcpOptions::default),
    };
    let mut est = match &a.resume {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            check_same_provenance([hash.as_deref(), c.config_hash.as_deref()])?;
            Estimator::resume(&mesh, &bvh, opts, c.to_state()?)?
        }
        None => Estimator::new(&mesh, &bvh, opts)?,
    };
    std::fs::create_dir_all(&a.out)?;
    for cloud in &clouds {
        let d = *est.step(cloud)?;
        let path = a.out.join(format!("state_{:03}.json", est.state.k));
        Checkpoint::from_state(&est.state, hash.as_deref())?.save(&path)?;
        println!(
            "k={} cloud {}: {} points, {} used, {} faces observed",
            est.state.k, d.seq, d.points, d.used, d.faces_observed
        );
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.state)?;
    let (nominal, nominal_tag) = read_mesh_with_tag(&a.nominal_mesh)?;
    let (truth, truth_tag) = read_mesh_with_tag(&a.truth_mesh)?;
    let hash = check_same_provenance([ckpt.config_hash.as_deref(), nominal_tag.as_deref(), truth_tag.as_deref()])?;
    let state = ckpt.to_state()?;
    if state.mesh_fingerprint != nominal.fingerprint() {
        bail!("checkpoint was made for a different nominal mesh");
    }
    let reference = reference_state(&nominal, &truth, &build_bvh(&truth)?)?;
    let border = a.border_mm * 1e-3;
    let mask = if state.k == 0 {
        border_mask(&nominal, border)
    } else {
        selection_mask(&nominal, &state.hits, border)?
    };
    let defect_face = a
        .defect_center_mm
        .as_ref()
        .and_then(|c| defect_center_face(&nominal, [c[0] * 1e-3, c[1] * 1e-3]));
    let trace = if state.k > 0 { vec![ckpt.x_hat.clone()] } else { Vec::new() };
    let mut report = evaluate(
        &trace,
        &ckpt.x_hat,
        &ckpt.diag_p,
        &reference.x,
        &mask,
        defect_face,
        FlagOptions {
            threshold: a.flag_threshold_mm * 1e-3,
            z_score: a.flag_z,
        },
    )?;
    report.config_hash = hash;
    write_report(&a.out, &report)?;
    export_error_map(&nominal, &report.per_face_error, a.out.with_extension("csv"))?;
    print_summary(&report);
    Ok(())
}

fn print_summary(r: &EvalReport) {
    let mm = |v: f64| v * 1e3;
    println!("faces selected      {}", r.n_selected);
    println!("initial rmse        {:.4} mm", mm(r.initial_rmse));
    if let Some(last) = r.rmse_trace.last() {
        println!("final rmse          {:.4} mm (k={})", mm(*last), r.rmse_trace.len());
    }
    println!("mean |error|        {:.4} mm (std {:.4})", mm(r.abs_error_mean), mm(r.abs_error_std));
    println!("mean posterior std  {:.4} mm", mm(r.posterior_std_mean));
    println!("flagged faces       {}", r.flags.iter().filter(|f| **f).count());
    if let (Some(j), Some(e), Some(x)) = (r.defect_face, r.defect_estimate, r.defect_reference) {
        println!("defect face {j}      estimate {:.4} mm, reference {:.4} mm", mm(e), mm(x));
    }
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), &a.overrides)?;
    let out = run_pipeline(&cfg, a.out.as_deref())?;
    println!("config hash         {}", cfg.hash());
    print_summary(&out.report);
    Ok(())
}

fn cmd_rerun(a: RerunArgs) -> Result<()> {
    let stage = match a.stage {
        StageArg::Estimate => Stage::Estimate,
        StageArg::Evaluate => Stage::Evaluate,
    };
    let out = rerun_from_dir(&a.dir, stage)?;
    if let Some(p) = &a.out {
        write_report(p, &out.report)?;
    }
    print_summary(&out.report);
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let base = load_config(a.config.as_deref(), &a.overrides)?;
    let axis: SweepAxis = a.axis.parse()?;
    let values: Vec<f64> = match axis {
        SweepAxis::Distance => a.values.iter().map(|v| v * 1e-3).collect(),
        _ => a.values.clone(),
    };
    std::fs::create_dir_all(&a.out)?;
    let result = sweep(&base, axis, &values, Some(&a.out))?;
    write_sweep_csv(&result, a.out.join("sweep.csv"))?;
    if let Some(q) = &result.quartiles {
        write_quartiles_csv(q, a.out.join("quartiles.csv"))?;
    }
    for r in &result.rows {
        println!("{} = {}: final rmse {:.4} mm", axis.name(), r.value, r.final_rmse * 1e3);
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Mesh(a) => cmd_mesh(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Estimate(a) => cmd_estimate(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Pipeline(a) => cmd_pipeline(a),
        Cmd::Rerun(a) => cmd_rerun(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Config => {
            print!("{}", RunConfig::default().to_toml());
            Ok(())
        }
    }
}
