//! End-to-end runs: tablet generation, cloud simulation, estimation and
//! evaluation, optionally persisted to a run directory.
//!
//! A run directory holds
//!
//! ```text
//! config.json
//! meshes/nominal.stl, meshes/truth.stl
//! clouds/cloud_001.ply (+ .json sidecar) ...
//! checkpoints/state_001.json ...
//! report.json, rmse.csv, error_map.csv, error_map.ply
//! ```
//!
//! Every artifact carries the config hash; loading artifacts whose hash does
//! not match the directory's config fails.

mod config;
mod sweep;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{assemble_batch, filters, Checkpoint, DeviationFilter, EstimatorState};
use crate::evaluation::{
    border_mask, defect_center_face, evaluate, export_error_map, reference_state, selection_mask, CloudDiagnostics,
    EvalReport, FlagOptions,
};
use crate::geometry::{Point, Vec3};
use crate::mesh::{add_spherical_defect, generate_tablet, parse_stl, stl_header_tag, write_stl, StlFormat, TriMesh};
use crate::raycast::{build_bvh, correspondence_policies, Bvh, CorrespondencePolicy};
use crate::registration::{icp_align, IcpOptions, RigidTransform};
use crate::sensor::{derive_seed, read_cloud, simulate_cloud, write_cloud, CameraPose, PointCloud};

pub use config::{CameraConfig, DefectConfig, PoseErrorConfig, RunConfig};
pub use sweep::{quartiles, sweep, write_quartiles_csv, write_sweep_csv, QuartileRow, SweepAxis, SweepResult, SweepRow};

const POSE_STREAM: u64 = 0x706f_7365;

/// Encodes and re-parses a mesh as binary STL so that in-memory runs see
/// exactly the geometry a reloaded run sees.
pub fn quantize_mesh(mesh: &TriMesh) -> Result<TriMesh> {
    parse_stl(&write_stl(mesh, StlFormat::Binary, None))
}

/// Nominal (defect-free) and ground-truth tablets for `cfg`.
pub fn build_meshes(cfg: &RunConfig) -> Result<(TriMesh, TriMesh)> {
    cfg.validate()?;
    let [w, h] = cfg.tablet_mm.map(|v| v * 1e-3);
    let nominal = generate_tablet(w, h, cfg.mesh_size_mm * 1e-3)?;
    let mut truth = generate_tablet(w, h, cfg.truth_mesh_size_mm * 1e-3)?;
    if let Some(d) = cfg.defect() {
        truth = add_spherical_defect(&truth, &d)?;
    }
    if cfg.lift_mm != 0.0 {
        let dz = Vec3::z() * (cfg.lift_mm * 1e-3);
        truth = TriMesh::new(truth.vertices().iter().map(|v| v + dz).collect(), truth.faces().to_vec())?;
    }
    Ok((quantize_mesh(&nominal)?, quantize_mesh(&truth)?))
}

/// Camera pose of every cloud: `distance_m` from the tablet centre, tilted by
/// `heading_deg` about the tablet's y axis.
pub fn camera_pose(cfg: &RunConfig) -> Result<CameraPose> {
    CameraPose::orbit(Point::origin(), cfg.distance_m, cfg.heading_deg.to_radians())
}

/// Rigid error applied to the reported pose of cloud `seq`.
pub fn pose_error(cfg: &RunConfig, seq: u64) -> RigidTransform {
    let pe = &cfg.pose_error;
    if pe.translation_mm == 0.0 && pe.rotation_deg == 0.0 {
        return RigidTransform::identity();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ POSE_STREAM, seq));
    let mut unit = || {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() > 1e-6 {
            v.normalize()
        } else {
            Vec3::z()
        }
    };
    let t = unit() * (pe.translation_mm * 1e-3);
    RigidTransform::from_axis_angle(unit(), pe.rotation_deg.to_radians(), t)
}

/// Cloud `seq` (1-based) of the run.
pub fn simulate_run_cloud(cfg: &RunConfig, truth: &TriMesh, truth_bvh: &Bvh, seq: u64) -> Result<PointCloud> {
    let pose = camera_pose(cfg)?;
    let mut cloud = simulate_cloud(truth, truth_bvh, &pose, &cfg.camera.model(), derive_seed(cfg.seed, seq))?;
    cloud.seq = seq;
    cloud.pose = pose_error(cfg, seq).apply_to_pose(&pose);
    cloud.config_hash = Some(cfg.hash());
    Ok(cloud)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    pub sigma0: f64,
    pub border: f64,
    pub mode: String,
    pub correspondence: String,
    pub icp: Option<IcpOptions>,
}

impl EstimateOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            sigma0: cfg.sigma0_mm * 1e-3,
            border: cfg.border_mm * 1e-3,
            mode: cfg.mode.clone(),
            correspondence: cfg.correspondence.clone(),
            icp: cfg.icp.then(IcpOptions::default),
        }
    }
}

/// Recursive estimator bound to one nominal mesh; feed it clouds in order.
pub struct Estimator<'a> {
    mesh: &'a TriMesh,
    bvh: &'a Bvh,
    filter: Arc<dyn DeviationFilter>,
    policy: Arc<dyn CorrespondencePolicy>,
    opts: EstimateOptions,
    pub state: EstimatorState,
    /// `x̂` after each processed cloud.
    pub trace: Vec<Vec<f64>>,
    pub diagnostics: Vec<CloudDiagnostics>,
}

impl<'a> Estimator<'a> {
    pub fn new(mesh: &'a TriMesh, bvh: &'a Bvh, opts: EstimateOptions) -> Result<Self> {
        let filter = filters().get(&opts.mode)?.clone();
        let policy = correspondence_policies().get(&opts.correspondence)?.clone();
        let state = filter.prior(mesh.n_faces(), opts.sigma0, &mesh.fingerprint())?;
        Ok(Self {
            mesh,
            bvh,
            filter,
            policy,
            opts,
            state,
            trace: Vec::new(),
            diagnostics: Vec::new(),
        })
    }

    /// Continues from a checkpointed state.
    pub fn resume(mesh: &'a TriMesh, bvh: &'a Bvh, opts: EstimateOptions, state: EstimatorState) -> Result<Self> {
        if state.mesh_fingerprint != mesh.fingerprint() || state.n_faces() != mesh.n_faces() {
            return Err(Error::ProvenanceMismatch("checkpoint was made for a different mesh".into()));
        }
        let mut e = Self::new(mesh, bvh, opts)?;
        if e.state.representation_name() != state.representation_name() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint is in {} form but filter `{}` needs {} form",
                state.representation_name(),
                e.opts.mode,
                e.state.representation_name()
            )));
        }
        e.state = state;
        Ok(e)
    }

    pub fn step(&mut self, cloud: &PointCloud) -> Result<&CloudDiagnostics> {
        let (correction, before, after) = match &self.opts.icp {
            Some(o) if !cloud.is_empty() => {
                let r = icp_align(cloud, self.mesh, self.bvh, &RigidTransform::identity(), o)?;
                (Some(r.transform), Some(r.initial_rms), Some(r.rms_residual))
            }
            _ => (None, None, None),
        };
        let batch = assemble_batch(cloud, self.mesh, self.bvh, self.opts.border, self.policy.as_ref(), correction.as_ref())?;
        self.filter.update(&mut self.state, &batch)?;
        let mut seen = vec![false; self.mesh.n_faces()];
        batch.face_of.iter().for_each(|&j| seen[j] = true);
        self.trace.push(self.state.mean_and_variance()?.0.as_slice().to_vec());
        self.diagnostics.push(CloudDiagnostics {
            seq: cloud.seq,
            points: cloud.len(),
            used: batch.len(),
            dropped: batch.dropped,
            excluded: batch.excluded,
            faces_observed: seen.iter().filter(|s| **s).count(),
            icp_rms_before: before,
            icp_rms_after: after,
        });
        log::debug!("cloud {}: {} points, {} used", cloud.seq, cloud.len(), batch.len());
        Ok(self.diagnostics.last().expect("just pushed"))
    }
}

/// Scores a finished estimation against the truth mesh.
pub fn evaluate_run(
    cfg: &RunConfig,
    nominal: &TriMesh,
    truth: &TriMesh,
    state: &EstimatorState,
    trace: &[Vec<f64>],
    diagnostics: &[CloudDiagnostics],
) -> Result<EvalReport> {
    let truth_bvh = build_bvh(truth)?;
    let reference = reference_state(nominal, truth, &truth_bvh)?;
    let border = cfg.border_mm * 1e-3;
    let mask = if state.k == 0 {
        border_mask(nominal, border)
    } else {
        selection_mask(nominal, &state.hits, border)?
    };
    let (x_hat, var) = state.mean_and_variance()?;
    let defect_face = cfg.defect().and_then(|d| defect_center_face(nominal, d.center_xy));
    let mut report = evaluate(
        trace,
        x_hat.as_slice(),
        var.as_slice(),
        &reference.x,
        &mask,
        defect_face,
        FlagOptions {
            threshold: cfg.flag_threshold_mm * 1e-3,
            z_score: cfg.flag_z,
        },
    )?;
    report.clouds = diagnostics.to_vec();
    report.config_hash = Some(cfg.hash());
    report.config = Some(serde_json::to_value(cfg)?);
    Ok(report)
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: EvalReport,
    pub state: EstimatorState,
    pub trace: Vec<Vec<f64>>,
}

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn mesh(&self, name: &str) -> PathBuf {
        self.root.join("meshes").join(format!("{name}.stl"))
    }

    pub fn cloud(&self, seq: u64) -> PathBuf {
        self.root.join("clouds").join(format!("cloud_{seq:03}.ply"))
    }

    pub fn checkpoint(&self, k: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("state_{k:03}.json"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    fn create(&self) -> Result<()> {
        for sub in ["meshes", "clouds", "checkpoints"] {
            let p = self.root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn expect_hash(expected: &str, found: Option<&str>, what: &Path) -> Result<()> {
    match found {
        Some(h) if h == expected => Ok(()),
        Some(h) => Err(Error::ProvenanceMismatch(format!(
            "{} carries config hash {h}, run expects {expected}",
            what.display()
        ))),
        None => Err(Error::ProvenanceMismatch(format!("{} carries no config hash", what.display()))),
    }
}

/// Reads a tagged STL and checks its config hash.
pub fn load_mesh_checked(path: &Path, hash: &str) -> Result<TriMesh> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    expect_hash(hash, stl_header_tag(&bytes).as_deref(), path)?;
    parse_stl(&bytes)
}

fn write_report(dir: &RunDir, nominal: &TriMesh, report: &EvalReport) -> Result<()> {
    write_text(&dir.report(), &serde_json::to_string_pretty(report)?)?;
    let mut csv = String::from("k,rmse\n");
    csv.push_str(&format!("0,{}\n", report.initial_rmse));
    for (k, r) in report.rmse_trace.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", k + 1, r));
    }
    write_text(&dir.root.join("rmse.csv"), &csv)?;
    export_error_map(nominal, &report.per_face_error, dir.root.join("error_map.csv"))
}

/// Runs the whole pipeline. With `out`, every intermediate artifact is
/// written as it is produced.
pub fn run_pipeline(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let hash = cfg.hash();
    let dir = out.map(RunDir::new);
    let (nominal, truth) = build_meshes(cfg)?;
    if let Some(d) = &dir {
        d.create()?;
        write_text(&d.config(), &serde_json::to_string_pretty(cfg)?)?;
        for (name, m) in [("nominal", &nominal), ("truth", &truth)] {
            let p = d.mesh(name);
            std::fs::write(&p, write_stl(m, StlFormat::Binary, Some(&hash))).map_err(|e| Error::io(&p, e))?;
        }
    }
    let nominal_bvh = build_bvh(&nominal)?;
    let truth_bvh = build_bvh(&truth)?;
    let mut est = Estimator::new(&nominal, &nominal_bvh, EstimateOptions::from_config(cfg))?;
    for seq in 1..=cfg.n_clouds as u64 {
        let cloud = simulate_run_cloud(cfg, &truth, &truth_bvh, seq)?;
        if let Some(d) = &dir {
            write_cloud(&cloud, d.cloud(seq))?;
        }
        est.step(&cloud)?;
        if let Some(d) = &dir {
            Checkpoint::from_state(&est.state, Some(&hash))?.save(d.checkpoint(seq))?;
        }
        log::info!("seed {} cloud {seq}/{}", cfg.seed, cfg.n_clouds);
    }
    let report = evaluate_run(cfg, &nominal, &truth, &est.state, &est.trace, &est.diagnostics)?;
    if let Some(d) = &dir {
        write_report(d, &nominal, &report)?;
    }
    Ok(RunOutput {
        report,
        state: est.state,
        trace: est.trace,
    })
}

/// Pipeline stage to restart from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Reload meshes and clouds, re-estimate and re-evaluate.
    Estimate,
    /// Reload meshes and checkpoints and re-evaluate.
    Evaluate,
}

pub fn load_config(dir: &Path) -> Result<RunConfig> {
    RunConfig::load(RunDir::new(dir).config())
}

/// Recomputes a run from the artifacts persisted in `dir` without writing.
pub fn rerun_from_dir(dir: &Path, stage: Stage) -> Result<RunOutput> {
    let d = RunDir::new(dir);
    let cfg = load_config(dir)?;
    let hash = cfg.hash();
    let nominal = load_mesh_checked(&d.mesh("nominal"), &hash)?;
    let truth = load_mesh_checked(&d.mesh("truth"), &hash)?;
    let bvh = build_bvh(&nominal)?;
    match stage {
        Stage::Estimate => {
            let mut est = Estimator::new(&nominal, &bvh, EstimateOptions::from_config(&cfg))?;
            for seq in 1..=cfg.n_clouds as u64 {
                let path = d.cloud(seq);
                let cloud = read_cloud(&path)?;
                expect_hash(&hash, cloud.config_hash.as_deref(), &path)?;
                est.step(&cloud)?;
            }
            let report = evaluate_run(&cfg, &nominal, &truth, &est.state, &est.trace, &est.diagnostics)?;
            Ok(RunOutput {
                report,
                state: est.state,
                trace: est.trace,
            })
        }
        Stage::Evaluate => {
            let mut trace = Vec::new();
            let mut state = filters()
                .get(&cfg.mode)?
                .prior(nominal.n_faces(), cfg.sigma0_mm * 1e-3, &nominal.fingerprint())?;
            for k in 1..=cfg.n_clouds as u64 {
                let path = d.checkpoint(k);
                let c = Checkpoint::load(&path)?;
                expect_hash(&hash, c.config_hash.as_deref(), &path)?;
                trace.push(c.x_hat.clone());
                state = c.to_state()?;
            }
            if state.mesh_fingerprint != nominal.fingerprint() {
                return Err(Error::ProvenanceMismatch("checkpoint mesh fingerprint differs from nominal mesh".into()));
            }
            let prev: Option<EvalReport> = std::fs::read_to_string(d.report())
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok());
            let diagnostics = prev.map(|r| r.clouds).unwrap_or_default();
            let report = evaluate_run(&cfg, &nominal, &truth, &state, &trace, &diagnostics)?;
            Ok(RunOutput { report, state, trace })
        }
    }
}

/// Loads every `*.ply` cloud in `dir`, ordered by sequence number.
pub fn load_clouds(dir: &Path) -> Result<Vec<PointCloud>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ply"))
        .collect();
    paths.sort();
    let mut clouds = paths.iter().map(read_cloud).collect::<Result<Vec<_>>>()?;
    clouds.sort_by_key(|c| c.seq);
    Ok(clouds)
}

/// Rejects a set of artifacts that do not all share one config hash.
pub fn check_same_provenance<'a>(hashes: impl IntoIterator<Item = Option<&'a str>>) -> Result<Option<String>> {
    let mut seen: Option<&str> = None;
    for h in hashes.into_iter().flatten() {
        match seen {
            None => seen = Some(h),
            Some(s) if s != h => {
                return Err(Error::ProvenanceMismatch(format!("artifacts from configs {s} and {h} mixed")));
            }
            _ => {}
        }
    }
    Ok(seen.map(str::to_string))
}

/// Loads a mesh and its header tag.
pub fn read_mesh_with_tag(path: &Path) -> Result<(TriMesh, Option<String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((parse_stl(&bytes)?, stl_header_tag(&bytes)))
}
