//! Pipeline stages driven by a JSON experiment config. Every stage writes a
//! `manifest.json` echoing its configuration and the hashes of its inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, PhantomSpec, ScanGeometry, Volume, VolumeGrid};
use crate::gsplat::{GaussianSet, Renderer};
use crate::io;
use crate::neural::{Checkpoint, FieldConfig};
use crate::projector::LinearProjector;
use crate::recon::{self, AsdPocsConfig, CglsConfig, GaussianInitConfig};
use crate::train::{self, losses, metrics, TrainConfig, TrainData};

/// Circular cone-beam trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ScanConfig {
    pub sad: f64,
    pub sdd: f64,
    pub nu: usize,
    pub nv: usize,
    pub du: f64,
    pub dv: f64,
    pub n_views: usize,
    /// Respiratory phases, assigned to views round-robin; `null` for static
    /// scans.
    pub n_phases: Option<usize>,
}

impl ScanConfig {
    pub fn geometry(&self) -> Result<ScanGeometry> {
        ScanGeometry::circular(self.sad, self.sdd, (self.nu, self.nv), (self.du, self.dv), self.n_views, self.n_phases)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct GeometryConfig {
    pub scan: ScanConfig,
    pub grid: VolumeGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PhantomPreset {
    SheppLogan,
    Breathing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum PhantomConfig {
    Preset { preset: PhantomPreset },
    Custom(PhantomSpec),
}

impl PhantomConfig {
    pub fn spec(&self) -> PhantomSpec {
        match self {
            PhantomConfig::Preset {
                preset: PhantomPreset::SheppLogan,
            } => PhantomSpec::shepp_logan(),
            PhantomConfig::Preset {
                preset: PhantomPreset::Breathing,
            } => PhantomSpec::breathing(),
            PhantomConfig::Custom(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Incident photons per pixel for Poisson noise; `null` for noiseless
    /// projections.
    pub photons: Option<f64>,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            photons: Some(geometry::DEFAULT_PHOTONS),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub cgls: CglsConfig,
    pub asd_pocs: AsdPocsConfig,
    pub gaussians: GaussianInitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub phantom: PhantomConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub model: FieldConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub io: IoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::static_phantom()
    }
}

impl ExperimentConfig {
    /// Shepp-Logan analogue on a 64³ grid over `[-1,1]³`, 10 views.
    pub fn static_phantom() -> Self {
        ExperimentConfig {
            geometry: GeometryConfig {
                scan: ScanConfig {
                    sad: 4.0,
                    sdd: 6.0,
                    nu: 64,
                    nv: 64,
                    du: 0.05,
                    dv: 0.05,
                    n_views: 10,
                    n_phases: None,
                },
                grid: VolumeGrid::cube(64, 1.0),
            },
            phantom: PhantomConfig::Preset {
                preset: PhantomPreset::SheppLogan,
            },
            simulate: SimulateConfig::default(),
            init: InitConfig::default(),
            model: FieldConfig::default(),
            train: TrainConfig::default(),
            io: IoConfig::default(),
        }
    }

    /// Breathing phantom on a 48³ grid, 10 phases × 10 views.
    pub fn breathing_phantom() -> Self {
        let mut c = ExperimentConfig::static_phantom();
        c.geometry = GeometryConfig {
            scan: ScanConfig {
                sad: 4.0,
                sdd: 6.0,
                nu: 48,
                nv: 48,
                du: 0.07,
                dv: 0.07,
                n_views: 100,
                n_phases: Some(10),
            },
            grid: VolumeGrid::cube(48, 1.0),
        };
        c.phantom = PhantomConfig::Preset {
            preset: PhantomPreset::Breathing,
        };
        c
    }

    /// Seconds-scale run on a 16³ grid: 6 views, 3 phases when `dynamic`.
    pub fn smoke(dynamic: bool) -> Self {
        let mut c = if dynamic {
            ExperimentConfig::breathing_phantom()
        } else {
            ExperimentConfig::static_phantom()
        };
        c.geometry = GeometryConfig {
            scan: ScanConfig {
                sad: 4.0,
                sdd: 6.0,
                nu: 24,
                nv: 24,
                du: 0.13,
                dv: 0.13,
                n_views: 6,
                n_phases: dynamic.then_some(3),
            },
            grid: VolumeGrid::cube(16, 1.0),
        };
        c.init.cgls.max_iters = 10;
        c.init.asd_pocs.outer_iters = 5;
        c.init.asd_pocs.tv_iters = 5;
        c.init.gaussians.n_points = 300;
        c.model.hash.levels = 4;
        c.model.hash.table_size_log2 = 12;
        c.model.hash.max_res = 32;
        c.model.head_hidden = 16;
        c.model.flow_hidden = 16;
        c.train.schedule.total_iters = 20;
        c.train.schedule.warmup_iters = 10;
        c.train.sem.every = 5;
        c.train.sem.count = 8;
        c.train.tv_patch = 8;
        c.train.eval_every = 10;
        c.train.checkpoint_every = 10;
        c.train.divergence_ref_iter = 5;
        c.io.out_dir = PathBuf::from("runs/smoke");
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.scan.geometry()?;
        self.geometry.grid.validate()?;
        self.phantom.spec().validate()?;
        self.init.cgls.validate()?;
        self.init.asd_pocs.validate()?;
        self.train_config().validate()?;
        Ok(())
    }

    /// Training settings with the model section folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            field: self.model,
            ..self.train.clone()
        }
    }

    /// Applies command-line overrides.
    pub fn apply(&mut self, opts: &RunOptions) {
        if let Some(s) = opts.seed {
            self.simulate.seed = s;
            self.init.gaussians.seed = s;
            self.model.seed = s;
            self.train.seed = s;
        }
        if opts.deterministic {
            self.train.deterministic = true;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub deterministic: bool,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = io::read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// JSON schema of [`ExperimentConfig`].
pub fn config_schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: Option<&'a ExperimentConfig>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    extra: serde_json::Value,
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: Option<&ExperimentConfig>,
    inputs: &[(PathBuf, String)],
    outputs: &[PathBuf],
    extra: serde_json::Value,
) -> Result<()> {
    let name = |p: &Path| {
        p.strip_prefix(out_dir)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        inputs: inputs.iter().map(|(p, h)| (p.to_string_lossy().into_owned(), h.clone())).collect(),
        outputs: outputs.iter().map(|p| name(p)).collect(),
        extra,
    };
    io::write_json(&out_dir.join("manifest.json"), &m)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn truth_stem(out_dir: &Path, phase: Option<usize>) -> PathBuf {
    match phase {
        Some(p) => out_dir.join(format!("truth_phase{p:02}")),
        None => out_dir.join("truth"),
    }
}

/// Ground-truth volumes written by [`cmd_simulate`] next to `proj_path`,
/// ordered by phase; empty when none exist.
pub fn find_truth(proj_path: &Path) -> Vec<PathBuf> {
    let dir = proj_path.parent().unwrap_or(Path::new("."));
    let single = dir.join("truth.vol.json");
    if single.exists() {
        return vec![single];
    }
    (0..)
        .map(|p| dir.join(format!("truth_phase{p:02}.vol.json")))
        .take_while(|p| p.exists())
        .collect()
}

fn load_truth(paths: &[PathBuf]) -> Result<Vec<Volume>> {
    paths.iter().map(|p| io::read_volume(p)).collect()
}

fn hash_inputs(paths: &[(&Path, &str)]) -> Result<Vec<(PathBuf, String)>> {
    let mut out = Vec::new();
    for (p, kind) in paths {
        if kind.is_empty() {
            out.push((p.to_path_buf(), io::sha256_file(p)?));
        } else {
            out.extend(io::sha256_sidecars(p, kind)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutput {
    pub projections: PathBuf,
    pub truth: Vec<PathBuf>,
}

/// Writes the phantom, its per-phase ground-truth volumes and the simulated
/// projections.
pub fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SimulateOutput> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let geom = cfg.geometry.scan.geometry()?;
    let spec = cfg.phantom.spec();
    let (proj, volumes) =
        geometry::simulate_phantom(&spec, &cfg.geometry.grid, &geom, cfg.simulate.photons, cfg.simulate.seed)?;
    let mut outputs = Vec::new();
    let phantom_path = out_dir.join("phantom.json");
    io::write_phantom(&phantom_path, &spec)?;
    outputs.push(phantom_path);
    let mut truth = Vec::new();
    for (p, v) in volumes.iter().enumerate() {
        let stem = truth_stem(out_dir, geom.is_dynamic().then_some(p));
        truth.push(io::write_volume(&stem, v)?);
    }
    outputs.extend(truth.iter().cloned());
    let projections = io::write_projections(&out_dir.join("projections"), &proj)?;
    outputs.push(projections.clone());
    write_manifest(out_dir, "simulate", Some(cfg), &[], &outputs, serde_json::Value::Null)?;
    Ok(SimulateOutput { projections, truth })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub cgls_iterations: usize,
    pub n_gaussians: usize,
    /// Mean over ground-truth volumes, when available.
    pub cgls_psnr: Option<f64>,
    pub init_psnr: Option<f64>,
    pub gaussians_psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitOutput {
    pub cgls_volume: PathBuf,
    pub volume: PathBuf,
    pub gaussians: PathBuf,
    pub report: InitReport,
}

fn mean_psnr(vol: &Volume, truth: &[Volume]) -> Result<Option<f64>> {
    if truth.is_empty() {
        return Ok(None);
    }
    let mut s = 0.0;
    for t in truth {
        let range = if t.max() > 0.0 { t.max() } else { 1.0 };
        s += losses::psnr(vol, t, range)?;
    }
    Ok(Some(s / truth.len() as f64))
}

/// CGLS, then ASD-POCS, then conversion to Gaussians. `truth` defaults to
/// the volumes found next to the projections.
pub fn cmd_init(cfg: &ExperimentConfig, proj_path: &Path, out_dir: &Path, truth: Option<&[PathBuf]>) -> Result<InitOutput> {
    cfg.validate()?;
    let proj = io::read_projections(proj_path)?;
    let truth_paths = truth.map(<[PathBuf]>::to_vec).unwrap_or_else(|| find_truth(proj_path));
    let truth = load_truth(&truth_paths)?;
    ensure_dir(out_dir)?;
    let grid = cfg.geometry.grid;
    let projector = LinearProjector::new(proj.geom.clone(), grid)?;
    let (x0, cg) = recon::cgls_with_report(&projector, &proj, &cfg.init.cgls)?;
    let refined = recon::asd_pocs(&x0, &projector, &proj, &cfg.init.asd_pocs)?;
    let set = recon::volume_to_gaussians(&refined, &cfg.init.gaussians)?;
    let report = InitReport {
        cgls_iterations: cg.iterations,
        n_gaussians: set.len(),
        cgls_psnr: mean_psnr(&x0, &truth)?,
        init_psnr: mean_psnr(&refined, &truth)?,
        gaussians_psnr: mean_psnr(&crate::gsplat::voxelize(&set, &grid), &truth)?,
    };
    let cgls_volume = io::write_volume(&out_dir.join("cgls"), &x0)?;
    let volume = io::write_volume(&out_dir.join("refined"), &refined)?;
    let gaussians = io::write_gaussians(&out_dir.join("init"), &set)?;
    let report_path = out_dir.join("init_report.json");
    io::write_json(&report_path, &report)?;
    let mut inputs = hash_inputs(&[(proj_path, "proj")])?;
    for t in &truth_paths {
        inputs.extend(io::sha256_sidecars(t, "vol")?);
    }
    write_manifest(
        out_dir,
        "init",
        Some(cfg),
        &inputs,
        &[cgls_volume.clone(), volume.clone(), gaussians.clone(), report_path],
        serde_json::Value::Null,
    )?;
    Ok(InitOutput {
        cgls_volume,
        volume,
        gaussians,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub dynamic: bool,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRunOutput {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub volumes: Vec<PathBuf>,
    pub summary: TrainSummary,
}

/// Trains from an initial Gaussian set; dynamic when the projections carry
/// phases.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    init_path: &Path,
    proj_path: &Path,
    out_dir: &Path,
    truth: Option<&[PathBuf]>,
) -> Result<TrainRunOutput> {
    cfg.validate()?;
    let proj = io::read_projections(proj_path)?;
    let init = io::read_gaussians(init_path)?;
    let truth_paths = truth.map(<[PathBuf]>::to_vec).unwrap_or_else(|| find_truth(proj_path));
    let truth = load_truth(&truth_paths)?;
    ensure_dir(out_dir)?;
    let ckpt_dir = out_dir.join("checkpoints");
    ensure_dir(&ckpt_dir)?;
    let data = TrainData {
        proj: &proj,
        grid: cfg.geometry.grid,
        truth: &truth,
    };
    let tcfg = cfg.train_config();
    let dynamic = proj.geom.is_dynamic();
    let out = if dynamic {
        train::train_dynamic(data, &init, &tcfg, Some(&ckpt_dir))?
    } else {
        train::train_static(data, &init, &tcfg, Some(&ckpt_dir))?
    };
    let checkpoint = out_dir.join("final.ckpt");
    out.checkpoint(cfg.geometry.grid).save(&checkpoint)?;
    let metrics_path = out_dir.join("metrics.csv");
    metrics::write_csv(&metrics_path, &out.metrics)?;
    let mut volumes = Vec::new();
    for (p, v) in out.evaluation.volumes.iter().enumerate() {
        let stem = if dynamic {
            out_dir.join(format!("recon_phase{p:02}"))
        } else {
            out_dir.join("recon")
        };
        volumes.push(io::write_volume(&stem, v)?);
    }
    let summary = TrainSummary {
        iterations: out.iterations,
        dynamic,
        psnr: out.evaluation.psnr.clone(),
        ssim: out.evaluation.ssim.clone(),
        mean_psnr: out.evaluation.mean_psnr(),
        mean_ssim: out.evaluation.mean_ssim(),
    };
    let summary_path = out_dir.join("summary.json");
    io::write_json(&summary_path, &summary)?;
    let mut inputs = hash_inputs(&[(proj_path, "proj"), (init_path, "gs")])?;
    for t in &truth_paths {
        inputs.extend(io::sha256_sidecars(t, "vol")?);
    }
    let mut outputs = vec![checkpoint.clone(), metrics_path.clone(), summary_path];
    outputs.extend(volumes.iter().cloned());
    write_manifest(out_dir, "train", Some(cfg), &inputs, &outputs, serde_json::Value::Null)?;
    Ok(TrainRunOutput {
        checkpoint,
        metrics: metrics_path,
        volumes,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub psnr: f64,
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub phases: Vec<PhaseMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: Option<f64>,
}

/// Scores reconstructions against ground truth pairwise; writes
/// `metrics.json` into `out_dir` when given.
pub fn cmd_eval(recon: &[PathBuf], truth: &[PathBuf], out_dir: Option<&Path>) -> Result<EvalReport> {
    if recon.is_empty() || recon.len() != truth.len() {
        return Err(Error::arg(format!(
            "eval needs matching reconstruction/truth lists, got {} and {}",
            recon.len(),
            truth.len()
        )));
    }
    let mut phases = Vec::new();
    for (r, t) in recon.iter().zip(truth) {
        let (a, b) = (io::read_volume(r)?, io::read_volume(t)?);
        if a.grid != b.grid {
            return Err(Error::arg(format!(
                "grid mismatch between {} and {}",
                r.display(),
                t.display()
            )));
        }
        let range = if b.max() > 0.0 { b.max() } else { 1.0 };
        let ssim = if a.grid.dims[0] >= losses::SSIM_WINDOW && a.grid.dims[1] >= losses::SSIM_WINDOW {
            Some(losses::ssim3d(&a, &b)?)
        } else {
            None
        };
        phases.push(PhaseMetrics {
            psnr: losses::psnr(&a, &b, range)?,
            ssim,
        });
    }
    let n = phases.len() as f64;
    let mean_ssim = phases
        .iter()
        .map(|p| p.ssim)
        .sum::<Option<f64>>()
        .map(|s| s / n);
    let report = EvalReport {
        mean_psnr: phases.iter().map(|p| p.psnr).sum::<f64>() / n,
        mean_ssim,
        phases,
    };
    if let Some(dir) = out_dir {
        ensure_dir(dir)?;
        let path = dir.join("metrics.json");
        io::write_json(&path, &report)?;
        let mut inputs = Vec::new();
        for p in recon.iter().chain(truth) {
            inputs.extend(io::sha256_sidecars(p, "vol")?);
        }
        write_manifest(dir, "eval", None, &inputs, &[path], serde_json::Value::Null)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub angle: f64,
    pub png: PathBuf,
    pub raw: PathBuf,
    pub image: Vec<f64>,
}

/// Renders a checkpoint at training views (`views`, indices into the
/// geometry's angles) and at arbitrary `angles`, in radians. Images share
/// one display window `[0, max]`.
pub fn cmd_render(
    checkpoint: &Path,
    geometry_path: &Path,
    views: &[usize],
    angles: &[f64],
    phase: Option<usize>,
    out_dir: &Path,
) -> Result<Vec<RenderedImage>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let geom = io::read_geometry(geometry_path)?;
    if let Some(&v) = views.iter().find(|&&v| v >= geom.n_views()) {
        return Err(Error::arg(format!("view {v} out of range ({} views)", geom.n_views())));
    }
    let set = ckpt.primitives(phase)?;
    let mut list: Vec<(String, f64)> = views.iter().map(|&v| (format!("view{v:03}"), geom.angles[v])).collect();
    list.extend(angles.iter().enumerate().map(|(i, &a)| (format!("angle{i:03}"), a)));
    ensure_dir(out_dir)?;
    let renderer = Renderer::default();
    let images: Vec<(String, f64, Vec<f64>)> = list
        .into_iter()
        .map(|(name, a)| {
            let img = renderer.render(&set.primitives, &geom, a).image;
            (name, a, img)
        })
        .collect();
    let max = images
        .iter()
        .flat_map(|(_, _, i)| i.iter().cloned())
        .fold(0.0, f64::max);
    let mut out = Vec::new();
    let mut outputs = Vec::new();
    for (name, angle, image) in images {
        let png = out_dir.join(format!("{name}.png"));
        let raw = out_dir.join(format!("{name}.raw"));
        io::write_png(&png, &image, geom.nu, geom.nv, max)?;
        io::write_raw_f32(&raw, &image)?;
        outputs.push(png.clone());
        outputs.push(raw.clone());
        out.push(RenderedImage { angle, png, raw, image });
    }
    let mut inputs = hash_inputs(&[(checkpoint, ""), (geometry_path, "proj")])?;
    inputs.truncate(2);
    write_manifest(
        out_dir,
        "render",
        None,
        &inputs,
        &outputs,
        serde_json::json!({
            "window": {"min": 0.0, "max": max},
            "width": geom.nu,
            "height": geom.nv,
            "angles": out.iter().map(|r| r.angle).collect::<Vec<_>>(),
            "phase": phase,
        }),
    )?;
    Ok(out)
}

/// Samples a checkpoint on its grid (or `grid`) and writes the volume.
pub fn cmd_voxelize(checkpoint: &Path, phase: Option<usize>, grid: Option<VolumeGrid>, out_dir: &Path) -> Result<PathBuf> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let set: GaussianSet = ckpt.primitives(phase)?;
    let grid = grid.unwrap_or(ckpt.grid);
    let vol = crate::gsplat::voxelize(&set, &grid);
    ensure_dir(out_dir)?;
    let stem = match phase {
        Some(p) => out_dir.join(format!("voxelized_phase{p:02}")),
        None => out_dir.join("voxelized"),
    };
    let path = io::write_volume(&stem, &vol)?;
    let inputs = hash_inputs(&[(checkpoint, "")])?;
    write_manifest(out_dir, "voxelize", None, &inputs, &[path.clone()], serde_json::json!({ "phase": phase }))?;
    Ok(path)
}
