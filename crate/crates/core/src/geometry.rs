//! Cone-beam scan geometry, voxel lattices, synthetic phantoms and projection
//! simulation.
//!
//! Conventions: right-handed world frame, rotation axis `z`. At angle 0 the
//! source sits on the `-x` axis at distance `sad` from the origin and the flat
//! detector is perpendicular to the source-origin line at distance `sdd` from
//! the source. Detector `u` runs along the rotated `+y` axis, `v` along `+z`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};
use crate::projector::LinearProjector;

/// Default photon count for Poisson noise injection.
pub const DEFAULT_PHOTONS: f64 = 1e5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ScanGeometry {
    /// Source-to-axis distance.
    pub sad: f64,
    /// Source-to-detector distance.
    pub sdd: f64,
    pub nu: usize,
    pub nv: usize,
    pub du: f64,
    pub dv: f64,
    /// View angles in radians.
    pub angles: Vec<f64>,
    /// Respiratory phase of each view, when the scan is dynamic.
    pub phases: Option<Vec<usize>>,
    pub n_phases: usize,
}

impl ScanGeometry {
    /// Full circular orbit: `n_views` angles equispaced over `[0, 2π)`; with
    /// `n_phases = Some(p)` views are assigned to phases round-robin.
    pub fn circular(
        sad: f64,
        sdd: f64,
        detector: (usize, usize),
        pitch: (f64, f64),
        n_views: usize,
        n_phases: Option<usize>,
    ) -> Result<Self> {
        let angles = (0..n_views)
            .map(|k| 2.0 * std::f64::consts::PI * k as f64 / n_views as f64)
            .collect();
        let (phases, n_phases) = match n_phases {
            Some(p) => (Some((0..n_views).map(|k| k % p).collect()), p),
            None => (None, 1),
        };
        let geom = ScanGeometry {
            sad,
            sdd,
            nu: detector.0,
            nv: detector.1,
            du: pitch.0,
            dv: pitch.1,
            angles,
            phases,
            n_phases,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sad > 0.0) {
            return Err(Error::arg(format!("sad must be positive, got {}", self.sad)));
        }
        if !(self.sdd > self.sad) {
            return Err(Error::arg(format!(
                "sdd ({}) must exceed sad ({})",
                self.sdd, self.sad
            )));
        }
        if self.nu == 0 || self.nv == 0 {
            return Err(Error::arg("detector must have at least one pixel per axis"));
        }
        if !(self.du > 0.0 && self.dv > 0.0) {
            return Err(Error::arg("detector pitch must be positive"));
        }
        if self.n_phases == 0 {
            return Err(Error::arg("n_phases must be at least 1"));
        }
        if let Some(phases) = &self.phases {
            if phases.len() != self.angles.len() {
                return Err(Error::arg(format!(
                    "{} phase labels for {} views",
                    phases.len(),
                    self.angles.len()
                )));
            }
            if let Some(bad) = phases.iter().find(|&&p| p >= self.n_phases) {
                return Err(Error::arg(format!(
                    "phase index {bad} out of range for {} phases",
                    self.n_phases
                )));
            }
        }
        Ok(())
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    pub fn pixels_per_view(&self) -> usize {
        self.nu * self.nv
    }

    pub fn is_dynamic(&self) -> bool {
        self.phases.is_some()
    }

    pub fn phase_of(&self, view: usize) -> Option<usize> {
        self.phases.as_ref().map(|p| p[view])
    }

    /// Same detector and distances with a different set of view angles and no
    /// phase labels.
    pub fn with_angles(&self, angles: Vec<f64>) -> Self {
        ScanGeometry {
            angles,
            phases: None,
            n_phases: 1,
            ..self.clone()
        }
    }

    pub fn frame(&self, view: usize) -> DetectorFrame {
        DetectorFrame::new(self, self.angles[view])
    }
}

/// Source position and detector basis for a single view angle.
#[derive(Debug, Clone, Copy)]
pub struct DetectorFrame {
    pub source: Vec3,
    /// Unit vector from the source towards the detector center.
    pub axis: Vec3,
    pub center: Vec3,
    pub eu: Vec3,
    pub ev: Vec3,
    pub sdd: f64,
    pub du: f64,
    pub dv: f64,
    pub nu: usize,
    pub nv: usize,
}

impl DetectorFrame {
    pub fn new(geom: &ScanGeometry, angle: f64) -> Self {
        let rot = linalg::rot_z(angle);
        let source = linalg::mat_vec(&rot, [-geom.sad, 0.0, 0.0]);
        let axis = linalg::mat_vec(&rot, [1.0, 0.0, 0.0]);
        DetectorFrame {
            source,
            axis,
            center: linalg::add(source, linalg::scale(axis, geom.sdd)),
            eu: linalg::mat_vec(&rot, [0.0, 1.0, 0.0]),
            ev: [0.0, 0.0, 1.0],
            sdd: geom.sdd,
            du: geom.du,
            dv: geom.dv,
            nu: geom.nu,
            nv: geom.nv,
        }
    }

    /// World position of the center of detector pixel `(u, v)`.
    pub fn pixel_center(&self, u: usize, v: usize) -> Vec3 {
        let ou = (u as f64 - (self.nu as f64 - 1.0) / 2.0) * self.du;
        let ov = (v as f64 - (self.nv as f64 - 1.0) / 2.0) * self.dv;
        linalg::add(
            self.center,
            linalg::add(linalg::scale(self.eu, ou), linalg::scale(self.ev, ov)),
        )
    }

    /// Unit direction from the source through pixel `(u, v)`.
    pub fn pixel_dir(&self, u: usize, v: usize) -> Vec3 {
        linalg::normalize(linalg::sub(self.pixel_center(u, v), self.source))
    }

    /// Continuous detector coordinates `(u, v)` (pixel units, pixel centers on
    /// integers) where the ray from the source through `x` meets the detector.
    /// `None` when `x` is not in front of the source.
    pub fn project(&self, x: Vec3) -> Option<(f64, f64)> {
        let rel = linalg::sub(x, self.source);
        let depth = linalg::dot(rel, self.axis);
        if depth <= 0.0 {
            return None;
        }
        let hit = linalg::add(self.source, linalg::scale(rel, self.sdd / depth));
        let off = linalg::sub(hit, self.center);
        Some((
            linalg::dot(off, self.eu) / self.du + (self.nu as f64 - 1.0) / 2.0,
            linalg::dot(off, self.ev) / self.dv + (self.nv as f64 - 1.0) / 2.0,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct VolumeGrid {
    /// Voxel counts `[nx, ny, nz]`.
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub center: [f64; 3],
}

impl VolumeGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], center: [f64; 3]) -> Result<Self> {
        let g = VolumeGrid {
            dims,
            spacing,
            center,
        };
        g.validate()?;
        Ok(g)
    }

    /// Cube of `n³` voxels spanning `[-half, half]³`.
    pub fn cube(n: usize, half: f64) -> Self {
        let s = 2.0 * half / n as f64;
        VolumeGrid {
            dims: [n; 3],
            spacing: [s; 3],
            center: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&n| n == 0) {
            return Err(Error::arg("volume dims must be at least 1"));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::arg("voxel spacing must be positive"));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::arg("grid center must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn extent(&self) -> Vec3 {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    pub fn bbox(&self) -> Aabb {
        let e = self.extent();
        Aabb {
            min: [
                self.center[0] - e[0] / 2.0,
                self.center[1] - e[1] / 2.0,
                self.center[2] - e[2] / 2.0,
            ],
            max: [
                self.center[0] + e[0] / 2.0,
                self.center[1] + e[1] / 2.0,
                self.center[2] + e[2] / 2.0,
            ],
        }
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let min = self.bbox().min;
        [
            min[0] + (i as f64 + 0.5) * self.spacing[0],
            min[1] + (j as f64 + 0.5) * self.spacing[1],
            min[2] + (k as f64 + 0.5) * self.spacing[2],
        ]
    }

    /// The `dims` block of voxels starting at voxel `offset`.
    pub fn subgrid(&self, offset: [usize; 3], dims: [usize; 3]) -> Result<VolumeGrid> {
        if (0..3).any(|a| dims[a] == 0 || offset[a] + dims[a] > self.dims[a]) {
            return Err(Error::arg("subgrid exceeds parent grid"));
        }
        let min = self.bbox().min;
        let center = [
            min[0] + (offset[0] as f64 + dims[0] as f64 / 2.0) * self.spacing[0],
            min[1] + (offset[1] as f64 + dims[1] as f64 / 2.0) * self.spacing[1],
            min[2] + (offset[2] as f64 + dims[2] as f64 / 2.0) * self.spacing[2],
        ];
        VolumeGrid::new(dims, self.spacing, center)
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    /// Parametric slab intersection of `o + t·d`; `None` when the line misses.
    pub fn intersect(&self, o: Vec3, d: Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut ta, mut tb) = ((self.min[a] - o[a]) * inv, (self.max[a] - o[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 < t1).then_some((t0, t1))
    }

    pub fn contains(&self, x: Vec3) -> bool {
        (0..3).all(|a| x[a] >= self.min[a] && x[a] <= self.max[a])
    }

    pub fn contains_strictly(&self, x: Vec3) -> bool {
        (0..3).all(|a| x[a] > self.min[a] && x[a] < self.max[a])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_in: f64,
    pub t_out: f64,
}

impl Ray {
    /// Unbounded ray, not clipped against any volume.
    pub fn unbounded(origin: Vec3, dir: Vec3) -> Self {
        Ray {
            origin,
            dir,
            t_in: f64::NEG_INFINITY,
            t_out: f64::INFINITY,
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        linalg::add(self.origin, linalg::scale(self.dir, t))
    }

    pub fn hits(&self) -> bool {
        self.t_out > self.t_in
    }

    pub fn chord(&self) -> f64 {
        if self.hits() {
            self.t_out - self.t_in
        } else {
            0.0
        }
    }

    /// Clips the parameter range to `bbox`. A miss yields an empty range.
    pub fn clipped(origin: Vec3, dir: Vec3, bbox: &Aabb) -> Self {
        match bbox.intersect(origin, dir) {
            Some((t_in, t_out)) => Ray {
                origin,
                dir,
                t_in,
                t_out,
            },
            None => Ray {
                origin,
                dir,
                t_in: 0.0,
                t_out: 0.0,
            },
        }
    }
}

/// Ray from the source through the center of detector pixel `(u, v)` at view
/// `view`, clipped to the bounding box of `grid`.
pub fn ray_for_pixel(
    geom: &ScanGeometry,
    grid: &VolumeGrid,
    view: usize,
    u: usize,
    v: usize,
) -> Result<Ray> {
    if view >= geom.n_views() {
        return Err(Error::arg(format!(
            "view {view} out of range ({} views)",
            geom.n_views()
        )));
    }
    if u >= geom.nu || v >= geom.nv {
        return Err(Error::arg(format!(
            "pixel ({u}, {v}) outside {}x{} detector",
            geom.nu, geom.nv
        )));
    }
    let frame = geom.frame(view);
    Ok(Ray::clipped(frame.source, frame.pixel_dir(u, v), &grid.bbox()))
}

/// Scalar attenuation field on a voxel lattice, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: VolumeGrid,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(grid: VolumeGrid) -> Self {
        Volume {
            data: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn from_data(grid: VolumeGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::arg(format!(
                "volume data has {} values, grid needs {}",
                data.len(),
                grid.len()
            )));
        }
        Ok(Volume { grid, data })
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.index(i, j, k)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copies one axial (`z = k`) slice, x-fastest.
    pub fn axial_slice(&self, k: usize) -> Vec<f64> {
        let n = self.grid.dims[0] * self.grid.dims[1];
        self.data[k * n..(k + 1) * n].to_vec()
    }
}

/// Stack of log-domain line-integral images, u-fastest, view-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    pub geom: ScanGeometry,
    pub data: Vec<f64>,
}

impl ProjectionSet {
    pub fn zeros(geom: ScanGeometry) -> Self {
        ProjectionSet {
            data: vec![0.0; geom.n_views() * geom.pixels_per_view()],
            geom,
        }
    }

    pub fn from_data(geom: ScanGeometry, data: Vec<f64>) -> Result<Self> {
        let expect = geom.n_views() * geom.pixels_per_view();
        if data.len() != expect {
            return Err(Error::arg(format!(
                "projection data has {} values, geometry needs {expect}",
                data.len()
            )));
        }
        Ok(ProjectionSet { geom, data })
    }

    pub fn view(&self, k: usize) -> &[f64] {
        let n = self.geom.pixels_per_view();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn view_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.geom.pixels_per_view();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn pixel(&self, view: usize, u: usize, v: usize) -> f64 {
        self.view(view)[v * self.geom.nu + u]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Motion {
    /// Fractional semi-axis amplitude per axis, each in `[0, 1)`.
    pub scale_amplitude: [f64; 3],
    /// Translation amplitude of the center.
    pub translation_amplitude: [f64; 3],
    /// Period in units of the normalized cycle time `t ∈ [0, 1)`.
    pub period: f64,
}

impl Motion {
    fn factor(&self, t: f64) -> f64 {
        (2.0 * std::f64::consts::PI * t / self.period).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    /// z-y-x Euler angles in radians.
    #[serde(default)]
    pub rotation: [f64; 3],
    pub density: f64,
    #[serde(default)]
    pub motion: Option<Motion>,
}

impl Ellipsoid {
    /// Center and semi-axes after applying the motion at cycle time `t`.
    pub fn at_time(&self, t: f64) -> (Vec3, Vec3) {
        match &self.motion {
            None => (self.center, self.semi_axes),
            Some(m) => {
                let f = m.factor(t);
                let mut c = self.center;
                let mut a = self.semi_axes;
                for k in 0..3 {
                    c[k] += m.translation_amplitude[k] * f;
                    a[k] *= 1.0 + m.scale_amplitude[k] * f;
                }
                (c, a)
            }
        }
    }

    fn rotation_matrix(&self) -> Mat3 {
        linalg::euler_zyx(self.rotation)
    }

    pub fn contains_at(&self, x: Vec3, t: f64) -> bool {
        let (c, a) = self.at_time(t);
        let local = linalg::mat_vec(&linalg::transpose(&self.rotation_matrix()), linalg::sub(x, c));
        (0..3).map(|k| (local[k] / a[k]).powi(2)).sum::<f64>() <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PhantomSpec {
    pub ellipsoids: Vec<Ellipsoid>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        for (n, e) in self.ellipsoids.iter().enumerate() {
            if e.semi_axes.iter().any(|&a| !(a > 0.0)) {
                return Err(Error::arg(format!("ellipsoid {n}: semi-axes must be positive")));
            }
            if !(e.density >= 0.0) {
                return Err(Error::arg(format!("ellipsoid {n}: density must be nonnegative")));
            }
            if let Some(m) = &e.motion {
                if !(m.period > 0.0) {
                    return Err(Error::arg(format!("ellipsoid {n}: motion period must be positive")));
                }
                if m.scale_amplitude.iter().any(|s| !(0.0..1.0).contains(s)) {
                    return Err(Error::arg(format!(
                        "ellipsoid {n}: scale amplitude must lie in [0, 1)"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn has_motion(&self) -> bool {
        self.ellipsoids.iter().any(|e| e.motion.is_some())
    }

    /// Ten-ellipsoid head phantom in the layout of the 3D Shepp-Logan model,
    /// with nonnegative additive densities. Fits inside the unit ball.
    pub fn shepp_logan() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        #[rustfmt::skip]
        let table: [(f64, [f64; 3], [f64; 3], f64); 10] = [
            (0.30, [0.690, 0.920, 0.810], [0.0, 0.0, 0.0], 0.0),
            (0.30, [0.6624, 0.874, 0.780], [0.0, -0.0184, 0.0], 0.0),
            (0.20, [0.110, 0.310, 0.220], [0.22, 0.0, 0.0], -18.0),
            (0.20, [0.160, 0.410, 0.280], [-0.22, 0.0, 0.0], 18.0),
            (0.15, [0.210, 0.250, 0.410], [0.0, 0.35, -0.15], 0.0),
            (0.20, [0.046, 0.046, 0.050], [0.0, 0.1, 0.25], 0.0),
            (0.20, [0.046, 0.046, 0.050], [0.0, -0.1, 0.25], 0.0),
            (0.25, [0.046, 0.023, 0.050], [-0.08, -0.605, 0.0], 0.0),
            (0.25, [0.023, 0.023, 0.020], [0.0, -0.606, 0.0], 0.0),
            (0.25, [0.023, 0.046, 0.020], [0.06, -0.605, 0.0], 0.0),
        ];
        PhantomSpec {
            ellipsoids: table
                .iter()
                .map(|&(density, semi_axes, center, phi)| Ellipsoid {
                    center,
                    semi_axes,
                    rotation: [phi * deg, 0.0, 0.0],
                    density,
                    motion: None,
                })
                .collect(),
        }
    }

    /// [`PhantomSpec::shepp_logan`] plus one dense ellipsoid whose semi-axes
    /// and position oscillate once per cycle.
    pub fn breathing() -> Self {
        let mut spec = Self::shepp_logan();
        spec.ellipsoids.push(Ellipsoid {
            center: [0.0, -0.25, -0.05],
            semi_axes: [0.22, 0.18, 0.26],
            rotation: [0.0; 3],
            density: 0.5,
            motion: Some(Motion {
                scale_amplitude: [0.25, 0.25, 0.35],
                translation_amplitude: [0.0, 0.0, 0.15],
                period: 1.0,
            }),
        });
        spec
    }
}

/// Voxelizes the phantom at cycle time `t` by center containment.
pub fn make_phantom(spec: &PhantomSpec, grid: &VolumeGrid, t: f64) -> Volume {
    let [nx, ny, nz] = grid.dims;
    let mut data = vec![0.0; grid.len()];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                let x = grid.voxel_center(i, j, k);
                slab[i + nx * j] = spec
                    .ellipsoids
                    .iter()
                    .filter(|e| e.contains_at(x, t))
                    .map(|e| e.density)
                    .sum();
            }
        }
    });
    debug_assert_eq!(data.len(), nx * ny * nz);
    Volume {
        grid: *grid,
        data,
    }
}

/// Line-integral projections of `vol`. With `photons_i0`, intensities are
/// Poisson-sampled per pixel from an independent stream keyed by
/// `(seed, view, v, u)` and mapped back to the log domain.
pub fn simulate_projections(
    vol: &Volume,
    geom: &ScanGeometry,
    photons_i0: Option<f64>,
    seed: u64,
) -> Result<ProjectionSet> {
    if !vol.is_finite() {
        return Err(Error::Data("volume contains non-finite values".into()));
    }
    if let Some(i0) = photons_i0 {
        if !(i0 > 0.0) {
            return Err(Error::arg(format!("photon count must be positive, got {i0}")));
        }
    }
    let projector = LinearProjector::new(geom.clone(), vol.grid)?;
    let mut proj = projector.forward(vol)?;
    if let Some(i0) = photons_i0 {
        add_poisson_noise(&mut proj, i0, seed);
    }
    Ok(proj)
}

/// Phase-resolved simulation: each view sees the phantom at cycle time
/// `phase / n_phases`. Returns the projections and one ground-truth volume
/// per phase. Static geometries yield a single volume at `t = 0`.
pub fn simulate_phantom(
    spec: &PhantomSpec,
    grid: &VolumeGrid,
    geom: &ScanGeometry,
    photons_i0: Option<f64>,
    seed: u64,
) -> Result<(ProjectionSet, Vec<Volume>)> {
    spec.validate()?;
    geom.validate()?;
    if let Some(i0) = photons_i0 {
        if !(i0 > 0.0) {
            return Err(Error::arg(format!("photon count must be positive, got {i0}")));
        }
    }
    let n_phases = if geom.is_dynamic() { geom.n_phases } else { 1 };
    let volumes: Vec<Volume> = (0..n_phases)
        .map(|p| make_phantom(spec, grid, p as f64 / n_phases as f64))
        .collect();
    let mut proj = ProjectionSet::zeros(geom.clone());
    for (p, vol) in volumes.iter().enumerate() {
        let views: Vec<usize> = (0..geom.n_views())
            .filter(|&v| geom.phase_of(v).unwrap_or(0) == p)
            .collect();
        if views.is_empty() {
            continue;
        }
        let part = LinearProjector::new(geom.clone(), *grid)?.with_views(views.clone())?.forward(vol)?;
        for v in views {
            proj.view_mut(v).copy_from_slice(part.view(v));
        }
    }
    if let Some(i0) = photons_i0 {
        add_poisson_noise(&mut proj, i0, seed);
    }
    Ok((proj, volumes))
}

fn add_poisson_noise(proj: &mut ProjectionSet, i0: f64, seed: u64) {
    proj.data.par_iter_mut().enumerate().for_each(|(idx, px)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(idx as u64);
        let mean = i0 * (-*px).exp();
        let counts = if mean > 0.0 {
            Poisson::new(mean).map(|d| d.sample(&mut rng)).unwrap_or(mean)
        } else {
            0.0
        };
        *px = (i0 / counts.max(1.0)).ln();
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> ScanGeometry {
        ScanGeometry::circular(2.0, 4.0, (7, 9), (0.1, 0.12), 8, None).unwrap()
    }

    #[test]
    fn center_pixel_ray_passes_through_origin() {
        let g = geom();
        let grid = VolumeGrid::cube(8, 0.5);
        let ray = ray_for_pixel(&g, &grid, 0, 3, 4).unwrap();
        assert!((linalg::norm(ray.dir) - 1.0).abs() < 1e-12);
        assert_eq!(ray.origin, [-2.0, 0.0, 0.0]);
        let p = ray.at(2.0);
        assert!(linalg::norm(p) < 1e-12);
    }

    #[test]
    fn half_turn_mirrors_source() {
        let mut g = geom();
        g.angles = vec![0.0, std::f64::consts::PI];
        let grid = VolumeGrid::cube(8, 0.5);
        let a = ray_for_pixel(&g, &grid, 0, 3, 4).unwrap();
        let b = ray_for_pixel(&g, &grid, 1, 3, 4).unwrap();
        for k in 0..2 {
            assert!((a.origin[k] + b.origin[k]).abs() < 1e-12);
        }
        assert!((a.origin[2] - b.origin[2]).abs() < 1e-12);
    }

    #[test]
    fn ray_reaches_independently_constructed_detector_point() {
        let mut g = geom();
        g.angles = vec![0.7];
        let grid = VolumeGrid::cube(8, 0.5);
        let ray = ray_for_pixel(&g, &grid, 0, 3, 5).unwrap();
        // Independent construction: rotate the angle-0 detector point.
        let (s, c) = 0.7f64.sin_cos();
        let y0 = (3.0 - 3.0) * 0.1;
        let z0 = (5.0 - 4.0) * 0.12;
        let x0 = 4.0 - 2.0;
        let det = [c * x0 - s * y0, s * x0 + c * y0, z0];
        let src = [-2.0 * c, -2.0 * s, 0.0];
        let t = linalg::norm(linalg::sub(det, src));
        let p = ray.at(t);
        for k in 0..3 {
            assert!((p[k] - det[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_indices_rejected() {
        let g = geom();
        let grid = VolumeGrid::cube(4, 0.5);
        assert!(matches!(ray_for_pixel(&g, &grid, 8, 0, 0), Err(Error::Argument(_))));
        assert!(matches!(ray_for_pixel(&g, &grid, 0, 7, 0), Err(Error::Argument(_))));
        assert!(matches!(ray_for_pixel(&g, &grid, 0, 0, 9), Err(Error::Argument(_))));
    }

    #[test]
    fn geometry_validation() {
        assert!(ScanGeometry::circular(2.0, 1.5, (4, 4), (0.1, 0.1), 4, None).is_err());
        let mut g = geom();
        g.phases = Some(vec![0; 3]);
        assert!(g.validate().is_err());
        let g = ScanGeometry::circular(2.0, 4.0, (4, 4), (0.1, 0.1), 100, Some(10)).unwrap();
        let phases = g.phases.as_ref().unwrap();
        assert!(phases.iter().enumerate().all(|(k, &p)| p == k % 10));
    }

    #[test]
    fn phantom_containment() {
        let grid = VolumeGrid::cube(9, 1.5);
        let empty = make_phantom(&PhantomSpec { ellipsoids: vec![] }, &grid, 0.0);
        assert!(empty.data.iter().all(|&v| v == 0.0));
        let ball = PhantomSpec {
            ellipsoids: vec![Ellipsoid {
                center: [0.0; 3],
                semi_axes: [1.0; 3],
                rotation: [0.0; 3],
                density: 1.0,
                motion: None,
            }],
        };
        let vol = make_phantom(&ball, &grid, 0.3);
        assert_eq!(vol.get(4, 4, 4), 1.0);
        assert_eq!(vol.get(0, 0, 0), 0.0);
    }

    #[test]
    fn moving_ellipsoid_changes_exactly_the_boundary_voxels() {
        let grid = VolumeGrid::cube(20, 1.0);
        let spec = PhantomSpec::breathing();
        let a = make_phantom(&spec, &grid, 0.0);
        let b = make_phantom(&spec, &grid, 0.25);
        let mover = spec.ellipsoids.last().unwrap();
        let mut changed = 0;
        for k in 0..20 {
            for j in 0..20 {
                for i in 0..20 {
                    let x = grid.voxel_center(i, j, k);
                    let in_a = mover.contains_at(x, 0.0);
                    let in_b = mover.contains_at(x, 0.25);
                    let diff = b.get(i, j, k) - a.get(i, j, k);
                    let expect = match (in_a, in_b) {
                        (false, true) => mover.density,
                        (true, false) => -mover.density,
                        _ => 0.0,
                    };
                    assert!((diff - expect).abs() < 1e-12);
                    changed += (expect != 0.0) as usize;
                }
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn static_phantom_ignores_time() {
        let grid = VolumeGrid::cube(12, 1.0);
        let spec = PhantomSpec::shepp_logan();
        assert_eq!(make_phantom(&spec, &grid, 0.0), make_phantom(&spec, &grid, 0.6));
    }

    #[test]
    fn project_point_inverts_pixel_center() {
        let g = geom();
        let f = g.frame(3);
        let p = f.pixel_center(2, 6);
        let x = linalg::add(f.source, linalg::scale(linalg::sub(p, f.source), 0.45));
        let (u, v) = f.project(x).unwrap();
        assert!((u - 2.0).abs() < 1e-9 && (v - 6.0).abs() < 1e-9);
    }
}
