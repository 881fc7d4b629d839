//! Independent oracles and the finite-difference gradient suite shared by the
//! integration tests and the acceptance run.
#![allow(dead_code)]

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tgfield::geometry::{Ray, ScanGeometry, VolumeGrid};
use tgfield::gsplat::{self, GaussianPrimitive, GaussianSet, Renderer, ViewRays};
use tgfield::linalg::Vec3;
use tgfield::neural::{
    finalize, hash::HashGrid, mlp::Mlp, flow::MotionFlowNet, splat, stab::Stab, DeformationField, FieldConfig,
    FieldMode, HashConfig, ParamGroup, ParamStore, PrimTensors, PrimVars, Tape, Tensor,
};
use tgfield::train::losses::{self, Image};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = [uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Random anisotropic primitive near the origin with a non-unit quaternion.
pub fn random_primitive(rng: &mut ChaCha8Rng) -> GaussianPrimitive {
    GaussianPrimitive {
        mu: [uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3)],
        quat: [uniform(rng, 0.3, 1.5), uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)],
        log_scale: [uniform(rng, -2.5, -0.7), uniform(rng, -2.5, -0.7), uniform(rng, -2.5, -0.7)],
        rho_raw: uniform(rng, -1.0, 2.0),
    }
}

/// Unit-direction ray passing within `miss` of the primitive center.
pub fn ray_near(rng: &mut ChaCha8Rng, g: &GaussianPrimitive, miss: f64) -> Ray {
    let dir = random_unit(rng);
    let off = [uniform(rng, -miss, miss), uniform(rng, -miss, miss), uniform(rng, -miss, miss)];
    let t0 = uniform(rng, 2.0, 5.0);
    let origin = [
        g.mu[0] + off[0] - t0 * dir[0],
        g.mu[1] + off[1] - t0 * dir[1],
        g.mu[2] + off[2] - t0 * dir[2],
    ];
    Ray::unbounded(origin, dir)
}

/// Precision matrix and density built with nalgebra, independently of the
/// library's covariance code.
pub fn oracle_precision(g: &GaussianPrimitive) -> (Matrix3<f64>, f64) {
    let q = UnitQuaternion::from_quaternion(Quaternion::new(g.quat[0], g.quat[1], g.quat[2], g.quat[3]));
    let r = q.to_rotation_matrix().into_inner();
    let s = Matrix3::from_diagonal(&Vector3::new(
        (2.0 * g.log_scale[0]).exp(),
        (2.0 * g.log_scale[1]).exp(),
        (2.0 * g.log_scale[2]).exp(),
    ));
    let cov = r * s * r.transpose();
    let rho = (1.0 + g.rho_raw.exp()).ln();
    (cov.try_inverse().expect("covariance invertible"), rho)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Line integral of the primitive's density along the whole ray, by
/// adaptive quadrature over ±14 standard deviations of the 1D profile.
pub fn quadrature_integral(g: &GaussianPrimitive, ray: &Ray) -> f64 {
    let (p, rho) = oracle_precision(g);
    let d = Vector3::from(ray.dir);
    let o = Vector3::from(ray.origin) - Vector3::from(g.mu);
    let a = d.dot(&(p * d));
    let tc = -d.dot(&(p * o)) / a;
    let half = 14.0 / a.sqrt();
    let f = |t: f64| {
        let x = o + d * t;
        rho * (-0.5 * x.dot(&(p * x))).exp()
    };
    let peak = f(tc).max(1e-300);
    adaptive_simpson(&f, tc - half, tc + half, 1e-15 * peak * half)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FdStats {
    pub passed: usize,
    pub total: usize,
    pub worst: f64,
}

impl FdStats {
    pub fn merge(&mut self, o: FdStats) {
        self.passed += o.passed;
        self.total += o.total;
        self.worst = self.worst.max(o.worst);
    }

    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        self.passed as f64 / self.total as f64
    }
}

pub const FD_REL: f64 = 1e-3;
/// Entries whose analytic and numeric values are both below this count as
/// matching.
pub const FD_FLOOR: f64 = 1e-8;

/// Central differences of `f` at `x` on the `indices`, compared with `grad`.
pub fn fd_check(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], grad: &[f64], indices: &[usize]) -> FdStats {
    fd_check_step(f, x, grad, indices, 1e-6)
}

/// [`fd_check`] with relative step `step`.
pub fn fd_check_step(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], grad: &[f64], indices: &[usize], step: f64) -> FdStats {
    let mut st = FdStats::default();
    let mut xp = x.to_vec();
    for &i in indices {
        let h = step * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        let num = (fp - fm) / (2.0 * h);
        let err = (num - grad[i]).abs();
        let scale = num.abs().max(grad[i].abs());
        let rel = if scale < FD_FLOOR { 0.0 } else { err / scale };
        st.total += 1;
        if err <= FD_REL * scale || scale < FD_FLOOR {
            st.passed += 1;
        }
        st.worst = st.worst.max(rel);
    }
    st
}

/// `count` distinct indices below `n` (all of them when `n <= count`).
pub fn sample_indices(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    rand::seq::index::sample(rng, n, count).into_vec()
}

pub fn flatten(store: &ParamStore) -> Vec<f64> {
    store.params.iter().flat_map(|p| p.value.data.iter().cloned()).collect()
}

pub fn unflatten(store: &mut ParamStore, x: &[f64]) {
    let mut off = 0;
    for p in store.params.iter_mut() {
        let n = p.value.data.len();
        p.value.data.copy_from_slice(&x[off..off + n]);
        off += n;
    }
}

/// Flattened parameter gradients in store order, zeros where absent.
pub fn flat_param_grads(store: &ParamStore, grads: &tgfield::neural::Gradients) -> Vec<f64> {
    store
        .ids()
        .flat_map(|id| match grads.param(id) {
            Some(g) => g.data.clone(),
            None => vec![0.0; store.get(id).data.len()],
        })
        .collect()
}

fn randn_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, s: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| s * uniform(rng, -1.0, 1.0)).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ray-integral backward against central differences on 20 random
/// (primitive, ray) pairs, all 11 raw parameters each.
pub fn grad_ray_integral(seed: u64) -> FdStats {
    let mut r = rng(seed);
    let mut st = FdStats::default();
    for _ in 0..20 {
        let g = random_primitive(&mut r);
        let ray = ray_near(&mut r, &g, 0.1);
        let an = gsplat::ray_integral_backward_with_cull(&g, &ray, 1.0, f64::INFINITY).unwrap();
        let x: Vec<f64> = g.mu.iter().chain(&g.quat).chain(&g.log_scale).chain([&g.rho_raw]).cloned().collect();
        let grad: Vec<f64> = an.mu.iter().chain(&an.quat).chain(&an.log_scale).chain([&an.rho_raw]).cloned().collect();
        let mut f = |x: &[f64]| {
            let p = GaussianPrimitive {
                mu: [x[0], x[1], x[2]],
                quat: [x[3], x[4], x[5], x[6]],
                log_scale: [x[7], x[8], x[9]],
                rho_raw: x[10],
            };
            gsplat::ray_integral_with_cull(&p, &ray, f64::INFINITY).unwrap()
        };
        st.merge(fd_check(&mut f, &x, &grad, &(0..11).collect::<Vec<_>>()));
    }
    st
}

/// Hash encoder: coordinate and table gradients of a random linear
/// functional, for a 3D grid and a 4D grid with hashed levels.
pub fn grad_hash(seed: u64) -> FdStats {
    let mut r = rng(seed);
    let mut st = FdStats::default();
    let cfg = HashConfig {
        levels: 4,
        features_per_level: 2,
        table_size_log2: 8,
        base_res: 3,
        max_res: 24,
    };
    for (dim, time_res) in [(3usize, 0usize), (4, 5)] {
        let mut store = ParamStore::new();
        let grid = HashGrid::new(dim, cfg, time_res, &mut store, &mut r).unwrap();
        let tid = grid.table;
        let t = store.get(tid).clone();
        store.get_mut(tid).data = (0..t.len()).map(|_| uniform(&mut r, -1.0, 1.0)).collect();
        let n = 12;
        let coords = Tensor::new(n, dim, (0..n * dim).map(|_| uniform(&mut r, 0.02, 0.98)).collect());
        let w = randn_tensor(&mut r, n, grid.output_width(), 1.0);
        let (gx, gt) = {
            let mut tape = Tape::new();
            let x = tape.leaf(coords.clone());
            let h = grid.encode_tape(&mut tape, &store, x).unwrap();
            let g = tape.backward(&[(h, w.clone())]);
            (g.wrt(x).unwrap().data.clone(), g.param(tid).unwrap().data.clone())
        };
        let idx = sample_indices(&mut r, coords.len(), coords.len());
        let mut fx = |x: &[f64]| {
            let c = Tensor::new(n, dim, x.to_vec());
            dot(&grid.encode(&store, &c).unwrap().data, &w.data)
        };
        st.merge(fd_check(&mut fx, &coords.data, &gx, &idx));
        let table = store.get(tid).data.clone();
        let touched: Vec<usize> = (0..table.len()).filter(|&i| gt[i] != 0.0).collect();
        let mut idx: Vec<usize> = sample_indices(&mut r, touched.len(), 60).into_iter().map(|i| touched[i]).collect();
        idx.extend(sample_indices(&mut r, table.len(), 20));
        let mut s2 = store.clone();
        let mut ft = |x: &[f64]| {
            s2.get_mut(tid).data.copy_from_slice(x);
            dot(&grid.encode(&s2, &coords).unwrap().data, &w.data)
        };
        st.merge(fd_check(&mut ft, &table, &gt, &idx));
    }
    st
}

/// Decoder head MLP: input and parameter gradients.
pub fn grad_decoder(seed: u64) -> FdStats {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "head", &[16, 24, 24, 4], ParamGroup::Decoder, &mut r, false).unwrap();
    let n = 6;
    let x0 = randn_tensor(&mut r, n, 16, 1.0);
    let w = randn_tensor(&mut r, n, 4, 1.0);
    let (gx, gp) = {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = mlp.forward_tape(&mut tape, &store, x);
        let g = tape.backward(&[(y, w.clone())]);
        (g.wrt(x).unwrap().data.clone(), flat_param_grads(&store, &g))
    };
    let mut st = FdStats::default();
    let mut fx = |x: &[f64]| dot(&mlp.forward(&store, &Tensor::new(n, 16, x.to_vec())).unwrap().data, &w.data);
    st.merge(fd_check(&mut fx, &x0.data, &gx, &(0..x0.len()).collect::<Vec<_>>()));
    let p0 = flatten(&store);
    let idx = sample_indices(&mut r, p0.len(), 200);
    let mut s2 = store.clone();
    let mut fp = |x: &[f64]| {
        unflatten(&mut s2, x);
        dot(&mlp.forward(&s2, &x0).unwrap().data, &w.data)
    };
    st.merge(fd_check(&mut fp, &p0, &gp, &idx));
    st
}

/// Attention block: embedding and projection-weight gradients.
pub fn grad_stab(seed: u64) -> FdStats {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let width = 8;
    let window = 4;
    let stab = Stab::new(&mut store, width, &mut r).unwrap();
    let rows = 3 * window;
    let h0 = randn_tensor(&mut r, rows, width, 1.0);
    let w = randn_tensor(&mut r, rows, width, 1.0);
    let eval = |store: &ParamStore, h: &Tensor| -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(h.clone());
        let y = stab.forward_tape(&mut tape, store, x, window).unwrap();
        dot(&tape.value(y).data, &w.data)
    };
    let (gx, gp) = {
        let mut tape = Tape::new();
        let x = tape.leaf(h0.clone());
        let y = stab.forward_tape(&mut tape, &store, x, window).unwrap();
        let g = tape.backward(&[(y, w.clone())]);
        (g.wrt(x).unwrap().data.clone(), flat_param_grads(&store, &g))
    };
    let mut st = FdStats::default();
    let mut fx = |x: &[f64]| eval(&store, &Tensor::new(rows, width, x.to_vec()));
    st.merge(fd_check(&mut fx, &h0.data, &gx, &(0..h0.len()).collect::<Vec<_>>()));
    let p0 = flatten(&store);
    let mut s2 = store.clone();
    let mut fp = |x: &[f64]| {
        unflatten(&mut s2, x);
        eval(&s2, &h0)
    };
    st.merge(fd_check(&mut fp, &p0, &gp, &(0..p0.len()).collect::<Vec<_>>()));
    st
}

/// Motion flow with nonzero residual coefficients: point and parameter
/// gradients at every phase.
pub fn grad_flow(seed: u64) -> FdStats {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let n_phases = 4;
    let flow = MotionFlowNet::new(&mut store, &[12, 12], 2, n_phases, &mut r).unwrap();
    for p in store.params.iter_mut() {
        p.value.data.iter_mut().for_each(|v| *v += 0.5 * uniform(&mut r, -1.0, 1.0));
    }
    let n = 5;
    let x0 = Tensor::new(n, 3, (0..n * 3).map(|_| uniform(&mut r, 0.0, 1.0)).collect());
    let w = randn_tensor(&mut r, n, 3, 1.0);
    let mut st = FdStats::default();
    for phase in 0..n_phases {
        let eval = |store: &ParamStore, x: &Tensor| -> f64 {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let y = flow.forward_tape(&mut tape, store, xv, phase).unwrap();
            dot(&tape.value(y).data, &w.data)
        };
        let (gx, gp) = {
            let mut tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let y = flow.forward_tape(&mut tape, &store, x, phase).unwrap();
            let g = tape.backward(&[(y, w.clone())]);
            (g.wrt(x).unwrap().data.clone(), flat_param_grads(&store, &g))
        };
        let mut fx = |x: &[f64]| eval(&store, &Tensor::new(n, 3, x.to_vec()));
        st.merge(fd_check(&mut fx, &x0.data, &gx, &(0..x0.len()).collect::<Vec<_>>()));
        let p0 = flatten(&store);
        let idx = sample_indices(&mut r, p0.len(), 80);
        let mut s2 = store.clone();
        let mut fp = |x: &[f64]| {
            unflatten(&mut s2, x);
            eval(&s2, &x0)
        };
        st.merge(fd_check(&mut fp, &p0, &gp, &idx));
    }
    st
}

pub fn small_geometry(n_views: usize, det: usize) -> ScanGeometry {
    ScanGeometry::circular(4.0, 6.0, (det, det), (0.2, 0.2), n_views, None).unwrap()
}

pub fn random_set(rng: &mut ChaCha8Rng, n: usize) -> GaussianSet {
    GaussianSet::new(
        (0..n)
            .map(|_| {
                let mut g = random_primitive(rng);
                g.log_scale = [uniform(rng, -1.9, -1.2), uniform(rng, -1.9, -1.2), uniform(rng, -1.9, -1.2)];
                g
            })
            .collect(),
    )
}

/// End-to-end objective: L1 + D-SSIM over the views plus TV of a voxelized
/// block, through the deformation field when one is given.
pub struct EndToEnd {
    pub geom: ScanGeometry,
    pub rays: Vec<ViewRays>,
    pub targets: Vec<Vec<f64>>,
    pub block: VolumeGrid,
    pub renderer: Renderer,
    pub lambda_ssim: f64,
    pub lambda_tv: f64,
    pub phase: Option<usize>,
}

impl EndToEnd {
    pub fn new(seed: u64, n_views: usize) -> Self {
        let mut r = rng(seed);
        let geom = small_geometry(n_views, 16);
        let truth = random_set(&mut r, 10);
        let renderer = Renderer::default();
        let targets = (0..n_views).map(|v| renderer.render(&truth.primitives, &geom, geom.angles[v]).image).collect();
        let rays = geom.angles.iter().map(|&a| ViewRays::new(&geom, a)).collect();
        EndToEnd {
            geom,
            rays,
            targets,
            block: VolumeGrid::cube(8, 0.6),
            renderer,
            lambda_ssim: 0.25,
            lambda_tv: 0.05,
            phase: None,
        }
    }

    /// Loss value and, when `grad` is set, gradients w.r.t. the primitive
    /// tensors and the field parameters.
    pub fn eval(&self, prims: &PrimTensors, field: Option<&DeformationField>, grad: bool) -> (f64, Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let leaves = PrimVars::leaves(&mut tape, prims);
        let p = match field {
            Some(f) => f.deform_tape(&mut tape, &leaves, self.phase).unwrap(),
            None => finalize(&mut tape, &leaves, gsplat::ScaleBounds::for_grid(&self.block)),
        };
        let (nu, nv) = (self.geom.nu, self.geom.nv);
        let mut loss = 0.0;
        let mut seeds = Vec::new();
        for (rays, target) in self.rays.iter().zip(&self.targets) {
            let img = splat::render(&mut tape, &p, rays, self.renderer);
            let pred = tape.value(img).data.clone();
            let (pi, ti) = (Image::new(&pred, nu, nv).unwrap(), Image::new(target, nu, nv).unwrap());
            let (l1, g1) = losses::loss_l1_grad(&pi, &ti).unwrap();
            let (ds, gd) = losses::loss_dssim_grad(&pi, &ti).unwrap();
            loss += l1 + self.lambda_ssim * ds;
            let g: Vec<f64> = g1.iter().zip(&gd).map(|(a, b)| a + self.lambda_ssim * b).collect();
            seeds.push((img, Tensor::row_vector(g)));
        }
        let vox = splat::voxelize(&mut tape, &p, self.block);
        let (tv, gtv) = losses::loss_tv3d_grad(&tape.value(vox).data, self.block.dims).unwrap();
        loss += self.lambda_tv * tv;
        seeds.push((vox, Tensor::row_vector(gtv.iter().map(|g| self.lambda_tv * g).collect())));
        if !grad {
            return (loss, Vec::new(), Vec::new());
        }
        let g = tape.backward(&seeds);
        let gp: Vec<f64> = leaves
            .as_array()
            .iter()
            .zip(prims.tensors())
            .flat_map(|(&v, t)| g.wrt(v).map(|t| t.data.clone()).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        let gf = field.map(|f| flat_param_grads(&f.params, &g)).unwrap_or_default();
        (loss, gp, gf)
    }
}

pub fn flatten_prims(p: &PrimTensors) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.data.iter().cloned()).collect()
}

pub fn unflatten_prims(p: &mut PrimTensors, x: &[f64]) {
    let mut off = 0;
    for t in p.tensors_mut() {
        let n = t.len();
        t.data.copy_from_slice(&x[off..off + n]);
        off += n;
    }
}

pub fn small_field_config() -> FieldConfig {
    FieldConfig {
        hash: HashConfig {
            levels: 4,
            features_per_level: 2,
            table_size_log2: 10,
            base_res: 4,
            max_res: 32,
        },
        head_hidden: 16,
        head_layers: 2,
        ..FieldConfig::default()
    }
}

/// Full loss of 10 primitives seen from 2 views, through a perturbed static
/// field and a perturbed 3-phase field: primitive and field-parameter
/// gradients.
pub fn grad_end_to_end(seed: u64) -> FdStats {
    let mut st = grad_end_to_end_mode(seed, FieldMode::Static);
    st.merge(grad_end_to_end_mode(seed, FieldMode::Dynamic { n_phases: 3 }));
    st
}

pub fn grad_end_to_end_mode(seed: u64, mode: FieldMode) -> FdStats {
    let mut r = rng(seed + 1);
    let mut e2e = EndToEnd::new(seed, 2);
    if let FieldMode::Dynamic { .. } = mode {
        e2e.phase = Some(1);
    }
    let init = random_set(&mut r, 10);
    let mut prims = PrimTensors::from_set(&init);
    let mut field = DeformationField::new(small_field_config(), mode, e2e.block).unwrap();
    for p in field.params.params.iter_mut() {
        let s = if p.group == ParamGroup::Hash { 0.3 } else { 5e-2 };
        p.value.data.iter_mut().for_each(|v| *v += s * uniform(&mut r, -1.0, 1.0));
    }
    let (_, gp, gf) = e2e.eval(&prims, Some(&field), true);
    let mut st = FdStats::default();
    let x0 = flatten_prims(&prims);
    let idx: Vec<usize> = (0..x0.len()).collect();
    {
        let mut p2 = prims.clone();
        let mut f = |x: &[f64]| {
            unflatten_prims(&mut p2, x);
            e2e.eval(&p2, Some(&field), false).0
        };
        st.merge(fd_check(&mut f, &x0, &gp, &idx));
    }
    let f0 = flatten(&field.params);
    let touched: Vec<usize> = (0..f0.len()).filter(|&i| gf[i] != 0.0).collect();
    let idx: Vec<usize> = sample_indices(&mut r, touched.len(), 150).into_iter().map(|i| touched[i]).collect();
    let mut f2 = field.clone();
    let mut f = |x: &[f64]| {
        unflatten(&mut f2.params, x);
        e2e.eval(&prims, Some(&f2), false).0
    };
    st.merge(fd_check_step(&mut f, &f0, &gf, &idx, 1e-4));
    unflatten_prims(&mut prims, &x0);
    st
}

/// Every component of the gradient suite, by name.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, FdStats)> {
    vec![
        ("ray integral", grad_ray_integral(seed)),
        ("hash encoder", grad_hash(seed)),
        ("decoder heads", grad_decoder(seed)),
        ("stab", grad_stab(seed)),
        ("motion flow", grad_flow(seed)),
        ("end to end", grad_end_to_end(seed)),
    ]
}

/// Shepp-Logan scan of an `n³` grid with `views` projections on an `n²`
/// detector wide enough to cover the field of view.
pub fn phantom_scan(
    n: usize,
    views: usize,
    photons: Option<f64>,
) -> (tgfield::projector::LinearProjector, tgfield::geometry::ProjectionSet, tgfield::geometry::Volume) {
    let geom = ScanGeometry::circular(4.0, 6.0, (n, n), (3.2 / n as f64, 3.2 / n as f64), views, None).unwrap();
    let grid = VolumeGrid::cube(n, 1.0);
    let spec = tgfield::geometry::PhantomSpec::shepp_logan();
    let (proj, mut truth) = tgfield::geometry::simulate_phantom(&spec, &grid, &geom, photons, 0).unwrap();
    let p = tgfield::projector::LinearProjector::new(geom, grid).unwrap();
    (p, proj, truth.remove(0))
}
