//! Rendering and voxelization as tape operations over primitive tensors.

use super::tape::{CustomOp, ParamGrads, Tape, Tensor, Var};
use crate::geometry::VolumeGrid;
use crate::gsplat::{self, GaussianPrimitive, GaussianSet, Prepared, PrimitiveGrad, Renderer, ViewRays};

/// Primitive parameters as column-stacked tensors: `mu` (n×3), `quat` (n×4),
/// `log_scale` (n×3) and `rho_raw` (n×1).
#[derive(Debug, Clone, PartialEq)]
pub struct PrimTensors {
    pub mu: Tensor,
    pub quat: Tensor,
    pub log_scale: Tensor,
    pub rho_raw: Tensor,
}

impl PrimTensors {
    pub fn from_set(set: &GaussianSet) -> Self {
        let n = set.len();
        let p = &set.primitives;
        PrimTensors {
            mu: Tensor::new(n, 3, p.iter().flat_map(|g| g.mu).collect()),
            quat: Tensor::new(n, 4, p.iter().flat_map(|g| g.quat).collect()),
            log_scale: Tensor::new(n, 3, p.iter().flat_map(|g| g.log_scale).collect()),
            rho_raw: Tensor::new(n, 1, p.iter().map(|g| g.rho_raw).collect()),
        }
    }

    pub fn len(&self) -> usize {
        self.mu.rows
    }

    pub fn is_empty(&self) -> bool {
        self.mu.rows == 0
    }

    pub fn to_set(&self) -> GaussianSet {
        GaussianSet::new(primitives(&self.mu, &self.quat, &self.log_scale, &self.rho_raw))
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.mu, &self.quat, &self.log_scale, &self.rho_raw]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.mu, &mut self.quat, &mut self.log_scale, &mut self.rho_raw]
    }
}

/// Tape handles for the four primitive tensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimVars {
    pub mu: Var,
    pub quat: Var,
    pub log_scale: Var,
    pub rho_raw: Var,
}

impl PrimVars {
    pub fn leaves<'a>(tape: &mut Tape<'a>, p: &'a PrimTensors) -> Self {
        PrimVars {
            mu: tape.leaf_ref(&p.mu),
            quat: tape.leaf_ref(&p.quat),
            log_scale: tape.leaf_ref(&p.log_scale),
            rho_raw: tape.leaf_ref(&p.rho_raw),
        }
    }

    pub fn as_array(&self) -> [Var; 4] {
        [self.mu, self.quat, self.log_scale, self.rho_raw]
    }

    pub fn values(&self, tape: &Tape) -> PrimTensors {
        PrimTensors {
            mu: tape.value(self.mu).clone(),
            quat: tape.value(self.quat).clone(),
            log_scale: tape.value(self.log_scale).clone(),
            rho_raw: tape.value(self.rho_raw).clone(),
        }
    }
}

fn primitives(mu: &Tensor, quat: &Tensor, log_scale: &Tensor, rho: &Tensor) -> Vec<GaussianPrimitive> {
    (0..mu.rows)
        .map(|i| {
            let (m, q, s) = (mu.row(i), quat.row(i), log_scale.row(i));
            GaussianPrimitive {
                mu: [m[0], m[1], m[2]],
                quat: [q[0], q[1], q[2], q[3]],
                log_scale: [s[0], s[1], s[2]],
                rho_raw: rho.data[i],
            }
        })
        .collect()
}

fn prepare(tape: &Tape, p: &PrimVars) -> Vec<Option<Prepared>> {
    let prims = primitives(
        tape.value(p.mu),
        tape.value(p.quat),
        tape.value(p.log_scale),
        tape.value(p.rho_raw),
    );
    gsplat::prepare_all(&prims).0
}

fn split(grads: Vec<PrimitiveGrad>) -> Vec<Option<Tensor>> {
    let n = grads.len();
    let mut mu = Tensor::zeros(n, 3);
    let mut quat = Tensor::zeros(n, 4);
    let mut s = Tensor::zeros(n, 3);
    let mut rho = Tensor::zeros(n, 1);
    for (i, g) in grads.iter().enumerate() {
        mu.row_mut(i).copy_from_slice(&g.mu);
        quat.row_mut(i).copy_from_slice(&g.quat);
        s.row_mut(i).copy_from_slice(&g.log_scale);
        rho.data[i] = g.rho_raw;
    }
    vec![Some(mu), Some(quat), Some(s), Some(rho)]
}

/// Renders the primitives into a `1 × (nu·nv)` image.
pub fn render<'a>(tape: &mut Tape<'a>, p: &PrimVars, rays: &'a ViewRays, renderer: Renderer) -> Var {
    let prepared = prepare(tape, p);
    let image = renderer.render_prepared(&prepared, rays);
    tape.custom(
        &p.as_array(),
        Tensor::row_vector(image),
        Box::new(RenderOp {
            prepared,
            rays,
            renderer,
        }),
    )
}

struct RenderOp<'a> {
    prepared: Vec<Option<Prepared>>,
    rays: &'a ViewRays,
    renderer: Renderer,
}

impl CustomOp for RenderOp<'_> {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &mut ParamGrads) -> Vec<Option<Tensor>> {
        split(self.renderer.backward_prepared(&self.prepared, self.rays, &grad.data))
    }
}

/// Samples the primitive field at the voxel centers of `grid`, as a
/// `1 × grid.len()` row.
pub fn voxelize<'a>(tape: &mut Tape<'a>, p: &PrimVars, grid: VolumeGrid) -> Var {
    let prepared = prepare(tape, p);
    let vol = gsplat::voxelize_prepared(&prepared, &grid);
    tape.custom(&p.as_array(), Tensor::row_vector(vol.data), Box::new(VoxelizeOp { prepared, grid }))
}

struct VoxelizeOp {
    prepared: Vec<Option<Prepared>>,
    grid: VolumeGrid,
}

impl CustomOp for VoxelizeOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &mut ParamGrads) -> Vec<Option<Tensor>> {
        split(gsplat::voxelize_backward(&self.prepared, &self.grid, &grad.data))
    }
}
