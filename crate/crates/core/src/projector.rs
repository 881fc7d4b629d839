//! Matched forward/adjoint ray-driven projector with exact intersection
//! lengths (incremental Siddon traversal).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{ProjectionSet, Ray, ScanGeometry, Volume, VolumeGrid};
use crate::linalg;

/// Number of partial volumes the adjoint accumulates into before the ordered
/// reduction. Fixed so results do not depend on the thread count.
const ADJOINT_CHUNKS: usize = 16;

#[derive(Debug, Clone)]
pub struct LinearProjector {
    pub geom: ScanGeometry,
    pub grid: VolumeGrid,
    pub view_subset: Option<Vec<usize>>,
}

impl LinearProjector {
    pub fn new(geom: ScanGeometry, grid: VolumeGrid) -> Result<Self> {
        geom.validate()?;
        grid.validate()?;
        let half_diag = linalg::norm(grid.extent()) / 2.0 + linalg::norm(grid.center);
        if geom.sad <= half_diag {
            return Err(Error::arg(format!(
                "source orbit (sad = {}) intersects the volume (half diagonal {half_diag:.4})",
                geom.sad
            )));
        }
        Ok(LinearProjector {
            geom,
            grid,
            view_subset: None,
        })
    }

    pub fn with_views(mut self, views: Vec<usize>) -> Result<Self> {
        if let Some(&v) = views.iter().find(|&&v| v >= self.geom.n_views()) {
            return Err(Error::arg(format!("view {v} out of range")));
        }
        self.view_subset = Some(views);
        Ok(self)
    }

    /// Views this operator acts on, in order.
    pub fn active_views(&self) -> Vec<usize> {
        match &self.view_subset {
            Some(v) => v.clone(),
            None => (0..self.geom.n_views()).collect(),
        }
    }

    fn check_grid(&self, grid: &VolumeGrid) -> Result<()> {
        if grid != &self.grid {
            return Err(Error::arg("volume grid does not match projector grid"));
        }
        Ok(())
    }

    fn check_proj(&self, proj: &ProjectionSet) -> Result<()> {
        let g = &proj.geom;
        if g.nu != self.geom.nu || g.nv != self.geom.nv || g.n_views() != self.geom.n_views() {
            return Err(Error::arg(format!(
                "projection dims {}x{}x{} do not match geometry {}x{}x{}",
                g.n_views(),
                g.nv,
                g.nu,
                self.geom.n_views(),
                self.geom.nv,
                self.geom.nu
            )));
        }
        Ok(())
    }

    fn ray(&self, view: usize, pixel: usize) -> Ray {
        let frame = self.geom.frame(view);
        let (u, v) = (pixel % self.geom.nu, pixel / self.geom.nu);
        Ray::clipped(frame.source, frame.pixel_dir(u, v), &self.grid.bbox())
    }

    /// `A x`. Views outside the subset are left at zero.
    pub fn forward(&self, vol: &Volume) -> Result<ProjectionSet> {
        self.check_grid(&vol.grid)?;
        let mut out = ProjectionSet::zeros(self.geom.clone());
        for view in self.active_views() {
            self.forward_view_into(vol, view, out.view_mut(view));
        }
        Ok(out)
    }

    /// Forward projection of a single view into `out` (`nu·nv` values).
    pub fn forward_view_into(&self, vol: &Volume, view: usize, out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(pixel, px)| {
            let ray = self.ray(view, pixel);
            let mut acc = 0.0;
            traverse(&self.grid, &ray, |idx, len| acc += len * vol.data[idx]);
            *px = acc;
        });
    }

    /// `Aᵀ y` over the active views.
    pub fn adjoint(&self, proj: &ProjectionSet) -> Result<Volume> {
        self.check_proj(proj)?;
        let views = self.active_views();
        let per_view = self.geom.pixels_per_view();
        let rays: Vec<(usize, usize)> = views
            .iter()
            .flat_map(|&v| (0..per_view).map(move |p| (v, p)))
            .collect();
        Ok(self.backproject_rays(&rays, |v, p| proj.view(v)[p]))
    }

    /// Backprojection of a single view image.
    pub fn adjoint_view(&self, view: usize, image: &[f64]) -> Volume {
        let rays: Vec<(usize, usize)> = (0..self.geom.pixels_per_view()).map(|p| (view, p)).collect();
        self.backproject_rays(&rays, |_, p| image[p])
    }

    fn backproject_rays<F>(&self, rays: &[(usize, usize)], value: F) -> Volume
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let n = self.grid.len();
        let chunk = rays.len().div_ceil(ADJOINT_CHUNKS).max(1);
        let partials: Vec<Vec<f64>> = rays
            .par_chunks(chunk)
            .map(|chunk| {
                let mut acc = vec![0.0; n];
                for &(view, pixel) in chunk {
                    let y = value(view, pixel);
                    if y == 0.0 {
                        continue;
                    }
                    let ray = self.ray(view, pixel);
                    traverse(&self.grid, &ray, |idx, len| acc[idx] += len * y);
                }
                acc
            })
            .collect();
        let mut out = Volume::zeros(self.grid);
        for part in partials {
            for (o, p) in out.data.iter_mut().zip(part) {
                *o += p;
            }
        }
        out
    }

    /// Intersection lengths of a single ray: `(voxel index, length)` pairs in
    /// traversal order.
    pub fn ray_weights(&self, view: usize, u: usize, v: usize) -> Vec<(usize, f64)> {
        let ray = self.ray(view, v * self.geom.nu + u);
        let mut w = Vec::new();
        traverse(&self.grid, &ray, |idx, len| w.push((idx, len)));
        w
    }
}

/// Visits every voxel the ray segment `[t_in, t_out]` crosses with its
/// intersection length. Lengths are nonnegative and telescope to the chord.
pub fn traverse<F: FnMut(usize, f64)>(grid: &VolumeGrid, ray: &Ray, mut visit: F) {
    if !ray.hits() {
        return;
    }
    let bbox = grid.bbox();
    let entry = ray.at(ray.t_in);
    let dims = grid.dims;
    let mut idx = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_next = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let rel = (entry[a] - bbox.min[a]) / grid.spacing[a];
        let i = (rel.floor() as i64).clamp(0, dims[a] as i64 - 1);
        idx[a] = i;
        let d = ray.dir[a];
        if d > 0.0 {
            step[a] = 1;
            let plane = bbox.min[a] + (i + 1) as f64 * grid.spacing[a];
            t_next[a] = (plane - ray.origin[a]) / d;
            t_delta[a] = grid.spacing[a] / d;
        } else if d < 0.0 {
            step[a] = -1;
            let plane = bbox.min[a] + i as f64 * grid.spacing[a];
            t_next[a] = (plane - ray.origin[a]) / d;
            t_delta[a] = -grid.spacing[a] / d;
        }
    }
    let mut t = ray.t_in;
    loop {
        let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
            0
        } else if t_next[1] <= t_next[2] {
            1
        } else {
            2
        };
        let t_end = t_next[axis].min(ray.t_out);
        let len = (t_end - t).max(0.0);
        if len > 0.0 {
            let flat = idx[0] as usize + dims[0] * (idx[1] as usize + dims[1] * idx[2] as usize);
            visit(flat, len);
        }
        t = t.max(t_end);
        if t >= ray.t_out {
            break;
        }
        idx[axis] += step[axis];
        if idx[axis] < 0 || idx[axis] >= dims[axis] as i64 {
            break;
        }
        t_next[axis] += t_delta[axis];
    }
}
