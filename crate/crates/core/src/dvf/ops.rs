use super::{Dvf, Grid, Mask, Volume};
use crate::error::{CoreError, Result};

#[inline]
fn axis_weights(c: f64, n: usize) -> (usize, usize, f64) {
    let c = c.clamp(0.0, (n - 1) as f64);
    // c >= 0 here, so truncation is floor
    let i0 = (c as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - i0 as f64)
}

/// Corner offsets and fractions of one trilinear lookup, reusable across
/// arrays that share a grid.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    corners: [usize; 8],
    fz: f64,
    fy: f64,
    fx: f64,
}

impl Stencil {
    #[inline]
    pub fn new(extents: [usize; 3], z: f64, y: f64, x: f64) -> Self {
        let (z0, z1, fz) = axis_weights(z, extents[0]);
        let (y0, y1, fy) = axis_weights(y, extents[1]);
        let (x0, x1, fx) = axis_weights(x, extents[2]);
        let (ny, nx) = (extents[1], extents[2]);
        let at = |z: usize, y: usize, x: usize| (z * ny + y) * nx + x;
        Self {
            corners: [
                at(z0, y0, x0),
                at(z0, y0, x1),
                at(z0, y1, x0),
                at(z0, y1, x1),
                at(z1, y0, x0),
                at(z1, y0, x1),
                at(z1, y1, x0),
                at(z1, y1, x1),
            ],
            fz,
            fy,
            fx,
        }
    }

    /// Exact partial derivatives `(d/dz, d/dy, d/dx)` of the trilinear
    /// interpolant. Inside a clamped region the derivative along that axis
    /// is taken from the edge cell, the one-sided limit at the boundary.
    #[inline]
    pub fn gradient(&self, data: &[f64]) -> [f64; 3] {
        let c = &self.corners;
        let v = |k: usize| data[c[k]];
        let (fz, fy, fx) = (self.fz, self.fy, self.fx);
        let dx = ((v(1) - v(0)) * (1.0 - fy) + (v(3) - v(2)) * fy) * (1.0 - fz)
            + ((v(5) - v(4)) * (1.0 - fy) + (v(7) - v(6)) * fy) * fz;
        let dy = ((v(2) - v(0)) * (1.0 - fx) + (v(3) - v(1)) * fx) * (1.0 - fz)
            + ((v(6) - v(4)) * (1.0 - fx) + (v(7) - v(5)) * fx) * fz;
        let dz = ((v(4) - v(0)) * (1.0 - fx) + (v(5) - v(1)) * fx) * (1.0 - fy)
            + ((v(6) - v(2)) * (1.0 - fx) + (v(7) - v(3)) * fx) * fy;
        [dz, dy, dx]
    }

    #[inline]
    pub fn apply(&self, data: &[f64]) -> f64 {
        let c = &self.corners;
        let fx = self.fx;
        let c00 = data[c[0]] * (1.0 - fx) + data[c[1]] * fx;
        let c01 = data[c[2]] * (1.0 - fx) + data[c[3]] * fx;
        let c10 = data[c[4]] * (1.0 - fx) + data[c[5]] * fx;
        let c11 = data[c[6]] * (1.0 - fx) + data[c[7]] * fx;
        let c0 = c00 * (1.0 - self.fy) + c01 * self.fy;
        let c1 = c10 * (1.0 - self.fy) + c11 * self.fy;
        c0 * (1.0 - self.fz) + c1 * self.fz
    }
}

/// Trilinear sample of a `(Z, Y, X)` array at a continuous voxel position,
/// clamping to the nearest edge voxel outside the grid.
#[inline]
pub fn sample_trilinear(data: &[f64], extents: [usize; 3], z: f64, y: f64, x: f64) -> f64 {
    Stencil::new(extents, z, y, x).apply(data)
}

fn warp_values(data: &[f64], d: &Dvf) -> Vec<f64> {
    let g = *d.grid();
    let [nz, ny, nx] = g.extents;
    let mut out = Vec::with_capacity(g.len());
    let mut i = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let u = d.at(i);
                out.push(sample_trilinear(data, g.extents, z as f64 + u[0], y as f64 + u[1], x as f64 + u[2]));
                i += 1;
            }
        }
    }
    out
}

/// Pull-warps `v` through `d`: `out(p) = v(p + u(p))`.
pub fn warp_volume(v: &Volume, d: &Dvf) -> Result<Volume> {
    v.grid().ensure_same(d.grid())?;
    Volume::new(*v.grid(), warp_values(v.data(), d))
}

/// Trilinear pull-warp of a mask followed by a 0.5 threshold.
pub fn warp_mask(m: &Mask, d: &Dvf) -> Result<Mask> {
    m.grid().ensure_same(d.grid())?;
    let as_f: Vec<f64> = m.data().iter().map(|&b| b as f64).collect();
    let data = warp_values(&as_f, d).into_iter().map(|v| (v >= 0.5) as u8).collect();
    Mask::new(*m.grid(), data, m.label())
}

/// `(d1 ∘ d2)(p) = u2(p) + u1(p + u2(p))`.
pub fn compose(d1: &Dvf, d2: &Dvf) -> Result<Dvf> {
    d1.grid().ensure_same(d2.grid())?;
    let g = *d1.grid();
    let [nz, ny, nx] = g.extents;
    let [a0, a1, a2] = d1.components();
    let [b0, b1, b2] = d2.components();
    let mut out = [vec![0.0; g.len()], vec![0.0; g.len()], vec![0.0; g.len()]];
    let mut i = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let u2 = [b0[i], b1[i], b2[i]];
                let st = Stencil::new(g.extents, z as f64 + u2[0], y as f64 + u2[1], x as f64 + u2[2]);
                out[0][i] = u2[0] + st.apply(a0);
                out[1][i] = u2[1] + st.apply(a1);
                out[2][i] = u2[2] + st.apply(a2);
                i += 1;
            }
        }
    }
    Dvf::new(g, out, d2.reference())
}

/// Fixed-point inverse: `v(p) = -u(p + v(p))`, so that `compose(d, invert(d)) ≈ 0`.
pub fn invert(d: &Dvf, iterations: usize) -> Result<Dvf> {
    let g = *d.grid();
    let mut v = d.scaled(-1.0).into_components();
    for _ in 0..iterations {
        let mut change: f64 = 0.0;
        let mut next = [vec![0.0; g.len()], vec![0.0; g.len()], vec![0.0; g.len()]];
        for i in 0..g.len() {
            let [z, y, x] = g.coords(i);
            let st = Stencil::new(g.extents, z as f64 + v[0][i], y as f64 + v[1][i], x as f64 + v[2][i]);
            for c in 0..3 {
                let n = -st.apply(d.component(c));
                change = change.max((n - v[c][i]).abs());
                next[c][i] = n;
            }
        }
        v = next;
        if change < 1e-10 {
            break;
        }
    }
    Dvf::new(g, v, d.reference())
}

/// Scaling and squaring: `exp(v)` as `2^steps` self-compositions of `v / 2^steps`.
pub fn exp_velocity(velocity: &Dvf, steps: u32) -> Result<Dvf> {
    let mut phi = velocity.scaled(1.0 / f64::from(1u32 << steps));
    for _ in 0..steps {
        phi = compose(&phi, &phi)?;
    }
    Ok(phi)
}

fn derivative(data: &[f64], g: &Grid, z: usize, y: usize, x: usize, axis: usize) -> f64 {
    let p = [z, y, x];
    let n = g.extents[axis];
    let at = |k: usize| {
        let mut q = p;
        q[axis] = k;
        data[g.index(q[0], q[1], q[2])]
    };
    let i = p[axis];
    if i == 0 {
        at(1) - at(0)
    } else if i == n - 1 {
        at(n - 1) - at(n - 2)
    } else {
        0.5 * (at(i + 1) - at(i - 1))
    }
}

/// Per-voxel `det(I + ∇u)` with central differences (one-sided at borders).
///
/// `J = 1` is no local volume change, `J < 1` contraction, `J > 1` expansion
/// of the pull map `p -> p + u(p)`.
pub fn jacobian_map(d: &Dvf) -> Result<Volume> {
    let g = *d.grid();
    if g.extents.iter().any(|&e| e < 3) {
        return Err(CoreError::InvalidGrid(format!(
            "jacobian needs at least 3 voxels per axis, grid is {g}"
        )));
    }
    let mut out = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let [z, y, x] = g.coords(i);
        let mut m = [[0.0; 3]; 3];
        for (c, row) in m.iter_mut().enumerate() {
            for (axis, entry) in row.iter_mut().enumerate() {
                *entry = derivative(d.component(c), &g, z, y, x, axis) + if c == axis { 1.0 } else { 0.0 };
            }
        }
        out.push(det3(&m));
    }
    Volume::new(g, out)
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Mean Jacobian over `roi` times the ROI volume in mm³.
pub fn jacobian_integral(jmap: &Volume, roi: &Mask) -> Result<f64> {
    jmap.grid().ensure_same(roi.grid())?;
    let n = roi.count();
    if n == 0 {
        return Err(CoreError::EmptyMask(roi.label().to_string()));
    }
    let sum: f64 = jmap
        .data()
        .iter()
        .zip(roi.data())
        .filter(|(_, &m)| m != 0)
        .map(|(j, _)| j)
        .sum();
    let mean = sum / n as f64;
    Ok(mean * roi.volume_mm3())
}

/// Volume (mm³) that a reference-grid structure occupies after deformation by `d`.
///
/// `d` pulls reference anatomy onto the later timepoint, so the volume
/// change at a reference voxel is the Jacobian of the inverse field.
pub fn deformed_volume(d: &Dvf, reference_roi: &Mask) -> Result<f64> {
    let inv = invert(d, 60)?;
    jacobian_integral(&jacobian_map(&inv)?, reference_roi)
}
