//! Volumes, masks and deformation vector fields on a shared voxel grid.
//!
//! Axis order is always `(z, y, x)`. Displacements are stored in voxel
//! units with pull semantics: the value at target voxel `p` names the
//! source location `p + u(p)` that is sampled when warping.

mod ops;

pub use ops::{
    compose, deformed_volume, exp_velocity, invert, jacobian_integral, jacobian_map, sample_trilinear,
    warp_mask, warp_volume, Stencil,
};

use crate::error::{CoreError, Result};
use std::fmt;

/// Voxel lattice shared by volumes, masks and fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    /// `(Z, Y, X)` extents.
    pub extents: [usize; 3],
    /// Isotropic voxel size in mm.
    pub spacing: f64,
}

impl Grid {
    pub fn new(extents: [usize; 3], spacing: f64) -> Result<Self> {
        if extents.contains(&0) {
            return Err(CoreError::InvalidGrid(format!("zero extent in {extents:?}")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(CoreError::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        Ok(Self { extents, spacing })
    }

    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.extents[1] + y) * self.extents[2] + x
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.extents[2];
        let r = idx / self.extents[2];
        [r / self.extents[1], r % self.extents[1], x]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    pub fn slice_len(&self) -> usize {
        self.extents[1] * self.extents[2]
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(CoreError::GridMismatch {
                left: *self,
                right: *other,
            });
        }
        Ok(())
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [z, y, x] = self.extents;
        write!(f, "{z}x{y}x{x} @ {}mm", self.spacing)
    }
}

/// Scalar image on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: Grid,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(CoreError::Length {
                what: "volume",
                expected: grid.len(),
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("volume"));
        }
        Ok(Self { grid, data })
    }

    pub fn filled(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            data: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let data = (0..grid.len())
            .map(|i| {
                let [z, y, x] = grid.coords(i);
                f(z, y, x)
            })
            .collect();
        Self::new(grid, data)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data[self.grid.index(z, y, x)]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Volume> {
        Volume::new(self.grid, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Binary structure (GTV or an organ at risk) on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    grid: Grid,
    data: Vec<u8>,
    label: String,
}

impl Mask {
    pub fn new(grid: Grid, data: Vec<u8>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if data.len() != grid.len() {
            return Err(CoreError::Length {
                what: "mask",
                expected: grid.len(),
                found: data.len(),
            });
        }
        if let Some(&value) = data.iter().find(|&&v| v > 1) {
            return Err(CoreError::NonBinary { label, value });
        }
        Ok(Self { grid, data, label })
    }

    pub fn empty(grid: Grid, label: impl Into<String>) -> Self {
        Self {
            grid,
            data: vec![0; grid.len()],
            label: label.into(),
        }
    }

    pub fn from_fn(grid: Grid, label: impl Into<String>, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let data = (0..grid.len())
            .map(|i| {
                let [z, y, x] = grid.coords(i);
                f(z, y, x) as u8
            })
            .collect();
        Self {
            grid,
            data,
            label: label.into(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[self.grid.index(z, y, x)] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Structure volume in mm³.
    pub fn volume_mm3(&self) -> f64 {
        self.count() as f64 * self.grid.voxel_volume()
    }
}

/// Per-voxel 3-component displacement in voxel units, component-planar.
#[derive(Debug, Clone, PartialEq)]
pub struct Dvf {
    grid: Grid,
    components: [Vec<f64>; 3],
    reference: String,
}

impl Dvf {
    pub fn new(grid: Grid, components: [Vec<f64>; 3], reference: impl Into<String>) -> Result<Self> {
        for c in &components {
            if c.len() != grid.len() {
                return Err(CoreError::Length {
                    what: "dvf component",
                    expected: grid.len(),
                    found: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite("dvf"));
            }
        }
        Ok(Self {
            grid,
            components,
            reference: reference.into(),
        })
    }

    pub fn zeros(grid: Grid, reference: impl Into<String>) -> Self {
        let n = grid.len();
        Self {
            grid,
            components: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            reference: reference.into(),
        }
    }

    pub fn from_fn(
        grid: Grid,
        reference: impl Into<String>,
        mut f: impl FnMut(usize, usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let n = grid.len();
        let mut comps = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for i in 0..n {
            let [z, y, x] = grid.coords(i);
            let u = f(z, y, x);
            for c in 0..3 {
                comps[c][i] = u[c];
            }
        }
        Self::new(grid, comps, reference)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn reference(&self) -> &str {
        &self.reference
    }

    pub fn set_reference(&mut self, reference: impl Into<String>) {
        self.reference = reference.into();
    }

    /// Component plane `c` (0 = z, 1 = y, 2 = x).
    pub fn component(&self, c: usize) -> &[f64] {
        &self.components[c]
    }

    pub fn components(&self) -> &[Vec<f64>; 3] {
        &self.components
    }

    pub fn into_components(self) -> [Vec<f64>; 3] {
        self.components
    }

    #[inline]
    pub fn at(&self, idx: usize) -> [f64; 3] {
        [self.components[0][idx], self.components[1][idx], self.components[2][idx]]
    }

    pub fn max_magnitude(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                let u = self.at(i);
                (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.iter().all(|&v| v == 0.0))
    }

    pub fn scaled(&self, s: f64) -> Dvf {
        Dvf {
            grid: self.grid,
            components: self.components.clone().map(|c| c.into_iter().map(|v| v * s).collect()),
            reference: self.reference.clone(),
        }
    }

    pub fn add(&self, other: &Dvf) -> Result<Dvf> {
        self.grid.ensure_same(&other.grid)?;
        let mut out = self.clone();
        for c in 0..3 {
            for (a, b) in out.components[c].iter_mut().zip(&other.components[c]) {
                *a += b;
            }
        }
        Ok(out)
    }
}
