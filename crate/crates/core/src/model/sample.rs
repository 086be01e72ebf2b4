use super::net::Mode;
use crate::dvf::{Dvf, Grid};
use crate::error::{CoreError, Result};
use dvfcast_autodiff::Tensor;

/// One slice's sequence of frames, each `[channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub patient: String,
    pub slice: usize,
    pub mode: Mode,
    pub frames: Vec<Tensor>,
}

impl SequenceSample {
    pub fn new(patient: impl Into<String>, slice: usize, mode: Mode, frames: Vec<Tensor>) -> Result<Self> {
        let s = Self {
            patient: patient.into(),
            slice,
            mode,
            frames,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| CoreError::Config(format!("{} slice {}: no frames", self.patient, self.slice)))?;
        let shape = first.shape();
        if shape.len() != 3 || shape[0] != self.mode.channels() {
            return Err(CoreError::Config(format!(
                "{} slice {}: frame shape {shape:?} does not carry {} channels",
                self.patient,
                self.slice,
                self.mode.channels()
            )));
        }
        for f in &self.frames {
            if f.shape() != shape {
                return Err(CoreError::Config(format!(
                    "{} slice {}: frames disagree in shape ({:?} vs {shape:?})",
                    self.patient,
                    self.slice,
                    f.shape()
                )));
            }
            if !f.all_finite() {
                return Err(CoreError::NonFinite("sequence frame"));
            }
        }
        if self.mode == Mode::Dvf && first.data().iter().any(|&v| v != 0.0) {
            return Err(CoreError::Config(format!(
                "{} slice {}: reference frame of a field sequence must be zero",
                self.patient, self.slice
            )));
        }
        Ok(())
    }

    pub fn timepoints(&self) -> usize {
        self.frames.len()
    }

    /// `[channels, height, width]`.
    pub fn frame_shape(&self) -> &[usize] {
        self.frames[0].shape()
    }
}

/// Several samples stacked along a leading batch axis, one tensor per timepoint.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub mode: Mode,
    pub frames: Vec<Tensor>,
}

impl SequenceBatch {
    pub fn stack(samples: &[&SequenceSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| CoreError::Config("cannot stack an empty batch".into()))?;
        let t = first.timepoints();
        let shape = first.frame_shape().to_vec();
        for s in samples {
            if s.mode != first.mode || s.timepoints() != t || s.frame_shape() != shape.as_slice() {
                return Err(CoreError::Config(format!(
                    "{} slice {} does not match the batch layout ({} frames of {shape:?}, mode {})",
                    s.patient, s.slice, t, first.mode
                )));
            }
        }
        let mut full = vec![samples.len()];
        full.extend(&shape);
        let frames = (0..t)
            .map(|k| {
                let data = samples.iter().flat_map(|s| s.frames[k].data().iter().copied()).collect();
                Tensor::new(full.clone(), data)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            mode: first.mode,
            frames,
        })
    }

    pub fn batch(&self) -> usize {
        self.frames[0].shape()[0]
    }

    pub fn timepoints(&self) -> usize {
        self.frames.len()
    }
}

/// Stacks per-slice frames `[channels, Y, X]` into channel planes of a
/// `Z×Y×X` volume. Arrival order does not matter; every slice index must
/// appear exactly once.
pub fn assemble_channels(extents: [usize; 3], slices: &[(usize, &Tensor)]) -> Result<Vec<Vec<f64>>> {
    let [nz, ny, nx] = extents;
    let plane = ny * nx;
    let channels = slices.first().map(|(_, t)| t.shape()[0]).unwrap_or(0);
    let mut seen = vec![false; nz];
    let mut out = vec![vec![0.0; nz * plane]; channels];
    for &(z, t) in slices {
        if t.shape() != [channels, ny, nx] {
            return Err(CoreError::Config(format!(
                "slice {z}: shape {:?}, expected {:?}",
                t.shape(),
                [channels, ny, nx]
            )));
        }
        if z >= nz || seen[z] {
            return Err(CoreError::Config(format!("slice index {z} is out of range or repeated")));
        }
        seen[z] = true;
        for (c, dst) in out.iter_mut().enumerate() {
            dst[z * plane..(z + 1) * plane].copy_from_slice(&t.data()[c * plane..(c + 1) * plane]);
        }
    }
    let missing: Vec<usize> = (0..nz).filter(|&z| !seen[z]).collect();
    if !missing.is_empty() {
        return Err(CoreError::MissingSlices { missing, expected: nz });
    }
    Ok(out)
}

/// Per-slice three-component fields stacked into a [`Dvf`] on `grid`.
pub fn assemble_dvf(grid: Grid, slices: &[(usize, &Tensor)], reference: &str) -> Result<Dvf> {
    let planes = assemble_channels(grid.extents, slices)?;
    let components: [Vec<f64>; 3] = planes.try_into().map_err(|p: Vec<Vec<f64>>| CoreError::Length {
        what: "field channels",
        expected: 3,
        found: p.len(),
    })?;
    Dvf::new(grid, components, reference)
}
