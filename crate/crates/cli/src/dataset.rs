//! Per-patient slice sequence files (`SEQ1`) and the dataset index.
//!
//! | field   | encoding                                   |
//! |---------|--------------------------------------------|
//! | magic   | `SEQ1`                                     |
//! | mode    | u8: 0 field, 1 image                       |
//! | patient | u16 length + UTF-8                         |
//! | counts  | u32 slices, timepoints, channels, H, W     |
//! | slices  | u32 slice index, then `T·C·H·W` f64 values |

use crate::config::DvfSource;
use crate::error::{io_err, PipelineError, Result};
use dvfcast_autodiff::Tensor;
use dvfcast_core::model::{Mode, SequenceSample};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SEQ1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub mode: String,
    pub source: DvfSource,
    pub grid_size: usize,
    pub gradient_step: f64,
    /// In-plane block-averaging factor.
    pub pool: usize,
    /// Zero rows/columns appended after pooling so extents divide by 4.
    pub pad: [usize; 2],
    pub scale: f64,
    pub timepoints: usize,
    pub extents: [usize; 3],
    pub cases: Vec<DatasetCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCase {
    pub id: String,
    pub split: String,
    pub variants: usize,
}

impl DatasetIndex {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(PipelineError::Config(format!(
                "no dataset at {} (run `build` first)",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string_pretty(self).expect("index serialises")).map_err(io_err(path))
    }

    pub fn mode(&self) -> Result<Mode> {
        self.mode.parse().map_err(|e: dvfcast_core::CoreError| PipelineError::Config(e.to_string()))
    }
}

fn u32_of(n: usize) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| PipelineError::Config(format!("{n} does not fit the sequence format")))
}

pub fn write_sequences(path: &Path, samples: &[SequenceSample]) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| PipelineError::Config(format!("{}: no slices to write", path.display())))?;
    let shape = first.frame_shape().to_vec();
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));
    put(MAGIC)?;
    put(&[match first.mode {
        Mode::Dvf => 0,
        Mode::Image => 1,
    }])?;
    put(&(first.patient.len() as u16).to_le_bytes())?;
    put(first.patient.as_bytes())?;
    for n in [samples.len(), first.timepoints(), shape[0], shape[1], shape[2]] {
        put(&u32_of(n)?)?;
    }
    for s in samples {
        if s.timepoints() != first.timepoints() || s.frame_shape() != shape.as_slice() || s.mode != first.mode {
            return Err(PipelineError::Config(format!("slice {} breaks the file layout", s.slice)));
        }
        put(&u32_of(s.slice)?)?;
        for f in &s.frames {
            for v in f.data() {
                put(&v.to_le_bytes())?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn read_sequences(path: &Path) -> Result<Vec<SequenceSample>> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut take = |n: usize| -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        r.read_exact(&mut b).map_err(io_err(path))?;
        Ok(b)
    };
    if take(4)? != MAGIC {
        return Err(PipelineError::Config(format!("{}: not a sequence file", path.display())));
    }
    let mode = match take(1)?[0] {
        0 => Mode::Dvf,
        1 => Mode::Image,
        m => return Err(PipelineError::Config(format!("{}: unknown mode byte {m}", path.display()))),
    };
    let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
    let patient = String::from_utf8(take(len)?).map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut counts = [0usize; 5];
    for c in &mut counts {
        *c = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    }
    let [slices, t, c, h, w] = counts;
    let frame = c * h * w;
    let mut out = Vec::with_capacity(slices);
    for _ in 0..slices {
        let z = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let bytes = take(8 * t * frame)?;
        let values: Vec<f64> = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let frames = values
            .chunks_exact(frame)
            .map(|d| Tensor::new(vec![c, h, w], d.to_vec()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        out.push(
            SequenceSample::new(patient.clone(), z, mode, frames).map_err(|e| PipelineError::Config(e.to_string()))?,
        );
    }
    Ok(out)
}

/// Appends `pad` zero rows and columns to a `[C, H, W]` frame.
pub fn pad_frame(t: &Tensor, pad: [usize; 2]) -> Tensor {
    if pad == [0, 0] {
        return t.clone();
    }
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let (hp, wp) = (h + pad[0], w + pad[1]);
    let mut data = vec![0.0; c * hp * wp];
    for ch in 0..c {
        for y in 0..h {
            let src = &t.data()[(ch * h + y) * w..(ch * h + y + 1) * w];
            data[(ch * hp + y) * wp..(ch * hp + y) * wp + w].copy_from_slice(src);
        }
    }
    Tensor::new(vec![c, hp, wp], data).expect("padded shape")
}

/// Inverse of [`pad_frame`].
pub fn crop_frame(t: &Tensor, pad: [usize; 2]) -> Tensor {
    if pad == [0, 0] {
        return t.clone();
    }
    let s = t.shape();
    let (c, hp, wp) = (s[0], s[1], s[2]);
    let (h, w) = (hp - pad[0], wp - pad[1]);
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            data.extend_from_slice(&t.data()[(ch * hp + y) * wp..(ch * hp + y) * wp + w]);
        }
    }
    Tensor::new(vec![c, h, w], data).expect("cropped shape")
}

/// Padding that makes `n` a multiple of 4.
pub fn pad_to_four(n: usize) -> usize {
    (4 - n % 4) % 4
}
