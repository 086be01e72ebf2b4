//! Binary volume, mask and field files.
//!
//! Layout (all integers and floats little-endian):
//!
//! | field      | volume (`VOL1`) | mask (`MSK1`)         | field (`DVF1`)            |
//! |------------|-----------------|-----------------------|---------------------------|
//! | magic      | 4 bytes         | 4 bytes               | 4 bytes                   |
//! | extents    | 3 × u32 (Z,Y,X) | 3 × u32               | 3 × u32                   |
//! | spacing    | f64             | f64                   | f64                       |
//! | tag        | –               | u16 len + UTF-8 label | u16 len + UTF-8 reference |
//! | payload    | f64 per voxel   | u8 per voxel          | 3 planes of f64 (z, y, x) |

use crate::dvf::{Dvf, Grid, Mask, Volume};
use crate::error::{CoreError, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const VOLUME_MAGIC: &[u8; 4] = b"VOL1";
pub const MASK_MAGIC: &[u8; 4] = b"MSK1";
pub const DVF_MAGIC: &[u8; 4] = b"DVF1";

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], grid: &Grid) -> Result<()> {
    w.write_all(magic)?;
    for e in grid.extents {
        let e = u32::try_from(e).map_err(|_| CoreError::Format(format!("extent {e} exceeds u32")))?;
        w.write_all(&e.to_le_bytes())?;
    }
    w.write_all(&grid.spacing.to_le_bytes())?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<Grid> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(CoreError::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&m)
        )));
    }
    let mut extents = [0usize; 3];
    for e in &mut extents {
        *e = read_u32(r)? as usize;
    }
    let spacing = read_f64(r)?;
    Grid::new(extents, spacing).map_err(|e| CoreError::Format(e.to_string()))
}

fn write_tag<W: Write>(w: &mut W, tag: &str) -> Result<()> {
    let len = u16::try_from(tag.len()).map_err(|_| CoreError::Format("tag longer than 65535 bytes".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(tag.as_bytes())?;
    Ok(())
}

fn read_tag<R: Read>(r: &mut R) -> Result<String> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| CoreError::Format(e.to_string()))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_volume<W: Write>(w: &mut W, v: &Volume) -> Result<()> {
    write_header(w, VOLUME_MAGIC, v.grid())?;
    write_f64s(w, v.data())
}

pub fn read_volume<R: Read>(r: &mut R) -> Result<Volume> {
    let grid = read_header(r, VOLUME_MAGIC)?;
    let data = read_f64s(r, grid.len())?;
    Volume::new(grid, data)
}

pub fn write_mask<W: Write>(w: &mut W, m: &Mask) -> Result<()> {
    write_header(w, MASK_MAGIC, m.grid())?;
    write_tag(w, m.label())?;
    w.write_all(m.data())?;
    Ok(())
}

pub fn read_mask<R: Read>(r: &mut R) -> Result<Mask> {
    let grid = read_header(r, MASK_MAGIC)?;
    let label = read_tag(r)?;
    let mut data = vec![0u8; grid.len()];
    r.read_exact(&mut data)?;
    Mask::new(grid, data, label)
}

pub fn write_dvf<W: Write>(w: &mut W, d: &Dvf) -> Result<()> {
    write_header(w, DVF_MAGIC, d.grid())?;
    write_tag(w, d.reference())?;
    for c in d.components() {
        write_f64s(w, c)?;
    }
    Ok(())
}

pub fn read_dvf<R: Read>(r: &mut R) -> Result<Dvf> {
    let grid = read_header(r, DVF_MAGIC)?;
    let reference = read_tag(r)?;
    let n = grid.len();
    let comps = [read_f64s(r, n)?, read_f64s(r, n)?, read_f64s(r, n)?];
    Dvf::new(grid, comps, reference)
}

fn save<T>(path: &Path, value: &T, f: fn(&mut BufWriter<File>, &T) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w, value)?;
    w.flush()?;
    Ok(())
}

fn load<T>(path: &Path, f: fn(&mut BufReader<File>) -> Result<T>) -> Result<T> {
    let mut r = BufReader::new(File::open(path)?);
    f(&mut r)
}

pub fn save_volume(path: &Path, v: &Volume) -> Result<()> {
    save(path, v, write_volume)
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    load(path, read_volume)
}

pub fn save_mask(path: &Path, m: &Mask) -> Result<()> {
    save(path, m, write_mask)
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    load(path, read_mask)
}

pub fn save_dvf(path: &Path, d: &Dvf) -> Result<()> {
    save(path, d, write_dvf)
}

pub fn load_dvf(path: &Path) -> Result<Dvf> {
    load(path, read_dvf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_header_layout() {
        let g = Grid::new([2, 3, 4], 2.0).unwrap();
        let v = Volume::from_fn(g, |z, y, x| (z + y + x) as f64).unwrap();
        let mut buf = Vec::new();
        write_volume(&mut buf, &v).unwrap();
        assert_eq!(&buf[..4], b"VOL1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &3u32.to_le_bytes());
        assert_eq!(&buf[12..16], &4u32.to_le_bytes());
        assert_eq!(&buf[16..24], &2.0f64.to_le_bytes());
        assert_eq!(buf.len(), 24 + 24 * 8);
        assert_eq!(read_volume(&mut buf.as_slice()).unwrap(), v);
    }

    #[test]
    fn dvf_is_component_planar() {
        let g = Grid::new([1, 1, 2], 1.0).unwrap();
        let d = Dvf::new(g, [vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]], "pct").unwrap();
        let mut buf = Vec::new();
        write_dvf(&mut buf, &d).unwrap();
        assert_eq!(&buf[..4], b"DVF1");
        let payload = &buf[24 + 2 + 3..];
        let vals: Vec<f64> = payload.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(vals, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(read_dvf(&mut buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn mask_roundtrip_and_bad_magic() {
        let g = Grid::new([2, 2, 2], 1.5).unwrap();
        let m = Mask::from_fn(g, "esophagus", |z, _, x| z == x);
        let mut buf = Vec::new();
        write_mask(&mut buf, &m).unwrap();
        assert_eq!(read_mask(&mut buf.as_slice()).unwrap(), m);
        assert!(matches!(read_volume(&mut buf.as_slice()), Err(CoreError::Format(_))));
    }
}
