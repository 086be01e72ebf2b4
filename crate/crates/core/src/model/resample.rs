use crate::error::{CoreError, Result};
use dvfcast_autodiff::Tensor;

/// Cuts channel planes of a `Z×Y×X` volume into per-slice frames
/// `[C, Y/f, X/f]`, averaging `f×f` in-plane blocks and multiplying
/// channel `c` by `gain[c]`.
pub fn pool_slices(planes: &[&[f64]], extents: [usize; 3], factor: usize, gain: &[f64]) -> Result<Vec<Tensor>> {
    let [nz, ny, nx] = extents;
    if factor == 0 || ny % factor != 0 || nx % factor != 0 {
        return Err(CoreError::Config(format!(
            "in-plane extents {ny}x{nx} are not divisible by the pooling factor {factor}"
        )));
    }
    if gain.len() != planes.len() || planes.iter().any(|p| p.len() != nz * ny * nx) {
        return Err(CoreError::Length {
            what: "channel planes",
            expected: nz * ny * nx,
            found: planes.first().map_or(0, |p| p.len()),
        });
    }
    let (my, mx) = (ny / factor, nx / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = Vec::with_capacity(nz);
    for z in 0..nz {
        let mut data = vec![0.0; planes.len() * my * mx];
        for (c, plane) in planes.iter().enumerate() {
            let src = &plane[z * ny * nx..(z + 1) * ny * nx];
            let dst = &mut data[c * my * mx..(c + 1) * my * mx];
            for y in 0..ny {
                for x in 0..nx {
                    dst[(y / factor) * mx + x / factor] += src[y * nx + x];
                }
            }
            dst.iter_mut().for_each(|v| *v *= norm * gain[c]);
        }
        out.push(Tensor::new(vec![planes.len(), my, mx], data)?);
    }
    Ok(out)
}

/// Bilinear inverse of [`pool_slices`] for one frame: `[C, h, w]` to
/// `[C, h·f, w·f]`, clamped at the border, channel `c` multiplied by `gain[c]`.
pub fn unpool_slice(frame: &Tensor, factor: usize, gain: &[f64]) -> Result<Tensor> {
    let s = frame.shape();
    if s.len() != 3 || s[0] != gain.len() || factor == 0 {
        return Err(CoreError::Config(format!(
            "cannot unpool frame {s:?} with {} gains",
            gain.len()
        )));
    }
    let (ch, h, w) = (s[0], s[1], s[2]);
    let (ny, nx) = (h * factor, w * factor);
    let offset = (factor as f64 - 1.0) / 2.0;
    let axis = |i: usize, n: usize| {
        let p = ((i as f64 - offset) / factor as f64).clamp(0.0, (n - 1) as f64);
        let i0 = (p as usize).min(n.saturating_sub(2));
        let t = p - i0 as f64;
        (i0, (i0 + 1).min(n - 1), t)
    };
    let mut data = vec![0.0; ch * ny * nx];
    for c in 0..ch {
        let src = &frame.data()[c * h * w..(c + 1) * h * w];
        for y in 0..ny {
            let (y0, y1, ty) = axis(y, h);
            for x in 0..nx {
                let (x0, x1, tx) = axis(x, w);
                let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
                let bottom = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
                data[(c * ny + y) * nx + x] = gain[c] * (top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    Ok(Tensor::new(vec![ch, ny, nx], data)?)
}
