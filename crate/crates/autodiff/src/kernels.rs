//! Raw numeric kernels behind the graph ops.
//!
//! Layouts are NCHW row-major. Convolution is lowered to im2col plus a
//! dense matrix product.

/// `c[m×n] = alpha * a[m×k] * b[k×n] + beta * c`, all row-major unless the
/// `*_t` flags request the transposed view of the stored matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    // stored a is m×k (or k×m when transposed)
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover every element addressed by the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn columns(&self) -> usize {
        self.batch * self.height * self.width
    }
}

/// Unfolds zero-padded `k×k` neighbourhoods into a `[Cin·k·k, B·H·W]` matrix.
pub(crate) fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let pad = (k / 2) as isize;
    let hw = h * w;
    let ncol = g.columns();
    let mut cols = vec![0.0; g.patch() * ncol];
    for ci in 0..g.in_ch {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst_row = &mut cols[row * ncol..(row + 1) * ncol];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for b in 0..g.batch {
                    let src = &input[(b * g.in_ch + ci) * hw..(b * g.in_ch + ci + 1) * hw];
                    let dst = &mut dst_row[b * hw..(b + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_row = &src[sy as usize * w..(sy as usize + 1) * w];
                        let dst_row = &mut dst[y * w..(y + 1) * w];
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        for x in x0..x1 {
                            dst_row[x] = src_row[(x as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let pad = (k / 2) as isize;
    let hw = h * w;
    let ncol = g.columns();
    for ci in 0..g.in_ch {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_row = &cols[row * ncol..(row + 1) * ncol];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for b in 0..g.batch {
                    let src = &src_row[b * hw..(b + 1) * hw];
                    let dst = &mut out[(b * g.in_ch + ci) * hw..(b * g.in_ch + ci + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        for x in x0..x1 {
                            dst[sy as usize * w + (x as isize + dx) as usize] += src[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. Returns the NCHW output and the unfolded columns.
pub(crate) fn conv2d_forward(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>) {
    let cols = im2col(input, g);
    let ncol = g.columns();
    let mut tmp = vec![0.0; g.out_ch * ncol];
    gemm(g.out_ch, g.patch(), ncol, weight, false, &cols, false, &mut tmp, 0.0);
    let hw = g.height * g.width;
    let mut out = vec![0.0; g.batch * g.out_ch * hw];
    for co in 0..g.out_ch {
        for b in 0..g.batch {
            let src = &tmp[co * ncol + b * hw..co * ncol + (b + 1) * hw];
            let dst = &mut out[(b * g.out_ch + co) * hw..(b * g.out_ch + co + 1) * hw];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + bias[co];
            }
        }
    }
    (out, cols)
}

pub(crate) struct ConvGrads {
    pub input: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn conv2d_backward(
    grad_out: &[f64],
    cols: &[f64],
    weight: &[f64],
    g: &ConvGeom,
) -> ConvGrads {
    let hw = g.height * g.width;
    let ncol = g.columns();
    // regroup dOut from NCHW to [Cout, B·HW]
    let mut dmat = vec![0.0; g.out_ch * ncol];
    let mut dbias = vec![0.0; g.out_ch];
    for b in 0..g.batch {
        for co in 0..g.out_ch {
            let src = &grad_out[(b * g.out_ch + co) * hw..(b * g.out_ch + co + 1) * hw];
            dmat[co * ncol + b * hw..co * ncol + (b + 1) * hw].copy_from_slice(src);
            dbias[co] += src.iter().sum::<f64>();
        }
    }
    let mut dweight = vec![0.0; g.out_ch * g.patch()];
    gemm(g.out_ch, ncol, g.patch(), &dmat, false, cols, true, &mut dweight, 0.0);
    let mut dcols = vec![0.0; g.patch() * ncol];
    gemm(g.patch(), g.out_ch, ncol, weight, true, &dmat, false, &mut dcols, 0.0);
    let mut dinput = vec![0.0; g.batch * g.in_ch * hw];
    col2im(&dcols, g, &mut dinput);
    ConvGrads {
        input: dinput,
        weight: dweight,
        bias: dbias,
    }
}

/// 2×2 max pooling; returns pooled values and the flat input index of each
/// window maximum (first index wins ties).
pub(crate) fn maxpool2x2(input: &[f64], planes: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut argmax = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..ho {
            for x in 0..wo {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

/// Nearest-neighbour 2× upsampling.
pub(crate) fn upsample2x(input: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        for y in 0..ho {
            for x in 0..wo {
                out[(p * ho + y) * wo + x] = input[(p * h + y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward(grad: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        for y in 0..ho {
            for x in 0..wo {
                out[(p * h + y / 2) * w + x / 2] += grad[(p * ho + y) * wo + x];
            }
        }
    }
    out
}

/// `log(cosh(d))` without overflow for large `|d|`.
pub fn log_cosh(d: f64) -> f64 {
    let a = d.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}
