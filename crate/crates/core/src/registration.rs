//! Multi-resolution deformable registration and its hyper-parameter search.
//!
//! The transform is a stationary velocity field parameterised by cubic
//! B-spline control points, exponentiated by scaling and squaring. Each
//! stage runs fixed-length gradient ascent on mutual information at a
//! coarser copy of the images; the next stage starts from the upsampled
//! velocity and adds a finer control lattice.

use crate::dvf::{exp_velocity, sample_trilinear, warp_mask, Dvf, Grid, Mask, Stencil, Volume};
use crate::error::{CoreError, Result};
use crate::metrics::dice;
use log::{debug, warn};

pub const GRID_SIZES: [usize; 4] = [16, 32, 64, 128];
pub const GRADIENT_STEPS: [f64; 4] = [0.01, 0.1, 0.3, 0.5];

/// Consecutive MI decreases after which a stage gives up.
const PATIENCE: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct RegConfig {
    /// Control-point spacing in full-resolution voxels at the coarsest
    /// stage; halved at every finer stage.
    pub grid_size: usize,
    /// Step length, in stage voxels, of each normalised gradient step.
    pub gradient_step: f64,
    pub iterations: Vec<usize>,
    /// Downsampling factor of each stage, coarse to fine.
    pub factors: Vec<usize>,
    pub mi_bins: usize,
    pub squaring_steps: u32,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            grid_size: 32,
            gradient_step: 0.1,
            iterations: vec![100, 70, 40],
            factors: vec![4, 2, 1],
            mi_bins: 32,
            squaring_steps: 6,
        }
    }
}

impl RegConfig {
    pub fn with(&self, grid_size: usize, gradient_step: f64) -> Self {
        Self {
            grid_size,
            gradient_step,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations.len() != self.factors.len() || self.factors.is_empty() {
            return Err(CoreError::Config("one iteration count per resolution stage is required".into()));
        }
        if self.factors.contains(&0) {
            return Err(CoreError::Config("stage factors must be positive".into()));
        }
        if self.grid_size == 0 || !(self.gradient_step > 0.0 && self.gradient_step.is_finite()) {
            return Err(CoreError::Config(format!(
                "grid size {} and gradient step {} must be positive",
                self.grid_size, self.gradient_step
            )));
        }
        if self.mi_bins < 8 {
            return Err(CoreError::Config(format!("mi_bins must be at least 8, got {}", self.mi_bins)));
        }
        Ok(())
    }

    /// Control spacing in the voxels of stage `s`.
    fn stage_spacing(&self, s: usize) -> f64 {
        let full_res = self.grid_size as f64 / f64::from(1u32 << s.min(31));
        (full_res / self.factors[s] as f64).max(1.0)
    }
}

// ---------------------------------------------------------------------------
// mutual information

/// Intensities min-max scaled onto `[0, bins - 1]`, or `None` for a constant image.
fn bin_positions(data: &[f64], bins: usize) -> Option<(Vec<f64>, f64, f64)> {
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return None;
    }
    let scale = (bins - 1) as f64 / (hi - lo);
    Some((data.iter().map(|&v| (v - lo) * scale).collect(), lo, scale))
}

/// Linear partial-volume split of a bin position: `(lower bin, upper weight)`.
#[inline]
fn split(x: f64, bins: usize) -> (usize, f64) {
    let i0 = (x.max(0.0) as usize).min(bins - 2);
    (i0, (x - i0 as f64).clamp(0.0, 1.0))
}

fn joint_histogram(xa: &[f64], xb: &[f64], bins: usize) -> Vec<f64> {
    let mut joint = vec![0.0; bins * bins];
    for (&a, &b) in xa.iter().zip(xb) {
        let (a0, fa) = split(a, bins);
        let (b0, fb) = split(b, bins);
        let r0 = a0 * bins;
        let r1 = r0 + bins;
        joint[r0 + b0] += (1.0 - fa) * (1.0 - fb);
        joint[r0 + b0 + 1] += (1.0 - fa) * fb;
        joint[r1 + b0] += fa * (1.0 - fb);
        joint[r1 + b0 + 1] += fa * fb;
    }
    let n = xa.len() as f64;
    joint.iter_mut().for_each(|p| *p /= n);
    joint
}

fn marginals(joint: &[f64], bins: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pa = vec![0.0; bins];
    let mut pb = vec![0.0; bins];
    for a in 0..bins {
        for b in 0..bins {
            pa[a] += joint[a * bins + b];
            pb[b] += joint[a * bins + b];
        }
    }
    (pa, pb)
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

fn mi_from_joint(joint: &[f64], bins: usize) -> f64 {
    let (pa, pb) = marginals(joint, bins);
    let h = |ps: &[f64]| -ps.iter().map(|&p| plogp(p)).sum::<f64>();
    (h(&pa) + h(&pb) - h(joint)).max(0.0)
}

/// Mutual information (nats) of two images from a partial-volume joint
/// histogram of min-max scaled intensities. A constant image scores 0.
pub fn mutual_information(a: &Volume, b: &Volume, bins: usize) -> Result<f64> {
    a.grid().ensure_same(b.grid())?;
    if bins < 8 {
        return Err(CoreError::Config(format!("mi_bins must be at least 8, got {bins}")));
    }
    match (bin_positions(a.data(), bins), bin_positions(b.data(), bins)) {
        (Some((xa, ..)), Some((xb, ..))) => Ok(mi_from_joint(&joint_histogram(&xa, &xb, bins), bins)),
        _ => {
            warn!("mutual information of a constant-intensity volume is defined as 0");
            Ok(0.0)
        }
    }
}

/// Marginal entropy (nats) under the same binning as [`mutual_information`].
pub fn entropy(v: &Volume, bins: usize) -> Result<f64> {
    if bins < 8 {
        return Err(CoreError::Config(format!("mi_bins must be at least 8, got {bins}")));
    }
    let Some((x, ..)) = bin_positions(v.data(), bins) else {
        return Ok(0.0);
    };
    let mut p = vec![0.0; bins];
    for &xi in &x {
        let (i0, f) = split(xi, bins);
        p[i0] += 1.0 - f;
        p[i0 + 1] += f;
    }
    let n = x.len() as f64;
    Ok(-p.iter().map(|&c| plogp(c / n)).sum::<f64>())
}

// ---------------------------------------------------------------------------
// resampling helpers

/// Block-average downsampling; trailing partial blocks average what they cover.
fn downsample(data: &[f64], e: [usize; 3], f: usize) -> (Vec<f64>, [usize; 3]) {
    if f == 1 {
        return (data.to_vec(), e);
    }
    let out_e = e.map(|n| n.div_ceil(f));
    let mut sum = vec![0.0; out_e.iter().product()];
    let mut count = vec![0u32; sum.len()];
    for z in 0..e[0] {
        for y in 0..e[1] {
            for x in 0..e[2] {
                let o = ((z / f) * out_e[1] + y / f) * out_e[2] + x / f;
                sum[o] += data[(z * e[1] + y) * e[2] + x];
                count[o] += 1;
            }
        }
    }
    for (s, c) in sum.iter_mut().zip(&count) {
        *s /= f64::from(*c);
    }
    (sum, out_e)
}

/// Resamples a velocity from a grid `ratio` times coarser onto extents `to`,
/// converting its values to the finer voxel units.
fn refine_velocity(v: &[Vec<f64>; 3], from: [usize; 3], to: [usize; 3], ratio: f64) -> [Vec<f64>; 3] {
    let offset = (ratio - 1.0) / 2.0;
    let n: usize = to.iter().product();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        let x = i % to[2];
        let r = i / to[2];
        let (z, y) = (r / to[1], r % to[1]);
        let p = [z, y, x].map(|c| (c as f64 - offset) / ratio);
        for c in 0..3 {
            out[c][i] = ratio * sample_trilinear(&v[c], from, p[0], p[1], p[2]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// cubic B-spline lattice

fn bspline3(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        (2.0 - a).powi(3) / 6.0
    } else {
        0.0
    }
}

/// Per-axis B-spline taps: voxel `p` reads controls `taps[p]`.
struct AxisBasis {
    n: usize,
    size: usize,
    taps: Vec<[(usize, f64); 4]>,
}

impl AxisBasis {
    fn new(n: usize, spacing: f64) -> Self {
        let size = ((n - 1) as f64 / spacing).floor() as usize + 4;
        let taps = (0..n)
            .map(|p| {
                let t = p as f64 / spacing;
                let k0 = t.floor() as isize;
                [0, 1, 2, 3].map(|j| {
                    let k = k0 - 1 + j as isize;
                    ((k + 1) as usize, bspline3(t - k as f64))
                })
            })
            .collect();
        Self { n, size, taps }
    }
}

/// Applies the basis along `axis`: `dims[axis]` goes from `size` to `n`.
fn basis_forward(input: &[f64], dims: [usize; 3], axis: usize, b: &AxisBasis) -> (Vec<f64>, [usize; 3]) {
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut out_dims = dims;
    out_dims[axis] = b.n;
    let mut out = vec![0.0; outer * b.n * inner];
    for o in 0..outer {
        for (p, taps) in b.taps.iter().enumerate() {
            let dst = (o * b.n + p) * inner;
            for &(k, w) in taps {
                let src = (o * b.size + k) * inner;
                for i in 0..inner {
                    out[dst + i] += w * input[src + i];
                }
            }
        }
    }
    (out, out_dims)
}

/// Transpose of [`basis_forward`]: `dims[axis]` goes from `n` to `size`.
fn basis_adjoint(input: &[f64], dims: [usize; 3], axis: usize, b: &AxisBasis) -> (Vec<f64>, [usize; 3]) {
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut out_dims = dims;
    out_dims[axis] = b.size;
    let mut out = vec![0.0; outer * b.size * inner];
    for o in 0..outer {
        for (p, taps) in b.taps.iter().enumerate() {
            let src = (o * b.n + p) * inner;
            for &(k, w) in taps {
                let dst = (o * b.size + k) * inner;
                for i in 0..inner {
                    out[dst + i] += w * input[src + i];
                }
            }
        }
    }
    (out, out_dims)
}

struct Lattice {
    axes: [AxisBasis; 3],
}

impl Lattice {
    fn new(e: [usize; 3], spacing: f64) -> Self {
        Self {
            axes: e.map(|n| AxisBasis::new(n, spacing)),
        }
    }

    fn controls(&self) -> usize {
        self.axes.iter().map(|a| a.size).product()
    }

    fn dense(&self, c: &[f64]) -> Vec<f64> {
        let mut dims = self.axes.each_ref().map(|a| a.size);
        let mut v = c.to_vec();
        for axis in (0..3).rev() {
            (v, dims) = basis_forward(&v, dims, axis, &self.axes[axis]);
        }
        v
    }

    fn project(&self, g: &[f64]) -> Vec<f64> {
        let mut dims = self.axes.each_ref().map(|a| a.n);
        let mut v = g.to_vec();
        for axis in 0..3 {
            (v, dims) = basis_adjoint(&v, dims, axis, &self.axes[axis]);
        }
        v
    }
}

// ---------------------------------------------------------------------------
// optimisation

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    /// Pull field: `warp_volume(moving, dvf)` approximates `fixed`.
    pub dvf: Dvf,
    /// Set when a stage stopped on repeated MI decreases or the result did
    /// not beat the identity; the best iterate is returned either way.
    pub flagged: bool,
    pub mi_before: f64,
    pub mi_after: f64,
}

struct Stage<'a> {
    e: [usize; 3],
    fixed: Vec<(usize, f64)>,
    moving: &'a [f64],
    moving_lo: f64,
    moving_scale: f64,
    bins: usize,
    squaring: u32,
}

impl Stage<'_> {
    fn grid(&self) -> Grid {
        Grid {
            extents: self.e,
            spacing: 1.0,
        }
    }

    /// MI of the moving image pulled through `exp(v)`, and dMI/du per voxel.
    fn evaluate(&self, v: &[Vec<f64>; 3], want_grad: bool) -> Result<(f64, Option<[Vec<f64>; 3]>)> {
        let g = self.grid();
        let phi = exp_velocity(&Dvf::new(g, v.clone(), "")?, self.squaring)?;
        let n = g.len();
        let bins = self.bins;
        let mut xb = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(if want_grad { n } else { 0 });
        for i in 0..n {
            let [z, y, x] = g.coords(i);
            let u = phi.at(i);
            let st = Stencil::new(self.e, z as f64 + u[0], y as f64 + u[1], x as f64 + u[2]);
            let m = st.apply(self.moving);
            xb.push(((m - self.moving_lo) * self.moving_scale).clamp(0.0, (bins - 1) as f64));
            if want_grad {
                pos.push(st);
            }
        }
        let mut joint = vec![0.0; bins * bins];
        for (&(a0, fa), &b) in self.fixed.iter().zip(&xb) {
            let (b0, fb) = split(b, bins);
            let r0 = a0 * bins;
            joint[r0 + b0] += (1.0 - fa) * (1.0 - fb);
            joint[r0 + b0 + 1] += (1.0 - fa) * fb;
            joint[r0 + bins + b0] += fa * (1.0 - fb);
            joint[r0 + bins + b0 + 1] += fa * fb;
        }
        joint.iter_mut().for_each(|p| *p /= n as f64);
        let mi = mi_from_joint(&joint, bins);
        if !want_grad {
            return Ok((mi, None));
        }
        let (_, pb) = marginals(&joint, bins);
        // dMI/dp_ab = log(p_ab / p_b)
        let dlog: Vec<f64> = (0..bins * bins)
            .map(|k| {
                let p = joint[k];
                if p > 0.0 {
                    (p / pb[k % bins]).ln()
                } else {
                    0.0
                }
            })
            .collect();
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for i in 0..n {
            let (a0, fa) = self.fixed[i];
            let (b0, _) = split(xb[i], bins);
            let r0 = a0 * bins + b0;
            let r1 = r0 + bins;
            let d_x = (1.0 - fa) * (dlog[r0 + 1] - dlog[r0]) + fa * (dlog[r1 + 1] - dlog[r1]);
            if d_x == 0.0 {
                continue;
            }
            let d_m = d_x * self.moving_scale;
            let grad = pos[i].gradient(self.moving);
            for c in 0..3 {
                out[c][i] = d_m * grad[c];
            }
        }
        Ok((mi, Some(out)))
    }
}

fn add_dense(base: &[Vec<f64>; 3], lattice: &Lattice, c: &[Vec<f64>; 3]) -> [Vec<f64>; 3] {
    [0, 1, 2].map(|k| {
        let mut v = lattice.dense(&c[k]);
        for (a, b) in v.iter_mut().zip(&base[k]) {
            *a += b;
        }
        v
    })
}

/// Registers `moving` onto `fixed`; deterministic in its inputs.
pub fn register(fixed: &Volume, moving: &Volume, cfg: &RegConfig) -> Result<Registration> {
    cfg.validate()?;
    fixed.grid().ensure_same(moving.grid())?;
    let grid = *fixed.grid();
    let mi_before = mutual_information(fixed, moving, cfg.mi_bins)?;
    let identity = Registration {
        dvf: Dvf::zeros(grid, "moving"),
        flagged: false,
        mi_before,
        mi_after: mi_before,
    };
    if bin_positions(fixed.data(), cfg.mi_bins).is_none() || bin_positions(moving.data(), cfg.mi_bins).is_none() {
        return Ok(identity);
    }

    let mut flagged = false;
    let mut velocity: Option<([Vec<f64>; 3], [usize; 3], usize)> = None;
    for (s, (&factor, &iterations)) in cfg.factors.iter().zip(&cfg.iterations).enumerate() {
        let (f_data, e) = downsample(fixed.data(), grid.extents, factor);
        let (m_data, _) = downsample(moving.data(), grid.extents, factor);
        let n: usize = e.iter().product();
        let (xa, ..) = bin_positions(&f_data, cfg.mi_bins).unwrap_or((vec![0.0; n], 0.0, 0.0));
        let (_, m_lo, m_scale) = bin_positions(&m_data, cfg.mi_bins).unwrap_or((Vec::new(), 0.0, 0.0));
        let stage = Stage {
            e,
            fixed: xa.iter().map(|&a| split(a, cfg.mi_bins)).collect(),
            moving: &m_data,
            moving_lo: m_lo,
            moving_scale: m_scale,
            bins: cfg.mi_bins,
            squaring: cfg.squaring_steps,
        };
        let base = match &velocity {
            None => [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            Some((v, from, prev_factor)) => refine_velocity(v, *from, e, *prev_factor as f64 / factor as f64),
        };
        let lattice = Lattice::new(e, cfg.stage_spacing(s));
        let mut c = [0; 3].map(|_| vec![0.0; lattice.controls()]);
        let mut best = (f64::NEG_INFINITY, c.clone());
        let mut prev = f64::NEG_INFINITY;
        let mut decreases = 0;
        for it in 0..=iterations {
            let v = add_dense(&base, &lattice, &c);
            let last = it == iterations;
            let (mi, grad) = stage.evaluate(&v, !last)?;
            if mi > best.0 {
                best = (mi, c.clone());
            }
            decreases = if mi < prev { decreases + 1 } else { 0 };
            prev = mi;
            if decreases >= PATIENCE {
                debug!("stage {s}: MI fell {PATIENCE} iterations in a row at iteration {it}");
                flagged = true;
                break;
            }
            let Some(g) = grad else { break };
            let gc = g.map(|gk| lattice.project(&gk));
            let peak = gc.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak == 0.0 {
                break;
            }
            let step = cfg.gradient_step / peak;
            for k in 0..3 {
                for (ci, gi) in c[k].iter_mut().zip(&gc[k]) {
                    *ci += step * gi;
                }
            }
        }
        debug!("stage {s} ({factor}x): best MI {:.5}", best.0);
        velocity = Some((add_dense(&base, &lattice, &best.1), e, factor));
    }

    let (v, e, factor) = velocity.expect("at least one stage");
    let v = if factor == 1 {
        v
    } else {
        refine_velocity(&v, e, grid.extents, factor as f64)
    };
    let dvf = exp_velocity(&Dvf::new(grid, v, "moving")?, cfg.squaring_steps)?;
    let warped = crate::dvf::warp_volume(moving, &dvf)?;
    let mi_after = mutual_information(fixed, &warped, cfg.mi_bins)?;
    if mi_after < mi_before {
        warn!("registration ended below the identity's MI ({mi_after:.5} < {mi_before:.5}); returning the identity");
        return Ok(Registration {
            flagged: true,
            ..identity
        });
    }
    Ok(Registration {
        dvf,
        flagged,
        mi_before,
        mi_after,
    })
}

// ---------------------------------------------------------------------------
// hyper-parameter search

/// One patient for the search: `moving` is registered onto `fixed` and the
/// moving structures are warped onto the fixed ones.
#[derive(Debug, Clone)]
pub struct SearchCase {
    pub id: String,
    pub fixed: Volume,
    pub moving: Volume,
    pub fixed_masks: Vec<Mask>,
    pub moving_masks: Vec<Mask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchRow {
    pub grid_size: usize,
    pub gradient_step: f64,
    pub patient_id: String,
    pub gtv_dice: f64,
    pub oar_dice: f64,
    pub combined: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperSearchResult {
    pub grid_sizes: Vec<usize>,
    pub steps: Vec<f64>,
    /// `table[i][j]`: mean combined Dice for `grid_sizes[i]`, `steps[j]`.
    pub table: Vec<Vec<f64>>,
    pub rows: Vec<SearchRow>,
    pub best: (usize, f64),
}

impl HyperSearchResult {
    pub fn cell_flagged(&self, grid_size: usize, step: f64) -> bool {
        self.rows
            .iter()
            .any(|r| r.grid_size == grid_size && r.gradient_step == step && r.flagged)
    }
}

fn structure_dice(fixed: &[Mask], warped: &[Mask], gtv_label: &str) -> Result<(f64, f64)> {
    let mut gtv = None;
    let mut oars = Vec::new();
    for f in fixed {
        let w = warped
            .iter()
            .find(|m| m.label() == f.label())
            .ok_or_else(|| CoreError::Config(format!("moving masks lack structure `{}`", f.label())))?;
        let d = dice(f, w)?;
        if f.label() == gtv_label {
            gtv = Some(d);
        } else {
            oars.push(d);
        }
    }
    match (gtv, oars.is_empty()) {
        (Some(g), false) => Ok((g, oars.iter().sum::<f64>() / oars.len() as f64)),
        _ => Err(CoreError::Config(format!(
            "each search case needs a `{gtv_label}` contour and at least one organ at risk"
        ))),
    }
}

/// Grid search over `grid_sizes × steps`, maximising the mean over
/// patients of the unweighted mean of GTV and OAR Dice. Ties go to the
/// smaller grid size, then the smaller step.
pub fn hyper_search(
    cases: &[SearchCase],
    grid_sizes: &[usize],
    steps: &[f64],
    base: &RegConfig,
    gtv_label: &str,
) -> Result<HyperSearchResult> {
    if cases.len() < 2 {
        return Err(CoreError::Config(format!(
            "hyper-parameter search needs at least 2 patients, got {}",
            cases.len()
        )));
    }
    let mut grid_sizes = grid_sizes.to_vec();
    grid_sizes.sort_unstable();
    let mut steps = steps.to_vec();
    steps.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    let mut table = vec![vec![0.0; steps.len()]; grid_sizes.len()];
    let mut best: Option<((usize, f64), f64)> = None;
    for (i, &gs) in grid_sizes.iter().enumerate() {
        for (j, &step) in steps.iter().enumerate() {
            let cfg = base.with(gs, step);
            let mut total = 0.0;
            for case in cases {
                let reg = register(&case.fixed, &case.moving, &cfg)?;
                let field = if reg.flagged {
                    Dvf::zeros(*case.fixed.grid(), "moving")
                } else {
                    reg.dvf
                };
                let warped = case
                    .moving_masks
                    .iter()
                    .map(|m| warp_mask(m, &field))
                    .collect::<Result<Vec<_>>>()?;
                let (gtv_dice, oar_dice) = structure_dice(&case.fixed_masks, &warped, gtv_label)?;
                let combined = 0.5 * (gtv_dice + oar_dice);
                total += combined;
                rows.push(SearchRow {
                    grid_size: gs,
                    gradient_step: step,
                    patient_id: case.id.clone(),
                    gtv_dice,
                    oar_dice,
                    combined,
                    flagged: reg.flagged,
                });
            }
            let mean = total / cases.len() as f64;
            table[i][j] = mean;
            debug!("grid {gs}, step {step}: mean combined dice {mean:.4}");
            if best.is_none_or(|(_, b)| mean > b) {
                best = Some(((gs, step), mean));
            }
        }
    }
    let best = best.map(|(arg, _)| arg).ok_or_else(|| CoreError::Config("empty search grid".into()))?;
    Ok(HyperSearchResult {
        grid_sizes,
        steps,
        table,
        rows,
        best,
    })
}

/// The two gradient steps adjacent to `optimum` in `steps` (sorted), taken
/// from one side when the optimum sits at an end of the range.
pub fn neighbor_steps(optimum: f64, steps: &[f64]) -> Result<[f64; 2]> {
    let mut sorted = steps.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.len() < 3 {
        return Err(CoreError::Config("augmentation needs at least 3 gradient steps".into()));
    }
    let i = sorted
        .iter()
        .position(|&s| s == optimum)
        .ok_or_else(|| CoreError::Config(format!("gradient step {optimum} is not in the search grid")))?;
    let last = sorted.len() - 1;
    Ok(match i {
        0 => [sorted[1], sorted[2]],
        i if i == last => [sorted[last - 1], sorted[last - 2]],
        i => [sorted[i - 1], sorted[i + 1]],
    })
}

/// Registers every pair with the optimum and its two neighbouring steps,
/// giving three fields per pair in `[optimum, neighbour, neighbour]` order.
pub fn augment_dvfs(optimal: &RegConfig, steps: &[f64], pairs: &[(&Volume, &Volume)]) -> Result<Vec<[Dvf; 3]>> {
    let [a, b] = neighbor_steps(optimal.gradient_step, steps)?;
    pairs
        .iter()
        .map(|(fixed, moving)| {
            let run = |step: f64| register(fixed, moving, &optimal.with(optimal.grid_size, step)).map(|r| r.dvf);
            Ok([run(optimal.gradient_step)?, run(a)?, run(b)?])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbours_clamp_at_range_ends() {
        let s = GRADIENT_STEPS;
        assert_eq!(neighbor_steps(0.1, &s).unwrap(), [0.01, 0.3]);
        assert_eq!(neighbor_steps(0.01, &s).unwrap(), [0.1, 0.3]);
        assert_eq!(neighbor_steps(0.5, &s).unwrap(), [0.3, 0.1]);
        assert!(neighbor_steps(0.2, &s).is_err());
    }

    #[test]
    fn bspline_partition_of_unity_and_adjoint() {
        let lattice = Lattice::new([5, 7, 9], 2.5);
        let ones = vec![1.0; lattice.controls()];
        assert!(lattice.dense(&ones).iter().all(|v| (v - 1.0).abs() < 1e-12));
        // <B c, g> == <c, B^T g>
        let c: Vec<f64> = (0..lattice.controls()).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        let g: Vec<f64> = (0..5 * 7 * 9).map(|i| ((i * 13 % 7) as f64).cos()).collect();
        let lhs: f64 = lattice.dense(&c).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = c.iter().zip(lattice.project(&g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn downsample_averages_blocks() {
        let data: Vec<f64> = (0..4 * 4 * 4).map(|i| i as f64).collect();
        let (d, e) = downsample(&data, [4, 4, 4], 2);
        assert_eq!(e, [2, 2, 2]);
        assert_eq!(d[0], (0.0 + 1.0 + 4.0 + 5.0 + 16.0 + 17.0 + 20.0 + 21.0) / 8.0);
        let (d, e) = downsample(&data, [4, 4, 4], 3);
        assert_eq!(e, [2, 2, 2]);
        assert_eq!(d[7], 63.0);
    }

    #[test]
    fn mi_gradient_matches_finite_difference() {
        let e = [6, 8, 8];
        let g = Grid::new(e, 1.0).unwrap();
        let f = Volume::from_fn(g, |z, y, x| (z as f64 * 0.7).sin() + (y as f64 * 0.5).cos() + 0.3 * x as f64).unwrap();
        let m = Volume::from_fn(g, |z, y, x| (z as f64 * 0.7 + 0.3).sin() + (y as f64 * 0.5).cos() + 0.28 * x as f64).unwrap();
        let (xa, ..) = bin_positions(f.data(), 16).unwrap();
        let (_, lo, scale) = bin_positions(m.data(), 16).unwrap();
        let stage = Stage {
            e,
            fixed: xa.iter().map(|&a| split(a, 16)).collect(),
            moving: m.data(),
            moving_lo: lo,
            moving_scale: scale,
            bins: 16,
            squaring: 0,
        };
        let lattice = Lattice::new(e, 3.0);
        let zero = [0; 3].map(|_| vec![0.0; g.len()]);
        let mut c = [0; 3].map(|_| vec![0.0; lattice.controls()]);
        c[2][lattice.controls() / 2] = 0.13;
        let (_, grad) = stage.evaluate(&add_dense(&zero, &lattice, &c), true).unwrap();
        let gc = lattice.project(&grad.unwrap()[2]);
        // compare the largest control gradient with a central difference
        let (k, &analytic) = gc
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        let h = 1e-4;
        let probe = |delta: f64| {
            let mut cc = c.clone();
            cc[2][k] += delta;
            stage.evaluate(&add_dense(&zero, &lattice, &cc), false).unwrap().0
        };
        let numeric = (probe(h) - probe(-h)) / (2.0 * h) * g.len() as f64;
        assert!(
            (analytic - numeric).abs() < 0.1 * analytic.abs(),
            "analytic {analytic} numeric {numeric}"
        );
    }
}
