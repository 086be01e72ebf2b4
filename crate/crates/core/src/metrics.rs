//! Geometric agreement between predicted and reference structures.

use crate::dvf::{warp_mask, Dvf, Grid, Mask};
use crate::error::{CoreError, Result};
use log::warn;
use std::collections::BTreeMap;

/// Scores for one structure at one timepoint.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureScore {
    pub label: String,
    pub timepoint: usize,
    pub dice: f64,
    /// `None` when the predicted structure vanished and the distance is undefined.
    pub avhd_mm: Option<f64>,
    pub rvd_percent: f64,
}

/// `2|X ∩ Y| / (|X| + |Y|)`; two empty masks score 1.
pub fn dice(x: &Mask, y: &Mask) -> Result<f64> {
    x.grid().ensure_same(y.grid())?;
    let (mut both, mut nx, mut ny) = (0usize, 0usize, 0usize);
    for (&a, &b) in x.data().iter().zip(y.data()) {
        nx += a as usize;
        ny += b as usize;
        both += (a & b) as usize;
    }
    if nx + ny == 0 {
        warn!("dice of two empty masks `{}` / `{}` defined as 1", x.label(), y.label());
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (nx + ny) as f64)
}

/// `100 · |V_x − V_y| / V_x` with `x` the ground truth.
pub fn rvd(x: &Mask, y: &Mask) -> Result<f64> {
    x.grid().ensure_same(y.grid())?;
    let vx = x.volume_mm3();
    if vx == 0.0 {
        return Err(CoreError::EmptyMask(x.label().to_string()));
    }
    Ok(100.0 * (vx - y.volume_mm3()).abs() / vx)
}

/// Voxels of `m` with at least one 6-neighbour outside the mask or the grid.
pub fn boundary_points(m: &Mask) -> Vec<[usize; 3]> {
    let g = *m.grid();
    let [nz, ny, nx] = g.extents;
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !m.get(z, y, x) {
                    continue;
                }
                let edge = z == 0 || y == 0 || x == 0 || z + 1 == nz || y + 1 == ny || x + 1 == nx;
                let open = edge
                    || !m.get(z - 1, y, x)
                    || !m.get(z + 1, y, x)
                    || !m.get(z, y - 1, x)
                    || !m.get(z, y + 1, x)
                    || !m.get(z, y, x - 1)
                    || !m.get(z, y, x + 1);
                if open {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out
}

const FAR: f64 = 1e30;

/// One-dimensional squared distance transform (lower envelope of parabolas).
/// Empty sites carry [`FAR`].
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], zb: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    zb[0] = f64::NEG_INFINITY;
    zb[1] = f64::INFINITY;
    let meet = |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
    for q in 1..n {
        let mut s = meet(q, v[k]);
        while k > 0 && s <= zb[k] {
            k -= 1;
            s = meet(q, v[k]);
        }
        k += 1;
        v[k] = q;
        zb[k] = s;
        zb[k + 1] = f64::INFINITY;
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while zb[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance (in voxels²) from every voxel to the
/// nearest seed point.
pub fn squared_distance_transform(grid: &Grid, seeds: &[[usize; 3]]) -> Vec<f64> {
    let [nz, ny, nx] = grid.extents;
    let mut d = vec![FAR; grid.len()];
    for p in seeds {
        d[grid.index(p[0], p[1], p[2])] = 0.0;
    }
    let longest = nz.max(ny).max(nx);
    let mut f = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut zb = vec![0.0; longest + 1];
    let mut pass = |d: &mut [f64], n: usize, index: &dyn Fn(usize) -> usize| {
        for i in 0..n {
            f[i] = d[index(i)];
        }
        edt_1d(&f[..n], &mut out[..n], &mut v[..n], &mut zb[..n + 1]);
        for i in 0..n {
            d[index(i)] = out[i];
        }
    };
    for z in 0..nz {
        for y in 0..ny {
            pass(&mut d, nx, &|x| grid.index(z, y, x));
        }
    }
    for z in 0..nz {
        for x in 0..nx {
            pass(&mut d, ny, &|y| grid.index(z, y, x));
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            pass(&mut d, nz, &|z| grid.index(z, y, x));
        }
    }
    for v in &mut d {
        if *v >= 0.5 * FAR {
            *v = f64::INFINITY;
        }
    }
    d
}

fn directed_mean(from: &[[usize; 3]], dist2: &[f64], grid: &Grid) -> f64 {
    let total: f64 = from.iter().map(|p| dist2[grid.index(p[0], p[1], p[2])].sqrt()).sum();
    total / from.len() as f64
}

/// Average Hausdorff distance in mm: the sum of both directed
/// mean-of-minimum distances between the boundary voxel sets.
pub fn avg_hausdorff(x: &Mask, y: &Mask) -> Result<f64> {
    x.grid().ensure_same(y.grid())?;
    for m in [x, y] {
        if m.is_empty() {
            return Err(CoreError::EmptyMask(m.label().to_string()));
        }
    }
    let g = *x.grid();
    let bx = boundary_points(x);
    let by = boundary_points(y);
    let to_y = squared_distance_transform(&g, &by);
    let to_x = squared_distance_transform(&g, &bx);
    Ok((directed_mean(&bx, &to_y, &g) + directed_mean(&by, &to_x, &g)) * g.spacing)
}

/// Coefficient of determination of the least-squares line through
/// `(reference, predicted)` pairs.
pub fn jacobian_correlation(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(CoreError::Degenerate(format!(
            "correlation needs at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mean_p = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_r = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(p, r) in pairs {
        sxx += (r - mean_r) * (r - mean_r);
        syy += (p - mean_p) * (p - mean_p);
        sxy += (r - mean_r) * (p - mean_p);
    }
    if sxx == 0.0 {
        return Err(CoreError::Degenerate("reference values have zero variance".into()));
    }
    if syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy * sxy / (sxx * syy))
}

/// Per-timepoint prediction to be scored.
#[derive(Debug, Clone, Copy)]
pub enum Prediction<'a> {
    /// Field that pulls reference structures onto the predicted anatomy.
    Dvf(&'a Dvf),
    /// Directly predicted structures, matched to ground truth by label.
    Masks(&'a [Mask]),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreReport {
    pub scores: Vec<StructureScore>,
    /// `(label, timepoint)` pairs that could not be scored.
    pub missing: Vec<(String, usize)>,
}

pub fn score_structure(label: &str, timepoint: usize, truth: &Mask, predicted: &Mask) -> Result<StructureScore> {
    let avhd_mm = if predicted.is_empty() {
        None
    } else {
        Some(avg_hausdorff(truth, predicted)?)
    };
    Ok(StructureScore {
        label: label.to_string(),
        timepoint,
        dice: dice(truth, predicted)?,
        avhd_mm,
        rvd_percent: rvd(truth, predicted)?,
    })
}

/// Scores every reference structure at every predicted timepoint.
///
/// Field predictions warp the reference masks; mask predictions are used
/// as-is. Structures absent from either side are listed in `missing`.
pub fn score_prediction(
    predicted: &[(usize, Prediction<'_>)],
    truth: &BTreeMap<usize, Vec<Mask>>,
    reference: &[Mask],
) -> Result<ScoreReport> {
    let mut report = ScoreReport::default();
    for &(t, pred) in predicted {
        for r in reference {
            let label = r.label();
            let truth_mask = truth.get(&t).and_then(|ms| ms.iter().find(|m| m.label() == label));
            let predicted_mask = match pred {
                Prediction::Dvf(d) => Some(warp_mask(r, d)?),
                Prediction::Masks(ms) => ms.iter().find(|m| m.label() == label).cloned(),
            };
            match (truth_mask, predicted_mask) {
                (Some(tm), Some(pm)) => report.scores.push(score_structure(label, t, tm, &pm)?),
                _ => report.missing.push((label.to_string(), t)),
            }
        }
    }
    Ok(report)
}
