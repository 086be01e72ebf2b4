//! Synthetic longitudinal cohorts with analytically known deformations.
//!
//! Each case has a planning volume with a textured body, two lungs, an
//! ellipsoidal tumour (`gtv`) and a tubular esophagus. Week `t` anatomy is
//! produced by a true field that composes a compactly supported radial
//! scaling about the tumour centre with a smooth, divergence-free body
//! motion, so every weekly mask is exactly the warped reference mask.

use crate::dvf::{compose, exp_velocity, jacobian_map, warp_mask, warp_volume, Dvf, Grid, Mask, Volume};
use crate::error::{CoreError, Result};
use crate::seed;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;
use std::fmt;

pub const GTV: &str = "gtv";
pub const OAR: &str = "esophagus";

/// Radial scaling is exact inside this normalised tumour radius.
const SUPPORT_INNER: f64 = 1.25;
/// ... and fades to zero at this one.
const SUPPORT_OUTER: f64 = 2.5;
const SQUARING_STEPS: u32 = 6;

/// Tumour volume trajectory family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    /// Swelling above the planning volume, then shrinkage.
    Inflammation,
    /// Strictly decreasing volume.
    Shrink,
}

impl Category {
    pub fn code(self) -> u8 {
        match self {
            Category::Inflammation => 1,
            Category::Shrink => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Category::Inflammation),
            2 => Ok(Category::Shrink),
            other => Err(CoreError::Config(format!("unknown category {other}"))),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub grid: Grid,
    /// Voxel coordinates `(z, y, x)`.
    pub tumor_center: [f64; 3],
    /// Semi-axes in voxels.
    pub tumor_radii: [f64; 3],
    /// `(y, x)` centre of the esophagus, which runs along z.
    pub oar_center: [f64; 2],
    pub oar_radius: f64,
    pub category: Category,
    /// Tumour volume factor per week; week 0 is the planning scan and must be 1.
    pub scales: Vec<f64>,
    /// Peak body-motion displacement at the final week, in voxels.
    pub body_amplitude: f64,
    /// Strength of the weekly-scan artefacts; 0 gives clean weekly volumes.
    pub artifact_amplitude: f64,
    pub texture_seed: u64,
}

pub fn default_grid() -> Grid {
    Grid {
        extents: [32, 64, 64],
        spacing: 2.0,
    }
}

/// Random volume-factor trajectory of length `t` for `category`.
pub fn trajectory<R: Rng>(category: Category, t: usize, rng: &mut R) -> Result<Vec<f64>> {
    if t < 2 {
        return Err(CoreError::Config(format!("need at least 2 timepoints, got {t}")));
    }
    let last = (t - 1) as f64;
    match category {
        Category::Shrink => {
            let final_scale = rng.gen_range(0.5..=0.8);
            let gamma = rng.gen_range(0.7..=1.4);
            Ok((0..t)
                .map(|i| 1.0 - (1.0 - final_scale) * (i as f64 / last).powf(gamma))
                .collect())
        }
        Category::Inflammation => {
            if t < 3 {
                return Err(CoreError::Config("inflammation trajectories need at least 3 timepoints".into()));
            }
            let peak = rng.gen_range(1.08..=1.2);
            let final_scale = rng.gen_range(0.65..=0.9);
            let frac: f64 = rng.gen_range(0.2..=0.4);
            let tp = ((frac * last).round() as usize).clamp(1, t - 2);
            Ok((0..t)
                .map(|i| {
                    if i <= tp {
                        1.0 + (peak - 1.0) * (0.5 * PI * i as f64 / tp as f64).sin()
                    } else {
                        let a = (i - tp) as f64 / (t - 1 - tp) as f64;
                        peak + (final_scale - peak) * 0.5 * (1.0 - (PI * a).cos())
                    }
                })
                .collect())
        }
    }
}

impl PhantomSpec {
    /// Draws a random case layout on `grid`, scaled from the 32×64×64 design.
    pub fn sample<R: Rng>(
        grid: Grid,
        category: Category,
        timepoints: usize,
        body_amplitude: f64,
        artifact_amplitude: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let [nz, ny, nx] = grid.extents.map(|e| e as f64);
        let scales = trajectory(category, timepoints, rng)?;
        let tumor_center = [
            nz * (0.5 + rng.gen_range(-0.03..=0.03)),
            ny * rng.gen_range(0.40..=0.52),
            nx * rng.gen_range(0.33..=0.42),
        ];
        let tumor_radii = [
            rng.gen_range(4.0..=5.0) * nz / 32.0,
            rng.gen_range(5.0..=7.0) * ny / 64.0,
            rng.gen_range(5.0..=7.0) * nx / 64.0,
        ];
        let spec = Self {
            grid,
            tumor_center,
            tumor_radii,
            oar_center: [ny * 0.72, nx * 0.5],
            oar_radius: 3.0 * nx / 64.0,
            category,
            scales,
            body_amplitude,
            artifact_amplitude,
            texture_seed: rng.gen(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn timepoints(&self) -> usize {
        self.scales.len()
    }

    /// Upper bound on any true displacement magnitude, in voxels.
    pub fn max_displacement(&self) -> f64 {
        let dev = self
            .scales
            .iter()
            .map(|s| (s.powf(-1.0 / 3.0) - 1.0).abs())
            .fold(0.0, f64::max);
        let r = self.tumor_radii.iter().copied().fold(0.0, f64::max);
        dev * SUPPORT_OUTER * r + self.body_amplitude
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.len() < 2 {
            return Err(CoreError::Config("a phantom needs at least 2 timepoints".into()));
        }
        if self.scales[0] != 1.0 {
            return Err(CoreError::Config(format!("week-0 scale must be 1, got {}", self.scales[0])));
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(CoreError::Config("volume scales must be positive".into()));
        }
        if self.tumor_radii.iter().any(|r| !(*r > 0.0)) || !(self.oar_radius > 0.0) {
            return Err(CoreError::Config("radii must be positive".into()));
        }
        if !(self.body_amplitude >= 0.0 && self.artifact_amplitude >= 0.0) {
            return Err(CoreError::Config("amplitudes must be non-negative".into()));
        }
        let margin = self.max_displacement();
        for axis in 0..3 {
            let (c, r) = (self.tumor_center[axis], self.tumor_radii[axis]);
            let hi = (self.grid.extents[axis] - 1) as f64;
            if c - r < margin || c + r > hi - margin {
                return Err(CoreError::Config(format!(
                    "tumour along axis {axis} spans [{:.2}, {:.2}], closer to the edge of {} than the maximum displacement {margin:.2}",
                    c - r,
                    c + r,
                    self.grid
                )));
            }
        }
        Ok(())
    }

    fn tumor_rho(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|i| ((p[i] - self.tumor_center[i]) / self.tumor_radii[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Week {
    /// Weekly scan; week 0 is the clean planning volume.
    pub volume: Volume,
    /// True field pulling the planning anatomy onto this week.
    pub dvf: Dvf,
    /// `[gtv, esophagus]`, each the exact warp of the reference mask.
    pub masks: Vec<Mask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub spec: PhantomSpec,
    pub weeks: Vec<Week>,
}

impl PhantomCase {
    pub fn reference(&self) -> &Week {
        &self.weeks[0]
    }

    pub fn category(&self) -> Category {
        self.spec.category
    }

    /// Voxel-count GTV volume of each stored weekly mask.
    pub fn gtv_volumes_mm3(&self) -> Vec<f64> {
        self.weeks.iter().map(|w| w.masks[0].volume_mm3()).collect()
    }

    /// Planning GTV volume times each week's volume factor. Weekly masks
    /// only change where the boundary moves by half a voxel or more, so
    /// this is the reference trajectory for volume comparisons.
    pub fn designed_gtv_volumes_mm3(&self) -> Vec<f64> {
        let v0 = self.weeks[0].masks[0].volume_mm3();
        self.spec.scales.iter().map(|s| s * v0).collect()
    }
}

fn texture(spec: &PhantomSpec) -> impl Fn(f64, f64, f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let waves: Vec<([f64; 3], f64)> = (0..4)
        .map(|_| {
            let k = [0; 3].map(|_| rng.gen_range(0.05..0.2) * if rng.gen() { 1.0 } else { -1.0 });
            (k, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    move |z, y, x| {
        waves
            .iter()
            .map(|(k, phase)| 0.025 * (2.0 * PI * (k[0] * z + k[1] * y + k[2] * x) + phase).sin())
            .sum()
    }
}

/// Planning volume and `[gtv, esophagus]` masks.
pub fn reference_anatomy(spec: &PhantomSpec) -> Result<(Volume, Vec<Mask>)> {
    let g = spec.grid;
    let [nz, ny, nx] = g.extents.map(|e| e as f64);
    let tex = texture(spec);
    let in_gtv = |z: f64, y: f64, x: f64| spec.tumor_rho([z, y, x]) <= 1.0;
    let in_oar = |y: f64, x: f64| {
        (y - spec.oar_center[0]).powi(2) + (x - spec.oar_center[1]).powi(2) <= spec.oar_radius.powi(2)
    };
    let volume = Volume::from_fn(g, |z, y, x| {
        let (z, y, x) = (z as f64, y as f64, x as f64);
        let body = ((y - 0.5 * ny) / (0.42 * ny)).powi(2) + ((x - 0.5 * nx) / (0.46 * nx)).powi(2) <= 1.0;
        if !body {
            return 0.0;
        }
        let lung = [-1.0, 1.0].iter().any(|side| {
            ((z - 0.5 * nz) / (0.42 * nz)).powi(2)
                + ((y - 0.47 * ny) / (0.3 * ny)).powi(2)
                + ((x - (0.5 + side * 0.22) * nx) / (0.17 * nx)).powi(2)
                <= 1.0
        });
        let base = if in_gtv(z, y, x) {
            0.8
        } else if in_oar(y, x) {
            0.55
        } else if lung {
            0.12
        } else {
            0.35
        };
        base + tex(z, y, x)
    })?;
    let gtv = Mask::from_fn(g, GTV, |z, y, x| in_gtv(z as f64, y as f64, x as f64));
    let oar = Mask::from_fn(g, OAR, |_, y, x| in_oar(y as f64, x as f64));
    Ok((volume, vec![gtv, oar]))
}

fn falloff(rho: f64) -> f64 {
    if rho <= SUPPORT_INNER {
        1.0
    } else if rho >= SUPPORT_OUTER {
        0.0
    } else {
        0.5 * (1.0 + (PI * (rho - SUPPORT_INNER) / (SUPPORT_OUTER - SUPPORT_INNER)).cos())
    }
}

/// Pull field that scales the tumour volume by `scale` about its centre.
pub fn radial_field(spec: &PhantomSpec, scale: f64) -> Result<Dvf> {
    let lambda = scale.powf(-1.0 / 3.0);
    Dvf::from_fn(spec.grid, "week0", |z, y, x| {
        let p = [z as f64, y as f64, x as f64];
        let w = (lambda - 1.0) * falloff(spec.tumor_rho(p));
        [0, 1, 2].map(|i| w * (p[i] - spec.tumor_center[i]))
    })
}

/// Divergence-free in-plane stream-function velocity plus a z-drift that
/// depends only on `(y, x)`, normalised to `spec.body_amplitude`.
fn body_velocity<R: Rng>(spec: &PhantomSpec, rng: &mut R) -> Result<Dvf> {
    let g = spec.grid;
    if spec.body_amplitude == 0.0 {
        return Ok(Dvf::zeros(g, "week0"));
    }
    let [_, ny, nx] = g.extents.map(|e| e as f64);
    let modes: Vec<[f64; 5]> = (0..3)
        .map(|_| {
            [
                rng.gen_range(0.5..1.5) / ny,
                rng.gen_range(0.5..1.5) / nx,
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.5..1.0),
                rng.gen_range(-0.5..0.5),
            ]
        })
        .collect();
    let raw = Dvf::from_fn(g, "week0", |_, y, x| {
        let mut v = [0.0; 3];
        for &[ky, kx, phase, a, b] in &modes {
            let theta = 2.0 * PI * (ky * y as f64 + kx * x as f64) + phase;
            v[0] += b * theta.sin();
            v[1] += a * 2.0 * PI * kx * theta.cos();
            v[2] -= a * 2.0 * PI * ky * theta.cos();
        }
        v
    })?;
    let peak = raw.max_magnitude();
    Ok(if peak > 0.0 {
        raw.scaled(spec.body_amplitude / peak)
    } else {
        raw
    })
}

/// Adds streak artefacts, a smooth intensity bias and Gaussian noise,
/// imitating low-dose weekly imaging. Amplitude 0 returns the input.
pub fn degrade_weekly(v: &Volume, amplitude: f64, seed: u64) -> Result<Volume> {
    if amplitude == 0.0 {
        return Ok(v.clone());
    }
    let g = *v.grid();
    let [nz, ny, nx] = g.extents.map(|e| e as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let streaks: Vec<[f64; 3]> = (0..5)
        .map(|_| [rng.gen_range(0.0..PI), rng.gen_range(0.15..0.3), rng.gen_range(0.0..2.0 * PI)])
        .collect();
    let tilt = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let noise = Normal::new(0.0, 0.02 * amplitude).map_err(|e| CoreError::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(g.len());
    for (i, &value) in v.data().iter().enumerate() {
        let [z, y, x] = g.coords(i).map(|c| c as f64);
        let streak: f64 = streaks
            .iter()
            .map(|&[angle, freq, phase]| (2.0 * PI * freq * (x * angle.cos() + y * angle.sin()) + phase).cos())
            .sum::<f64>()
            / streaks.len() as f64;
        let bias = 1.0 + 0.1 * amplitude * (tilt[0] * (z / nz - 0.5) + tilt[1] * (y / ny - 0.5) + tilt[2] * (x / nx - 0.5));
        out.push(value * bias + 0.05 * amplitude * streak + noise.sample(&mut rng));
    }
    Volume::new(g, out)
}

/// Builds every week of one case. Deterministic in `(spec, seed)`.
pub fn generate_case(spec: &PhantomSpec, seed: u64) -> Result<PhantomCase> {
    spec.validate()?;
    let (reference, ref_masks) = reference_anatomy(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let body = body_velocity(spec, &mut rng)?;
    let last = (spec.timepoints() - 1) as f64;
    let mut weeks = Vec::with_capacity(spec.timepoints());
    for (t, &scale) in spec.scales.iter().enumerate() {
        let radial = radial_field(spec, scale)?;
        let motion = exp_velocity(&body.scaled(t as f64 / last), SQUARING_STEPS)?;
        let mut dvf = compose(&radial, &motion)?;
        dvf.set_reference("week0");
        if t == 0 {
            weeks.push(Week {
                volume: reference.clone(),
                dvf,
                masks: ref_masks.clone(),
            });
            continue;
        }
        if spec.grid.extents.iter().all(|&e| e >= 3) {
            let (jmin, _) = jacobian_map(&dvf)?.min_max();
            if jmin <= 0.0 {
                return Err(CoreError::Degenerate(format!("true field at week {t} folds (min J = {jmin})")));
            }
        }
        let clean = warp_volume(&reference, &dvf)?;
        let volume = degrade_weekly(&clean, spec.artifact_amplitude, seed::derive(seed, "artifact", t as u64))?;
        let masks = ref_masks.iter().map(|m| warp_mask(m, &dvf)).collect::<Result<Vec<_>>>()?;
        weeks.push(Week { volume, dvf, masks });
    }
    Ok(PhantomCase { spec: spec.clone(), weeks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Train/val/test proportions.
pub const SPLIT_WEIGHTS: [usize; 3] = [50, 3, 10];

/// Largest-remainder apportionment of `n` cases to train/val/test.
/// Any category with two or more cases keeps at least one test case.
pub fn split_sizes(n: usize) -> [usize; 3] {
    let total: usize = SPLIT_WEIGHTS.iter().sum();
    let mut sizes = SPLIT_WEIGHTS.map(|w| n * w / total);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((n * SPLIT_WEIGHTS[i]) % total));
    let short = n - sizes.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        sizes[i] += 1;
    }
    if n >= 2 && sizes[2] == 0 {
        let donor = if sizes[0] > 1 { 0 } else { 1 };
        sizes[donor] -= 1;
        sizes[2] += 1;
    }
    sizes
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortOptions {
    pub grid: Grid,
    pub timepoints: usize,
    pub body_amplitude: f64,
    pub artifact_amplitude: f64,
}

impl Default for CohortOptions {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            timepoints: 7,
            body_amplitude: 1.0,
            artifact_amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseEntry {
    pub id: String,
    pub category: Category,
    pub split: Split,
    pub seed: u64,
    pub spec: PhantomSpec,
}

impl CaseEntry {
    pub fn generate(&self) -> Result<PhantomCase> {
        generate_case(&self.spec, self.seed)
    }
}

/// Case layouts and split assignment; volumes are built on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub options: CohortOptions,
    pub entries: Vec<CaseEntry>,
}

impl Cohort {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CaseEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

pub fn generate_cohort(n_inflammation: usize, n_shrink: usize, options: &CohortOptions, seed: u64) -> Result<Cohort> {
    if n_inflammation == 0 || n_shrink == 0 {
        return Err(CoreError::Config("a cohort needs at least one case of each category".into()));
    }
    let mut entries = Vec::with_capacity(n_inflammation + n_shrink);
    for (category, n) in [(Category::Inflammation, n_inflammation), (Category::Shrink, n_shrink)] {
        let mut rng = seed::rng(seed, "split", category.code() as u64);
        let mut splits: Vec<Split> = split_sizes(n)
            .iter()
            .zip([Split::Train, Split::Val, Split::Test])
            .flat_map(|(&k, s)| std::iter::repeat_n(s, k))
            .collect();
        // Fisher-Yates with the category stream
        for i in (1..splits.len()).rev() {
            splits.swap(i, rng.gen_range(0..=i));
        }
        for split in splits {
            let index = entries.len() as u64;
            let mut case_rng = seed::rng(seed, "case", index);
            let spec = PhantomSpec::sample(
                options.grid,
                category,
                options.timepoints,
                options.body_amplitude,
                options.artifact_amplitude,
                &mut case_rng,
            )?;
            entries.push(CaseEntry {
                id: format!("case{index:03}"),
                category,
                split,
                seed: seed::derive(seed, "case-build", index),
                spec,
            });
        }
    }
    Ok(Cohort {
        options: options.clone(),
        entries,
    })
}
