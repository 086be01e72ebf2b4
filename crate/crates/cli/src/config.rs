//! Experiment configuration, read from a TOML file.

use crate::error::{io_err, PipelineError, Result};
use dvfcast_autodiff::AdamConfig;
use dvfcast_core::dvf::Grid;
use dvfcast_core::model::{Architecture, Mode, DEFAULT_DVF_SCALE};
use dvfcast_core::phantom::CohortOptions;
use dvfcast_core::registration::{RegConfig, GRADIENT_STEPS, GRID_SIZES};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random stream in the pipeline.
    pub seed: u64,
    pub cohort: CohortConfig,
    pub registration: RegistrationConfig,
    pub tuning: TuningConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
    pub experiment: ExperimentMatrix,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            cohort: CohortConfig::default(),
            registration: RegistrationConfig::default(),
            tuning: TuningConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
            experiment: ExperimentMatrix::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub inflammation: usize,
    pub shrink: usize,
    pub timepoints: usize,
    /// `[Z, Y, X]` voxels.
    pub extents: [usize; 3],
    pub spacing_mm: f64,
    pub body_amplitude: f64,
    pub artifact_amplitude: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            inflammation: 26,
            shrink: 27,
            timepoints: 7,
            extents: [32, 64, 64],
            spacing_mm: 2.0,
            body_amplitude: 1.0,
            artifact_amplitude: 1.0,
        }
    }
}

impl CohortConfig {
    pub fn options(&self) -> Result<CohortOptions> {
        let grid = Grid::new(self.extents, self.spacing_mm).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(CohortOptions {
            grid,
            timepoints: self.timepoints,
            body_amplitude: self.body_amplitude,
            artifact_amplitude: self.artifact_amplitude,
        })
    }
}

/// Where the training fields come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DvfSource {
    /// Register every weekly scan to the planning scan.
    Registration,
    /// Use the phantom's known fields.
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub dvf_source: DvfSource,
    /// Used when tuning is disabled.
    pub grid_size: usize,
    pub gradient_step: f64,
    pub iterations: Vec<usize>,
    pub factors: Vec<usize>,
    pub mi_bins: usize,
    pub squaring_steps: u32,
    /// Add fields from the two neighbouring step sizes (three sequences per case).
    pub augment: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        let r = RegConfig::default();
        Self {
            dvf_source: DvfSource::Registration,
            grid_size: r.grid_size,
            gradient_step: r.gradient_step,
            iterations: r.iterations,
            factors: r.factors,
            mi_bins: r.mi_bins,
            squaring_steps: r.squaring_steps,
            augment: false,
        }
    }
}

impl RegistrationConfig {
    pub fn reg_config(&self) -> RegConfig {
        RegConfig {
            grid_size: self.grid_size,
            gradient_step: self.gradient_step,
            iterations: self.iterations.clone(),
            factors: self.factors.clone(),
            mi_bins: self.mi_bins,
            squaring_steps: self.squaring_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    pub enabled: bool,
    /// Disjoint training-split subsets, each searched independently.
    pub subsets: usize,
    pub subset_size: usize,
    pub grid_sizes: Vec<usize>,
    pub steps: Vec<f64>,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            subsets: 2,
            subset_size: 5,
            grid_sizes: GRID_SIZES.to_vec(),
            steps: GRADIENT_STEPS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: [usize; 3],
    pub kernel: usize,
    pub residual: bool,
    /// In-plane block-averaging factor applied before slices enter the network.
    pub pool: usize,
    pub dvf_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: [8, 16, 32],
            kernel: 3,
            residual: true,
            pool: 4,
            dvf_scale: DEFAULT_DVF_SCALE,
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, run: RunSpec) -> Architecture {
        Architecture {
            mode: run.mode,
            skip: run.skip,
            hidden: self.hidden,
            kernel: self.kernel,
            residual: self.residual,
        }
    }

    pub fn scale(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Dvf => self.dvf_scale,
            Mode::Image => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Slices per batch; batches never mix patients.
    pub batch_size: usize,
    /// Train on every n-th slice.
    pub slice_stride: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            epochs: 12,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: 1e-8,
            batch_size: 16,
            slice_stride: 1,
        }
    }
}

impl TrainingConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Observed timepoints (planning scan included) for the headline table.
    pub k: usize,
    pub k_sweep: Vec<usize>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            k: 4,
            k_sweep: vec![2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentMatrix {
    pub runs: Vec<RunSpec>,
}

impl Default for ExperimentMatrix {
    fn default() -> Self {
        Self {
            runs: vec![
                RunSpec::new(Mode::Dvf, true),
                RunSpec::new(Mode::Dvf, false),
                RunSpec::new(Mode::Image, true),
                RunSpec::new(Mode::Image, false),
            ],
        }
    }
}

/// One cell of the experiment matrix, written `dvf+skip`, `image-skip`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RunSpec {
    pub mode: Mode,
    pub skip: bool,
}

impl RunSpec {
    pub fn new(mode: Mode, skip: bool) -> Self {
        Self { mode, skip }
    }

    /// Directory-safe name, e.g. `dvf-skip-on`.
    pub fn slug(&self) -> String {
        format!("{}-skip-{}", self.mode, if self.skip { "on" } else { "off" })
    }
}

impl fmt::Display for RunSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}skip", self.mode, if self.skip { '+' } else { '-' })
    }
}

impl FromStr for RunSpec {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || PipelineError::Config(format!("bad run `{s}` (expected e.g. dvf+skip or image-skip)"));
        let (mode, skip) = if let Some(m) = s.strip_suffix("+skip") {
            (m, true)
        } else if let Some(m) = s.strip_suffix("-skip") {
            (m, false)
        } else {
            return Err(bad());
        };
        let mode = mode.parse().map_err(|_| bad())?;
        Ok(Self { mode, skip })
    }
}

impl TryFrom<String> for RunSpec {
    type Error = PipelineError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RunSpec> for String {
    fn from(r: RunSpec) -> String {
        r.to_string()
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let c = &self.cohort;
        c.options()?;
        if c.timepoints < 3 {
            return bad(format!("cohort.timepoints must be at least 3, got {}", c.timepoints));
        }
        if c.inflammation == 0 || c.shrink == 0 {
            return bad("cohort needs at least one case per category".into());
        }
        self.registration
            .reg_config()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.tuning.enabled {
            if self.tuning.subsets == 0 || self.tuning.subset_size == 0 {
                return bad("tuning.subsets and tuning.subset_size must be positive".into());
            }
            if self.tuning.grid_sizes.is_empty() || self.tuning.steps.is_empty() {
                return bad("tuning grid is empty".into());
            }
        }
        let m = &self.model;
        if m.pool == 0 || !c.extents[1].is_multiple_of(m.pool) || !c.extents[2].is_multiple_of(m.pool) {
            return bad(format!(
                "model.pool = {} must divide the in-plane extents {}x{}",
                m.pool, c.extents[1], c.extents[2]
            ));
        }
        Architecture {
            hidden: m.hidden,
            kernel: m.kernel,
            ..Architecture::default()
        }
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(m.dvf_scale > 0.0) {
            return bad("model.dvf_scale must be positive".into());
        }
        let t = &self.training;
        t.adam().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if t.batch_size == 0 || t.slice_stride == 0 {
            return bad("training.batch_size and training.slice_stride must be positive".into());
        }
        for &k in self.evaluation.k_sweep.iter().chain([&self.evaluation.k]) {
            self.check_k(k)?;
        }
        if self.experiment.runs.is_empty() {
            return bad("experiment.runs is empty".into());
        }
        Ok(())
    }

    pub fn check_k(&self, k: usize) -> Result<()> {
        let t = self.cohort.timepoints;
        if k == 0 || k >= t {
            return Err(PipelineError::Config(format!("K = {k} must satisfy 1 <= K < T = {t}")));
        }
        Ok(())
    }

    /// Prefix lengths to predict: the sweep plus the headline `k`.
    pub fn prediction_ks(&self) -> Vec<usize> {
        let mut ks = self.evaluation.k_sweep.clone();
        ks.push(self.evaluation.k);
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}
