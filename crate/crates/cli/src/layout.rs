use crate::config::RunSpec;
use dvfcast_core::model::Mode;
use std::path::{Path, PathBuf};

/// Paths inside one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.toml")
    }

    pub fn cohort_dir(&self) -> PathBuf {
        self.root.join("cohort")
    }

    pub fn cohort_index(&self) -> PathBuf {
        self.cohort_dir().join("cohort.csv")
    }

    pub fn case_dir(&self, id: &str) -> PathBuf {
        self.cohort_dir().join(id)
    }

    pub fn week_volume(&self, id: &str, t: usize) -> PathBuf {
        self.case_dir(id).join(format!("week{t}.vol"))
    }

    pub fn week_dvf(&self, id: &str, t: usize) -> PathBuf {
        self.case_dir(id).join(format!("week{t}.dvf"))
    }

    pub fn week_mask(&self, id: &str, t: usize, label: &str) -> PathBuf {
        self.case_dir(id).join(format!("week{t}_{label}.msk"))
    }

    pub fn tune_dir(&self) -> PathBuf {
        self.root.join("tune")
    }

    pub fn tuned_config(&self) -> PathBuf {
        self.tune_dir().join("best.toml")
    }

    pub fn dataset_dir(&self, mode: Mode) -> PathBuf {
        self.root.join("dataset").join(mode.as_str())
    }

    pub fn dataset_index(&self, mode: Mode) -> PathBuf {
        self.dataset_dir(mode).join("dataset.toml")
    }

    /// Variant 0 is the primary sequence; 1 and 2 are augmentations.
    pub fn sequence_file(&self, mode: Mode, id: &str, variant: usize) -> PathBuf {
        let name = if variant == 0 {
            format!("{id}.seq")
        } else {
            format!("{id}_aug{variant}.seq")
        };
        self.dataset_dir(mode).join(name)
    }

    pub fn registered_dvf(&self, id: &str, t: usize, variant: usize) -> PathBuf {
        let dir = self.root.join("dataset").join("fields").join(id);
        if variant == 0 {
            dir.join(format!("week{t}.dvf"))
        } else {
            dir.join(format!("week{t}_aug{variant}.dvf"))
        }
    }

    pub fn run_dir(&self, run: RunSpec) -> PathBuf {
        self.root.join("runs").join(run.slug())
    }

    pub fn checkpoint(&self, run: RunSpec) -> PathBuf {
        self.run_dir(run).join("model.clstm")
    }

    pub fn loss_curve(&self, run: RunSpec) -> PathBuf {
        self.run_dir(run).join("loss.csv")
    }

    pub fn prediction_dir(&self, run: RunSpec, k: usize) -> PathBuf {
        self.run_dir(run).join("predict").join(format!("k{k}"))
    }

    pub fn predicted(&self, run: RunSpec, k: usize, id: &str, t: usize, suffix: &str) -> PathBuf {
        self.prediction_dir(run, k).join(id).join(format!("week{t}{suffix}"))
    }

    pub fn evaluation_dir(&self, run: RunSpec, k: usize) -> PathBuf {
        self.run_dir(run).join("evaluate").join(format!("k{k}"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }
}
