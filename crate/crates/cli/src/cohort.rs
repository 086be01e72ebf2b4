//! The phantom cohort on disk.

use crate::error::{io_err, Context, PipelineError, Result};
use crate::layout::Layout;
use dvfcast_core::io::{load_dvf, load_mask, load_volume, save_dvf, save_mask, save_volume};
use dvfcast_core::phantom::{Category, Split, Week, GTV, OAR};
use serde::{Deserialize, Serialize};

pub const STRUCTURES: [&str; 2] = [GTV, OAR];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub id: String,
    pub category: u8,
    pub split: String,
    pub seed: u64,
    /// Designed GTV volume factors, `;`-separated.
    pub scales: String,
}

impl IndexRow {
    pub fn category(&self) -> Result<Category> {
        Category::from_code(self.category).context(|| format!("case {}", self.id))
    }

    pub fn split(&self) -> Result<Split> {
        match self.split.as_str() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(PipelineError::Config(format!("case {}: unknown split `{other}`", self.id))),
        }
    }
}

pub fn write_index(layout: &Layout, rows: &[IndexRow]) -> Result<()> {
    let path = layout.cohort_index();
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(&path))
}

pub fn read_index(layout: &Layout) -> Result<Vec<IndexRow>> {
    let path = layout.cohort_index();
    if !path.exists() {
        return Err(PipelineError::Config(format!(
            "no cohort at {} (run `generate` first)",
            path.display()
        )));
    }
    let mut r = csv::Reader::from_path(&path)?;
    Ok(r.deserialize().collect::<Result<Vec<IndexRow>, _>>()?)
}

pub fn rows_in(rows: &[IndexRow], split: Split) -> Result<Vec<&IndexRow>> {
    let mut out = Vec::new();
    for r in rows {
        if r.split()? == split {
            out.push(r);
        }
    }
    Ok(out)
}

pub fn save_week(layout: &Layout, id: &str, t: usize, week: &Week) -> Result<usize> {
    let ctx = || format!("writing {id} week {t}");
    save_volume(&layout.week_volume(id, t), &week.volume).context(ctx)?;
    save_dvf(&layout.week_dvf(id, t), &week.dvf).context(ctx)?;
    for m in &week.masks {
        save_mask(&layout.week_mask(id, t, m.label()), m).context(ctx)?;
    }
    Ok(2 + week.masks.len())
}

pub fn load_week(layout: &Layout, id: &str, t: usize) -> Result<Week> {
    let ctx = || format!("reading {id} week {t}");
    let volume = load_volume(&layout.week_volume(id, t)).context(ctx)?;
    let dvf = load_dvf(&layout.week_dvf(id, t)).context(ctx)?;
    let masks = STRUCTURES
        .iter()
        .map(|l| load_mask(&layout.week_mask(id, t, l)).context(ctx))
        .collect::<Result<Vec<_>>>()?;
    Ok(Week { volume, dvf, masks })
}

pub fn load_weeks(layout: &Layout, id: &str, timepoints: usize) -> Result<Vec<Week>> {
    (0..timepoints).map(|t| load_week(layout, id, t)).collect()
}
