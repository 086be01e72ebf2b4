//! CSV outputs: search tables, loss curves, per-run scores and the
//! cross-run summary tables.

use crate::config::RunSpec;
use crate::error::{io_err, Context, PipelineError, Result};
use crate::layout::Layout;
use crate::pipeline::TunedParams;
use dvfcast_core::dvf::{deformed_volume, Dvf, Mask};
use dvfcast_core::metrics::{jacobian_correlation, score_prediction, Prediction};
use dvfcast_core::phantom::{Category, Week, GTV};
use dvfcast_core::registration::{HyperSearchResult, SearchRow};
use log::warn;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub fn category_name(c: Category) -> &'static str {
    match c {
        Category::Inflammation => "inflammation",
        Category::Shrink => "shrink",
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(csv::Writer::from_path(path)?)
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(io_err(path))
}

pub fn write_search_rows(path: &Path, rows: &[SearchRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["grid_size", "gradient_step", "patient_id", "gtv_dice", "oar_dice", "combined", "flagged"])?;
    for r in rows {
        w.write_record([
            r.grid_size.to_string(),
            r.gradient_step.to_string(),
            r.patient_id.clone(),
            r.gtv_dice.to_string(),
            r.oar_dice.to_string(),
            r.combined.to_string(),
            r.flagged.to_string(),
        ])?;
    }
    finish(w, path)
}

/// Writes the pooled search table (one row per cell, one column per subset
/// plus the mean) and returns the pooled argmax.
pub fn write_search_table(path: &Path, results: &[HyperSearchResult]) -> Result<TunedParams> {
    let first = results
        .first()
        .ok_or_else(|| PipelineError::Config("no search subsets".into()))?;
    let mut w = writer(path)?;
    let mut header = vec!["grid_size".to_string(), "gradient_step".to_string()];
    header.extend((1..=results.len()).map(|s| format!("subset{s}")));
    header.extend(["mean".to_string(), "flagged".to_string()]);
    w.write_record(&header)?;
    let mut best: Option<((usize, f64), f64)> = None;
    for (i, &gs) in first.grid_sizes.iter().enumerate() {
        for (j, &step) in first.steps.iter().enumerate() {
            let cells: Vec<f64> = results.iter().map(|r| r.table[i][j]).collect();
            let mean = cells.iter().sum::<f64>() / cells.len() as f64;
            let flagged = results.iter().any(|r| r.cell_flagged(gs, step));
            let mut rec = vec![gs.to_string(), step.to_string()];
            rec.extend(cells.iter().map(f64::to_string));
            rec.extend([mean.to_string(), flagged.to_string()]);
            w.write_record(&rec)?;
            if best.is_none_or(|(_, b)| mean > b) {
                best = Some(((gs, step), mean));
            }
        }
    }
    finish(w, path)?;
    let ((grid_size, gradient_step), _) = best.expect("non-empty grid");
    let subset_best: Vec<(usize, f64)> = results.iter().map(|r| r.best).collect();
    let stable = subset_best.iter().all(|&b| b == subset_best[0]);
    Ok(TunedParams {
        grid_size,
        gradient_step,
        subset_best,
        stable,
    })
}

pub fn write_loss_curve(path: &Path, losses: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "loss"])?;
    for (e, l) in losses.iter().enumerate() {
        w.write_record([(e + 1).to_string(), l.to_string()])?;
    }
    finish(w, path)
}

#[derive(Debug, Clone)]
pub struct PredictedWeek {
    pub week: usize,
    pub masks: Vec<Mask>,
    pub dvf: Option<Dvf>,
}

#[derive(Debug, Clone)]
pub struct CaseEvaluation {
    pub id: String,
    pub category: Category,
    /// Ground truth, week 0 first.
    pub weeks: Vec<Week>,
    pub predicted: Vec<PredictedWeek>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub run: String,
    pub k: usize,
    pub patient_id: String,
    pub category: String,
    pub structure: String,
    pub week: usize,
    pub dice: f64,
    pub avhd_mm: Option<f64>,
    pub rvd_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianRow {
    pub patient_id: String,
    pub week: usize,
    pub predicted_mm3: f64,
    pub truth_mm3: f64,
}

/// R² of predicted against true deformed volumes, or `None` when the pairs
/// cannot support a fit (fewer than three, or constant truth).
pub fn r_squared(pairs: &[(f64, f64)]) -> Option<f64> {
    match jacobian_correlation(pairs) {
        Ok(v) => Some(v),
        Err(e) => {
            warn!("Jacobian R² unavailable: {e}");
            None
        }
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn fmt_opt(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

/// Scores one run at one prefix length and writes `scores.csv`,
/// `jacobian.csv` and the per-category `summary.csv`.
pub fn evaluate_run(dir: &Path, run: RunSpec, k: usize, labels: &[&str], cases: &[CaseEvaluation]) -> Result<()> {
    let mut scores = Vec::new();
    let mut jac = Vec::new();
    for case in cases {
        let reference: Vec<Mask> = case.weeks[0]
            .masks
            .iter()
            .filter(|m| labels.contains(&m.label()))
            .cloned()
            .collect();
        let truth: BTreeMap<usize, Vec<Mask>> = case
            .predicted
            .iter()
            .map(|p| (p.week, case.weeks[p.week].masks.clone()))
            .collect();
        let preds: Vec<(usize, Prediction<'_>)> = case
            .predicted
            .iter()
            .map(|p| (p.week, Prediction::Masks(&p.masks)))
            .collect();
        let report = score_prediction(&preds, &truth, &reference).context(|| format!("scoring {}", case.id))?;
        if let Some((label, t)) = report.missing.first() {
            return Err(PipelineError::Config(format!("{}: no `{label}` prediction for week {t}", case.id)));
        }
        for s in report.scores {
            scores.push(ScoreRow {
                run: run.to_string(),
                k,
                patient_id: case.id.clone(),
                category: category_name(case.category).into(),
                structure: s.label,
                week: s.timepoint,
                dice: s.dice,
                avhd_mm: s.avhd_mm,
                rvd_percent: s.rvd_percent,
            });
        }
        let gtv = case.weeks[0]
            .masks
            .iter()
            .find(|m| m.label() == GTV)
            .ok_or_else(|| PipelineError::Config(format!("{} has no GTV", case.id)))?;
        for p in &case.predicted {
            if let Some(d) = &p.dvf {
                let ctx = || format!("Jacobian of {} week {}", case.id, p.week);
                jac.push(JacobianRow {
                    patient_id: case.id.clone(),
                    week: p.week,
                    predicted_mm3: deformed_volume(d, gtv).context(ctx)?,
                    truth_mm3: deformed_volume(&case.weeks[p.week].dvf, gtv).context(ctx)?,
                });
            }
        }
    }
    let path = dir.join("scores.csv");
    let mut w = writer(&path)?;
    for s in &scores {
        w.serialize(s)?;
    }
    finish(w, &path)?;
    let r2 = if jac.is_empty() {
        None
    } else {
        let path = dir.join("jacobian.csv");
        let mut w = writer(&path)?;
        for j in &jac {
            w.serialize(j)?;
        }
        finish(w, &path)?;
        let pairs: Vec<(f64, f64)> = jac.iter().map(|j| (j.predicted_mm3, j.truth_mm3)).collect();
        r_squared(&pairs)
    };
    write_summary(&dir.join("summary.csv"), &scores, r2)
}

/// Table-1 layout: one row per category, structure and week (plus `all`),
/// then a final `r2` row.
fn write_summary(path: &Path, scores: &[ScoreRow], r2: Option<f64>) -> Result<()> {
    let mut groups: BTreeMap<(String, String, String), Vec<&ScoreRow>> = BTreeMap::new();
    for s in scores {
        for cat in ["all", s.category.as_str()] {
            for week in ["all".to_string(), format!("{}", s.week)] {
                groups
                    .entry((cat.to_string(), s.structure.clone(), week))
                    .or_default()
                    .push(s);
            }
        }
    }
    let mut w = writer(path)?;
    w.write_record([
        "category", "structure", "week", "n", "dice_mean", "dice_std", "avhd_mean_mm", "avhd_std_mm", "rvd_mean_percent",
        "rvd_std_percent",
    ])?;
    for ((cat, structure, week), rows) in &groups {
        let dice: Vec<f64> = rows.iter().map(|r| r.dice).collect();
        let avhd: Vec<f64> = rows.iter().filter_map(|r| r.avhd_mm).collect();
        let rvd: Vec<f64> = rows.iter().map(|r| r.rvd_percent).collect();
        let (dm, ds) = mean_std(&dice);
        let (am, asd) = mean_std(&avhd);
        let (rm, rs) = mean_std(&rvd);
        w.write_record([
            cat.clone(),
            structure.clone(),
            week.clone(),
            rows.len().to_string(),
            fmt_opt(dm),
            fmt_opt(ds),
            fmt_opt(am),
            fmt_opt(asd),
            fmt_opt(rm),
            fmt_opt(rs),
        ])?;
    }
    let r2 = r2.map(|v| v.to_string()).unwrap_or_default();
    w.write_record(["r2", "jacobian", "all", "", r2.as_str(), "", "", "", "", ""])?;
    finish(w, path)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<ScoreRow>, _>>()?)
}

pub fn read_jacobian(path: &Path) -> Result<Vec<JacobianRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<JacobianRow>, _>>()?)
}

/// Headline numbers for one evaluated run and prefix length.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run: RunSpec,
    pub k: usize,
    /// Mean GTV Dice at the last week.
    pub final_gtv_dice: f64,
    /// Mean GTV Dice over every predicted week.
    pub gtv_dice: f64,
    pub r2: Option<f64>,
}

pub fn summarise(layout: &Layout, run: RunSpec, k: usize, last_week: usize) -> Result<Option<RunSummary>> {
    let dir = layout.evaluation_dir(run, k);
    let path = dir.join("scores.csv");
    if !path.exists() {
        return Ok(None);
    }
    let scores = read_scores(&path)?;
    let gtv: Vec<&ScoreRow> = scores.iter().filter(|s| s.structure == GTV).collect();
    let final_dice: Vec<f64> = gtv.iter().filter(|s| s.week == last_week).map(|s| s.dice).collect();
    let all_dice: Vec<f64> = gtv.iter().map(|s| s.dice).collect();
    let jpath = dir.join("jacobian.csv");
    let r2 = if jpath.exists() {
        let pairs: Vec<(f64, f64)> = read_jacobian(&jpath)?
            .iter()
            .map(|j| (j.predicted_mm3, j.truth_mm3))
            .collect();
        r_squared(&pairs)
    } else {
        None
    };
    Ok(Some(RunSummary {
        run,
        k,
        final_gtv_dice: mean_std(&final_dice).0,
        gtv_dice: mean_std(&all_dice).0,
        r2,
    }))
}

/// Writes `table1.csv`, `ablation.csv`, `ksweep.csv` and `jacobian_r2.csv`
/// under `reports/` from whatever runs have been evaluated.
pub fn write_cross_run(layout: &Layout, runs: &[RunSpec], ks: &[usize], headline_k: usize, timepoints: usize) -> Result<()> {
    let dir = layout.reports_dir();
    let last = timepoints - 1;

    let path = dir.join("table1.csv");
    let mut w = writer(&path)?;
    w.write_record(["run", "k", "category", "structure", "week", "n", "dice_mean", "dice_std", "avhd_mean_mm", "avhd_std_mm", "rvd_mean_percent", "rvd_std_percent"])?;
    for &run in runs {
        let summary = layout.evaluation_dir(run, headline_k).join("summary.csv");
        if !summary.exists() {
            continue;
        }
        let mut r = csv::Reader::from_path(&summary)?;
        for rec in r.records() {
            let rec = rec?;
            let mut out = vec![run.to_string(), headline_k.to_string()];
            out.extend(rec.iter().map(str::to_string));
            w.write_record(&out)?;
        }
    }
    finish(w, &path)?;

    let path = dir.join("ablation.csv");
    let mut w = writer(&path)?;
    w.write_record(["run", "mode", "skip", "k", "final_gtv_dice", "gtv_dice", "jacobian_r2"])?;
    for &run in runs {
        if let Some(s) = summarise(layout, run, headline_k, last)? {
            w.write_record([
                run.to_string(),
                run.mode.to_string(),
                if run.skip { "on" } else { "off" }.to_string(),
                headline_k.to_string(),
                s.final_gtv_dice.to_string(),
                s.gtv_dice.to_string(),
                s.r2.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    finish(w, &path)?;

    let ksweep = dir.join("ksweep.csv");
    let r2 = dir.join("jacobian_r2.csv");
    let mut wk = writer(&ksweep)?;
    let mut wr = writer(&r2)?;
    wk.write_record(["run", "k", "predicted_weeks", "final_gtv_dice", "gtv_dice"])?;
    wr.write_record(["run", "k", "r2"])?;
    for &run in runs {
        for &k in ks {
            if let Some(s) = summarise(layout, run, k, last)? {
                wk.write_record([
                    run.to_string(),
                    k.to_string(),
                    (timepoints - k).to_string(),
                    s.final_gtv_dice.to_string(),
                    s.gtv_dice.to_string(),
                ])?;
                if let Some(v) = s.r2 {
                    wr.write_record([run.to_string(), k.to_string(), v.to_string()])?;
                }
            }
        }
    }
    finish(wk, &ksweep)?;
    finish(wr, &r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_small_cases() {
        assert!(mean_std(&[]).0.is_nan());
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
