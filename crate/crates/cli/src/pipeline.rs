//! The experiment stages. Each reads what earlier stages wrote under the
//! output directory, so they can run one at a time or all in sequence.

use crate::cohort::{self, IndexRow, STRUCTURES};
use crate::config::{DvfSource, ExperimentConfig, RunSpec};
use crate::dataset::{self, crop_frame, pad_frame, pad_to_four, DatasetCase, DatasetIndex};
use crate::error::{io_err, Context, PipelineError, Result};
use crate::layout::Layout;
use crate::manifest::Manifest;
use crate::report;
use dvfcast_autodiff::Tensor;
use dvfcast_core::dvf::{warp_mask, warp_volume, Dvf, Grid, Mask, Volume};
use dvfcast_core::model::{
    assemble_channels, assemble_dvf, pool_slices, predict, train, unpool_slice, Checkpoint, Mode, Seq2SeqNet,
    SequenceBatch, SequenceSample, TrainConfig,
};
use dvfcast_core::phantom::{generate_cohort, Split, GTV};
use dvfcast_core::registration::{augment_dvfs, hyper_search, register, SearchCase};
use dvfcast_core::{io, seed};
use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// Registration settings chosen by the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedParams {
    pub grid_size: usize,
    pub gradient_step: f64,
    /// Argmax found independently on each subset.
    pub subset_best: Vec<(usize, f64)>,
    /// Whether every subset picked the same cell.
    pub stable: bool,
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub layout: Layout,
    pub force: bool,
    /// Matrix cells the train/predict/evaluate stages act on.
    pub runs: Vec<RunSpec>,
    /// Restricts prediction and evaluation to one prefix length.
    pub k: Option<usize>,
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn dir_is_nonempty(path: &Path) -> bool {
    std::fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false)
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, out: impl Into<std::path::PathBuf>) -> Self {
        let runs = cfg.experiment.runs.clone();
        Self {
            cfg,
            layout: Layout::new(out),
            force: false,
            runs,
            k: None,
        }
    }

    fn seed(&self, label: &str) -> u64 {
        seed::derive(self.cfg.seed, label, 0)
    }

    fn grid(&self) -> Result<Grid> {
        Ok(self.cfg.cohort.options()?.grid)
    }

    fn timepoints(&self) -> usize {
        self.cfg.cohort.timepoints
    }

    /// Writes the resolved configuration into the output root.
    pub fn prepare(&self) -> Result<()> {
        mkdir(self.layout.root())?;
        let path = self.layout.config();
        std::fs::write(&path, self.cfg.to_toml()).map_err(io_err(&path))
    }

    fn record(&self, stage: &str, entries: Vec<(&str, String)>) -> Result<()> {
        let path = self.layout.manifest();
        let mut m = Manifest::load_or_new(&path, self.cfg.seed)?;
        m.record(stage, entries.into_iter().map(|(k, v)| (k.to_string(), v)));
        m.save(&path)
    }

    /// Records into the root manifest and the run directory's own manifest.
    fn record_run(&self, run: RunSpec, stage: &str, entries: Vec<(&str, String)>) -> Result<()> {
        let dir = self.layout.run_dir(run);
        mkdir(&dir)?;
        let cfg_copy = dir.join("config.toml");
        std::fs::write(&cfg_copy, self.cfg.to_toml()).map_err(io_err(&cfg_copy))?;
        let path = dir.join("manifest.toml");
        let mut m = Manifest::load_or_new(&path, self.cfg.seed)?;
        m.record(stage, entries.iter().map(|(k, v)| (k.to_string(), v.clone())));
        m.save(&path)?;
        self.record(&format!("{stage}-{}", run.slug()), entries)
    }

    pub fn ks(&self) -> Result<Vec<usize>> {
        match self.k {
            Some(k) => {
                self.cfg.check_k(k)?;
                Ok(vec![k])
            }
            None => Ok(self.cfg.prediction_ks()),
        }
    }

    pub fn generate(&self) -> Result<()> {
        let start = Instant::now();
        self.prepare()?;
        let dir = self.layout.cohort_dir();
        if dir_is_nonempty(&dir) {
            if !self.force {
                return Err(PipelineError::Config(format!(
                    "{} already holds a cohort; pass --force to regenerate it",
                    dir.display()
                )));
            }
            std::fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        mkdir(&dir)?;
        let c = &self.cfg.cohort;
        let cohort = generate_cohort(c.inflammation, c.shrink, &c.options()?, self.seed("cohort"))
            .context(|| "sampling the cohort".into())?;
        let mut rows = Vec::new();
        let mut files = 0;
        for entry in &cohort.entries {
            let case = entry.generate().context(|| format!("generating {}", entry.id))?;
            mkdir(&self.layout.case_dir(&entry.id))?;
            for (t, week) in case.weeks.iter().enumerate() {
                files += cohort::save_week(&self.layout, &entry.id, t, week)?;
            }
            rows.push(IndexRow {
                id: entry.id.clone(),
                category: entry.category.code(),
                split: entry.split.as_str().into(),
                seed: entry.seed,
                scales: entry.spec.scales.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";"),
            });
        }
        cohort::write_index(&self.layout, &rows)?;
        info!("generated {} cases ({files} files) in {:.1?}", rows.len(), start.elapsed());
        self.record(
            "generate",
            vec![
                ("cases", rows.len().to_string()),
                ("files", files.to_string()),
                ("seconds", format!("{:.1}", start.elapsed().as_secs_f64())),
            ],
        )
    }

    pub fn tune(&self) -> Result<TunedParams> {
        let start = Instant::now();
        self.prepare()?;
        let tcfg = &self.cfg.tuning;
        let rows = cohort::read_index(&self.layout)?;
        let mut pool: Vec<&IndexRow> = cohort::rows_in(&rows, Split::Train)?;
        let need = tcfg.subsets * tcfg.subset_size;
        if pool.len() < need {
            return Err(PipelineError::Config(format!(
                "tuning needs {need} training cases, the cohort has {}",
                pool.len()
            )));
        }
        pool.shuffle(&mut seed::rng(self.cfg.seed, "tune", 0));
        let last = self.timepoints() - 1;
        let base = self.cfg.registration.reg_config();
        mkdir(&self.layout.tune_dir())?;
        let mut results = Vec::new();
        for (s, chunk) in pool[..need].chunks(tcfg.subset_size).enumerate() {
            let cases = chunk
                .iter()
                .map(|r| {
                    let fixed = cohort::load_week(&self.layout, &r.id, last)?;
                    let moving = cohort::load_week(&self.layout, &r.id, 0)?;
                    Ok(SearchCase {
                        id: r.id.clone(),
                        fixed: fixed.volume,
                        moving: moving.volume,
                        fixed_masks: fixed.masks,
                        moving_masks: moving.masks,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let result = hyper_search(&cases, &tcfg.grid_sizes, &tcfg.steps, &base, GTV)
                .context(|| format!("hyper-parameter search on subset {}", s + 1))?;
            let flagged = result.rows.iter().filter(|r| r.flagged).count();
            if flagged > 0 {
                warn!("subset {}: {flagged} registrations were flagged", s + 1);
            }
            report::write_search_rows(&self.layout.tune_dir().join(format!("subset{}.csv", s + 1)), &result.rows)?;
            info!("subset {}: best {:?}", s + 1, result.best);
            results.push(result);
        }
        let tuned = report::write_search_table(&self.layout.tune_dir().join("table.csv"), &results)?;
        let path = self.layout.tuned_config();
        std::fs::write(&path, toml::to_string_pretty(&tuned).expect("serialises")).map_err(io_err(&path))?;
        self.record(
            "tune",
            vec![
                ("grid_size", tuned.grid_size.to_string()),
                ("gradient_step", tuned.gradient_step.to_string()),
                ("stable", tuned.stable.to_string()),
                ("seconds", format!("{:.1}", start.elapsed().as_secs_f64())),
            ],
        )?;
        Ok(tuned)
    }

    fn registration_settings(&self) -> Result<(usize, f64)> {
        let r = &self.cfg.registration;
        if self.cfg.tuning.enabled && r.dvf_source == DvfSource::Registration {
            let path = self.layout.tuned_config();
            if !path.exists() {
                return Err(PipelineError::Config(format!(
                    "tuning is enabled but {} is missing (run `tune` first)",
                    path.display()
                )));
            }
            let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            let t: TunedParams = toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
            return Ok((t.grid_size, t.gradient_step));
        }
        Ok((r.grid_size, r.gradient_step))
    }

    /// Per-week fields for one case: one sequence per variant.
    fn case_fields(&self, row: &IndexRow, weeks: &[dvfcast_core::phantom::Week], grid_size: usize, step: f64) -> Result<Vec<Vec<Dvf>>> {
        let grid = *weeks[0].volume.grid();
        match self.cfg.registration.dvf_source {
            DvfSource::Truth => Ok(vec![weeks.iter().map(|w| w.dvf.clone()).collect()]),
            DvfSource::Registration => {
                let cfg = self.cfg.registration.reg_config().with(grid_size, step);
                let augment = self.cfg.registration.augment && row.split()? == Split::Train;
                let n = if augment { 3 } else { 1 };
                let mut variants = vec![vec![Dvf::zeros(grid, "week0")]; n];
                for (t, week) in weeks.iter().enumerate().skip(1) {
                    let ctx = || format!("registering {} week {t}", row.id);
                    let fields: Vec<Dvf> = if augment {
                        let pair = [(&week.volume, &weeks[0].volume)];
                        let [a, b, c] = augment_dvfs(&cfg, &self.cfg.tuning.steps, &pair)
                            .context(ctx)?
                            .pop()
                            .expect("one pair");
                        vec![a, b, c]
                    } else {
                        let r = register(&week.volume, &weeks[0].volume, &cfg).context(ctx)?;
                        if r.flagged {
                            warn!("{} week {t}: registration flagged", row.id);
                        }
                        vec![r.dvf]
                    };
                    for (v, mut f) in fields.into_iter().enumerate() {
                        f.set_reference("week0");
                        let path = self.layout.registered_dvf(&row.id, t, v);
                        mkdir(path.parent().expect("field path has a parent"))?;
                        io::save_dvf(&path, &f).context(|| format!("writing {}", path.display()))?;
                        variants[v].push(f);
                    }
                }
                Ok(variants)
            }
        }
    }

    fn slice_sequences(&self, id: &str, mode: Mode, frames_by_week: Vec<Vec<Tensor>>, pad: [usize; 2]) -> Result<Vec<SequenceSample>> {
        let nz = frames_by_week[0].len();
        (0..nz)
            .map(|z| {
                let frames = frames_by_week.iter().map(|w| pad_frame(&w[z], pad)).collect();
                SequenceSample::new(id, z, mode, frames).context(|| format!("{id} slice {z}"))
            })
            .collect()
    }

    pub fn build(&self, mode: Mode) -> Result<()> {
        let start = Instant::now();
        self.prepare()?;
        let rows = cohort::read_index(&self.layout)?;
        let grid = self.grid()?;
        let t_count = self.timepoints();
        let f = self.cfg.model.pool;
        let [_, ny, nx] = grid.extents;
        let pad = [pad_to_four(ny / f), pad_to_four(nx / f)];
        if pad != [0, 0] {
            info!("padding pooled slices by {pad:?} to reach multiples of 4");
        }
        let (grid_size, step) = match (mode, self.cfg.registration.dvf_source) {
            (Mode::Dvf, DvfSource::Registration) => self.registration_settings()?,
            _ => (self.cfg.registration.grid_size, self.cfg.registration.gradient_step),
        };
        let dir = self.layout.dataset_dir(mode);
        mkdir(&dir)?;
        let mut cases = Vec::new();
        for row in &rows {
            let weeks = cohort::load_weeks(&self.layout, &row.id, t_count)?;
            let sequences: Vec<Vec<Vec<Tensor>>> = match mode {
                Mode::Dvf => self
                    .case_fields(row, &weeks, grid_size, step)?
                    .iter()
                    .map(|fields| {
                        fields
                            .iter()
                            .map(|d| {
                                let planes: Vec<&[f64]> = (0..3).map(|c| d.component(c)).collect();
                                pool_slices(&planes, grid.extents, f, &[1.0; 3]).context(|| row.id.clone())
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<_>>()?,
                Mode::Image => {
                    let frames = weeks
                        .iter()
                        .map(|w| {
                            let mask: Vec<f64> = w.masks[0].data().iter().map(|&b| f64::from(b)).collect();
                            pool_slices(&[w.volume.data(), &mask], grid.extents, f, &[1.0, 1.0]).context(|| row.id.clone())
                        })
                        .collect::<Result<Vec<_>>>()?;
                    vec![frames]
                }
            };
            for (v, frames) in sequences.into_iter().enumerate() {
                let samples = self.slice_sequences(&row.id, mode, frames, pad)?;
                dataset::write_sequences(&self.layout.sequence_file(mode, &row.id, v), &samples)?;
            }
            cases.push(DatasetCase {
                id: row.id.clone(),
                split: row.split.clone(),
                variants: if mode == Mode::Dvf && self.cfg.registration.augment && row.split()? == Split::Train && self.cfg.registration.dvf_source == DvfSource::Registration {
                    3
                } else {
                    1
                },
            });
        }
        let index = DatasetIndex {
            mode: mode.to_string(),
            source: self.cfg.registration.dvf_source,
            grid_size,
            gradient_step: step,
            pool: f,
            pad,
            scale: self.cfg.model.scale(mode),
            timepoints: t_count,
            extents: grid.extents,
            cases,
        };
        index.save(&self.layout.dataset_index(mode))?;
        info!("built {mode} dataset for {} cases in {:.1?}", index.cases.len(), start.elapsed());
        self.record(
            &format!("build-{mode}"),
            vec![
                ("cases", index.cases.len().to_string()),
                ("sequences", index.cases.iter().map(|c| c.variants).sum::<usize>().to_string()),
                ("source", format!("{:?}", index.source).to_lowercase()),
                ("seconds", format!("{:.1}", start.elapsed().as_secs_f64())),
            ],
        )
    }

    fn dataset(&self, mode: Mode) -> Result<DatasetIndex> {
        let index = DatasetIndex::load(&self.layout.dataset_index(mode))?;
        if index.mode()? != mode || index.timepoints != self.timepoints() || index.pool != self.cfg.model.pool {
            return Err(PipelineError::Config(format!(
                "dataset at {} does not match the configuration; rebuild it",
                self.layout.dataset_dir(mode).display()
            )));
        }
        Ok(index)
    }

    pub fn train(&self, run: RunSpec) -> Result<Vec<f64>> {
        let start = Instant::now();
        self.prepare()?;
        let index = self.dataset(run.mode)?;
        let tc = &self.cfg.training;
        let mut batches = Vec::new();
        for case in index.cases.iter().filter(|c| c.split == Split::Train.as_str()) {
            for v in 0..case.variants {
                let samples = dataset::read_sequences(&self.layout.sequence_file(run.mode, &case.id, v))?;
                let kept: Vec<&SequenceSample> = samples.iter().filter(|s| s.slice % tc.slice_stride == 0).collect();
                for chunk in kept.chunks(tc.batch_size) {
                    batches.push(SequenceBatch::stack(chunk).context(|| format!("batching {}", case.id))?);
                }
            }
        }
        if batches.is_empty() {
            return Err(PipelineError::Config("the training split is empty".into()));
        }
        let arch = self.cfg.model.architecture(run);
        let net = Seq2SeqNet::new(arch, index.scale, self.seed("init")).context(|| "building the network".into())?;
        info!(
            "training {run}: {} parameters, {} batches, {} epochs",
            net.parameter_count(),
            batches.len(),
            tc.epochs
        );
        let cfg = TrainConfig {
            epochs: tc.epochs,
            adam: tc.adam(),
            seed: self.seed("train"),
        };
        let (checkpoint, report) = train(net, &batches, &cfg).map_err(|e| match e {
            dvfcast_core::CoreError::Diverged { step, loss } => {
                PipelineError::Numerical(format!("training {run} diverged at step {step} (loss {loss})"))
            }
            other => PipelineError::Core {
                context: format!("training {run}"),
                source: other,
            },
        })?;
        mkdir(&self.layout.run_dir(run))?;
        checkpoint
            .save(&self.layout.checkpoint(run))
            .context(|| "writing the checkpoint".into())?;
        report::write_loss_curve(&self.layout.loss_curve(run), &report.epoch_losses)?;
        let last = report.epoch_losses.last().copied().unwrap_or(f64::NAN);
        info!("trained {run} in {:.1?}: final loss {last:.3e}", start.elapsed());
        self.record_run(
            run,
            "train",
            vec![
                ("steps", report.steps.to_string()),
                ("final_loss", last.to_string()),
                ("seconds", format!("{:.1}", start.elapsed().as_secs_f64())),
            ],
        )?;
        Ok(report.epoch_losses)
    }

    fn test_rows(&self) -> Result<Vec<IndexRow>> {
        let rows = cohort::read_index(&self.layout)?;
        Ok(cohort::rows_in(&rows, Split::Test)?.into_iter().cloned().collect())
    }

    pub fn predict(&self, run: RunSpec) -> Result<()> {
        let start = Instant::now();
        self.prepare()?;
        let index = self.dataset(run.mode)?;
        let path = self.layout.checkpoint(run);
        if !path.exists() {
            return Err(PipelineError::Config(format!("no checkpoint at {} (run `train` first)", path.display())));
        }
        let checkpoint = Checkpoint::load(&path).context(|| format!("loading {}", path.display()))?;
        let net = &checkpoint.net;
        if net.arch().mode != run.mode || net.arch().skip != run.skip {
            return Err(PipelineError::Config(format!("{} does not hold a {run} model", path.display())));
        }
        let grid = self.grid()?;
        let t_count = self.timepoints();
        let f = index.pool;
        let gain = vec![1.0; run.mode.channels()];
        let ks = self.ks()?;
        let mut written = 0;
        for row in self.test_rows()? {
            let samples = dataset::read_sequences(&self.layout.sequence_file(run.mode, &row.id, 0))?;
            let refs: Vec<&SequenceSample> = samples.iter().collect();
            let batch = SequenceBatch::stack(&refs).context(|| row.id.clone())?;
            let reference = cohort::load_week(&self.layout, &row.id, 0)?;
            for &k in &ks {
                let out = predict(net, &batch.frames[..k], t_count).context(|| format!("predicting {} from K = {k}", row.id))?;
                let case_dir = self.layout.prediction_dir(run, k).join(&row.id);
                mkdir(&case_dir)?;
                for (j, frames) in out.iter().enumerate() {
                    let t = k + j;
                    let per_slice = split_batch(frames, index.pad, f, &gain)?;
                    let slices: Vec<(usize, &Tensor)> = samples.iter().map(|s| s.slice).zip(per_slice.iter()).collect();
                    written += self.write_prediction(run, k, &row.id, t, grid, &slices, &reference)?;
                }
            }
        }
        info!("predicted {run} for K = {ks:?} in {:.1?}", start.elapsed());
        self.record_run(
            run,
            "predict",
            vec![
                ("k", format!("{ks:?}")),
                ("files", written.to_string()),
                ("seconds", format!("{:.1}", start.elapsed().as_secs_f64())),
            ],
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn write_prediction(
        &self,
        run: RunSpec,
        k: usize,
        id: &str,
        t: usize,
        grid: Grid,
        slices: &[(usize, &Tensor)],
        reference: &dvfcast_core::phantom::Week,
    ) -> Result<usize> {
        let ctx = || format!("{run} {id} week {t}");
        let out = |suffix: &str| self.layout.predicted(run, k, id, t, suffix);
        match run.mode {
            Mode::Dvf => {
                let d = assemble_dvf(grid, slices, "week0").context(ctx)?;
                io::save_dvf(&out(".dvf"), &d).context(ctx)?;
                let warped = warp_volume(&reference.volume, &d).context(ctx)?;
                io::save_volume(&out("_warped.vol"), &warped).context(ctx)?;
                for m in &reference.masks {
                    io::save_mask(&out(&format!("_{}.msk", m.label())), &warp_mask(m, &d).context(ctx)?).context(ctx)?;
                }
                Ok(2 + reference.masks.len())
            }
            Mode::Image => {
                let planes = assemble_channels(grid.extents, slices).context(ctx)?;
                let volume = Volume::new(grid, planes[0].clone()).context(ctx)?;
                let mask = Mask::new(grid, planes[1].iter().map(|&v| u8::from(v >= 0.5)).collect(), GTV).context(ctx)?;
                io::save_volume(&out(".vol"), &volume).context(ctx)?;
                io::save_mask(&out(&format!("_{GTV}.msk")), &mask).context(ctx)?;
                Ok(2)
            }
        }
    }

    pub fn evaluate(&self, run: RunSpec) -> Result<()> {
        let start = Instant::now();
        self.prepare()?;
        let t_count = self.timepoints();
        let rows = self.test_rows()?;
        let labels: Vec<&str> = match run.mode {
            Mode::Dvf => STRUCTURES.to_vec(),
            Mode::Image => vec![GTV],
        };
        for k in self.ks()? {
            let mut missing = Vec::new();
            let mut cases = Vec::new();
            for row in &rows {
                let weeks = cohort::load_weeks(&self.layout, &row.id, t_count)?;
                let mut predicted = Vec::new();
                for t in k..t_count {
                    let mut masks = Vec::new();
                    for l in &labels {
                        let p = self.layout.predicted(run, k, &row.id, t, &format!("_{l}.msk"));
                        if p.exists() {
                            masks.push(io::load_mask(&p).context(|| p.display().to_string())?);
                        } else {
                            missing.push(p.display().to_string());
                        }
                    }
                    let dvf = match run.mode {
                        Mode::Dvf => {
                            let p = self.layout.predicted(run, k, &row.id, t, ".dvf");
                            if p.exists() {
                                Some(io::load_dvf(&p).context(|| p.display().to_string())?)
                            } else {
                                missing.push(p.display().to_string());
                                None
                            }
                        }
                        Mode::Image => None,
                    };
                    predicted.push(report::PredictedWeek { week: t, masks, dvf });
                }
                cases.push(report::CaseEvaluation {
                    id: row.id.clone(),
                    category: row.category()?,
                    weeks,
                    predicted,
                });
            }
            if !missing.is_empty() {
                return Err(PipelineError::Config(format!(
                    "{run} K = {k}: {} predictions are missing, e.g. {} (run `predict` first)",
                    missing.len(),
                    missing[0]
                )));
            }
            let dir = self.layout.evaluation_dir(run, k);
            mkdir(&dir)?;
            report::evaluate_run(&dir, run, k, &labels, &cases)?;
        }
        info!("evaluated {run} in {:.1?}", start.elapsed());
        self.record_run(
            run,
            "evaluate",
            vec![("seconds", format!("{:.1}", start.elapsed().as_secs_f64()))],
        )?;
        self.reports()
    }

    /// Cross-run tables from every evaluated matrix cell.
    pub fn reports(&self) -> Result<()> {
        let dir = self.layout.reports_dir();
        mkdir(&dir)?;
        report::write_cross_run(&self.layout, &self.cfg.experiment.runs, &self.cfg.prediction_ks(), self.cfg.evaluation.k, self.timepoints())
    }

    pub fn all(&self) -> Result<()> {
        self.generate()?;
        if self.cfg.tuning.enabled {
            self.tune()?;
        }
        let mut modes: Vec<Mode> = self.runs.iter().map(|r| r.mode).collect();
        modes.dedup();
        modes.sort_by_key(|m| m.channels() == 2);
        modes.dedup();
        for mode in modes {
            self.build(mode)?;
        }
        for &run in &self.runs {
            self.train(run)?;
            self.predict(run)?;
            self.evaluate(run)?;
        }
        Ok(())
    }
}

/// Splits a `[Z, C, h, w]` prediction into full-resolution `[C, Y, X]` slices.
fn split_batch(frames: &Tensor, pad: [usize; 2], factor: usize, gain: &[f64]) -> Result<Vec<Tensor>> {
    let s = frames.shape();
    let per = s[1] * s[2] * s[3];
    frames
        .data()
        .chunks_exact(per)
        .map(|d| {
            let t = Tensor::new(vec![s[1], s[2], s[3]], d.to_vec()).expect("slice shape");
            unpool_slice(&crop_frame(&t, pad), factor, gain).context(|| "unpooling a predicted slice".into())
        })
        .collect()
}
