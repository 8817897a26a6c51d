use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::output::{histogram, RunDir};
use super::report::{fit_line, pct, table, LineFit};
use super::{ExperimentConfig, HarnessError};
use crate::advpose::{
    discriminator_accuracy, evaluate, mean, refine_pose, regress_pose, relative_improvement, AdvPoseError,
    DiscAccuracy, Metrics, RefineConfig, StopReason, TrainedModel,
};
use crate::diff::Checkpoint;
use crate::quat::RotationMode;
use crate::scenes::{build_dataset, extract_features, Dataset};

/// Extra facts recorded in a manifest, such as input paths and checksums.
pub type Inputs = BTreeMap<String, String>;

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(
    out: &mut RunDir,
    command: &str,
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    summary: serde_json::Value,
) -> Result<(), HarnessError> {
    out.write_bytes("config.toml", cfg.to_toml().as_bytes())?;
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "mode": cfg.mode().as_str(),
        "config": cfg,
        "inputs": inputs,
        "outputs": out.files(),
        "summary": summary,
    });
    out.write_json("manifest.json", &manifest)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Dataset::from_bytes(&bytes).map_err(|e| match e {
        crate::scenes::SceneError::Container(c) => HarnessError::file(path, c),
        other => other.into(),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let ckpt = Checkpoint::from_bytes(&bytes).map_err(|e| HarnessError::file(path, e))?;
    Ok(TrainedModel::from_checkpoint(&ckpt)?)
}

fn check_compatible(model: &TrainedModel, dataset: &Dataset) -> Result<(), HarnessError> {
    if model.regressor.input_dim() != dataset.observation_dim() {
        return Err(AdvPoseError::ShapeMismatch {
            expected: model.regressor.input_dim(),
            got: dataset.observation_dim(),
        }
        .into());
    }
    if model.discriminator.feature_dim() != dataset.feature_dim() {
        return Err(AdvPoseError::ShapeMismatch {
            expected: model.discriminator.feature_dim(),
            got: dataset.feature_dim(),
        }
        .into());
    }
    Ok(())
}

/// Builds the dataset described by `cfg.scene` and writes `dataset.bin`.
pub fn generate(cfg: &ExperimentConfig, out: &mut RunDir) -> Result<Dataset, HarnessError> {
    let dataset = build_dataset(&cfg.scene, cfg.mode())?;
    let bytes = dataset.to_bytes();
    out.write_bytes("dataset.bin", &bytes)?;
    let summary = json!({
        "dataset_checksum": dataset.checksum_hex(),
        "n_train": dataset.train.len(),
        "n_test": dataset.test.len(),
        "observation_dim": dataset.observation_dim(),
        "feature_dim": dataset.feature_dim(),
        "train_sequences": dataset.train_sequences,
        "test_sequences": dataset.test_sequences,
    });
    write_manifest(out, "generate", cfg, &Inputs::new(), summary)?;
    Ok(dataset)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Force `lambda = 0`.
    pub base_model: bool,
    /// Continue this model instead of starting fresh.
    pub resume: Option<TrainedModel>,
    /// Stop once this many epochs are done, as if interrupted.
    pub stop_after: Option<usize>,
    /// Print one line per epoch.
    pub verbose: bool,
}

fn write_train_outputs(
    out: &mut RunDir,
    cfg: &ExperimentConfig,
    model: &TrainedModel,
    inputs: &Inputs,
) -> Result<(), HarnessError> {
    out.write_csv("train_log.csv", &model.log)?;
    let bytes = model.to_checkpoint().to_bytes();
    let summary = json!({
        "epochs_done": model.epochs_done,
        "finished": model.is_finished(),
        "checkpoint_sha256": sha256_hex(&bytes),
        "final": model.log.last(),
    });
    let mut cfg = cfg.clone();
    cfg.train = model.config.clone();
    write_manifest(out, "train", &cfg, inputs, summary)
}

/// Trains on `dataset`, saving `checkpoint.bin` after every epoch so an
/// interrupted run can be resumed from it.
pub fn train_run(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    opts: TrainOptions,
    out: &mut RunDir,
    inputs: &Inputs,
) -> Result<TrainedModel, HarnessError> {
    let mut tc = cfg.train.clone();
    if opts.base_model {
        tc.lambda = 0.0;
    }
    let mut model = match opts.resume {
        Some(m) => {
            if m.config != tc {
                return Err(HarnessError::config(
                    "train",
                    "differs from the configuration stored in the checkpoint being resumed",
                ));
            }
            check_compatible(&m, dataset)?;
            m
        }
        None => TrainedModel::init(dataset, &tc)?,
    };
    let limit = opts.stop_after.unwrap_or(usize::MAX);
    while !model.is_finished() && model.epochs_done < limit {
        let log = match model.run_epoch(dataset) {
            Ok(l) => l.clone(),
            Err(e) => {
                write_train_outputs(out, cfg, &model, inputs)?;
                return Err(e.into());
            }
        };
        if opts.verbose {
            println!(
                "epoch {:>4}  pose {:.6}  adv {}  disc {}  beta {:.4}  alpha {:.4}",
                log.epoch,
                log.pose_loss,
                log.adv_loss.map_or("-".into(), |v| format!("{v:.6}")),
                log.disc_loss.map_or("-".into(), |v| format!("{v:.6}")),
                log.beta,
                log.alpha
            );
        }
        out.write_bytes("checkpoint.bin", &model.to_checkpoint().to_bytes())?;
    }
    if !out.files().iter().any(|f| f == "checkpoint.bin") {
        out.write_bytes("checkpoint.bin", &model.to_checkpoint().to_bytes())?;
    }
    write_train_outputs(out, cfg, &model, inputs)?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: RotationMode,
    /// Refinement settings, when refinement ran.
    pub refine: Option<RefineConfig>,
    pub ours: Metrics,
    /// Unrefined errors of a second (base) model on the same frames.
    pub base: Option<Metrics>,
    pub disc_accuracy: DiscAccuracy,
}

#[derive(Serialize)]
struct FrameRow {
    frame: usize,
    rot_before: f64,
    trans_before: f64,
    rot_after: f64,
    trans_after: f64,
    iterations: usize,
    stop: Option<StopReason>,
    rot_base: Option<f64>,
    trans_base: Option<f64>,
}

#[derive(Serialize)]
struct HistRow {
    bin_lo: f64,
    bin_hi: f64,
    before: usize,
    after: usize,
    base: Option<usize>,
}

fn hist_rows(before: &[f64], after: &[f64], base: Option<&[f64]>, bins: usize) -> Vec<HistRow> {
    let mut series = vec![before, after];
    if let Some(b) = base {
        series.push(b);
    }
    let h = histogram(&series, bins);
    (0..bins)
        .map(|i| HistRow {
            bin_lo: h.edges[i],
            bin_hi: h.edges[i + 1],
            before: h.counts[0][i],
            after: h.counts[1][i],
            base: h.counts.get(2).map(|c| c[i]),
        })
        .collect()
}

impl EvalReport {
    /// Base / Ours / Ours+Ref comparison of medians and means.
    pub fn table(&self) -> String {
        let m = &self.ours;
        let mut header = vec!["metric"];
        if self.base.is_some() {
            header.push("Base");
        }
        header.extend(["Ours", "Ours+Ref"]);
        let row = |name: &str, base: Option<f64>, before: f64, after: f64| {
            let mut r = vec![name.to_string()];
            if self.base.is_some() {
                r.push(format!("{:.4}", base.unwrap_or(f64::NAN)));
            }
            r.push(format!("{before:.4}"));
            r.push(format!("{after:.4}"));
            r
        };
        let b = self.base.as_ref();
        let rows = vec![
            row(
                "median rotation (deg)",
                b.map(|b| b.median_rot_before),
                m.median_rot_before,
                m.median_rot_after,
            ),
            row(
                "median translation",
                b.map(|b| b.median_trans_before),
                m.median_trans_before,
                m.median_trans_after,
            ),
            row(
                "mean rotation (deg)",
                b.map(|b| b.mean_rot_before),
                m.mean_rot_before,
                m.mean_rot_after,
            ),
            row(
                "mean translation",
                b.map(|b| b.mean_trans_before),
                m.mean_trans_before,
                m.mean_trans_after,
            ),
        ];
        let mut s = table(&header, &rows);
        s.push_str(&format!(
            "relative improvement after refinement: rotation {}, translation {}\n",
            pct(m.rel_improvement_rot),
            pct(m.rel_improvement_trans)
        ));
        if let Some(b) = b {
            s.push_str(&format!(
                "relative improvement over base: rotation {}, translation {}\n",
                pct(relative_improvement(b.median_rot_before, m.median_rot_after)),
                pct(relative_improvement(b.median_trans_before, m.median_trans_after))
            ));
        }
        if self.refine.is_some() {
            s.push_str(&format!(
                "stop reasons: converged {}, max_iters {}, diverged {}; mean iterations {:.2}\n",
                m.converged, m.max_iters, m.diverged, m.mean_iterations
            ));
        }
        s.push_str(&format!(
            "held-out discriminator accuracy: {:.4} (real {:.4}, fake {:.4})\n",
            self.disc_accuracy.overall, self.disc_accuracy.real, self.disc_accuracy.fake
        ));
        s
    }
}

/// Evaluates `model` on the test split, refining when `refine` is given.
pub fn eval(
    cfg: &ExperimentConfig,
    model: &TrainedModel,
    base: Option<&TrainedModel>,
    dataset: &Dataset,
    refine: Option<RefineConfig>,
    out: &mut RunDir,
    inputs: &Inputs,
) -> Result<EvalReport, HarnessError> {
    check_compatible(model, dataset)?;
    if let Some(b) = base {
        if b.mode() != model.mode() {
            return Err(HarnessError::ModeMismatch {
                expected: model.mode(),
                found: b.mode(),
            });
        }
        check_compatible(b, dataset)?;
    }
    if let Some(r) = &refine {
        r.validate()?;
    }
    let ours = evaluate(
        &model.regressor,
        Some(&model.discriminator),
        &dataset.test,
        refine.as_ref(),
    )?;
    let base_metrics = base
        .map(|b| evaluate(&b.regressor, None, &dataset.test, None))
        .transpose()?;
    let disc_accuracy = discriminator_accuracy(&model.regressor, &model.discriminator, &dataset.test)?;
    let report = EvalReport {
        mode: model.mode(),
        refine,
        ours,
        base: base_metrics,
        disc_accuracy,
    };

    let m = &report.ours;
    let b = report.base.as_ref();
    let rows: Vec<FrameRow> = (0..m.rot_before.len())
        .map(|i| FrameRow {
            frame: i,
            rot_before: m.rot_before[i],
            trans_before: m.trans_before[i],
            rot_after: m.rot_after[i],
            trans_after: m.trans_after[i],
            iterations: m.iterations[i],
            stop: m.stops[i],
            rot_base: b.map(|b| b.rot_before[i]),
            trans_base: b.map(|b| b.trans_before[i]),
        })
        .collect();
    out.write_csv("frames.csv", &rows)?;
    out.write_csv(
        "hist_rotation.csv",
        &hist_rows(
            &m.rot_before,
            &m.rot_after,
            b.map(|b| b.rot_before.as_slice()),
            cfg.histogram_bins,
        ),
    )?;
    out.write_csv(
        "hist_translation.csv",
        &hist_rows(
            &m.trans_before,
            &m.trans_after,
            b.map(|b| b.trans_before.as_slice()),
            cfg.histogram_bins,
        ),
    )?;
    out.write_json("metrics.json", &report)?;
    let summary = json!({
        "median_rot_before": m.median_rot_before,
        "median_rot_after": m.median_rot_after,
        "median_trans_before": m.median_trans_before,
        "median_trans_after": m.median_trans_after,
        "rel_improvement_rot": m.rel_improvement_rot,
        "rel_improvement_trans": m.rel_improvement_trans,
        "disc_accuracy": report.disc_accuracy,
    });
    write_manifest(out, "eval", cfg, inputs, summary)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub step_size: f64,
    pub max_iters: usize,
    pub median_rot: f64,
    pub median_trans: f64,
    pub mean_iterations: f64,
    pub ms_per_frame: f64,
    /// Median rotation error after refinement exceeds the unrefined one.
    pub unstable_rot: bool,
    pub unstable_trans: bool,
    #[serde(skip)]
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub median_rot_before: f64,
    pub median_trans_before: f64,
    /// Row-major over step sizes, then iteration counts.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    /// Evaluates every `(step size, iteration count)` cell; zero iterations
    /// means no refinement.
    pub fn compute(
        model: &TrainedModel,
        dataset: &Dataset,
        refine: &RefineConfig,
        step_sizes: &[f64],
        iterations: &[usize],
    ) -> Result<Self, HarnessError> {
        if step_sizes.is_empty() || iterations.is_empty() {
            return Err(HarnessError::config(
                "sweep",
                "step size and iteration lists must be non-empty",
            ));
        }
        check_compatible(model, dataset)?;
        let reg = &model.regressor;
        let disc = &model.discriminator;
        let base = evaluate(reg, None, &dataset.test, None)?;
        let mut cells = Vec::with_capacity(step_sizes.len() * iterations.len());
        for &step_size in step_sizes {
            for &max_iters in iterations {
                let rc = RefineConfig {
                    step_size,
                    max_iters,
                    ..*refine
                };
                let t0 = Instant::now();
                let m = if max_iters == 0 {
                    evaluate(reg, None, &dataset.test, None)?
                } else {
                    evaluate(reg, Some(disc), &dataset.test, Some(&rc))?
                };
                let ms = 1e3 * t0.elapsed().as_secs_f64() / dataset.test.len() as f64;
                cells.push(SweepCell {
                    step_size,
                    max_iters,
                    median_rot: m.median_rot_after,
                    median_trans: m.median_trans_after,
                    mean_iterations: m.mean_iterations,
                    ms_per_frame: ms,
                    unstable_rot: m.median_rot_after > base.median_rot_before,
                    unstable_trans: m.median_trans_after > base.median_trans_before,
                    metrics: Some(m),
                });
            }
        }
        Ok(SweepResult {
            median_rot_before: base.median_rot_before,
            median_trans_before: base.median_trans_before,
            cells,
        })
    }

    pub fn table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .cells
            .iter()
            .map(|c| {
                let flag = match (c.unstable_rot, c.unstable_trans) {
                    (true, true) => "rot+trans",
                    (true, false) => "rot",
                    (false, true) => "trans",
                    (false, false) => "",
                };
                vec![
                    format!("{:e}", c.step_size),
                    c.max_iters.to_string(),
                    format!("{:.4}", c.median_rot),
                    format!("{:.5}", c.median_trans),
                    format!("{:.2}", c.mean_iterations),
                    format!("{:.3}", c.ms_per_frame),
                    flag.to_string(),
                ]
            })
            .collect();
        let mut s = format!(
            "unrefined medians: rotation {:.4} deg, translation {:.5}\n",
            self.median_rot_before, self.median_trans_before
        );
        s.push_str(&table(
            &[
                "step_size",
                "iters",
                "med_rot",
                "med_trans",
                "mean_iters",
                "ms/frame",
                "unstable",
            ],
            &rows,
        ));
        s
    }
}

#[derive(Serialize)]
struct SweepFrameRow {
    step_size: f64,
    max_iters: usize,
    frame: usize,
    rot: f64,
    trans: f64,
    iterations: usize,
}

pub fn sweep(
    cfg: &ExperimentConfig,
    model: &TrainedModel,
    dataset: &Dataset,
    step_sizes: &[f64],
    iterations: &[usize],
    out: &mut RunDir,
    inputs: &Inputs,
) -> Result<SweepResult, HarnessError> {
    let result = SweepResult::compute(model, dataset, &cfg.refine, step_sizes, iterations)?;
    out.write_csv("sweep.csv", &result.cells)?;
    let mut frames = Vec::new();
    for c in &result.cells {
        let m = c.metrics.as_ref().expect("computed cells carry metrics");
        for i in 0..m.rot_after.len() {
            frames.push(SweepFrameRow {
                step_size: c.step_size,
                max_iters: c.max_iters,
                frame: i,
                rot: m.rot_after[i],
                trans: m.trans_after[i],
                iterations: m.iterations[i],
            });
        }
    }
    out.write_csv("sweep_frames.csv", &frames)?;
    let unrefined = evaluate(&model.regressor, None, &dataset.test, None)?;
    #[derive(Serialize)]
    struct Row {
        frame: usize,
        rot: f64,
        trans: f64,
    }
    let rows: Vec<Row> = (0..unrefined.rot_before.len())
        .map(|i| Row {
            frame: i,
            rot: unrefined.rot_before[i],
            trans: unrefined.trans_before[i],
        })
        .collect();
    out.write_csv("unrefined_frames.csv", &rows)?;
    let summary = json!({
        "median_rot_before": result.median_rot_before,
        "median_trans_before": result.median_trans_before,
        "cells": result.cells.len(),
        "unstable_cells": result.cells.iter().filter(|c| c.unstable_rot || c.unstable_trans).count(),
    });
    write_manifest(out, "sweep", cfg, inputs, summary)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub iterations: usize,
    /// Fastest pass, milliseconds per frame.
    pub refine_ms_per_frame: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub hardware: String,
    pub timestamp: String,
    pub frames: usize,
    pub repeats: usize,
    pub regression_ms_per_frame: f64,
    pub features_ms_per_frame: f64,
    pub rows: Vec<BenchRow>,
    pub fit: LineFit,
    /// `(n, 2n, time(2n) / time(n))` for every doubled pair in the grid.
    pub doubling: Vec<(usize, usize, f64)>,
    /// Whether the line fit reaches R² > 0.95.
    pub linear: bool,
    /// Every timed pass: `(iterations, repeat, ms per frame)`.
    pub raw: Vec<(usize, usize, f64)>,
}

fn hardware_string() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{cpu}; {} {}; {threads} hardware threads",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

impl BenchReport {
    /// Times regression, feature extraction and refinement with exactly
    /// `n` iterations per frame (convergence disabled), single-threaded.
    pub fn measure(
        model: &TrainedModel,
        dataset: &Dataset,
        refine: &RefineConfig,
        iterations: &[usize],
        frames: usize,
        repeats: usize,
    ) -> Result<Self, HarnessError> {
        if iterations.len() < 2 {
            return Err(HarnessError::config(
                "bench.iterations",
                "needs at least two iteration counts",
            ));
        }
        check_compatible(model, dataset)?;
        let frames = &dataset.test[..frames.min(dataset.test.len())];
        if frames.is_empty() {
            return Err(AdvPoseError::EmptyDataset.into());
        }
        let n = frames.len() as f64;
        let reg = &model.regressor;
        let disc = &model.discriminator;
        let preds = frames
            .iter()
            .map(|f| regress_pose(reg, &f.observation))
            .collect::<Result<Vec<_>, _>>()?;

        let best = |f: &mut dyn FnMut() -> Result<(), HarnessError>| -> Result<(f64, Vec<f64>), HarnessError> {
            let mut all = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let t0 = Instant::now();
                f()?;
                all.push(1e3 * t0.elapsed().as_secs_f64() / n);
            }
            Ok((all.iter().copied().fold(f64::INFINITY, f64::min), all))
        };

        let (regression_ms_per_frame, _) = best(&mut || {
            for f in frames {
                std::hint::black_box(regress_pose(reg, &f.observation)?);
            }
            Ok(())
        })?;
        let (features_ms_per_frame, _) = best(&mut || {
            for f in frames {
                std::hint::black_box(extract_features(&f.observation, &dataset.extractor)?);
            }
            Ok(())
        })?;

        let timed = |iters: usize| RefineConfig {
            max_iters: iters,
            tol: 0.0,
            ..*refine
        };
        // Warm-up pass.
        if let Some(&top) = iterations.iter().max() {
            if top > 0 {
                for (f, p) in frames.iter().zip(&preds).take(4) {
                    refine_pose(disc, &f.features, p, &timed(top))?;
                }
            }
        }
        let mut rows = Vec::with_capacity(iterations.len());
        let mut raw = Vec::new();
        for &iters in iterations {
            let (ms, all) = if iters == 0 {
                (0.0, vec![0.0; repeats])
            } else {
                let rc = timed(iters);
                best(&mut || {
                    for (f, p) in frames.iter().zip(&preds) {
                        std::hint::black_box(refine_pose(disc, &f.features, p, &rc)?);
                    }
                    Ok(())
                })?
            };
            raw.extend(all.into_iter().enumerate().map(|(r, t)| (iters, r, t)));
            rows.push(BenchRow {
                iterations: iters,
                refine_ms_per_frame: ms,
            });
        }
        let xs: Vec<f64> = rows.iter().map(|r| r.iterations as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.refine_ms_per_frame).collect();
        let fit = fit_line(&xs, &ys);
        let mut doubling = Vec::new();
        for a in &rows {
            for b in &rows {
                if a.iterations > 0 && b.iterations == 2 * a.iterations {
                    doubling.push((
                        a.iterations,
                        b.iterations,
                        b.refine_ms_per_frame / a.refine_ms_per_frame,
                    ));
                }
            }
        }
        Ok(BenchReport {
            hardware: hardware_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            frames: frames.len(),
            repeats,
            regression_ms_per_frame,
            features_ms_per_frame,
            linear: fit.r_squared > 0.95,
            rows,
            fit,
            doubling,
            raw,
        })
    }

    pub fn table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| vec![r.iterations.to_string(), format!("{:.4}", r.refine_ms_per_frame)])
            .collect();
        let mut s = format!(
            "{}\n{}\nframes {}, best of {}\nregression {:.4} ms/frame, feature extraction {:.4} ms/frame\n",
            self.hardware,
            self.timestamp,
            self.frames,
            self.repeats,
            self.regression_ms_per_frame,
            self.features_ms_per_frame
        );
        s.push_str(&table(&["iterations", "refine ms/frame"], &rows));
        s.push_str(&format!(
            "per-iteration cost {:.5} ms, intercept {:.5} ms, R^2 {:.5} ({})\n",
            self.fit.slope,
            self.fit.intercept,
            self.fit.r_squared,
            if self.linear { "linear" } else { "NOT linear" }
        ));
        for (a, b, r) in &self.doubling {
            s.push_str(&format!("time({b}) / time({a}) = {r:.3}\n"));
        }
        s
    }
}

pub fn bench(
    cfg: &ExperimentConfig,
    model: &TrainedModel,
    dataset: &Dataset,
    iterations: &[usize],
    out: &mut RunDir,
    inputs: &Inputs,
) -> Result<BenchReport, HarnessError> {
    let report = BenchReport::measure(
        model,
        dataset,
        &cfg.refine,
        iterations,
        cfg.bench.frames,
        cfg.bench.repeats,
    )?;
    out.write_csv("bench.csv", &report.rows)?;
    #[derive(Serialize)]
    struct Raw {
        iterations: usize,
        repeat: usize,
        ms_per_frame: f64,
    }
    let raw: Vec<Raw> = report
        .raw
        .iter()
        .map(|&(iterations, repeat, ms_per_frame)| Raw {
            iterations,
            repeat,
            ms_per_frame,
        })
        .collect();
    out.write_csv("bench_raw.csv", &raw)?;
    out.write_json("bench.json", &report)?;
    let summary = json!({
        "hardware": report.hardware,
        "timestamp": report.timestamp,
        "r_squared": report.fit.r_squared,
        "linear": report.linear,
    });
    write_manifest(out, "bench", cfg, inputs, summary)?;
    Ok(report)
}

/// One (arm, seed) training and refinement run of the ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateRun {
    pub arm: String,
    /// Feature width; absent for the pose-only arm.
    pub feature_dim: Option<usize>,
    pub seed: u64,
    pub median_rot_before: f64,
    pub median_rot_after: f64,
    pub median_trans_before: f64,
    pub median_trans_after: f64,
    pub rel_decrease_rot: f64,
    pub rel_decrease_trans: f64,
}

/// Mean over seeds of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateArm {
    pub arm: String,
    pub feature_dim: Option<usize>,
    pub seeds: usize,
    pub rel_decrease_rot: f64,
    pub rel_decrease_trans: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateReport {
    pub arms: Vec<AblateArm>,
    pub runs: Vec<AblateRun>,
}

impl AblateReport {
    /// Trains and refines every arm on every seed. The pose-only arm
    /// trains its discriminator on the pose alone.
    pub fn compute(cfg: &ExperimentConfig, seeds: &[u64], verbose: bool) -> Result<Self, HarnessError> {
        if seeds.is_empty() {
            return Err(HarnessError::config("seeds", "at least one seed is required"));
        }
        let mode = cfg.mode();
        let mut arms: Vec<(String, Option<usize>)> = cfg
            .ablate
            .feature_dims
            .iter()
            .map(|&d| (format!("d_f={d}"), Some(d)))
            .collect();
        arms.push(("pose_only".to_string(), None));
        let mut runs = Vec::new();
        for (name, dim) in &arms {
            for &seed in seeds {
                let c = cfg.with_seed(seed);
                let mut scene = c.scene.clone();
                scene.feature_dim = Some(dim.unwrap_or_else(|| scene.feature_dim_for(mode)));
                let dataset = build_dataset(&scene, mode)?;
                let mut tc = c.train.clone();
                tc.use_features = dim.is_some();
                let model = crate::advpose::train(&dataset, &tc)?;
                let m = evaluate(
                    &model.regressor,
                    Some(&model.discriminator),
                    &dataset.test,
                    Some(&c.refine),
                )?;
                if verbose {
                    println!(
                        "{name:>10} seed {seed:>4}: rotation {} translation {}",
                        pct(m.rel_improvement_rot),
                        pct(m.rel_improvement_trans)
                    );
                }
                runs.push(AblateRun {
                    arm: name.clone(),
                    feature_dim: *dim,
                    seed,
                    median_rot_before: m.median_rot_before,
                    median_rot_after: m.median_rot_after,
                    median_trans_before: m.median_trans_before,
                    median_trans_after: m.median_trans_after,
                    rel_decrease_rot: m.rel_improvement_rot,
                    rel_decrease_trans: m.rel_improvement_trans,
                });
            }
        }
        let arms = arms
            .into_iter()
            .map(|(name, dim)| {
                let mine: Vec<&AblateRun> = runs.iter().filter(|r| r.arm == name).collect();
                AblateArm {
                    seeds: mine.len(),
                    rel_decrease_rot: mean(&mine.iter().map(|r| r.rel_decrease_rot).collect::<Vec<_>>()),
                    rel_decrease_trans: mean(&mine.iter().map(|r| r.rel_decrease_trans).collect::<Vec<_>>()),
                    arm: name,
                    feature_dim: dim,
                }
            })
            .collect();
        Ok(AblateReport { arms, runs })
    }

    pub fn table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .arms
            .iter()
            .map(|a| {
                vec![
                    a.arm.clone(),
                    a.seeds.to_string(),
                    pct(a.rel_decrease_rot),
                    pct(a.rel_decrease_trans),
                ]
            })
            .collect();
        table(&["arm", "seeds", "rotation decrease", "translation decrease"], &rows)
    }
}

pub fn ablate(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    verbose: bool,
    out: &mut RunDir,
) -> Result<AblateReport, HarnessError> {
    let report = AblateReport::compute(cfg, seeds, verbose)?;
    out.write_csv("ablate.csv", &report.arms)?;
    out.write_csv("ablate_runs.csv", &report.runs)?;
    let summary = json!({ "arms": report.arms.len(), "seeds": seeds });
    write_manifest(out, "ablate", cfg, &Inputs::new(), summary)?;
    Ok(report)
}
