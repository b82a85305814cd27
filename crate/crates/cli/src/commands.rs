use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chestxr::data::{
    load_image_file, make_synthetic_fixture, parse_manifest, split_train_val, summarize_labels,
    AugmentationConfig, FixtureConfig, LoadMode, FIXTURE_MANIFEST,
};
use chestxr::labels::LABEL_NAMES;
use chestxr::metrics::{metric_table, overall_table, MetricsReport, PerLabelMetric};
use chestxr::nn::Mode;
use chestxr::train::{
    self, load_checkpoint, read_epoch_logs, save_checkpoint, EpochLog, TrainData,
};
use chestxr::zoo::{build_model, ArchId, Model, WeightSource};
use chestxr::Error;
use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::config::{require, require_file, RunConfig};
use crate::plot;

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const EPOCH_LOG_FILE: &str = "epoch_log.jsonl";
pub const RUN_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.json";

const PER_LABEL_TABLES: [(PerLabelMetric, &str); 5] = [
    (PerLabelMetric::Auroc, "auroc.csv"),
    (PerLabelMetric::Accuracy, "accuracy.csv"),
    (PerLabelMetric::Precision, "precision.csv"),
    (PerLabelMetric::Recall, "recall.csv"),
    (PerLabelMetric::F1, "f1.csv"),
];

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn make_fixture(cfg: &FixtureConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    let m = make_synthetic_fixture(cfg, out)?;
    println!(
        "wrote {} images for {} patients and {}",
        m.len(),
        m.patients().len(),
        out.join(FIXTURE_MANIFEST).display()
    );
    Ok(())
}

pub fn summarize(csv: &Path, out: Option<&Path>) -> Result<()> {
    let manifest = parse_manifest(csv)?;
    let dist = summarize_labels(&manifest)?;
    match out {
        Some(dir) => {
            create_dir(dir)?;
            write(&dir.join("label_distribution.csv"), dist.to_csv()?)?;
            write(&dir.join("label_distribution.json"), dist.to_json()?)?;
        }
        None => print!("{}", dist.to_csv()?),
    }
    Ok(())
}

pub fn split(csv: &Path, val_fraction: f64, seed: u64, out: &Path) -> Result<()> {
    let manifest = parse_manifest(csv)?;
    let (tr, va) = split_train_val(&manifest, val_fraction, seed)?;
    create_dir(out)?;
    tr.save(&out.join("train.csv"))?;
    va.save(&out.join("valid.csv"))?;
    println!(
        "train: {} records / {} patients; valid: {} records / {} patients",
        tr.len(),
        tr.patients().len(),
        va.len(),
        va.patients().len()
    );
    Ok(())
}

/// Per-run facts the `report` command merges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model_name: String,
    pub arch: ArchId,
    pub total_params: usize,
    pub trainable_params: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_auroc: f64,
    pub best_val_accuracy: f64,
    pub best_val_f1: f64,
}

fn parameter_table(runs: &[RunSummary]) -> String {
    let mut out = String::from("Model Name,Total Parameters,Trainable Parameters\n");
    for r in runs {
        out.push_str(&format!(
            "{},{},{}\n",
            r.model_name, r.total_params, r.trainable_params
        ));
    }
    out
}

fn training_table(runs: &[RunSummary]) -> String {
    let mut out = String::from("Model Name,AUROC,Accuracy,F1 Score\n");
    for r in runs {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.model_name, r.best_val_auroc, r.best_val_accuracy, r.best_val_f1
        ));
    }
    out
}

pub fn train(cfg: &RunConfig, offline: bool) -> Result<()> {
    cfg.validate()?;
    let train_csv = require(&cfg.train_csv, "train_csv")?;
    require_file(train_csv)?;
    let out = cfg.output_dir()?.to_path_buf();
    let data_root = cfg.data_root_for(train_csv);
    let full = parse_manifest(train_csv)?;
    let (tr, va) = match &cfg.valid_csv {
        Some(v) => (full, parse_manifest(v)?),
        None => split_train_val(&full, cfg.val_fraction, cfg.split_seed)?,
    };
    log::info!(
        "training on {} records, validating on {}",
        tr.len(),
        va.len()
    );

    let arch = cfg.model.arch;
    let min = arch.min_input();
    let (h, w) = cfg.augmentation.resize_hw;
    if h < min || w < min {
        return Err(Error::Config(format!(
            "{arch} needs inputs of at least {min}x{min}, resize_hw is {h}x{w}"
        ))
        .into());
    }
    let source = WeightSource::from_env(offline);
    let mut model = build_model(arch, cfg.model.pretrained(), &source, cfg.train.seed)?;
    let report = model.parameter_report();

    create_dir(&out)?;
    let log_path = out.join(EPOCH_LOG_FILE);
    let mut log_file =
        BufWriter::new(File::create(&log_path).with_context(|| log_path.display().to_string())?);
    let data = TrainData {
        data_root: &data_root,
        train: &tr,
        val: &va,
        augmentation: &cfg.augmentation,
    };
    let outcome = train::train(
        &mut model,
        &data,
        &cfg.policy,
        &cfg.train,
        &mut |log: &EpochLog| {
            writeln!(log_file, "{}", log.to_json_line()?)?;
            log_file.flush()?;
            eprintln!(
                "epoch {:>3}  train_loss {:.5}  val_loss {:.5}  val_auroc {:.5}  lr {:e}",
                log.epoch, log.train_loss, log.val_loss, log.val_auroc, log.lr
            );
            Ok(())
        },
    )?;
    drop(log_file);

    save_checkpoint(&outcome.checkpoint, &out.join(CHECKPOINT_FILE))?;
    let best = outcome
        .logs
        .iter()
        .find(|l| l.epoch == outcome.checkpoint.best_epoch)
        .expect("best epoch is logged");
    let summary = RunSummary {
        model_name: arch.display_name().to_string(),
        arch,
        total_params: report.total,
        trainable_params: report.trainable,
        epochs_run: outcome.logs.len(),
        best_epoch: best.epoch,
        best_val_auroc: best.val_auroc,
        best_val_accuracy: best.val_accuracy,
        best_val_f1: best.val_f1,
    };
    write(
        &out.join(RUN_FILE),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    write(
        &out.join("parameters.csv"),
        parameter_table(std::slice::from_ref(&summary)),
    )?;
    write(&out.join("modules.csv"), report.to_module_table())?;
    write(
        &out.join("training_summary.csv"),
        training_table(std::slice::from_ref(&summary)),
    )?;
    write(
        &out.join("training_curves.svg"),
        plot::training_curves(&[(summary.model_name.clone(), outcome.logs.clone())]),
    )?;
    println!(
        "best epoch {} of {}: val AUROC {:.6}; checkpoint {}",
        summary.best_epoch,
        summary.epochs_run,
        summary.best_val_auroc,
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn write_metric_tables(dir: &Path, reports: &[MetricsReport]) -> Result<()> {
    write(&dir.join("overall.csv"), overall_table(reports))?;
    for (metric, file) in PER_LABEL_TABLES {
        write(&dir.join(file), metric_table(reports, metric))?;
    }
    Ok(())
}

pub fn evaluate(
    cfg: &RunConfig,
    checkpoint: &Path,
    test_csv: &Path,
    threshold: Option<f64>,
) -> Result<()> {
    require_file(test_csv)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let mut model = ckpt.to_model()?;
    let manifest = parse_manifest(test_csv)?;
    let data_root = cfg.data_root_for(test_csv);
    let mut tc = ckpt.train_config.clone();
    tc.decision_threshold = threshold.unwrap_or(tc.decision_threshold);
    tc.validate()?;
    let (_, report) = train::evaluate(
        &mut model,
        &data_root,
        &manifest,
        &ckpt.augmentation,
        &ckpt.policy,
        &tc,
    )?;

    let out = cfg.output_dir()?;
    create_dir(out)?;
    write(&out.join(METRICS_FILE), report.to_json()? + "\n")?;
    write_metric_tables(out, std::slice::from_ref(&report))?;
    let confusion: Vec<_> = report
        .per_label
        .iter()
        .map(|m| (&m.label, &m.confusion))
        .collect();
    write(
        &out.join("confusion.json"),
        serde_json::to_string_pretty(&confusion)? + "\n",
    )?;
    write(
        &out.join("confusion_grid.svg"),
        plot::confusion_grid(&report),
    )?;
    write(
        &out.join("test_distribution.csv"),
        summarize_labels(&manifest)?.to_csv()?,
    )?;
    print!("{}", overall_table(std::slice::from_ref(&report)));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PredictFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub path: String,
    pub probabilities: Option<Vec<f64>>,
    pub predictions: Option<Vec<u8>>,
    pub error: Option<String>,
}

/// Image paths named by the input: a CSV with a `Path` column (relative to
/// the data root) or a single image file.
fn predict_inputs(input: &Path, data_root: Option<&Path>) -> Result<Vec<(String, PathBuf)>> {
    require_file(input)?;
    let is_csv = input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if !is_csv {
        return Ok(vec![(input.display().to_string(), input.to_path_buf())]);
    }
    let root = data_root
        .map(Path::to_path_buf)
        .unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
    let mut rdr = csv::Reader::from_path(input).map_err(Error::from)?;
    let col = rdr
        .headers()
        .map_err(Error::from)?
        .iter()
        .position(|h| h == chestxr::data::PATH_COLUMN)
        .ok_or_else(|| Error::MissingColumn {
            column: chestxr::data::PATH_COLUMN.to_string(),
        })?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(Error::from)?;
        let p = rec.get(col).unwrap_or_default().to_string();
        rows.push((p.clone(), root.join(p)));
    }
    if rows.is_empty() {
        return Err(Error::EmptyManifest(input.to_path_buf()).into());
    }
    Ok(rows)
}

pub fn predict_rows(
    model: &mut Model,
    inputs: &[(String, PathBuf)],
    augmentation: &AugmentationConfig,
    threshold: f64,
    batch_size: usize,
) -> Result<Vec<PredictionRow>> {
    let loaded = chestxr::exec::map_indexed(inputs.len(), |i| {
        load_image_file(&inputs[i].1, augmentation, LoadMode::Eval)
    });
    let mut rows: Vec<PredictionRow> = inputs
        .iter()
        .zip(&loaded)
        .map(|((name, _), r)| PredictionRow {
            path: name.clone(),
            probabilities: None,
            predictions: None,
            error: r.as_ref().err().map(ToString::to_string),
        })
        .collect();
    let ok: Vec<usize> = (0..inputs.len()).filter(|&i| loaded[i].is_ok()).collect();
    let (h, w) = augmentation.resize_hw;
    for chunk in ok.chunks(batch_size.max(1)) {
        let mut x = Array4::zeros((chunk.len(), 3, h, w));
        for (b, &i) in chunk.iter().enumerate() {
            if let Ok(img) = &loaded[i] {
                x.index_axis_mut(Axis(0), b).assign(img);
            }
        }
        let p = model.forward(&x, Mode::Eval)?;
        for (b, &i) in chunk.iter().enumerate() {
            let probs: Vec<f64> = p.row(b).iter().map(|&v| f64::from(v)).collect();
            rows[i].predictions = Some(probs.iter().map(|&v| u8::from(v > threshold)).collect());
            rows[i].probabilities = Some(probs);
        }
    }
    Ok(rows)
}

fn rows_to_csv(rows: &[PredictionRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["Path".to_string()];
    header.extend(LABEL_NAMES.iter().map(|l| format!("{l} probability")));
    header.extend(LABEL_NAMES.iter().map(|l| format!("{l} prediction")));
    header.push("error".to_string());
    w.write_record(&header).map_err(Error::from)?;
    for r in rows {
        let mut rec = vec![r.path.clone()];
        match (&r.probabilities, &r.predictions) {
            (Some(p), Some(b)) => {
                rec.extend(p.iter().map(|v| format!("{v:.8}")));
                rec.extend(b.iter().map(ToString::to_string));
            }
            _ => rec.extend(std::iter::repeat_n(String::new(), 2 * LABEL_NAMES.len())),
        }
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec).map_err(Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(String::from_utf8(bytes)?)
}

/// Returns false when every row failed.
pub fn predict(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    threshold: Option<f64>,
    format: PredictFormat,
) -> Result<bool> {
    let ckpt = load_checkpoint(checkpoint)?;
    let mut model = ckpt.to_model()?;
    let threshold = threshold.unwrap_or(ckpt.train_config.decision_threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must be in (0, 1), got {threshold}")).into());
    }
    let inputs = predict_inputs(input, cfg.data_root.as_deref())?;
    let rows = predict_rows(
        &mut model,
        &inputs,
        &ckpt.augmentation,
        threshold,
        ckpt.train_config.batch_size,
    )?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    for r in rows.iter().filter(|r| r.error.is_some()) {
        log::warn!("{}: {}", r.path, r.error.as_deref().unwrap_or_default());
    }
    let text = match format {
        PredictFormat::Csv => rows_to_csv(&rows)?,
        PredictFormat::Json => serde_json::to_string_pretty(&rows)? + "\n",
    };
    match &cfg.output_dir {
        Some(out) => {
            create_dir(out)?;
            let name = match format {
                PredictFormat::Csv => "predictions.csv",
                PredictFormat::Json => "predictions.json",
            };
            write(&out.join(name), text)?;
        }
        None => print!("{text}"),
    }
    if failed > 0 {
        eprintln!("{failed} of {} rows failed", rows.len());
    }
    Ok(failed < rows.len())
}

fn arch_rank(name: &str) -> usize {
    ArchId::ALL
        .iter()
        .position(|a| a.display_name() == name)
        .unwrap_or(ArchId::ALL.len())
}

/// Merges the outputs of several `train`/`evaluate` runs into comparison
/// tables and plots.
pub fn report(dirs: &[PathBuf], out: &Path) -> Result<()> {
    let mut reports = Vec::new();
    let mut runs: Vec<(RunSummary, Vec<EpochLog>)> = Vec::new();
    for dir in dirs {
        if !dir.is_dir() {
            return Err(Error::NotFound(dir.clone()).into());
        }
        let metrics = dir.join(METRICS_FILE);
        if metrics.exists() {
            let text = std::fs::read_to_string(&metrics)?;
            reports.push(
                MetricsReport::from_json(&text).with_context(|| metrics.display().to_string())?,
            );
        }
        let run = dir.join(RUN_FILE);
        if run.exists() {
            let summary: RunSummary = serde_json::from_str(&std::fs::read_to_string(&run)?)
                .map_err(Error::from)
                .with_context(|| run.display().to_string())?;
            let logs_path = dir.join(EPOCH_LOG_FILE);
            let logs = if logs_path.exists() {
                read_epoch_logs(&std::fs::read_to_string(&logs_path)?)?
            } else {
                Vec::new()
            };
            runs.push((summary, logs));
        }
    }
    if reports.is_empty() && runs.is_empty() {
        return Err(Error::Config(format!(
            "no {METRICS_FILE} or {RUN_FILE} found in the given directories"
        ))
        .into());
    }
    reports.sort_by(|a, b| {
        (arch_rank(&a.model_name), &a.model_name).cmp(&(arch_rank(&b.model_name), &b.model_name))
    });
    runs.sort_by(|a, b| {
        (arch_rank(&a.0.model_name), &a.0.model_name)
            .cmp(&(arch_rank(&b.0.model_name), &b.0.model_name))
    });

    create_dir(out)?;
    if !reports.is_empty() {
        write_metric_tables(out, &reports)?;
        print!("{}", overall_table(&reports));
    }
    if !runs.is_empty() {
        let summaries: Vec<RunSummary> = runs.iter().map(|(s, _)| s.clone()).collect();
        write(&out.join("parameters.csv"), parameter_table(&summaries))?;
        write(
            &out.join("training_summary.csv"),
            training_table(&summaries),
        )?;
        let curves: Vec<(String, Vec<EpochLog>)> =
            runs.into_iter().map(|(s, l)| (s.model_name, l)).collect();
        write(
            &out.join("training_curves.svg"),
            plot::training_curves(&curves),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(name: &str, arch: ArchId) -> RunSummary {
        RunSummary {
            model_name: name.into(),
            arch,
            total_params: 504126,
            trainable_params: 504126,
            epochs_run: 3,
            best_epoch: 2,
            best_val_auroc: 0.75,
            best_val_accuracy: 0.5,
            best_val_f1: 0.25,
        }
    }

    #[test]
    fn parameter_table_layout() {
        let t = parameter_table(&[summary("CustomNet", ArchId::CustomNet)]);
        assert_eq!(
            t,
            "Model Name,Total Parameters,Trainable Parameters\nCustomNet,504126,504126\n"
        );
    }

    #[test]
    fn training_table_layout() {
        let t = training_table(&[summary("CustomNet", ArchId::CustomNet)]);
        assert_eq!(
            t,
            "Model Name,AUROC,Accuracy,F1 Score\nCustomNet,0.750000,0.500000,0.250000\n"
        );
    }

    #[test]
    fn arch_order_follows_the_zoo() {
        assert!(arch_rank("CustomNet") < arch_rank("Vgg16"));
        assert_eq!(arch_rank("Other"), ArchId::ALL.len());
    }
}
