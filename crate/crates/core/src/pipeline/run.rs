use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{RedError, Result};
use crate::metrics::project2d;
use crate::model::RedModel;
use crate::signal::{build_dataset, write_dataset, DatasetMeta, IQDataset};
use crate::trainer::{self, Checkpoint, LossTerm, TrainLog};

use super::config::ExperimentConfig;
use super::evaluate::{baseline_aucs, fit_centers, snr_report, SnrReport, TestView};

pub const DATASET_FILE: &str = "dataset.reds";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.toml";
pub const REPORT_FILE: &str = "report.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub stage: String,
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub code_version: String,
    pub files: Vec<FileEntry>,
    pub timings: Vec<StageTiming>,
}

impl RunManifest {
    /// Re-hashes every listed file; returns the entries that no longer match.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.files {
            let ok = fs::read(dir.join(&f.path)).map(|b| sha256_hex(&b) == f.sha256).unwrap_or(false);
            if !ok {
                bad.push(f.path.clone());
            }
        }
        Ok(bad)
    }
}

/// Everything in a run that is a pure function of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_sha256: String,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
    pub snr: Vec<SnrReport>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Text form of an SNR used in file names: `0`, `-5`, `2.5`, `inf`.
pub fn snr_tag(snr_db: f64) -> String {
    format!("{snr_db}")
}

struct Recorder {
    dir: PathBuf,
    files: Vec<FileEntry>,
    timings: Vec<StageTiming>,
}

impl Recorder {
    fn write(&mut self, stage: &str, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.note(stage, name, bytes);
        Ok(())
    }

    fn note(&mut self, stage: &str, name: &str, bytes: &[u8]) {
        self.files.push(FileEntry {
            stage: stage.to_string(),
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }

    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self).map_err(|e| e.in_stage(stage))?;
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }
}

fn toml_text<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| RedError::Format(format!("{e}")))
}

/// Trained model, its detector centers, and the training log.
pub struct TrainedRun {
    pub dataset: IQDataset,
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Simulates the dataset, trains, and computes detector centers, without
/// touching the file system.
pub fn train_run(config: &ExperimentConfig) -> Result<TrainedRun> {
    config.validate()?;
    let dataset = build_dataset(&config.dataset_config()).map_err(|e| e.in_stage("gen-data"))?;
    train_on(config, dataset)
}

pub fn train_on(config: &ExperimentConfig, dataset: IQDataset) -> Result<TrainedRun> {
    let model = RedModel::build(config.architecture()?, config.init_seed()).map_err(|e| e.in_stage("train"))?;
    let out = trainer::train(model, &dataset, &config.train_config()?, None).map_err(|e| e.in_stage("train"))?;
    let semantic = fit_centers(&out.model, &dataset, config.detect.metric).map_err(|e| e.in_stage("compute-centers"))?;
    Ok(TrainedRun {
        dataset,
        checkpoint: Checkpoint {
            model: out.model,
            centers: Some(out.centers.centers),
            semantic: Some(semantic),
        },
        log: out.log,
    })
}

/// gen-data → train → compute-centers → detect → eval, writing every
/// artifact into `out_dir` and a manifest that checksums them. An invalid
/// config fails before anything is written.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<(RunManifest, RunReport)> {
    config.validate()?;
    let config_sha256 = config.hash()?;
    fs::create_dir_all(out_dir)?;
    let mut rec = Recorder {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
        timings: Vec::new(),
    };
    rec.write("config", CONFIG_FILE, config.to_toml()?.as_bytes())?;

    let dataset = rec.time("gen-data", |rec| {
        let ds = build_dataset(&config.dataset_config())?;
        let path = rec.dir.join(DATASET_FILE);
        write_dataset(&path, &ds)?;
        rec.note("gen-data", DATASET_FILE, &fs::read(&path)?);
        let meta_path = DatasetMeta::new(&config.dataset_config(), ds.normalization)?.write(&path)?;
        let meta_name = meta_path.file_name().unwrap().to_string_lossy().into_owned();
        rec.note("gen-data", &meta_name, &fs::read(&meta_path)?);
        Ok(ds)
    })?;

    let outcome = rec.time("train", |rec| {
        let model = RedModel::build(config.architecture()?, config.init_seed())?;
        let out = trainer::train(model, &dataset, &config.train_config()?, None)?;
        rec.write("train", TRAIN_LOG_FILE, out.log.to_toml()?.as_bytes())?;
        Ok(out)
    })?;

    let checkpoint = rec.time("compute-centers", |rec| {
        let semantic = fit_centers(&outcome.model, &dataset, config.detect.metric)?;
        let ck = Checkpoint {
            model: outcome.model.clone(),
            centers: Some(outcome.centers.centers.clone()),
            semantic: Some(semantic),
        };
        rec.write("compute-centers", CHECKPOINT_FILE, &ck.to_bytes())?;
        Ok(ck)
    })?;
    let centers = checkpoint.semantic.as_ref().expect("centers were just computed");

    let snr = rec.time("eval", |rec| {
        let mut reports = Vec::new();
        for &snr_db in &config.eval.snr_db {
            let view = TestView::build(&checkpoint.model, centers, &dataset, snr_db, config.noise_seed())?;
            let (report, roc) = snr_report(&view, centers, &config.detect.lambda_grid)?;
            let tag = snr_tag(snr_db);
            rec.write("eval", &format!("report_snr{tag}.toml"), toml_text(&report)?.as_bytes())?;
            rec.write("eval", &format!("roc_snr{tag}.csv"), roc.to_csv().as_bytes())?;
            let (known, labels) = view.known_features();
            let proj = project2d(&known)?;
            rec.write("eval", &format!("pca_snr{tag}.csv"), proj.to_csv(&labels).as_bytes())?;
            reports.push(report);
        }
        Ok(reports)
    })?;

    let best = outcome.log.epochs.iter().find(|e| e.epoch == outcome.log.best_epoch);
    let report = RunReport {
        config_sha256: config_sha256.clone(),
        best_epoch: outcome.log.best_epoch,
        epochs_run: outcome.log.epochs.len(),
        best_val_loss: best.map_or(f64::NAN, |e| e.val_total),
        snr,
    };
    rec.write("report", REPORT_FILE, toml_text(&report)?.as_bytes())?;

    let manifest = RunManifest {
        config_sha256,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        files: rec.files,
        timings: rec.timings,
    };
    fs::write(out_dir.join(MANIFEST_FILE), toml_text(&manifest)?)?;
    Ok((manifest, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    Snr,
    Baselines,
    Ablation,
}

impl SuiteKind {
    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::Snr => "snr",
            SuiteKind::Baselines => "baselines",
            SuiteKind::Ablation => "ablation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub label: String,
    pub snr_db: f64,
    pub auc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub silhouette: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub kind: SuiteKind,
    pub config_sha256: String,
    pub rows: Vec<SuiteRow>,
}

/// Ablation variants: the full loss and each single term dropped.
pub fn ablation_variants() -> Vec<(&'static str, Vec<LossTerm>)> {
    vec![
        ("full", vec![]),
        ("-CE", vec![LossTerm::Ce]),
        ("-ML", vec![LossTerm::Ml]),
        ("-MSE", vec![LossTerm::Mse]),
    ]
}

/// One of the comparison tables. `snr` evaluates one model at every listed
/// SNR; `baselines` adds LOF and isolation-forest rows on the same features;
/// `ablation` retrains per variant and reports at the first listed SNR. Each
/// trained model's full run lands in a subdirectory of `out_dir`.
pub fn run_suite(kind: SuiteKind, config: &ExperimentConfig, out_dir: &Path) -> Result<SuiteReport> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    match kind {
        SuiteKind::Snr => {
            let (_, report) = run_experiment(config, &out_dir.join("run"))?;
            for r in &report.snr {
                rows.push(SuiteRow {
                    label: "proposed".into(),
                    snr_db: r.snr_db,
                    auc: r.auc,
                    silhouette: Some(r.silhouette),
                });
            }
        }
        SuiteKind::Baselines => {
            let dir = out_dir.join("run");
            run_experiment(config, &dir)?;
            let ck = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
            let dataset = crate::signal::read_dataset(&dir.join(DATASET_FILE))?;
            let centers = ck.semantic.as_ref().ok_or_else(|| RedError::Format("checkpoint without centers".into()))?;
            for &snr_db in &config.eval.snr_db {
                let view = TestView::build(&ck.model, centers, &dataset, snr_db, config.noise_seed())
                    .map_err(|e| e.in_stage("eval"))?;
                let b = baseline_aucs(&ck.model, &dataset, &view, &config.eval, config.seed)
                    .map_err(|e| e.in_stage("baselines"))?;
                for (label, auc) in [("proposed", view.roc()?.auc), ("iforest", b.iforest), ("lof", b.lof)] {
                    rows.push(SuiteRow {
                        label: label.into(),
                        snr_db,
                        auc,
                        silhouette: None,
                    });
                }
            }
        }
        SuiteKind::Ablation => {
            let snr_db = config.eval.snr_db[0];
            for (label, drop) in ablation_variants() {
                let mut cfg = config.clone();
                cfg.ablation.drop = drop;
                cfg.eval.snr_db = vec![snr_db];
                let name = format!("variant_{}", label.replace('-', "minus_").to_lowercase());
                let (_, report) = run_experiment(&cfg, &out_dir.join(name))?;
                rows.push(SuiteRow {
                    label: label.into(),
                    snr_db,
                    auc: report.snr[0].auc,
                    silhouette: Some(report.snr[0].silhouette),
                });
            }
        }
    }
    let report = SuiteReport {
        kind,
        config_sha256: config.hash()?,
        rows,
    };
    fs::write(out_dir.join(format!("suite_{}.toml", kind.name())), toml_text(&report)?)?;
    Ok(report)
}

/// Simulates the config's dataset and writes it with its metadata sidecar.
pub fn generate_dataset(config: &ExperimentConfig, path: &Path) -> Result<IQDataset> {
    config.validate()?;
    let ds = build_dataset(&config.dataset_config()).map_err(|e| e.in_stage("gen-data"))?;
    write_dataset(path, &ds)?;
    DatasetMeta::new(&config.dataset_config(), ds.normalization)?.write(path)?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub noise_seed: u64,
    pub snr: Vec<SnrReport>,
}

impl EvalReport {
    pub fn to_toml(&self) -> Result<String> {
        toml_text(self)
    }
}

/// Scores a checkpoint's detector on the test split at each SNR.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    dataset: &IQDataset,
    snr_db: &[f64],
    noise_seed: u64,
    lambda_grid: &[f64],
) -> Result<EvalReport> {
    let centers = checkpoint
        .semantic
        .as_ref()
        .ok_or_else(|| RedError::Format("checkpoint has no detector centers".into()))?;
    let snr = snr_db
        .iter()
        .map(|&s| {
            let view = TestView::build(&checkpoint.model, centers, dataset, s, noise_seed)?;
            Ok(snr_report(&view, centers, lambda_grid)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { noise_seed, snr })
}
