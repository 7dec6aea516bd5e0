//! End-to-end runs: load, train per seed, infer, score, and write reports.

mod config;

pub use config::{parse_axis, parse_mode, parse_seeds, RunConfig};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    load_dataset_with, parse_labels, write_labels, Container, Dataset, LoadOptions, Modality,
};
use crate::error::{Result, UmcError};
use crate::metrics::{percent, MetricReport};
use crate::numerics::Mat;
use crate::trainer::{infer, save_checkpoint, train, RoundLog, UmcNetwork};

/// Per-seed results; `metrics` is absent when the dataset has no labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub metrics: Option<MetricReport>,
    pub pretrain_losses: Vec<f64>,
    pub rounds: Vec<RoundLog>,
}

/// Scores ×100 with two decimals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub nmi: f64,
    pub ari: f64,
    pub acc: f64,
    pub fmi: f64,
    pub avg: f64,
}

impl ScoreRow {
    fn from_fn(f: impl Fn(&MetricReport) -> f64, metrics: &[&MetricReport]) -> (f64, f64) {
        let n = metrics.len() as f64;
        let mean = metrics.iter().map(|m| f(m)).sum::<f64>() / n;
        let var = if metrics.len() > 1 {
            metrics.iter().map(|m| (f(m) - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    }

    /// Mean and sample standard deviation over seeds, unscaled.
    pub fn aggregate(metrics: &[&MetricReport]) -> (ScoreRow, ScoreRow) {
        let fs: [fn(&MetricReport) -> f64; 5] = [
            |m| m.nmi,
            |m| m.ari,
            |m| m.acc,
            |m| m.fmi,
            MetricReport::average,
        ];
        let [nmi, ari, acc, fmi, avg] = fs.map(|f| Self::from_fn(f, metrics));
        (
            ScoreRow {
                nmi: nmi.0,
                ari: ari.0,
                acc: acc.0,
                fmi: fmi.0,
                avg: avg.0,
            },
            ScoreRow {
                nmi: nmi.1,
                ari: ari.1,
                acc: acc.1,
                fmi: fmi.1,
                avg: avg.1,
            },
        )
    }

    pub fn percent(self) -> ScoreRow {
        ScoreRow {
            nmi: percent(self.nmi),
            ari: percent(self.ari),
            acc: percent(self.acc),
            fmi: percent(self.fmi),
            avg: percent(self.avg),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Canonical `key=value` text of the configuration that produced this report.
    pub config: String,
    pub config_hash: String,
    pub num_samples: usize,
    pub num_classes: usize,
    pub seeds: Vec<u64>,
    pub rows: Vec<SeedRow>,
    /// Mean and standard deviation over seeds, ×100; absent without labels.
    pub mean: Option<ScoreRow>,
    pub std: Option<ScoreRow>,
    pub warnings: Vec<String>,
}

impl Report {
    /// Unscaled mean over seeds.
    pub fn mean_raw(&self) -> Option<ScoreRow> {
        let ms: Vec<&MetricReport> = self
            .rows
            .iter()
            .filter_map(|r| r.metrics.as_ref())
            .collect();
        (!ms.is_empty()).then(|| ScoreRow::aggregate(&ms).0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-seed rows, then mean and std rows, ×100.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("seed,nmi,ari,acc,fmi,avg\n");
        let mut line = |name: &str, s: ScoreRow| {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{}",
                s.nmi, s.ari, s.acc, s.fmi, s.avg
            );
        };
        for r in &self.rows {
            if let Some(m) = &r.metrics {
                let s = ScoreRow {
                    nmi: m.nmi,
                    ari: m.ari,
                    acc: m.acc,
                    fmi: m.fmi,
                    avg: m.average(),
                };
                line(&r.seed.to_string(), s.percent());
            }
        }
        if let (Some(m), Some(s)) = (self.mean, self.std) {
            line("mean", m);
            line("std", s);
        }
        out
    }
}

/// Everything one seed produces.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub row: SeedRow,
    pub assignments: Vec<usize>,
    pub network: UmcNetwork,
    pub embeddings: Mat<f64>,
}

pub struct RunOutput {
    pub report: Report,
    pub runs: Vec<SeedRun>,
}

pub fn load(cfg: &RunConfig) -> Result<Dataset> {
    let manifest = cfg
        .manifest
        .as_deref()
        .ok_or_else(|| UmcError::BadConfig("data.manifest is not set".into()))?;
    load_dataset_with(
        manifest,
        LoadOptions {
            normalize: cfg.normalize,
        },
    )
}

/// Train, infer and score one seed. Labels are read only for scoring.
pub fn run_seed(ds: &Dataset, cfg: &RunConfig, seed: u64) -> Result<SeedRun> {
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let art = train(ds.features(), cfg.encoder, &train_cfg, &cfg.select)?;
    let assignments = infer(
        &art.embeddings,
        ds.num_classes,
        train_cfg.kmeans_restarts,
        seed,
    )?;
    let metrics = match &ds.labels {
        Some(gt) => Some(MetricReport::evaluate(gt, &assignments, ds.num_classes)?),
        None => None,
    };
    Ok(SeedRun {
        row: SeedRow {
            seed,
            metrics,
            pretrain_losses: art.pretrain_losses,
            rounds: art.rounds,
        },
        assignments,
        network: art.network,
        embeddings: art.embeddings,
    })
}

/// All configured seeds on an already loaded dataset.
pub fn run_dataset(ds: &Dataset, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    ds.validate()?;
    let runs: Vec<SeedRun> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(ds, cfg, s))
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    if ds.labels.is_none() {
        warnings.push("dataset has no labels; metrics skipped".to_owned());
    }
    let ms: Vec<&MetricReport> = runs.iter().filter_map(|r| r.row.metrics.as_ref()).collect();
    let (mean, std) = if ms.is_empty() {
        (None, None)
    } else {
        let (m, s) = ScoreRow::aggregate(&ms);
        (Some(m.percent()), Some(s.percent()))
    };
    let report = Report {
        config: cfg.canonical_text(),
        config_hash: cfg.hash_hex(),
        num_samples: ds.len(),
        num_classes: ds.num_classes,
        seeds: cfg.seeds.clone(),
        rows: runs.iter().map(|r| r.row.clone()).collect(),
        mean,
        std,
        warnings,
    };
    Ok(RunOutput { report, runs })
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    run_dataset(&load(cfg)?, cfg)
}

fn embeddings_container(m: &Mat<f64>) -> Container {
    Container {
        modality: Modality::Fused,
        seq_len: 1,
        dim: m.cols(),
        lens: vec![1; m.rows()],
        values: m.data().iter().map(|&v| v as f32).collect(),
    }
}

/// Write `report.json`, `summary.csv`, per-seed assignments and the optional
/// embedding dumps and checkpoints into `dir`. Returns the report path.
pub fn write_outputs(dir: &Path, cfg: &RunConfig, out: &RunOutput) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    for r in &out.runs {
        let s = r.row.seed;
        write_labels(
            &dir.join(format!("assignments_seed{s}.txt")),
            &r.assignments,
        )?;
        if cfg.save_embeddings {
            embeddings_container(&r.embeddings)
                .write(&dir.join(format!("embeddings_seed{s}.umcf")))?;
        }
        if cfg.save_checkpoint {
            save_checkpoint(
                &dir.join(format!("checkpoint_seed{s}.umck")),
                &r.network,
                &cfg.hash(),
            )?;
        }
    }
    fs::write(dir.join("summary.csv"), out.report.summary_csv())?;
    let path = dir.join("report.json");
    fs::write(&path, out.report.to_json())?;
    Ok(path)
}

/// One grid point of a sweep.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub assignments: Vec<(String, String)>,
    pub dir: PathBuf,
    pub report: Report,
}

/// Run every grid point into `output_dir/point_NNN` and write `sweep_summary.csv`.
pub fn sweep(cfg: &RunConfig) -> Result<Vec<SweepPoint>> {
    let points = cfg.expand_grid()?;
    for (_, p) in &points {
        p.validate()?;
    }
    let ds = load(cfg)?;
    let mut out = Vec::with_capacity(points.len());
    for (i, (assignments, mut p)) in points.into_iter().enumerate() {
        let dir = cfg.output_dir.join(format!("point_{i:03}"));
        p.output_dir = dir.clone();
        let run = run_dataset(&ds, &p)?;
        write_outputs(&dir, &p, &run)?;
        out.push(SweepPoint {
            assignments,
            dir,
            report: run.report,
        });
    }
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("sweep_summary.csv"), sweep_csv(&out))?;
    Ok(out)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("point");
    if let Some(p) = points.first() {
        for (k, _) in &p.assignments {
            out.push(',');
            out.push_str(k);
        }
    }
    out.push_str(",nmi,ari,acc,fmi,avg,avg_std\n");
    for (i, p) in points.iter().enumerate() {
        let _ = write!(out, "{i}");
        for (_, v) in &p.assignments {
            let _ = write!(out, ",{v}");
        }
        match (p.report.mean, p.report.std) {
            (Some(m), Some(s)) => {
                let _ = writeln!(
                    out,
                    ",{},{},{},{},{},{}",
                    m.nmi, m.ari, m.acc, m.fmi, m.avg, s.avg
                );
            }
            _ => out.push_str(",,,,,,\n"),
        }
    }
    out
}

/// Score an assignment file against a labels file. `k` defaults to the
/// larger of the two label ranges.
pub fn evaluate_files(assignments: &Path, labels: &Path, k: Option<usize>) -> Result<MetricReport> {
    let pred = parse_labels(&fs::read_to_string(assignments)?)?;
    let gt = parse_labels(&fs::read_to_string(labels)?)?;
    if pred.len() != gt.len() {
        return Err(UmcError::DimMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    let span = gt.iter().chain(&pred).max().map_or(0, |&m| m + 1);
    MetricReport::evaluate(&gt, &pred, k.unwrap_or(span).max(span))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, write_dataset, SynthSpec};

    fn small_config(dir: &Path) -> RunConfig {
        let spec = SynthSpec {
            samples_per_class: 12,
            text_dim: 6,
            audio_dim: 4,
            video_dim: 4,
            audio_len: 3,
            video_len: 3,
            ..SynthSpec::small()
        };
        let manifest =
            write_dataset(&dir.join("data"), &generate_synthetic(&spec).unwrap()).unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "model.hidden_dim=8\nmodel.ff_dim=16\ntrain.proj_dim=4\ntrain.pretrain_epochs=1\n\
             train.batch_size=16\ntrain.t0=0.6\ntrain.delta=0.2\ntrain.kmeans_restarts=2\nrun.seeds=0,1\n",
        )
        .unwrap();
        cfg.manifest = Some(manifest);
        cfg.output_dir = dir.join("out");
        cfg
    }

    #[test]
    fn run_writes_consistent_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.save_embeddings = true;
        cfg.save_checkpoint = true;
        let out = run(&cfg).unwrap();
        let path = write_outputs(&cfg.output_dir, &cfg, &out).unwrap();
        let json = fs::read_to_string(path).unwrap();
        let report: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(report.to_json(), json);
        assert_eq!(report.rows[1].metrics, out.report.rows[1].metrics);
        assert_eq!(report.seeds, vec![0, 1]);
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].rounds.len(), 2);
        let raw = report.mean_raw().unwrap();
        assert_eq!(report.mean.unwrap(), raw.percent());
        assert_eq!(
            RunConfig::parse(&report.config).unwrap().hash_hex(),
            report.config_hash
        );
        for s in [0, 1] {
            let a = cfg.output_dir.join(format!("assignments_seed{s}.txt"));
            let labels = cfg.manifest.as_ref().unwrap().with_file_name("labels.txt");
            let m = evaluate_files(&a, &labels, None).unwrap();
            assert_eq!(Some(m), report.rows[s as usize].metrics);
            let emb =
                Container::read(&cfg.output_dir.join(format!("embeddings_seed{s}.umcf"))).unwrap();
            assert_eq!(
                (emb.modality, emb.count(), emb.dim),
                (Modality::Fused, 48, 8)
            );
            assert!(cfg
                .output_dir
                .join(format!("checkpoint_seed{s}.umck"))
                .exists());
        }
        let csv = fs::read_to_string(cfg.output_dir.join("summary.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn missing_labels_warn() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let mut ds = load(&cfg).unwrap();
        ds.labels = None;
        let out = run_dataset(&ds, &cfg).unwrap();
        assert!(out.report.mean.is_none());
        assert_eq!(out.report.warnings.len(), 1);
        assert!(out
            .runs
            .iter()
            .all(|r| r.assignments.len() == 48 && r.row.metrics.is_none()));
    }

    #[test]
    fn sweep_points_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.seeds = vec![0];
        cfg.set("sweep.train.tau1", "0.1,0.2,0.3").unwrap();
        let pts = sweep(&cfg).unwrap();
        assert_eq!(pts.len(), 3);
        for p in &pts {
            assert!(p.dir.join("report.json").exists());
        }
        let csv = fs::read_to_string(cfg.output_dir.join("sweep_summary.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("point,train.tau1,nmi"));
        cfg.grid.clear();
        assert!(matches!(sweep(&cfg), Err(UmcError::BadGrid)));
    }

    #[test]
    fn eval_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
        fs::write(&a, "0\n1\n").unwrap();
        fs::write(&b, "0\n1\n1\n").unwrap();
        assert!(matches!(
            evaluate_files(&a, &b, None),
            Err(UmcError::DimMismatch { .. })
        ));
        fs::write(&a, "1\n0\n0\n").unwrap();
        let m = evaluate_files(&a, &b, None).unwrap();
        assert_eq!((m.acc, m.nmi, m.ari), (1.0, 1.0, 1.0));
    }
}
