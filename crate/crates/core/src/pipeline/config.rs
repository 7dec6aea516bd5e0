//! Flat `key=value` run configuration with dotted section prefixes.
//!
//! ```text
//! data.manifest=data/manifest.txt
//! train.t0=0.1
//! select.mode=fixed:10
//! sweep.train.tau1=0.1,0.2,0.3
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::encoder::EncoderConfig;
use crate::error::{Result, UmcError};
use crate::selection::{CohesionObjective, SelectionConfig, SelectionMode};
use crate::trainer::{Ablation, TrainConfig, Variant};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    /// Z-score features after loading.
    pub normalize: bool,
    pub output_dir: PathBuf,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub select: SelectionConfig,
    pub seeds: Vec<u64>,
    pub save_embeddings: bool,
    pub save_checkpoint: bool,
    /// Sweep axes as `(key, values)`; empty for a single run.
    pub grid: Vec<(String, Vec<String>)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            normalize: true,
            output_dir: PathBuf::from("umc-out"),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            select: SelectionConfig::default(),
            seeds: (0..5).collect(),
            save_embeddings: false,
            save_checkpoint: false,
            grid: Vec::new(),
        }
    }
}

fn bad(msg: String) -> UmcError {
    UmcError::BadConfig(msg)
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| bad(format!("{key}: cannot parse {value:?}")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(bad(format!("{key}: expected true or false, got {other:?}"))),
    }
}

fn named<T: Copy>(key: &str, value: &str, table: &[(&'static str, T)]) -> Result<T> {
    let v = value.trim();
    table
        .iter()
        .find(|(n, _)| *n == v)
        .map(|&(_, x)| x)
        .ok_or_else(|| {
            let names: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
            bad(format!("{key}: {v:?} is not one of {}", names.join(", ")))
        })
}

fn name_of<T: PartialEq>(x: &T, table: &[(&'static str, T)]) -> &'static str {
    table
        .iter()
        .find(|(_, t)| t == x)
        .map(|(n, _)| *n)
        .expect("every value is named")
}

/// `auto`, `random` or `fixed:K`.
pub fn parse_mode(value: &str) -> Result<SelectionMode> {
    match value.trim() {
        "auto" => Ok(SelectionMode::Auto),
        "random" => Ok(SelectionMode::Random),
        other => match other.strip_prefix("fixed:") {
            Some(k) => Ok(SelectionMode::Fixed(num("select.mode", k)?)),
            None => Err(bad(format!(
                "select.mode: expected auto, random or fixed:K, got {other:?}"
            ))),
        },
    }
}

fn mode_text(mode: SelectionMode) -> String {
    match mode {
        SelectionMode::Auto => "auto".into(),
        SelectionMode::Random => "random".into(),
        SelectionMode::Fixed(k) => format!("fixed:{k}"),
    }
}

const COHESION: [(&str, CohesionObjective); 2] = [
    ("max", CohesionObjective::Max),
    ("min", CohesionObjective::Min),
];

/// Comma-separated seeds; `a-b` expands to an inclusive range.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (num("run.seeds", a)?, num("run.seeds", b)?);
                if a > b {
                    return Err(bad(format!("run.seeds: empty range {part}")));
                }
                out.extend(a..=b);
            }
            None => out.push(num("run.seeds", part)?),
        }
    }
    if out.is_empty() {
        return Err(bad("run.seeds: no seeds".into()));
    }
    Ok(out)
}

/// Grid values: comma list, or `start:stop:step` inclusive of `stop`.
pub fn parse_axis(key: &str, value: &str) -> Result<Vec<String>> {
    let parts: Vec<&str> = value.split(':').map(str::trim).collect();
    if parts.len() == 3 && !key.ends_with("select.mode") {
        let (a, b, s): (f64, f64, f64) = (
            num(key, parts[0])?,
            num(key, parts[1])?,
            num(key, parts[2])?,
        );
        if !(s > 0.0) || b < a {
            return Err(bad(format!("{key}: bad range {value}")));
        }
        let n = ((b - a) / s + 1e-9).floor() as usize + 1;
        return Ok((0..n)
            .map(|i| format!("{}", ((a + s * i as f64) * 1e9).round() / 1e9))
            .collect());
    }
    Ok(value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(str::to_owned)
        .collect())
}

impl RunConfig {
    /// Apply one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if let Some(axis) = key.strip_prefix("sweep.") {
            let values = parse_axis(axis, value)?;
            let mut probe = self.clone();
            for v in &values {
                probe.set(axis, v)?;
            }
            self.grid.retain(|(k, _)| k != axis);
            self.grid.push((axis.to_owned(), values));
            return Ok(());
        }
        let (e, t, s) = (&mut self.encoder, &mut self.train, &mut self.select);
        match key {
            "data.manifest" => self.manifest = Some(PathBuf::from(value.trim())),
            "data.normalize" => self.normalize = flag(key, value)?,
            "output.dir" => self.output_dir = PathBuf::from(value.trim()),
            "model.hidden_dim" => e.hidden_dim = num(key, value)?,
            "model.layers" => e.layers = num(key, value)?,
            "model.heads" => e.heads = num(key, value)?,
            "model.ff_dim" => e.ff_dim = num(key, value)?,
            "model.dropout" => e.dropout = num(key, value)?,
            "train.t0" => t.t0 = num(key, value)?,
            "train.delta" => t.delta = num(key, value)?,
            "train.batch_size" => t.batch_size = num(key, value)?,
            "train.pretrain_epochs" => t.pretrain_epochs = num(key, value)?,
            "train.round_epochs" => t.round_epochs = num(key, value)?,
            "train.lr_pretrain" => t.lr_pretrain = num(key, value)?,
            "train.lr_train" => t.lr_train = num(key, value)?,
            "train.tau1" => t.tau1 = num(key, value)?,
            "train.tau2" => t.tau2 = num(key, value)?,
            "train.tau3" => t.tau3 = num(key, value)?,
            "train.beta1" => t.beta1 = num(key, value)?,
            "train.beta2" => t.beta2 = num(key, value)?,
            "train.eps" => t.eps = num(key, value)?,
            "train.weight_decay" => t.weight_decay = num(key, value)?,
            "train.proj_dim" => t.proj_dim = num(key, value)?,
            "train.text_dropout" => t.text_dropout = num(key, value)?,
            "train.reuse_pretrain_head" => t.reuse_pretrain_head = flag(key, value)?,
            "train.kmeans_restarts" => t.kmeans_restarts = num(key, value)?,
            "train.variant" => t.variant = named(key, value, &Variant::ALL)?,
            "train.ablation" => t.ablation = named(key, value, &Ablation::ALL)?,
            "select.lower" => s.lower = num(key, value)?,
            "select.interval" => s.interval = num(key, value)?,
            "select.candidates" => s.candidates = num(key, value)?,
            "select.mode" => s.mode = parse_mode(value)?,
            "select.cohesion" => s.objective = named(key, value, &COHESION)?,
            "run.seeds" => self.seeds = parse_seeds(value)?,
            "run.save_embeddings" => self.save_embeddings = flag(key, value)?,
            "run.save_checkpoint" => self.save_checkpoint = flag(key, value)?,
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` text; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Every key in a fixed order; parsing this text gives back `self`.
    pub fn canonical_text(&self) -> String {
        let (e, t, s) = (&self.encoder, &self.train, &self.select);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        if let Some(m) = &self.manifest {
            put("data.manifest", m.display().to_string());
        }
        put("data.normalize", self.normalize.to_string());
        put("output.dir", self.output_dir.display().to_string());
        put("model.hidden_dim", e.hidden_dim.to_string());
        put("model.layers", e.layers.to_string());
        put("model.heads", e.heads.to_string());
        put("model.ff_dim", e.ff_dim.to_string());
        put("model.dropout", e.dropout.to_string());
        put("train.t0", t.t0.to_string());
        put("train.delta", t.delta.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.pretrain_epochs", t.pretrain_epochs.to_string());
        put("train.round_epochs", t.round_epochs.to_string());
        put("train.lr_pretrain", t.lr_pretrain.to_string());
        put("train.lr_train", t.lr_train.to_string());
        put("train.tau1", t.tau1.to_string());
        put("train.tau2", t.tau2.to_string());
        put("train.tau3", t.tau3.to_string());
        put("train.beta1", t.beta1.to_string());
        put("train.beta2", t.beta2.to_string());
        put("train.eps", t.eps.to_string());
        put("train.weight_decay", t.weight_decay.to_string());
        put("train.proj_dim", t.proj_dim.to_string());
        put("train.text_dropout", t.text_dropout.to_string());
        put(
            "train.reuse_pretrain_head",
            t.reuse_pretrain_head.to_string(),
        );
        put("train.kmeans_restarts", t.kmeans_restarts.to_string());
        put("train.variant", name_of(&t.variant, &Variant::ALL).into());
        put(
            "train.ablation",
            name_of(&t.ablation, &Ablation::ALL).into(),
        );
        put("select.lower", s.lower.to_string());
        put("select.interval", s.interval.to_string());
        put("select.candidates", s.candidates.to_string());
        put("select.mode", mode_text(s.mode));
        put("select.cohesion", name_of(&s.objective, &COHESION).into());
        put("run.seeds", seeds.join(","));
        put("run.save_embeddings", self.save_embeddings.to_string());
        put("run.save_checkpoint", self.save_checkpoint.to_string());
        for (k, vs) in &self.grid {
            put(&format!("sweep.{k}"), vs.join(","));
        }
        out
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_text().as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Range checks across all sections.
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        self.select.validate()?;
        if self.seeds.is_empty() {
            return Err(bad("run.seeds: no seeds".into()));
        }
        if self.train.proj_dim < 2 {
            return Err(bad(format!(
                "train.proj_dim {} below 2",
                self.train.proj_dim
            )));
        }
        if self.train.kmeans_restarts == 0 {
            return Err(bad("train.kmeans_restarts must be positive".into()));
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes, first axis slowest. Each point
    /// carries its `(key, value)` assignments and has an empty grid.
    pub fn expand_grid(&self) -> Result<Vec<(Vec<(String, String)>, RunConfig)>> {
        if self.grid.is_empty() || self.grid.iter().any(|(_, vs)| vs.is_empty()) {
            return Err(UmcError::BadGrid);
        }
        let mut base = self.clone();
        base.grid.clear();
        let mut points = vec![(Vec::new(), base)];
        for (key, values) in &self.grid {
            let mut next = Vec::with_capacity(points.len() * values.len());
            for (assign, cfg) in &points {
                for v in values {
                    let mut cfg: RunConfig = cfg.clone();
                    cfg.set(key, v)?;
                    let mut assign = assign.clone();
                    assign.push((key.clone(), v.clone()));
                    next.push((assign, cfg));
                }
            }
            points = next;
        }
        Ok(points)
    }
}
