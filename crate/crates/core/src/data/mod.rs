//! Datasets of per-modality features: loading, writing and synthesis.

mod container;
mod synth;

pub use container::{Container, Modality, MAGIC, VERSION};
pub use synth::{generate_synthetic, SynthSpec};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, UmcError};
use crate::numerics::Mat;

/// A padded feature sequence; only the first `len` frames are meaningful.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub frames: Mat<f32>,
    pub len: usize,
}

impl Sequence {
    /// The unpadded prefix.
    pub fn valid(&self) -> Mat<f32> {
        self.frames.head_rows(self.len)
    }

    /// Mean over the valid frames (zeros when empty).
    pub fn mean(&self) -> Vec<f32> {
        let mut out = vec![0.0f32; self.frames.cols()];
        if self.len == 0 {
            return out;
        }
        for r in 0..self.len {
            for (o, &v) in out.iter_mut().zip(self.frames.row(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= self.len as f32;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub id: usize,
    pub text: Vec<f32>,
    pub audio: Sequence,
    pub video: Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub text_dim: usize,
    pub audio_len: usize,
    pub audio_dim: usize,
    pub video_len: usize,
    pub video_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<FeatureRecord>,
    /// Ground truth, used for evaluation only.
    pub labels: Option<Vec<usize>>,
    pub num_classes: usize,
    pub dims: Dims,
}

/// Label-free view of a dataset handed to training code.
#[derive(Clone, Copy, Debug)]
pub struct Features<'a> {
    pub records: &'a [FeatureRecord],
    pub num_classes: usize,
    pub dims: Dims,
}

impl Features<'_> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Z-score every feature dimension per modality over valid frames.
    pub normalize: bool,
}

impl Dataset {
    pub fn features(&self) -> Features<'_> {
        Features {
            records: &self.records,
            num_classes: self.num_classes,
            dims: self.dims,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(UmcError::CorruptData("dataset has no records".into()));
        }
        if self.records.len() < self.num_classes {
            return Err(UmcError::CountMismatch {
                what: "records (fewer than classes)".into(),
                expected: self.num_classes,
                got: self.records.len(),
            });
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.records.len() {
                return Err(UmcError::CountMismatch {
                    what: "labels".into(),
                    expected: self.records.len(),
                    got: labels.len(),
                });
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes) {
                return Err(UmcError::LabelOutOfRange {
                    label: bad,
                    num_classes: self.num_classes,
                });
            }
        }
        Ok(())
    }

    /// Split the dataset into its three modality containers.
    pub fn to_containers(&self) -> [Container; 3] {
        let d = self.dims;
        let mut text = Container {
            modality: Modality::Text,
            seq_len: 1,
            dim: d.text_dim,
            lens: Vec::new(),
            values: Vec::new(),
        };
        let mut audio = Container {
            modality: Modality::Audio,
            seq_len: d.audio_len,
            dim: d.audio_dim,
            lens: Vec::new(),
            values: Vec::new(),
        };
        let mut video = Container {
            modality: Modality::Video,
            seq_len: d.video_len,
            dim: d.video_dim,
            lens: Vec::new(),
            values: Vec::new(),
        };
        for r in &self.records {
            text.lens.push(1);
            text.values.extend_from_slice(&r.text);
            audio.lens.push(r.audio.len as u32);
            audio.values.extend_from_slice(r.audio.frames.data());
            video.lens.push(r.video.len as u32);
            video.values.extend_from_slice(r.video.frames.data());
        }
        [text, audio, video]
    }

    fn from_containers(
        text: Container,
        audio: Container,
        video: Container,
        labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        for (c, want) in [
            (&text, Modality::Text),
            (&audio, Modality::Audio),
            (&video, Modality::Video),
        ] {
            if c.modality != want {
                return Err(UmcError::BadContainer(format!(
                    "expected {} container, found {}",
                    want.name(),
                    c.modality.name()
                )));
            }
        }
        if text.seq_len != 1 {
            return Err(UmcError::BadContainer(
                "text container must have seq_len 1".into(),
            ));
        }
        let n = text.count();
        for c in [&audio, &video] {
            if c.count() != n {
                return Err(UmcError::CountMismatch {
                    what: format!("{} container", c.modality.name()),
                    expected: n,
                    got: c.count(),
                });
            }
        }
        let dims = Dims {
            text_dim: text.dim,
            audio_len: audio.seq_len,
            audio_dim: audio.dim,
            video_len: video.seq_len,
            video_dim: video.dim,
        };
        let seq = |c: &Container, i: usize| Sequence {
            frames: Mat::from_vec(c.seq_len, c.dim, c.sample(i).to_vec())
                .expect("container stride"),
            len: c.lens[i] as usize,
        };
        let records = (0..n)
            .map(|i| FeatureRecord {
                id: i,
                text: text.sample(i).to_vec(),
                audio: seq(&audio, i),
                video: seq(&video, i),
            })
            .collect();
        let ds = Dataset {
            records,
            labels,
            num_classes,
            dims,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Per-dimension z-scoring of every modality, statistics over valid frames.
    pub fn normalize(&mut self) {
        let d = self.dims;
        let mut text_rows: Vec<&mut [f32]> = self
            .records
            .iter_mut()
            .map(|r| r.text.as_mut_slice())
            .collect();
        zscore_rows(&mut text_rows, d.text_dim);
        let mut audio_rows: Vec<&mut [f32]> = self
            .records
            .iter_mut()
            .flat_map(|r| {
                let len = r.audio.len;
                r.audio
                    .frames
                    .data_mut()
                    .chunks_exact_mut(d.audio_dim.max(1))
                    .take(len)
            })
            .collect();
        zscore_rows(&mut audio_rows, d.audio_dim);
        let mut video_rows: Vec<&mut [f32]> = self
            .records
            .iter_mut()
            .flat_map(|r| {
                let len = r.video.len;
                r.video
                    .frames
                    .data_mut()
                    .chunks_exact_mut(d.video_dim.max(1))
                    .take(len)
            })
            .collect();
        zscore_rows(&mut video_rows, d.video_dim);
    }
}

fn zscore_rows(rows: &mut [&mut [f32]], dim: usize) {
    if rows.is_empty() {
        return;
    }
    let n = rows.len() as f64;
    let mut sum = vec![0.0f64; dim];
    let mut sq = vec![0.0f64; dim];
    for r in rows.iter() {
        for (k, &v) in r.iter().enumerate() {
            sum[k] += v as f64;
            sq[k] += (v as f64) * (v as f64);
        }
    }
    for r in rows.iter_mut() {
        for (k, v) in r.iter_mut().enumerate() {
            let mean = sum[k] / n;
            let var = (sq[k] / n - mean * mean).max(0.0);
            let sd = if var > 1e-12 { var.sqrt() } else { 1.0 };
            *v = ((*v as f64 - mean) / sd) as f32;
        }
    }
}

/// Parsed `key=value` manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub text: PathBuf,
    pub audio: PathBuf,
    pub video: PathBuf,
    pub labels: Option<PathBuf>,
    pub num_classes: usize,
}

impl Manifest {
    /// Relative paths resolve against the manifest's directory.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                UmcError::BadConfig(format!("manifest line {}: expected key=value", lineno + 1))
            })?;
            kv.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        let path = |key: &str| -> Result<PathBuf> {
            let v = kv
                .get(key)
                .ok_or_else(|| UmcError::BadConfig(format!("manifest missing `{key}`")))?;
            Ok(base.join(v))
        };
        let num_classes = kv
            .get("num_classes")
            .ok_or_else(|| UmcError::BadConfig("manifest missing `num_classes`".into()))?
            .parse::<usize>()
            .map_err(|e| UmcError::BadConfig(format!("num_classes: {e}")))?;
        if num_classes == 0 {
            return Err(UmcError::BadConfig("num_classes must be positive".into()));
        }
        Ok(Self {
            text: path("text")?,
            audio: path("audio")?,
            video: path("video")?,
            labels: kv.get("labels").map(|v| base.join(v)),
            num_classes,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or_else(|| Path::new(".")))
    }
}

/// One integer label per line.
pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse::<usize>()
                .map_err(|e| UmcError::CorruptData(format!("label line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    parse_labels(&fs::read_to_string(path)?)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    load_dataset_with(manifest_path, LoadOptions::default())
}

pub fn load_dataset_with(manifest_path: &Path, opts: LoadOptions) -> Result<Dataset> {
    let m = Manifest::read(manifest_path)?;
    let text = Container::read(&m.text)?;
    let audio = Container::read(&m.audio)?;
    let video = Container::read(&m.video)?;
    let labels = m.labels.as_deref().map(read_labels).transpose()?;
    let mut ds = Dataset::from_containers(text, audio, video, labels, m.num_classes)?;
    if opts.normalize {
        ds.normalize();
    }
    Ok(ds)
}

/// Write containers, labels (if present) and a manifest named `manifest.txt` into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let [text, audio, video] = ds.to_containers();
    text.write(&dir.join("text.umcf"))?;
    audio.write(&dir.join("audio.umcf"))?;
    video.write(&dir.join("video.umcf"))?;
    let mut manifest = format!(
        "text=text.umcf\naudio=audio.umcf\nvideo=video.umcf\nnum_classes={}\n",
        ds.num_classes
    );
    if let Some(labels) = &ds.labels {
        write_labels(&dir.join("labels.txt"), labels)?;
        manifest.push_str("labels=labels.txt\n");
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest)?;
    Ok(path)
}
