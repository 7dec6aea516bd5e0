//! Synthetic multimodal datasets with planted class structure.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Result, UmcError};
use crate::numerics::{Mat, Rng};

use super::{Dataset, Dims, FeatureRecord, Sequence};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub text_dim: usize,
    pub audio_dim: usize,
    pub video_dim: usize,
    pub audio_len: usize,
    pub video_len: usize,
    /// Approximate distance scale between class centers, per modality.
    pub text_separation: f64,
    pub audio_separation: f64,
    pub video_separation: f64,
    /// Standard deviation of the per-sample offset from its class center.
    pub noise: f64,
    /// Class pairs sharing a single text center.
    pub text_ambiguity_pairs: Vec<(usize, usize)>,
    /// Fraction of samples whose non-verbal noise is multiplied by `hard_noise`.
    pub hard_fraction: f64,
    pub hard_noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Small 4-class default used by the CLI and tests.
    pub fn small() -> Self {
        Self {
            num_classes: 4,
            samples_per_class: 100,
            text_dim: 32,
            audio_dim: 16,
            video_dim: 16,
            audio_len: 8,
            video_len: 8,
            text_separation: 4.0,
            audio_separation: 4.0,
            video_separation: 4.0,
            noise: 1.0,
            text_ambiguity_pairs: Vec::new(),
            hard_fraction: 0.0,
            hard_noise: 1.0,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.samples_per_class < 2 {
            return Err(UmcError::SpecTooSmall(format!(
                "samples_per_class = {} (need ≥ 2)",
                self.samples_per_class
            )));
        }
        if self.num_classes == 0 {
            return Err(UmcError::SpecTooSmall("num_classes = 0".into()));
        }
        let dims = [
            self.text_dim,
            self.audio_dim,
            self.video_dim,
            self.audio_len,
            self.video_len,
        ];
        if dims.contains(&0) {
            return Err(UmcError::SpecTooSmall("zero dimension or length".into()));
        }
        let seps = [
            self.text_separation,
            self.audio_separation,
            self.video_separation,
        ];
        if seps.iter().any(|&s| !(s > 0.0)) {
            return Err(UmcError::BadConfig("separation must be positive".into()));
        }
        if !(self.noise > 0.0) {
            return Err(UmcError::BadConfig("noise must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) || !(self.hard_noise > 0.0) {
            return Err(UmcError::BadConfig(
                "hard fraction must lie in [0, 1] and hard noise be positive".into(),
            ));
        }
        for &(a, b) in &self.text_ambiguity_pairs {
            if a >= self.num_classes || b >= self.num_classes {
                return Err(UmcError::BadConfig(format!(
                    "ambiguity pair ({a},{b}) references a missing class"
                )));
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `k` centers of norm `separation / √2`, so pairwise distances are ≈ `separation`.
fn centers(k: usize, dim: usize, separation: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter()
                .map(|x| x / norm * separation / std::f64::consts::SQRT_2)
                .collect()
        })
        .collect()
}

/// Frames share the sample's offset plus a smaller per-frame jitter, so
/// averaging over time does not remove the sample-level noise.
fn sequence(center: &[f64], max_len: usize, noise: f64, rng: &mut Rng) -> Sequence {
    let dim = center.len();
    let len = rng.random_range(max_len.div_ceil(2)..=max_len);
    let offset: Vec<f64> = (0..dim).map(|_| noise * gaussian(rng)).collect();
    let mut frames = Mat::zeros(max_len, dim);
    for r in 0..len {
        for c in 0..dim {
            let v = center[c] + offset[c] + 0.5 * noise * gaussian(rng);
            frames.set(r, c, v as f32);
        }
    }
    Sequence { frames, len }
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let k = spec.num_classes;
    let mut rng = Rng::new(spec.seed, "synth/centers");
    let mut text_c = centers(k, spec.text_dim, spec.text_separation, &mut rng);
    let audio_c = centers(k, spec.audio_dim, spec.audio_separation, &mut rng);
    let video_c = centers(k, spec.video_dim, spec.video_separation, &mut rng);
    for &(a, b) in &spec.text_ambiguity_pairs {
        text_c[b] = text_c[a].clone();
    }

    let mut order: Vec<usize> = (0..k)
        .flat_map(|c| std::iter::repeat_n(c, spec.samples_per_class))
        .collect();
    let mut srng = Rng::new(spec.seed, "synth/order");
    order.shuffle(&mut srng);

    let n = order.len();
    let mut hard = vec![false; n];
    let mut pick: Vec<usize> = (0..n).collect();
    pick.shuffle(&mut Rng::new(spec.seed, "synth/hard"));
    for &i in &pick[..(spec.hard_fraction * n as f64).round() as usize] {
        hard[i] = true;
    }

    let mut rng = Rng::new(spec.seed, "synth/samples");
    let mut records = Vec::with_capacity(n);
    for (id, &c) in order.iter().enumerate() {
        let text = text_c[c]
            .iter()
            .map(|&m| (m + spec.noise * gaussian(&mut rng)) as f32)
            .collect();
        let nv = if hard[id] {
            spec.noise * spec.hard_noise
        } else {
            spec.noise
        };
        let audio = sequence(&audio_c[c], spec.audio_len, nv, &mut rng);
        let video = sequence(&video_c[c], spec.video_len, nv, &mut rng);
        records.push(FeatureRecord {
            id,
            text,
            audio,
            video,
        });
    }
    Ok(Dataset {
        records,
        labels: Some(order),
        num_classes: k,
        dims: Dims {
            text_dim: spec.text_dim,
            audio_len: spec.audio_len,
            audio_dim: spec.audio_dim,
            video_len: spec.video_len,
            video_dim: spec.video_dim,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let spec = SynthSpec::small();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let labels = a.labels.as_ref().unwrap();
        for c in 0..4 {
            assert_eq!(labels.iter().filter(|&&l| l == c).count(), 100);
        }
        for r in &a.records {
            assert!(r.audio.len >= 4 && r.audio.len <= 8);
            for row in r.audio.len..8 {
                assert!(r.audio.frames.row(row).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn ambiguity_pairs_share_text_center() {
        let spec = SynthSpec {
            text_ambiguity_pairs: vec![(0, 1)],
            noise: 1e-3,
            ..SynthSpec::small()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let labels = ds.labels.as_ref().unwrap();
        let first = |c: usize| labels.iter().position(|&l| l == c).unwrap();
        let (a, b, c) = (first(0), first(1), first(2));
        let d01 = crate::numerics::euclidean(&ds.records[a].text, &ds.records[b].text).unwrap();
        let d02 = crate::numerics::euclidean(&ds.records[a].text, &ds.records[c].text).unwrap();
        assert!(d01 < 0.1 && d02 > 1.0);
        let a01 =
            crate::numerics::euclidean(&ds.records[a].audio.mean(), &ds.records[b].audio.mean())
                .unwrap();
        assert!(a01 > 1.0);
    }

    #[test]
    fn too_small_is_rejected() {
        let spec = SynthSpec {
            samples_per_class: 1,
            ..SynthSpec::small()
        };
        assert!(matches!(
            generate_synthetic(&spec),
            Err(UmcError::SpecTooSmall(_))
        ));
        let spec = SynthSpec {
            text_ambiguity_pairs: vec![(0, 9)],
            ..SynthSpec::small()
        };
        assert!(generate_synthetic(&spec).is_err());
    }
}
