//! Contrastive pretraining, the curriculum clustering / selection /
//! representation-learning loop, and final inference.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_round_with, kmeans, ClusterState};
use crate::contrastive::{mscl_loss, ucl_loss, ContrastiveHead, HeadRole, ViewBatch};
use crate::data::{Dims, FeatureRecord, Features};
use crate::encoder::{EncoderConfig, EncoderParams, Views};
use crate::error::{Result, UmcError};
use crate::numerics::{AdamW, AdamWConfig, DiffOp, Mat, Mode, Param, Rng};
use crate::selection::{select_all, SelectionConfig, SelectionMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Text features only, with two dropout views as the augmentation.
    TextOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    /// Skip contrastive pretraining.
    NoPretrain,
    /// Uniform random high-quality subsets.
    RandomStep2,
    /// Supervised pass only; low-quality samples are never trained on.
    SclOnly,
    /// Pretraining followed by clustering alone.
    Step1Kmeans,
    /// Pretraining followed by unsupervised contrastive rounds on every sample.
    Step1Ucl,
    /// Pretraining followed by pulling each embedding toward its centroid.
    Step1Mse,
}

impl Variant {
    pub const ALL: [(&'static str, Variant); 2] =
        [("full", Variant::Full), ("text_only", Variant::TextOnly)];
}

impl Ablation {
    pub const ALL: [(&'static str, Ablation); 7] = [
        ("none", Ablation::None),
        ("no_pretrain", Ablation::NoPretrain),
        ("random_step2", Ablation::RandomStep2),
        ("scl_only", Ablation::SclOnly),
        ("step1_kmeans", Ablation::Step1Kmeans),
        ("step1_ucl", Ablation::Step1Ucl),
        ("step1_mse", Ablation::Step1Mse),
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub t0: f64,
    pub delta: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub round_epochs: usize,
    pub lr_pretrain: f64,
    pub lr_train: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub proj_dim: usize,
    /// Dropout rate on `z_T` for the text-only views.
    pub text_dropout: f64,
    /// Reuse the pretraining head for the low-quality pass instead of a fresh φ₃.
    pub reuse_pretrain_head: bool,
    /// K-Means++ initialisations tried whenever clustering starts fresh.
    pub kmeans_restarts: usize,
    pub seed: u64,
    pub variant: Variant,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t0: 0.1,
            delta: 0.05,
            batch_size: 128,
            pretrain_epochs: 10,
            round_epochs: 1,
            lr_pretrain: 1e-3,
            lr_train: 5e-4,
            tau1: 0.2,
            tau2: 1.4,
            tau3: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            proj_dim: 64,
            text_dropout: 0.1,
            reuse_pretrain_head: false,
            kmeans_restarts: 10,
            seed: 0,
            variant: Variant::Full,
            ablation: Ablation::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(UmcError::BadConfig(m));
        if !(0.0..=1.0).contains(&self.t0) {
            return bad(format!("t0 {} outside [0, 1]", self.t0));
        }
        if !(self.delta > 0.0) {
            return bad(format!("delta {} must be positive", self.delta));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size {} below 2", self.batch_size));
        }
        for (name, tau) in [
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("tau3", self.tau3),
        ] {
            if !(tau > 0.0) {
                return bad(format!("{name} {tau} must be positive"));
            }
        }
        for (name, lr) in [
            ("lr_pretrain", self.lr_pretrain),
            ("lr_train", self.lr_train),
        ] {
            if !(lr >= 0.0) {
                return bad(format!("{name} {lr} must be non-negative"));
            }
        }
        if self.variant == Variant::TextOnly
            && !(self.text_dropout > 0.0 && self.text_dropout < 1.0)
        {
            return Err(UmcError::BadRate(self.text_dropout));
        }
        Ok(())
    }

    fn adamw(&self, lr: f64) -> AdamW {
        AdamW::new(AdamWConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        })
    }

    /// Views used by the contrastive objectives.
    pub fn train_views(&self) -> Views {
        match self.variant {
            Variant::Full => Views::Masked,
            Variant::TextOnly => Views::DropoutTwice {
                rate: self.text_dropout,
            },
        }
    }

    /// The single view clustered and reported.
    pub fn embed_views(&self) -> Views {
        match self.variant {
            Variant::Full => Views::Full,
            Variant::TextOnly => Views::TextOnly,
        }
    }
}

/// Curriculum rounds before the threshold reaches 1.
pub fn round_count(t0: f64, delta: f64) -> usize {
    ((1.0 - t0) / delta - 1e-9).ceil().max(0.0) as usize
}

/// Threshold used in round `r`.
pub fn threshold(t0: f64, delta: f64, r: usize) -> f64 {
    (t0 + delta * r as f64).min(1.0)
}

/// Encoder, fusion and the three projection heads.
#[derive(Clone, Debug, PartialEq)]
pub struct UmcNetwork {
    pub encoder: EncoderParams<f32>,
    pub phi1: ContrastiveHead<f32>,
    pub phi2: ContrastiveHead<f32>,
    pub phi3: ContrastiveHead<f32>,
}

impl UmcNetwork {
    pub fn new(enc: EncoderConfig, dims: Dims, train: &TrainConfig, rng: &mut Rng) -> Result<Self> {
        let encoder = EncoderParams::new(enc, dims, &mut rng.fork("encoder"))?;
        let h = enc.hidden_dim;
        let p = train.proj_dim;
        Ok(Self {
            encoder,
            phi1: ContrastiveHead::new(
                h,
                p,
                train.tau1,
                HeadRole::Pretrain,
                &mut rng.fork("phi1"),
            )?,
            phi2: ContrastiveHead::new(
                h,
                p,
                train.tau2,
                HeadRole::Supervised,
                &mut rng.fork("phi2"),
            )?,
            phi3: ContrastiveHead::new(h, p, train.tau3, HeadRole::Refine, &mut rng.fork("phi3"))?,
        })
    }

    fn head(&self, role: HeadRole) -> &ContrastiveHead<f32> {
        match role {
            HeadRole::Pretrain => &self.phi1,
            HeadRole::Supervised => &self.phi2,
            HeadRole::Refine => &self.phi3,
        }
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<f32>)) {
        self.encoder
            .visit_params(&mut |n, p| f(&format!("encoder.{n}"), p));
        for head in [&self.phi1, &self.phi2, &self.phi3] {
            let role = head.role.name();
            head.visit_params(&mut |n, p| f(&format!("{role}.{n}"), p));
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<f32>)) {
        self.encoder
            .visit_params_mut(&mut |n, p| f(&format!("encoder.{n}"), p));
        for head in [&mut self.phi1, &mut self.phi2, &mut self.phi3] {
            let role = head.role.name();
            head.visit_params_mut(&mut |n, p| f(&format!("{role}.{n}"), p));
        }
    }

    /// Eval-mode embeddings of every record, widened to `f64` for clustering.
    pub fn embed(&self, records: &[FeatureRecord], views: Views) -> Result<Mat<f64>> {
        Ok(self.encoder.embed_all(records, views)?.cast())
    }
}

/// What one optimisation step trains against.
enum Objective<'a> {
    Ucl,
    Mscl(&'a [usize]),
    /// Squared distance to fixed per-sample targets.
    Mse(&'a [Vec<f64>]),
}

struct Stepper<'a> {
    records: &'a [FeatureRecord],
    cfg: &'a TrainConfig,
}

impl Stepper<'_> {
    fn batches(&self, indices: &[usize], rng: &mut Rng) -> Vec<Vec<usize>> {
        let mut order = indices.to_vec();
        order.shuffle(rng);
        order
            .chunks(self.cfg.batch_size)
            .filter(|c| c.len() >= 2)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// One gradient step on `batch`; returns the batch loss.
    fn step(
        &self,
        net: &mut UmcNetwork,
        role: HeadRole,
        objective: Objective<'_>,
        batch: &[usize],
        opt: &mut AdamW,
        rng: &mut Rng,
    ) -> Result<f64> {
        let refs: Vec<&FeatureRecord> = batch.iter().map(|&i| &self.records[i]).collect();
        net.visit_params_mut(&mut |_, p| p.zero_grad());
        let (loss, train_head) = match objective {
            Objective::Mse(targets) => {
                let views = self.cfg.embed_views();
                let (z, cache) = net
                    .encoder
                    .forward_views(&refs, views, &mut Mode::Train(rng))?;
                let scale = 1.0 / (z.rows() * z.cols()) as f64;
                let mut loss = 0.0;
                let mut dz = Mat::zeros(z.rows(), z.cols());
                for (r, target) in targets.iter().enumerate() {
                    for (c, &t) in target.iter().enumerate() {
                        let d = z.get(r, c) as f64 - t;
                        loss += d * d * scale;
                        dz.set(r, c, (2.0 * d * scale) as f32);
                    }
                }
                net.encoder.backward_views(&cache, &dz);
                (loss, false)
            }
            Objective::Ucl | Objective::Mscl(_) => {
                let views = self.cfg.train_views();
                let (z, cache) = net
                    .encoder
                    .forward_views(&refs, views, &mut Mode::Train(rng))?;
                let head = net.head(role);
                let (p, hcache) = head.forward(&z, &mut Mode::Train(rng));
                let tau = head.temperature;
                let out = match objective {
                    Objective::Mscl(labels) => {
                        mscl_loss(&ViewBatch::new(&p, views.count(), Some(labels))?, tau)?
                    }
                    _ => ucl_loss(&ViewBatch::new(&p, views.count(), None)?, tau)?,
                };
                let dz = match role {
                    HeadRole::Pretrain => net.phi1.backward(&hcache, &out.grad),
                    HeadRole::Supervised => net.phi2.backward(&hcache, &out.grad),
                    HeadRole::Refine => net.phi3.backward(&hcache, &out.grad),
                };
                net.encoder.backward_views(&cache, &dz);
                (out.loss as f64, true)
            }
        };
        if !loss.is_finite() {
            return Err(UmcError::GradNonFinite(format!("{} loss", role.name())));
        }
        let mut bad = None;
        net.visit_params(&mut |n, p| {
            if bad.is_none() && !p.grad.is_finite() {
                bad = Some(n.to_owned());
            }
        });
        if let Some(name) = bad {
            return Err(UmcError::GradNonFinite(name));
        }
        let head = role.name();
        net.visit_params_mut(&mut |n, p| {
            if n.starts_with("encoder.") || (train_head && n.starts_with(head)) {
                opt.update(n, p);
            }
        });
        Ok(loss)
    }

    /// One epoch over `indices`; returns the mean batch loss and the samples touched.
    fn epoch(
        &self,
        net: &mut UmcNetwork,
        role: HeadRole,
        indices: &[usize],
        labels: Option<&[usize]>,
        targets: Option<&[Vec<f64>]>,
        opt: &mut AdamW,
        rng: &mut Rng,
    ) -> Result<(Option<f64>, Vec<usize>)> {
        let mut total = 0.0;
        let mut count = 0;
        let mut touched = Vec::new();
        for batch in self.batches(indices, rng) {
            let loss = match (labels, targets) {
                (Some(l), _) => {
                    let bl: Vec<usize> = batch.iter().map(|&i| l[i]).collect();
                    self.step(net, role, Objective::Mscl(&bl), &batch, opt, rng)?
                }
                (None, Some(t)) => {
                    let bt: Vec<Vec<f64>> = batch.iter().map(|&i| t[i].clone()).collect();
                    self.step(net, role, Objective::Mse(&bt), &batch, opt, rng)?
                }
                (None, None) => self.step(net, role, Objective::Ucl, &batch, opt, rng)?,
            };
            total += loss;
            count += 1;
            touched.extend_from_slice(&batch);
        }
        touched.sort_unstable();
        Ok(((count > 0).then(|| total / count as f64), touched))
    }
}

/// Minimise the unsupervised loss with φ₁ over shuffled minibatches.
/// Returns the mean loss of each epoch.
pub fn pretrain(
    features: Features<'_>,
    net: &mut UmcNetwork,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = features.len();
    if n < 2 {
        return Err(UmcError::TooFewSamples(n));
    }
    let stepper = Stepper {
        records: features.records,
        cfg,
    };
    let mut opt = cfg.adamw(cfg.lr_pretrain);
    let all: Vec<usize> = (0..n).collect();
    let mut losses = Vec::new();
    for e in 0..cfg.pretrain_epochs {
        let mut erng = rng.fork(&format!("pretrain{e}"));
        let (loss, _) = stepper.epoch(
            net,
            HeadRole::Pretrain,
            &all,
            None,
            None,
            &mut opt,
            &mut erng,
        )?;
        losses.push(loss.unwrap_or(f64::NAN));
    }
    Ok(losses)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub threshold: f64,
    pub inertia: f64,
    pub lloyd_iterations: usize,
    pub selected: usize,
    pub rest: usize,
    pub k_near: Vec<Option<usize>>,
    pub mscl_loss: Option<f64>,
    pub ucl_loss: Option<f64>,
    pub mse_loss: Option<f64>,
    /// Samples each pass actually trained on.
    #[serde(skip)]
    pub mscl_touched: Vec<usize>,
    #[serde(skip)]
    pub ucl_touched: Vec<usize>,
    #[serde(skip)]
    pub selected_indices: Vec<usize>,
    /// Cluster id of every sample in this round.
    #[serde(skip)]
    pub assignments: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub network: UmcNetwork,
    pub pretrain_losses: Vec<f64>,
    pub rounds: Vec<RoundLog>,
    /// Clustering of the last round; `None` when no round ran.
    pub final_state: Option<ClusterState>,
    /// Eval-mode embeddings after training.
    pub embeddings: Mat<f64>,
}

/// The curriculum loop: embed, cluster with inherited centroids, select,
/// then train on the high-quality and low-quality parts.
pub fn curriculum_train(
    features: Features<'_>,
    mut net: UmcNetwork,
    pretrain_losses: Vec<f64>,
    cfg: &TrainConfig,
    select: &SelectionConfig,
    rng: &mut Rng,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    let k = features.num_classes;
    let records = features.records;
    let stepper = Stepper { records, cfg };
    let mut opt = cfg.adamw(cfg.lr_train);
    let all: Vec<usize> = (0..records.len()).collect();
    let mut state: Option<ClusterState> = None;
    let mut rounds = Vec::new();

    for r in 0..round_count(cfg.t0, cfg.delta) {
        let t = threshold(cfg.t0, cfg.delta, r);
        let rrng = rng.fork(&format!("round{r}"));
        let emb = net.embed(records, cfg.embed_views())?;
        let current = cluster_round_with(
            &emb,
            state.as_ref(),
            k,
            cfg.kmeans_restarts,
            &mut rrng.fork("cluster"),
        )?;
        let mut log = RoundLog {
            round: r,
            threshold: t,
            inertia: current.inertia,
            lloyd_iterations: current.iterations,
            selected: 0,
            rest: 0,
            k_near: vec![],
            mscl_loss: None,
            ucl_loss: None,
            mse_loss: None,
            mscl_touched: vec![],
            ucl_touched: vec![],
            selected_indices: vec![],
            assignments: current.assignments.clone(),
        };

        match cfg.ablation {
            Ablation::Step1Kmeans => {}
            Ablation::Step1Ucl => {
                for e in 0..cfg.round_epochs {
                    let mut erng = rrng.fork(&format!("epoch{e}"));
                    let (loss, touched) = stepper.epoch(
                        &mut net,
                        HeadRole::Refine,
                        &all,
                        None,
                        None,
                        &mut opt,
                        &mut erng,
                    )?;
                    log.ucl_loss = loss;
                    log.ucl_touched = touched;
                }
            }
            Ablation::Step1Mse => {
                let targets: Vec<Vec<f64>> = current
                    .assignments
                    .iter()
                    .map(|&c| current.centroids.row(c).to_vec())
                    .collect();
                for e in 0..cfg.round_epochs {
                    let mut erng = rrng.fork(&format!("epoch{e}"));
                    let (loss, _) = stepper.epoch(
                        &mut net,
                        HeadRole::Pretrain,
                        &all,
                        None,
                        Some(&targets),
                        &mut opt,
                        &mut erng,
                    )?;
                    log.mse_loss = loss;
                }
            }
            _ => {
                let mut scfg = select.clone();
                scfg.threshold = t;
                if cfg.ablation == Ablation::RandomStep2 {
                    scfg.mode = SelectionMode::Random;
                }
                let chosen = select_all(&emb, &current, &scfg, &mut rrng.fork("select"))?;
                log.selected = chosen.selected.len();
                log.rest = chosen.rest.len();
                log.k_near = chosen.k_near.clone();
                let low_head = if cfg.reuse_pretrain_head {
                    HeadRole::Pretrain
                } else {
                    HeadRole::Refine
                };
                for e in 0..cfg.round_epochs {
                    let mut erng = rrng.fork(&format!("epoch{e}"));
                    let (loss, touched) = stepper.epoch(
                        &mut net,
                        HeadRole::Supervised,
                        &chosen.selected,
                        Some(&current.assignments),
                        None,
                        &mut opt,
                        &mut erng,
                    )?;
                    log.mscl_loss = loss;
                    log.mscl_touched = touched;
                    if cfg.ablation != Ablation::SclOnly && !chosen.rest.is_empty() {
                        let (loss, touched) = stepper.epoch(
                            &mut net,
                            low_head,
                            &chosen.rest,
                            None,
                            None,
                            &mut opt,
                            &mut erng,
                        )?;
                        log.ucl_loss = loss;
                        log.ucl_touched = touched;
                    }
                }
                log.selected_indices = chosen.selected;
            }
        }
        rounds.push(log);
        state = Some(current);
    }

    let embeddings = net.embed(records, cfg.embed_views())?;
    Ok(RunArtifacts {
        network: net,
        pretrain_losses,
        rounds,
        final_state: state,
        embeddings,
    })
}

/// Pretraining (unless ablated) followed by the curriculum loop.
pub fn train(
    features: Features<'_>,
    enc: EncoderConfig,
    cfg: &TrainConfig,
    select: &SelectionConfig,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    select.validate()?;
    let rng = Rng::new(cfg.seed, "umc");
    let mut net = UmcNetwork::new(enc, features.dims, cfg, &mut rng.fork("init"))?;
    let losses = if cfg.ablation == Ablation::NoPretrain {
        vec![]
    } else {
        pretrain(features, &mut net, cfg, &mut rng.fork("pretrain"))?
    };
    curriculum_train(
        features,
        net,
        losses,
        cfg,
        select,
        &mut rng.fork("curriculum"),
    )
}

/// Fresh K-Means++ and Lloyd on the final embeddings, best of `restarts`.
pub fn infer(embeddings: &Mat<f64>, k: usize, restarts: usize, seed: u64) -> Result<Vec<usize>> {
    Ok(kmeans(embeddings, k, restarts, &mut Rng::new(seed, "infer"))?.assignments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Dataset, SynthSpec};

    fn tiny() -> Dataset {
        let mut spec = SynthSpec::small();
        spec.samples_per_class = 12;
        spec.audio_len = 4;
        spec.video_len = 4;
        generate_synthetic(&spec).unwrap()
    }

    fn small_enc() -> EncoderConfig {
        EncoderConfig {
            hidden_dim: 16,
            layers: 1,
            heads: 2,
            ff_dim: 32,
            dropout: 0.1,
        }
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            pretrain_epochs: 2,
            proj_dim: 8,
            t0: 0.5,
            delta: 0.25,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn round_arithmetic() {
        assert_eq!(round_count(0.1, 0.05), 18);
        assert_eq!(threshold(0.1, 0.05, 17), 0.1 + 0.05 * 17.0);
        assert_eq!(threshold(0.1, 0.05, 18), 1.0);
        assert_eq!(round_count(1.0, 0.05), 0);
        assert_eq!(round_count(0.0, 0.25), 4);
        assert_eq!(round_count(0.5, 0.3), 2);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                t0: 1.5,
                ..TrainConfig::default()
            },
            TrainConfig {
                delta: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 1,
                ..TrainConfig::default()
            },
            TrainConfig {
                tau2: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                variant: Variant::TextOnly,
                text_dropout: 0.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let ds = tiny();
        let cfg = TrainConfig {
            lr_pretrain: 0.0,
            weight_decay: 0.0,
            ..quick()
        };
        let mut rng = Rng::new(0, "t");
        let mut net = UmcNetwork::new(small_enc(), ds.dims, &cfg, &mut rng).unwrap();
        let before = net.clone();
        pretrain(ds.features(), &mut net, &cfg, &mut rng).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        before.visit_params(&mut |_, p| a.push(p.value.clone()));
        net.visit_params(&mut |_, p| b.push(p.value.clone()));
        assert_eq!(a, b);
    }

    #[test]
    fn pretraining_is_deterministic() {
        let ds = tiny();
        let cfg = quick();
        let run = || {
            let mut rng = Rng::new(3, "t");
            let mut net = UmcNetwork::new(small_enc(), ds.dims, &cfg, &mut rng).unwrap();
            let losses = pretrain(ds.features(), &mut net, &cfg, &mut rng).unwrap();
            (net, losses)
        };
        let (n1, l1) = run();
        let (n2, l2) = run();
        assert_eq!(n1, n2);
        assert_eq!(l1, l2);
        assert_eq!(l1.len(), 2);
    }

    #[test]
    fn passes_touch_only_their_subsets() {
        let ds = tiny();
        let art = train(
            ds.features(),
            small_enc(),
            &quick(),
            &SelectionConfig::default(),
        )
        .unwrap();
        assert_eq!(art.rounds.len(), 2);
        for log in &art.rounds {
            assert!(log
                .mscl_touched
                .iter()
                .all(|i| log.selected_indices.binary_search(i).is_ok()));
            assert!(log
                .ucl_touched
                .iter()
                .all(|i| log.selected_indices.binary_search(i).is_err()));
            assert_eq!(log.selected + log.rest, ds.len());
        }
        let assignments = infer(&art.embeddings, 4, 1, 0).unwrap();
        assert_eq!(assignments, infer(&art.embeddings, 4, 1, 0).unwrap());
        assert!(infer(&art.embeddings, 1, 1, 0)
            .unwrap()
            .iter()
            .all(|&c| c == 0));
    }

    #[test]
    fn ablations_run() {
        let ds = tiny();
        for (name, ablation) in Ablation::ALL {
            let cfg = TrainConfig {
                ablation,
                ..quick()
            };
            let art = train(
                ds.features(),
                small_enc(),
                &cfg,
                &SelectionConfig::default(),
            )
            .unwrap();
            let log = &art.rounds[0];
            match ablation {
                Ablation::Step1Kmeans => {
                    assert!(log.mscl_loss.is_none() && log.ucl_loss.is_none(), "{name}")
                }
                Ablation::Step1Mse => {
                    assert!(log.mse_loss.is_some() && log.mscl_loss.is_none(), "{name}")
                }
                Ablation::Step1Ucl => {
                    assert!(log.ucl_loss.is_some() && log.mscl_loss.is_none(), "{name}")
                }
                Ablation::SclOnly => {
                    assert!(log.ucl_loss.is_none() && log.mscl_loss.is_some(), "{name}")
                }
                _ => assert!(log.mscl_loss.is_some(), "{name}"),
            }
            if ablation == Ablation::NoPretrain {
                assert!(art.pretrain_losses.is_empty());
            }
        }
    }

    #[test]
    fn text_only_variant_runs() {
        let ds = tiny();
        let cfg = TrainConfig {
            variant: Variant::TextOnly,
            ..quick()
        };
        let art = train(
            ds.features(),
            small_enc(),
            &cfg,
            &SelectionConfig::default(),
        )
        .unwrap();
        assert_eq!(art.embeddings.rows(), ds.len());
        assert!(art.rounds.iter().all(|l| l.mscl_loss.is_some()));
    }

    #[test]
    fn no_rounds_when_starting_at_one() {
        let ds = tiny();
        let cfg = TrainConfig { t0: 1.0, ..quick() };
        let art = train(
            ds.features(),
            small_enc(),
            &cfg,
            &SelectionConfig::default(),
        )
        .unwrap();
        assert!(art.rounds.is_empty() && art.final_state.is_none());
    }
}
