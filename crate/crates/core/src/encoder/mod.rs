//! Per-modality encoders, the non-linear fusion layer, and the masked
//! augmentation views built on top of them.
//!
//! Text passes through a single linear map. Audio and video are projected
//! frame-wise, run through a small attention encoder and pooled by taking
//! the last unpadded position. The three representations are concatenated
//! and fused as `W·GELU(Dropout(·)) + b`.

mod attention;

pub use attention::{AttentionEncoder, EncoderLayer, EncoderLayerCache, MultiHeadAttention};

use rayon::prelude::*;

use crate::data::{Dims, FeatureRecord, Modality, Sequence};
use crate::error::{Result, UmcError};
use crate::numerics::{gelu, gelu_grad, DiffOp, Dropout, Linear, Mat, Mode, Param, Real, Rng};

/// Architecture hyperparameters shared by all encoders.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width inside the attention encoder.
    pub ff_dim: usize,
    /// Fusion dropout rate.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            layers: 1,
            heads: 2,
            ff_dim: 256,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(UmcError::BadConfig("hidden_dim must be positive".into()));
        }
        if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(UmcError::BadConfig(format!(
                "heads ({}) must divide hidden_dim ({})",
                self.heads, self.hidden_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(UmcError::BadConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.ff_dim == 0 {
            return Err(UmcError::BadConfig("ff_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Frame projection `f_M` followed by the attention encoder; emits the last row.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityEncoder<T> {
    pub projection: Linear<T>,
    pub encoder: AttentionEncoder<T>,
}

pub struct ModalityCache<T> {
    input: Mat<T>,
    encoder: Vec<EncoderLayerCache<T>>,
    len: usize,
}

impl<T: Real> ModalityEncoder<T> {
    pub fn new(input_dim: usize, cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        Self {
            projection: Linear::new(input_dim, cfg.hidden_dim, rng),
            encoder: AttentionEncoder::new(cfg.hidden_dim, cfg.layers, cfg.heads, cfg.ff_dim, rng),
        }
    }
}

impl<T: Real> DiffOp<T> for ModalityEncoder<T> {
    type Cache = ModalityCache<T>;

    /// `x` holds only the valid frames; padding never reaches the encoder.
    fn forward(&self, x: &Mat<T>, mode: &mut Mode<'_>) -> (Mat<T>, ModalityCache<T>) {
        assert!(x.rows() > 0, "empty sequence");
        let projected = self.projection.apply(x);
        let (h, encoder) = self.encoder.forward(&projected, mode);
        let last = Mat::row_vector(h.row(h.rows() - 1));
        (
            last,
            ModalityCache {
                input: x.clone(),
                encoder,
                len: x.rows(),
            },
        )
    }

    fn backward(&mut self, c: &ModalityCache<T>, dy: &Mat<T>) -> Mat<T> {
        let mut dh = Mat::zeros(c.len, dy.cols());
        dh.row_mut(c.len - 1).copy_from_slice(dy.row(0));
        let dproj = self.encoder.backward(&c.encoder, &dh);
        self.projection.backward(&c.input, &dproj)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.projection
            .visit_params(&mut |n, p| f(&format!("projection.{n}"), p));
        self.encoder
            .visit_params(&mut |n, p| f(&format!("encoder.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.projection
            .visit_params_mut(&mut |n, p| f(&format!("projection.{n}"), p));
        self.encoder
            .visit_params_mut(&mut |n, p| f(&format!("encoder.{n}"), p));
    }
}

/// `y = W·GELU(Dropout(x)) + b` over concatenated `[z_T, z_A, z_V]` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Fusion<T> {
    pub linear: Linear<T>,
    pub dropout: Dropout,
}

pub struct FusionCache<T> {
    mask: Option<Mat<T>>,
    pre_act: Mat<T>,
    act: Mat<T>,
}

impl<T: Real> Fusion<T> {
    pub fn new(hidden: usize, dropout: f64, rng: &mut Rng) -> Self {
        Self {
            linear: Linear::new(3 * hidden, hidden, rng),
            dropout: Dropout { rate: dropout },
        }
    }
}

impl<T: Real> DiffOp<T> for Fusion<T> {
    type Cache = FusionCache<T>;

    fn forward(&self, x: &Mat<T>, mode: &mut Mode<'_>) -> (Mat<T>, FusionCache<T>) {
        let (pre_act, mask) = self.dropout.forward(x, mode);
        let act = pre_act.map(gelu);
        let y = self.linear.apply(&act);
        (y, FusionCache { mask, pre_act, act })
    }

    fn backward(&mut self, c: &FusionCache<T>, dy: &Mat<T>) -> Mat<T> {
        let mut d = self.linear.backward(&c.act, dy);
        for (g, &z) in d.data_mut().iter_mut().zip(c.pre_act.data()) {
            *g *= gelu_grad(z);
        }
        let mut dropout = self.dropout;
        DiffOp::<T>::backward(&mut dropout, &c.mask, &d)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.linear
            .visit_params(&mut |n, p| f(&format!("linear.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.linear
            .visit_params_mut(&mut |n, p| f(&format!("linear.{n}"), p));
    }
}

/// Which fused views to produce for each record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Views {
    /// `z_TAV` only.
    Full,
    /// `[z_TAV; z_TA0; z_T0V]`: audio or video representation replaced by zeros.
    Masked,
    /// `F(z_T, 0, 0)` only; used by the text-only variant.
    TextOnly,
    /// Two text-only views from independent dropout masks on `z_T`.
    DropoutTwice { rate: f64 },
}

impl Views {
    pub fn count(self) -> usize {
        match self {
            Views::Full | Views::TextOnly => 1,
            Views::Masked => 3,
            Views::DropoutTwice { .. } => 2,
        }
    }

    fn uses_nonverbal(self) -> bool {
        matches!(self, Views::Full | Views::Masked)
    }
}

/// The fused representation of one record and its two masked views.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedEmbedding<T> {
    pub id: usize,
    pub z_tav: Vec<T>,
    pub z_ta0: Vec<T>,
    pub z_t0v: Vec<T>,
}

pub struct ViewsCache<T> {
    batch: usize,
    views: Views,
    text_input: Mat<T>,
    audio: Vec<ModalityCache<T>>,
    video: Vec<ModalityCache<T>>,
    text_masks: Option<[Mat<T>; 2]>,
    fusion: FusionCache<T>,
}

/// All trainable encoder-side parameters: `f_T`, `f_A`/`f_V` + attention, and `F`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub config: EncoderConfig,
    pub dims: Dims,
    pub text: Linear<T>,
    pub audio: ModalityEncoder<T>,
    pub video: ModalityEncoder<T>,
    pub fusion: Fusion<T>,
}

fn text_matrix<T: Real>(records: &[&FeatureRecord]) -> Mat<T> {
    let cols = records.first().map_or(0, |r| r.text.len());
    Mat::from_fn(records.len(), cols, |r, c| T::of(records[r].text[c] as f64))
}

impl<T: Real> EncoderParams<T> {
    pub fn new(config: EncoderConfig, dims: Dims, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        Ok(Self {
            config,
            dims,
            text: Linear::new(dims.text_dim, h, rng),
            audio: ModalityEncoder::new(dims.audio_dim, &config, rng),
            video: ModalityEncoder::new(dims.video_dim, &config, rng),
            fusion: Fusion::new(h, config.dropout, rng),
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn encode_text(&self, x: &[f32]) -> Result<Vec<T>> {
        if x.len() != self.dims.text_dim {
            return Err(UmcError::DimMismatch {
                expected: self.dims.text_dim,
                got: x.len(),
            });
        }
        let xm = Mat::from_fn(1, x.len(), |_, c| T::of(x[c] as f64));
        Ok(self.text.apply(&xm).into_data())
    }

    /// Last-position output of the audio or video encoder over the valid frames.
    pub fn encode_modality(
        &self,
        seq: &Sequence,
        modality: Modality,
        mode: &mut Mode<'_>,
    ) -> Result<Vec<T>> {
        let (enc, dim) = match modality {
            Modality::Audio => (&self.audio, self.dims.audio_dim),
            Modality::Video => (&self.video, self.dims.video_dim),
            other => {
                return Err(UmcError::BadConfig(format!(
                    "no sequence encoder for {} features",
                    other.name()
                )))
            }
        };
        if seq.frames.cols() != dim {
            return Err(UmcError::DimMismatch {
                expected: dim,
                got: seq.frames.cols(),
            });
        }
        if seq.len == 0 {
            return Err(UmcError::EmptySequence);
        }
        let (y, _) = enc.forward(&seq.valid().cast(), mode);
        Ok(y.into_data())
    }

    pub fn fuse(&self, z_t: &[T], z_a: &[T], z_v: &[T], mode: &mut Mode<'_>) -> Result<Vec<T>> {
        let h = self.hidden_dim();
        for z in [z_t, z_a, z_v] {
            if z.len() != h {
                return Err(UmcError::DimMismatch {
                    expected: h,
                    got: z.len(),
                });
            }
        }
        let mut row = Vec::with_capacity(3 * h);
        row.extend_from_slice(z_t);
        row.extend_from_slice(z_a);
        row.extend_from_slice(z_v);
        let (y, _) = self.fusion.forward(&Mat::row_vector(&row), mode);
        Ok(y.into_data())
    }

    pub fn make_views(
        &self,
        record: &FeatureRecord,
        mode: &mut Mode<'_>,
    ) -> Result<FusedEmbedding<T>> {
        let (z, _) = self.forward_views(&[record], Views::Masked, mode)?;
        Ok(FusedEmbedding {
            id: record.id,
            z_tav: z.row(0).to_vec(),
            z_ta0: z.row(1).to_vec(),
            z_t0v: z.row(2).to_vec(),
        })
    }

    fn check_record(&self, r: &FeatureRecord) -> Result<()> {
        let d = self.dims;
        if r.text.len() != d.text_dim {
            return Err(UmcError::DimMismatch {
                expected: d.text_dim,
                got: r.text.len(),
            });
        }
        for (seq, dim) in [(&r.audio, d.audio_dim), (&r.video, d.video_dim)] {
            if seq.frames.cols() != dim {
                return Err(UmcError::DimMismatch {
                    expected: dim,
                    got: seq.frames.cols(),
                });
            }
            if seq.len == 0 {
                return Err(UmcError::EmptySequence);
            }
        }
        Ok(())
    }

    /// Fused views for a batch, view-major: row `v·B + b` is view `v` of record `b`.
    pub fn forward_views(
        &self,
        records: &[&FeatureRecord],
        views: Views,
        mode: &mut Mode<'_>,
    ) -> Result<(Mat<T>, ViewsCache<T>)> {
        let b = records.len();
        let h = self.hidden_dim();
        for r in records {
            self.check_record(r)?;
        }
        let text_input = text_matrix::<T>(records);
        let z_t = self.text.apply(&text_input);

        let mut audio = Vec::new();
        let mut video = Vec::new();
        let mut z_a = Mat::zeros(b, h);
        let mut z_v = Mat::zeros(b, h);
        if views.uses_nonverbal() {
            for (i, r) in records.iter().enumerate() {
                let (ya, ca) = self.audio.forward(&r.audio.valid().cast(), mode);
                z_a.row_mut(i).copy_from_slice(ya.row(0));
                audio.push(ca);
                let (yv, cv) = self.video.forward(&r.video.valid().cast(), mode);
                z_v.row_mut(i).copy_from_slice(yv.row(0));
                video.push(cv);
            }
        }

        let nv = views.count();
        let mut concat = Mat::zeros(nv * b, 3 * h);
        let mut text_masks = None;
        match views {
            Views::Full | Views::Masked | Views::TextOnly => {
                for v in 0..nv {
                    for i in 0..b {
                        let row = concat.row_mut(v * b + i);
                        row[..h].copy_from_slice(z_t.row(i));
                        // view 0: TAV, view 1: TA0, view 2: T0V
                        if views != Views::TextOnly && v != 2 {
                            row[h..2 * h].copy_from_slice(z_a.row(i));
                        }
                        if views != Views::TextOnly && v != 1 {
                            row[2 * h..].copy_from_slice(z_v.row(i));
                        }
                    }
                }
            }
            Views::DropoutTwice { rate } => {
                if !(rate > 0.0 && rate < 1.0) {
                    return Err(UmcError::BadRate(rate));
                }
                let masks: [Mat<T>; 2] = match mode {
                    Mode::Train(rng) => {
                        let d = Dropout { rate };
                        [d.mask(b, h, rng), d.mask(b, h, rng)]
                    }
                    Mode::Eval => [
                        Mat::from_fn(b, h, |_, _| T::one()),
                        Mat::from_fn(b, h, |_, _| T::one()),
                    ],
                };
                for (v, mask) in masks.iter().enumerate() {
                    for i in 0..b {
                        let row = concat.row_mut(v * b + i);
                        for c in 0..h {
                            row[c] = z_t.get(i, c) * mask.get(i, c);
                        }
                    }
                }
                text_masks = Some(masks);
            }
        }

        let (z, fusion) = match views {
            // the dropout-twice masks are the only stochasticity on that path
            Views::DropoutTwice { .. } => self.fusion.forward(&concat, &mut Mode::Eval),
            _ => self.fusion.forward(&concat, mode),
        };
        Ok((
            z,
            ViewsCache {
                batch: b,
                views,
                text_input,
                audio,
                video,
                text_masks,
                fusion,
            },
        ))
    }

    /// Accumulate parameter gradients for `∂L/∂views`.
    pub fn backward_views(&mut self, c: &ViewsCache<T>, dviews: &Mat<T>) {
        let b = c.batch;
        let h = self.hidden_dim();
        let dconcat = self.fusion.backward(&c.fusion, dviews);
        let nv = c.views.count();
        let mut dz_t = Mat::zeros(b, h);
        let mut dz_a = Mat::zeros(b, h);
        let mut dz_v = Mat::zeros(b, h);
        for v in 0..nv {
            for i in 0..b {
                let row = dconcat.row(v * b + i);
                let t = dz_t.row_mut(i);
                match &c.text_masks {
                    Some(masks) => {
                        for k in 0..h {
                            t[k] += row[k] * masks[v].get(i, k);
                        }
                    }
                    None => {
                        for k in 0..h {
                            t[k] += row[k];
                        }
                    }
                }
                if c.views.uses_nonverbal() {
                    if v != 2 {
                        for (d, &g) in dz_a.row_mut(i).iter_mut().zip(&row[h..2 * h]) {
                            *d += g;
                        }
                    }
                    if v != 1 {
                        for (d, &g) in dz_v.row_mut(i).iter_mut().zip(&row[2 * h..]) {
                            *d += g;
                        }
                    }
                }
            }
        }
        self.text.backward(&c.text_input, &dz_t);
        for i in 0..c.audio.len() {
            self.audio
                .backward(&c.audio[i], &Mat::row_vector(dz_a.row(i)));
            self.video
                .backward(&c.video[i], &Mat::row_vector(dz_v.row(i)));
        }
    }

    /// Eval-mode embeddings (one row per record), computed in parallel chunks.
    pub fn embed_all(&self, records: &[FeatureRecord], views: Views) -> Result<Mat<T>> {
        assert_eq!(views.count(), 1, "embedding extraction needs a single view");
        let chunks: Vec<Mat<T>> = records
            .par_chunks(64)
            .map(|chunk| {
                let refs: Vec<&FeatureRecord> = chunk.iter().collect();
                self.forward_views(&refs, views, &mut Mode::Eval)
                    .map(|(z, _)| z)
            })
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(records.len() * self.hidden_dim());
        for m in chunks {
            data.extend(m.into_data());
        }
        Mat::from_vec(records.len(), self.hidden_dim(), data)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.text
            .visit_params(&mut |n, p| f(&format!("text.{n}"), p));
        self.audio
            .visit_params(&mut |n, p| f(&format!("audio.{n}"), p));
        self.video
            .visit_params(&mut |n, p| f(&format!("video.{n}"), p));
        self.fusion
            .visit_params(&mut |n, p| f(&format!("fusion.{n}"), p));
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.text
            .visit_params_mut(&mut |n, p| f(&format!("text.{n}"), p));
        self.audio
            .visit_params_mut(&mut |n, p| f(&format!("audio.{n}"), p));
        self.video
            .visit_params_mut(&mut |n, p| f(&format!("video.{n}"), p));
        self.fusion
            .visit_params_mut(&mut |n, p| f(&format!("fusion.{n}"), p));
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Real>(&self, rng: &mut Rng) -> EncoderParams<U> {
        let mut out =
            EncoderParams::<U>::new(self.config, self.dims, rng).expect("validated config");
        let mut values = Vec::new();
        self.visit_params(&mut |_, p| values.push(p.value.cast::<U>()));
        let mut it = values.into_iter();
        out.visit_params_mut(&mut |_, p| p.value = it.next().expect("same layout"));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthSpec};
    use crate::numerics::grad_check;
    use rand::Rng as _;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            hidden_dim: 8,
            layers: 1,
            heads: 2,
            ff_dim: 16,
            dropout: 0.1,
        }
    }

    fn dataset() -> crate::data::Dataset {
        generate_synthetic(&SynthSpec {
            num_classes: 2,
            samples_per_class: 3,
            text_dim: 6,
            audio_dim: 5,
            video_dim: 4,
            audio_len: 6,
            video_len: 5,
            ..SynthSpec::small()
        })
        .unwrap()
    }

    fn params(seed: u64) -> EncoderParams<f64> {
        let ds = dataset();
        EncoderParams::new(small_cfg(), ds.dims, &mut Rng::new(seed, "init")).unwrap()
    }

    #[test]
    fn rejects_bad_config() {
        let ds = dataset();
        let cfg = EncoderConfig {
            heads: 3,
            ..small_cfg()
        };
        assert!(EncoderParams::<f32>::new(cfg, ds.dims, &mut Rng::new(0, "i")).is_err());
        let cfg = EncoderConfig {
            dropout: 1.0,
            ..small_cfg()
        };
        assert!(EncoderParams::<f32>::new(cfg, ds.dims, &mut Rng::new(0, "i")).is_err());
    }

    #[test]
    fn text_encoding() {
        let mut p = params(1);
        assert_eq!(
            p.encode_text(&[0.0; 6]).unwrap(),
            p.text.bias.value.data().to_vec()
        );
        p.text.bias.value.fill(0.0);
        assert_eq!(p.encode_text(&[0.0; 6]).unwrap(), vec![0.0; 8]);
        assert!(matches!(
            p.encode_text(&[0.0; 5]),
            Err(UmcError::DimMismatch { .. })
        ));

        // square identity map returns its input
        let ds = dataset();
        let dims = Dims {
            text_dim: 8,
            ..ds.dims
        };
        let mut sq = EncoderParams::<f64>::new(small_cfg(), dims, &mut Rng::new(1, "i")).unwrap();
        sq.text = Linear::from_parts(
            Mat::from_fn(8, 8, |r, c| if r == c { 1.0 } else { 0.0 }),
            Mat::zeros(1, 8),
        );
        let x: Vec<f32> = (0..8).map(|i| i as f32 * 0.5 - 1.0).collect();
        let z = sq.encode_text(&x).unwrap();
        for (a, b) in z.iter().zip(&x) {
            assert_eq!(*a, *b as f64);
        }

        // independent matrix-vector oracle
        let x: Vec<f32> = vec![0.3, -1.2, 2.0, 0.7, -0.4, 1.1];
        let z = p.encode_text(&x).unwrap();
        for j in 0..8 {
            let mut want = p.text.bias.value.get(0, j);
            for (i, &xi) in x.iter().enumerate() {
                want += xi as f64 * p.text.weight.value.get(i, j);
            }
            assert!((z[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_with_zeroed_residual_branches_is_projection() {
        let mut p = params(2);
        for layer in &mut p.audio.encoder.layers {
            layer.attention.output.weight.value.fill(0.0);
            layer.attention.output.bias.value.fill(0.0);
            layer.ff_out.weight.value.fill(0.0);
            layer.ff_out.bias.value.fill(0.0);
        }
        let ds = dataset();
        let mut seq = ds.records[0].audio.clone();
        seq.len = 1;
        let z = p
            .encode_modality(&seq, Modality::Audio, &mut Mode::Eval)
            .unwrap();
        let proj = p.audio.projection.apply(&seq.valid().cast::<f64>());
        assert_eq!(z, proj.row(0).to_vec());
    }

    #[test]
    fn padding_is_ignored() {
        let p = params(3);
        let ds = dataset();
        let mut seq = ds.records[1].audio.clone();
        seq.len = 3;
        let a = p
            .encode_modality(&seq, Modality::Audio, &mut Mode::Eval)
            .unwrap();
        let mut rng = Rng::new(9, "pad");
        for r in 3..seq.frames.rows() {
            for v in seq.frames.row_mut(r) {
                *v = rng.random_range(-50.0..50.0);
            }
        }
        let b = p
            .encode_modality(&seq, Modality::Audio, &mut Mode::Eval)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a,
            p.encode_modality(&seq, Modality::Audio, &mut Mode::Eval)
                .unwrap()
        );
        seq.len = 0;
        assert!(matches!(
            p.encode_modality(&seq, Modality::Audio, &mut Mode::Eval),
            Err(UmcError::EmptySequence)
        ));
    }

    #[test]
    fn fusion_of_zeros_is_bias() {
        let p = params(4);
        let z = vec![0.0; 8];
        let y = p.fuse(&z, &z, &z, &mut Mode::Eval).unwrap();
        assert_eq!(y, p.fusion.linear.bias.value.data().to_vec());
    }

    #[test]
    fn fusion_matches_oracle() {
        let p = params(5);
        let mut rng = Rng::new(5, "fuse");
        let mut rand_vec = || -> Vec<f64> { (0..8).map(|_| rng.random_range(-2.0..2.0)).collect() };
        let (zt, za, zv) = (rand_vec(), rand_vec(), rand_vec());
        let y = p.fuse(&zt, &za, &zv, &mut Mode::Eval).unwrap();
        let y2 = p.fuse(&zt, &za, &zv, &mut Mode::Eval).unwrap();
        assert_eq!(y, y2);
        let concat: Vec<f64> = zt.iter().chain(&za).chain(&zv).copied().collect();
        let oracle_gelu = |x: f64| x * 0.5 * (1.0 + libm::erf(x / 2f64.sqrt()));
        for j in 0..8 {
            let mut want = p.fusion.linear.bias.value.get(0, j);
            for (i, &x) in concat.iter().enumerate() {
                want += oracle_gelu(x) * p.fusion.linear.weight.value.get(i, j);
            }
            assert!((y[j] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn masked_views_are_local() {
        let p = params(6);
        let ds = dataset();
        let rec = ds.records[2].clone();
        let v1 = p.make_views(&rec, &mut Mode::Eval).unwrap();
        assert_eq!(v1.z_tav.len(), 8);
        assert_eq!(v1.z_ta0.len(), 8);
        assert_eq!(v1.z_t0v.len(), 8);

        let mut changed = rec.clone();
        for v in changed.video.frames.data_mut() {
            *v += 3.0;
        }
        let v2 = p.make_views(&changed, &mut Mode::Eval).unwrap();
        assert_eq!(v1.z_ta0, v2.z_ta0);
        assert_ne!(v1.z_tav, v2.z_tav);

        let mut changed = rec.clone();
        for v in changed.audio.frames.data_mut() {
            *v -= 2.0;
        }
        let v3 = p.make_views(&changed, &mut Mode::Eval).unwrap();
        assert_eq!(v1.z_t0v, v3.z_t0v);
    }

    #[test]
    fn zero_nonverbal_representations_give_equal_views() {
        let mut p = params(7);
        for enc in [&mut p.audio, &mut p.video] {
            enc.projection.weight.value.fill(0.0);
            enc.projection.bias.value.fill(0.0);
            for layer in &mut enc.encoder.layers {
                layer.norm1.shift.value.fill(0.0);
                layer.attention.value.bias.value.fill(0.0);
                layer.attention.output.bias.value.fill(0.0);
                layer.ff_out.weight.value.fill(0.0);
                layer.ff_out.bias.value.fill(0.0);
            }
        }
        let ds = dataset();
        let v = p.make_views(&ds.records[0], &mut Mode::Eval).unwrap();
        assert_eq!(v.z_tav, v.z_ta0);
        assert_eq!(v.z_tav, v.z_t0v);
    }

    #[test]
    fn embed_all_matches_single_records() {
        let p = params(8);
        let ds = dataset();
        let all = p.embed_all(&ds.records, Views::Full).unwrap();
        for (i, r) in ds.records.iter().enumerate() {
            let v = p.make_views(r, &mut Mode::Eval).unwrap();
            for (a, b) in all.row(i).iter().zip(&v.z_tav) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn modality_encoder_grad_check() {
        let mut p = params(9);
        let ds = dataset();
        let x = ds.records[0].video.valid().cast::<f64>();
        let r = grad_check(&mut p.video, &x, 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn fusion_grad_check() {
        let mut p = params(10);
        let mut rng = Rng::new(10, "x");
        let x = Mat::from_fn(3, 24, |_, _| rng.random_range(-2.0..2.0));
        let r = grad_check(&mut p.fusion, &x, 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
    }

    /// Finite differences through the whole view construction, which checks
    /// the gradient scatter from masked views back to each encoder.
    fn check_views_gradient(views: Views) {
        let mut p = params(11);
        p.fusion.dropout.rate = 0.0;
        let ds = dataset();
        let refs: Vec<&FeatureRecord> = ds.records.iter().take(3).collect();
        let nv = views.count();
        let mut wrng = Rng::new(1, "w");
        let w = Mat::from_fn(nv * 3, 8, |_, _| wrng.random_range(-1.0..1.0));
        let objective = |p: &EncoderParams<f64>| -> f64 {
            let mut drng = Rng::new(4, "drop");
            let (z, _) = p
                .forward_views(&refs, views, &mut Mode::Train(&mut drng))
                .unwrap();
            z.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let mut drng = Rng::new(4, "drop");
        let (_, cache) = p
            .forward_views(&refs, views, &mut Mode::Train(&mut drng))
            .unwrap();
        p.zero_grad();
        p.backward_views(&cache, &w);
        let mut analytic = Vec::new();
        p.visit_params(&mut |n, q| analytic.push((n.to_owned(), q.grad.data().to_vec())));
        let mut worst = 0.0f64;
        for (pi, (name, grads)) in analytic.iter().enumerate() {
            for (ei, &a) in grads.iter().enumerate().step_by(3) {
                let nudge = |p: &mut EncoderParams<f64>, d: f64| {
                    let mut k = 0;
                    p.visit_params_mut(&mut |_, q| {
                        if k == pi {
                            q.value.data_mut()[ei] += d;
                        }
                        k += 1;
                    });
                };
                nudge(&mut p, 1e-5);
                let up = objective(&p);
                nudge(&mut p, -2e-5);
                let down = objective(&p);
                nudge(&mut p, 1e-5);
                let n = (up - down) / 2e-5;
                let e = (a - n).abs() / a.abs().max(n.abs()).max(1e-5);
                assert!(e < 1e-4, "{name}[{ei}] analytic {a} numeric {n}");
                worst = worst.max(e);
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn masked_views_gradient() {
        check_views_gradient(Views::Masked);
    }

    #[test]
    fn dropout_twice_views_gradient() {
        check_views_gradient(Views::DropoutTwice { rate: 0.3 });
    }

    #[test]
    fn dropout_twice_rejects_bad_rate() {
        let p = params(12);
        let ds = dataset();
        let refs: Vec<&FeatureRecord> = ds.records.iter().collect();
        assert!(matches!(
            p.forward_views(&refs, Views::DropoutTwice { rate: 1.0 }, &mut Mode::Eval),
            Err(UmcError::BadRate(_))
        ));
    }
}
