//! Contrastive projection heads and the unsupervised / supervised
//! multi-view contrastive losses.
//!
//! Both losses share one kernel: for each anchor row `i` with a non-empty
//! positive set `P(i)`,
//!
//! ```text
//! ℓ_i = −(1/|P(i)|) Σ_{p∈P(i)} log( exp(s_ip/τ) / Σ_{k≠i} exp(s_ik/τ) )
//! ```
//!
//! where `s` is the cosine similarity of the projected rows, and the batch
//! loss is the mean of `ℓ_i` over anchors that have positives. The
//! unsupervised loss takes positives to be the other views of the same
//! sample; the supervised loss takes every row sharing a pseudo-label.

use crate::error::{Result, UmcError};
use crate::numerics::{
    dot, log_sum_exp, DiffOp, Dropout, Linear, Mat, Mode, Param, Real, Relu, Rng,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadRole {
    /// φ₁, unsupervised pretraining.
    Pretrain,
    /// φ₂, supervised learning on high-quality samples.
    Supervised,
    /// φ₃, unsupervised refinement of low-quality samples.
    Refine,
}

impl HeadRole {
    pub fn name(self) -> &'static str {
        match self {
            HeadRole::Pretrain => "phi1",
            HeadRole::Supervised => "phi2",
            HeadRole::Refine => "phi3",
        }
    }
}

/// `Linear → ReLU → Linear`, followed by a temperature-scaled loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveHead<T> {
    pub hidden: Linear<T>,
    pub output: Linear<T>,
    pub temperature: f64,
    pub role: HeadRole,
}

pub struct HeadCache<T> {
    input: Mat<T>,
    pre_act: Mat<T>,
    act: Mat<T>,
}

impl<T: Real> ContrastiveHead<T> {
    pub fn new(
        dim: usize,
        proj_dim: usize,
        temperature: f64,
        role: HeadRole,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(UmcError::BadConfig(format!(
                "temperature {temperature} must be positive"
            )));
        }
        if proj_dim < 2 {
            return Err(UmcError::BadConfig("projection dim must exceed 1".into()));
        }
        Ok(Self {
            hidden: Linear::new(dim, dim, rng),
            output: Linear::new(dim, proj_dim, rng),
            temperature,
            role,
        })
    }
}

impl<T: Real> DiffOp<T> for ContrastiveHead<T> {
    type Cache = HeadCache<T>;

    fn forward(&self, x: &Mat<T>, mode: &mut Mode<'_>) -> (Mat<T>, HeadCache<T>) {
        let pre_act = self.hidden.apply(x);
        let (act, _) = Relu.forward(&pre_act, mode);
        let y = self.output.apply(&act);
        (
            y,
            HeadCache {
                input: x.clone(),
                pre_act,
                act,
            },
        )
    }

    fn backward(&mut self, c: &HeadCache<T>, dy: &Mat<T>) -> Mat<T> {
        let dact = self.output.backward(&c.act, dy);
        let dpre = Relu.backward(&c.pre_act, &dact);
        self.hidden.backward(&c.input, &dpre)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.hidden
            .visit_params(&mut |n, p| f(&format!("hidden.{n}"), p));
        self.output
            .visit_params(&mut |n, p| f(&format!("output.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.hidden
            .visit_params_mut(&mut |n, p| f(&format!("hidden.{n}"), p));
        self.output
            .visit_params_mut(&mut |n, p| f(&format!("output.{n}"), p));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewTag {
    Tav,
    Ta0,
    T0v,
    /// One of the two dropout views of the text-only variant.
    Text(u8),
}

/// Projected views of a minibatch, L2-normalized row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBatch<T> {
    pub embeddings: Mat<T>,
    /// Norm of each raw projection row, for the chain rule through normalization.
    norms: Vec<T>,
    pub origin: Vec<usize>,
    pub view: Vec<ViewTag>,
    pub pseudo_label: Option<Vec<usize>>,
}

impl<T: Real> ViewBatch<T> {
    /// `projections` is view-major with `views_per_origin` blocks of `B` rows.
    pub fn new(
        projections: &Mat<T>,
        views_per_origin: usize,
        pseudo_labels: Option<&[usize]>,
    ) -> Result<Self> {
        let rows = projections.rows();
        if views_per_origin == 0 || !rows.is_multiple_of(views_per_origin) {
            return Err(UmcError::DimMismatch {
                expected: views_per_origin,
                got: rows,
            });
        }
        let b = rows / views_per_origin;
        let tags: Vec<ViewTag> = match views_per_origin {
            3 => vec![ViewTag::Tav, ViewTag::Ta0, ViewTag::T0v],
            n => (0..n).map(|v| ViewTag::Text(v as u8)).collect(),
        };
        let mut embeddings = projections.clone();
        let mut norms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = embeddings.row_mut(r);
            let n = dot(row, row).sqrt();
            if !(n > T::zero()) || !n.is_finite() {
                return Err(UmcError::NormZero);
            }
            for v in row.iter_mut() {
                *v /= n;
            }
            norms.push(n);
        }
        let origin = (0..rows).map(|r| r % b).collect();
        let view = (0..rows).map(|r| tags[r / b]).collect();
        let pseudo_label = match pseudo_labels {
            Some(l) => {
                if l.len() != b {
                    return Err(UmcError::DimMismatch {
                        expected: b,
                        got: l.len(),
                    });
                }
                Some((0..rows).map(|r| l[r % b]).collect())
            }
            None => None,
        };
        Ok(Self {
            embeddings,
            norms,
            origin,
            view,
            pseudo_label,
        })
    }

    pub fn rows(&self) -> usize {
        self.origin.len()
    }

    pub fn origins(&self) -> usize {
        self.origin.iter().copied().max().map_or(0, |m| m + 1)
    }
}

/// Batch loss and its gradient with respect to the raw (unnormalized) projections.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput<T> {
    pub loss: T,
    pub grad: Mat<T>,
    /// Anchors that contributed (rows with a non-empty positive set).
    pub anchors: usize,
}

fn group_contrastive<T: Real>(
    batch: &ViewBatch<T>,
    group: &[usize],
    tau: f64,
) -> Result<LossOutput<T>> {
    let u = &batch.embeddings;
    let n = u.rows();
    let inv_tau = T::of(1.0 / tau);
    let mut sims = u.matmul_nt(u);
    sims.scale(inv_tau);

    let positives: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && group[j] == group[i]).collect())
        .collect();
    let anchors = positives.iter().filter(|p| !p.is_empty()).count();
    if anchors == 0 {
        return Err(UmcError::NoPositives);
    }
    let scale = T::one() / T::of(anchors as f64);

    let mut loss = T::zero();
    let mut dsim = Mat::zeros(n, n);
    for i in 0..n {
        let pos = &positives[i];
        if pos.is_empty() {
            continue;
        }
        let row = sims.row(i);
        let lse = log_sum_exp(row, |k| k != i);
        let inv_p = T::one() / T::of(pos.len() as f64);
        let mean_pos = pos.iter().map(|&p| row[p]).sum::<T>() * inv_p;
        loss += (lse - mean_pos) * scale;
        let drow = dsim.row_mut(i);
        for k in 0..n {
            if k != i {
                drow[k] = (row[k] - lse).exp() * scale;
            }
        }
        for &p in pos {
            drow[p] -= inv_p * scale;
        }
    }

    // d(U Uᵀ/τ): dU = (dS + dSᵀ)·U / τ
    let mut sym = dsim.add(&dsim.transpose());
    sym.scale(inv_tau);
    let du = sym.matmul(u);
    let mut grad = Mat::zeros(n, u.cols());
    for r in 0..n {
        let ur = u.row(r);
        let dr = du.row(r);
        let radial = dot(ur, dr);
        let inv_norm = T::one() / batch.norms[r];
        for (g, (&uu, &dd)) in grad.row_mut(r).iter_mut().zip(ur.iter().zip(dr)) {
            *g = (dd - uu * radial) * inv_norm;
        }
    }
    Ok(LossOutput {
        loss,
        grad,
        anchors,
    })
}

/// Unsupervised multi-view loss; positives are the other views of the same sample.
pub fn ucl_loss<T: Real>(batch: &ViewBatch<T>, tau: f64) -> Result<LossOutput<T>> {
    let b = batch.origins();
    if b < 2 {
        return Err(UmcError::BatchTooSmall(b));
    }
    group_contrastive(batch, &batch.origin, tau)
}

/// Supervised loss; positives share the (pseudo-)label. Views inherit their
/// sample's label, so each anchor always has its own other views as positives.
pub fn mscl_loss<T: Real>(batch: &ViewBatch<T>, tau: f64) -> Result<LossOutput<T>> {
    let labels = batch.pseudo_label.as_ref().ok_or_else(|| {
        UmcError::BadConfig("supervised contrastive loss needs pseudo-labels".into())
    })?;
    group_contrastive(batch, labels, tau)
}

/// Two independently dropped-out copies of `z` (inverted-dropout scaling).
pub fn dropout_twice_views<T: Real>(z: &[T], rate: f64, rng: &mut Rng) -> Result<(Vec<T>, Vec<T>)> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(UmcError::BadRate(rate));
    }
    let d = Dropout { rate };
    let apply =
        |mask: Mat<T>| -> Vec<T> { z.iter().zip(mask.data()).map(|(&v, &m)| v * m).collect() };
    let first = apply(d.mask(1, z.len(), rng));
    let second = apply(d.mask(1, z.len(), rng));
    Ok((first, second))
}

/// A loss over a fixed grouping packaged as a parameter-free [`DiffOp`]
/// (projections in, `1 × 1` loss out) so it can be gradient-checked.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOp {
    pub views_per_origin: usize,
    pub pseudo_labels: Option<Vec<usize>>,
    pub temperature: f64,
}

impl<T: Real> DiffOp<T> for LossOp {
    type Cache = Mat<T>;

    fn forward(&self, x: &Mat<T>, _mode: &mut Mode<'_>) -> (Mat<T>, Mat<T>) {
        let batch = ViewBatch::new(x, self.views_per_origin, self.pseudo_labels.as_deref())
            .expect("valid batch");
        let out = match self.pseudo_labels {
            Some(_) => mscl_loss(&batch, self.temperature),
            None => ucl_loss(&batch, self.temperature),
        }
        .expect("loss defined");
        (Mat::row_vector(&[out.loss]), out.grad)
    }

    fn backward(&mut self, grad: &Mat<T>, dy: &Mat<T>) -> Mat<T> {
        let mut g = grad.clone();
        g.scale(dy.get(0, 0));
        g
    }

    fn visit_params(&self, _f: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_params_mut(&mut self, _f: &mut dyn FnMut(&str, &mut Param<T>)) {}
}
