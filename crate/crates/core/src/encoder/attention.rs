//! Pre-norm Transformer encoder over a single (unpadded) sequence.

use crate::numerics::{
    gelu, gelu_grad, softmax_rows, DiffOp, LayerNorm, LayerNormCache, Linear, Mat, Mode, Param,
    Real, Rng,
};

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub heads: usize,
}

pub struct AttentionCache<T> {
    x: Mat<T>,
    q: Mat<T>,
    k: Mat<T>,
    v: Mat<T>,
    /// Row-softmaxed scores, one `L × L` matrix per head.
    weights: Vec<Mat<T>>,
    /// Concatenated head outputs, the input of the output projection.
    merged: Mat<T>,
}

impl<T: Real> MultiHeadAttention<T> {
    pub fn new(dim: usize, heads: usize, rng: &mut Rng) -> Self {
        assert!(
            heads > 0 && dim.is_multiple_of(heads),
            "heads must divide the model dim"
        );
        Self {
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            output: Linear::new(dim, dim, rng),
            heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.query.outputs() / self.heads
    }
}

impl<T: Real> DiffOp<T> for MultiHeadAttention<T> {
    type Cache = AttentionCache<T>;

    fn forward(&self, x: &Mat<T>, _mode: &mut Mode<'_>) -> (Mat<T>, AttentionCache<T>) {
        let len = x.rows();
        let hd = self.head_dim();
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let q = self.query.apply(x);
        let k = self.key.apply(x);
        let v = self.value.apply(x);
        let mut merged = Mat::zeros(len, q.cols());
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.col_block(h * hd, hd);
            let kh = k.col_block(h * hd, hd);
            let vh = v.col_block(h * hd, hd);
            let mut a = qh.matmul_nt(&kh);
            a.scale(scale);
            softmax_rows(&mut a);
            let oh = a.matmul(&vh);
            for r in 0..len {
                merged.row_mut(r)[h * hd..(h + 1) * hd].copy_from_slice(oh.row(r));
            }
            weights.push(a);
        }
        let y = self.output.apply(&merged);
        (
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                weights,
                merged,
            },
        )
    }

    fn backward(&mut self, c: &AttentionCache<T>, dy: &Mat<T>) -> Mat<T> {
        let len = c.x.rows();
        let hd = self.head_dim();
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let dmerged = self.output.backward(&c.merged, dy);
        let dim = c.q.cols();
        let mut dq = Mat::zeros(len, dim);
        let mut dk = Mat::zeros(len, dim);
        let mut dv = Mat::zeros(len, dim);
        for h in 0..self.heads {
            let a = &c.weights[h];
            let qh = c.q.col_block(h * hd, hd);
            let kh = c.k.col_block(h * hd, hd);
            let vh = c.v.col_block(h * hd, hd);
            let doh = dmerged.col_block(h * hd, hd);
            let da = doh.matmul_nt(&vh);
            let dvh = a.matmul_tn(&doh);
            // softmax backward, then the 1/√d scale
            let mut ds = Mat::zeros(len, len);
            for r in 0..len {
                let dot: T = a.row(r).iter().zip(da.row(r)).map(|(&p, &g)| p * g).sum();
                for col in 0..len {
                    ds.set(r, col, a.get(r, col) * (da.get(r, col) - dot) * scale);
                }
            }
            let dqh = ds.matmul(&kh);
            let dkh = ds.matmul_tn(&qh);
            for r in 0..len {
                dq.row_mut(r)[h * hd..(h + 1) * hd].copy_from_slice(dqh.row(r));
                dk.row_mut(r)[h * hd..(h + 1) * hd].copy_from_slice(dkh.row(r));
                dv.row_mut(r)[h * hd..(h + 1) * hd].copy_from_slice(dvh.row(r));
            }
        }
        let mut dx = self.query.backward(&c.x, &dq);
        dx.add_assign(&self.key.backward(&c.x, &dk));
        dx.add_assign(&self.value.backward(&c.x, &dv));
        dx
    }

    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.query
            .visit_params(&mut |n, p| f(&format!("query.{n}"), p));
        self.key.visit_params(&mut |n, p| f(&format!("key.{n}"), p));
        self.value
            .visit_params(&mut |n, p| f(&format!("value.{n}"), p));
        self.output
            .visit_params(&mut |n, p| f(&format!("output.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.query
            .visit_params_mut(&mut |n, p| f(&format!("query.{n}"), p));
        self.key
            .visit_params_mut(&mut |n, p| f(&format!("key.{n}"), p));
        self.value
            .visit_params_mut(&mut |n, p| f(&format!("value.{n}"), p));
        self.output
            .visit_params_mut(&mut |n, p| f(&format!("output.{n}"), p));
    }
}

/// `h = x + MHA(LN(x))`, `y = h + W₂·GELU(W₁·LN(h))`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T> {
    pub norm1: LayerNorm<T>,
    pub attention: MultiHeadAttention<T>,
    pub norm2: LayerNorm<T>,
    pub ff_in: Linear<T>,
    pub ff_out: Linear<T>,
}

pub struct EncoderLayerCache<T> {
    norm1: LayerNormCache<T>,
    attention: AttentionCache<T>,
    norm2: LayerNormCache<T>,
    normed2: Mat<T>,
    pre_act: Mat<T>,
    act: Mat<T>,
}

impl<T: Real> EncoderLayer<T> {
    pub fn new(dim: usize, heads: usize, ff_dim: usize, rng: &mut Rng) -> Self {
        Self {
            norm1: LayerNorm::new(dim),
            attention: MultiHeadAttention::new(dim, heads, rng),
            norm2: LayerNorm::new(dim),
            ff_in: Linear::new(dim, ff_dim, rng),
            ff_out: Linear::new(ff_dim, dim, rng),
        }
    }
}

impl<T: Real> DiffOp<T> for EncoderLayer<T> {
    type Cache = EncoderLayerCache<T>;

    fn forward(&self, x: &Mat<T>, mode: &mut Mode<'_>) -> (Mat<T>, EncoderLayerCache<T>) {
        let (a, norm1) = self.norm1.forward(x, mode);
        let (att, attention) = self.attention.forward(&a, mode);
        let h = x.add(&att);
        let (normed2, norm2) = self.norm2.forward(&h, mode);
        let pre_act = self.ff_in.apply(&normed2);
        let act = pre_act.map(gelu);
        let y = h.add(&self.ff_out.apply(&act));
        (
            y,
            EncoderLayerCache {
                norm1,
                attention,
                norm2,
                normed2,
                pre_act,
                act,
            },
        )
    }

    fn backward(&mut self, c: &EncoderLayerCache<T>, dy: &Mat<T>) -> Mat<T> {
        let mut dact = self.ff_out.backward(&c.act, dy);
        for (d, &z) in dact.data_mut().iter_mut().zip(c.pre_act.data()) {
            *d *= gelu_grad(z);
        }
        let dnormed2 = self.ff_in.backward(&c.normed2, &dact);
        let mut dh = dy.clone();
        dh.add_assign(&self.norm2.backward(&c.norm2, &dnormed2));
        let da = self.attention.backward(&c.attention, &dh);
        let mut dx = dh;
        dx.add_assign(&self.norm1.backward(&c.norm1, &da));
        dx
    }

    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.norm1
            .visit_params(&mut |n, p| f(&format!("norm1.{n}"), p));
        self.attention
            .visit_params(&mut |n, p| f(&format!("attention.{n}"), p));
        self.norm2
            .visit_params(&mut |n, p| f(&format!("norm2.{n}"), p));
        self.ff_in
            .visit_params(&mut |n, p| f(&format!("ff_in.{n}"), p));
        self.ff_out
            .visit_params(&mut |n, p| f(&format!("ff_out.{n}"), p));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.norm1
            .visit_params_mut(&mut |n, p| f(&format!("norm1.{n}"), p));
        self.attention
            .visit_params_mut(&mut |n, p| f(&format!("attention.{n}"), p));
        self.norm2
            .visit_params_mut(&mut |n, p| f(&format!("norm2.{n}"), p));
        self.ff_in
            .visit_params_mut(&mut |n, p| f(&format!("ff_in.{n}"), p));
        self.ff_out
            .visit_params_mut(&mut |n, p| f(&format!("ff_out.{n}"), p));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionEncoder<T> {
    pub layers: Vec<EncoderLayer<T>>,
}

impl<T: Real> AttentionEncoder<T> {
    pub fn new(dim: usize, layers: usize, heads: usize, ff_dim: usize, rng: &mut Rng) -> Self {
        Self {
            layers: (0..layers)
                .map(|_| EncoderLayer::new(dim, heads, ff_dim, rng))
                .collect(),
        }
    }
}

impl<T: Real> DiffOp<T> for AttentionEncoder<T> {
    type Cache = Vec<EncoderLayerCache<T>>;

    fn forward(&self, x: &Mat<T>, mode: &mut Mode<'_>) -> (Mat<T>, Self::Cache) {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(&h, mode);
            caches.push(c);
            h = y;
        }
        (h, caches)
    }

    fn backward(&mut self, caches: &Self::Cache, dy: &Mat<T>) -> Mat<T> {
        let mut d = dy.clone();
        for (layer, c) in self.layers.iter_mut().zip(caches).rev() {
            d = layer.backward(c, &d);
        }
        d
    }

    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit_params(&mut |n, p| f(&format!("layer{i}.{n}"), p));
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params_mut(&mut |n, p| f(&format!("layer{i}.{n}"), p));
        }
    }
}
