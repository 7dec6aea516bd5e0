use rand::Rng as _;

use crate::error::{Result, UmcError};

use super::{Mat, Real, Rng};

/// Trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Mat<T>,
    pub grad: Mat<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Mat<T>) -> Self {
        let grad = Mat::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    /// Uniform in ±`bound`.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Self {
        Self::new(Mat::from_fn(rows, cols, |_, _| {
            T::of(rng.random_range(-bound..=bound))
        }))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Forward-pass mode. Training mode carries the dropout stream.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// A layer with a hand-written backward pass.
///
/// `forward` returns the cache that `backward` needs; the cache pins the
/// backward pass to the input of that forward call. `backward` accumulates
/// parameter gradients into each [`Param::grad`] and returns the gradient
/// with respect to the input.
pub trait DiffOp<T: Real> {
    type Cache;

    fn forward(&self, x: &Mat<T>, mode: &mut Mode<'_>) -> (Mat<T>, Self::Cache);

    fn backward(&mut self, cache: &Self::Cache, dy: &Mat<T>) -> Mat<T>;

    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>));

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.data().len());
        n
    }
}

/// `y = x·W + b`, with `W: in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    /// Fan-in scaled uniform init.
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: Param::uniform(inputs, outputs, bound, rng),
            bias: Param::uniform(1, outputs, bound, rng),
        }
    }

    pub fn from_parts(weight: Mat<T>, bias: Mat<T>) -> Self {
        assert_eq!(bias.shape(), (1, weight.cols()));
        Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn apply(&self, x: &Mat<T>) -> Mat<T> {
        let mut y = x.matmul(&self.weight.value);
        let b = self.bias.value.data();
        for r in 0..y.rows() {
            for (v, &bb) in y.row_mut(r).iter_mut().zip(b) {
                *v += bb;
            }
        }
        y
    }
}

impl<T: Real> DiffOp<T> for Linear<T> {
    type Cache = Mat<T>;

    fn forward(&self, x: &Mat<T>, _mode: &mut Mode<'_>) -> (Mat<T>, Mat<T>) {
        (self.apply(x), x.clone())
    }

    fn backward(&mut self, x: &Mat<T>, dy: &Mat<T>) -> Mat<T> {
        self.weight.grad.add_assign(&x.matmul_tn(dy));
        self.bias.grad.add_assign(&dy.sum_rows());
        dy.matmul_nt(&self.weight.value)
    }

    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf) GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let v = x.f64();
    T::of(0.5 * v * (1.0 + libm::erf(v / SQRT_2)))
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let v = x.f64();
    let cdf = 0.5 * (1.0 + libm::erf(v / SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * v * v).exp();
    T::of(cdf + v * pdf)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Relu;

impl<T: Real> DiffOp<T> for Relu {
    type Cache = Mat<T>;

    fn forward(&self, x: &Mat<T>, _mode: &mut Mode<'_>) -> (Mat<T>, Mat<T>) {
        (x.map(|v| v.max(T::zero())), x.clone())
    }

    fn backward(&mut self, x: &Mat<T>, dy: &Mat<T>) -> Mat<T> {
        let mut dx = dy.clone();
        for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
            if v <= T::zero() {
                *d = T::zero();
            }
        }
        dx
    }

    fn visit_params(&self, _f: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_params_mut(&mut self, _f: &mut dyn FnMut(&str, &mut Param<T>)) {}
}

/// Inverted dropout; identity in eval mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    /// Draws a keep mask already scaled by `1 / (1 - rate)`.
    pub fn mask<T: Real>(&self, rows: usize, cols: usize, rng: &mut Rng) -> Mat<T> {
        let keep = T::of(1.0 / (1.0 - self.rate));
        Mat::from_fn(rows, cols, |_, _| {
            if rng.random::<f64>() < self.rate {
                T::zero()
            } else {
                keep
            }
        })
    }
}

impl<T: Real> DiffOp<T> for Dropout {
    /// Scaled keep mask; `None` when the pass was the identity.
    type Cache = Option<Mat<T>>;

    fn forward(&self, x: &Mat<T>, mode: &mut Mode<'_>) -> (Mat<T>, Option<Mat<T>>) {
        match mode {
            Mode::Train(rng) if self.rate > 0.0 => {
                let mask = self.mask::<T>(x.rows(), x.cols(), rng);
                let mut y = x.clone();
                for (v, &m) in y.data_mut().iter_mut().zip(mask.data()) {
                    *v *= m;
                }
                (y, Some(mask))
            }
            _ => (x.clone(), None),
        }
    }

    fn backward(&mut self, mask: &Option<Mat<T>>, dy: &Mat<T>) -> Mat<T> {
        match mask {
            Some(mask) => {
                let mut dx = dy.clone();
                for (v, &m) in dx.data_mut().iter_mut().zip(mask.data()) {
                    *v *= m;
                }
                dx
            }
            None => dy.clone(),
        }
    }

    fn visit_params(&self, _f: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_params_mut(&mut self, _f: &mut dyn FnMut(&str, &mut Param<T>)) {}
}

/// Row-wise layer normalization with learned gain and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Param<T>,
    pub shift: Param<T>,
    pub eps: f64,
}

pub struct LayerNormCache<T> {
    normalized: Mat<T>,
    inv_std: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Param::new(Mat::from_fn(1, dim, |_, _| T::one())),
            shift: Param::new(Mat::zeros(1, dim)),
            eps: 1e-5,
        }
    }
}

impl<T: Real> DiffOp<T> for LayerNorm<T> {
    type Cache = LayerNormCache<T>;

    fn forward(&self, x: &Mat<T>, _mode: &mut Mode<'_>) -> (Mat<T>, LayerNormCache<T>) {
        let d = T::of(x.cols() as f64);
        let mut normalized = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        let mut y = Mat::zeros(x.rows(), x.cols());
        let g = self.gain.value.data();
        let b = self.shift.value.data();
        for r in 0..x.rows() {
            let row = normalized.row_mut(r);
            let mean = row.iter().copied().sum::<T>() / d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d;
            let is = T::one() / (var + T::of(self.eps)).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
            for (c, out) in y.row_mut(r).iter_mut().enumerate() {
                *out = normalized.get(r, c) * g[c] + b[c];
            }
        }
        (
            y,
            LayerNormCache {
                normalized,
                inv_std,
            },
        )
    }

    fn backward(&mut self, cache: &LayerNormCache<T>, dy: &Mat<T>) -> Mat<T> {
        let (rows, cols) = dy.shape();
        let d = T::of(cols as f64);
        let mut dx = Mat::zeros(rows, cols);
        for r in 0..rows {
            let xh = cache.normalized.row(r);
            let dyr = dy.row(r);
            let mut mean_dxh = T::zero();
            let mut mean_dxh_xh = T::zero();
            for c in 0..cols {
                let g = self.gain.value.get(0, c);
                let dxh = dyr[c] * g;
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[c];
                let gg = self.gain.grad.get(0, c);
                self.gain.grad.set(0, c, gg + dyr[c] * xh[c]);
                let sg = self.shift.grad.get(0, c);
                self.shift.grad.set(0, c, sg + dyr[c]);
            }
            mean_dxh /= d;
            mean_dxh_xh /= d;
            let is = cache.inv_std[r];
            for c in 0..cols {
                let dxh = dyr[c] * self.gain.value.get(0, c);
                dx.set(r, c, is * (dxh - mean_dxh - xh[c] * mean_dxh_xh));
            }
        }
        dx
    }

    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        f("gain", &self.gain);
        f("shift", &self.shift);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("gain", &mut self.gain);
        f("shift", &mut self.shift);
    }
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_rel_err: f64,
    /// Location of the worst entry, e.g. `input[3]` or `weight[10]`.
    pub worst: String,
    pub entries_checked: usize,
}

const FD_STEP: f64 = 1e-5;
/// Relative errors are measured against at least this magnitude so that
/// entries whose true gradient is ~0 are judged on absolute error.
const REL_FLOOR: f64 = 1e-5;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare `op`'s analytic backward pass against central finite differences.
///
/// The scalar objective is `Σ w ⊙ op(input)` for a fixed pseudo-random `w`,
/// so every output entry contributes. Forward passes run in eval mode.
pub fn grad_check<Op: DiffOp<f64>>(
    op: &mut Op,
    input: &Mat<f64>,
    tol: f64,
) -> Result<GradCheckReport> {
    let (y, cache) = op.forward(input, &mut Mode::Eval);
    let mut wrng = Rng::new(0x5eed, "grad-check/weights");
    let w = Mat::from_fn(y.rows(), y.cols(), |_, _| wrng.random_range(-1.0..1.0));

    op.zero_grad();
    let dx = op.backward(&cache, &w);
    if !dx.is_finite() {
        return Err(UmcError::GradNonFinite("input".into()));
    }
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    let mut bad = None;
    op.visit_params(&mut |name, p| {
        if !p.grad.is_finite() {
            bad = Some(name.to_owned());
        }
        analytic.push((name.to_owned(), p.grad.data().to_vec()));
    });
    if let Some(name) = bad {
        return Err(UmcError::GradNonFinite(name));
    }

    let objective = |op: &Op, x: &Mat<f64>| -> f64 {
        let (y, _) = op.forward(x, &mut Mode::Eval);
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };

    let mut report = GradCheckReport {
        passed: true,
        max_rel_err: 0.0,
        worst: String::new(),
        entries_checked: 0,
    };
    let record = |name: String, a: f64, n: f64, report: &mut GradCheckReport| {
        let e = rel_err(a, n);
        report.entries_checked += 1;
        if e > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = e;
            report.worst = name;
        }
    };

    let mut xp = input.clone();
    for i in 0..input.data().len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + FD_STEP;
        let up = objective(op, &xp);
        xp.data_mut()[i] = orig - FD_STEP;
        let down = objective(op, &xp);
        xp.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        record(format!("input[{i}]"), dx.data()[i], numeric, &mut report);
    }

    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for (ei, &a) in grads.iter().enumerate() {
            let nudge = |op: &mut Op, delta: f64| {
                let mut k = 0;
                op.visit_params_mut(&mut |_, p| {
                    if k == pi {
                        p.value.data_mut()[ei] += delta;
                    }
                    k += 1;
                });
            };
            nudge(op, FD_STEP);
            let up = objective(op, input);
            nudge(op, -2.0 * FD_STEP);
            let down = objective(op, input);
            nudge(op, FD_STEP);
            let numeric = (up - down) / (2.0 * FD_STEP);
            record(format!("{name}[{ei}]"), a, numeric, &mut report);
        }
    }

    report.passed = report.max_rel_err < tol;
    Ok(report)
}
