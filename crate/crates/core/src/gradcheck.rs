//! Finite-difference checks over every differentiable component, in `f64`.

use rand::Rng as _;
use serde::Serialize;

use crate::contrastive::{ContrastiveHead, HeadRole, LossOp};
use crate::encoder::{AttentionEncoder, EncoderConfig, Fusion, ModalityEncoder};
use crate::error::Result;
use crate::numerics::{grad_check, DiffOp, GradCheckReport, Linear, Mat, Rng};

/// Relative-error bound the suite is held to.
pub const SUITE_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub component: &'static str,
    pub passed: bool,
    pub max_rel_err: f64,
    pub worst: String,
    pub entries_checked: usize,
}

impl SuiteEntry {
    fn new(component: &'static str, r: GradCheckReport) -> Self {
        Self {
            component,
            passed: r.passed,
            max_rel_err: r.max_rel_err,
            worst: r.worst,
            entries_checked: r.entries_checked,
        }
    }
}

fn input(rows: usize, cols: usize, rng: &mut Rng) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn check<Op: DiffOp<f64>>(
    name: &'static str,
    mut op: Op,
    x: &Mat<f64>,
    tol: f64,
) -> Result<SuiteEntry> {
    Ok(SuiteEntry::new(name, grad_check(&mut op, x, tol)?))
}

/// Check `f_T`, `f_A`, `f_V`, the attention encoder, both modality
/// encoders, fusion, the three heads and both losses on small random inputs.
pub fn run_suite(seed: u64, tol: f64) -> Result<Vec<SuiteEntry>> {
    let mut rng = Rng::new(seed, "grad-check-suite");
    let h = 8;
    let cfg = EncoderConfig {
        hidden_dim: h,
        layers: 2,
        heads: 2,
        ff_dim: 16,
        dropout: 0.1,
    };
    let mut out = Vec::new();

    let x = input(3, 6, &mut rng);
    out.push(check("f_T", Linear::<f64>::new(6, h, &mut rng), &x, tol)?);
    let x = input(4, 5, &mut rng);
    out.push(check("f_A", Linear::<f64>::new(5, h, &mut rng), &x, tol)?);
    let x = input(4, 7, &mut rng);
    out.push(check("f_V", Linear::<f64>::new(7, h, &mut rng), &x, tol)?);

    let x = input(5, h, &mut rng);
    let enc = AttentionEncoder::<f64>::new(h, cfg.layers, cfg.heads, cfg.ff_dim, &mut rng);
    out.push(check("attention encoder", enc, &x, tol)?);

    let x = input(4, 5, &mut rng);
    out.push(check(
        "audio encoder",
        ModalityEncoder::<f64>::new(5, &cfg, &mut rng),
        &x,
        tol,
    )?);
    let x = input(6, 7, &mut rng);
    out.push(check(
        "video encoder",
        ModalityEncoder::<f64>::new(7, &cfg, &mut rng),
        &x,
        tol,
    )?);

    let x = input(4, 3 * h, &mut rng);
    out.push(check(
        "fusion",
        Fusion::<f64>::new(h, cfg.dropout, &mut rng),
        &x,
        tol,
    )?);

    for (name, role, tau) in [
        ("phi1", HeadRole::Pretrain, 0.2),
        ("phi2", HeadRole::Supervised, 1.4),
        ("phi3", HeadRole::Refine, 1.0),
    ] {
        let x = input(6, h, &mut rng);
        out.push(check(
            name,
            ContrastiveHead::<f64>::new(h, 6, tau, role, &mut rng)?,
            &x,
            tol,
        )?);
    }

    let x = input(12, 6, &mut rng);
    let ucl = LossOp {
        views_per_origin: 3,
        pseudo_labels: None,
        temperature: 0.2,
    };
    out.push(check("ucl loss", ucl, &x, tol)?);
    let mscl = LossOp {
        views_per_origin: 3,
        pseudo_labels: Some(vec![0, 1, 1, 2]),
        temperature: 1.4,
    };
    out.push(check("mscl loss", mscl, &x, tol)?);
    Ok(out)
}
