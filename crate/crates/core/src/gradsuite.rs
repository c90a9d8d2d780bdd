//! Finite-difference gradient checks of every layer and loss in double
//! precision, shared by the `gradcheck` command and the test suite.

use serde::Serialize;

use crate::autograd::{gradcheck_with, GradcheckOptions, NodeId, ParamId, ParamStore, Tape};
use crate::error::Result;
use crate::losses::{bce_loss, dice_loss, ssim_loss, SsimConfig, SsimWindow};
use crate::nn::{conv2d, upsample2x, BatchNorm2d, ConvSpec, Mode, PdcBlock, SeBlock};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Pass threshold on the worst relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteCase {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

impl SuiteCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

fn normal(shape: &[usize], scale: f64, rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| scale * rng.normal()).expect("valid shape")
}

/// Normal values pushed at least `gap` away from zero, keeping kinks out of
/// reach of the finite-difference step.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.normal();
        v + gap * v.signum()
    })
    .expect("valid shape")
}

/// Values with pairwise gaps of at least 0.05 so max pooling never ties.
fn distinct(shape: &[usize], rng: &mut SplitMix64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    Tensor::new(shape, order.into_iter().map(|i| i as f64 * 0.05 - 1.0).collect()).expect("valid shape")
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut SplitMix64) {
    for p in store.iter_mut().filter(|p| p.trainable) {
        for v in p.value.data_mut() {
            *v = 0.5 * rng.normal();
        }
    }
}

/// `Σ out ⊙ R` for a fixed random `R`, turning any output into a scalar.
fn project(tape: &mut Tape<f64>, out: NodeId, seed: u64) -> Result<NodeId> {
    let mut rng = SplitMix64::new(seed);
    let r = normal(tape.shape(out), 1.0, &mut rng);
    let r = tape.constant(r);
    let prod = tape.mul(out, r)?;
    Ok(tape.sum(prod))
}

fn run(
    name: &'static str,
    store: &mut ParamStore<f64>,
    f: impl FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<NodeId>,
) -> Result<SuiteCase> {
    let rep = gradcheck_with(
        store,
        GradcheckOptions {
            eps: 1e-6,
            max_entries_per_param: None,
        },
        f,
    )?;
    Ok(SuiteCase {
        name,
        max_rel_error: rep.max_rel_error,
        worst_param: rep.worst_param,
        checked: rep.checked,
    })
}

fn conv_case(name: &'static str, spec: ConvSpec, seed: u64) -> Result<SuiteCase> {
    let mut rng = SplitMix64::new(seed);
    let mut s = ParamStore::new();
    let x = s.add("x", normal(&[2, 3, 7, 7], 1.0, &mut rng), true)?;
    let w = s.add("weight", normal(&[4, 3, 3, 3], 0.5, &mut rng), true)?;
    let b = s.add("bias", normal(&[4], 0.5, &mut rng), true)?;
    run(name, &mut s, |t, s| {
        let (xn, wn, bn) = (t.param(s, x), t.param(s, w), t.param(s, b));
        let y = conv2d(t, xn, wn, bn, spec)?;
        project(t, y, seed)
    })
}

fn batchnorm_case(name: &'static str, mode: Mode, seed: u64) -> Result<SuiteCase> {
    let mut rng = SplitMix64::new(seed);
    let mut s = ParamStore::new();
    let x = s.add("x", normal(&[3, 2, 4, 4], 1.0, &mut rng), true)?;
    let bn = BatchNorm2d::new(&mut s, "bn", 2)?;
    randomize(&mut s, &mut rng);
    s.get_mut(bn.running_mean).value = normal(&[2], 0.3, &mut rng);
    s.get_mut(bn.running_var).value = Tensor::new(&[2], vec![0.7, 1.9])?;
    run(name, &mut s, |t, s| {
        let xn = t.param(s, x);
        let y = bn.forward(t, s, xn, mode)?;
        project(t, y, seed)
    })
}

fn unary_case(
    name: &'static str,
    shape: &[usize],
    input: fn(&[usize], &mut SplitMix64) -> Tensor<f64>,
    op: fn(&mut Tape<f64>, NodeId) -> Result<NodeId>,
    seed: u64,
) -> Result<SuiteCase> {
    let mut rng = SplitMix64::new(seed);
    let mut s = ParamStore::new();
    let x: ParamId = s.add("x", input(shape, &mut rng), true)?;
    run(name, &mut s, |t, s| {
        let xn = t.param(s, x);
        let y = op(t, xn)?;
        project(t, y, seed)
    })
}

fn upsample_case(seed: u64) -> Result<SuiteCase> {
    let mut rng = SplitMix64::new(seed);
    let mut s = ParamStore::new();
    let x = s.add("x", normal(&[2, 3, 3, 3], 1.0, &mut rng), true)?;
    let w = s.add("weight", normal(&[3, 2, 2, 2], 0.5, &mut rng), true)?;
    let b = s.add("bias", normal(&[2], 0.5, &mut rng), true)?;
    run("upsample2x", &mut s, |t, s| {
        let (xn, wn, bn) = (t.param(s, x), t.param(s, w), t.param(s, b));
        let y = upsample2x(t, xn, wn, bn)?;
        project(t, y, seed)
    })
}

fn se_case(seed: u64) -> Result<SuiteCase> {
    let mut rng = SplitMix64::new(seed);
    let mut s = ParamStore::new();
    let x = s.add("x", normal(&[2, 8, 4, 4], 1.0, &mut rng), true)?;
    let se = SeBlock::new(&mut s, "se", 8, 2, &mut rng)?;
    randomize(&mut s, &mut rng);
    run("se_block", &mut s, |t, s| {
        let xn = t.param(s, x);
        let y = se.forward(t, s, xn)?;
        project(t, y, seed)
    })
}

fn pdc_case(seed: u64) -> Result<SuiteCase> {
    let mut rng = SplitMix64::new(seed);
    let mut s = ParamStore::new();
    let x = s.add("x", normal(&[1, 3, 7, 7], 1.0, &mut rng), true)?;
    let pdc = PdcBlock::new(&mut s, "pdc", 3, &mut rng)?;
    randomize(&mut s, &mut rng);
    run("pdc_block", &mut s, |t, s| {
        let xn = t.param(s, x);
        let y = pdc.forward(t, s, xn)?;
        project(t, y, seed)
    })
}

type LossFn = fn(&mut Tape<f64>, NodeId, NodeId) -> Result<NodeId>;

/// `P = sigmoid(z)` with `z` the checked parameter, against a fixed binary label.
fn loss_case(name: &'static str, hw: usize, loss: LossFn, seed: u64) -> Result<SuiteCase> {
    let mut rng = SplitMix64::new(seed);
    let mut s = ParamStore::new();
    let z = s.add("logits", normal(&[2, 1, hw, hw], 1.5, &mut rng), true)?;
    let label = Tensor::from_fn(&[2, 1, hw, hw], |_| (rng.next_f64() < 0.4) as u8 as f64)?;
    run(name, &mut s, |t, s| {
        let zn = t.param(s, z);
        let p = t.sigmoid(zn);
        let l = t.constant(label.clone());
        loss(t, p, l)
    })
}

fn ssim_with(kind: SsimWindow, window: usize) -> SsimConfig {
    SsimConfig {
        kind,
        window,
        ..SsimConfig::default()
    }
}

/// Runs every case; the order is stable.
pub fn gradient_suite() -> Result<Vec<SuiteCase>> {
    Ok(vec![
        conv_case("conv2d_dilation1", ConvSpec::same3x3(1), 11)?,
        conv_case("conv2d_dilation2", ConvSpec::same3x3(2), 12)?,
        conv_case("conv2d_dilation3", ConvSpec::same3x3(3), 13)?,
        conv_case("conv2d_stride2", ConvSpec { stride: 2, padding: 1, dilation: 1 }, 14)?,
        batchnorm_case("batchnorm_training", Mode::Training, 21)?,
        batchnorm_case("batchnorm_inference", Mode::Inference, 22)?,
        unary_case("maxpool2d", &[2, 2, 6, 6], distinct, |t, x| t.maxpool2d(x), 31)?,
        upsample_case(41)?,
        unary_case("relu", &[2, 3, 4, 4], |s, r| away_from_zero(s, 0.1, r), |t, x| Ok(t.relu(x)), 51)?,
        unary_case("sigmoid", &[2, 3, 4, 4], |s, r| normal(s, 2.0, r), |t, x| Ok(t.sigmoid(x)), 52)?,
        unary_case("softmax_channels", &[2, 3, 4, 4], |s, r| normal(s, 2.0, r), |t, x| t.softmax_channels(x), 53)?,
        se_case(61)?,
        pdc_case(71)?,
        loss_case("dice_loss", 6, dice_loss, 81)?,
        loss_case("bce_loss", 6, bce_loss, 82)?,
        loss_case(
            "ssim_loss_gaussian",
            13,
            |t, p, l| ssim_loss(t, p, l, &SsimConfig::default()),
            83,
        )?,
        loss_case(
            "ssim_loss_uniform",
            9,
            |t, p, l| ssim_loss(t, p, l, &ssim_with(SsimWindow::Uniform, 5)),
            84,
        )?,
        loss_case(
            "ssim_loss_global",
            6,
            |t, p, l| ssim_loss(t, p, l, &ssim_with(SsimWindow::Global, 11)),
            85,
        )?,
    ])
}
