//! Fixed-topology 1-D residual CNN:
//!
//! ```text
//! input [B, 1, N]
//!   -> conv block (conv, batch-norm, ReLU), stem channels
//!   -> residual block 1: two conv blocks + identity shortcut
//!   -> residual block 2: two conv blocks + kernel-1 conv/batch-norm projection
//!   -> global average pooling over time
//!   -> fc + ReLU -> dropout -> fc -> softmax over 3 classes
//! ```
//!
//! Residual sums are followed by a ReLU. Convolutions feeding a batch-norm
//! carry no bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, BnBatchStats, BnCache, ConvDims};
use super::tensor::Tensor;
use crate::error::{arg_err, Error, Result};

pub const N_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_len: usize,
    pub conv_kernel: usize,
    pub stem_channels: usize,
    pub res1_channels: usize,
    pub res2_channels: usize,
    pub fc_hidden: usize,
    pub n_classes: usize,
    pub dropout_p: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    pub fn new(input_len: usize, conv_kernel: usize) -> Self {
        Self {
            input_len,
            conv_kernel,
            stem_channels: 16,
            res1_channels: 16,
            res2_channels: 32,
            fc_hidden: 64,
            n_classes: N_CLASSES,
            dropout_p: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.conv_kernel == 0 {
            return Err(Error::Config("input length and kernel must be positive".into()));
        }
        if self.stem_channels == 0 || self.res1_channels == 0 || self.res2_channels == 0 || self.fc_hidden == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.stem_channels != self.res1_channels {
            return Err(Error::Config(
                "the first residual block has an identity shortcut: stem and res1 channels must match".into(),
            ));
        }
        if self.n_classes != N_CLASSES {
            return Err(Error::Config(format!("the classifier has exactly {N_CLASSES} classes")));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout_p)));
        }
        Ok(())
    }

    fn dims(&self, cin: usize, cout: usize, kernel: usize) -> ConvDims {
        ConvDims {
            cin,
            cout,
            kernel,
            len: self.input_len,
        }
    }
}

/// Convolution weights plus the batch-norm affine parameters that follow it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn {
    pub weight: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl ConvBn {
    fn init(cin: usize, cout: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: uniform(&[cout, cin, kernel], (6.0 / (cin * kernel) as f64).sqrt(), rng),
            gamma: Tensor::new(vec![cout], vec![1.0; cout]).expect("non-empty"),
            beta: Tensor::zeros(&[cout]),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape()),
            gamma: Tensor::zeros(self.gamma.shape()),
            beta: Tensor::zeros(self.beta.shape()),
        }
    }
}

fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

/// Every learnable tensor. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub stem: ConvBn,
    pub res1_a: ConvBn,
    pub res1_b: ConvBn,
    pub res2_a: ConvBn,
    pub res2_b: ConvBn,
    pub res2_proj: ConvBn,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
}

macro_rules! visit_params {
    ($self:ident, $($amp:tt)+) => {{
        let mut out = Vec::with_capacity(22);
        for (unit, cb) in [
            ("stem", $($amp)+ $self.stem),
            ("res1.a", $($amp)+ $self.res1_a),
            ("res1.b", $($amp)+ $self.res1_b),
            ("res2.a", $($amp)+ $self.res2_a),
            ("res2.b", $($amp)+ $self.res2_b),
            ("res2.proj", $($amp)+ $self.res2_proj),
        ] {
            out.push((format!("{unit}.conv.weight"), $($amp)+ cb.weight));
            out.push((format!("{unit}.bn.gamma"), $($amp)+ cb.gamma));
            out.push((format!("{unit}.bn.beta"), $($amp)+ cb.beta));
        }
        out.push(("fc1.weight".to_owned(), $($amp)+ $self.fc1_w));
        out.push(("fc1.bias".to_owned(), $($amp)+ $self.fc1_b));
        out.push(("fc2.weight".to_owned(), $($amp)+ $self.fc2_w));
        out.push(("fc2.bias".to_owned(), $($amp)+ $self.fc2_b));
        out
    }};
}

impl Params {
    /// Named tensors in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        visit_params!(self, &)
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        visit_params!(self, &mut)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            stem: self.stem.zeros_like(),
            res1_a: self.res1_a.zeros_like(),
            res1_b: self.res1_b.zeros_like(),
            res2_a: self.res2_a.zeros_like(),
            res2_b: self.res2_b.zeros_like(),
            res2_proj: self.res2_proj.zeros_like(),
            fc1_w: Tensor::zeros(self.fc1_w.shape()),
            fc1_b: Tensor::zeros(self.fc1_b.shape()),
            fc2_w: Tensor::zeros(self.fc2_w.shape()),
            fc2_b: Tensor::zeros(self.fc2_b.shape()),
        }
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnRunning {
    fn new(ch: usize) -> Self {
        Self {
            mean: vec![0.0; ch],
            var: vec![1.0; ch],
        }
    }
}

/// Names of the six batch-norm layers, in the order of [`Model::running`].
pub const BN_NAMES: [&str; 6] = ["stem", "res1.a", "res1.b", "res2.a", "res2.b", "res2.proj"];

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    pub running: Vec<BnRunning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
    /// Running statistics, no dropout.
    Eval,
}

/// Gradients of the mean cross-entropy plus the batch statistics the forward
/// pass observed (for updating running statistics).
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Params,
    pub bn_stats: Vec<BnBatchStats>,
}

struct UnitOut {
    input: Vec<f64>,
    cache: Option<BnCache>,
    stats: Option<BnBatchStats>,
}

struct Activations {
    batch: usize,
    units: Vec<UnitOut>,
    a1: Vec<f64>,
    b1: Vec<f64>,
    o1: Vec<f64>,
    b2: Vec<f64>,
    o2: Vec<f64>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    mask: Vec<f64>,
    dropped: Vec<f64>,
    logits: Vec<f64>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.conv_kernel;
        let (c0, c1, c2, h) = (config.stem_channels, config.res1_channels, config.res2_channels, config.fc_hidden);
        let params = Params {
            stem: ConvBn::init(1, c0, k, &mut rng),
            res1_a: ConvBn::init(c0, c1, k, &mut rng),
            res1_b: ConvBn::init(c1, c1, k, &mut rng),
            res2_a: ConvBn::init(c1, c2, k, &mut rng),
            res2_b: ConvBn::init(c2, c2, k, &mut rng),
            res2_proj: ConvBn::init(c1, c2, 1, &mut rng),
            fc1_w: uniform(&[h, c2], (6.0 / c2 as f64).sqrt(), &mut rng),
            fc1_b: Tensor::zeros(&[h]),
            fc2_w: uniform(&[N_CLASSES, h], 1.0 / (h as f64).sqrt(), &mut rng),
            fc2_b: Tensor::zeros(&[N_CLASSES]),
        };
        let running = vec![
            BnRunning::new(c0),
            BnRunning::new(c1),
            BnRunning::new(c1),
            BnRunning::new(c2),
            BnRunning::new(c2),
            BnRunning::new(c2),
        ];
        Ok(Self {
            config,
            params,
            running,
        })
    }

    fn unit(&self, i: usize) -> &ConvBn {
        let p = &self.params;
        [&p.stem, &p.res1_a, &p.res1_b, &p.res2_a, &p.res2_b, &p.res2_proj][i]
    }

    fn unit_dims(&self, i: usize) -> ConvDims {
        let c = &self.config;
        let k = c.conv_kernel;
        match i {
            0 => c.dims(1, c.stem_channels, k),
            1 => c.dims(c.stem_channels, c.res1_channels, k),
            2 => c.dims(c.res1_channels, c.res1_channels, k),
            3 => c.dims(c.res1_channels, c.res2_channels, k),
            4 => c.dims(c.res2_channels, c.res2_channels, k),
            _ => c.dims(c.res1_channels, c.res2_channels, 1),
        }
    }

    fn check_input(&self, batch: &Tensor) -> Result<usize> {
        let shape = batch.shape();
        if shape.len() != 3 || shape[1] != 1 || shape[2] != self.config.input_len {
            return Err(Error::Shape {
                layer: "input".into(),
                expected: vec![shape.first().copied().unwrap_or(0), 1, self.config.input_len],
                actual: shape.to_vec(),
            });
        }
        Ok(shape[0])
    }

    /// Conv then batch-norm for unit `i`; returns the pre-activation output.
    fn conv_bn(&self, i: usize, x: Vec<f64>, batch: usize, train: bool) -> (Vec<f64>, UnitOut) {
        let d = self.unit_dims(i);
        let u = self.unit(i);
        let z = layers::conv_forward(&x, batch, d, u.weight.data());
        let eps = self.config.bn_eps;
        if train {
            let (y, cache, stats) =
                layers::bn_forward_train(&z, batch, d.cout, d.len, u.gamma.data(), u.beta.data(), eps);
            (
                y,
                UnitOut {
                    input: x,
                    cache: Some(cache),
                    stats: Some(stats),
                },
            )
        } else {
            let r = &self.running[i];
            let y = layers::bn_forward_eval(
                &z,
                batch,
                d.cout,
                d.len,
                u.gamma.data(),
                u.beta.data(),
                &r.mean,
                &r.var,
                eps,
            );
            (
                y,
                UnitOut {
                    input: x,
                    cache: None,
                    stats: None,
                },
            )
        }
    }

    fn run(&self, batch_t: &Tensor, mode: Mode) -> Result<Activations> {
        let batch = self.check_input(batch_t)?;
        let train = matches!(mode, Mode::Train { .. });
        let mut units = Vec::with_capacity(6);

        let (mut a1, u) = self.conv_bn(0, batch_t.data().to_vec(), batch, train);
        layers::relu_in_place(&mut a1);
        units.push(u);

        let (mut b1, u) = self.conv_bn(1, a1.clone(), batch, train);
        layers::relu_in_place(&mut b1);
        units.push(u);
        let (mut o1, u) = self.conv_bn(2, b1.clone(), batch, train);
        units.push(u);
        for (o, s) in o1.iter_mut().zip(&a1) {
            *o += s;
        }
        layers::relu_in_place(&mut o1);

        let (mut b2, u) = self.conv_bn(3, o1.clone(), batch, train);
        layers::relu_in_place(&mut b2);
        units.push(u);
        let (mut o2, u) = self.conv_bn(4, b2.clone(), batch, train);
        units.push(u);
        let (proj, u) = self.conv_bn(5, o1.clone(), batch, train);
        units.push(u);
        for (o, s) in o2.iter_mut().zip(&proj) {
            *o += s;
        }
        layers::relu_in_place(&mut o2);

        let c = &self.config;
        let p = &self.params;
        let pooled = layers::gap_forward(&o2, batch, c.res2_channels, c.input_len);
        let mut hidden =
            layers::linear_forward(&pooled, batch, p.fc1_w.data(), p.fc1_b.data(), c.res2_channels, c.fc_hidden);
        layers::relu_in_place(&mut hidden);
        let mask = match mode {
            Mode::Train { dropout_seed } => layers::dropout_mask(hidden.len(), c.dropout_p, dropout_seed),
            Mode::Eval => vec![1.0; hidden.len()],
        };
        let dropped: Vec<f64> = hidden.iter().zip(&mask).map(|(h, m)| h * m).collect();
        let logits = layers::linear_forward(&dropped, batch, p.fc2_w.data(), p.fc2_b.data(), c.fc_hidden, N_CLASSES);

        Ok(Activations {
            batch,
            units,
            a1,
            b1,
            o1,
            b2,
            o2,
            pooled,
            hidden,
            mask,
            dropped,
            logits,
        })
    }

    /// Class probabilities `[B, 3]` for a `[B, 1, N]` batch.
    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        let act = self.run(batch, mode)?;
        Tensor::new(vec![act.batch, N_CLASSES], layers::softmax_rows(&act.logits, N_CLASSES))
    }

    /// Logits `[B, 3]`; used by gradient checks.
    pub fn logits(&self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        let act = self.run(batch, mode)?;
        Tensor::new(vec![act.batch, N_CLASSES], act.logits)
    }

    /// Mean cross-entropy over the batch and gradients for every parameter,
    /// computed in training mode.
    pub fn loss_and_grad(&self, batch: &Tensor, labels: &[usize], dropout_seed: u64) -> Result<LossGrad> {
        let b = self.check_input(batch)?;
        if labels.len() != b {
            return arg_err(format!("{} labels for a batch of {b}", labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= N_CLASSES) {
            return arg_err(format!("label {bad} is not a valid class"));
        }
        let act = self.run(batch, Mode::Train { dropout_seed })?;
        let (loss, dlogits) = layers::cross_entropy(&act.logits, N_CLASSES, labels);
        let mut grads = self.params.zeros_like();
        self.backward(&act, &dlogits, &mut grads);
        let bn_stats = act
            .units
            .into_iter()
            .map(|u| u.stats.expect("train mode records batch statistics"))
            .collect();
        Ok(LossGrad {
            loss,
            grads,
            bn_stats,
        })
    }

    /// Backward through unit `i` from the gradient of its batch-norm output.
    fn unit_backward(&self, i: usize, act: &Activations, dy: &[f64], grads: &mut ConvBn, need_dx: bool) -> Vec<f64> {
        let d = self.unit_dims(i);
        let u = self.unit(i);
        let unit = &act.units[i];
        let cache = unit.cache.as_ref().expect("train mode keeps batch-norm caches");
        let (dz, dgamma, dbeta) = layers::bn_backward(dy, cache, act.batch, d.cout, d.len, u.gamma.data());
        let (dx, dw) = layers::conv_backward(&unit.input, act.batch, d, u.weight.data(), &dz, need_dx);
        grads.weight.data_mut().copy_from_slice(&dw);
        grads.gamma.data_mut().copy_from_slice(&dgamma);
        grads.beta.data_mut().copy_from_slice(&dbeta);
        dx
    }

    fn backward(&self, act: &Activations, dlogits: &[f64], g: &mut Params) {
        let c = &self.config;
        let p = &self.params;
        let batch = act.batch;

        let (ddropped, dw, db) = layers::linear_backward(&act.dropped, batch, p.fc2_w.data(), dlogits, c.fc_hidden, N_CLASSES);
        g.fc2_w.data_mut().copy_from_slice(&dw);
        g.fc2_b.data_mut().copy_from_slice(&db);
        let mut dhidden: Vec<f64> = ddropped.iter().zip(&act.mask).map(|(d, m)| d * m).collect();
        layers::relu_backward_in_place(&act.hidden, &mut dhidden);
        let (dpooled, dw, db) =
            layers::linear_backward(&act.pooled, batch, p.fc1_w.data(), &dhidden, c.res2_channels, c.fc_hidden);
        g.fc1_w.data_mut().copy_from_slice(&dw);
        g.fc1_b.data_mut().copy_from_slice(&db);

        let mut do2 = layers::gap_backward(&dpooled, batch, c.res2_channels, c.input_len);
        layers::relu_backward_in_place(&act.o2, &mut do2);
        let mut db2 = self.unit_backward(4, act, &do2, &mut g.res2_b, true);
        layers::relu_backward_in_place(&act.b2, &mut db2);
        let mut do1 = self.unit_backward(3, act, &db2, &mut g.res2_a, true);
        let dproj = self.unit_backward(5, act, &do2, &mut g.res2_proj, true);
        for (a, v) in do1.iter_mut().zip(&dproj) {
            *a += v;
        }

        layers::relu_backward_in_place(&act.o1, &mut do1);
        let mut db1 = self.unit_backward(2, act, &do1, &mut g.res1_b, true);
        layers::relu_backward_in_place(&act.b1, &mut db1);
        let mut da1 = self.unit_backward(1, act, &db1, &mut g.res1_a, true);
        for (a, v) in da1.iter_mut().zip(&do1) {
            *a += v;
        }
        layers::relu_backward_in_place(&act.a1, &mut da1);
        self.unit_backward(0, act, &da1, &mut g.stem, false);
    }

    /// Folds batch statistics into the running estimates:
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update_running_stats(&mut self, stats: &[BnBatchStats]) {
        let m = self.config.bn_momentum;
        for (r, s) in self.running.iter_mut().zip(stats) {
            for (rm, bm) in r.mean.iter_mut().zip(&s.mean) {
                *rm = (1.0 - m) * *rm + m * bm;
            }
            for (rv, bv) in r.var.iter_mut().zip(&s.var_unbiased) {
                *rv = (1.0 - m) * *rv + m * bv;
            }
        }
    }

    /// Argmax class per row (ties go to the lowest index) and the probabilities.
    pub fn predict_batch(&self, batch: &Tensor) -> Result<(Vec<usize>, Tensor)> {
        let probs = self.forward(batch, Mode::Eval)?;
        let classes = (0..probs.shape()[0]).map(|i| argmax(probs.row(i))).collect();
        Ok((classes, probs))
    }

    /// Output of the first residual block for a `[B, C, N]` input, in eval mode.
    pub fn residual1_eval(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let (mut b1, _) = self.conv_bn(1, x.to_vec(), batch, false);
        layers::relu_in_place(&mut b1);
        let (mut o1, _) = self.conv_bn(2, b1, batch, false);
        for (o, s) in o1.iter_mut().zip(x) {
            *o += s;
        }
        layers::relu_in_place(&mut o1);
        o1
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Stacks raw windows into a standardized `[B, 1, N]` batch.
pub fn batch_from_windows<'a>(windows: impl IntoIterator<Item = &'a [f32]>, n: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut count = 0;
    for w in windows {
        if w.len() != n {
            return Err(Error::Shape {
                layer: "input".into(),
                expected: vec![n],
                actual: vec![w.len()],
            });
        }
        let start = data.len();
        data.resize(start + n, 0.0);
        crate::trace::standardize_f32_into(w, &mut data[start..])?;
        count += 1;
    }
    if count == 0 {
        return arg_err("empty batch");
    }
    Tensor::new(vec![count, 1, n], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(seed: u64) -> Model {
        let mut cfg = ModelConfig::new(32, 8);
        cfg.fc_hidden = 16;
        Model::new(cfg, seed).unwrap()
    }

    fn random_batch(b: usize, n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![b, 1, n], (0..b * n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn probabilities_are_normalized() {
        let m = small_model(1);
        let p = m.forward(&random_batch(5, 32, 2), Mode::Eval).unwrap();
        assert_eq!(p.shape(), &[5, 3]);
        for i in 0..5 {
            let row = p.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn zero_input_eval_is_deterministic() {
        let m = small_model(3);
        let x = Tensor::zeros(&[2, 1, 32]);
        let a = m.forward(&x, Mode::Eval).unwrap();
        let b = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
        // With zero input and fresh running statistics, every example sees the same biases.
        assert_eq!(a.row(0), a.row(1));
    }

    #[test]
    fn eval_rows_do_not_depend_on_batch_mates() {
        let m = small_model(4);
        let single = random_batch(1, 32, 5);
        let mut doubled = single.data().to_vec();
        doubled.extend_from_slice(single.data());
        let doubled = Tensor::new(vec![2, 1, 32], doubled).unwrap();
        let p1 = m.forward(&single, Mode::Eval).unwrap();
        let p2 = m.forward(&doubled, Mode::Eval).unwrap();
        for r in 0..2 {
            for (a, b) in p2.row(r).iter().zip(p1.row(0)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let m = small_model(1);
        let err = m.forward(&random_batch(1, 31, 1), Mode::Eval).unwrap_err();
        assert!(err.to_string().contains("input"));
        assert!(m.loss_and_grad(&random_batch(2, 32, 1), &[0], 0).is_err());
        assert!(m.loss_and_grad(&random_batch(1, 32, 1), &[3], 0).is_err());
    }

    #[test]
    fn uniform_prediction_loss_is_ln3() {
        let mut m = small_model(1);
        m.params.fc2_w = Tensor::zeros(m.params.fc2_w.shape());
        let lg = m.loss_and_grad(&random_batch(4, 32, 1), &[0, 1, 2, 0], 0).unwrap();
        assert!((lg.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_prediction_has_zero_loss() {
        let mut m = small_model(1);
        m.params.fc2_w = Tensor::zeros(m.params.fc2_w.shape());
        m.params.fc2_b = Tensor::new(vec![3], vec![0.0, 800.0, 0.0]).unwrap();
        let lg = m.loss_and_grad(&random_batch(2, 32, 1), &[1, 1], 0).unwrap();
        assert_eq!(lg.loss, 0.0);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }

    #[test]
    fn predict_batch_preserves_order() {
        let m = small_model(8);
        let x = random_batch(7, 32, 9);
        let (classes, probs) = m.predict_batch(&x).unwrap();
        assert_eq!(classes.len(), 7);
        for (i, &c) in classes.iter().enumerate() {
            assert_eq!(c, argmax(probs.row(i)));
        }
    }

    #[test]
    fn residual_block_with_zero_convs_is_identity() {
        let mut m = small_model(2);
        m.params.res1_a.weight = Tensor::zeros(m.params.res1_a.weight.shape());
        m.params.res1_b.weight = Tensor::zeros(m.params.res1_b.weight.shape());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Block inputs come out of a ReLU, so they are non-negative.
        let x: Vec<f64> = (0..3 * 16 * 32).map(|_| rng.random_range(0.0..3.0)).collect();
        assert_eq!(m.residual1_eval(&x, 3), x);
    }

    #[test]
    fn param_names_are_unique_and_ordered() {
        let m = small_model(1);
        let names: Vec<String> = m.params.named().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 22);
        assert_eq!(names[0], "stem.conv.weight");
        assert_eq!(names[21], "fc2.bias");
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 22);
    }

    #[test]
    fn batch_from_windows_standardizes() {
        let w1 = [1.0f32, 3.0];
        let w2 = [5.0f32, 5.0];
        let t = batch_from_windows([&w1[..], &w2[..]], 2).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2]);
        assert_eq!(t.data(), &[-1.0, 1.0, 0.0, 0.0]);
        assert!(batch_from_windows([&w1[..1]], 2).is_err());
    }
}
