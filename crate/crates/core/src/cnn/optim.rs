use serde::{Deserialize, Serialize};

use super::model::Params;
use crate::error::{arg_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for every parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    let grads = grads.named();
    let mut m = state.m.named_mut();
    let mut v = state.v.named_mut();
    let mut p = params.named_mut();
    for (((name, pt), (_, gt)), (_, mt)) in p.iter().zip(&grads).zip(&m) {
        if pt.shape() != gt.shape() || pt.shape() != mt.shape() {
            return Err(Error::Shape {
                layer: name.clone(),
                expected: pt.shape().to_vec(),
                actual: gt.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((_, pt), (_, gt)), ((_, mt), (_, vt))) in p.iter_mut().zip(&grads).zip(m.iter_mut().zip(v.iter_mut())) {
        let g = gt.data();
        let mm = mt.data_mut();
        let vv = vt.data_mut();
        for (i, w) in pt.data_mut().iter_mut().enumerate() {
            mm[i] = cfg.beta1 * mm[i] + (1.0 - cfg.beta1) * g[i];
            vv[i] = cfg.beta2 * vv[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = mm[i] / c1;
            let vhat = vv[i] / c2;
            *w -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycleConfig {
    pub warmup_fraction: f64,
    pub div_start: f64,
    pub div_final: f64,
}

impl Default for OneCycleConfig {
    fn default() -> Self {
        Self {
            warmup_fraction: 0.3,
            div_start: 25.0,
            div_final: 1e4,
        }
    }
}

fn cosine(from: f64, to: f64, frac: f64) -> f64 {
    to + (from - to) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Learning rate at `step` of `total_steps`: cosine warm-up from
/// `lr_max / div_start` to `lr_max`, then cosine decay to `lr_max / div_final`
/// at the last step.
pub fn one_cycle_lr(step: usize, total_steps: usize, lr_max: f64, cfg: &OneCycleConfig) -> Result<f64> {
    if step >= total_steps {
        return arg_err(format!("step {step} outside schedule of {total_steps} steps"));
    }
    let start = lr_max / cfg.div_start;
    let end = lr_max / cfg.div_final;
    if total_steps == 1 {
        return Ok(lr_max);
    }
    let last = total_steps - 1;
    let peak = ((cfg.warmup_fraction * total_steps as f64).round() as usize).min(last);
    if step < peak {
        Ok(cosine(start, lr_max, step as f64 / peak as f64))
    } else if step == peak {
        Ok(lr_max)
    } else {
        Ok(cosine(lr_max, end, (step - peak) as f64 / (last - peak) as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::model::{Model, ModelConfig};
    use crate::cnn::tensor::Tensor;

    fn params() -> Params {
        let mut cfg = ModelConfig::new(16, 4);
        cfg.fc_hidden = 8;
        Model::new(cfg, 7).unwrap().params
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = params();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        for (_, t) in st.m.named_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 1.0);
        }
        let g = p.zeros_like();
        adam_step(&mut p, &g, &mut st, 0.0, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert!(st.m.named().iter().all(|(_, t)| t.data().iter().all(|&v| (v - 0.9).abs() < 1e-15)));

        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        for (_, t) in g.named_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 1.0);
        }
        let cfg = AdamConfig {
            eps: 0.0,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 0.01, &cfg).unwrap();
        for ((_, a), (_, b)) in p.named().iter().zip(before.named().iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((y - x - 0.01).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn repeated_runs_are_identical() {
        let run = || {
            let mut p = params();
            let mut st = AdamState::new(&p);
            for k in 0..10 {
                let mut g = p.clone();
                for (_, t) in g.named_mut() {
                    t.data_mut().iter_mut().for_each(|v| *v = (*v * (k + 1) as f64).sin());
                }
                adam_step(&mut p, &g, &mut st, 1e-3, &AdamConfig::default()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = params();
        let mut g = p.zeros_like();
        g.fc2_b = Tensor::zeros(&[4]);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &g, &mut st, 0.1, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("fc2.bias"));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn one_cycle_endpoints() {
        let cfg = OneCycleConfig::default();
        let total = 250;
        let lr = 0.01;
        assert!((one_cycle_lr(0, total, lr, &cfg).unwrap() - lr / 25.0).abs() < 1e-15);
        assert_eq!(one_cycle_lr(75, total, lr, &cfg).unwrap(), lr);
        assert!((one_cycle_lr(total - 1, total, lr, &cfg).unwrap() - lr / 1e4).abs() < 1e-9);
        assert!(one_cycle_lr(total, total, lr, &cfg).is_err());
        let max = (0..total)
            .map(|s| one_cycle_lr(s, total, lr, &cfg).unwrap())
            .fold(0.0, f64::max);
        assert_eq!(max, lr);
    }

    #[test]
    fn one_cycle_is_monotone_in_each_phase() {
        let cfg = OneCycleConfig::default();
        let lrs: Vec<f64> = (0..100).map(|s| one_cycle_lr(s, 100, 1.0, &cfg).unwrap()).collect();
        assert!(lrs[..=30].windows(2).all(|w| w[0] < w[1]));
        assert!(lrs[30..].windows(2).all(|w| w[0] > w[1]));
    }
}
