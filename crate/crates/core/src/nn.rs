//! Dense tensors and the handful of numeric routines the pair models need.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Dense row-major tensor of rank 1 to 3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::ShapeMismatch(format!(
                "rank {} not in 1..=3",
                shape.len()
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("tensor values must be finite".into()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

pub fn tanh_activation(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

#[inline]
pub fn leaky(x: f64) -> f64 {
    x.max(0.0) + 0.01 * x.min(0.0)
}

/// Derivative of [`leaky`]; the slope at exactly zero is taken as 0.01.
#[inline]
pub fn leaky_slope(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.01
    }
}

pub fn leaky_rectifier(x: &Tensor) -> Tensor {
    x.map(leaky)
}

/// Softmax probabilities and the negative log likelihood of `gold`.
pub fn softmax_nll(logits: &[f64], gold: usize) -> Result<(Vec<f64>, f64)> {
    if gold >= logits.len() {
        return Err(Error::ClassOutOfRange {
            index: gold,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / total).collect();
    let loss = total.ln() - (logits[gold] - max);
    Ok((probs, loss))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaDeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AdaDeltaConfig {
    fn default() -> Self {
        AdaDeltaConfig {
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

/// Running averages of squared gradients and squared updates for one tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub mean_sq_grad: Tensor,
    pub mean_sq_update: Tensor,
}

impl OptimizerState {
    pub fn for_param(param: &Tensor) -> OptimizerState {
        OptimizerState {
            mean_sq_grad: Tensor::zeros(param.shape()),
            mean_sq_update: Tensor::zeros(param.shape()),
        }
    }
}

/// One AdaDelta update of `param` in place.
pub fn adadelta_step(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut OptimizerState,
    config: AdaDeltaConfig,
) -> Result<()> {
    if param.shape != grad.shape
        || param.shape != state.mean_sq_grad.shape
        || param.shape != state.mean_sq_update.shape
    {
        return Err(Error::ShapeMismatch(format!(
            "param {:?}, grad {:?}, state {:?}",
            param.shape, grad.shape, state.mean_sq_grad.shape
        )));
    }
    let AdaDeltaConfig { rho, epsilon } = config;
    let eg = state.mean_sq_grad.data.iter_mut();
    let ex = state.mean_sq_update.data.iter_mut();
    for (((p, &g), eg), ex) in param.data.iter_mut().zip(&grad.data).zip(eg).zip(ex) {
        *eg = rho * *eg + (1.0 - rho) * g * g;
        let delta = -((*ex + epsilon).sqrt() / (*eg + epsilon).sqrt()) * g;
        *ex = rho * *ex + (1.0 - rho) * delta * delta;
        *p += delta;
    }
    Ok(())
}

pub fn init_uniform_with(shape: &[usize], range: (f64, f64), rng: &mut Rng) -> Tensor {
    let (lo, hi) = range;
    assert!(lo < hi, "empty init range");
    let len = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..len).map(|_| rng.gen_range(lo..hi)).collect(),
    }
}

/// I.i.d. uniform values, reproducible from `seed`.
pub fn init_uniform(shape: &[usize], range: (f64, f64), seed: u64) -> Tensor {
    init_uniform_with(shape, range, &mut rng::seeded(seed))
}

/// Largest relative error between `analytic` and central finite differences
/// of `loss` around `point`, with relative error
/// `|a - n| / max(|a|, |n|, 1e-8)`. Returns 0 for an empty point.
pub fn grad_check(
    mut loss: impl FnMut(&[f64]) -> f64,
    analytic: &[f64],
    point: &[f64],
    step: f64,
) -> f64 {
    assert_eq!(analytic.len(), point.len());
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = loss(&x);
        x[i] = orig - step;
        let down = loss(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}
