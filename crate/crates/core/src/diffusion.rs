//! The fixed forward corruption process, its noise schedule, the shared-draw
//! Monte-Carlo residual used for classification, and ancestral reverse
//! sampling for validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng::{fill_standard_normal, rng_from_seed, SeededRng};

/// Schedule parameters: step count and the linear beta range.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { num_steps: 30, beta_start: 1e-4, beta_end: 0.02 }
    }
}

/// Per-step noise rates and their cumulative products. Index 0 holds t = 1.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn num_steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// Reverse-step variance `beta_tilde_t`; zero at t = 1.
    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_var[t - 1]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::Contract(format!(
                "step index {t} outside 1..={}",
                self.num_steps()
            )));
        }
        Ok(())
    }
}

/// Linear beta schedule from `beta_start` to `beta_end` over T steps, with
/// cumulative products and reverse posterior variances.
pub fn make_schedule(config: ScheduleConfig) -> Result<DiffusionSchedule> {
    let t_steps = config.num_steps;
    let (b0, b1) = (config.beta_start, config.beta_end);
    if t_steps < 1 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(b0 > 0.0 && b0 <= b1 && b1 < 1.0) {
        return Err(Error::Config(format!(
            "beta range ({b0}, {b1}) must satisfy 0 < start <= end < 1"
        )));
    }
    let mut beta = Vec::with_capacity(t_steps);
    for i in 0..t_steps {
        let frac = if t_steps == 1 { 0.0 } else { i as f64 / (t_steps - 1) as f64 };
        beta.push(b0 + (b1 - b0) * frac);
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_steps);
    let mut prod = 1.0;
    for &a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    // beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t, abar_0 = 1.
    let mut posterior_var = Vec::with_capacity(t_steps);
    for i in 0..t_steps {
        let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
        posterior_var.push((1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]);
    }
    Ok(DiffusionSchedule { beta, alpha, alpha_bar, posterior_var })
}

/// One Monte-Carlo draw: a step index and a standard normal noise tensor.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Tensor,
}

/// Materialize `m` draws of (t_m, eps_m). Draw k of a larger budget is
/// identical to draw k of a smaller one under the same seed.
pub fn sample_draws(
    schedule: &DiffusionSchedule,
    dim: usize,
    m: usize,
    seed: u64,
) -> Vec<NoiseDraw> {
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    let mut draws = Vec::with_capacity(m);
    for _ in 0..m {
        let t = rng.gen_range(1..=schedule.num_steps());
        let mut eps = vec![0.0; dim];
        fill_standard_normal(&mut rng, &mut eps);
        draws.push(NoiseDraw { t, eps: Tensor::vector(eps) });
    }
    draws
}

/// Forward corruption: `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_corrupt(
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    schedule: &DiffusionSchedule,
) -> Result<Tensor> {
    schedule.check_t(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::Contract(format!(
            "forward_corrupt: x0 shape {:?} vs eps shape {:?}",
            x0.shape(),
            eps.shape()
        )));
    }
    let abar = schedule.alpha_bar(t);
    let (s_sig, s_noise) = (abar.sqrt(), (1.0 - abar).sqrt());
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| s_sig * x + s_noise * e)
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Anything that predicts the injected noise from a corrupted input, the
/// scenario label, and the step index.
pub trait NoiseModel {
    fn predict(&self, x_t: &Tensor, scenario: usize, t: usize) -> Result<Tensor>;
}

/// Monte-Carlo residual for one scenario: the mean squared prediction error
/// over the shared draws,
/// `eta_c = (1/M) sum_m ||eps_theta(corrupt(h, t_m, eps_m), c) - eps_m||^2`.
///
/// The same draw list must be reused for every scenario of one
/// classification; no gradients are recorded here.
pub fn mc_residual(
    h: &Tensor,
    scenario: usize,
    draws: &[NoiseDraw],
    model: &dyn NoiseModel,
    schedule: &DiffusionSchedule,
) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::Contract("mc_residual needs at least one draw".into()));
    }
    let mut acc = 0.0;
    for draw in draws {
        if draw.eps.shape() != h.shape() {
            return Err(Error::Contract(format!(
                "draw shape {:?} does not match input shape {:?}",
                draw.eps.shape(),
                h.shape()
            )));
        }
        let x_t = forward_corrupt(h, draw.t, &draw.eps, schedule)?;
        let pred = model.predict(&x_t, scenario, draw.t)?;
        if pred.shape() != h.shape() {
            return Err(Error::Contract(format!(
                "prediction shape {:?} does not match input shape {:?}",
                pred.shape(),
                h.shape()
            )));
        }
        acc += pred.sub(&draw.eps)?.sq_norm();
    }
    Ok(acc / draws.len() as f64)
}

/// Ancestral sampling from pure noise down to x_0, conditioned on `scenario`.
/// Mean `(x_t - beta_t/sqrt(1-abar_t) * eps_theta) / sqrt(alpha_t)`, variance
/// `beta_tilde_t` (zero at t = 1). Validation utility.
pub fn reverse_sample(
    scenario: usize,
    dim: usize,
    model: &dyn NoiseModel,
    schedule: &DiffusionSchedule,
    seed: u64,
) -> Result<Tensor> {
    let mut rng = rng_from_seed(seed);
    let mut x = gaussian_vector(&mut rng, dim);
    for t in (1..=schedule.num_steps()).rev() {
        let pred = model.predict(&x, scenario, t)?;
        let beta = schedule.beta(t);
        let coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
        let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
        let var = schedule.posterior_var(t);
        let noise = if var > 0.0 {
            Some(gaussian_vector(&mut rng, dim))
        } else {
            None
        };
        let std = var.sqrt();
        let data: Vec<f64> = x
            .data()
            .iter()
            .zip(pred.data())
            .enumerate()
            .map(|(i, (&xi, &ei))| {
                let mean = inv_sqrt_alpha * (xi - coef * ei);
                match &noise {
                    Some(n) => mean + std * n.data()[i],
                    None => mean,
                }
            })
            .collect();
        x = Tensor::vector(data);
    }
    Ok(x)
}

fn gaussian_vector(rng: &mut SeededRng, dim: usize) -> Tensor {
    let mut data = vec![0.0; dim];
    fill_standard_normal(rng, &mut data);
    Tensor::vector(data)
}

/// Test stub that recovers the injected noise exactly from the corrupted
/// input: `eps = (x_t - sqrt(abar) h) / sqrt(1 - abar)`.
pub struct OracleStub<'a> {
    pub x0: &'a Tensor,
    pub schedule: &'a DiffusionSchedule,
}

impl NoiseModel for OracleStub<'_> {
    fn predict(&self, x_t: &Tensor, _scenario: usize, t: usize) -> Result<Tensor> {
        let abar = self.schedule.alpha_bar(t);
        let (s_sig, s_noise) = (abar.sqrt(), (1.0 - abar).sqrt());
        let data = x_t
            .data()
            .iter()
            .zip(self.x0.data())
            .map(|(&xt, &x0)| (xt - s_sig * x0) / s_noise)
            .collect();
        Tensor::new(x_t.shape().to_vec(), data)
    }
}

/// Test stub returning a fixed multiple of its input.
pub struct LinearStub(pub f64);

impl NoiseModel for LinearStub {
    fn predict(&self, x_t: &Tensor, _scenario: usize, _t: usize) -> Result<Tensor> {
        Ok(x_t.scale(self.0))
    }
}

/// Test stub that always predicts zero noise.
pub struct ZeroStub;

impl NoiseModel for ZeroStub {
    fn predict(&self, x_t: &Tensor, _scenario: usize, _t: usize) -> Result<Tensor> {
        Ok(Tensor::zeros(x_t.shape().to_vec()))
    }
}
