//! Training and classification loops plus a feature-only baseline.
//!
//! Training repeatedly samples (scenario, channel, step, noise), corrupts the
//! input, and descends on the squared noise-prediction error. Classification
//! materializes M shared (t_m, eps_m) draws, scores every scenario with the
//! same draws, and picks the scenario with the smallest Monte-Carlo residual.

pub mod baseline;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::channelgen::Dataset;
use crate::diffusion::{
    forward_corrupt, make_schedule, mc_residual, sample_draws, DiffusionSchedule, NoiseModel,
    ScheduleConfig,
};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, NoisePredictor};
use crate::numcore::graph::{Graph, NodeId};
use crate::numcore::{softmax_slice, OptimKind, OptimizerState, Tensor};
use crate::rng::{derive_seed, fill_standard_normal, rng_from_seed};

pub use baseline::{baseline_accuracy, baseline_classify, train_baseline, BaselineModel};

/// Everything a training run needs besides the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Cosine decay floor as a fraction of `learning_rate`; 1.0 keeps the
    /// rate constant.
    pub final_lr_fraction: f64,
    pub seed: u64,
    /// Progress callback cadence, in steps.
    pub eval_every: usize,
    /// Fixed number of gradient accumulation chunks per batch. Part of the
    /// numeric contract: results do not depend on thread count, only on this.
    pub grad_chunks: usize,
    pub optimizer: OptimKind,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            learning_rate: 1e-3,
            final_lr_fraction: 1.0,
            seed: 0,
            eval_every: 200,
            grad_chunks: 4,
            optimizer: OptimKind::adam_default(),
            schedule: ScheduleConfig { num_steps: model.num_steps, ..Default::default() },
            model,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.grad_chunks == 0 {
            return Err(Error::Config("steps, batch_size and grad_chunks must be positive".into()));
        }
        if self.schedule.num_steps != self.model.num_steps {
            return Err(Error::Config(format!(
                "schedule has {} steps but model expects {}",
                self.schedule.num_steps, self.model.num_steps
            )));
        }
        self.model.validate()
    }
}

/// Squared-error noise-prediction loss for a single sample, evaluated without
/// gradients: sample t and eps from `rng`, corrupt, and score `model`.
pub fn loss_value(
    model: &dyn NoiseModel,
    h: &Tensor,
    scenario: usize,
    schedule: &DiffusionSchedule,
    t: usize,
    eps: &Tensor,
) -> Result<f64> {
    let x_t = forward_corrupt(h, t, eps, schedule)?;
    let pred = model.predict(&x_t, scenario, t)?;
    Ok(pred.sub(eps)?.sq_norm())
}

/// One pre-drawn training example: input, label, step, and noise.
struct BatchItem {
    input: Arc<Tensor>,
    scenario: usize,
    t: usize,
    eps: Tensor,
}

/// Build the graph for a chunk of batch items; returns the graph, the summed
/// loss node, and the parameter nodes.
fn chunk_loss_graph(
    model: &NoisePredictor,
    schedule: &DiffusionSchedule,
    items: &[BatchItem],
) -> Result<(Graph, NodeId, Vec<NodeId>)> {
    let mut g = Graph::new();
    let vars = model.register_params(&mut g);
    let mut total: Option<NodeId> = None;
    for item in items {
        let x_t = forward_corrupt(&item.input, item.t, &item.eps, schedule)?;
        let pred = model.forward_on_graph(&mut g, &vars, &x_t, item.scenario, item.t, None)?;
        let target = g.leaf(item.eps.clone());
        let diff = g.sub(pred, target)?;
        let sq = g.square(diff);
        let item_loss = g.sum_all(sq);
        total = Some(match total {
            Some(acc) => g.add(acc, item_loss)?,
            None => item_loss,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("empty chunk".into()))?;
    Ok((g, total, vars))
}

/// Algorithm: repeatedly sample a scenario, a training channel, a step and a
/// noise draw; predict the noise; descend on the squared error. Returns the
/// trained model and the per-step batch-mean loss history.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    mut progress: Option<&mut dyn FnMut(usize, f64)>,
) -> Result<(NoisePredictor, Vec<f64>)> {
    config.validate()?;
    if dataset.input_dim() != config.model.input_dim {
        return Err(Error::Config(format!(
            "dataset input dim {} vs model input dim {}",
            dataset.input_dim(),
            config.model.input_dim
        )));
    }
    if config.model.num_scenarios != dataset.num_scenarios {
        return Err(Error::Config(format!(
            "dataset has {} scenarios, model expects {}",
            dataset.num_scenarios, config.model.num_scenarios
        )));
    }
    let train_idx = dataset.train_indices()?;
    let mut per_scenario: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_scenarios];
    for &i in train_idx {
        per_scenario[dataset.samples[i].label].push(i);
    }
    for (c, set) in per_scenario.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::Contract(format!("scenario {c} has no training samples")));
        }
    }

    // Inputs are reused across steps; build them once.
    let inputs: Vec<Arc<Tensor>> = (0..dataset.samples.len())
        .map(|i| dataset.build_input_for(i).map(Arc::new))
        .collect::<Result<_>>()?;

    let schedule = make_schedule(config.schedule)?;
    let mut model = NoisePredictor::init(config.model, derive_seed(config.seed, 0))?;
    let mut optim = OptimizerState::new(config.optimizer, config.learning_rate);
    let names = model.param_names();
    let mut rng = rng_from_seed(derive_seed(config.seed, 1));
    let dim = config.model.input_dim;
    let mut history = Vec::with_capacity(config.steps);

    use rand::Rng;
    for step in 0..config.steps {
        // Draw the whole batch sequentially so chunking never affects draws.
        let mut items = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let c = rng.gen_range(0..dataset.num_scenarios);
            let idx = per_scenario[c][rng.gen_range(0..per_scenario[c].len())];
            let t = rng.gen_range(1..=schedule.num_steps());
            let mut eps = vec![0.0; dim];
            fill_standard_normal(&mut rng, &mut eps);
            items.push(BatchItem {
                input: inputs[idx].clone(),
                scenario: c,
                t,
                eps: Tensor::vector(eps),
            });
        }

        // Fixed chunking; chunks run in parallel, results fold in order.
        let chunk_size = config.batch_size.div_ceil(config.grad_chunks);
        let chunks: Vec<&[BatchItem]> = items.chunks(chunk_size).collect();
        let results: Vec<Result<(f64, Vec<Tensor>)>> = chunks
            .par_iter()
            .map(|chunk| {
                let (mut g, total, vars) = chunk_loss_graph(&model, &schedule, chunk)?;
                let loss = g.value(total).item();
                g.backward(total)?;
                let grads: Vec<Tensor> = vars
                    .iter()
                    .map(|&v| g.grad(v).expect("param grad").clone())
                    .collect();
                Ok((loss, grads))
            })
            .collect();

        let mut loss_sum = 0.0;
        let mut grad_sum: Option<Vec<Tensor>> = None;
        for r in results {
            let (loss, grads) = r?;
            loss_sum += loss;
            grad_sum = Some(match grad_sum {
                None => grads,
                Some(mut acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                            *av += gv;
                        }
                    }
                    acc
                }
            });
        }
        let batch_loss = loss_sum / config.batch_size as f64;
        if !batch_loss.is_finite() {
            return Err(Error::Training(format!("loss became non-finite at step {step}")));
        }
        let inv_batch = 1.0 / config.batch_size as f64;
        let grads: Vec<Tensor> = grad_sum
            .expect("at least one chunk")
            .into_iter()
            .map(|g| g.scale(inv_batch))
            .collect();

        if config.final_lr_fraction < 1.0 {
            let lr_min = config.learning_rate * config.final_lr_fraction;
            let frac = if config.steps > 1 {
                step as f64 / (config.steps - 1) as f64
            } else {
                0.0
            };
            let lr_t = lr_min
                + 0.5 * (config.learning_rate - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos());
            optim.set_learning_rate(lr_t);
        }
        let mut arcs = model.take_param_arcs();
        optim.step(&mut arcs, &grads, &names)?;
        model.put_param_arcs(arcs);

        history.push(batch_loss);
        if let Some(cb) = progress.as_deref_mut() {
            if (step + 1) % config.eval_every == 0 || step + 1 == config.steps {
                cb(step + 1, batch_loss);
            }
        }
    }
    Ok((model, history))
}

/// Outcome of classifying one test channel.
#[derive(Debug, Clone)]
pub struct ClassificationResult {
    /// Per-scenario Monte-Carlo residuals.
    pub eta: Vec<f64>,
    /// softmax(-eta): positive, sums to 1.
    pub posterior: Vec<f64>,
    /// argmax of the posterior; ties break toward the lowest index.
    pub label: usize,
    pub draws: usize,
    pub seed: u64,
}

/// Posterior over scenarios from the residual vector: softmax of -eta.
pub fn posterior_from_eta(eta: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = eta.iter().map(|&e| -e).collect();
    softmax_slice(&neg)
}

/// Lowest-index argmax.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Identify the scenario of one input: draw M shared (t_m, eps_m) pairs,
/// compute the residual of every scenario against the same draws, and take
/// the softmax(-eta) argmax.
pub fn classify(
    input: &Tensor,
    model: &NoisePredictor,
    schedule: &DiffusionSchedule,
    m_draws: usize,
    seed: u64,
) -> Result<ClassificationResult> {
    if m_draws == 0 {
        return Err(Error::Contract("classify needs at least one draw".into()));
    }
    if input.numel() != model.config().input_dim {
        return Err(Error::Contract(format!(
            "input has {} entries, model expects {}",
            input.numel(),
            model.config().input_dim
        )));
    }
    let draws = sample_draws(schedule, input.numel(), m_draws, seed);
    let num_scenarios = model.config().num_scenarios;
    let mut eta = Vec::with_capacity(num_scenarios);
    for c in 0..num_scenarios {
        eta.push(mc_residual(input, c, &draws, model, schedule)?);
    }
    let posterior = posterior_from_eta(&eta);
    let label = argmax(&posterior);
    Ok(ClassificationResult { eta, posterior, label, draws: m_draws, seed })
}

/// Classification of one dataset sample by index.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub sample_id: usize,
    pub true_label: usize,
    pub result: ClassificationResult,
}

/// Classify a set of dataset samples in parallel. Sample k always uses
/// `derive_seed(master_seed, k)`, so results are independent of scheduling.
/// Returns per-sample outcomes (in the order given) and the accuracy.
pub fn classify_samples(
    dataset: &Dataset,
    indices: &[usize],
    model: &NoisePredictor,
    schedule: &DiffusionSchedule,
    m_draws: usize,
    master_seed: u64,
) -> Result<(Vec<SampleOutcome>, f64)> {
    let outcomes: Vec<Result<SampleOutcome>> = indices
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let input = dataset.build_input_for(i)?;
            let result = classify(&input, model, schedule, m_draws, derive_seed(master_seed, k as u64))?;
            Ok(SampleOutcome { sample_id: i, true_label: dataset.samples[i].label, result })
        })
        .collect();
    let outcomes: Vec<SampleOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    let hits = outcomes.iter().filter(|o| o.result.label == o.true_label).count();
    let accuracy = hits as f64 / outcomes.len().max(1) as f64;
    Ok((outcomes, accuracy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{OracleStub, ZeroStub};

    fn schedule30() -> DiffusionSchedule {
        make_schedule(ScheduleConfig::default()).unwrap()
    }

    #[test]
    fn loss_of_exact_stub_is_zero() {
        let s = schedule30();
        let h = Tensor::vector(vec![0.4, -0.2, 1.1, 0.8]);
        let stub = OracleStub { x0: &h, schedule: &s };
        let mut rng = rng_from_seed(3);
        use rand::Rng;
        for _ in 0..16 {
            let t = rng.gen_range(1..=30);
            let mut eps = vec![0.0; 4];
            fill_standard_normal(&mut rng, &mut eps);
            let l = loss_value(&stub, &h, 0, &s, t, &Tensor::vector(eps)).unwrap();
            assert!(l < 1e-12, "loss {l}");
        }
    }

    #[test]
    fn loss_of_zero_predictor_has_chi_square_mean() {
        // Prediction 0 makes the loss ||eps||^2 with expectation input_dim.
        let s = schedule30();
        let dim = 12;
        let h = Tensor::vector(vec![0.3; dim]);
        let mut rng = rng_from_seed(4);
        use rand::Rng;
        let n = 2000;
        let mut acc = 0.0;
        for _ in 0..n {
            let t = rng.gen_range(1..=30);
            let mut eps = vec![0.0; dim];
            fill_standard_normal(&mut rng, &mut eps);
            acc += loss_value(&ZeroStub, &h, 0, &s, t, &Tensor::vector(eps)).unwrap();
        }
        let mean = acc / n as f64;
        let expect = dim as f64;
        assert!((mean - expect).abs() / expect < 0.05, "mean loss {mean}");
    }

    #[test]
    fn posterior_examples() {
        // All-equal residuals: uniform posterior, lowest-index label.
        let eta = vec![0.7, 0.7, 0.7];
        let post = posterior_from_eta(&eta);
        for &p in &post {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(argmax(&post), 0);

        // eta = [0, ln 2] -> posterior [2/3, 1/3], label 0.
        let post = posterior_from_eta(&[0.0, 2.0f64.ln()]);
        assert!((post[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((post[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(argmax(&post), 0);
    }

    #[test]
    fn posterior_is_shift_invariant_and_consistent() {
        let mut rng = rng_from_seed(8);
        use rand::Rng;
        for _ in 0..200 {
            let n = rng.gen_range(2..6);
            let eta: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let post = posterior_from_eta(&eta);
            let total: f64 = post.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            // argmax posterior == argmin eta
            let argmin_eta = eta
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax(&post), argmin_eta);
            // Constant shift leaves the posterior unchanged.
            let shifted: Vec<f64> = eta.iter().map(|&e| e + 17.25).collect();
            let post2 = posterior_from_eta(&shifted);
            for (a, b) in post.iter().zip(&post2) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
