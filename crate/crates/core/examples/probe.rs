//! Calibration probe: train on the default synthetic set and report timing,
//! loss, and classifier/baseline accuracy.

use diffch_core::channelgen::{default_profiles, Dataset};
use diffch_core::diffusion::make_schedule;
use diffch_core::model::ModelConfig;
use diffch_core::pipeline::{baseline_accuracy, classify_samples, train, train_baseline, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |name: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };
    let f = get("--f", 64.0) as usize;
    let per_scenario = get("--n", 300.0) as usize;
    let rate = get("--rate", 0.5);
    let steps = get("--steps", 2500.0) as usize;
    let batch = get("--batch", 16.0) as usize;
    let lr = get("--lr", 1e-3);
    let hidden = get("--hidden", 32.0) as usize;
    let blocks = get("--blocks", 2.0) as usize;
    let m_draws = get("--m", 32.0) as usize;
    let seed = get("--seed", 17.0) as u64;
    let cond_tokens = get("--ct", 4.0) as usize;
    let cond_depth = get("--cd", 2.0) as usize;
    let cond_embed = get("--ce", 16.0) as usize;
    let patch = get("--patch", 2.0) as usize;

    let t0 = Instant::now();
    let mut ds = Dataset::generate(&default_profiles(), f, per_scenario, seed).unwrap();
    ds.split(rate, seed + 1).unwrap();
    println!("dataset: {:?} gen+split in {:?}", ds.counts_per_scenario(), t0.elapsed());

    let model_cfg = ModelConfig {
        input_dim: 2 * f + 4,
        patch_size: patch,
        hidden_size: hidden,
        num_blocks: blocks,
        num_cond_tokens: cond_tokens,
        cond_mlp_depth: cond_depth,
        cond_embed_dim: cond_embed,
        num_scenarios: ds.num_scenarios,
        num_steps: 30,
    };
    let mut cfg = TrainConfig::new(model_cfg);
    cfg.steps = steps;
    cfg.batch_size = batch;
    cfg.learning_rate = lr;
    cfg.final_lr_fraction = get("--lrfrac", 1.0);
    cfg.seed = seed + 2;
    cfg.eval_every = 250;

    let t1 = Instant::now();
    let mut cb = |step: usize, loss: f64| {
        println!("  step {step}: loss {loss:.4} ({:.1?})", t1.elapsed());
    };
    let (model, hist) = train(&ds, &cfg, Some(&mut cb)).unwrap();
    println!("train {} steps in {:?}; first loss {:.3}, last {:.3}", steps, t1.elapsed(), hist[0], hist[hist.len()-1]);

    let schedule = make_schedule(cfg.schedule).unwrap();
    let t2 = Instant::now();
    let test_idx = ds.test_indices().unwrap().to_vec();
    let (_, acc) = classify_samples(&ds, &test_idx, &model, &schedule, m_draws, seed + 3).unwrap();
    println!("diffusion accuracy {acc:.4} on {} samples (M={m_draws}) in {:?}", test_idx.len(), t2.elapsed());

    let bl = train_baseline(&ds).unwrap();
    let bacc = baseline_accuracy(&ds, &bl, &test_idx).unwrap();
    println!("baseline accuracy {bacc:.4}");
    println!("total {:?}", t0.elapsed());
}
