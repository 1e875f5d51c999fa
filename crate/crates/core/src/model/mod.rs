//! The conditioned noise-prediction network: patch layer, B transformer
//! blocks with cross-attention and a modulated MLP, and an unpatch layer.
//!
//! The conditioning path embeds (scenario label, step index), runs a small
//! deep network, and emits per-block key/value token sequences for the
//! cross-attention plus a multiplicative/additive modulation of the MLP
//! hidden activations. Keys, values, and the MLP behavior are therefore all
//! functions of the pair (c, t).

pub mod checkpoint;

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::diffusion::NoiseModel;
use crate::error::{Error, Result};
use crate::numcore::graph::{Graph, NodeId};
use crate::numcore::Tensor;
use crate::rng::{rng_from_seed, standard_normal};

/// Architecture hyperparameters. `input_dim` is 2F+4 for a channel of F bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub patch_size: usize,
    pub hidden_size: usize,
    pub num_blocks: usize,
    /// Key/value sequence length emitted by the conditioner per block.
    pub num_cond_tokens: usize,
    /// Hidden layers in the conditioning network.
    pub cond_mlp_depth: usize,
    /// Width of each of the label and time embeddings (must be even).
    pub cond_embed_dim: usize,
    pub num_scenarios: usize,
    /// Diffusion step count T; step indices are validated against it.
    pub num_steps: usize,
}

impl ModelConfig {
    /// Paper-scale defaults for a given input size and scenario count:
    /// patch 2, hidden 64, 4 blocks, T = 30.
    pub fn base(input_dim: usize, num_scenarios: usize) -> Self {
        Self {
            input_dim,
            patch_size: 2,
            hidden_size: 64,
            num_blocks: 4,
            num_cond_tokens: 4,
            cond_mlp_depth: 4,
            cond_embed_dim: 32,
            num_scenarios,
            num_steps: 30,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("patch_size", self.patch_size),
            ("hidden_size", self.hidden_size),
            ("num_blocks", self.num_blocks),
            ("num_cond_tokens", self.num_cond_tokens),
            ("cond_embed_dim", self.cond_embed_dim),
            ("num_scenarios", self.num_scenarios),
            ("num_steps", self.num_steps),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.cond_embed_dim % 2 != 0 {
            return Err(Error::Config("cond_embed_dim must be even".into()));
        }
        Ok(())
    }

    /// Token count after zero-padding the input to a patch multiple.
    pub fn num_tokens(&self) -> usize {
        self.input_dim.div_ceil(self.patch_size)
    }

    /// Zero-pad length appended before patching and stripped on unpatch.
    pub fn pad_len(&self) -> usize {
        self.num_tokens() * self.patch_size - self.input_dim
    }

    fn mlp_hidden(&self) -> usize {
        4 * self.hidden_size
    }

    /// Conditioner output width per block: K tokens, V tokens, gamma, beta.
    fn cond_block_width(&self) -> usize {
        2 * self.num_cond_tokens * self.hidden_size + 2 * self.mlp_hidden()
    }

    fn cond_out_width(&self) -> usize {
        self.num_blocks * self.cond_block_width()
    }

    fn cond_net_width(&self) -> usize {
        2 * self.cond_embed_dim
    }
}

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Arc<Tensor>,
}

/// Per-block parameter indices into the flat parameter list.
#[derive(Debug, Clone)]
struct BlockIdx {
    ln1_gain: usize,
    wq: usize,
    bq: usize,
    wo: usize,
    bo: usize,
    ln2_gain: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    patch_w: usize,
    patch_b: usize,
    pos: usize,
    blocks: Vec<BlockIdx>,
    label_table: usize,
    cond_layers: Vec<(usize, usize)>,
    cond_out_w: usize,
    cond_out_b: usize,
    unpatch_w: usize,
    unpatch_b: usize,
}

/// The trained parameter set of the noise predictor.
#[derive(Debug, Clone)]
pub struct NoisePredictor {
    config: ModelConfig,
    params: Vec<Param>,
    layout: Layout,
}

/// The conditioning bundle of one block: cross-attention keys and values
/// plus the MLP modulation.
#[derive(Debug, Clone)]
pub struct BlockCondition {
    pub keys: Tensor,
    pub values: Tensor,
    pub mlp_scale: Tensor,
    pub mlp_shift: Tensor,
}

/// Per-block attention weights captured during a forward pass.
pub struct ForwardTrace {
    pub attention: Vec<Tensor>,
}

impl NoisePredictor {
    /// Deterministic initialization: weights are N(0, 1/sqrt(fan_in)), layer
    /// norm gains 1, biases 0, and the unpatch projection is zero so the
    /// initial prediction is identically zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let d = config.hidden_size;
        let p = config.patch_size;
        let e = config.cond_embed_dim;
        let w = config.cond_net_width();
        let mut params: Vec<Param> = Vec::new();
        let mut push = |name: String, t: Tensor| -> usize {
            params.push(Param { name, value: Arc::new(t) });
            params.len() - 1
        };
        let randn = |rows: usize, cols: usize, std: f64, rng: &mut crate::rng::SeededRng| {
            let data = (0..rows * cols).map(|_| std * standard_normal(rng)).collect();
            Tensor::new(vec![rows, cols], data).expect("valid shape")
        };
        let linear_std = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();

        let patch_w = push("patch.w".into(), randn(p, d, linear_std(p), &mut rng));
        let patch_b = push("patch.b".into(), Tensor::zeros(vec![d]));
        let pos = push("pos".into(), randn(config.num_tokens(), d, 0.02, &mut rng));

        let mut blocks = Vec::with_capacity(config.num_blocks);
        for b in 0..config.num_blocks {
            let m = config.mlp_hidden();
            let blk = BlockIdx {
                ln1_gain: push(format!("blk{b}.ln1.g"), Tensor::vector(vec![1.0; d])),
                wq: push(format!("blk{b}.attn.wq"), randn(d, d, linear_std(d), &mut rng)),
                bq: push(format!("blk{b}.attn.bq"), Tensor::zeros(vec![d])),
                wo: push(format!("blk{b}.attn.wo"), randn(d, d, linear_std(d), &mut rng)),
                bo: push(format!("blk{b}.attn.bo"), Tensor::zeros(vec![d])),
                ln2_gain: push(format!("blk{b}.ln2.g"), Tensor::vector(vec![1.0; d])),
                w1: push(format!("blk{b}.mlp.w1"), randn(d, m, linear_std(d), &mut rng)),
                b1: push(format!("blk{b}.mlp.b1"), Tensor::zeros(vec![m])),
                w2: push(format!("blk{b}.mlp.w2"), randn(m, d, linear_std(m), &mut rng)),
                b2: push(format!("blk{b}.mlp.b2"), Tensor::zeros(vec![d])),
            };
            blocks.push(blk);
        }

        let label_table = push("cond.label".into(), randn(config.num_scenarios, e, 1.0, &mut rng));
        let mut cond_layers = Vec::with_capacity(config.cond_mlp_depth);
        for l in 0..config.cond_mlp_depth {
            let wi = push(format!("cond.l{l}.w"), randn(w, w, linear_std(w), &mut rng));
            let bi = push(format!("cond.l{l}.b"), Tensor::zeros(vec![w]));
            cond_layers.push((wi, bi));
        }
        let out_w = config.cond_out_width();
        let cond_out_w = push("cond.out.w".into(), randn(w, out_w, linear_std(w), &mut rng));
        let cond_out_b = push("cond.out.b".into(), Tensor::zeros(vec![out_w]));

        let unpatch_w = push("unpatch.w".into(), Tensor::zeros(vec![d, p]));
        let unpatch_b = push("unpatch.b".into(), Tensor::zeros(vec![p]));

        let layout = Layout {
            patch_w,
            patch_b,
            pos,
            blocks,
            label_table,
            cond_layers,
            cond_out_w,
            cond_out_b,
            unpatch_w,
            unpatch_b,
        };
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn param_value(&self, idx: usize) -> &Tensor {
        &self.params[idx].value
    }

    /// Mutable access for optimizers and gradient checks.
    pub fn param_value_mut(&mut self, idx: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.params[idx].value)
    }

    pub(crate) fn take_param_arcs(&self) -> Vec<Arc<Tensor>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub(crate) fn put_param_arcs(&mut self, arcs: Vec<Arc<Tensor>>) {
        debug_assert_eq!(arcs.len(), self.params.len());
        for (p, a) in self.params.iter_mut().zip(arcs) {
            p.value = a;
        }
    }

    /// Register every parameter on a graph, in canonical order.
    pub fn register_params(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params.iter().map(|p| g.param(p.value.clone())).collect()
    }

    fn check_condition(&self, scenario: usize, t: usize) -> Result<()> {
        if scenario >= self.config.num_scenarios {
            return Err(Error::Contract(format!(
                "scenario {scenario} outside 0..{}",
                self.config.num_scenarios
            )));
        }
        if t == 0 || t > self.config.num_steps {
            return Err(Error::Contract(format!(
                "step {t} outside 1..={}",
                self.config.num_steps
            )));
        }
        Ok(())
    }

    /// Sinusoidal embedding of the step index, width `cond_embed_dim`.
    fn time_embedding(&self, t: usize) -> Tensor {
        let e = self.config.cond_embed_dim;
        let half = e / 2;
        let mut data = vec![0.0; e];
        for i in 0..half {
            let freq = 10_000f64.powf(-(i as f64) / half as f64);
            let angle = (t as f64) * freq;
            data[2 * i] = angle.sin();
            data[2 * i + 1] = angle.cos();
        }
        Tensor::vector(data)
    }

    /// Build the conditioning path on a graph; returns per-block bundles of
    /// node ids (keys, values, mlp scale, mlp shift).
    fn cond_on_graph(
        &self,
        g: &mut Graph,
        vars: &[NodeId],
        scenario: usize,
        t: usize,
    ) -> Result<Vec<(NodeId, NodeId, NodeId, NodeId)>> {
        let cfg = &self.config;
        let lay = &self.layout;
        let lab = g.select_row(vars[lay.label_table], scenario)?;
        let temb_t = self.time_embedding(t).reshaped(vec![1, cfg.cond_embed_dim])?;
        let temb = g.leaf(temb_t);
        let mut z = g.concat(lab, temb)?;
        for &(wi, bi) in &lay.cond_layers {
            let lin = g.matmul(z, vars[wi])?;
            let lin = g.add_row(lin, vars[bi])?;
            z = g.silu(lin);
        }
        let raw = g.matmul(z, vars[lay.cond_out_w])?;
        let raw = g.add_row(raw, vars[lay.cond_out_b])?;

        let d = cfg.hidden_size;
        let kt = cfg.num_cond_tokens;
        let m = cfg.mlp_hidden();
        let mut bundles = Vec::with_capacity(cfg.num_blocks);
        for b in 0..cfg.num_blocks {
            let base = b * cfg.cond_block_width();
            let keys = g.narrow(raw, base, kt * d)?;
            let keys = g.reshape(keys, vec![kt, d])?;
            let values = g.narrow(raw, base + kt * d, kt * d)?;
            let values = g.reshape(values, vec![kt, d])?;
            let scale = g.narrow(raw, base + 2 * kt * d, m)?;
            let shift = g.narrow(raw, base + 2 * kt * d + m, m)?;
            bundles.push((keys, values, scale, shift));
        }
        Ok(bundles)
    }

    /// Evaluate the conditioning network for (c, t) and return the per-block
    /// bundles as plain tensors.
    pub fn embed_condition(&self, scenario: usize, t: usize) -> Result<Vec<BlockCondition>> {
        self.check_condition(scenario, t)?;
        let mut g = Graph::new();
        let vars = self.register_params(&mut g);
        let ids = self.cond_on_graph(&mut g, &vars, scenario, t)?;
        Ok(ids
            .into_iter()
            .map(|(k, v, sc, sh)| BlockCondition {
                keys: g.value(k).clone(),
                values: g.value(v).clone(),
                mlp_scale: g.value(sc).clone(),
                mlp_shift: g.value(sh).clone(),
            })
            .collect())
    }

    /// Zero-pad and group the input into [tokens, patch_size].
    fn patchify(&self, x_t: &Tensor) -> Result<Tensor> {
        let cfg = &self.config;
        if x_t.numel() != cfg.input_dim {
            return Err(Error::Contract(format!(
                "input has {} entries, model expects {}",
                x_t.numel(),
                cfg.input_dim
            )));
        }
        let mut data = x_t.data().to_vec();
        data.resize(cfg.num_tokens() * cfg.patch_size, 0.0);
        Tensor::new(vec![cfg.num_tokens(), cfg.patch_size], data)
    }

    /// Full forward pass on a graph. Returns the output node and, when
    /// `trace` is set, the per-block attention weight nodes.
    pub fn forward_on_graph(
        &self,
        g: &mut Graph,
        vars: &[NodeId],
        x_t: &Tensor,
        scenario: usize,
        t: usize,
        trace: Option<&mut Vec<NodeId>>,
    ) -> Result<NodeId> {
        self.check_condition(scenario, t)?;
        let cfg = &self.config;
        let lay = &self.layout;
        let d = cfg.hidden_size;

        let cond = self.cond_on_graph(g, vars, scenario, t)?;

        let patches = g.leaf(self.patchify(x_t)?);
        let proj = g.matmul(patches, vars[lay.patch_w])?;
        let proj = g.add_row(proj, vars[lay.patch_b])?;
        let mut tok = g.add(proj, vars[lay.pos])?;

        let mut attn_nodes = Vec::with_capacity(cfg.num_blocks);
        for (blk, &(keys, values, scale, shift)) in lay.blocks.iter().zip(&cond) {
            // Cross-attention: queries from tokens, keys/values from the bundle.
            let a = g.layer_norm(tok, vars[blk.ln1_gain])?;
            let q = g.matmul(a, vars[blk.wq])?;
            let q = g.add_row(q, vars[blk.bq])?;
            let keys_t = g.transpose(keys)?;
            let scores = g.matmul(q, keys_t)?;
            let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
            let attn = g.softmax_rows(scores);
            attn_nodes.push(attn);
            let ctx = g.matmul(attn, values)?;
            let o = g.matmul(ctx, vars[blk.wo])?;
            let o = g.add_row(o, vars[blk.bo])?;
            tok = g.add(tok, o)?;

            // MLP with hidden activations modulated by the bundle.
            let a2 = g.layer_norm(tok, vars[blk.ln2_gain])?;
            let h = g.matmul(a2, vars[blk.w1])?;
            let h = g.add_row(h, vars[blk.b1])?;
            let hact = g.gelu(h);
            let hmod = g.mul_row(hact, scale)?;
            let hmod = g.add_row(hmod, shift)?;
            let y = g.matmul(hmod, vars[blk.w2])?;
            let y = g.add_row(y, vars[blk.b2])?;
            tok = g.add(tok, y)?;
        }

        let un = g.matmul(tok, vars[lay.unpatch_w])?;
        let un = g.add_row(un, vars[lay.unpatch_b])?;
        let flat = g.reshape(un, vec![1, cfg.num_tokens() * cfg.patch_size])?;
        let out = g.narrow(flat, 0, cfg.input_dim)?;
        let out = g.reshape(out, vec![cfg.input_dim])?;
        if let Some(tr) = trace {
            *tr = attn_nodes;
        }
        Ok(out)
    }

    /// Predicted noise for a corrupted input; same shape as the input.
    pub fn predict_noise(&self, x_t: &Tensor, scenario: usize, t: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.register_params(&mut g);
        let out = self.forward_on_graph(&mut g, &vars, x_t, scenario, t, None)?;
        Ok(g.value(out).clone())
    }

    /// Forward pass that also returns the per-block attention weights.
    pub fn predict_with_trace(
        &self,
        x_t: &Tensor,
        scenario: usize,
        t: usize,
    ) -> Result<(Tensor, ForwardTrace)> {
        let mut g = Graph::new();
        let vars = self.register_params(&mut g);
        let mut attn = Vec::new();
        let out = self.forward_on_graph(&mut g, &vars, x_t, scenario, t, Some(&mut attn))?;
        let trace = ForwardTrace {
            attention: attn.into_iter().map(|id| g.value(id).clone()).collect(),
        };
        Ok((g.value(out).clone(), trace))
    }
}

impl NoiseModel for NoisePredictor {
    fn predict(&self, x_t: &Tensor, scenario: usize, t: usize) -> Result<Tensor> {
        self.predict_noise(x_t, scenario, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> ModelConfig {
        ModelConfig {
            input_dim: 12,
            patch_size: 2,
            hidden_size: 8,
            num_blocks: 2,
            num_cond_tokens: 2,
            cond_mlp_depth: 2,
            cond_embed_dim: 8,
            num_scenarios: 3,
            num_steps: 30,
        }
    }

    #[test]
    fn output_shape_matches_input_shape() {
        for input_dim in [12usize, 804] {
            let cfg = ModelConfig { input_dim, ..toy_config() };
            let model = NoisePredictor::init(cfg, 1).unwrap();
            let x = Tensor::vector((0..input_dim).map(|i| (i as f64) * 0.01).collect());
            let y = model.predict_noise(&x, 1, 5).unwrap();
            assert_eq!(y.shape(), x.shape());
        }
    }

    #[test]
    fn token_count_for_paper_scale_input() {
        // F = 400 gives input 2*400+4 = 804; patch size 2 -> 402 tokens.
        let cfg = ModelConfig { input_dim: 804, ..toy_config() };
        assert_eq!(cfg.num_tokens(), 402);
        assert_eq!(cfg.pad_len(), 0);
        let odd = ModelConfig { input_dim: 13, ..toy_config() };
        assert_eq!(odd.num_tokens(), 7);
        assert_eq!(odd.pad_len(), 1);
    }

    #[test]
    fn zero_initialized_head_predicts_zero() {
        let model = NoisePredictor::init(toy_config(), 7).unwrap();
        let x = Tensor::vector((0..12).map(|i| ((i * 31 % 7) as f64) - 3.0).collect());
        for c in 0..3 {
            for t in [1usize, 15, 30] {
                let y = model.predict_noise(&x, c, t).unwrap();
                assert!(y.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = NoisePredictor::init(toy_config(), 99).unwrap();
        let b = NoisePredictor::init(toy_config(), 99).unwrap();
        for i in 0..a.num_params() {
            assert_eq!(a.param_value(i).data(), b.param_value(i).data());
        }
    }

    #[test]
    fn param_count_matches_closed_form() {
        let cfg = toy_config();
        let model = NoisePredictor::init(cfg, 0).unwrap();
        let (d, p, e) = (cfg.hidden_size, cfg.patch_size, cfg.cond_embed_dim);
        let m = 4 * d;
        let w = 2 * e;
        let tokens = cfg.num_tokens();
        let out_w = cfg.num_blocks * (2 * cfg.num_cond_tokens * d + 2 * m);
        let per_block = d + (d * d + d) * 2 + d + (d * m + m) + (m * d + d);
        let expected = (p * d + d)
            + tokens * d
            + cfg.num_blocks * per_block
            + cfg.num_scenarios * e
            + cfg.cond_mlp_depth * (w * w + w)
            + (w * out_w + out_w)
            + (d * p + p);
        assert_eq!(model.total_values(), expected);
    }

    #[test]
    fn condition_bundles_are_pure_and_time_sensitive() {
        let model = NoisePredictor::init(toy_config(), 3).unwrap();
        let a = model.embed_condition(1, 4).unwrap();
        let b = model.embed_condition(1, 4).unwrap();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.keys.data(), y.keys.data());
            assert_eq!(x.values.data(), y.values.data());
            assert_eq!(x.mlp_scale.data(), y.mlp_scale.data());
            assert_eq!(x.mlp_shift.data(), y.mlp_shift.data());
        }
        // Different t, same c: at least one entry differs on a random init.
        let c = model.embed_condition(1, 5).unwrap();
        let differs = a.iter().zip(&c).any(|(x, y)| {
            x.keys.data() != y.keys.data()
                || x.values.data() != y.values.data()
                || x.mlp_scale.data() != y.mlp_scale.data()
                || x.mlp_shift.data() != y.mlp_shift.data()
        });
        assert!(differs);
    }

    #[test]
    fn single_scenario_bundles_still_vary_with_time() {
        let cfg = ModelConfig { num_scenarios: 1, ..toy_config() };
        let model = NoisePredictor::init(cfg, 5).unwrap();
        let a = model.embed_condition(0, 1).unwrap();
        let b = model.embed_condition(0, 2).unwrap();
        let differs = a.iter().zip(&b).any(|(x, y)| x.keys.data() != y.keys.data());
        assert!(differs);
    }

    #[test]
    fn out_of_range_condition_is_contract_error() {
        let model = NoisePredictor::init(toy_config(), 3).unwrap();
        assert!(matches!(model.embed_condition(3, 1), Err(Error::Contract(_))));
        assert!(matches!(model.embed_condition(0, 0), Err(Error::Contract(_))));
        assert!(matches!(model.embed_condition(0, 31), Err(Error::Contract(_))));
        let x = Tensor::vector(vec![0.0; 11]);
        assert!(matches!(model.predict_noise(&x, 0, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut model = NoisePredictor::init(toy_config(), 11).unwrap();
        // Randomize the unpatch head so the forward pass is nondegenerate.
        let mut rng = rng_from_seed(123);
        let n = model.num_params();
        for v in model.param_value_mut(n - 2).data_mut() {
            *v = 0.3 * standard_normal(&mut rng);
        }
        let x = Tensor::vector((0..12).map(|i| ((i as f64) * 0.71).cos()).collect());
        let (_, trace) = model.predict_with_trace(&x, 2, 7).unwrap();
        assert_eq!(trace.attention.len(), 2);
        for attn in &trace.attention {
            let (rows, cols) = attn.rows_cols();
            assert_eq!(rows, 6);
            assert_eq!(cols, 2);
            for i in 0..rows {
                let s: f64 = attn.data()[i * cols..(i + 1) * cols].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let mut model = NoisePredictor::init(toy_config(), 21).unwrap();
        let mut rng = rng_from_seed(55);
        let n = model.num_params();
        for v in model.param_value_mut(n - 2).data_mut() {
            *v = 0.5 * standard_normal(&mut rng);
        }
        let x = Tensor::vector((0..12).map(|i| ((i as f64) - 6.0) * 0.2).collect());
        let a = model.predict_noise(&x, 0, 3).unwrap();
        let b = model.predict_noise(&x, 0, 3).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
