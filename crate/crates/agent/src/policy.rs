//! The autoregressive Dirichlet policy over the four sub-simplices.
//!
//! An encoder maps the observation to a latent `x_s`. Branch `j` sees `x_s`
//! together with the realized sub-actions `ã_1 .. ã_{j−1}` (their supported
//! coordinates, concatenated) and emits concentrations for `Dir(α_{K_j})`.
//! Branches over a single point (`|K_j| ≤ 1`) have no network and contribute
//! log-probability 0. A value head on `x_s` serves the trainer.

use std::path::Path;

use caosd_core::{
    build_decomposition, Allocation, ConstraintConfig, Decomposition, SubAction, SurrogateAction,
    WeightVector,
};
use caosd_market::{AllocationPolicy, MarketError, Observation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dirichlet::{
    clamp_point, entropy, entropy_grad, ln_density, ln_density_grad, mode_or_mean,
};
use crate::error::{AgentError, Result};
use crate::nn::{Attention, AttentionTrace, Mlp, MlpTrace, ParamBuilder, TensorInfo};

pub const ALPHA_FLOOR: f64 = 1e-3;
pub const ALPHA_MAX: f64 = 1e4;
/// Monthly returns are multiplied by this before entering the encoder.
pub const RETURN_SCALE: f64 = 10.0;

pub const CHECKPOINT_FORMAT: &str = "caosd-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub hidden_sizes: Vec<usize>,
    pub embedding_size: usize,
    pub use_attention: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![512, 256, 128],
            embedding_size: 64,
            use_attention: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub encoder: EncoderConfig,
    pub branch_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            branch_hidden: vec![64, 32],
            value_hidden: vec![64],
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = self
            .encoder
            .hidden_sizes
            .iter()
            .chain(&self.branch_hidden)
            .chain(&self.value_hidden)
            .chain(std::iter::once(&self.encoder.embedding_size));
        if widths.into_iter().any(|&w| w == 0) {
            return Err(AgentError::InvalidConfig(
                "layer widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Concentrations of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub surrogate: SurrogateAction,
    pub joint_log_prob: f64,
    pub per_branch_log_prob: [f64; 4],
    pub action: Allocation,
    pub weights: WeightVector,
    pub value: f64,
}

/// Scalar weights of the objective whose gradient [`CaosdPolicy::backward`] accumulates.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Cotangent {
    pub log_prob: f64,
    pub entropy: f64,
    pub value: f64,
}

#[derive(Debug, Clone)]
struct Network {
    n_assets: usize,
    attention: Option<Attention>,
    encoder: Mlp,
    value: Mlp,
    branches: [Option<Mlp>; 4],
}

#[derive(Debug, Clone)]
struct Trunk {
    features: Vec<f64>,
    attention: Option<AttentionTrace>,
    encoder: MlpTrace,
}

impl Trunk {
    fn latent(&self) -> &[f64] {
        self.encoder.output()
    }
}

#[derive(Debug, Clone)]
struct BranchTrace {
    trace: MlpTrace,
    alpha: Vec<f64>,
    point: Vec<f64>,
}

/// Forward pass of one `(observation, surrogate)` pair, kept for backprop.
#[derive(Debug, Clone)]
pub struct Evaluation {
    trunk: Trunk,
    value_trace: MlpTrace,
    branches: [Option<BranchTrace>; 4],
    pub per_branch_log_prob: [f64; 4],
    pub per_branch_entropy: [f64; 4],
    pub log_prob: f64,
    pub entropy: f64,
    pub value: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn alpha_of(raw: &[f64]) -> Vec<f64> {
    raw.iter()
        .map(|&o| (softplus(o) + ALPHA_FLOOR).min(ALPHA_MAX))
        .collect()
}

#[derive(Debug, Clone)]
pub struct CaosdPolicy {
    decomposition: Decomposition,
    config: PolicyConfig,
    net: Network,
    tensors: Vec<TensorInfo>,
    params: Vec<f64>,
}

impl CaosdPolicy {
    /// Builds the network for `constraints` with weights drawn from `seed`.
    pub fn new(constraints: &ConstraintConfig, config: PolicyConfig, seed: u64) -> Result<Self> {
        let (net, tensors, n_params) = Self::layout(constraints, &config)?;
        let decomposition = build_decomposition(constraints)?;
        let mut params = vec![0.0; n_params];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Some(att) = &net.attention {
            att.init(&mut params, &mut rng);
        }
        net.encoder.init(&mut params, &mut rng, 3f64.sqrt());
        net.value.init(&mut params, &mut rng, 0.1);
        // softplus(b) + floor = 1: every branch starts near the flat Dirichlet
        let unit_bias = ((1.0 - ALPHA_FLOOR).exp() - 1.0).ln();
        for b in net.branches.iter().flatten() {
            b.init(&mut params, &mut rng, 0.01);
            b.output_layer().fill_bias(&mut params, unit_bias);
        }
        Ok(Self {
            decomposition,
            config,
            net,
            tensors,
            params,
        })
    }

    fn layout(
        constraints: &ConstraintConfig,
        config: &PolicyConfig,
    ) -> Result<(Network, Vec<TensorInfo>, usize)> {
        config.validate()?;
        let decomposition = build_decomposition(constraints)?;
        let n = constraints.n_assets();
        let emb = config.encoder.embedding_size;
        let mut b = ParamBuilder::new();
        let attention = config
            .encoder
            .use_attention
            .then(|| Attention::new(&mut b, "attention", &[1, n, n], emb));
        let encoder_in = feature_dim(n) + attention.as_ref().map_or(0, Attention::dim);
        let encoder = b.mlp("encoder", encoder_in, &config.encoder.hidden_sizes, emb);
        let value = b.mlp("value", emb, &config.value_hidden, 1);
        let mut input = emb;
        let branches: [Option<Mlp>; 4] = std::array::from_fn(|j| {
            let k = decomposition.spec(j).len();
            let mlp = (k >= 2)
                .then(|| b.mlp(&format!("branch{}", j + 1), input, &config.branch_hidden, k));
            input += k;
            mlp
        });
        let n_params = b.len();
        Ok((
            Network {
                n_assets: n,
                attention,
                encoder,
                value,
                branches,
            },
            b.finish(),
            n_params,
        ))
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn constraints(&self) -> &ConstraintConfig {
        self.decomposition.config()
    }

    pub fn decomposition(&self) -> &Decomposition {
        &self.decomposition
    }

    pub fn n_assets(&self) -> usize {
        self.net.n_assets
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    /// `x_s` for `obs`.
    pub fn encode(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.trunk(obs)?.latent().to_vec())
    }

    /// Gradient of `⟨cotangent, encode(obs)⟩` with respect to the parameters.
    pub fn encode_vjp(&self, obs: &Observation, cotangent: &[f64]) -> Result<Vec<f64>> {
        let trunk = self.trunk(obs)?;
        let mut grad = vec![0.0; self.params.len()];
        self.trunk_backward(&trunk, cotangent, &mut grad);
        Ok(grad)
    }

    /// Concentrations of branch `j` (0-based) given `x_s` and the realized `ã_{<j}`.
    /// Returns `None` for a degenerate branch.
    pub fn branch_alpha(
        &self,
        j: usize,
        latent: &[f64],
        previous: &[SubAction],
    ) -> Result<Option<BranchParams>> {
        if j >= 4 || previous.len() != j {
            return Err(AgentError::InvalidConfig(format!(
                "branch {j} needs exactly {j} preceding sub-actions, got {}",
                previous.len()
            )));
        }
        Ok(self
            .branch_forward(j, latent, previous)
            .map(|(_, alpha)| BranchParams { alpha }))
    }

    pub fn value(&self, obs: &Observation) -> Result<f64> {
        let trunk = self.trunk(obs)?;
        Ok(self
            .net
            .value
            .forward(&self.params, trunk.latent())
            .output()[0])
    }

    /// Samples `ã_1 .. ã_4` in order and composes the allocation.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        rng: &mut R,
    ) -> Result<PolicyOutput> {
        let trunk = self.trunk(obs)?;
        let latent = trunk.latent();
        let value = self.net.value.forward(&self.params, latent).output()[0];
        let mut composer = self.decomposition.composer();
        let mut subs: Vec<SubAction> = Vec::with_capacity(4);
        let mut lp = [0.0; 4];
        for j in 0..4 {
            let spec = self.decomposition.spec(j);
            let sub = match self.branch_forward(j, latent, &subs) {
                Some((_, alpha)) => {
                    let sub = spec.sample_dirichlet(&alpha, rng)?;
                    lp[j] = ln_density(&alpha, &clamp_point(&spec.restrict(sub.values())));
                    sub
                }
                None => spec.sample_dirichlet(&vec![1.0; spec.len()], rng)?,
            };
            composer.push(&sub)?;
            subs.push(sub);
        }
        let (action, weights) = composer.finish()?;
        Ok(PolicyOutput {
            surrogate: subs.try_into().expect("four sub-actions"),
            joint_log_prob: lp.iter().sum(),
            per_branch_log_prob: lp,
            action,
            weights,
            value,
        })
    }

    /// Per branch: the Dirichlet mode when every `α_i > 1`, otherwise the mean.
    pub fn deterministic_action(&self, obs: &Observation) -> Result<Allocation> {
        Ok(self.deterministic_surrogate(obs)?.1)
    }

    pub fn deterministic_surrogate(
        &self,
        obs: &Observation,
    ) -> Result<(SurrogateAction, Allocation)> {
        let trunk = self.trunk(obs)?;
        let latent = trunk.latent();
        let mut composer = self.decomposition.composer();
        let mut subs: Vec<SubAction> = Vec::with_capacity(4);
        for j in 0..4 {
            let spec = self.decomposition.spec(j);
            let sub = match self.branch_forward(j, latent, &subs) {
                Some((_, alpha)) => spec.embed(&mode_or_mean(&alpha))?,
                None => spec.barycenter(),
            };
            composer.push(&sub)?;
            subs.push(sub);
        }
        let (action, _) = composer.finish()?;
        Ok((subs.try_into().expect("four sub-actions"), action))
    }

    pub fn log_prob(&self, obs: &Observation, surrogate: &SurrogateAction) -> Result<f64> {
        Ok(self.evaluate(obs, surrogate)?.log_prob)
    }

    /// Sum of branch entropies with each branch conditioned on the given predecessors.
    pub fn entropy(&self, obs: &Observation, surrogate: &SurrogateAction) -> Result<f64> {
        Ok(self.evaluate(obs, surrogate)?.entropy)
    }

    pub fn evaluate(&self, obs: &Observation, surrogate: &SurrogateAction) -> Result<Evaluation> {
        for (j, sub) in surrogate.iter().enumerate() {
            if sub.spec() != self.decomposition.spec(j) {
                return Err(AgentError::InvalidConfig(format!(
                    "sub-action {} lies on the wrong simplex",
                    j + 1
                )));
            }
        }
        let trunk = self.trunk(obs)?;
        let latent = trunk.latent();
        let value_trace = self.net.value.forward(&self.params, latent);
        let value = value_trace.output()[0];
        let mut lp = [0.0; 4];
        let mut ent = [0.0; 4];
        let branches: [Option<BranchTrace>; 4] = std::array::from_fn(|j| {
            self.branch_forward(j, latent, &surrogate[..j])
                .map(|(trace, alpha)| {
                    let point =
                        clamp_point(&self.decomposition.spec(j).restrict(surrogate[j].values()));
                    lp[j] = ln_density(&alpha, &point);
                    ent[j] = entropy(&alpha);
                    BranchTrace {
                        trace,
                        alpha,
                        point,
                    }
                })
        });
        Ok(Evaluation {
            trunk,
            value_trace,
            branches,
            per_branch_log_prob: lp,
            per_branch_entropy: ent,
            log_prob: lp.iter().sum(),
            entropy: ent.iter().sum(),
            value,
        })
    }

    /// Accumulates `∂/∂θ (c.log_prob·log π + c.entropy·H + c.value·V)` into `grad`.
    pub fn backward(&self, eval: &Evaluation, c: Cotangent, grad: &mut [f64]) {
        let emb = self.config.encoder.embedding_size;
        let mut dlatent = vec![0.0; emb];
        if c.value != 0.0 {
            let d = self
                .net
                .value
                .backward(&self.params, &eval.value_trace, &[c.value], grad);
            dlatent.iter_mut().zip(d).for_each(|(x, y)| *x += y);
        }
        for (j, branch) in eval.branches.iter().enumerate() {
            let (Some(b), Some(mlp)) = (branch, &self.net.branches[j]) else {
                continue;
            };
            let dlp = if c.log_prob != 0.0 {
                ln_density_grad(&b.alpha, &b.point)
            } else {
                vec![0.0; b.alpha.len()]
            };
            let dent = if c.entropy != 0.0 {
                entropy_grad(&b.alpha)
            } else {
                vec![0.0; b.alpha.len()]
            };
            let draw: Vec<f64> = b
                .trace
                .output()
                .iter()
                .zip(&b.alpha)
                .enumerate()
                .map(|(i, (&o, &a))| {
                    if a >= ALPHA_MAX {
                        0.0
                    } else {
                        (c.log_prob * dlp[i] + c.entropy * dent[i]) * sigmoid(o)
                    }
                })
                .collect();
            let dinput = mlp.backward(&self.params, &b.trace, &draw, grad);
            dlatent
                .iter_mut()
                .zip(&dinput[..emb])
                .for_each(|(x, y)| *x += y);
        }
        self.trunk_backward(&eval.trunk, &dlatent, grad);
    }

    fn features(&self, obs: &Observation) -> Result<Vec<f64>> {
        let n = self.n_assets();
        if obs.allocation.len() != n || obs.last_returns.len() != n {
            return Err(AgentError::InvalidConfig(format!(
                "observation has {} / {} entries for {n} assets",
                obs.allocation.len(),
                obs.last_returns.len()
            )));
        }
        if !obs.is_finite() {
            return Err(AgentError::NonFiniteInput("observation".into()));
        }
        let mut f = Vec::with_capacity(feature_dim(n));
        f.push(obs.wealth - 1.0);
        f.extend_from_slice(&obs.allocation);
        f.extend(obs.last_returns.iter().map(|r| r * RETURN_SCALE));
        Ok(f)
    }

    fn trunk(&self, obs: &Observation) -> Result<Trunk> {
        let features = self.features(obs)?;
        let n = self.n_assets();
        let attention = self.net.attention.as_ref().map(|att| {
            let groups: [&[f64]; 3] = [&features[..1], &features[1..1 + n], &features[1 + n..]];
            att.forward(&self.params, &groups)
        });
        let input: Vec<f64> = match &attention {
            Some(t) => features.iter().chain(t.pooled()).copied().collect(),
            None => features.clone(),
        };
        let encoder = self.net.encoder.forward(&self.params, &input);
        Ok(Trunk {
            features,
            attention,
            encoder,
        })
    }

    fn trunk_backward(&self, trunk: &Trunk, dlatent: &[f64], grad: &mut [f64]) {
        let dinput = self
            .net
            .encoder
            .backward(&self.params, &trunk.encoder, dlatent, grad);
        if let (Some(att), Some(t)) = (&self.net.attention, &trunk.attention) {
            let n = self.n_assets();
            let f = &trunk.features;
            let groups: [&[f64]; 3] = [&f[..1], &f[1..1 + n], &f[1 + n..]];
            att.backward(&self.params, &groups, t, &dinput[f.len()..], grad);
        }
    }

    fn branch_forward(
        &self,
        j: usize,
        latent: &[f64],
        previous: &[SubAction],
    ) -> Option<(MlpTrace, Vec<f64>)> {
        let mlp = self.net.branches[j].as_ref()?;
        let mut input = latent.to_vec();
        for (k, sub) in previous.iter().enumerate() {
            input.extend(self.decomposition.spec(k).restrict(sub.values()));
        }
        let trace = mlp.forward(&self.params, &input);
        let alpha = alpha_of(trace.output());
        Some((trace, alpha))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            constraints: self.constraints().clone(),
            policy: self.config.clone(),
            tensors: self.tensors.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!(
                "unsupported format {} v{}",
                ck.format, ck.version
            )));
        }
        let (net, tensors, n_params) = Self::layout(&ck.constraints, &ck.policy)?;
        if tensors != ck.tensors || n_params != ck.params.len() {
            return Err(AgentError::Checkpoint(
                "tensor layout does not match the stored configuration".into(),
            ));
        }
        if ck.params.iter().any(|v| !v.is_finite()) {
            return Err(AgentError::Checkpoint("non-finite parameter".into()));
        }
        let decomposition = build_decomposition(&ck.constraints)?;
        Ok(Self {
            decomposition,
            config: ck.policy,
            net,
            tensors,
            params: ck.params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

fn feature_dim(n: usize) -> usize {
    1 + 2 * n
}

/// JSON policy dump: configuration, tensor shapes and the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub constraints: ConstraintConfig,
    pub policy: PolicyConfig,
    pub tensors: Vec<TensorInfo>,
    pub params: Vec<f64>,
}

/// Acts with [`CaosdPolicy::deterministic_action`].
#[derive(Debug, Clone, Copy)]
pub struct Greedy<'a>(pub &'a CaosdPolicy);

impl AllocationPolicy for Greedy<'_> {
    fn act(&mut self, observation: &Observation) -> caosd_market::Result<Allocation> {
        self.0
            .deterministic_action(observation)
            .map_err(|e| MarketError::Policy(e.to_string()))
    }
}

/// Acts by sampling from the policy with its own RNG.
#[derive(Debug, Clone)]
pub struct Stochastic<'a> {
    pub policy: &'a CaosdPolicy,
    pub rng: ChaCha8Rng,
}

impl AllocationPolicy for Stochastic<'_> {
    fn act(&mut self, observation: &Observation) -> caosd_market::Result<Allocation> {
        self.policy
            .sample_action(observation, &mut self.rng)
            .map(|o| o.action)
            .map_err(|e| MarketError::Policy(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use caosd_core::AssetUniverse;

    fn small() -> PolicyConfig {
        PolicyConfig {
            encoder: EncoderConfig {
                hidden_sizes: vec![16, 8],
                embedding_size: 6,
                use_attention: false,
            },
            branch_hidden: vec![8, 4],
            value_hidden: vec![5],
        }
    }

    fn worked_example() -> ConstraintConfig {
        ConstraintConfig::from_sets(
            AssetUniverse::anonymous(5).unwrap(),
            [1, 3],
            0.3,
            [2, 4],
            0.5,
        )
        .unwrap()
    }

    fn obs(n: usize) -> Observation {
        Observation {
            wealth: 1.02,
            allocation: (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
            last_returns: (0..n).map(|i| 0.01 * i as f64 - 0.02).collect(),
        }
    }

    #[test]
    fn zero_weights_give_zero_latent() {
        let mut p = CaosdPolicy::new(&worked_example(), small(), 1).unwrap();
        p.params_mut().iter_mut().for_each(|v| *v = 0.0);
        let zero = Observation {
            wealth: 1.0,
            allocation: vec![0.0; 5],
            last_returns: vec![0.0; 5],
        };
        assert_eq!(p.encode(&zero).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn non_finite_observation_is_rejected() {
        let p = CaosdPolicy::new(&worked_example(), small(), 1).unwrap();
        let mut o = obs(5);
        o.last_returns[2] = f64::NAN;
        assert!(matches!(p.encode(&o), Err(AgentError::NonFiniteInput(_))));
    }

    #[test]
    fn empty_first_branch_in_the_worked_example() {
        let p = CaosdPolicy::new(&worked_example(), small(), 2).unwrap();
        let latent = p.encode(&obs(5)).unwrap();
        assert!(p.branch_alpha(0, &latent, &[]).unwrap().is_none());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = p.sample_action(&obs(5), &mut rng).unwrap();
        assert_eq!(out.per_branch_log_prob[0], 0.0);
        assert!(out.surrogate[0].values().iter().all(|&v| v == 0.0));
        assert!(p.decomposition().membership(out.action.values(), 1e-9));
    }

    #[test]
    fn fresh_branches_start_near_flat() {
        let p = CaosdPolicy::new(&worked_example(), small(), 3).unwrap();
        let latent = p.encode(&obs(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = p.sample_action(&obs(5), &mut rng).unwrap();
        let a = p
            .branch_alpha(3, &latent, &out.surrogate[..3])
            .unwrap()
            .unwrap();
        assert!(
            a.alpha.iter().all(|&x| (x - 1.0).abs() < 0.1),
            "{:?}",
            a.alpha
        );
    }

    #[test]
    fn sampled_log_prob_matches_evaluation() {
        let p = CaosdPolicy::new(&worked_example(), small(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let out = p.sample_action(&obs(5), &mut rng).unwrap();
            let eval = p.evaluate(&obs(5), &out.surrogate).unwrap();
            assert_eq!(eval.log_prob, out.joint_log_prob);
            assert_eq!(eval.value, out.value);
            let sum: f64 = out.per_branch_log_prob.iter().sum();
            assert!((sum - out.joint_log_prob).abs() <= 1e-10);
        }
    }

    #[test]
    fn deterministic_action_is_repeatable() {
        let p = CaosdPolicy::new(&worked_example(), small(), 5).unwrap();
        let a = p.deterministic_action(&obs(5)).unwrap();
        assert_eq!(a, p.deterministic_action(&obs(5)).unwrap());
        assert!(p.decomposition().membership(a.values(), 1e-9));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let p = CaosdPolicy::new(
            &worked_example(),
            PolicyConfig {
                encoder: EncoderConfig {
                    use_attention: true,
                    ..small().encoder
                },
                ..small()
            },
            6,
        )
        .unwrap();
        let json = serde_json::to_string(&p.to_checkpoint()).unwrap();
        let back = CaosdPolicy::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.params(), p.params());
        assert_eq!(
            back.deterministic_action(&obs(5)).unwrap(),
            p.deterministic_action(&obs(5)).unwrap()
        );

        let mut bad = p.to_checkpoint();
        bad.params.pop();
        assert!(matches!(
            CaosdPolicy::from_checkpoint(bad),
            Err(AgentError::Checkpoint(_))
        ));
    }
}
