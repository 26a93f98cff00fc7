use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

use super::ModelConfig;

/// Half-width of the uniform weight initialization.
pub const INIT_SCALE: f32 = 0.08;
/// Initial bias on LSTM forget gates.
pub const FORGET_BIAS: f32 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Weight,
    Bias,
    LstmBias,
}

/// Parameter names and shapes for `config`, in storage order.
fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Kind)> {
    let (v, e, h, g) = (config.vocab_size, config.embed_dim, config.hidden_dim, config.gate_hidden_dim);
    let mut out = vec![("embedding".to_string(), vec![v, e], Kind::Weight)];
    for (prefix, layers) in [("encoder", config.encoder_layers), ("decoder", config.decoder_layers)] {
        for l in 0..layers {
            let input = if l == 0 { e } else { h };
            out.push((format!("{prefix}.{l}.weight"), vec![input + h, 4 * h], Kind::Weight));
            out.push((format!("{prefix}.{l}.bias"), vec![4 * h], Kind::LstmBias));
        }
    }
    out.push(("gate.hidden.weight".into(), vec![h, g], Kind::Weight));
    out.push(("gate.hidden.bias".into(), vec![g], Kind::Bias));
    out.push(("gate.out.weight".into(), vec![g, 1], Kind::Weight));
    out.push(("gate.out.bias".into(), vec![1], Kind::Bias));
    out.push(("combine.weight".into(), vec![2 * h, h], Kind::Weight));
    out.push(("output.weight".into(), vec![h, v], Kind::Weight));
    out
}

/// All trainable tensors of a model, addressed by unique name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    fn from_parts(config: ModelConfig, names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        ModelParams {
            config,
            names,
            tensors,
            index,
        }
    }

    /// Uniform(±0.08) weights, zero biases and forget-gate biases of 1.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        ModelParams::init_uniform(config, seed, INIT_SCALE)
    }

    /// Like [`ModelParams::init`] with weights drawn from Uniform(±scale).
    pub fn init_uniform(config: &ModelConfig, seed: u64, scale: f32) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_dim;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, kind) in layout(config) {
            let t = match kind {
                Kind::Weight => Tensor::from_fn(shape, |_| rng.gen_range(-scale..=scale)),
                Kind::Bias => Tensor::zeros(shape),
                Kind::LstmBias => Tensor::from_fn(shape, |i| if (h..2 * h).contains(&i) { FORGET_BIAS } else { 0.0 }),
            };
            names.push(name);
            tensors.push(t.into_param());
        }
        Ok(ModelParams::from_parts(config.clone(), names, tensors))
    }

    /// Every parameter set to zero.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (names, tensors) = layout(config)
            .into_iter()
            .map(|(n, s, _)| (n, Tensor::zeros(s).into_param()))
            .unzip();
        Ok(ModelParams::from_parts(config.clone(), names, tensors))
    }

    /// Assembles parameters loaded from storage, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let expected = layout(config);
        if expected.len() != named.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                expected.len(),
                named.len()
            )));
        }
        for ((en, es, _), (n, t)) in expected.iter().zip(&named) {
            if en != n || es.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {n} {:?} does not match expected {en} {es:?}",
                    t.shape()
                )));
            }
        }
        let (names, tensors) = named.into_iter().map(|(n, t)| (n, t.into_param())).unzip();
        Ok(ModelParams::from_parts(config.clone(), names, tensors))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Overrides the non-structural settings (dropout, λ).
    pub fn set_regularization(&mut self, dropout: f64, lambda: f64) -> Result<()> {
        let mut c = self.config.clone();
        c.dropout = dropout;
        c.lambda = lambda;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Records every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        let vars: Vec<Var> = self.tensors.iter().map(|t| tape.param(t)).collect();
        self.vars_from(&vars)
    }

    /// Names positional vars (in storage order) as model components.
    pub fn vars_from(&self, vars: &[Var]) -> ParamVars {
        let at = |name: &str| vars[self.index[name]];
        let lstm = |prefix: &str, layers: usize| {
            (0..layers)
                .map(|l| LstmVars {
                    weight: at(&format!("{prefix}.{l}.weight")),
                    bias: at(&format!("{prefix}.{l}.bias")),
                })
                .collect()
        };
        ParamVars {
            all: vars.to_vec(),
            embedding: at("embedding"),
            encoder: lstm("encoder", self.config.encoder_layers),
            decoder: lstm("decoder", self.config.decoder_layers),
            gate: GateVars {
                hidden_weight: at("gate.hidden.weight"),
                hidden_bias: at("gate.hidden.bias"),
                out_weight: at("gate.out.weight"),
                out_bias: at("gate.out.bias"),
            },
            combine: at("combine.weight"),
            output: at("output.weight"),
        }
    }

    /// Copies gradients from a backward sweep into each tensor's `grad`
    /// (zero for parameters the loss did not touch).
    pub fn absorb_grads(&mut self, vars: &ParamVars, grads: &crate::tensor::Gradients) {
        for (t, &v) in self.tensors.iter_mut().zip(&vars.all) {
            let g: Vec<f32> = grads.get_or_zero(v).into_iter().map(|x| x as f32).collect();
            t.set_grad(g).expect("gradient shape follows parameter shape");
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    /// `[input + hidden, 4 * hidden]`, gate blocks ordered input, forget,
    /// candidate, output.
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct GateVars {
    pub hidden_weight: Var,
    pub hidden_bias: Var,
    pub out_weight: Var,
    pub out_bias: Var,
}

/// Tape handles for every model parameter.
#[derive(Clone, Debug)]
pub struct ParamVars {
    /// Positional, in storage order.
    pub all: Vec<Var>,
    pub embedding: Var,
    pub encoder: Vec<LstmVars>,
    pub decoder: Vec<LstmVars>,
    pub gate: GateVars,
    /// Combines `[s_t; c_t]` into the attentional state.
    pub combine: Var,
    /// Projects the attentional state to vocabulary logits.
    pub output: Var,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let c = ModelConfig::toy();
        let a = ModelParams::init(&c, 11).unwrap();
        let b = ModelParams::init(&c, 11).unwrap();
        assert_eq!(a, b);
        let other = ModelParams::init(&c, 12).unwrap();
        assert!(a.tensors().iter().zip(other.tensors()).any(|(x, y)| x.values() != y.values()));

        let h = c.hidden_dim;
        for (name, t) in a.iter() {
            if name.ends_with(".bias") && (name.starts_with("encoder") || name.starts_with("decoder")) {
                for (i, &v) in t.values().iter().enumerate() {
                    let expect = if (h..2 * h).contains(&i) { 1.0 } else { 0.0 };
                    assert_eq!(v, expect, "{name}[{i}]");
                }
            } else {
                assert!(t.values().iter().all(|v| v.abs() <= INIT_SCALE), "{name}");
            }
        }
    }

    #[test]
    fn names_unique_and_complete() {
        let p = ModelParams::init(&ModelConfig::toy(), 0).unwrap();
        let mut names = p.names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), p.names().len());
        assert!(p.get("output.weight").is_some());
        assert!(p.get("decoder.1.bias").is_some());
        assert!(p.tensors().iter().all(Tensor::requires_grad));
    }

    #[test]
    fn from_named_rejects_wrong_shape() {
        let c = ModelConfig::toy();
        let p = ModelParams::init(&c, 0).unwrap();
        let mut named: Vec<(String, Tensor)> = p.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        assert!(ModelParams::from_named(&c, named.clone()).is_ok());
        named[0].1 = Tensor::zeros(vec![1, 1]);
        assert!(ModelParams::from_named(&c, named).is_err());
    }
}
