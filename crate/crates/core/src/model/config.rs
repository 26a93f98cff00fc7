use crate::error::{Error, Result};

/// Architecture and regularization settings of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Width of the hidden layer of the self-gate network.
    pub gate_hidden_dim: usize,
    pub dropout: f64,
    /// Weight of the semantic-relevance term.
    pub lambda: f64,
}

impl ModelConfig {
    /// Character-level summarization settings.
    pub fn summarization() -> Self {
        ModelConfig {
            vocab_size: 4000,
            embed_dim: 400,
            hidden_dim: 500,
            encoder_layers: 2,
            decoder_layers: 2,
            gate_hidden_dim: 1000,
            dropout: 0.0,
            lambda: 0.0001,
        }
    }

    /// Word-level simplification settings.
    pub fn simplification() -> Self {
        ModelConfig {
            vocab_size: 50_000,
            embed_dim: 256,
            hidden_dim: 256,
            encoder_layers: 2,
            decoder_layers: 2,
            gate_hidden_dim: 256,
            dropout: 0.4,
            lambda: 0.0001,
        }
    }

    /// Small model for the synthetic tasks.
    pub fn toy() -> Self {
        ModelConfig {
            vocab_size: 30,
            embed_dim: 32,
            hidden_dim: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            gate_hidden_dim: 64,
            dropout: 0.0,
            lambda: 0.0001,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("gate_hidden_dim", self.gate_hidden_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be finite and ≥ 0", self.lambda)));
        }
        Ok(())
    }

    /// Fields that fix parameter shapes, as `(key, value)` pairs.
    pub fn dims(&self) -> [(&'static str, usize); 6] {
        [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("gate_hidden_dim", self.gate_hidden_dim),
        ]
    }

    /// Errors unless `other` has the same parameter shapes.
    pub fn check_compatible(&self, other: &ModelConfig) -> Result<()> {
        for ((k, a), (_, b)) in self.dims().iter().zip(other.dims()) {
            if *a != b {
                return Err(Error::Checkpoint(format!("{k} mismatch: checkpoint has {a}, config has {b}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        for c in [ModelConfig::summarization(), ModelConfig::simplification(), ModelConfig::toy()] {
            c.validate().unwrap();
        }
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ModelConfig::toy();
        c.hidden_dim = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.lambda = -0.1;
        assert!(c.validate().is_err());
    }
}
