use super::ModelError;
use serde::{Deserialize, Serialize};

/// Where the cross-attention sub-block is injected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Insertion {
    /// A cross-attention sub-block in every decoder layer (the default).
    Every,
    First,
    Middle,
    Last,
}

impl Insertion {
    /// Decoder layer indices that receive cross-attention.
    pub fn layers(self, n_layers: usize) -> Vec<usize> {
        match self {
            Insertion::Every => (0..n_layers).collect(),
            Insertion::First => vec![0],
            Insertion::Middle => vec![n_layers / 2],
            Insertion::Last => vec![n_layers - 1],
        }
    }
}

impl std::str::FromStr for Insertion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "every" => Ok(Insertion::Every),
            "first" => Ok(Insertion::First),
            "middle" => Ok(Insertion::Middle),
            "last" => Ok(Insertion::Last),
            other => Err(format!("unknown insertion {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parametrization {
    Standard,
    Mup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_tokens: usize,
    pub n_heads: usize,
    pub char_enabled: bool,
    pub d_chars: usize,
    pub char_heads: usize,
    pub char_layers: usize,
    pub insertion: Insertion,
    pub max_tokens: usize,
    pub max_chars: usize,
    /// Longest token spelling the intra-token position table covers.
    pub max_intra: usize,
    pub width_mult: f64,
    pub parametrization: Parametrization,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 8,
            d_tokens: 512,
            n_heads: 8,
            char_enabled: false,
            d_chars: 256,
            char_heads: 4,
            char_layers: 1,
            insertion: Insertion::Every,
            max_tokens: 512,
            max_chars: 4096,
            max_intra: 16,
            width_mult: 1.0,
            parametrization: Parametrization::Standard,
        }
    }
}

impl ModelConfig {
    pub fn d_mlp(&self) -> usize {
        4 * self.d_tokens
    }

    pub fn d_head(&self) -> usize {
        self.d_tokens / self.n_heads
    }

    pub fn char_d_mlp(&self) -> usize {
        4 * self.d_chars
    }

    pub fn char_d_head(&self) -> usize {
        self.d_chars / self.char_heads
    }

    /// Attention-logit scale for the given head width, per parametrization.
    pub fn attn_scale(&self, d_head: usize) -> f64 {
        match self.parametrization {
            Parametrization::Standard => 1.0 / (d_head as f64).sqrt(),
            Parametrization::Mup => 1.0 / d_head as f64,
        }
    }

    /// Output-logit multiplier, per parametrization.
    pub fn logit_mult(&self) -> f64 {
        match self.parametrization {
            Parametrization::Standard => 1.0,
            Parametrization::Mup => 1.0 / self.width_mult,
        }
    }

    /// Decoder layers that receive cross-attention (empty when the character
    /// path is disabled).
    pub fn cross_layers(&self) -> Vec<usize> {
        if self.char_enabled {
            self.insertion.layers(self.n_layers)
        } else {
            Vec::new()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.n_layers == 0 {
            return fail("n_layers must be positive".into());
        }
        if self.d_tokens == 0 || self.n_heads == 0 || !self.d_tokens.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_tokens={} must be a positive multiple of n_heads={}",
                self.d_tokens, self.n_heads
            ));
        }
        if self.char_enabled {
            if self.d_chars == 0 || self.char_heads == 0 || !self.d_chars.is_multiple_of(self.char_heads) {
                return fail(format!(
                    "d_chars={} must be a positive multiple of char_heads={}",
                    self.d_chars, self.char_heads
                ));
            }
            if self.d_chars > self.d_tokens {
                return fail(format!(
                    "d_chars={} exceeds d_tokens={}",
                    self.d_chars, self.d_tokens
                ));
            }
            if self.char_layers == 0 {
                return fail("char_layers must be positive".into());
            }
        }
        if self.max_tokens == 0 || self.max_chars == 0 || self.max_intra == 0 {
            return fail("context bounds must be positive".into());
        }
        if self.width_mult <= 0.0 {
            return fail("width_mult must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_layer_indices() {
        assert_eq!(Insertion::Every.layers(4), vec![0, 1, 2, 3]);
        assert_eq!(Insertion::First.layers(8), vec![0]);
        assert_eq!(Insertion::Middle.layers(8), vec![4]);
        assert_eq!(Insertion::Last.layers(8), vec![7]);
        assert_eq!(Insertion::Middle.layers(3), vec![1]);
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = ModelConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.d_head(), 64);
        assert_eq!(cfg.d_mlp(), 2048);
    }

    #[test]
    fn bad_head_split_is_rejected() {
        let cfg = ModelConfig {
            d_tokens: 30,
            n_heads: 4,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = ModelConfig {
            char_enabled: true,
            insertion: Insertion::Middle,
            parametrization: Parametrization::Mup,
            ..ModelConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(text.contains("\"middle\""));
        assert!(text.contains("\"mup\""));
    }
}
