use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

/// One entry of a model's layer list.
///
/// Convolutions use zero padding of `kernel / 2`, which preserves spatial size
/// for odd kernels at stride 1. A linear layer flattens its input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerSpec {
    Linear {
        out: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Conv {
        out: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Relu,
    Batchnorm,
    Maxpool,
    /// `inner(x) + x`; inner layers must preserve the shape.
    Skip { layers: Vec<LayerSpec> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Per-sample input shape: `[features]` or `[channels, height, width]`.
    pub input: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Hex SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Depth-configurable MLP: `depth` hidden blocks of `linear(width) [+ batchnorm] + relu`
    /// followed by a linear classifier head.
    pub fn mlp(input: usize, depth: usize, width: usize, classes: usize, bias: bool, batchnorm: bool) -> Self {
        let mut layers = Vec::new();
        for _ in 0..depth {
            layers.push(LayerSpec::Linear { out: width, bias });
            if batchnorm {
                layers.push(LayerSpec::Batchnorm);
            }
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Linear { out: classes, bias });
        ModelSpec { input: vec![input], classes, layers }
    }

    /// Stack of `conv(3×3) + batchnorm + relu` blocks, one 2× pool, linear head.
    pub fn convnet(input: [usize; 3], depth: usize, channels: usize, classes: usize) -> Self {
        let mut layers = Vec::new();
        for _ in 0..depth {
            layers.extend(conv_block(channels));
        }
        layers.push(LayerSpec::Maxpool);
        layers.push(LayerSpec::Linear { out: classes, bias: true });
        ModelSpec { input: input.to_vec(), classes, layers }
    }

    /// Stem block, then `depth` conv blocks with an identity shortcut around
    /// every pair, one 2× pool, linear head.
    pub fn skipnet(input: [usize; 3], depth: usize, channels: usize, classes: usize) -> Self {
        let mut layers = conv_block(channels).to_vec();
        let mut remaining = depth;
        while remaining >= 2 {
            let mut inner = conv_block(channels).to_vec();
            inner.extend(conv_block(channels));
            layers.push(LayerSpec::Skip { layers: inner });
            remaining -= 2;
        }
        if remaining == 1 {
            layers.extend(conv_block(channels));
        }
        layers.push(LayerSpec::Maxpool);
        layers.push(LayerSpec::Linear { out: classes, bias: true });
        ModelSpec { input: input.to_vec(), classes, layers }
    }
}

fn conv_block(channels: usize) -> [LayerSpec; 3] {
    [
        LayerSpec::Conv { out: channels, kernel: 3, stride: 1, bias: true },
        LayerSpec::Batchnorm,
        LayerSpec::Relu,
    ]
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_config() {
        let text = r#"
input = [1, 4, 4]
classes = 3

[[layers]]
type = "conv"
out = 2
kernel = 3

[[layers]]
type = "batchnorm"

[[layers]]
type = "relu"

[[layers]]
type = "skip"
layers = [
  { type = "conv", out = 2, kernel = 3 },
  { type = "relu" },
]

[[layers]]
type = "linear"
out = 3
bias = false
"#;
        let spec = ModelSpec::from_toml(text).unwrap();
        assert_eq!(spec.layers.len(), 5);
        assert_eq!(spec.layers[0], LayerSpec::Conv { out: 2, kernel: 3, stride: 1, bias: true });
        assert_eq!(spec.layers[4], LayerSpec::Linear { out: 3, bias: false });
        let again = ModelSpec::from_toml(&spec.to_toml()).unwrap();
        assert_eq!(again, spec);
        assert_eq!(again.hash(), spec.hash());
    }

    #[test]
    fn rejects_unknown_layer_type() {
        let text = "input = [2]\nclasses = 2\n[[layers]]\ntype = \"dropout\"\n";
        assert!(matches!(ModelSpec::from_toml(text), Err(Error::Spec(_))));
    }

    #[test]
    fn hash_distinguishes_specs() {
        let a = ModelSpec::mlp(2, 2, 8, 2, true, false);
        let b = ModelSpec::mlp(2, 2, 9, 2, true, false);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
