use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Lstm,
    Gru,
    Mamba,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::Lstm, EncoderKind::Gru, EncoderKind::Mamba];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Lstm => "lstm",
            EncoderKind::Gru => "gru",
            EncoderKind::Mamba => "mamba",
        }
    }

    pub fn is_recurrent(self) -> bool {
        !matches!(self, EncoderKind::Mamba)
    }

    /// Gate blocks per recurrent cell.
    pub(crate) fn gates(self) -> usize {
        match self {
            EncoderKind::Lstm => 4,
            EncoderKind::Gru => 3,
            EncoderKind::Mamba => 0,
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(EncoderKind::Lstm),
            "gru" => Ok(EncoderKind::Gru),
            "mamba" | "ssm" => Ok(EncoderKind::Mamba),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?}; valid kinds: lstm, gru, mamba"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MambaConfig {
    pub depth: usize,
    pub state_dim: usize,
    pub conv_kernel: usize,
    pub expansion: usize,
}

impl Default for MambaConfig {
    fn default() -> Self {
        MambaConfig {
            depth: 8,
            state_dim: 32,
            conv_kernel: 4,
            expansion: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Per-direction hidden size. `None` picks `d / 2` so the bidirectional
    /// output matches the feature width (768 for 1536-d features).
    pub hidden: Option<usize>,
    pub layers: usize,
    pub dropout: f64,
    pub mamba: MambaConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::new(EncoderKind::Gru)
    }
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind) -> Self {
        EncoderConfig {
            kind,
            hidden: None,
            layers: 2,
            dropout: 0.1,
            mamba: MambaConfig::default(),
        }
    }

    pub fn hidden_for(&self, dim: usize) -> usize {
        self.hidden.unwrap_or((dim / 2).max(1))
    }

    /// Whether the recurrent encoders need a `2h → d` projection before the
    /// residual connection.
    pub fn needs_projection(&self, dim: usize) -> bool {
        self.kind.is_recurrent() && 2 * self.hidden_for(dim) != dim
    }

    /// Low-rank width of the SSM step-size projection.
    pub fn dt_rank(&self, dim: usize) -> usize {
        dim.div_ceil(16).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == Some(0) {
            return Err(Error::Config("hidden size must be at least 1".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("layer count must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        let m = &self.mamba;
        if m.depth == 0 || m.state_dim == 0 || m.conv_kernel == 0 || m.expansion == 0 {
            return Err(Error::Config(
                "mamba depth, state_dim, conv_kernel and expansion must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub dim: usize,
    pub classes: usize,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, dim: usize) -> Self {
        ModelConfig {
            encoder,
            dim,
            classes: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("feature dimension must be at least 1".into()));
        }
        if self.classes == 0 {
            return Err(Error::Config("class count must be at least 1".into()));
        }
        self.encoder.validate()
    }
}
