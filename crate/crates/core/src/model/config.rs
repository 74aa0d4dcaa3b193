use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blocks::{BlockKind, BlockSpec, NormPlacement};
use crate::error::{Error, Result};

/// Forecasting task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Spatio-temporal forecasting: the spatial stack is active.
    Stf,
    /// Long-term forecasting: spatial modelling is optional.
    Ltsf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// Masked self-attention over the decoded prefix plus cross-attention to the encoder.
    Attention,
    /// Linear map from the encoded lookback to the horizon; see [`ProjectionHead`].
    Projection,
}

/// Shape of the projection decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionHead {
    /// `W_T [T, H]` shared across features, then `W_out [d, C_out]`.
    #[default]
    Factorized,
    /// One `[T·d, H·C_out]` map per node over the flattened lookback.
    Flatten,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub time_of_day: bool,
    pub steps_per_day: usize,
    pub day_of_week: bool,
    pub node_embedding: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            time_of_day: false,
            steps_per_day: 288,
            day_of_week: false,
            node_embedding: false,
        }
    }
}

/// Per-layer choices; widths come from the enclosing [`ModelConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: BlockKind,
    pub use_feedforward: bool,
    pub use_residual: bool,
    pub use_layernorm: bool,
}

impl LayerSpec {
    pub fn full(kind: BlockKind) -> Self {
        Self {
            kind,
            use_feedforward: true,
            use_residual: true,
            use_layernorm: true,
        }
    }
}

/// Declarative architecture description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub task: Task,
    pub decoder: DecoderKind,
    #[serde(default)]
    pub projection_head: ProjectionHead,
    pub lookback: usize,
    pub horizon: usize,
    pub nodes: usize,
    pub in_features: usize,
    pub out_features: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub dropout: f64,
    pub seed: u64,
    #[serde(default)]
    pub interleave: bool,
    #[serde(default)]
    pub norm_placement: NormPlacement,
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub encoder_temporal: Vec<LayerSpec>,
    #[serde(default)]
    pub encoder_spatial: Vec<LayerSpec>,
    #[serde(default)]
    pub decoder_layers: Vec<LayerSpec>,
}

impl ModelConfig {
    /// Full-attention STF model with `layers` temporal and spatial blocks and a projection decoder.
    pub fn stf(nodes: usize, d_model: usize, d_ff: usize, heads: usize, layers: usize) -> Self {
        Self {
            task: Task::Stf,
            decoder: DecoderKind::Projection,
            projection_head: ProjectionHead::Factorized,
            lookback: 12,
            horizon: 12,
            nodes,
            in_features: 1,
            out_features: 1,
            d_model,
            d_ff,
            heads,
            dropout: 0.0,
            seed: 0,
            interleave: false,
            norm_placement: NormPlacement::Outside,
            embedding: EmbeddingConfig::default(),
            encoder_temporal: vec![LayerSpec::full(BlockKind::TemporalAttention); layers],
            encoder_spatial: vec![LayerSpec::full(BlockKind::SpatialAttention); layers],
            decoder_layers: Vec::new(),
        }
    }

    /// Temporal-only LTSF model with a projection decoder.
    pub fn ltsf(nodes: usize, lookback: usize, horizon: usize, d_model: usize, d_ff: usize, heads: usize, layers: usize) -> Self {
        Self {
            task: Task::Ltsf,
            lookback,
            horizon,
            encoder_spatial: Vec::new(),
            ..Self::stf(nodes, d_model, d_ff, heads, layers)
        }
    }

    /// The STF reference configuration used for FLOPs-reduction reporting.
    pub fn reference_stf() -> Self {
        Self::stf(307, 64, 256, 4, 3)
    }

    /// The LTSF reference configuration used for FLOPs-reduction reporting.
    pub fn reference_ltsf() -> Self {
        Self::ltsf(7, 96, 96, 64, 256, 4, 2)
    }

    pub fn block_spec(&self, layer: &LayerSpec) -> BlockSpec {
        BlockSpec {
            kind: layer.kind,
            use_feedforward: layer.use_feedforward,
            use_residual: layer.use_residual,
            use_layernorm: layer.use_layernorm,
            d_model: self.d_model,
            d_ff: self.d_ff,
            heads: self.heads,
            dropout: self.dropout,
            norm_placement: self.norm_placement,
        }
    }

    /// Whether the spatial stack runs: always configured layers for STF; for
    /// LTSF only when layers were configured explicitly.
    pub fn uses_spatial(&self) -> bool {
        !self.encoder_spatial.is_empty()
    }

    pub fn has_attention(&self) -> bool {
        self.encoder_temporal
            .iter()
            .chain(&self.encoder_spatial)
            .chain(self.active_decoder_layers())
            .any(|l| l.kind.is_attention())
    }

    /// Decoder layers that take part in the forward pass.
    pub fn active_decoder_layers(&self) -> &[LayerSpec] {
        match self.decoder {
            DecoderKind::Attention => &self.decoder_layers,
            DecoderKind::Projection => &[],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("nodes", self.nodes),
            ("in_features", self.in_features),
            ("out_features", self.out_features),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("heads", self.heads),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.has_attention() && self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.embedding.time_of_day && self.embedding.steps_per_day == 0 {
            return Err(Error::Config("steps_per_day must be positive".into()));
        }
        if self.decoder == DecoderKind::Attention && self.decoder_layers.is_empty() {
            return Err(Error::Config("attention decoder needs at least one layer".into()));
        }
        if self.task == Task::Stf && self.encoder_spatial.is_empty() {
            return Err(Error::Config("STF models need a spatial stack".into()));
        }
        for l in &self.encoder_temporal {
            if l.kind == BlockKind::SpatialAttention {
                return Err(Error::Config("spatial block in the temporal stack".into()));
            }
        }
        for l in &self.encoder_spatial {
            if l.kind == BlockKind::TemporalAttention {
                return Err(Error::Config("temporal block in the spatial stack".into()));
            }
        }
        for l in &self.decoder_layers {
            if l.kind == BlockKind::SpatialAttention {
                return Err(Error::Config("spatial block in the decoder".into()));
            }
        }
        if self.interleave && self.encoder_temporal.len() != self.encoder_spatial.len() {
            return Err(Error::Config("interleaving needs equal temporal and spatial depths".into()));
        }
        Ok(())
    }

    /// Canonical text form (TOML).
    pub fn to_canonical(&self) -> String {
        toml::to_string(self).expect("model config serialises")
    }

    pub fn from_canonical(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical().as_bytes()))
    }
}
