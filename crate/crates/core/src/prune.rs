//! Replace-attention-with-MLP: rewrites selected attention blocks as
//! residual + norm + feedforward blocks, on configs and on trained weights.

use serde::{Deserialize, Serialize};

use crate::blocks::BlockKind;
use crate::error::{Error, Result};
use crate::model::{param_shapes, AmtsfmModel, DecoderKind, LayerSpec, ModelConfig};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSpec {
    pub encoder_temporal: bool,
    pub encoder_spatial: bool,
    pub decoder: bool,
    #[serde(default = "yes")]
    pub use_feedforward: bool,
    #[serde(default = "yes")]
    pub use_residual: bool,
    #[serde(default = "yes")]
    pub use_layernorm: bool,
}

fn yes() -> bool {
    true
}

impl PruneSpec {
    fn scopes(encoder_temporal: bool, encoder_spatial: bool, decoder: bool) -> Self {
        Self {
            encoder_temporal,
            encoder_spatial,
            decoder,
            use_feedforward: true,
            use_residual: true,
            use_layernorm: true,
        }
    }

    /// Every scope, all wrapper components kept.
    pub fn all() -> Self {
        Self::scopes(true, true, true)
    }

    pub fn encoder() -> Self {
        Self::scopes(true, true, false)
    }

    pub fn temporal() -> Self {
        Self::scopes(true, false, false)
    }

    pub fn spatial() -> Self {
        Self::scopes(false, true, false)
    }

    pub fn decoder_only() -> Self {
        Self::scopes(false, false, true)
    }

    /// Parses `all`, `encoder`, `temporal`, `spatial`, `decoder` or a
    /// `+`-joined combination of the last three.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => return Ok(Self::all()),
            "encoder" => return Ok(Self::encoder()),
            _ => {}
        }
        let mut spec = Self::scopes(false, false, false);
        for part in s.split('+') {
            match part.trim() {
                "temporal" => spec.encoder_temporal = true,
                "spatial" => spec.encoder_spatial = true,
                "decoder" => spec.decoder = true,
                other => return Err(Error::Config(format!("unknown prune scope `{other}`"))),
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.encoder_temporal || self.encoder_spatial || self.decoder) {
            return Err(Error::Config("prune spec selects no scope".into()));
        }
        Ok(())
    }

    fn apply(&self, layer: &mut LayerSpec) {
        layer.kind = BlockKind::Mlp;
        layer.use_feedforward &= self.use_feedforward;
        layer.use_residual &= self.use_residual;
        layer.use_layernorm &= self.use_layernorm;
    }
}

/// A pruned config plus anything the transform chose to skip.
#[derive(Clone, Debug, PartialEq)]
pub struct Pruned {
    pub config: ModelConfig,
    pub warnings: Vec<String>,
}

pub fn prune_config(cfg: &ModelConfig, spec: &PruneSpec) -> Result<Pruned> {
    cfg.validate()?;
    spec.validate()?;
    let mut out = cfg.clone();
    let mut warnings = Vec::new();
    if spec.encoder_temporal {
        out.encoder_temporal.iter_mut().for_each(|l| spec.apply(l));
    }
    if spec.encoder_spatial {
        out.encoder_spatial.iter_mut().for_each(|l| spec.apply(l));
    }
    if spec.decoder {
        if cfg.decoder == DecoderKind::Projection {
            warnings.push("decoder scope ignored: projection decoder has no attention".to_string());
        } else {
            out.decoder_layers.iter_mut().for_each(|l| spec.apply(l));
        }
    }
    Ok(Pruned { config: out, warnings })
}

/// Builds the pruned model, copying every surviving parameter verbatim.
pub fn prune_weights(model: &AmtsfmModel, spec: &PruneSpec) -> Result<(AmtsfmModel, Vec<String>)> {
    let Pruned { config, warnings } = prune_config(model.config(), spec)?;
    let mut params = ParamStore::new();
    for (name, shape) in param_shapes(&config) {
        let t = model
            .params()
            .get(&name)
            .ok_or_else(|| Error::Param(format!("pruned model needs `{name}`, absent from source")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::shape("pruned parameter", t.shape(), &shape));
        }
        params.insert(name, t.clone());
    }
    Ok((AmtsfmModel::from_params(config, params)?, warnings))
}

/// The named variants of the ablation study. `TM`, `SP` and `TM+SP` act on
/// the encoder stacks; `EN`/`DE` choose encoder and decoder for both kinds.
/// The last three strip one wrapper component from the fully pruned model.
pub fn ablation_grid(cfg: &ModelConfig) -> Result<Vec<(String, ModelConfig)>> {
    cfg.validate()?;
    let full = PruneSpec::all();
    let variants: [(&str, Option<PruneSpec>); 10] = [
        ("Origin", None),
        ("TM", Some(PruneSpec::temporal())),
        ("SP", Some(PruneSpec::spatial())),
        ("TM+SP", Some(PruneSpec::encoder())),
        ("EN:TM+SP", Some(PruneSpec::encoder())),
        ("DE:TM+SP", Some(PruneSpec::decoder_only())),
        ("EN+DE:TM+SP", Some(full)),
        ("w/o FFN", Some(PruneSpec { use_feedforward: false, ..full })),
        ("w/o residual", Some(PruneSpec { use_residual: false, ..full })),
        ("w/o LN", Some(PruneSpec { use_layernorm: false, ..full })),
    ];
    variants
        .into_iter()
        .map(|(name, spec)| {
            let config = match spec {
                None => cfg.clone(),
                Some(spec) => prune_config(cfg, &spec)?.config,
            };
            Ok((name.to_string(), config))
        })
        .collect()
}
