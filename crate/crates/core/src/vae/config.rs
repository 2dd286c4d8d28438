use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlScaleMode {
    #[default]
    Unscaled,
    /// KL multiplied by the number of strings per side.
    ScaledByK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Squared error on a standardized target.
    Linear,
    /// Cross-entropy on a target in [0, 1].
    Logistic,
}

/// A property regressor reading the concatenated latent vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub name: String,
    pub kind: HeadKind,
    /// Column of the corpus property list holding the target.
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    pub no_atom_pooling: bool,
    /// One encoder string, K decoder strings.
    pub one_smiles_enc: bool,
    /// One encoder string and one different decoder string.
    pub one_smiles_encdec_distinct: bool,
    /// The same single string on both sides.
    pub one_smiles_encdec_same: bool,
    /// All latent width in the first layer.
    pub no_posterior_hierarchy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_width: usize,
    pub encoder_depth: usize,
    pub gru_hidden: usize,
    pub hierarchy_layers: usize,
    pub latent_width: usize,
    pub query_hidden: usize,
    pub decoder_hidden: usize,
    /// Width of the latent projection fed to the decoder at every step.
    pub decoder_latent_input: usize,
    pub smiles_per_side: usize,
    pub kl_scale_mode: KlScaleMode,
    pub kl_anneal_steps: u64,
    pub beam_width: usize,
    pub max_decode_len: usize,
    pub ablations: Ablations,
    pub grammar_mask_decoding: bool,
    pub heads: Vec<HeadSpec>,
    /// Clamp bound multiplier over the running max |z|.
    pub clamp_factor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_width: 32,
            encoder_depth: 3,
            gru_hidden: 64,
            hierarchy_layers: 4,
            latent_width: 8,
            query_hidden: 64,
            decoder_hidden: 256,
            decoder_latent_input: 32,
            smiles_per_side: 5,
            kl_scale_mode: KlScaleMode::Unscaled,
            kl_anneal_steps: 1000,
            beam_width: 5,
            max_decode_len: 200,
            ablations: Ablations::default(),
            grammar_mask_decoding: false,
            heads: default_heads(),
            clamp_factor: 10.0,
        }
    }
}

/// Molecular weight, ring count and aromatic-ring presence, in corpus
/// columns 0, 1 and 2.
pub fn default_heads() -> Vec<HeadSpec> {
    vec![
        HeadSpec { name: "mw".into(), kind: HeadKind::Linear, column: 0 },
        HeadSpec { name: "rings".into(), kind: HeadKind::Linear, column: 1 },
        HeadSpec { name: "aromatic".into(), kind: HeadKind::Logistic, column: 2 },
    ]
}

impl ModelConfig {
    /// A very small configuration for tests.
    pub fn micro() -> Self {
        ModelConfig {
            embed_width: 4,
            encoder_depth: 1,
            gru_hidden: 8,
            hierarchy_layers: 2,
            latent_width: 4,
            query_hidden: 6,
            decoder_hidden: 8,
            decoder_latent_input: 4,
            smiles_per_side: 2,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let sizes = [
            ("embed_width", self.embed_width),
            ("encoder_depth", self.encoder_depth),
            ("gru_hidden", self.gru_hidden),
            ("hierarchy_layers", self.hierarchy_layers),
            ("latent_width", self.latent_width),
            ("query_hidden", self.query_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("decoder_latent_input", self.decoder_latent_input),
            ("smiles_per_side", self.smiles_per_side),
            ("beam_width", self.beam_width),
            ("max_decode_len", self.max_decode_len),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        let a = &self.ablations;
        let single = [a.one_smiles_enc, a.one_smiles_encdec_distinct, a.one_smiles_encdec_same];
        if single.iter().filter(|&&f| f).count() > 1 {
            return Err("at most one one_smiles_* ablation may be set".into());
        }
        if !(self.clamp_factor > 0.0) {
            return Err("clamp_factor must be positive".into());
        }
        Ok(())
    }

    /// Latent layers actually used and the width of each.
    pub fn latent_layout(&self) -> Vec<usize> {
        if self.ablations.no_posterior_hierarchy {
            vec![self.hierarchy_layers * self.latent_width]
        } else {
            vec![self.latent_width; self.hierarchy_layers]
        }
    }

    pub fn latent_total(&self) -> usize {
        self.hierarchy_layers * self.latent_width
    }

    /// Number of encoder and decoder strings per molecule.
    pub fn strings_per_side(&self) -> (usize, usize) {
        let a = &self.ablations;
        let k = self.smiles_per_side;
        if a.one_smiles_encdec_distinct || a.one_smiles_encdec_same {
            (1, 1)
        } else if a.one_smiles_enc {
            (1, k)
        } else {
            (k, k)
        }
    }

    pub fn kl_scale(&self) -> f64 {
        match self.kl_scale_mode {
            KlScaleMode::Unscaled => 1.0,
            KlScaleMode::ScaledByK => self.smiles_per_side as f64,
        }
    }
}
