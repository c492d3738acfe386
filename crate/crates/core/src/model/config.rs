use serde::{Deserialize, Serialize};

use crate::encodings::TrpeConfig;
use crate::error::{Error, Result};
use crate::motion::NUM_PARTS;

/// Component switches for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Per-joint tokens instead of pooled body parts.
    pub no_tbpm: bool,
    /// Drop the person identity encoding.
    pub no_ie: bool,
    /// Drop the trajectory bias from attention.
    pub no_trpe: bool,
    /// Index the bias by windowed Euclidean root distance instead of DTW.
    pub eupe: bool,
    /// Restrict encoder attention to each person's own tokens.
    pub no_sbi_msa: bool,
}

impl Ablation {
    pub const FLAGS: [&'static str; 5] = ["no_tbpm", "no_ie", "no_trpe", "eupe", "no_sbi_msa"];

    pub fn validate(&self) -> Result<()> {
        if self.eupe && self.no_trpe {
            return Err(Error::Config("ablation flags `eupe` and `no_trpe` conflict".into()));
        }
        Ok(())
    }

    /// Sets one flag by name.
    pub fn set(&mut self, flag: &str) -> Result<()> {
        match flag {
            "no_tbpm" => self.no_tbpm = true,
            "no_ie" => self.no_ie = true,
            "no_trpe" => self.no_trpe = true,
            "eupe" => self.eupe = true,
            "no_sbi_msa" => self.no_sbi_msa = true,
            other => return Err(Error::validation("ablation", format!("unknown flag `{other}`"))),
        }
        Ok(())
    }

    pub fn from_flags<S: AsRef<str>>(flags: &[S]) -> Result<Self> {
        let mut a = Self::default();
        for f in flags {
            a.set(f.as_ref())?;
        }
        a.validate()?;
        Ok(a)
    }

    pub fn names(&self) -> Vec<&'static str> {
        let on = [self.no_tbpm, self.no_ie, self.no_trpe, self.eupe, self.no_sbi_msa];
        Self::FLAGS
            .iter()
            .zip(on)
            .filter(|(_, b)| *b)
            .map(|(n, _)| *n)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Token width `D`.
    pub d_model: usize,
    /// Per-head width `d_z`.
    pub d_head: usize,
    pub heads: usize,
    pub blocks: usize,
    pub decoder_layers: usize,
    pub d_ff: usize,
    /// Temporal kernel `l` of the part projection and of the query builder.
    pub kernel: usize,
    pub stride: usize,
    pub parts: usize,
    pub joints: usize,
    /// Rows of the identity table; scenes may not exceed it.
    pub max_persons: usize,
    pub trpe: TrpeConfig,
    pub dropout: f64,
    /// Input low-pass keep count; `None` keeps all `T` coefficients.
    pub k_in: Option<usize>,
    /// DCT coefficients predicted per joint coordinate.
    pub k_out: usize,
    /// Predicted frames `N`.
    pub horizon: usize,
    pub init_std: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 512,
            d_head: 64,
            heads: 8,
            blocks: 3,
            decoder_layers: 1,
            d_ff: 1024,
            kernel: 10,
            stride: 1,
            parts: NUM_PARTS,
            joints: 15,
            max_persons: 16,
            trpe: TrpeConfig::default(),
            dropout: 0.2,
            k_in: None,
            k_out: 25,
            horizon: 25,
            init_std: 0.02,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    /// A small configuration with width `d_model`, `heads` heads and
    /// `blocks` encoder blocks; everything else at defaults.
    pub fn toy(d_model: usize, heads: usize, blocks: usize, horizon: usize) -> Self {
        Self {
            d_model,
            d_head: d_model / heads,
            heads,
            blocks,
            d_ff: 4 * d_model,
            k_out: horizon,
            horizon,
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("heads", self.heads),
            ("blocks", self.blocks),
            ("decoder_layers", self.decoder_layers),
            ("d_ff", self.d_ff),
            ("kernel", self.kernel),
            ("stride", self.stride),
            ("parts", self.parts),
            ("joints", self.joints),
            ("max_persons", self.max_persons),
            ("k_out", self.k_out),
            ("horizon", self.horizon),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::validation(name, "must be positive"));
            }
        }
        if self.d_model != self.heads * self.d_head {
            return Err(Error::validation(
                "d_model",
                format!("{} != heads ({}) × d_head ({})", self.d_model, self.heads, self.d_head),
            ));
        }
        if self.d_model % 2 == 1 {
            return Err(Error::validation("d_model", "must be even for the positional encoding"));
        }
        if self.parts != NUM_PARTS {
            return Err(Error::validation("parts", format!("must be {NUM_PARTS}")));
        }
        if self.k_out > self.horizon {
            return Err(Error::validation(
                "k_out",
                format!("{} exceeds horizon {}", self.k_out, self.horizon),
            ));
        }
        if self.k_in == Some(0) {
            return Err(Error::validation("k_in", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout", "must lie in [0, 1)"));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(Error::validation("init_std", "must be non-negative"));
        }
        self.trpe
            .validate()
            .map_err(|e| Error::validation("trpe", e.to_string()))?;
        self.ablation
            .validate()
            .map_err(|e| Error::validation("ablation", e.to_string()))?;
        Ok(())
    }

    /// Token columns per window: body parts, or joints without pooling.
    pub fn token_parts(&self) -> usize {
        if self.ablation.no_tbpm {
            self.joints
        } else {
            self.parts
        }
    }

    /// Minimum observed frames (`T+1`) a scene must provide.
    pub fn min_observed_frames(&self) -> usize {
        (self.kernel + 1).max(2)
    }
}
