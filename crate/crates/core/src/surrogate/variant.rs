use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ablation switches; only the five combinations below are meaningful.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelVariant {
    pub learned_weights: bool,
    pub at_transform: bool,
    pub ssp_subspace: bool,
}

impl ModelVariant {
    pub const PETAL: Self = Self::new(true, true, true);
    pub const WAN: Self = Self::new(true, true, false);
    pub const WA_LFM_DEC: Self = Self::new(true, false, true);
    pub const WA_LFM: Self = Self::new(true, false, false);
    pub const A_LFM: Self = Self::new(false, false, false);

    pub const ALL: [Self; 5] = [
        Self::PETAL,
        Self::WAN,
        Self::WA_LFM_DEC,
        Self::WA_LFM,
        Self::A_LFM,
    ];

    const fn new(learned_weights: bool, at_transform: bool, ssp_subspace: bool) -> Self {
        Self {
            learned_weights,
            at_transform,
            ssp_subspace,
        }
    }

    pub fn validate(self) -> Result<Self> {
        if Self::ALL.contains(&self) {
            Ok(self)
        } else {
            Err(Error::Config(format!("unsupported variant flags {self:?}")))
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PETAL => "PETAL",
            Self::WAN => "WAN",
            Self::WA_LFM_DEC => "WA-LFM+Dec",
            Self::WA_LFM => "WA-LFM",
            Self::A_LFM => "A-LFM",
            _ => "invalid",
        }
    }

    /// Accepts the display names case-insensitively, with `_` for `-`.
    pub fn from_name(name: &str) -> Result<Self> {
        let key = name.to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|v| v.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Config(format!("unknown variant `{name}`")))
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
