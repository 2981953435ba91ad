use std::fmt;
use std::str::FromStr;

use super::ModelError;

/// Shape of the hierarchical decoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub patch_layers: usize,
    pub char_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub context_patches: usize,
    pub patch_size: usize,
    /// Byte codes plus three trailing specials: PAD, BOS, EOS.
    pub char_vocab: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            patch_layers: 2,
            char_layers: 2,
            hidden: 64,
            heads: 4,
            context_patches: 128,
            patch_size: 16,
            char_vocab: 259,
            seed: 0,
        }
    }

    /// Full-size shape; too large to train here, kept for reference runs.
    pub fn full_scale() -> Self {
        ModelConfig {
            patch_layers: 20,
            char_layers: 6,
            hidden: 1280,
            heads: 20,
            context_patches: 1024,
            patch_size: 16,
            char_vocab: 259,
            seed: 0,
        }
    }

    pub fn pad(&self) -> u16 {
        (self.char_vocab - 3) as u16
    }

    pub fn bos(&self) -> u16 {
        (self.char_vocab - 2) as u16
    }

    pub fn eos(&self) -> u16 {
        (self.char_vocab - 1) as u16
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::BadConfig(m.to_string()));
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return bad("hidden must be a positive multiple of heads");
        }
        if self.context_patches < 2 {
            return bad("context_patches must be at least 2");
        }
        if self.patch_size < 2 {
            return bad("patch_size must be at least 2");
        }
        if self.char_vocab < 4 || self.char_vocab > u16::MAX as usize {
            return bad("char_vocab must hold at least one byte code and the three specials");
        }
        Ok(())
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "patch_layers={}", self.patch_layers)?;
        writeln!(f, "char_layers={}", self.char_layers)?;
        writeln!(f, "hidden={}", self.hidden)?;
        writeln!(f, "heads={}", self.heads)?;
        writeln!(f, "context_patches={}", self.context_patches)?;
        writeln!(f, "patch_size={}", self.patch_size)?;
        writeln!(f, "char_vocab={}", self.char_vocab)?;
        writeln!(f, "seed={}", self.seed)
    }
}

impl FromStr for ModelConfig {
    type Err = ModelError;

    /// Reads `key=value` lines; missing keys keep desk defaults.
    fn from_str(s: &str) -> Result<Self, ModelError> {
        let mut c = ModelConfig::desk();
        for line in s.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::BadConfig(format!("expected key=value: {line}")))?;
            let v = v.trim();
            let num = || v.parse::<u64>().map_err(|_| ModelError::BadConfig(format!("bad value for {k}: {v}")));
            match k.trim() {
                "patch_layers" => c.patch_layers = num()? as usize,
                "char_layers" => c.char_layers = num()? as usize,
                "hidden" => c.hidden = num()? as usize,
                "heads" => c.heads = num()? as usize,
                "context_patches" => c.context_patches = num()? as usize,
                "patch_size" => c.patch_size = num()? as usize,
                "char_vocab" => c.char_vocab = num()? as usize,
                "seed" => c.seed = num()?,
                other => return Err(ModelError::BadConfig(format!("unknown key {other}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}
