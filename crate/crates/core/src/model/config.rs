use crate::episodes::{vocab, FUTURE_ACTIONS, HISTORY_FRAMES};
use crate::error::{Error, Result};
use crate::hashing::short_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    /// Transformer layers of the image encoder.
    pub enc_layers: usize,
    pub mlp_ratio: usize,
    pub patch: usize,
    pub image_size: usize,
    pub vocab_size: usize,
    pub n_history: usize,
    pub k_actions: usize,
    pub max_seq: usize,
    pub max_instruction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 128,
            layers: 4,
            heads: 4,
            enc_layers: 2,
            mlp_ratio: 4,
            patch: 8,
            image_size: 64,
            vocab_size: vocab().size(),
            n_history: HISTORY_FRAMES,
            k_actions: FUTURE_ACTIONS,
            max_seq: 512,
            max_instruction: 64,
        }
    }
}

const KEYS: [&str; 12] = [
    "d",
    "layers",
    "heads",
    "enc_layers",
    "mlp_ratio",
    "patch",
    "image_size",
    "vocab_size",
    "n_history",
    "k_actions",
    "max_seq",
    "max_instruction",
];

impl ModelConfig {
    /// Small configuration sized for single-core CPU experiments.
    pub fn toy() -> Self {
        ModelConfig {
            d: 32,
            layers: 2,
            heads: 2,
            enc_layers: 1,
            mlp_ratio: 2,
            image_size: 32,
            ..Default::default()
        }
    }

    pub fn patches_per_image(&self) -> usize {
        (self.image_size / self.patch).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad(format!("d={} must be a positive multiple of heads={}", self.d, self.heads));
        }
        if self.patch == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch) {
            return bad(format!("image size {} is not a multiple of patch {}", self.image_size, self.patch));
        }
        if self.vocab_size != vocab().size() {
            return bad(format!("vocab_size {} differs from the vocabulary ({})", self.vocab_size, vocab().size()));
        }
        if self.n_history == 0 || self.k_actions == 0 || self.layers == 0 || self.mlp_ratio == 0 {
            return bad("n_history, k_actions, layers and mlp_ratio must be positive".into());
        }
        if self.max_seq == 0 || self.max_instruction == 0 {
            return bad("max_seq and max_instruction must be positive".into());
        }
        Ok(())
    }

    fn values(&self) -> [usize; 12] {
        [
            self.d,
            self.layers,
            self.heads,
            self.enc_layers,
            self.mlp_ratio,
            self.patch,
            self.image_size,
            self.vocab_size,
            self.n_history,
            self.k_actions,
            self.max_seq,
            self.max_instruction,
        ]
    }

    pub fn to_kv(&self) -> String {
        KEYS.iter()
            .zip(self.values())
            .map(|(k, v)| format!("model.{k}={v}\n"))
            .collect()
    }

    /// Applies one `model.<key>` setting. Returns false for keys it does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let Some(k) = key.strip_prefix("model.") else {
            return Ok(false);
        };
        let v: usize = value
            .parse()
            .map_err(|_| Error::Parse(format!("{key}: expected an unsigned integer, got {value:?}")))?;
        let slot = match k {
            "d" => &mut self.d,
            "layers" => &mut self.layers,
            "heads" => &mut self.heads,
            "enc_layers" => &mut self.enc_layers,
            "mlp_ratio" => &mut self.mlp_ratio,
            "patch" => &mut self.patch,
            "image_size" => &mut self.image_size,
            "vocab_size" => &mut self.vocab_size,
            "n_history" => &mut self.n_history,
            "k_actions" => &mut self.k_actions,
            "max_seq" => &mut self.max_seq,
            "max_instruction" => &mut self.max_instruction,
            _ => return Ok(false),
        };
        *slot = v;
        Ok(true)
    }

    pub fn hash(&self) -> String {
        short_hash(self.to_kv().as_bytes())
    }
}
