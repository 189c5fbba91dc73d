use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which encoder/decoder pathways are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMode {
    #[default]
    Both,
    LocalOnly,
    GlobalOnly,
}

impl PathMode {
    pub fn has_global(self) -> bool {
        self != PathMode::LocalOnly
    }

    pub fn has_local(self) -> bool {
        self != PathMode::GlobalOnly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PathMode::Both => "both",
            PathMode::LocalOnly => "local_only",
            PathMode::GlobalOnly => "global_only",
        }
    }
}

impl std::str::FromStr for PathMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(PathMode::Both),
            "local_only" | "local" => Ok(PathMode::LocalOnly),
            "global_only" | "global" => Ok(PathMode::GlobalOnly),
            _ => Err(Error::Config(format!("unknown path mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Template vertex count `N`.
    pub vertex_count: usize,
    /// Latent size `Z`, split evenly between the two paths.
    pub latent_size: usize,
    pub local_channels: Vec<usize>,
    pub global_channels: Vec<usize>,
    pub levels: usize,
    /// FeaStConv heads `M`.
    pub heads: usize,
    /// LeakyReLU negative slope.
    pub slope: f64,
    pub use_attention: bool,
    pub use_residual: bool,
    pub use_curvature: bool,
    pub path_mode: PathMode,
    /// Attention hidden width; the decoder output width when unset.
    pub attention_hidden: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vertex_count: 0,
            latent_size: 256,
            local_channels: vec![8, 16, 32],
            global_channels: vec![32, 64, 128],
            levels: 3,
            heads: 8,
            slope: 0.01,
            use_attention: true,
            use_residual: true,
            use_curvature: true,
            path_mode: PathMode::Both,
            attention_hidden: None,
        }
    }
}

impl ModelConfig {
    pub fn new(vertex_count: usize) -> Self {
        ModelConfig {
            vertex_count,
            ..Default::default()
        }
    }

    /// `F_in`: three position channels, plus curvature when enabled.
    pub fn in_channels(&self) -> usize {
        if self.use_curvature {
            4
        } else {
            3
        }
    }

    /// `F_out = F_in`.
    pub fn out_channels(&self) -> usize {
        self.in_channels()
    }

    pub fn attention_hidden(&self) -> usize {
        self.attention_hidden.unwrap_or_else(|| self.out_channels())
    }

    /// Output widths of the global decoder GC layers, coarsest first.
    pub fn global_decoder_widths(&self) -> Vec<usize> {
        let g = &self.global_channels;
        g[..g.len().saturating_sub(1)]
            .iter()
            .rev()
            .copied()
            .chain(std::iter::once(self.out_channels()))
            .collect()
    }

    /// Output widths of the local decoder GC layers. The input width is
    /// `local_channels[0]`.
    pub fn local_decoder_widths(&self) -> Vec<usize> {
        self.local_channels[1..]
            .iter()
            .copied()
            .chain(std::iter::once(self.out_channels()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vertex_count == 0 {
            return bad("vertex_count must be positive".into());
        }
        if self.latent_size < 2 || !self.latent_size.is_multiple_of(2) {
            return bad(format!("latent_size {} must be even and at least 2", self.latent_size));
        }
        if self.local_channels.is_empty() || self.local_channels.contains(&0) {
            return bad("local_channels must be non-empty and positive".into());
        }
        if self.global_channels.len() != self.levels || self.global_channels.contains(&0) {
            return bad(format!(
                "global_channels {:?} must have one positive width per level ({})",
                self.global_channels, self.levels
            ));
        }
        if self.path_mode.has_global() && (self.levels == 0 || self.vertex_count >> self.levels == 0) {
            return bad(format!(
                "{} levels cannot be built from {} vertices",
                self.levels, self.vertex_count
            ));
        }
        if self.heads == 0 {
            return bad("heads must be at least 1".into());
        }
        if !(self.slope.is_finite() && self.slope >= 0.0) {
            return bad(format!("slope {} must be finite and non-negative", self.slope));
        }
        if self.attention_hidden == Some(0) {
            return bad("attention_hidden must be positive".into());
        }
        Ok(())
    }
}
