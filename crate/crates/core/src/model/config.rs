use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    None,
    /// Squeeze-and-excitation: dense reduce/expand maps on the pooled vector.
    Se,
    /// 1x1 convolutions in place of the dense maps.
    Cam,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 3] =
        [AttentionKind::None, AttentionKind::Se, AttentionKind::Cam];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::None => "none",
            AttentionKind::Se => "se",
            AttentionKind::Cam => "cam",
        }
    }

    /// Row label used in the ablation table.
    pub fn ablation_label(self) -> &'static str {
        match self {
            AttentionKind::None => "no",
            AttentionKind::Se => "senet",
            AttentionKind::Cam => "cam",
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "no" => Ok(AttentionKind::None),
            "se" | "senet" => Ok(AttentionKind::Se),
            "cam" => Ok(AttentionKind::Cam),
            other => Err(Error::InvalidArgument(format!(
                "unknown attention variant {other:?} (none|se|cam)"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    /// Output widths of the three basic blocks.
    pub widths: [usize; 3],
    /// Channel reduction ratio inside the attention bottleneck.
    pub reduction: usize,
    pub dilation_rates: [usize; 4],
    pub attention: AttentionKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            num_classes: 2,
            widths: [32, 64, 128],
            reduction: 16,
            dilation_rates: [1, 5, 15, 20],
            attention: AttentionKind::Cam,
        }
    }
}

impl ModelConfig {
    pub fn with_widths(mut self, widths: [usize; 3]) -> Self {
        self.widths = widths;
        self
    }

    pub fn with_reduction(mut self, reduction: usize) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn with_attention(mut self, attention: AttentionKind) -> Self {
        self.attention = attention;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.in_channels == 0 {
            return bad("in_channels must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            ));
        }
        if self.widths.contains(&0) {
            return bad(format!("widths must be positive, got {:?}", self.widths));
        }
        if self.reduction == 0 {
            return bad("reduction must be positive".into());
        }
        if self.attention != AttentionKind::None {
            if let Some(w) = self.widths.iter().find(|&&w| w % self.reduction != 0) {
                return bad(format!(
                    "width {w} is not divisible by reduction {}",
                    self.reduction
                ));
            }
        }
        if !self.widths[2].is_multiple_of(2) {
            return bad(format!("last width must be even, got {}", self.widths[2]));
        }
        if self.dilation_rates.contains(&0) {
            return bad(format!(
                "dilation rates must be positive, got {:?}",
                self.dilation_rates
            ));
        }
        Ok(())
    }

    /// `key=value` lines covering every field, in a fixed order.
    pub fn to_kv_lines(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "in_channels={}\nnum_classes={}\nwidths={}\nreduction={}\ndilation_rates={}\nattention={}\n",
            self.in_channels,
            self.num_classes,
            join(&self.widths),
            self.reduction,
            join(&self.dilation_rates),
            self.attention
        )
    }

    pub fn from_kv_lines(text: &str) -> std::result::Result<Self, String> {
        let mut cfg = ModelConfig::default();
        let mut seen = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {line:?} has no '='"))?;
            let (key, value) = (key.trim(), value.trim());
            let int = |v: &str| v.parse::<usize>().map_err(|e| format!("{key}: {e}"));
            match key {
                "in_channels" => cfg.in_channels = int(value)?,
                "num_classes" => cfg.num_classes = int(value)?,
                "reduction" => cfg.reduction = int(value)?,
                "widths" => cfg.widths = parse_list(value).map_err(|e| format!("widths: {e}"))?,
                "dilation_rates" => {
                    cfg.dilation_rates =
                        parse_list(value).map_err(|e| format!("dilation_rates: {e}"))?
                }
                "attention" => cfg.attention = value.parse().map_err(|e: Error| e.to_string())?,
                other => return Err(format!("unknown key {other:?}")),
            }
            seen.push(key.to_string());
        }
        for key in [
            "in_channels",
            "num_classes",
            "widths",
            "reduction",
            "dilation_rates",
            "attention",
        ] {
            if !seen.iter().any(|k| k == key) {
                return Err(format!("missing key {key:?}"));
            }
        }
        Ok(cfg)
    }
}

/// Parses `a,b,c` into a fixed-size array.
pub fn parse_list<const N: usize>(s: &str) -> std::result::Result<[usize; N], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<usize>| format!("expected {N} comma-separated values, got {}", v.len()))
}
