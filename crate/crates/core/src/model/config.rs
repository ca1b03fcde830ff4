use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    Dprnn,
    Tcn,
    CausalTcn,
}

impl ExtractorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dprnn => "dprnn",
            Self::Tcn => "tcn",
            Self::CausalTcn => "causal_tcn",
        }
    }
}

impl std::str::FromStr for ExtractorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dprnn" => Ok(Self::Dprnn),
            "tcn" => Ok(Self::Tcn),
            "causal_tcn" => Ok(Self::CausalTcn),
            _ => Err(Error::Config(format!("unknown extractor '{s}' (dprnn, tcn, causal_tcn)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DprnnConfig {
    pub bottleneck: usize,
    pub hidden: usize,
    pub blocks: usize,
    /// Chunk length in frames; chunks overlap by half.
    pub chunk: usize,
}

impl Default for DprnnConfig {
    fn default() -> Self {
        Self {
            bottleneck: 64,
            hidden: 128,
            blocks: 6,
            chunk: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcnConfig {
    pub bottleneck: usize,
    pub hidden: usize,
    pub repeats: usize,
    pub blocks: usize,
    pub kernel: usize,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self {
            bottleneck: 64,
            hidden: 512,
            repeats: 4,
            blocks: 8,
            kernel: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeakerConfig {
    pub resnet_blocks: usize,
    pub kernel: usize,
    pub lstm_hidden: usize,
}

impl Default for SpeakerConfig {
    fn default() -> Self {
        Self {
            resnet_blocks: 3,
            kernel: 3,
            lstm_hidden: 64,
        }
    }
}

/// Hyperparameters of the five model components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding dimension.
    pub n: usize,
    /// Encoder kernel in samples; hop is `l / 2`.
    pub l: usize,
    pub eeg_channels: usize,
    pub sa_layers: usize,
    pub ff_mult: usize,
    pub extractor: ExtractorKind,
    pub dprnn: DprnnConfig,
    pub tcn: TcnConfig,
    pub speaker: SpeakerConfig,
    pub speaker_encoder_enabled: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 64,
            l: 20,
            eeg_channels: 64,
            sa_layers: 5,
            ff_mult: 4,
            extractor: ExtractorKind::Dprnn,
            dprnn: DprnnConfig::default(),
            tcn: TcnConfig::default(),
            speaker: SpeakerConfig::default(),
            speaker_encoder_enabled: true,
        }
    }
}

impl ModelConfig {
    pub fn hop(&self) -> usize {
        self.l / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.l < 2 || self.l % 2 != 0 {
            return bad(format!("encoder kernel L must be even and >= 2, got {}", self.l));
        }
        if self.n == 0 || self.sa_layers == 0 || self.eeg_channels == 0 || self.ff_mult == 0 {
            return bad("N, P_r, ff_mult and EEG channels must be >= 1".into());
        }
        match self.extractor {
            ExtractorKind::Dprnn => {
                let d = &self.dprnn;
                if d.bottleneck == 0 || d.hidden == 0 || d.blocks == 0 || d.chunk < 2 || d.chunk % 2 != 0 {
                    return bad(format!("invalid dprnn config {d:?} (chunk must be even)"));
                }
            }
            ExtractorKind::Tcn | ExtractorKind::CausalTcn => {
                let t = &self.tcn;
                if t.bottleneck == 0 || t.hidden == 0 || t.repeats == 0 || t.blocks == 0 || t.kernel == 0 {
                    return bad(format!("invalid tcn config {t:?}"));
                }
            }
        }
        let s = &self.speaker;
        if s.kernel == 0 || s.lstm_hidden == 0 {
            return bad(format!("invalid speaker config {s:?}"));
        }
        Ok(())
    }

    /// Past context in encoder frames that the causal TCN sees.
    pub fn tcn_receptive_field(&self) -> usize {
        let t = &self.tcn;
        t.repeats * (t.kernel - 1) * ((1usize << t.blocks) - 1) + 1
    }

    /// Trailing frames each speaker-encoder convolution carries between chunks.
    pub fn speaker_context(&self) -> usize {
        self.speaker.kernel - 1
    }

    /// Tiny configuration used by gradient checks.
    pub fn reduced(extractor: ExtractorKind) -> Self {
        Self {
            n: 8,
            l: 4,
            eeg_channels: 4,
            sa_layers: 1,
            ff_mult: 2,
            extractor,
            dprnn: DprnnConfig {
                bottleneck: 6,
                hidden: 5,
                blocks: 2,
                chunk: 4,
            },
            tcn: TcnConfig {
                bottleneck: 6,
                hidden: 8,
                repeats: 1,
                blocks: 2,
                kernel: 3,
            },
            speaker: SpeakerConfig {
                resnet_blocks: 2,
                kernel: 3,
                lstm_hidden: 5,
            },
            speaker_encoder_enabled: true,
        }
    }

    /// Small configuration sized for single-core training runs.
    pub fn desk(extractor: ExtractorKind) -> Self {
        Self {
            n: 16,
            l: 20,
            eeg_channels: 64,
            sa_layers: 1,
            ff_mult: 2,
            extractor,
            dprnn: DprnnConfig {
                bottleneck: 16,
                hidden: 24,
                blocks: 2,
                chunk: 50,
            },
            tcn: TcnConfig {
                bottleneck: 16,
                hidden: 32,
                repeats: 2,
                blocks: 5,
                kernel: 3,
            },
            speaker: SpeakerConfig {
                resnet_blocks: 3,
                kernel: 3,
                lstm_hidden: 16,
            },
            speaker_encoder_enabled: true,
        }
    }
}
