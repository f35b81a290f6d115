//! Frame-by-frame detector interface shared by all models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StmdError};
use crate::ops::OpCounts;
use crate::pixelgrid::Grid2D;
use crate::stmdnet::DirectionField;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    /// Non-negative response map; all-zero during warm-up.
    pub response: Grid2D,
    /// Per-pixel motion direction, for directional models.
    pub directions: Option<DirectionField>,
}

impl DetectorOutput {
    pub fn silent(height: usize, width: usize, directional: bool) -> Self {
        Self {
            response: Grid2D::zeros(height, width),
            directions: directional.then(|| DirectionField::undefined(height, width)),
        }
    }
}

/// A stateful model driven by one sequential frame loop.
pub trait Detector: Send {
    fn kind(&self) -> DetectorKind;

    /// Frames consumed before the first non-trivial output.
    fn warmup_frames(&self) -> usize;

    fn step(&mut self, frame: &Grid2D) -> Result<DetectorOutput>;

    /// Operation counts of the most recent [`Detector::step`].
    fn frame_ops(&self) -> &OpCounts;

    fn reset(&mut self);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetectorKind {
    #[serde(rename = "hr")]
    Hr,
    #[serde(rename = "bl")]
    Bl,
    #[serde(rename = "hrbl")]
    HrBl,
    #[serde(rename = "estmd")]
    Estmd,
    #[serde(rename = "dstmd")]
    Dstmd,
    #[serde(rename = "stmdnet")]
    StmdNet,
    #[serde(rename = "stmdnet-f")]
    StmdNetF,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 7] = [
        Self::Hr,
        Self::Bl,
        Self::HrBl,
        Self::Estmd,
        Self::Dstmd,
        Self::StmdNet,
        Self::StmdNetF,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Hr => "hr",
            Self::Bl => "bl",
            Self::HrBl => "hrbl",
            Self::Estmd => "estmd",
            Self::Dstmd => "dstmd",
            Self::StmdNet => "stmdnet",
            Self::StmdNetF => "stmdnet-f",
        }
    }

    pub fn is_directional(self) -> bool {
        matches!(self, Self::Dstmd | Self::StmdNet | Self::StmdNetF)
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = StmdError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| StmdError::Config {
                key: "detector".into(),
                reason: format!(
                    "unknown detector `{s}` (expected one of hr, bl, hrbl, estmd, dstmd, stmdnet, stmdnet-f)"
                ),
            })
    }
}
