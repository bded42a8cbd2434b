//! Pipeline configuration. Defaults reproduce the reference setup:
//! thresholds 0.7, a 32x32 prompt grid with multimask output, DBSCAN
//! eps 0.2 / samples 1, temperature 0.25, 336px windows at 112px stride.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::correlation::{AttentionMode, SimilaritySource};
use crate::error::{Error, Result};
use crate::providers::ClipBackbone;

/// Where region masks come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    Sam,
    /// Regions taken from the ground-truth label map (evaluation only).
    Groundtruth,
    None,
}

impl FromStr for MaskSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sam" => Ok(MaskSource::Sam),
            "groundtruth" => Ok(MaskSource::Groundtruth),
            "none" => Ok(MaskSource::None),
            other => Err(Error::Config(format!(
                "unknown mask source `{other}` (sam, groundtruth, none)"
            ))),
        }
    }
}

impl fmt::Display for MaskSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskSource::Sam => "sam",
            MaskSource::Groundtruth => "groundtruth",
            MaskSource::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// `live`, `fixture:<dir>` or `synthetic`.
    pub provider: String,
    pub clip: ClipBackbone,
    /// Similarity source; unset means `dino_qk` with value reconstruction
    /// and `clip_qq` without.
    pub similarity: Option<SimilaritySource>,
    pub mask_source: MaskSource,
    pub pred_iou_thresh: f32,
    pub stability_thresh: f32,
    pub points: usize,
    pub multimask: bool,
    pub eps: f64,
    pub samples: usize,
    pub tau: f32,
    pub window: usize,
    pub stride: usize,
    /// Resize so the shorter side has this length; unset keeps the size.
    pub resize_short: Option<usize>,
    /// Scope reconstruction.
    pub sr: bool,
    /// Value reconstruction.
    pub vr: bool,
    /// Segmentation-map (mode) correction.
    pub mc: bool,
    /// Class-name correction.
    pub nc: bool,
    /// Prompt templates; unset means the 80 ImageNet templates.
    pub templates: Option<Vec<String>>,
    /// JSON file mapping class names to extra variants; unset means the
    /// bundled list.
    pub plural_map: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            provider: "live".into(),
            clip: ClipBackbone::B16,
            similarity: None,
            mask_source: MaskSource::Sam,
            pred_iou_thresh: 0.7,
            stability_thresh: 0.7,
            points: 32,
            multimask: true,
            eps: 0.2,
            samples: 1,
            tau: 0.25,
            window: 336,
            stride: 112,
            resize_short: Some(336),
            sr: true,
            vr: true,
            mc: true,
            nc: true,
            templates: None,
            plural_map: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The comparison baseline: query-query attention with every
    /// component switched off.
    pub fn baseline(&self) -> Self {
        Self {
            similarity: None,
            sr: false,
            vr: false,
            mc: false,
            nc: false,
            ..self.clone()
        }
    }

    pub fn effective_similarity(&self) -> SimilaritySource {
        self.similarity.unwrap_or(if self.vr {
            SimilaritySource::DinoQk
        } else {
            SimilaritySource::ClipQq
        })
    }

    /// Temperature scaling with value reconstruction, `1/sqrt(d)` without.
    pub fn attention_mode(&self, feature_dim: usize) -> AttentionMode {
        if self.vr {
            AttentionMode::ValueRecon { tau: self.tau }
        } else {
            AttentionMode::ScopeOnly { d: feature_dim }
        }
    }

    /// Region masks are needed for scope reconstruction or mode correction.
    pub fn needs_masks(&self) -> bool {
        (self.sr || self.mc) && self.mask_source != MaskSource::None
    }

    pub fn validate(&self) -> Result<()> {
        let patch = self.clip.patch_size();
        let bad = |m: String| Err(Error::Config(m));
        if self.window == 0 || !self.window.is_multiple_of(patch) {
            return bad(format!(
                "`window` {} must be a positive multiple of patch size {patch}",
                self.window
            ));
        }
        if self.stride == 0 || self.stride > self.window {
            return bad(format!(
                "`stride` {} must be in 1..=window ({})",
                self.stride, self.window
            ));
        }
        if !(0.0..=1.0).contains(&self.pred_iou_thresh) {
            return bad(format!("`pred_iou_thresh` {} outside [0,1]", self.pred_iou_thresh));
        }
        if !(0.0..=1.0).contains(&self.stability_thresh) {
            return bad(format!("`stability_thresh` {} outside [0,1]", self.stability_thresh));
        }
        if self.points == 0 {
            return bad("`points` must be at least 1".into());
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad(format!("`eps` {} must be finite and >= 0", self.eps));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("`tau` {} must be > 0", self.tau));
        }
        if self.resize_short == Some(0) {
            return bad("`resize_short` must be positive".into());
        }
        if let Some(t) = &self.templates {
            if t.is_empty() {
                return bad("`templates` must not be empty".into());
            }
        }
        Ok(())
    }

    /// Short `sr+vr+mc+nc` style summary of enabled components.
    pub fn components(&self) -> String {
        let parts: Vec<&str> = [("sr", self.sr), ("vr", self.vr), ("mc", self.mc), ("nc", self.nc)]
            .iter()
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect();
        if parts.is_empty() {
            "baseline".into()
        } else {
            parts.join("+")
        }
    }
}
