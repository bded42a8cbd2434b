use image::imageops::FilterType;
use image::RgbImage;
use ndarray::Array2;

use super::{resize_logits, slide_inference, SegmentationMap};
use crate::config::{MaskSource, PipelineConfig};
use crate::correction::{
    default_plural_map, expand_class_names, load_plural_map, mode_correct, ClassExpansion, PluralMap,
};
use crate::error::{Error, Result};
use crate::masks::{proposals_from_labels, threshold_and_flatten, RegionMaskSet};
use crate::providers::{default_templates, embed_classes, ClassEmbeddingTable, Provider};
use crate::resample;

/// Class list with optional background expansion.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    pub classes: Vec<String>,
    pub background_index: Option<usize>,
    /// Replaces the background class when non-empty.
    pub background_subclasses: Vec<String>,
}

impl Vocabulary {
    pub fn new(classes: Vec<String>) -> Self {
        Self {
            classes,
            ..Default::default()
        }
    }
}

/// A ground-truth label map, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
    pub ignore_value: u8,
}

/// Everything produced for one image.
#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    /// Classifier-row labels and logits at the original size, before any
    /// correction.
    pub raw: SegmentationMap,
    /// Evaluation-class labels after folding and mode correction.
    pub labels: Array2<u32>,
    /// Merged regions at the original size, when masks were used.
    pub regions: Option<RegionMaskSet>,
    pub windows: usize,
}

/// `(height, width)` after scaling the shorter side to `short`.
pub fn resized_dims(height: usize, width: usize, short: Option<usize>) -> (usize, usize) {
    match short {
        Some(s) if height.min(width) != s => {
            let scale = s as f64 / height.min(width) as f64;
            let h = ((height as f64 * scale).round() as usize).max(1);
            let w = ((width as f64 * scale).round() as usize).max(1);
            (h, w)
        }
        _ => (height, width),
    }
}

/// The full pipeline bound to a provider, a configuration and a
/// vocabulary.
pub struct Segmenter<'p> {
    provider: &'p dyn Provider,
    config: PipelineConfig,
    expansion: ClassExpansion,
    table: ClassEmbeddingTable,
    classes: Vec<String>,
}

impl<'p> Segmenter<'p> {
    pub fn new(provider: &'p dyn Provider, config: PipelineConfig, vocabulary: &Vocabulary) -> Result<Self> {
        config.validate()?;
        let plurals = if !config.nc {
            PluralMap::new()
        } else if let Some(path) = &config.plural_map {
            load_plural_map(path)?
        } else {
            default_plural_map()
        };
        let expansion = expand_class_names(
            &vocabulary.classes,
            &plurals,
            &vocabulary.background_subclasses,
            vocabulary.background_index,
        )?;
        let templates = config.templates.clone().unwrap_or_else(default_templates);
        let mut table = embed_classes(provider, &expansion.rows, &templates)?;
        table.background_index = vocabulary.background_index;
        table.background_subclasses = vocabulary.background_subclasses.clone();
        Ok(Self {
            provider,
            config,
            expansion,
            table,
            classes: vocabulary.classes.clone(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn table(&self) -> &ClassEmbeddingTable {
        &self.table
    }

    pub fn expansion(&self) -> &ClassExpansion {
        &self.expansion
    }

    /// Segment one image. `gt` is required with the `groundtruth` mask
    /// source and ignored otherwise.
    pub fn segment(&self, image: &RgbImage, gt: Option<&GroundTruth>) -> Result<SegmentOutcome> {
        let cfg = &self.config;
        let (oh, ow) = (image.height() as usize, image.width() as usize);
        if oh == 0 || ow == 0 {
            return Err(Error::invalid("image has zero size"));
        }
        let (rh, rw) = resized_dims(oh, ow, cfg.resize_short);
        let resized = if (rh, rw) == (oh, ow) {
            image.clone()
        } else {
            image::imageops::resize(image, rw as u32, rh as u32, FilterType::Triangle)
        };

        let regions = if cfg.needs_masks() {
            Some(self.region_masks(&resized, gt)?)
        } else {
            None
        };
        let slide = slide_inference(self.provider, &resized, regions.as_ref(), &self.table, cfg)?;
        let raw = if (rh, rw) == (oh, ow) {
            slide.map
        } else {
            SegmentationMap::from_logits(resize_logits(&slide.map.logits, oh, ow))
        };

        let folded = self
            .expansion
            .fold_labels(raw.labels.as_slice().expect("standard layout"));
        let merged = regions.map(|r| {
            let groups = slide.window_groups.iter().flatten().map(|g| g.as_slice());
            r.union_by_origins(groups).resize_nearest(oh, ow)
        });
        let labels = match (&merged, cfg.mc) {
            (Some(m), true) => mode_correct(&folded, m)?,
            _ => folded,
        };
        Ok(SegmentOutcome {
            raw,
            labels: Array2::from_shape_vec((oh, ow), labels).expect("label map shape"),
            regions: merged,
            windows: slide.plan.placements.len(),
        })
    }

    fn region_masks(&self, resized: &RgbImage, gt: Option<&GroundTruth>) -> Result<RegionMaskSet> {
        let cfg = &self.config;
        let (h, w) = (resized.height() as usize, resized.width() as usize);
        let proposals = match cfg.mask_source {
            MaskSource::Sam => self.provider.mask_proposals(resized, cfg.points, cfg.multimask)?,
            MaskSource::Groundtruth => {
                let gt =
                    gt.ok_or_else(|| Error::Config("mask_source `groundtruth` needs a ground-truth label map".into()))?;
                if gt.labels.len() != gt.height * gt.width {
                    return Err(Error::shape(
                        "ground-truth label map size does not match its dimensions",
                    ));
                }
                let labels = resample::nearest(&gt.labels, gt.height, gt.width, h, w);
                proposals_from_labels(&labels, h, w, Some(gt.ignore_value))?
            }
            MaskSource::None => Vec::new(),
        };
        threshold_and_flatten(&proposals, h, w, cfg.pred_iou_thresh, cfg.stability_thresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{ClipBackbone, SyntheticProvider};

    fn two_tone(h: u32, w: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, _| {
            if x < w / 2 {
                image::Rgb([200, 30, 30])
            } else {
                image::Rgb([30, 30, 200])
            }
        })
    }

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            provider: "synthetic".into(),
            window: 64,
            stride: 32,
            resize_short: None,
            points: 8,
            templates: Some(vec!["a photo of a {}.".into()]),
            ..Default::default()
        }
    }

    #[test]
    fn resize_rule() {
        assert_eq!(resized_dims(500, 375, Some(336)), (448, 336));
        assert_eq!(resized_dims(336, 900, Some(336)), (336, 900));
        assert_eq!(resized_dims(10, 20, None), (10, 20));
    }

    #[test]
    fn synthetic_run_is_deterministic() {
        let provider = SyntheticProvider::new(ClipBackbone::B16);
        let vocab = Vocabulary::new(vec!["red".into(), "blue".into(), "green".into()]);
        let seg = Segmenter::new(&provider, small_config(), &vocab).unwrap();
        let img = two_tone(80, 112);
        let a = seg.segment(&img, None).unwrap();
        let b = seg.segment(&img, None).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.labels.dim(), (80, 112));
        assert_eq!(a.windows, 2 * 3);
        assert!(a.labels.iter().all(|&l| l < 3));
        assert!(a.regions.as_ref().unwrap().is_merged());
    }

    #[test]
    fn groundtruth_source_needs_labels() {
        let provider = SyntheticProvider::new(ClipBackbone::B16);
        let cfg = PipelineConfig {
            mask_source: MaskSource::Groundtruth,
            ..small_config()
        };
        let seg = Segmenter::new(&provider, cfg, &Vocabulary::new(vec!["a".into(), "b".into()])).unwrap();
        let img = two_tone(64, 64);
        assert!(matches!(seg.segment(&img, None), Err(Error::Config(_))));
        let gt = GroundTruth {
            height: 64,
            width: 64,
            labels: (0..64 * 64).map(|i| ((i % 64) >= 32) as u8).collect(),
            ignore_value: 255,
        };
        let out = seg.segment(&img, Some(&gt)).unwrap();
        // mode correction over ground-truth regions makes each half uniform
        let left: Vec<u32> = out.labels.column(0).to_vec();
        assert!(left.iter().all(|&l| l == left[0]));
    }
}
