//! Segmentation head and sliding-window inference.
//!
//! Each window runs the full correlation pipeline on its own patch grid:
//! similarity, scope restriction from the cropped region masks, masked
//! attention over CLIP values, projection, and cosine classification. Patch
//! logits are upsampled bilinearly to window pixels and averaged over
//! overlapping windows.

mod pipeline;

pub use pipeline::{resized_dims, GroundTruth, SegmentOutcome, Segmenter, Vocabulary};

use image::RgbImage;
use ndarray::parallel::prelude::*;
use ndarray::{Array2, Array3, Axis};

use crate::config::PipelineConfig;
use crate::correlation::{masked_attention, semantic_matrix, similarity, source_features, InteractionMask};
use crate::error::{Error, Result};
use crate::masks::{merge_regions, rasterize_to_patches, region_features, RegionMaskSet};
use crate::providers::{
    extract_clip_visual, extract_dino_qk, ClassEmbeddingTable, FeatureGrid, Projection, Provider, SourceTag,
};
use crate::resample;

/// Pixel labels with the logits they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMap {
    /// `(height, width)`, each in `0..K`.
    pub labels: Array2<u32>,
    /// `(K, height, width)`.
    pub logits: Array3<f32>,
    /// Ground-truth value marking unlabeled pixels.
    pub ignore_value: u8,
}

impl SegmentationMap {
    /// Labels by per-pixel argmax; ties go to the lowest class index.
    pub fn from_logits(logits: Array3<f32>) -> Self {
        let (k, h, w) = logits.dim();
        let mut labels = Array2::<u32>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let mut best = 0;
                let mut best_v = logits[[0, y, x]];
                for c in 1..k {
                    let v = logits[[c, y, x]];
                    if v > best_v {
                        best = c;
                        best_v = v;
                    }
                }
                labels[[y, x]] = best as u32;
            }
        }
        Self {
            labels,
            logits,
            ignore_value: 255,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.logits.dim().0
    }

    pub fn height(&self) -> usize {
        self.labels.nrows()
    }

    pub fn width(&self) -> usize {
        self.labels.ncols()
    }
}

/// Window placements over an image, mmseg style: `ceil((H - win) / stride)
/// + 1` rows of windows, the last one clamped to stay in bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub window: usize,
    pub stride: usize,
    /// `(top, left)` in pixels.
    pub placements: Vec<(usize, usize)>,
}

impl WindowPlan {
    /// Images smaller than the window get a single placement along that
    /// axis; the caller pads them.
    pub fn new(height: usize, width: usize, window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 || stride > window {
            return Err(Error::Config(format!(
                "need 0 < stride ({stride}) <= window ({window})"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid("image has zero size"));
        }
        let offsets = |len: usize| -> Vec<usize> {
            let n = len.saturating_sub(window).div_ceil(stride) + 1;
            let last = len.saturating_sub(window);
            (0..n).map(|i| (i * stride).min(last)).collect()
        };
        let tops = offsets(height);
        let lefts = offsets(width);
        let placements = tops.iter().flat_map(|&t| lefts.iter().map(move |&l| (t, l))).collect();
        Ok(Self {
            window,
            stride,
            placements,
        })
    }

    /// Number of windows covering each pixel of a `height x width` image.
    pub fn coverage(&self, height: usize, width: usize) -> Array2<u32> {
        let mut count = Array2::zeros((height, width));
        for &(t, l) in &self.placements {
            for y in t..(t + self.window).min(height) {
                for x in l..(l + self.window).min(width) {
                    count[[y, x]] += 1;
                }
            }
        }
        count
    }
}

/// `proj(attn · V)`, keeping V's grid geometry.
pub fn patch_features(attn: &Array2<f32>, v: &FeatureGrid, proj: &Projection) -> Result<FeatureGrid> {
    let n = v.len();
    if attn.dim() != (n, n) {
        return Err(Error::shape(format!(
            "attention is {}x{}, value grid has {n} patches",
            attn.nrows(),
            attn.ncols()
        )));
    }
    let mixed = FeatureGrid::new(attn.dot(v.data()), v.rows(), v.cols(), SourceTag::ClipV)?;
    proj.apply(&mixed)
}

/// Cosine logits `(N, K)`: L2-normalized patch features against the unit
/// class embeddings. A zero feature row yields zero logits.
pub fn classify(features: &FeatureGrid, table: &ClassEmbeddingTable) -> Result<Array2<f32>> {
    if features.dim() != table.dim() {
        return Err(Error::shape(format!(
            "projected feature dim {} differs from text dim {}",
            features.dim(),
            table.dim()
        )));
    }
    let mut normed = features.data().clone();
    for mut row in normed.axis_iter_mut(Axis(0)) {
        let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| (v as f64 / norm) as f32);
        }
    }
    Ok(normed.dot(&table.embeddings.t()))
}

/// Result of the per-window pipeline.
#[derive(Debug, Clone)]
pub struct WindowOutput {
    pub rows: usize,
    pub cols: usize,
    /// `(N, K)` patch logits.
    pub logits: Array2<f32>,
    /// Source region ids of each merged region in this window.
    pub merged_groups: Vec<Vec<u32>>,
}

/// Run one window. `masks` are pixel-resolution regions cropped to the
/// window, or `None` when no region masks are in use (full attention).
pub fn run_window(
    provider: &dyn Provider,
    window: &RgbImage,
    masks: Option<&RegionMaskSet>,
    table: &ClassEmbeddingTable,
    config: &PipelineConfig,
) -> Result<WindowOutput> {
    let clip = extract_clip_visual(provider, window, config.clip)?;
    let (rows, cols) = (clip.v.rows(), clip.v.cols());
    let n = rows * cols;
    let source = config.effective_similarity();
    let dino = if source.needs_dino() {
        Some(extract_dino_qk(provider, window, Some((rows, cols)))?)
    } else {
        None
    };
    let fs = source_features(source, &clip, dino.as_ref())?;
    let s = similarity(fs.as_ref(), source, n)?;
    let pooled = fs.as_ref().unwrap_or(&clip.v);

    let mut mask = InteractionMask::full(n);
    let mut merged_groups = Vec::new();
    if let Some(m) = masks {
        let raster = rasterize_to_patches(m, rows, cols, config.clip.patch_size())?;
        let feats = region_features(&raster, pooled)?;
        let merged = merge_regions(&raster, &feats, config.eps, config.samples)?;
        merged_groups = (1..=merged.num_regions()).map(|r| merged.origins(r).to_vec()).collect();
        if config.sr {
            mask = semantic_matrix(&merged, &s)?;
        }
    }
    let attn = masked_attention(&s, &mask, config.attention_mode(pooled.dim()))?;
    let f_img = patch_features(&attn, &clip.v, &clip.proj)?;
    let logits = classify(&f_img, table)?;
    Ok(WindowOutput {
        rows,
        cols,
        logits,
        merged_groups,
    })
}

/// Output of [`slide_inference`].
#[derive(Debug, Clone)]
pub struct SlideOutput {
    pub map: SegmentationMap,
    pub plan: WindowPlan,
    /// Merged region groups per window, in placement order.
    pub window_groups: Vec<Vec<Vec<u32>>>,
}

/// Sliding-window inference over an (already resized) image. `regions`
/// is the flattened region set at the image's pixel size. Windows larger
/// than the image are handled by zero padding; padded pixels take no part
/// in the average.
pub fn slide_inference(
    provider: &dyn Provider,
    image: &RgbImage,
    regions: Option<&RegionMaskSet>,
    table: &ClassEmbeddingTable,
    config: &PipelineConfig,
) -> Result<SlideOutput> {
    let (h, w) = (image.height() as usize, image.width() as usize);
    if let Some(r) = regions {
        if (r.height(), r.width()) != (h, w) {
            return Err(Error::shape(format!(
                "region masks are {}x{}, image {h}x{w}",
                r.height(),
                r.width()
            )));
        }
    }
    let win = config.window;
    let plan = WindowPlan::new(h, w, win, config.stride)?;
    let (ph, pw) = (h.max(win), w.max(win));
    let padded_image;
    let padded_regions;
    let (img, reg) = if (ph, pw) != (h, w) {
        let mut canvas = RgbImage::new(pw as u32, ph as u32);
        image::imageops::replace(&mut canvas, image, 0, 0);
        padded_image = canvas;
        padded_regions = regions.map(|r| r.pad_to(ph, pw)).transpose()?;
        (&padded_image, padded_regions.as_ref())
    } else {
        (image, regions)
    };

    let outputs: Vec<WindowOutput> = plan
        .placements
        .par_iter()
        .map(|&(top, left)| {
            let crop = image::imageops::crop_imm(img, left as u32, top as u32, win as u32, win as u32).to_image();
            let masks = reg.map(|r| r.crop(top, left, win, win)).transpose()?;
            run_window(provider, &crop, masks.as_ref(), table, config)
        })
        .collect::<Result<_>>()?;

    let k = table.num_classes();
    let mut sum = Array3::<f32>::zeros((k, h, w));
    // each class plane accumulates its windows in placement order
    sum.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(c, mut plane)| {
            for (out, &(top, left)) in outputs.iter().zip(&plan.placements) {
                let patch: Vec<f32> = out.logits.column(c).to_vec();
                let up = resample::bilinear(&patch, out.rows, out.cols, 1, win, win);
                for y in 0..win.min(h.saturating_sub(top)) {
                    for x in 0..win.min(w.saturating_sub(left)) {
                        plane[[top + y, left + x]] += up[y * win + x];
                    }
                }
            }
        });
    let count = plan.coverage(h, w);
    for mut plane in sum.axis_iter_mut(Axis(0)) {
        plane.zip_mut_with(&count, |v, &n| *v /= n as f32);
    }
    Ok(SlideOutput {
        map: SegmentationMap::from_logits(sum),
        plan,
        window_groups: outputs.into_iter().map(|o| o.merged_groups).collect(),
    })
}

/// Bilinear resize of `(K, h, w)` logits, plane by plane.
pub fn resize_logits(logits: &Array3<f32>, height: usize, width: usize) -> Array3<f32> {
    let (k, h, w) = logits.dim();
    if (h, w) == (height, width) {
        return logits.clone();
    }
    let planes: Vec<Vec<f32>> = (0..k)
        .into_par_iter()
        .map(|c| {
            let plane: Vec<f32> = logits.index_axis(Axis(0), c).iter().copied().collect();
            resample::bilinear(&plane, h, w, 1, height, width)
        })
        .collect();
    Array3::from_shape_vec((k, height, width), planes.concat()).expect("resized logits shape")
}
