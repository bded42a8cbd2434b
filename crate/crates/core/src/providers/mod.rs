//! Contracts for obtaining visual features, text embeddings and raw region
//! masks.
//!
//! Every downstream module consumes only the types defined here, so a
//! model-backed provider and the file-backed [`FixtureProvider`] are
//! interchangeable. Providers are read-only after construction and may be
//! shared across threads.

mod archive;
mod fixture;
mod recording;
mod synthetic;
mod templates;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use image::RgbImage;
use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::resample;

pub use archive::{validate_manifest, ManifestEntry, Tensor, TensorArchive, TensorData, ARCHIVE_FORMAT, MANIFEST_FILE};
pub use fixture::{FixtureBuilder, FixtureProvider};
pub use recording::RecordingProvider;
pub use synthetic::SyntheticProvider;
pub use templates::{default_templates, IMAGENET_TEMPLATES};

/// Which tensor a [`FeatureGrid`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    ClipQ,
    ClipK,
    ClipV,
    DinoQ,
    DinoK,
    DinoQk,
    /// Output of a projection into the text embedding space.
    Projected,
}

/// Patch-indexed dense features: `rows * cols` rows of `dim` values,
/// row-major over the patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    data: Array2<f32>,
    rows: usize,
    cols: usize,
    tag: SourceTag,
}

impl FeatureGrid {
    pub fn new(data: Array2<f32>, rows: usize, cols: usize, tag: SourceTag) -> Result<Self> {
        if data.nrows() != rows * cols {
            return Err(Error::shape(format!(
                "feature grid {rows}x{cols} needs {} rows, got {}",
                rows * cols,
                data.nrows()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{tag:?} feature grid")));
        }
        Ok(Self { data, rows, cols, tag })
    }

    pub fn from_vec(values: Vec<f32>, rows: usize, cols: usize, dim: usize, tag: SourceTag) -> Result<Self> {
        let data = Array2::from_shape_vec((rows * cols, dim), values)
            .map_err(|e| Error::shape(format!("feature grid: {e}")))?;
        Self::new(data, rows, cols, tag)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of patches.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn tag(&self) -> SourceTag {
        self.tag
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f32> {
        self.data
    }

    pub fn row(&self, patch: usize) -> ArrayView1<'_, f32> {
        self.data.row(patch)
    }

    pub fn with_tag(mut self, tag: SourceTag) -> Self {
        self.tag = tag;
        self
    }

    /// Elementwise sum of two grids of identical geometry.
    pub fn add(&self, other: &FeatureGrid, tag: SourceTag) -> Result<FeatureGrid> {
        if self.rows != other.rows || self.cols != other.cols || self.dim() != other.dim() {
            return Err(Error::shape(format!(
                "cannot add {}x{}x{} and {}x{}x{} grids",
                self.rows,
                self.cols,
                self.dim(),
                other.rows,
                other.cols,
                other.dim()
            )));
        }
        FeatureGrid::new(&self.data + &other.data, self.rows, self.cols, tag)
    }

    /// Bilinear resampling in grid space, per channel.
    pub fn resample(&self, rows: usize, cols: usize) -> FeatureGrid {
        if rows == self.rows && cols == self.cols {
            return self.clone();
        }
        let flat: Vec<f32> = self.data.iter().copied().collect();
        let out = resample::bilinear(&flat, self.rows, self.cols, self.dim(), rows, cols);
        let data = Array2::from_shape_vec((rows * cols, self.dim()), out).expect("resample shape");
        FeatureGrid {
            data,
            rows,
            cols,
            tag: self.tag,
        }
    }

    /// Sub-grid of `rows x cols` patches starting at patch `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, rows: usize, cols: usize) -> Result<FeatureGrid> {
        if top + rows > self.rows || left + cols > self.cols {
            return Err(Error::shape(format!(
                "crop {rows}x{cols}@({top},{left}) exceeds {}x{} grid",
                self.rows, self.cols
            )));
        }
        let dim = self.dim();
        let mut data = Array2::zeros((rows * cols, dim));
        for r in 0..rows {
            for c in 0..cols {
                data.row_mut(r * cols + c)
                    .assign(&self.data.row((top + r) * self.cols + left + c));
            }
        }
        FeatureGrid::new(data, rows, cols, self.tag)
    }
}

/// Linear map from the visual token space into the text embedding space,
/// composed of the attention output projection and the image projection.
#[derive(Clone)]
pub struct Projection {
    kind: ProjectionKind,
}

type ProjectionFn = dyn Fn(&Array2<f32>) -> Array2<f32> + Send + Sync;

#[derive(Clone)]
enum ProjectionKind {
    Identity,
    /// `(in_dim, out_dim)`; applied as `x · W`.
    Linear(Arc<Array2<f32>>),
    Custom(Arc<ProjectionFn>),
}

impl fmt::Debug for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ProjectionKind::Identity => write!(f, "Projection::Identity"),
            ProjectionKind::Linear(w) => write!(f, "Projection::Linear({}x{})", w.nrows(), w.ncols()),
            ProjectionKind::Custom(_) => write!(f, "Projection::Custom"),
        }
    }
}

impl Projection {
    pub fn identity() -> Self {
        Self {
            kind: ProjectionKind::Identity,
        }
    }

    pub fn linear(weight: Array2<f32>) -> Self {
        Self {
            kind: ProjectionKind::Linear(Arc::new(weight)),
        }
    }

    pub fn from_fn(f: impl Fn(&Array2<f32>) -> Array2<f32> + Send + Sync + 'static) -> Self {
        Self {
            kind: ProjectionKind::Custom(Arc::new(f)),
        }
    }

    /// The weight matrix, when the projection is a plain linear map.
    pub fn matrix(&self) -> Option<&Array2<f32>> {
        match &self.kind {
            ProjectionKind::Linear(w) => Some(w),
            _ => None,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, ProjectionKind::Identity)
    }

    pub fn apply(&self, grid: &FeatureGrid) -> Result<FeatureGrid> {
        let out = match &self.kind {
            ProjectionKind::Identity => grid.data().clone(),
            ProjectionKind::Linear(w) => {
                if w.nrows() != grid.dim() {
                    return Err(Error::shape(format!(
                        "projection expects dim {}, grid has {}",
                        w.nrows(),
                        grid.dim()
                    )));
                }
                grid.data().dot(w.as_ref())
            }
            ProjectionKind::Custom(f) => f(grid.data()),
        };
        FeatureGrid::new(out, grid.rows(), grid.cols(), SourceTag::Projected)
    }
}

/// Final-layer CLIP tensors for one image: pre-attention query, key and
/// value grids (class token excluded) plus the projection into text space.
#[derive(Debug, Clone)]
pub struct ClipVisual {
    pub q: FeatureGrid,
    pub k: FeatureGrid,
    pub v: FeatureGrid,
    pub proj: Projection,
}

/// K unit-norm class embeddings used as classifier weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddingTable {
    pub embeddings: Array2<f32>,
    pub class_names: Vec<String>,
    pub name_variants: Vec<Vec<String>>,
    pub background_index: Option<usize>,
    pub background_subclasses: Vec<String>,
}

impl ClassEmbeddingTable {
    pub fn new(embeddings: Array2<f32>, name_variants: Vec<Vec<String>>) -> Result<Self> {
        if embeddings.nrows() == 0 {
            return Err(Error::invalid("class embedding table needs at least one class"));
        }
        if embeddings.nrows() != name_variants.len() {
            return Err(Error::shape(format!(
                "{} embeddings for {} classes",
                embeddings.nrows(),
                name_variants.len()
            )));
        }
        for (i, row) in embeddings.axis_iter(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > 1e-5 {
                return Err(Error::invalid(format!("class embedding {i} has norm {norm}")));
            }
        }
        let mut class_names = Vec::with_capacity(name_variants.len());
        for (i, variants) in name_variants.iter().enumerate() {
            let first = variants
                .first()
                .ok_or_else(|| Error::invalid(format!("class {i} has no name variants")))?;
            class_names.push(first.clone());
        }
        Ok(Self {
            embeddings,
            class_names,
            name_variants,
            background_index: None,
            background_subclasses: Vec::new(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }
}

/// Binary pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "mask {height}x{width} needs {} pixels, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }
}

/// One mask emitted by the class-agnostic mask generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMaskProposal {
    pub mask: BinaryMask,
    pub predicted_iou: f32,
    pub stability_score: f32,
}

impl RawMaskProposal {
    pub fn new(mask: BinaryMask, predicted_iou: f32, stability_score: f32) -> Result<Self> {
        if mask.area() == 0 {
            return Err(Error::invalid("mask proposal is empty"));
        }
        for (name, s) in [("predicted_iou", predicted_iou), ("stability_score", stability_score)] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::invalid(format!("{name} {s} outside [0,1]")));
            }
        }
        Ok(Self {
            mask,
            predicted_iou,
            stability_score,
        })
    }
}

/// CLIP image encoder variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipBackbone {
    B16,
    L14,
    H14,
}

impl ClipBackbone {
    pub fn patch_size(self) -> usize {
        match self {
            ClipBackbone::B16 => 16,
            ClipBackbone::L14 | ClipBackbone::H14 => 14,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClipBackbone::B16 => "b16",
            ClipBackbone::L14 => "l14",
            ClipBackbone::H14 => "h14",
        }
    }
}

impl fmt::Display for ClipBackbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClipBackbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "b16" => Ok(ClipBackbone::B16),
            "l14" => Ok(ClipBackbone::L14),
            "h14" => Ok(ClipBackbone::H14),
            other => Err(Error::Config(format!(
                "unknown clip backbone `{other}` (b16, l14, h14)"
            ))),
        }
    }
}

/// Backbone geometry a provider was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneInfo {
    pub clip: ClipBackbone,
    pub dino_patch: usize,
}

pub trait VisualEncoder: Send + Sync {
    fn backbone(&self) -> BackboneInfo;

    /// Final-layer pre-attention q/k/v of the CLIP image encoder.
    fn clip_visual(&self, image: &RgbImage) -> Result<ClipVisual>;

    /// `Q_D + K_D` of DINO's final layer on DINO's native patch grid.
    fn dino_qk_native(&self, image: &RgbImage) -> Result<FeatureGrid>;
}

pub trait TextEncoder: Send + Sync {
    /// One embedding row per prompt string.
    fn encode_text(&self, prompts: &[String]) -> Result<Array2<f32>>;
}

pub trait MaskGenerator: Send + Sync {
    fn mask_proposals(&self, image: &RgbImage, grid_points: usize, multimask: bool) -> Result<Vec<RawMaskProposal>>;
}

/// A complete provider: visual features, text embeddings and mask proposals.
pub trait Provider: VisualEncoder + TextEncoder + MaskGenerator {
    fn name(&self) -> String;
}

impl<T: VisualEncoder + ?Sized> VisualEncoder for Box<T> {
    fn backbone(&self) -> BackboneInfo {
        (**self).backbone()
    }

    fn clip_visual(&self, image: &RgbImage) -> Result<ClipVisual> {
        (**self).clip_visual(image)
    }

    fn dino_qk_native(&self, image: &RgbImage) -> Result<FeatureGrid> {
        (**self).dino_qk_native(image)
    }
}

impl<T: TextEncoder + ?Sized> TextEncoder for Box<T> {
    fn encode_text(&self, prompts: &[String]) -> Result<Array2<f32>> {
        (**self).encode_text(prompts)
    }
}

impl<T: MaskGenerator + ?Sized> MaskGenerator for Box<T> {
    fn mask_proposals(&self, image: &RgbImage, grid_points: usize, multimask: bool) -> Result<Vec<RawMaskProposal>> {
        (**self).mask_proposals(image, grid_points, multimask)
    }
}

impl<T: Provider + ?Sized> Provider for Box<T> {
    fn name(&self) -> String {
        (**self).name()
    }
}

/// Extract CLIP tensors, checking image geometry against the configured
/// backbone.
pub fn extract_clip_visual(provider: &dyn Provider, image: &RgbImage, backbone: ClipBackbone) -> Result<ClipVisual> {
    let patch = backbone.patch_size();
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w < patch || h < patch {
        return Err(Error::invalid(format!(
            "image {w}x{h} is smaller than one {patch}px patch"
        )));
    }
    if w % patch != 0 || h % patch != 0 {
        return Err(Error::invalid(format!(
            "image {w}x{h} is not divisible by patch size {patch}"
        )));
    }
    let info = provider.backbone();
    if info.clip != backbone {
        return Err(Error::Config(format!(
            "provider serves clip backbone {} but config `clip` is {}",
            info.clip, backbone
        )));
    }
    let out = provider.clip_visual(image)?;
    let (rows, cols) = (h / patch, w / patch);
    for g in [&out.q, &out.k, &out.v] {
        if g.rows() != rows || g.cols() != cols {
            return Err(Error::shape(format!(
                "provider returned {}x{} grid for a {rows}x{cols} patch layout",
                g.rows(),
                g.cols()
            )));
        }
    }
    Ok(out)
}

/// `Q_D + K_D`, interpolated to `target` when DINO's grid differs from CLIP's.
pub fn extract_dino_qk(
    provider: &dyn Provider,
    image: &RgbImage,
    target: Option<(usize, usize)>,
) -> Result<FeatureGrid> {
    let native = provider.dino_qk_native(image)?;
    match target {
        Some((rows, cols)) => Ok(native.resample(rows, cols).with_tag(SourceTag::DinoQk)),
        None => {
            let (rows, cols) = (native.rows(), native.cols());
            let patch = provider.backbone().clip.patch_size();
            let expect = (image.height() as usize / patch, image.width() as usize / patch);
            if (rows, cols) != expect {
                return Err(Error::Config(format!(
                    "dino grid {rows}x{cols} differs from clip grid {}x{} and no target shape is set",
                    expect.0, expect.1
                )));
            }
            Ok(native.with_tag(SourceTag::DinoQk))
        }
    }
}

/// Embed every `template x variant` prompt per class, mean-pool, and
/// L2-normalize once.
pub fn embed_classes(
    encoder: &dyn TextEncoder,
    name_variants: &[Vec<String>],
    templates: &[String],
) -> Result<ClassEmbeddingTable> {
    if templates.is_empty() {
        return Err(Error::invalid("at least one prompt template is required"));
    }
    if let Some(t) = templates.iter().find(|t| t.matches("{}").count() != 1) {
        return Err(Error::invalid(format!(
            "template `{t}` must contain exactly one `{{}}`"
        )));
    }
    if name_variants.is_empty() {
        return Err(Error::invalid("at least one class is required"));
    }
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(name_variants.len());
    for (i, variants) in name_variants.iter().enumerate() {
        if variants.is_empty() {
            return Err(Error::invalid(format!("class {i} has an empty variant list")));
        }
        let prompts: Vec<String> = variants
            .iter()
            .flat_map(|name| templates.iter().map(move |t| t.replacen("{}", name, 1)))
            .collect();
        let emb = encoder.encode_text(&prompts)?;
        if emb.nrows() != prompts.len() {
            return Err(Error::shape(format!(
                "text encoder returned {} rows for {} prompts",
                emb.nrows(),
                prompts.len()
            )));
        }
        // f64 accumulation keeps the mean independent of prompt order to
        // well below f32 resolution.
        let mut mean = vec![0.0f64; emb.ncols()];
        for row in emb.axis_iter(Axis(0)) {
            for (m, v) in mean.iter_mut().zip(row.iter()) {
                *m += *v as f64;
            }
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm {
                what: format!("mean text embedding of class `{}`", variants[0]),
                row: i,
            });
        }
        rows.push(mean.iter().map(|v| (v / norm) as f32).collect());
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::shape("text embeddings differ in dimension"));
    }
    let flat: Vec<f32> = rows.into_iter().flatten().collect();
    let embeddings = Array2::from_shape_vec((name_variants.len(), dim), flat).expect("table shape");
    ClassEmbeddingTable::new(embeddings, name_variants.to_vec())
}

/// Content digest used to key per-image fixture entries.
pub fn image_digest(image: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update((image.width() as u64).to_le_bytes());
    h.update((image.height() as u64).to_le_bytes());
    h.update(image.as_raw());
    hex::encode(&h.finalize()[..16])
}

/// Build a provider from a `provider` config value: `live`,
/// `fixture:<dir>` or `synthetic`.
pub fn resolve_provider(spec: &str, backbone: ClipBackbone) -> Result<Box<dyn Provider>> {
    if let Some(path) = spec.strip_prefix("fixture:") {
        let p = FixtureProvider::open(path)?;
        if p.backbone().clip != backbone {
            return Err(Error::Config(format!(
                "fixture archive {path} was extracted with clip backbone {} but config `clip` is {backbone}",
                p.backbone().clip
            )));
        }
        return Ok(Box::new(p));
    }
    match spec {
        "synthetic" => Ok(Box::new(SyntheticProvider::new(backbone))),
        "live" => Err(Error::ProviderMissing(
            "no model backend is compiled into this build; set config key `provider` \
             (flag --provider) to `fixture:<dir>` with an extracted archive, or to `synthetic`"
                .into(),
        )),
        other => Err(Error::Config(format!(
            "unknown provider `{other}` for config key `provider` (live, fixture:<dir>, synthetic)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct OneHotText {
        dim: usize,
    }

    impl TextEncoder for OneHotText {
        fn encode_text(&self, prompts: &[String]) -> Result<Array2<f32>> {
            let mut out = Array2::zeros((prompts.len(), self.dim));
            for (i, p) in prompts.iter().enumerate() {
                let hot = if p.contains("people") {
                    1
                } else if p.contains("person") {
                    0
                } else {
                    2
                };
                out[[i, hot]] = 1.0;
            }
            Ok(out)
        }
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn grid_shape_from_image_size() {
        let p = SyntheticProvider::new(ClipBackbone::B16);
        let img = RgbImage::new(336, 336);
        let out = extract_clip_visual(&p, &img, ClipBackbone::B16).unwrap();
        assert_eq!((out.q.rows(), out.q.cols(), out.q.len()), (21, 21, 441));
        let img = RgbImage::new(336, 448);
        let out = extract_clip_visual(&p, &img, ClipBackbone::B16).unwrap();
        assert_eq!((out.v.rows(), out.v.cols()), (28, 21));
    }

    #[test]
    fn clip_rejects_small_and_mismatched() {
        let p = SyntheticProvider::new(ClipBackbone::B16);
        assert!(extract_clip_visual(&p, &RgbImage::new(8, 8), ClipBackbone::B16).is_err());
        assert!(extract_clip_visual(&p, &RgbImage::new(336, 336), ClipBackbone::L14).is_err());
    }

    #[test]
    fn dino_interpolated_to_clip_grid() {
        let p = SyntheticProvider::new(ClipBackbone::B16);
        let img = RgbImage::new(336, 336);
        let native = p.dino_qk_native(&img).unwrap();
        assert_eq!((native.rows(), native.cols()), (42, 42));
        let out = extract_dino_qk(&p, &img, Some((21, 21))).unwrap();
        assert_eq!((out.rows(), out.cols()), (21, 21));
        assert_eq!(out.tag(), SourceTag::DinoQk);
        assert!(extract_dino_qk(&p, &img, None).is_err());
    }

    #[test]
    fn resample_identity_when_same_shape() {
        let g = FeatureGrid::from_vec((0..12).map(|v| v as f32).collect(), 2, 3, 2, SourceTag::DinoQk).unwrap();
        assert_eq!(g.resample(2, 3), g);
    }

    #[test]
    fn one_hot_variants_average() {
        let enc = OneHotText { dim: 3 };
        let table = embed_classes(&enc, &[s(&["person", "people"])], &s(&["a photo of a {}.", "the {}."])).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert!((table.embeddings[[0, 0]] - h).abs() < 1e-6);
        assert!((table.embeddings[[0, 1]] - h).abs() < 1e-6);
        assert_eq!(table.embeddings[[0, 2]], 0.0);
        assert_eq!(table.class_names, s(&["person"]));
    }

    #[test]
    fn single_prompt_is_normalized() {
        struct Fixed;
        impl TextEncoder for Fixed {
            fn encode_text(&self, p: &[String]) -> Result<Array2<f32>> {
                assert_eq!(p.len(), 1);
                Ok(array![[3.0, 4.0]])
            }
        }
        let t = embed_classes(&Fixed, &[s(&["cat"])], &s(&["{}"])).unwrap();
        assert_eq!(t.embeddings, array![[0.6, 0.8]]);
    }

    #[test]
    fn embed_rejects_bad_inputs() {
        let enc = OneHotText { dim: 3 };
        assert!(embed_classes(&enc, &[vec![]], &s(&["{}"])).is_err());
        assert!(embed_classes(&enc, &[s(&["a"])], &[]).is_err());
        assert!(embed_classes(&enc, &[s(&["a"])], &s(&["no placeholder"])).is_err());
    }

    #[test]
    fn table_validates_unit_norm() {
        assert!(ClassEmbeddingTable::new(array![[1.0, 1.0]], vec![s(&["a"])]).is_err());
        assert!(ClassEmbeddingTable::new(array![[1.0, 0.0]], vec![s(&["a"])]).is_ok());
    }

    #[test]
    fn proposal_validation() {
        let empty = BinaryMask::new(2, 2, vec![false; 4]).unwrap();
        assert!(RawMaskProposal::new(empty, 0.9, 0.9).is_err());
        let m = BinaryMask::new(2, 2, vec![true, false, false, false]).unwrap();
        assert!(RawMaskProposal::new(m.clone(), 1.2, 0.9).is_err());
        assert!(RawMaskProposal::new(m, 0.9, 0.9).is_ok());
    }

    #[test]
    fn live_provider_is_reported_missing() {
        match resolve_provider("live", ClipBackbone::B16) {
            Err(Error::ProviderMissing(msg)) => assert!(msg.contains("`provider`")),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("live provider should be missing"),
        }
    }

    #[test]
    fn linear_projection_applies_matrix() {
        let g = FeatureGrid::from_vec(vec![1.0, 2.0], 1, 1, 2, SourceTag::ClipV).unwrap();
        let p = Projection::linear(array![[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]);
        let out = p.apply(&g).unwrap();
        assert_eq!(out.data(), &array![[1.0, 2.0, 3.0]]);
        assert!(Projection::identity().apply(&g).unwrap().data() == g.data());
    }
}
