use std::collections::HashMap;
use std::path::Path;

use image::RgbImage;
use ndarray::Array2;
use serde_json::Value;

use super::archive::TensorArchive;
use super::{
    image_digest, BackboneInfo, BinaryMask, ClipBackbone, ClipVisual, FeatureGrid, MaskGenerator, Projection, Provider,
    RawMaskProposal, SourceTag, TextEncoder, VisualEncoder,
};
use crate::error::{Error, Result};

const TEXT_EMBEDDINGS: &str = "text/embeddings";
const PROJECTION: &str = "clip/proj";

fn clip_key(digest: &str, part: &str) -> String {
    format!("clip/{digest}/{part}")
}

fn dino_key(digest: &str) -> String {
    format!("dino/{digest}/qk")
}

fn sam_key(digest: &str, part: &str) -> String {
    format!("sam/{digest}/{part}")
}

/// Accumulates provider outputs into a [`TensorArchive`] laid out the way
/// [`FixtureProvider`] reads it.
#[derive(Debug, Clone)]
pub struct FixtureBuilder {
    archive: TensorArchive,
    prompts: Vec<String>,
    prompt_rows: Vec<Vec<f32>>,
    prompt_index: HashMap<String, usize>,
}

impl FixtureBuilder {
    pub fn new(backbone: BackboneInfo) -> Self {
        let mut archive = TensorArchive::new();
        archive.meta.insert("clip".into(), Value::from(backbone.clip.as_str()));
        archive
            .meta
            .insert("dino_patch".into(), Value::from(backbone.dino_patch));
        Self {
            archive,
            prompts: Vec::new(),
            prompt_rows: Vec::new(),
            prompt_index: HashMap::new(),
        }
    }

    fn put_grid(&mut self, name: String, grid: &FeatureGrid) -> Result<()> {
        self.archive.insert_f32(
            name,
            vec![grid.rows(), grid.cols(), grid.dim()],
            grid.data().iter().copied().collect(),
        )
    }

    pub fn set_projection(&mut self, proj: &Projection) -> Result<()> {
        if proj.is_identity() {
            self.archive.meta.insert("projection".into(), Value::from("identity"));
            return Ok(());
        }
        let w = proj.matrix().ok_or_else(|| {
            Error::Archive("only identity or linear projections can be stored in a fixture archive".into())
        })?;
        self.archive.meta.insert("projection".into(), Value::from("linear"));
        self.archive
            .insert_f32(PROJECTION, vec![w.nrows(), w.ncols()], w.iter().copied().collect())
    }

    pub fn add_clip(&mut self, image: &RgbImage, clip: &ClipVisual) -> Result<()> {
        let d = image_digest(image);
        self.put_grid(clip_key(&d, "q"), &clip.q)?;
        self.put_grid(clip_key(&d, "k"), &clip.k)?;
        self.put_grid(clip_key(&d, "v"), &clip.v)?;
        if !self.archive.meta.contains_key("projection") {
            self.set_projection(&clip.proj)?;
        }
        Ok(())
    }

    pub fn add_dino(&mut self, image: &RgbImage, grid: &FeatureGrid) -> Result<()> {
        self.put_grid(dino_key(&image_digest(image)), grid)
    }

    pub fn add_proposals(&mut self, image: &RgbImage, proposals: &[RawMaskProposal]) -> Result<()> {
        let d = image_digest(image);
        let (h, w) = (image.height() as usize, image.width() as usize);
        let mut masks = Vec::with_capacity(proposals.len() * h * w);
        let mut scores = Vec::with_capacity(proposals.len() * 2);
        for p in proposals {
            if p.mask.height != h || p.mask.width != w {
                return Err(Error::shape("proposal mask does not match image size"));
            }
            masks.extend(p.mask.data.iter().map(|&b| b as u8));
            scores.extend([p.predicted_iou, p.stability_score]);
        }
        self.archive
            .insert_u8(sam_key(&d, "masks"), vec![proposals.len(), h, w], masks)?;
        self.archive
            .insert_f32(sam_key(&d, "scores"), vec![proposals.len(), 2], scores)
    }

    pub fn add_prompts(&mut self, prompts: &[String], embeddings: &Array2<f32>) -> Result<()> {
        if prompts.len() != embeddings.nrows() {
            return Err(Error::shape("prompt count differs from embedding rows"));
        }
        if let Some(first) = self.prompt_rows.first() {
            if first.len() != embeddings.ncols() {
                return Err(Error::shape("prompt embeddings differ in dimension"));
            }
        }
        for (p, row) in prompts.iter().zip(embeddings.rows()) {
            let row: Vec<f32> = row.to_vec();
            match self.prompt_index.get(p) {
                Some(&i) => self.prompt_rows[i] = row,
                None => {
                    self.prompt_index.insert(p.clone(), self.prompts.len());
                    self.prompts.push(p.clone());
                    self.prompt_rows.push(row);
                }
            }
        }
        Ok(())
    }

    pub fn build(mut self) -> Result<TensorArchive> {
        if !self.prompts.is_empty() {
            let dim = self.prompt_rows[0].len();
            self.archive.meta.insert(
                "prompts".into(),
                Value::Array(self.prompts.iter().cloned().map(Value::from).collect()),
            );
            self.archive.insert_f32(
                TEXT_EMBEDDINGS,
                vec![self.prompts.len(), dim],
                self.prompt_rows.into_iter().flatten().collect(),
            )?;
        }
        Ok(self.archive)
    }
}

/// Replays provider outputs stored in a fixture archive, keyed by the
/// content digest of each image it is asked about.
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    archive: TensorArchive,
    backbone: BackboneInfo,
    projection: Projection,
    prompt_index: HashMap<String, usize>,
    origin: String,
}

impl FixtureProvider {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut p = Self::from_archive(TensorArchive::read(dir)?)?;
        p.origin = dir.display().to_string();
        Ok(p)
    }

    pub fn from_archive(archive: TensorArchive) -> Result<Self> {
        let clip: ClipBackbone = archive
            .meta
            .get("clip")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Archive("meta.clip missing".into()))?
            .parse()?;
        let dino_patch = archive
            .meta
            .get("dino_patch")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Archive("meta.dino_patch missing".into()))? as usize;
        let projection = match archive.meta.get("projection").and_then(Value::as_str) {
            None | Some("identity") => Projection::identity(),
            Some("linear") => {
                let (shape, data) = archive.f32(PROJECTION)?;
                if shape.len() != 2 {
                    return Err(Error::Archive("clip/proj must be 2-D".into()));
                }
                Projection::linear(Array2::from_shape_vec((shape[0], shape[1]), data.to_vec()).expect("shape"))
            }
            Some(other) => return Err(Error::Archive(format!("unknown projection kind `{other}`"))),
        };
        let mut prompt_index = HashMap::new();
        if let Some(prompts) = archive.meta.get("prompts").and_then(Value::as_array) {
            for (i, p) in prompts.iter().enumerate() {
                let p = p
                    .as_str()
                    .ok_or_else(|| Error::Archive("meta.prompts must hold strings".into()))?;
                prompt_index.insert(p.to_string(), i);
            }
            let (shape, _) = archive.f32(TEXT_EMBEDDINGS)?;
            if shape.len() != 2 || shape[0] != prompts.len() {
                return Err(Error::Archive("text/embeddings rows differ from meta.prompts".into()));
            }
        }
        Ok(Self {
            archive,
            backbone: BackboneInfo { clip, dino_patch },
            projection,
            prompt_index,
            origin: "<memory>".into(),
        })
    }

    pub fn archive(&self) -> &TensorArchive {
        &self.archive
    }

    fn grid(&self, name: &str, tag: SourceTag) -> Result<FeatureGrid> {
        let (shape, data) = self.archive.f32(name)?;
        if shape.len() != 3 {
            return Err(Error::Archive(format!("`{name}` must be [rows, cols, dim]")));
        }
        FeatureGrid::from_vec(data.to_vec(), shape[0], shape[1], shape[2], tag)
    }
}

impl VisualEncoder for FixtureProvider {
    fn backbone(&self) -> BackboneInfo {
        self.backbone
    }

    fn clip_visual(&self, image: &RgbImage) -> Result<ClipVisual> {
        let d = image_digest(image);
        Ok(ClipVisual {
            q: self.grid(&clip_key(&d, "q"), SourceTag::ClipQ)?,
            k: self.grid(&clip_key(&d, "k"), SourceTag::ClipK)?,
            v: self.grid(&clip_key(&d, "v"), SourceTag::ClipV)?,
            proj: self.projection.clone(),
        })
    }

    fn dino_qk_native(&self, image: &RgbImage) -> Result<FeatureGrid> {
        self.grid(&dino_key(&image_digest(image)), SourceTag::DinoQk)
    }
}

impl TextEncoder for FixtureProvider {
    fn encode_text(&self, prompts: &[String]) -> Result<Array2<f32>> {
        let (shape, data) = self.archive.f32(TEXT_EMBEDDINGS)?;
        let dim = shape[1];
        let mut out = Array2::zeros((prompts.len(), dim));
        for (i, p) in prompts.iter().enumerate() {
            let row = *self
                .prompt_index
                .get(p)
                .ok_or_else(|| Error::FixtureMissing(format!("text prompt `{p}`")))?;
            out.row_mut(i)
                .iter_mut()
                .zip(&data[row * dim..(row + 1) * dim])
                .for_each(|(o, v)| *o = *v);
        }
        Ok(out)
    }
}

impl MaskGenerator for FixtureProvider {
    fn mask_proposals(&self, image: &RgbImage, _grid_points: usize, _multimask: bool) -> Result<Vec<RawMaskProposal>> {
        let d = image_digest(image);
        let (mshape, masks) = self.archive.u8(&sam_key(&d, "masks"))?;
        let (sshape, scores) = self.archive.f32(&sam_key(&d, "scores"))?;
        if mshape.len() != 3 || sshape != [mshape[0], 2] {
            return Err(Error::Archive(format!("malformed proposal tensors for image {d}")));
        }
        let (n, h, w) = (mshape[0], mshape[1], mshape[2]);
        (0..n)
            .map(|i| {
                let mask = BinaryMask::new(
                    h,
                    w,
                    masks[i * h * w..(i + 1) * h * w].iter().map(|&b| b != 0).collect(),
                )?;
                RawMaskProposal::new(mask, scores[2 * i], scores[2 * i + 1])
            })
            .collect()
    }
}

impl Provider for FixtureProvider {
    fn name(&self) -> String {
        format!("fixture:{}", self.origin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::SyntheticProvider;

    fn image() -> RgbImage {
        RgbImage::from_fn(32, 48, |x, y| {
            image::Rgb([(x * 7) as u8, (y * 5) as u8, ((x + y) * 3) as u8])
        })
    }

    #[test]
    fn extract_serialize_load_bit_identical() {
        let live = SyntheticProvider::new(ClipBackbone::B16);
        let img = image();
        let clip = live.clip_visual(&img).unwrap();
        let dino = live.dino_qk_native(&img).unwrap();
        let props = live.mask_proposals(&img, 4, true).unwrap();
        let mut b = FixtureBuilder::new(live.backbone());
        b.add_clip(&img, &clip).unwrap();
        b.add_dino(&img, &dino).unwrap();
        b.add_proposals(&img, &props).unwrap();
        let prompts = vec!["a photo of a cat.".to_string()];
        let emb = live.encode_text(&prompts).unwrap();
        b.add_prompts(&prompts, &emb).unwrap();

        let dir = tempfile::tempdir().unwrap();
        b.build().unwrap().write(dir.path(), false).unwrap();
        let fx = FixtureProvider::open(dir.path()).unwrap();

        let c2 = fx.clip_visual(&img).unwrap();
        for (a, b) in [(&clip.q, &c2.q), (&clip.k, &c2.k), (&clip.v, &c2.v)] {
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(fx.dino_qk_native(&img).unwrap(), dino);
        assert_eq!(fx.mask_proposals(&img, 32, true).unwrap(), props);
        assert_eq!(fx.encode_text(&prompts).unwrap(), emb);
        assert_eq!(fx.backbone(), live.backbone());
    }

    #[test]
    fn stored_proposals_returned_in_order() {
        let img = image();
        let mut props = Vec::new();
        for i in 0..5 {
            let mut data = vec![false; 32 * 48];
            data[i * 10] = true;
            let mask = BinaryMask::new(48, 32, data).unwrap();
            props.push(RawMaskProposal::new(mask, 0.1 * i as f32, 0.5).unwrap());
        }
        let mut b = FixtureBuilder::new(BackboneInfo {
            clip: ClipBackbone::B16,
            dino_patch: 8,
        });
        b.add_proposals(&img, &props).unwrap();
        let fx = FixtureProvider::from_archive(b.build().unwrap()).unwrap();
        assert_eq!(fx.mask_proposals(&img, 32, true).unwrap(), props);

        let mut b = FixtureBuilder::new(BackboneInfo {
            clip: ClipBackbone::B16,
            dino_patch: 8,
        });
        b.add_proposals(&img, &[]).unwrap();
        let fx = FixtureProvider::from_archive(b.build().unwrap()).unwrap();
        assert!(fx.mask_proposals(&img, 32, true).unwrap().is_empty());
    }

    #[test]
    fn missing_entries_reported() {
        let fx = FixtureProvider::from_archive(
            FixtureBuilder::new(BackboneInfo {
                clip: ClipBackbone::B16,
                dino_patch: 8,
            })
            .build()
            .unwrap(),
        )
        .unwrap();
        assert!(matches!(fx.clip_visual(&image()), Err(Error::FixtureMissing(_))));
        assert!(fx.mask_proposals(&image(), 32, true).is_err());
    }
}
