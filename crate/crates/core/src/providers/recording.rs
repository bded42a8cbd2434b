use std::sync::Mutex;

use image::RgbImage;
use ndarray::Array2;

use super::archive::TensorArchive;
use super::fixture::FixtureBuilder;
use super::{
    BackboneInfo, ClipVisual, FeatureGrid, MaskGenerator, Provider, RawMaskProposal, TextEncoder, VisualEncoder,
};
use crate::error::Result;

/// Forwards every call to an inner provider and records the outputs so they
/// can be written out as a fixture archive for offline replay.
pub struct RecordingProvider<P> {
    inner: P,
    log: Mutex<FixtureBuilder>,
}

impl<P: Provider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        let log = Mutex::new(FixtureBuilder::new(inner.backbone()));
        Self { inner, log }
    }

    pub fn into_archive(self) -> Result<TensorArchive> {
        self.log.into_inner().expect("recording lock poisoned").build()
    }

    fn record(&self, f: impl FnOnce(&mut FixtureBuilder) -> Result<()>) -> Result<()> {
        f(&mut self.log.lock().expect("recording lock poisoned"))
    }
}

impl<P: Provider> VisualEncoder for RecordingProvider<P> {
    fn backbone(&self) -> BackboneInfo {
        self.inner.backbone()
    }

    fn clip_visual(&self, image: &RgbImage) -> Result<ClipVisual> {
        let out = self.inner.clip_visual(image)?;
        self.record(|b| b.add_clip(image, &out))?;
        Ok(out)
    }

    fn dino_qk_native(&self, image: &RgbImage) -> Result<FeatureGrid> {
        let out = self.inner.dino_qk_native(image)?;
        self.record(|b| b.add_dino(image, &out))?;
        Ok(out)
    }
}

impl<P: Provider> TextEncoder for RecordingProvider<P> {
    fn encode_text(&self, prompts: &[String]) -> Result<Array2<f32>> {
        let out = self.inner.encode_text(prompts)?;
        self.record(|b| b.add_prompts(prompts, &out))?;
        Ok(out)
    }
}

impl<P: Provider> MaskGenerator for RecordingProvider<P> {
    fn mask_proposals(&self, image: &RgbImage, grid_points: usize, multimask: bool) -> Result<Vec<RawMaskProposal>> {
        let out = self.inner.mask_proposals(image, grid_points, multimask)?;
        self.record(|b| b.add_proposals(image, &out))?;
        Ok(out)
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn name(&self) -> String {
        format!("recording({})", self.inner.name())
    }
}
