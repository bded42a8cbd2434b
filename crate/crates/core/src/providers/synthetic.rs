//! Model-free provider computed from image statistics.
//!
//! Visual features are fixed random projections of per-patch color
//! statistics, text embeddings are seeded from a hash of the prompt, and
//! mask proposals are color-connected components. Outputs are deterministic
//! functions of the input, which makes this provider useful for exercising
//! the CLI and the extract/replay path without model weights. Its
//! segmentations carry no semantic meaning.

use image::RgbImage;
use ndarray::Array2;
use petgraph::unionfind::UnionFind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    BackboneInfo, BinaryMask, ClipBackbone, ClipVisual, FeatureGrid, MaskGenerator, Projection, Provider,
    RawMaskProposal, SourceTag, TextEncoder, VisualEncoder,
};
use crate::error::{Error, Result};

const DIM: usize = 32;
const STATS: usize = 7;
const DINO_PATCH: usize = 8;
const MIN_AREA: usize = 64;

#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    backbone: ClipBackbone,
    wq: Array2<f32>,
    wk: Array2<f32>,
    wv: Array2<f32>,
    wd: Array2<f32>,
    proj: Array2<f32>,
}

fn random_matrix(seed: u64, rows: usize, cols: usize) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (rows as f32).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0f32..1.0) * scale * 3.0)
}

impl SyntheticProvider {
    pub fn new(backbone: ClipBackbone) -> Self {
        Self {
            backbone,
            wq: random_matrix(11, STATS, DIM),
            wk: random_matrix(12, STATS, DIM),
            wv: random_matrix(13, STATS, DIM),
            wd: random_matrix(14, STATS, DIM),
            proj: random_matrix(15, DIM, DIM),
        }
    }

    /// Mean and standard deviation of each color channel per patch, plus a
    /// constant term, scaled to roughly unit range.
    fn patch_stats(image: &RgbImage, patch: usize) -> Result<(usize, usize, Array2<f32>)> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let (rows, cols) = (h / patch, w / patch);
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("image {w}x{h} smaller than a {patch}px patch")));
        }
        let mut stats = Array2::zeros((rows * cols, STATS));
        let n = (patch * patch) as f32;
        for r in 0..rows {
            for c in 0..cols {
                let mut sum = [0f32; 3];
                let mut sq = [0f32; 3];
                for y in r * patch..(r + 1) * patch {
                    for x in c * patch..(c + 1) * patch {
                        let px = image.get_pixel(x as u32, y as u32).0;
                        for ch in 0..3 {
                            let v = px[ch] as f32 / 255.0;
                            sum[ch] += v;
                            sq[ch] += v * v;
                        }
                    }
                }
                let mut row = stats.row_mut(r * cols + c);
                for ch in 0..3 {
                    let mean = sum[ch] / n;
                    row[ch] = 2.0 * mean - 1.0;
                    row[3 + ch] = 4.0 * (sq[ch] / n - mean * mean).max(0.0).sqrt();
                }
                row[6] = 1.0;
            }
        }
        Ok((rows, cols, stats))
    }

    fn features(stats: &Array2<f32>, w: &Array2<f32>) -> Array2<f32> {
        stats.dot(w).mapv(f32::tanh)
    }
}

impl VisualEncoder for SyntheticProvider {
    fn backbone(&self) -> BackboneInfo {
        BackboneInfo {
            clip: self.backbone,
            dino_patch: DINO_PATCH,
        }
    }

    fn clip_visual(&self, image: &RgbImage) -> Result<ClipVisual> {
        let (rows, cols, stats) = Self::patch_stats(image, self.backbone.patch_size())?;
        Ok(ClipVisual {
            q: FeatureGrid::new(Self::features(&stats, &self.wq), rows, cols, SourceTag::ClipQ)?,
            k: FeatureGrid::new(Self::features(&stats, &self.wk), rows, cols, SourceTag::ClipK)?,
            v: FeatureGrid::new(Self::features(&stats, &self.wv), rows, cols, SourceTag::ClipV)?,
            proj: Projection::linear(self.proj.clone()),
        })
    }

    fn dino_qk_native(&self, image: &RgbImage) -> Result<FeatureGrid> {
        let (rows, cols, stats) = Self::patch_stats(image, DINO_PATCH)?;
        FeatureGrid::new(Self::features(&stats, &self.wd), rows, cols, SourceTag::DinoQk)
    }
}

impl TextEncoder for SyntheticProvider {
    fn encode_text(&self, prompts: &[String]) -> Result<Array2<f32>> {
        let mut out = Array2::zeros((prompts.len(), DIM));
        for (i, p) in prompts.iter().enumerate() {
            let digest = Sha256::digest(p.as_bytes());
            let mut seed = [0u8; 32];
            seed.copy_from_slice(&digest);
            let mut rng = ChaCha8Rng::from_seed(seed);
            out.row_mut(i).iter_mut().for_each(|v| *v = rng.gen_range(-1.0f32..1.0));
        }
        Ok(out)
    }
}

/// Connected components of the 4-neighbour graph whose edges join pixels
/// differing by at most `tol` in every channel. Returns a component id per
/// pixel.
fn color_components(image: &RgbImage, tol: u8) -> Vec<usize> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut uf = UnionFind::<usize>::new(w * h);
    let close = |a: [u8; 3], b: [u8; 3]| a.iter().zip(b.iter()).all(|(x, y)| x.abs_diff(*y) <= tol);
    for y in 0..h {
        for x in 0..w {
            let p = image.get_pixel(x as u32, y as u32).0;
            if x + 1 < w && close(p, image.get_pixel(x as u32 + 1, y as u32).0) {
                uf.union(y * w + x, y * w + x + 1);
            }
            if y + 1 < h && close(p, image.get_pixel(x as u32, y as u32 + 1).0) {
                uf.union(y * w + x, (y + 1) * w + x);
            }
        }
    }
    (0..w * h).map(|i| uf.find(i)).collect()
}

impl MaskGenerator for SyntheticProvider {
    fn mask_proposals(&self, image: &RgbImage, grid_points: usize, multimask: bool) -> Result<Vec<RawMaskProposal>> {
        if grid_points == 0 {
            return Err(Error::invalid("grid_points must be at least 1"));
        }
        let (w, h) = (image.width() as usize, image.height() as usize);
        let tolerances: &[u8] = if multimask { &[8, 24, 48] } else { &[24] };
        let mut out = Vec::new();
        for &tol in tolerances {
            let comp = color_components(image, tol);
            let tighter = color_components(image, tol - 4);
            let looser = color_components(image, tol + 4);
            let mut seen = std::collections::HashSet::new();
            for gy in 0..grid_points {
                for gx in 0..grid_points {
                    let x = (((gx as f64 + 0.5) / grid_points as f64) * w as f64) as usize;
                    let y = (((gy as f64 + 0.5) / grid_points as f64) * h as f64) as usize;
                    let seed = y.min(h - 1) * w + x.min(w - 1);
                    let id = comp[seed];
                    if !seen.insert(id) {
                        continue;
                    }
                    let data: Vec<bool> = comp.iter().map(|&c| c == id).collect();
                    let area = data.iter().filter(|&&b| b).count();
                    if area < MIN_AREA {
                        continue;
                    }
                    // Components nest as the tolerance grows, so the IoU of
                    // the tighter and looser masks is an area ratio.
                    let inner = tighter.iter().filter(|&&c| c == tighter[seed]).count();
                    let outer = looser.iter().filter(|&&c| c == looser[seed]).count();
                    let stability = inner as f32 / outer as f32;
                    let mut sum = [0f64; 3];
                    let mut sq = [0f64; 3];
                    for (i, _) in data.iter().enumerate().filter(|(_, &b)| b) {
                        let px = image.get_pixel((i % w) as u32, (i / w) as u32).0;
                        for ch in 0..3 {
                            sum[ch] += px[ch] as f64;
                            sq[ch] += (px[ch] as f64).powi(2);
                        }
                    }
                    let spread: f64 = (0..3)
                        .map(|ch| (sq[ch] / area as f64 - (sum[ch] / area as f64).powi(2)).max(0.0).sqrt())
                        .sum::<f64>()
                        / 3.0;
                    let iou = (1.0 / (1.0 + spread / 32.0)) as f32;
                    out.push(RawMaskProposal::new(BinaryMask::new(h, w, data)?, iou, stability)?);
                }
            }
        }
        Ok(out)
    }
}

impl Provider for SyntheticProvider {
    fn name(&self) -> String {
        "synthetic".into()
    }
}
