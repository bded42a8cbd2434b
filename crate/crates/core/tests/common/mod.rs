//! Planted fixture scenes: vertical class stripes aligned to the 16px
//! patch grid, with controllable feature noise.
#![allow(dead_code)]

use corrseg::config::PipelineConfig;
use corrseg::providers::{
    BackboneInfo, BinaryMask, ClipBackbone, ClipVisual, FeatureGrid, FixtureBuilder, Projection, RawMaskProposal,
    SourceTag, TensorArchive,
};
use corrseg::segmentation::WindowPlan;
use image::RgbImage;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const PATCH: usize = 16;
pub const DINO_PATCH: usize = 8;
pub const DIM: usize = 8;
pub const TEMPLATE: &str = "a photo of a {}.";

/// Patch columns `[x0, x1)` of one class.
#[derive(Debug, Clone, Copy)]
pub struct Stripe {
    pub x0: usize,
    pub x1: usize,
    pub class: u8,
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    pub stripes: Vec<Stripe>,
    /// Patch rows `[a, b)` that no proposal covers.
    pub unsegmented_rows: Option<(usize, usize)>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct Noise {
    /// Std of the noise added to each CLIP value (class signal has norm 1).
    pub value: f32,
    /// Std of the class-free CLIP query/key entries.
    pub query: f32,
    /// Std of the noise added to each DINO feature.
    pub dino: f32,
}

pub const CLEAN: Noise = Noise {
    value: 0.0,
    query: 1.0,
    dino: 0.0,
};

pub struct Scene {
    pub spec: SceneSpec,
    pub image: RgbImage,
    pub height: usize,
    pub width: usize,
    /// Planted class per pixel.
    pub labels: Vec<u8>,
    pub proposals: Vec<RawMaskProposal>,
}

impl Scene {
    pub fn class_at_col(&self, col: usize) -> u8 {
        self.spec
            .stripes
            .iter()
            .find(|s| s.x0 <= col && col < s.x1)
            .expect("stripes cover every column")
            .class
    }
}

pub fn class_names(k: usize) -> Vec<String> {
    (0..k).map(|c| format!("class{c}")).collect()
}

/// Stripes of (nearly) equal width over `cols` patch columns.
pub fn even_stripes(cols: usize, classes: &[u8]) -> Vec<Stripe> {
    let n = classes.len();
    (0..n)
        .map(|i| Stripe {
            x0: i * cols / n,
            x1: (i + 1) * cols / n,
            class: classes[i],
        })
        .collect()
}

/// Each stripe is covered by two proposals, top and bottom halves, so that
/// region merging has work to do.
pub fn make_scene(spec: SceneSpec) -> Scene {
    let (h, w) = (spec.rows * PATCH, spec.cols * PATCH);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let image = RgbImage::from_fn(w as u32, h as u32, |_, _| image::Rgb(rng.gen()));
    let mut scene = Scene {
        image,
        height: h,
        width: w,
        labels: Vec::new(),
        proposals: Vec::new(),
        spec,
    };
    scene.labels = (0..h * w).map(|i| scene.class_at_col(i % w / PATCH)).collect();
    let split = scene.spec.rows / 2;
    let skip = scene.spec.unsegmented_rows.unwrap_or((0, 0));
    for s in &scene.spec.stripes {
        for (r0, r1) in [(0, split), (split, scene.spec.rows)] {
            let mut data = vec![false; h * w];
            let mut any = false;
            for r in r0..r1 {
                if skip.0 <= r && r < skip.1 {
                    continue;
                }
                for y in r * PATCH..(r + 1) * PATCH {
                    for x in s.x0 * PATCH..s.x1 * PATCH {
                        data[y * w + x] = true;
                        any = true;
                    }
                }
            }
            if any {
                let mask = BinaryMask::new(h, w, data).unwrap();
                scene.proposals.push(RawMaskProposal::new(mask, 0.95, 0.95).unwrap());
            }
        }
    }
    scene
}

fn unit(c: usize) -> Vec<f32> {
    let mut v = vec![0.0; DIM];
    v[c] = 1.0;
    v
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f32) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal) * std).collect()
}

/// Record everything a provider would return for these scenes under the
/// window layout of `config`. Class `c` embeds as the `c`-th basis vector;
/// CLIP values are that vector plus noise, DINO features likewise, CLIP
/// queries and keys are pure noise.
pub fn build_archive(scenes: &[Scene], noise: Noise, config: &PipelineConfig, num_classes: usize) -> TensorArchive {
    let mut b = FixtureBuilder::new(BackboneInfo {
        clip: ClipBackbone::B16,
        dino_patch: DINO_PATCH,
    });
    b.set_projection(&Projection::identity()).unwrap();
    for scene in scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.spec.seed ^ 0x5eed);
        let (rows, cols) = (scene.spec.rows, scene.spec.cols);
        let n = rows * cols;
        let mut v = Vec::with_capacity(n * DIM);
        for p in 0..n {
            let e = unit(scene.class_at_col(p % cols) as usize);
            let z = normal_vec(&mut rng, DIM, noise.value);
            v.extend(e.iter().zip(&z).map(|(a, b)| a + b));
        }
        let q = normal_vec(&mut rng, n * DIM, noise.query);
        let k = normal_vec(&mut rng, n * DIM, noise.query);
        let v = FeatureGrid::from_vec(v, rows, cols, DIM, SourceTag::ClipV).unwrap();
        let q = FeatureGrid::from_vec(q, rows, cols, DIM, SourceTag::ClipQ).unwrap();
        let k = FeatureGrid::from_vec(k, rows, cols, DIM, SourceTag::ClipK).unwrap();
        let scale = PATCH / DINO_PATCH;
        let (drows, dcols) = (rows * scale, cols * scale);
        let mut d = Vec::with_capacity(drows * dcols * DIM);
        for p in 0..drows * dcols {
            let e = unit(scene.class_at_col(p % dcols / scale) as usize);
            let z = normal_vec(&mut rng, DIM, noise.dino);
            d.extend(e.iter().zip(&z).map(|(a, b)| a + b));
        }
        let dino = FeatureGrid::from_vec(d, drows, dcols, DIM, SourceTag::DinoQk).unwrap();

        b.add_proposals(&scene.image, &scene.proposals).unwrap();
        let plan = WindowPlan::new(scene.height, scene.width, config.window, config.stride).unwrap();
        let wp = config.window / PATCH;
        for &(top, left) in &plan.placements {
            let crop = image::imageops::crop_imm(
                &scene.image,
                left as u32,
                top as u32,
                config.window as u32,
                config.window as u32,
            )
            .to_image();
            let (pt, pl) = (top / PATCH, left / PATCH);
            let clip = ClipVisual {
                q: q.crop(pt, pl, wp, wp).unwrap(),
                k: k.crop(pt, pl, wp, wp).unwrap(),
                v: v.crop(pt, pl, wp, wp).unwrap(),
                proj: Projection::identity(),
            };
            b.add_clip(&crop, &clip).unwrap();
            b.add_dino(
                &crop,
                &dino.crop(pt * scale, pl * scale, wp * scale, wp * scale).unwrap(),
            )
            .unwrap();
        }
    }
    let names = class_names(num_classes);
    let prompts: Vec<String> = names.iter().map(|n| TEMPLATE.replace("{}", n)).collect();
    let mut emb = Array2::zeros((num_classes, DIM));
    for c in 0..num_classes {
        emb[[c, c]] = 1.0;
    }
    b.add_prompts(&prompts, &emb).unwrap();
    b.build().unwrap()
}

/// Pipeline config matching the fixtures: one template, no resizing.
pub fn fixture_config() -> PipelineConfig {
    PipelineConfig {
        provider: "fixture".into(),
        templates: Some(vec![TEMPLATE.into()]),
        resize_short: None,
        ..Default::default()
    }
}

/// Write scenes as a generic-layout dataset; returns the dataset config
/// path.
pub fn write_dataset(dir: &std::path::Path, scenes: &[Scene], num_classes: usize) -> std::path::PathBuf {
    std::fs::create_dir_all(dir.join("images")).unwrap();
    std::fs::create_dir_all(dir.join("labels")).unwrap();
    for (i, s) in scenes.iter().enumerate() {
        s.image.save(dir.join(format!("images/s{i:02}.png"))).unwrap();
        let png = corrseg::imageio::encode_label_png(&s.labels, s.height, s.width).unwrap();
        std::fs::write(dir.join(format!("labels/s{i:02}.png")), png).unwrap();
    }
    let cfg = serde_json::json!({
        "name": "planted",
        "root": ".",
        "classes": class_names(num_classes),
        "resize_short": scenes[0].height.min(scenes[0].width),
    });
    let path = dir.join("dataset.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}
