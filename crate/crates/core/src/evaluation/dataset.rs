//! Dataset description and sample enumeration.
//!
//! The canonical layout is a root with an image directory and a directory
//! of 8-bit label maps whose file stems match. Presets map the native
//! layouts of common benchmarks onto it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::correction::bundled_background;
use crate::error::{Error, Result};
use crate::imageio::read_label_png;
use crate::segmentation::{GroundTruth, Vocabulary};

const IMAGE_EXTENSIONS: [&str; 4] = [".jpg", ".jpeg", ".png", ".bmp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Generic,
    Voc,
    Voc20,
    Context,
    CocoObject,
    CocoStuff,
    Ade,
    Cityscapes,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown dataset layout `{s}`")))
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("layout serializes");
        f.write_str(v.as_str().expect("layout is a string"))
    }
}

/// Dataset config file. Unset fields take the layout preset's value.
/// Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: Option<String>,
    pub root: PathBuf,
    pub layout: Option<Layout>,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Appended to a sample id to form the image file name; unset tries
    /// the common image extensions.
    pub image_suffix: Option<String>,
    pub label_suffix: Option<String>,
    /// File listing one sample id per line.
    pub split: Option<PathBuf>,
    pub recursive: Option<bool>,
    pub classes: Option<Vec<String>>,
    /// JSON array of class names.
    pub classes_file: Option<PathBuf>,
    pub background_index: Option<usize>,
    /// Explicit background subclasses.
    pub background_subclasses: Option<Vec<String>>,
    /// Bundled subclass list: `voc`, `context` or `object`.
    pub background_preset: Option<String>,
    pub expand_background: Option<bool>,
    pub ignore_value: Option<u8>,
    /// Map 0 to ignore and shift every other label down by one.
    pub reduce_zero_label: Option<bool>,
    /// Raw label value remapping, applied before `reduce_zero_label`.
    pub label_map: BTreeMap<u8, u8>,
    pub resize_short: Option<usize>,
}

struct Preset {
    images: &'static str,
    labels: &'static str,
    image_suffix: Option<&'static str>,
    label_suffix: &'static str,
    split: Option<&'static str>,
    recursive: bool,
    classes: Option<&'static str>,
    background_index: Option<usize>,
    background: Option<&'static str>,
    reduce_zero_label: bool,
    resize_short: usize,
}

const GENERIC: Preset = Preset {
    images: "images",
    labels: "labels",
    image_suffix: None,
    label_suffix: ".png",
    split: None,
    recursive: false,
    classes: None,
    background_index: None,
    background: None,
    reduce_zero_label: false,
    resize_short: 336,
};

fn preset(layout: Layout) -> Preset {
    match layout {
        Layout::Generic => GENERIC,
        Layout::Voc => Preset {
            images: "JPEGImages",
            labels: "SegmentationClass",
            image_suffix: Some(".jpg"),
            split: Some("ImageSets/Segmentation/val.txt"),
            classes: Some(include_str!("../../data/classes_voc21.json")),
            background_index: Some(0),
            background: Some("voc"),
            ..GENERIC
        },
        Layout::Voc20 => Preset {
            images: "JPEGImages",
            labels: "SegmentationClass",
            image_suffix: Some(".jpg"),
            split: Some("ImageSets/Segmentation/val.txt"),
            classes: Some(include_str!("../../data/classes_voc20.json")),
            reduce_zero_label: true,
            ..GENERIC
        },
        Layout::Context => Preset {
            images: "JPEGImages",
            labels: "SegmentationClassContext",
            image_suffix: Some(".jpg"),
            split: Some("ImageSets/SegmentationContext/val.txt"),
            background_index: Some(0),
            background: Some("context"),
            ..GENERIC
        },
        Layout::CocoObject => Preset {
            images: "images/val2017",
            labels: "annotations/val2017",
            image_suffix: Some(".jpg"),
            label_suffix: "_instanceTrainIds.png",
            background_index: Some(0),
            background: Some("object"),
            ..GENERIC
        },
        Layout::CocoStuff => Preset {
            images: "images/val2017",
            labels: "annotations/val2017",
            image_suffix: Some(".jpg"),
            label_suffix: "_labelTrainIds.png",
            ..GENERIC
        },
        Layout::Ade => Preset {
            images: "images/validation",
            labels: "annotations/validation",
            image_suffix: Some(".jpg"),
            reduce_zero_label: true,
            resize_short: 448,
            ..GENERIC
        },
        Layout::Cityscapes => Preset {
            images: "leftImg8bit/val",
            labels: "gtFine/val",
            image_suffix: Some("_leftImg8bit.png"),
            label_suffix: "_gtFine_labelTrainIds.png",
            recursive: true,
            classes: Some(include_str!("../../data/classes_cityscapes.json")),
            resize_short: 448,
            ..GENERIC
        },
    }
}

/// A dataset with every field resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub root: PathBuf,
    pub images: PathBuf,
    pub labels: PathBuf,
    pub image_suffix: Option<String>,
    pub label_suffix: String,
    pub split: Option<PathBuf>,
    pub recursive: bool,
    pub classes: Vec<String>,
    pub background_index: Option<usize>,
    pub background_subclasses: Vec<String>,
    pub ignore_value: u8,
    pub reduce_zero_label: bool,
    pub label_map: BTreeMap<u8, u8>,
    pub resize_short: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub image: PathBuf,
    pub label: PathBuf,
}

impl DatasetConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: DatasetConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.root = base.join(&cfg.root);
        if let Some(f) = cfg.classes_file.take() {
            cfg.classes_file = Some(base.join(f));
        }
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<Dataset> {
        let layout = self.layout.unwrap_or(Layout::Generic);
        let p = preset(layout);
        let classes: Vec<String> = match (&self.classes, &self.classes_file, p.classes) {
            (Some(c), _, _) => c.clone(),
            (None, Some(f), _) => {
                let text = std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
                serde_json::from_str(&text)?
            }
            (None, None, Some(text)) => serde_json::from_str(text)?,
            (None, None, None) => {
                return Err(Error::Config(format!(
                    "dataset layout `{layout}` has no bundled class list; set `classes` or `classes_file`"
                )))
            }
        };
        if classes.is_empty() || classes.len() > 255 {
            return Err(Error::Config(format!(
                "dataset needs 1..=255 classes, got {}",
                classes.len()
            )));
        }
        let background_index = self.background_index.or(p.background_index);
        if let Some(b) = background_index {
            if b >= classes.len() {
                return Err(Error::Config(format!(
                    "`background_index` {b} outside {} classes",
                    classes.len()
                )));
            }
        }
        let background_subclasses = if !self.expand_background.unwrap_or(true) || background_index.is_none() {
            Vec::new()
        } else if let Some(list) = &self.background_subclasses {
            list.clone()
        } else {
            match self.background_preset.as_deref().or(p.background) {
                Some(name) => bundled_background(name)
                    .ok_or_else(|| Error::Config(format!("unknown `background_preset` `{name}`")))?,
                None => Vec::new(),
            }
        };
        Ok(Dataset {
            name: self.name.clone().unwrap_or_else(|| layout.to_string()),
            images: self.root.join(self.images.as_deref().unwrap_or(Path::new(p.images))),
            labels: self.root.join(self.labels.as_deref().unwrap_or(Path::new(p.labels))),
            image_suffix: self.image_suffix.clone().or(p.image_suffix.map(String::from)),
            label_suffix: self.label_suffix.clone().unwrap_or_else(|| p.label_suffix.into()),
            split: self
                .split
                .as_ref()
                .map(|s| self.root.join(s))
                .or(p.split.map(|s| self.root.join(s))),
            recursive: self.recursive.unwrap_or(p.recursive),
            classes,
            background_index,
            background_subclasses,
            ignore_value: self.ignore_value.unwrap_or(255),
            reduce_zero_label: self.reduce_zero_label.unwrap_or(p.reduce_zero_label),
            label_map: self.label_map.clone(),
            resize_short: self.resize_short.unwrap_or(p.resize_short),
            root: self.root.clone(),
        })
    }
}

impl Dataset {
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            classes: self.classes.clone(),
            background_index: self.background_index,
            background_subclasses: self.background_subclasses.clone(),
        }
    }

    /// Samples sorted by id.
    pub fn samples(&self) -> Result<Vec<Sample>> {
        if !self.root.is_dir() {
            return Err(Error::io(
                &self.root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found"),
            ));
        }
        let mut ids = match &self.split {
            Some(split) => {
                let text = std::fs::read_to_string(split).map_err(|e| Error::io(split, e))?;
                text.lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect()
            }
            None => {
                let mut ids = Vec::new();
                collect_ids(&self.labels, "", &self.label_suffix, self.recursive, &mut ids)?;
                ids
            }
        };
        ids.sort();
        ids.dedup();
        Ok(ids
            .into_iter()
            .map(|id| Sample {
                image: self.image_path(&id),
                label: self.labels.join(format!("{id}{}", self.label_suffix)),
                id,
            })
            .collect())
    }

    fn image_path(&self, id: &str) -> PathBuf {
        match &self.image_suffix {
            Some(s) => self.images.join(format!("{id}{s}")),
            None => IMAGE_EXTENSIONS
                .iter()
                .map(|ext| self.images.join(format!("{id}{ext}")))
                .find(|p| p.is_file())
                .unwrap_or_else(|| self.images.join(format!("{id}{}", IMAGE_EXTENSIONS[0]))),
        }
    }

    /// Read a label map and apply remapping and zero-label reduction.
    pub fn load_ground_truth(&self, path: &Path) -> Result<GroundTruth> {
        let (height, width, mut labels) = read_label_png(path)?;
        let lut = self.lut();
        labels.iter_mut().for_each(|v| *v = lut[*v as usize]);
        Ok(GroundTruth {
            height,
            width,
            labels,
            ignore_value: self.ignore_value,
        })
    }

    fn lut(&self) -> [u8; 256] {
        let mut lut = [0u8; 256];
        for (v, slot) in lut.iter_mut().enumerate() {
            let mut x = *self.label_map.get(&(v as u8)).unwrap_or(&(v as u8));
            if self.reduce_zero_label {
                x = match x {
                    0 => self.ignore_value,
                    x if x == self.ignore_value => x,
                    x => x - 1,
                };
            }
            *slot = x;
        }
        lut
    }
}

fn collect_ids(dir: &Path, prefix: &str, suffix: &str, recursive: bool, out: &mut Vec<String>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let path = entry.path();
        if path.is_dir() {
            if recursive {
                collect_ids(&path, &format!("{prefix}{name}/"), suffix, recursive, out)?;
            }
        } else if let Some(stem) = name.strip_suffix(suffix) {
            out.push(format!("{prefix}{stem}"));
        }
    }
    Ok(())
}
