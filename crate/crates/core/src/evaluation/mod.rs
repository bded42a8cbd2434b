//! mIoU accounting and the benchmark / ablation runner.

mod dataset;

pub use dataset::{Dataset, DatasetConfig, Layout, Sample};

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::imageio::read_rgb;
use crate::providers::Provider;
use crate::segmentation::Segmenter;

/// Per-class intersection and union pixel counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionAccumulator {
    intersection: Vec<u64>,
    union: Vec<u64>,
    seen: Vec<bool>,
}

impl ConfusionAccumulator {
    pub fn new(num_classes: usize) -> Self {
        Self {
            intersection: vec![0; num_classes],
            union: vec![0; num_classes],
            seen: vec![false; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.union.len()
    }

    pub fn intersection(&self) -> &[u64] {
        &self.intersection
    }

    pub fn union(&self) -> &[u64] {
        &self.union
    }

    pub fn seen(&self) -> &[bool] {
        &self.seen
    }

    /// Add one prediction. Pixels whose ground truth is `ignore` are
    /// skipped.
    pub fn update(&mut self, pred: &[u32], gt: &[u8], ignore: u8) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape(format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        let k = self.num_classes();
        let mut inter = vec![0u64; k];
        let mut p_count = vec![0u64; k];
        let mut g_count = vec![0u64; k];
        for (&p, &g) in pred.iter().zip(gt) {
            if g == ignore {
                continue;
            }
            let (p, g) = (p as usize, g as usize);
            if p >= k || g >= k {
                return Err(Error::invalid(format!(
                    "label {} outside {k} classes",
                    if p >= k { p } else { g }
                )));
            }
            p_count[p] += 1;
            g_count[g] += 1;
            if p == g {
                inter[p] += 1;
            }
        }
        for c in 0..k {
            self.intersection[c] += inter[c];
            self.union[c] += p_count[c] + g_count[c] - inter[c];
            self.seen[c] |= self.union[c] > 0;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionAccumulator) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return Err(Error::shape("accumulators differ in class count"));
        }
        for c in 0..self.num_classes() {
            self.intersection[c] += other.intersection[c];
            self.union[c] += other.union[c];
            self.seen[c] |= other.seen[c];
        }
        Ok(())
    }

    /// IoU of class `k`, or `None` when it never occurred.
    pub fn iou(&self, k: usize) -> Option<f64> {
        (self.union[k] > 0).then(|| self.intersection[k] as f64 / self.union[k] as f64)
    }

    /// Mean IoU over classes with a non-empty union.
    pub fn miou(&self) -> Result<f64> {
        let ious: Vec<f64> = (0..self.num_classes()).filter_map(|k| self.iou(k)).collect();
        if ious.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub name: String,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub id: String,
    pub error: String,
}

/// Benchmark result. Wall time is kept out of the JSON so identical runs
/// serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub dataset: String,
    pub components: String,
    pub provider: String,
    pub samples_evaluated: usize,
    pub samples_failed: usize,
    pub failures: Vec<SampleFailure>,
    pub per_class: Vec<ClassIou>,
    pub miou: f64,
    pub config: PipelineConfig,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let width = self.per_class.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let mut t = String::new();
        let _ = writeln!(
            t,
            "dataset: {}  components: {}  provider: {}",
            self.dataset, self.components, self.provider
        );
        let _ = writeln!(
            t,
            "samples: {} evaluated, {} failed  wall time: {:.2}s",
            self.samples_evaluated, self.samples_failed, self.wall_time_s
        );
        let _ = writeln!(t, "{:<width$}  {:>6}", "class", "IoU");
        for c in &self.per_class {
            match c.iou {
                Some(v) => {
                    let _ = writeln!(t, "{:<width$}  {:>6.2}", c.name, v * 100.0);
                }
                None => {
                    let _ = writeln!(t, "{:<width$}  {:>6}", c.name, "-");
                }
            }
        }
        let _ = writeln!(t, "{:<width$}  {:>6.2}", "mIoU", self.miou * 100.0);
        for f in &self.failures {
            let _ = writeln!(t, "failed {}: {}", f.id, f.error);
        }
        t
    }
}

fn is_sample_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Io { .. } | Error::Image { .. } | Error::InvalidInput(_) | Error::Shape(_) | Error::FixtureMissing(_)
    )
}

/// Segment up to `limit` samples (in id order) and accumulate mIoU. The
/// dataset's resize rule overrides the pipeline's. Unreadable samples are
/// recorded and skipped.
pub fn run_benchmark(
    dataset: &Dataset,
    config: &PipelineConfig,
    provider: &dyn Provider,
    limit: Option<usize>,
) -> Result<BenchmarkReport> {
    let start = Instant::now();
    let config = PipelineConfig {
        resize_short: Some(dataset.resize_short),
        ..config.clone()
    };
    let mut samples = dataset.samples()?;
    if let Some(n) = limit {
        samples.truncate(n);
    }
    if samples.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let segmenter = Segmenter::new(provider, config.clone(), &dataset.vocabulary())?;
    let mut acc = ConfusionAccumulator::new(dataset.classes.len());
    let mut failures = Vec::new();
    let mut evaluated = 0;
    for sample in &samples {
        let result = (|| -> Result<()> {
            let image = read_rgb(&sample.image)?;
            let gt = dataset.load_ground_truth(&sample.label)?;
            if (gt.height, gt.width) != (image.height() as usize, image.width() as usize) {
                return Err(Error::shape(format!(
                    "label map {}x{} does not match image {}x{}",
                    gt.height,
                    gt.width,
                    image.height(),
                    image.width()
                )));
            }
            let out = segmenter.segment(&image, Some(&gt))?;
            acc.update(
                out.labels.as_slice().expect("standard layout"),
                &gt.labels,
                gt.ignore_value,
            )
        })();
        match result {
            Ok(()) => evaluated += 1,
            Err(e) if is_sample_error(&e) => {
                log::warn!("sample {} skipped: {e}", sample.id);
                failures.push(SampleFailure {
                    id: sample.id.clone(),
                    error: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let miou = acc.miou()?;
    Ok(BenchmarkReport {
        dataset: dataset.name.clone(),
        components: config.components(),
        provider: provider.name(),
        samples_evaluated: evaluated,
        samples_failed: failures.len(),
        failures,
        per_class: dataset
            .classes
            .iter()
            .enumerate()
            .map(|(k, name)| ClassIou {
                name: name.clone(),
                iou: acc.iou(k),
            })
            .collect(),
        miou,
        config,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// A component that the ablation switches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Sr,
    Vr,
    Mc,
    Nc,
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sr" => Ok(Component::Sr),
            "vr" => Ok(Component::Vr),
            "mc" => Ok(Component::Mc),
            "nc" => Ok(Component::Nc),
            other => Err(Error::Config(format!(
                "unknown ablation component `{other}` (sr, vr, mc, nc)"
            ))),
        }
    }
}

/// Parse a comma-separated component list such as `sr,vr,mc,nc`.
pub fn parse_components(list: &str) -> Result<Vec<Component>> {
    let comps: Vec<Component> = list.split(',').map(str::parse).collect::<Result<_>>()?;
    for (i, c) in comps.iter().enumerate() {
        if comps[..i].contains(c) {
            return Err(Error::Config(format!("ablation component {c:?} listed twice")));
        }
    }
    Ok(comps)
}

/// Configs for a cumulative ablation: the baseline, then one more
/// component switched on per row.
pub fn ablation_configs(base: &PipelineConfig, components: &[Component]) -> Vec<PipelineConfig> {
    let mut cfg = base.baseline();
    let mut rows = vec![cfg.clone()];
    for c in components {
        match c {
            Component::Sr => cfg.sr = true,
            Component::Vr => cfg.vr = true,
            Component::Mc => cfg.mc = true,
            Component::Nc => cfg.nc = true,
        }
        rows.push(cfg.clone());
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<BenchmarkReport>,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_table(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(t, "{:<14} {:>8} {:>8}", "components", "mIoU", "delta");
        let base = self.rows.first().map(|r| r.miou).unwrap_or(0.0);
        for r in &self.rows {
            let _ = writeln!(
                t,
                "{:<14} {:>8.2} {:>+8.2}",
                r.components,
                r.miou * 100.0,
                (r.miou - base) * 100.0
            );
        }
        t
    }
}

pub fn run_ablation(
    dataset: &Dataset,
    base: &PipelineConfig,
    components: &[Component],
    provider: &dyn Provider,
    limit: Option<usize>,
) -> Result<AblationReport> {
    let rows = ablation_configs(base, components)
        .iter()
        .map(|cfg| run_benchmark(dataset, cfg, provider, limit))
        .collect::<Result<_>>()?;
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let mut acc = ConfusionAccumulator::new(3);
        acc.update(&[0, 1, 1, 2], &[0, 1, 1, 2], 255).unwrap();
        assert_eq!(acc.miou().unwrap(), 1.0);
    }

    #[test]
    fn disjoint_class_scores_zero() {
        let mut acc = ConfusionAccumulator::new(2);
        acc.update(&[1, 0], &[0, 1], 255).unwrap();
        assert_eq!(acc.iou(0), Some(0.0));
        assert_eq!(acc.iou(1), Some(0.0));
    }

    #[test]
    fn hand_case_four_tenths() {
        // 4x4: pred class 1 on the top two rows (8 px), gt class 1 on six
        // pixels, four of which overlap
        let pred: Vec<u32> = (0..16).map(|i| (i < 8) as u32).collect();
        let mut gt = vec![0u8; 16];
        for i in [4, 5, 6, 7, 8, 9] {
            gt[i] = 1;
        }
        let mut acc = ConfusionAccumulator::new(2);
        acc.update(&pred, &gt, 255).unwrap();
        assert_eq!(acc.iou(1), Some(0.4));
    }

    #[test]
    fn mean_over_seen_classes() {
        let acc = ConfusionAccumulator {
            intersection: vec![2, 1, 0],
            union: vec![2, 2, 0],
            seen: vec![true, true, false],
        };
        assert_eq!(acc.miou().unwrap(), 0.75);
        let hand = ConfusionAccumulator {
            intersection: vec![2, 0, 3],
            union: vec![5, 4, 3],
            seen: vec![true; 3],
        };
        assert!((hand.miou().unwrap() - 0.4667).abs() < 1e-4);
    }

    #[test]
    fn ignore_and_empty() {
        let mut acc = ConfusionAccumulator::new(2);
        acc.update(&[1, 1], &[255, 255], 255).unwrap();
        assert!(matches!(acc.miou(), Err(Error::EmptyEvaluation)));
        assert!(acc.update(&[1], &[0, 0], 255).is_err());
        assert!(acc.update(&[5], &[0], 255).is_err());
    }

    #[test]
    fn merge_adds_counts() {
        let mut a = ConfusionAccumulator::new(2);
        a.update(&[0, 1], &[0, 0], 255).unwrap();
        let mut b = ConfusionAccumulator::new(2);
        b.update(&[1, 1], &[1, 1], 255).unwrap();
        let mut both = ConfusionAccumulator::new(2);
        both.update(&[0, 1, 1, 1], &[0, 0, 1, 1], 255).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a, both);
    }

    #[test]
    fn ablation_rows_are_cumulative() {
        let comps = parse_components("sr,vr,mc,nc").unwrap();
        let rows = ablation_configs(&PipelineConfig::default(), &comps);
        let names: Vec<String> = rows.iter().map(|c| c.components()).collect();
        assert_eq!(names, vec!["baseline", "sr", "sr+vr", "sr+vr+mc", "sr+vr+mc+nc"]);
        assert!(parse_components("sr,sr").is_err());
        assert!(parse_components("crf").is_err());
    }
}
