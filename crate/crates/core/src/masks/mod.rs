//! Region masks: flattening raw proposals into disjoint regions,
//! rasterizing them onto the patch grid, pooling region features and
//! merging similar regions.
//!
//! A [`RegionMaskSet`] is stored as a label map (0 = unsegmented, `i` =
//! region `i`), at pixel resolution and, once rasterized, at patch
//! resolution. Disjointness and exact coverage therefore hold by
//! construction; the binary-mask views are materialized on demand.

pub mod dbscan;

use std::cmp::Ordering;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::providers::{FeatureGrid, RawMaskProposal, TensorArchive};

/// Patch-resolution labels for a [`RegionMaskSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchLabels {
    pub rows: usize,
    pub cols: usize,
    pub patch_px: usize,
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMaskSet {
    height: usize,
    width: usize,
    pixel_labels: Vec<u32>,
    num_regions: usize,
    patch: Option<PatchLabels>,
    /// Per region, the ids (1-based) of the source regions it was built
    /// from. Survives cropping and merging.
    origins: Vec<Vec<u32>>,
    scores: Vec<(f32, f32)>,
    merged: bool,
}

impl RegionMaskSet {
    /// Everything unsegmented.
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixel_labels: vec![0; height * width],
            num_regions: 0,
            patch: None,
            origins: Vec::new(),
            scores: Vec::new(),
            merged: false,
        }
    }

    /// Build from a pixel label map where 0 means unsegmented. Labels are
    /// compacted to `1..=Z` in ascending order of their original value;
    /// origins record the original values.
    pub fn from_pixel_labels(height: usize, width: usize, labels: &[u32]) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(format!(
                "label map {height}x{width} needs {} pixels, got {}",
                height * width,
                labels.len()
            )));
        }
        let mut present: Vec<u32> = labels.iter().copied().filter(|&l| l != 0).collect();
        present.sort_unstable();
        present.dedup();
        let remap = |l: u32| -> u32 {
            if l == 0 {
                0
            } else {
                present.binary_search(&l).expect("present label") as u32 + 1
            }
        };
        Ok(Self {
            height,
            width,
            pixel_labels: labels.iter().map(|&l| remap(l)).collect(),
            num_regions: present.len(),
            patch: None,
            origins: present.iter().map(|&l| vec![l]).collect(),
            scores: vec![(1.0, 1.0); present.len()],
            merged: false,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of segmented regions Z (excluding the unsegmented area).
    pub fn num_regions(&self) -> usize {
        self.num_regions
    }

    pub fn is_merged(&self) -> bool {
        self.merged
    }

    pub fn pixel_labels(&self) -> &[u32] {
        &self.pixel_labels
    }

    pub fn patch(&self) -> Option<&PatchLabels> {
        self.patch.as_ref()
    }

    pub fn patch_labels(&self) -> Option<&[u32]> {
        self.patch.as_ref().map(|p| p.labels.as_slice())
    }

    /// Source region ids of region `region` (1-based).
    pub fn origins(&self, region: usize) -> &[u32] {
        &self.origins[region - 1]
    }

    /// `(predicted_iou, stability_score)` of region `region` (1-based).
    pub fn scores(&self, region: usize) -> (f32, f32) {
        self.scores[region - 1]
    }

    /// Binary pixel mask of region `region` in `1..=Z`.
    pub fn pixel_mask(&self, region: usize) -> Vec<bool> {
        self.pixel_labels.iter().map(|&l| l as usize == region).collect()
    }

    pub fn unsegmented_pixel(&self) -> Vec<bool> {
        self.pixel_mask(0)
    }

    pub fn patch_mask(&self, region: usize) -> Option<Vec<bool>> {
        self.patch_labels()
            .map(|l| l.iter().map(|&v| v as usize == region).collect())
    }

    pub fn unsegmented_patch(&self) -> Option<Vec<bool>> {
        self.patch_mask(0)
    }

    pub fn region_pixel_areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.num_regions + 1];
        self.pixel_labels.iter().for_each(|&l| areas[l as usize] += 1);
        areas
    }

    /// Proposals equivalent to this set, in region order, carrying each
    /// region's scores.
    pub fn to_proposals(&self) -> Vec<RawMaskProposal> {
        (1..=self.num_regions)
            .map(|r| {
                let mask = crate::providers::BinaryMask {
                    height: self.height,
                    width: self.width,
                    data: self.pixel_mask(r),
                };
                let (iou, stab) = self.scores[r - 1];
                RawMaskProposal {
                    mask,
                    predicted_iou: iou,
                    stability_score: stab,
                }
            })
            .collect()
    }

    /// Keep only regions with `keep[r-1]`, relabelling the survivors
    /// compactly in their existing order.
    fn retain_regions(&mut self, keep: &[bool]) {
        let mut remap = vec![0u32; self.num_regions + 1];
        let mut next = 0u32;
        for r in 1..=self.num_regions {
            if keep[r - 1] {
                next += 1;
                remap[r] = next;
            }
        }
        self.pixel_labels.iter_mut().for_each(|l| *l = remap[*l as usize]);
        if let Some(p) = self.patch.as_mut() {
            p.labels.iter_mut().for_each(|l| *l = remap[*l as usize]);
        }
        let mut i = 0;
        self.origins.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        let mut i = 0;
        self.scores.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        self.num_regions = next as usize;
    }

    /// Pixel window `[top, top+height) x [left, left+width)`. Regions with no
    /// pixels inside the window are dropped; patch labels are cleared.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<RegionMaskSet> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::shape(format!(
                "crop {height}x{width}@({top},{left}) exceeds {}x{} mask",
                self.height, self.width
            )));
        }
        let mut labels = Vec::with_capacity(height * width);
        for y in top..top + height {
            labels.extend_from_slice(&self.pixel_labels[y * self.width + left..y * self.width + left + width]);
        }
        let mut out = RegionMaskSet {
            height,
            width,
            pixel_labels: labels,
            num_regions: self.num_regions,
            patch: None,
            origins: self.origins.clone(),
            scores: self.scores.clone(),
            merged: self.merged,
        };
        let areas = out.region_pixel_areas();
        let keep: Vec<bool> = areas[1..].iter().map(|&a| a > 0).collect();
        out.retain_regions(&keep);
        Ok(out)
    }

    /// Extend to `height x width` with unsegmented pixels on the bottom and
    /// right; patch labels are cleared.
    pub fn pad_to(&self, height: usize, width: usize) -> Result<RegionMaskSet> {
        if height < self.height || width < self.width {
            return Err(Error::shape(format!(
                "cannot pad {}x{} mask to {height}x{width}",
                self.height, self.width
            )));
        }
        let mut labels = vec![0u32; height * width];
        for y in 0..self.height {
            labels[y * width..y * width + self.width]
                .copy_from_slice(&self.pixel_labels[y * self.width..(y + 1) * self.width]);
        }
        Ok(RegionMaskSet {
            height,
            width,
            pixel_labels: labels,
            patch: None,
            ..self.clone()
        })
    }

    /// Nearest-neighbour resize of the pixel labels. Regions that vanish
    /// are dropped; patch labels are cleared.
    pub fn resize_nearest(&self, height: usize, width: usize) -> RegionMaskSet {
        let mut out = RegionMaskSet {
            height,
            width,
            pixel_labels: crate::resample::nearest(&self.pixel_labels, self.height, self.width, height, width),
            patch: None,
            ..self.clone()
        };
        let areas = out.region_pixel_areas();
        let keep: Vec<bool> = areas[1..].iter().map(|&a| a > 0).collect();
        out.retain_regions(&keep);
        out
    }

    /// Union regions that share an origin with a common group. Each group
    /// lists source region ids as found in [`origins`](Self::origins);
    /// unknown ids are ignored. Regions are ordered by their lowest member.
    pub fn union_by_origins<'a, I>(&self, groups: I) -> RegionMaskSet
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        let mut owner = std::collections::HashMap::new();
        for (r, o) in self.origins.iter().enumerate() {
            for &id in o {
                owner.insert(id, r);
            }
        }
        let mut uf = petgraph::unionfind::UnionFind::<usize>::new(self.num_regions);
        for g in groups {
            let members: Vec<usize> = g.iter().filter_map(|id| owner.get(id).copied()).collect();
            for w in members.windows(2) {
                uf.union(w[0], w[1]);
            }
        }
        let mut group_of_root = vec![None; self.num_regions];
        let mut group = vec![0usize; self.num_regions];
        let mut count = 0;
        for (r, g) in group.iter_mut().enumerate() {
            *g = *group_of_root[uf.find(r)].get_or_insert_with(|| {
                count += 1;
                count - 1
            });
        }
        let mut out = self.clone();
        out.merged = true;
        out.regroup(&group, count);
        out
    }

    /// Relabel region `r` (0-based) to group `group[r]`, concatenating
    /// origins and keeping the best scores per group.
    fn regroup(&mut self, group: &[usize], groups: usize) {
        let mut remap = vec![0u32; self.num_regions + 1];
        let mut origins = vec![Vec::new(); groups];
        let mut scores = vec![(0.0f32, 0.0f32); groups];
        for r in 0..self.num_regions {
            remap[r + 1] = group[r] as u32 + 1;
            origins[group[r]].extend_from_slice(&self.origins[r]);
            let s = &mut scores[group[r]];
            s.0 = s.0.max(self.scores[r].0);
            s.1 = s.1.max(self.scores[r].1);
        }
        origins.iter_mut().for_each(|o| o.sort_unstable());
        self.pixel_labels.iter_mut().for_each(|l| *l = remap[*l as usize]);
        if let Some(p) = self.patch.as_mut() {
            p.labels.iter_mut().for_each(|l| *l = remap[*l as usize]);
        }
        self.num_regions = groups;
        self.origins = origins;
        self.scores = scores;
    }

    /// Write binary `u8` masks under `prefix/`.
    pub fn write_to_archive(&self, archive: &mut TensorArchive, prefix: &str) -> Result<()> {
        let (h, w, z) = (self.height, self.width, self.num_regions);
        let mut masks = Vec::with_capacity(z * h * w);
        for r in 1..=z {
            masks.extend(self.pixel_labels.iter().map(|&l| (l as usize == r) as u8));
        }
        archive.insert_u8(format!("{prefix}/pixel_masks"), vec![z, h, w], masks)?;
        archive.insert_u8(
            format!("{prefix}/unsegmented_pixel"),
            vec![h, w],
            self.pixel_labels.iter().map(|&l| (l == 0) as u8).collect(),
        )?;
        if let Some(p) = &self.patch {
            let mut pm = Vec::with_capacity(z * p.labels.len());
            for r in 1..=z {
                pm.extend(p.labels.iter().map(|&l| (l as usize == r) as u8));
            }
            archive.insert_u8(format!("{prefix}/patch_masks"), vec![z, p.rows, p.cols], pm)?;
            archive.insert_u8(
                format!("{prefix}/unsegmented_patch"),
                vec![p.rows, p.cols],
                p.labels.iter().map(|&l| (l == 0) as u8).collect(),
            )?;
        }
        Ok(())
    }

    /// Inverse of [`write_to_archive`](Self::write_to_archive); `patch_px`
    /// is needed when patch masks are present.
    pub fn read_from_archive(archive: &TensorArchive, prefix: &str, patch_px: usize) -> Result<RegionMaskSet> {
        let (shape, masks) = archive.u8(&format!("{prefix}/pixel_masks"))?;
        let (z, h, w) = (shape[0], shape[1], shape[2]);
        let labels = labels_from_binary(masks, z, h * w)?;
        let mut set = RegionMaskSet::from_pixel_labels(h, w, &labels)?;
        if set.num_regions != z {
            return Err(Error::Archive(format!("{prefix}: empty pixel mask stored")));
        }
        let name = format!("{prefix}/patch_masks");
        if archive.contains(&name) {
            let (pshape, pm) = archive.u8(&name)?;
            let (rows, cols) = (pshape[1], pshape[2]);
            set.patch = Some(PatchLabels {
                rows,
                cols,
                patch_px,
                labels: labels_from_binary(pm, pshape[0], rows * cols)?,
            });
        }
        Ok(set)
    }
}

fn labels_from_binary(masks: &[u8], z: usize, len: usize) -> Result<Vec<u32>> {
    let mut labels = vec![0u32; len];
    for r in 0..z {
        for (i, &b) in masks[r * len..(r + 1) * len].iter().enumerate() {
            if b != 0 {
                if labels[i] != 0 {
                    return Err(Error::Archive("stored region masks overlap".into()));
                }
                labels[i] = r as u32 + 1;
            }
        }
    }
    Ok(labels)
}

/// Discard low-confidence proposals and resolve overlaps.
///
/// A proposal survives when `predicted_iou > pred_iou_thresh` and
/// `stability_score >= stability_thresh`. Survivors claim pixels in
/// priority order: predicted IoU descending, then stability descending,
/// then area descending, then input order. Masks left empty are dropped.
/// Output regions are ordered by the same keys using their flattened area,
/// which makes the operation idempotent.
pub fn threshold_and_flatten(
    proposals: &[RawMaskProposal],
    height: usize,
    width: usize,
    pred_iou_thresh: f32,
    stability_thresh: f32,
) -> Result<RegionMaskSet> {
    for (name, t) in [
        ("pred_iou_thresh", pred_iou_thresh),
        ("stability_thresh", stability_thresh),
    ] {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("{name} {t} outside [0,1]")));
        }
    }
    if let Some(p) = proposals
        .iter()
        .find(|p| p.mask.height != height || p.mask.width != width)
    {
        return Err(Error::shape(format!(
            "proposal mask {}x{} does not match image {height}x{width}",
            p.mask.height, p.mask.width
        )));
    }
    let priority = |a: (f32, f32, usize, usize), b: (f32, f32, usize, usize)| -> Ordering {
        b.0.total_cmp(&a.0)
            .then(b.1.total_cmp(&a.1))
            .then(b.2.cmp(&a.2))
            .then(a.3.cmp(&b.3))
    };

    let mut survivors: Vec<(f32, f32, usize, usize)> = proposals
        .iter()
        .enumerate()
        .filter(|(_, p)| p.predicted_iou > pred_iou_thresh && p.stability_score >= stability_thresh)
        .map(|(i, p)| (p.predicted_iou, p.stability_score, p.mask.area(), i))
        .collect();
    survivors.sort_by(|a, b| priority(*a, *b));

    let mut labels = vec![0u32; height * width];
    for (rank, s) in survivors.iter().enumerate() {
        let mask = &proposals[s.3].mask.data;
        for (l, &m) in labels.iter_mut().zip(mask) {
            if m && *l == 0 {
                *l = rank as u32 + 1;
            }
        }
    }
    let mut areas = vec![0usize; survivors.len() + 1];
    labels.iter().for_each(|&l| areas[l as usize] += 1);

    let mut order: Vec<(f32, f32, usize, usize)> = survivors
        .iter()
        .enumerate()
        .filter(|(rank, _)| areas[rank + 1] > 0)
        .map(|(rank, s)| (s.0, s.1, areas[rank + 1], rank))
        .collect();
    order.sort_by(|a, b| priority(*a, *b));

    let mut remap = vec![0u32; survivors.len() + 1];
    for (new, o) in order.iter().enumerate() {
        remap[o.3 + 1] = new as u32 + 1;
    }
    labels.iter_mut().for_each(|l| *l = remap[*l as usize]);
    Ok(RegionMaskSet {
        height,
        width,
        pixel_labels: labels,
        num_regions: order.len(),
        patch: None,
        origins: (1..=order.len() as u32).map(|r| vec![r]).collect(),
        scores: order.iter().map(|o| (o.0, o.1)).collect(),
        merged: false,
    })
}

/// Assign each `patch_px x patch_px` patch to the label (region or
/// unsegmented) covering most of its pixels. Ties go to the lower region
/// index, and any region beats unsegmented on a tie. Regions that end up
/// with no patch are dropped and their pixels become unsegmented.
pub fn rasterize_to_patches(set: &RegionMaskSet, rows: usize, cols: usize, patch_px: usize) -> Result<RegionMaskSet> {
    if patch_px == 0 || rows * patch_px != set.height || cols * patch_px != set.width {
        return Err(Error::shape(format!(
            "{rows}x{cols} patches of {patch_px}px do not tile a {}x{} mask",
            set.height, set.width
        )));
    }
    let mut counts = vec![0usize; set.num_regions + 1];
    let mut patch_labels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            counts.iter_mut().for_each(|v| *v = 0);
            for y in r * patch_px..(r + 1) * patch_px {
                let row = &set.pixel_labels[y * set.width + c * patch_px..y * set.width + (c + 1) * patch_px];
                row.iter().for_each(|&l| counts[l as usize] += 1);
            }
            let mut best = 0usize;
            let mut best_count = 0usize;
            for (region, &n) in counts.iter().enumerate().skip(1) {
                if n > best_count {
                    best = region;
                    best_count = n;
                }
            }
            if counts[0] > best_count {
                best = 0;
            }
            patch_labels.push(best as u32);
        }
    }
    let mut out = set.clone();
    out.patch = Some(PatchLabels {
        rows,
        cols,
        patch_px,
        labels: patch_labels,
    });
    let mut has_patch = vec![false; set.num_regions];
    for &l in &out.patch.as_ref().unwrap().labels {
        if l > 0 {
            has_patch[l as usize - 1] = true;
        }
    }
    out.retain_regions(&has_patch);
    Ok(out)
}

/// Pooled feature per segmented region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatureTable {
    pub features: Array2<f32>,
    /// Region index (1-based) of each feature row.
    pub region_ids: Vec<usize>,
}

/// Mask average pooling: the mean feature over each region's patches.
pub fn region_features(set: &RegionMaskSet, features: &FeatureGrid) -> Result<RegionFeatureTable> {
    let patch = set
        .patch
        .as_ref()
        .ok_or_else(|| Error::invalid("region masks have not been rasterized to patches"))?;
    if patch.labels.len() != features.len() {
        return Err(Error::shape(format!(
            "{} patch labels for a {}-patch feature grid",
            patch.labels.len(),
            features.len()
        )));
    }
    let z = set.num_regions;
    let dim = features.dim();
    let mut sums = vec![vec![0.0f64; dim]; z];
    let mut counts = vec![0usize; z];
    for (p, &l) in patch.labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let r = l as usize - 1;
        counts[r] += 1;
        for (s, v) in sums[r].iter_mut().zip(features.row(p).iter()) {
            *s += *v as f64;
        }
    }
    let mut out = Array2::zeros((z, dim));
    for r in 0..z {
        assert!(counts[r] > 0, "region {} has no patches after rasterization", r + 1);
        for (o, s) in out.row_mut(r).iter_mut().zip(&sums[r]) {
            *o = (*s / counts[r] as f64) as f32;
        }
    }
    Ok(RegionFeatureTable {
        features: out,
        region_ids: (1..=z).collect(),
    })
}

/// Union regions whose pooled features fall in one DBSCAN cluster (cosine
/// distance). `min_samples == 0` disables merging. Noise regions are kept
/// as they are. Merged regions are ordered by their lowest member index.
pub fn merge_regions(
    set: &RegionMaskSet,
    table: &RegionFeatureTable,
    eps: f64,
    min_samples: usize,
) -> Result<RegionMaskSet> {
    if eps < 0.0 || !eps.is_finite() {
        return Err(Error::invalid(format!(
            "eps {eps} must be a finite non-negative number"
        )));
    }
    if table.features.nrows() != set.num_regions {
        return Err(Error::shape(format!(
            "{} region features for {} regions",
            table.features.nrows(),
            set.num_regions
        )));
    }
    let mut out = set.clone();
    out.merged = true;
    if set.num_regions == 0 || min_samples == 0 {
        return Ok(out);
    }
    let points: Vec<Vec<f32>> = table.features.rows().into_iter().map(|r| r.to_vec()).collect();
    let labels = dbscan::dbscan_cosine(&points, eps, min_samples);

    // Group id per region: cluster members share the group of their first
    // member; noise regions form singleton groups.
    let mut group_of_cluster: Vec<Option<usize>> = vec![None; set.num_regions];
    let mut group = vec![0usize; set.num_regions];
    let mut groups = 0usize;
    for (r, l) in labels.iter().enumerate() {
        group[r] = match l {
            Some(c) => *group_of_cluster[*c].get_or_insert_with(|| {
                groups += 1;
                groups - 1
            }),
            None => {
                groups += 1;
                groups - 1
            }
        };
    }
    out.regroup(&group, groups);
    Ok(out)
}

/// One proposal per label value present in a ground-truth map, skipping
/// `ignore`. Used to scope interactions by annotated regions.
pub fn proposals_from_labels(
    labels: &[u8],
    height: usize,
    width: usize,
    ignore: Option<u8>,
) -> Result<Vec<RawMaskProposal>> {
    if labels.len() != height * width {
        return Err(Error::shape("label map size does not match its dimensions"));
    }
    let mut present = [false; 256];
    labels.iter().for_each(|&l| present[l as usize] = true);
    let mut out = Vec::new();
    for value in 0..=255u8 {
        if !present[value as usize] || Some(value) == ignore {
            continue;
        }
        let mask = crate::providers::BinaryMask::new(height, width, labels.iter().map(|&l| l == value).collect())?;
        out.push(RawMaskProposal::new(mask, 1.0, 1.0)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{BinaryMask, SourceTag};

    fn proposal(h: usize, w: usize, pixels: &[usize], iou: f32, stab: f32) -> RawMaskProposal {
        let mut data = vec![false; h * w];
        pixels.iter().for_each(|&p| data[p] = true);
        RawMaskProposal::new(BinaryMask::new(h, w, data).unwrap(), iou, stab).unwrap()
    }

    #[test]
    fn disjoint_masks_kept() {
        let p = [proposal(2, 2, &[0, 1], 0.9, 0.9), proposal(2, 2, &[2, 3], 0.8, 0.9)];
        let s = threshold_and_flatten(&p, 2, 2, 0.7, 0.7).unwrap();
        assert_eq!(s.num_regions(), 2);
        assert_eq!(s.pixel_labels(), &[1, 1, 2, 2]);
    }

    #[test]
    fn low_iou_discarded() {
        let p = [proposal(2, 2, &[0, 1], 0.65, 0.9)];
        let s = threshold_and_flatten(&p, 2, 2, 0.7, 0.7).unwrap();
        assert_eq!(s.num_regions(), 0);
        assert_eq!(s.unsegmented_pixel(), vec![true; 4]);
    }

    #[test]
    fn full_overlap_goes_to_higher_iou() {
        // Listed lower-confidence first to make sure order is not what decides.
        let p = [
            proposal(2, 2, &[0, 1, 2], 0.8, 0.9),
            proposal(2, 2, &[0, 1, 2], 0.9, 0.9),
        ];
        let s = threshold_and_flatten(&p, 2, 2, 0.7, 0.7).unwrap();
        assert_eq!(s.num_regions(), 1);
        assert_eq!(s.pixel_labels(), &[1, 1, 1, 0]);
        assert_eq!(s.scores(1), (0.9, 0.9));
    }

    #[test]
    fn flatten_tie_breaks() {
        // equal iou: higher stability wins
        let p = [proposal(1, 2, &[0, 1], 0.9, 0.8), proposal(1, 2, &[1], 0.9, 0.95)];
        let s = threshold_and_flatten(&p, 1, 2, 0.7, 0.7).unwrap();
        assert_eq!(s.pixel_labels(), &[2, 1]);
        // equal scores: larger area wins, then input order
        let p = [
            proposal(1, 3, &[1], 0.9, 0.9),
            proposal(1, 3, &[0, 1], 0.9, 0.9),
            proposal(1, 3, &[2], 0.9, 0.9),
        ];
        let s = threshold_and_flatten(&p, 1, 3, 0.7, 0.7).unwrap();
        assert_eq!(s.num_regions(), 2);
        assert_eq!(s.pixel_labels(), &[1, 1, 2]);
    }

    #[test]
    fn empty_survivor_set_is_valid() {
        let s = threshold_and_flatten(&[], 3, 4, 0.7, 0.7).unwrap();
        assert_eq!(s.num_regions(), 0);
        assert!(threshold_and_flatten(&[], 3, 4, 1.5, 0.7).is_err());
    }

    #[test]
    fn rasterize_single_full_patch() {
        // 2x2 patches of 16px, region covers exactly patch (0,1)
        let mut labels = vec![0u32; 32 * 32];
        for y in 0..16 {
            for x in 16..32 {
                labels[y * 32 + x] = 1;
            }
        }
        let s = RegionMaskSet::from_pixel_labels(32, 32, &labels).unwrap();
        let r = rasterize_to_patches(&s, 2, 2, 16).unwrap();
        assert_eq!(r.patch_labels().unwrap(), &[0, 1, 0, 0]);
    }

    #[test]
    fn rasterize_majority_and_tie() {
        // one 10px-wide patch: 6 px A(=1), 4 px B(=2)
        let s = RegionMaskSet::from_pixel_labels(1, 10, &[1, 1, 1, 1, 1, 1, 2, 2, 2, 2]).unwrap();
        // patch_px must tile both dims, use a 1-row layout via a 10x10 block
        let mut labels = Vec::new();
        for _ in 0..10 {
            labels.extend_from_slice(s.pixel_labels());
        }
        let s = RegionMaskSet::from_pixel_labels(10, 10, &labels).unwrap();
        let r = rasterize_to_patches(&s, 1, 1, 10).unwrap();
        assert_eq!(r.patch_labels().unwrap(), &[1]);
        assert_eq!(r.num_regions(), 1);
        // region 2 lost its only patch: its pixels become unsegmented
        assert_eq!(r.pixel_labels().iter().filter(|&&l| l == 0).count(), 40);

        let mut labels = Vec::new();
        for _ in 0..10 {
            labels.extend_from_slice(&[2, 2, 2, 2, 2, 1, 1, 1, 1, 1]);
        }
        let s = RegionMaskSet::from_pixel_labels(10, 10, &labels).unwrap();
        let r = rasterize_to_patches(&s, 1, 1, 10).unwrap();
        assert_eq!(r.patch_labels().unwrap(), &[1]);
        assert_eq!(r.origins(1), &[1]);
    }

    #[test]
    fn rasterize_region_beats_unsegmented_on_tie() {
        let mut labels = Vec::new();
        for _ in 0..2 {
            labels.extend_from_slice(&[0, 3]);
        }
        let s = RegionMaskSet::from_pixel_labels(2, 2, &labels).unwrap();
        let r = rasterize_to_patches(&s, 1, 1, 2).unwrap();
        assert_eq!(r.patch_labels().unwrap(), &[1]);
    }

    #[test]
    fn rasterize_dimension_mismatch() {
        let s = RegionMaskSet::empty(30, 32);
        assert!(rasterize_to_patches(&s, 2, 2, 16).is_err());
    }

    fn two_by_two(labels: [u32; 4]) -> RegionMaskSet {
        let s = RegionMaskSet::from_pixel_labels(2, 2, &labels).unwrap();
        rasterize_to_patches(&s, 2, 2, 1).unwrap()
    }

    #[test]
    fn pooled_features() {
        let s = two_by_two([1, 2, 2, 0]);
        let f =
            FeatureGrid::from_vec(vec![1.0, 0.0, 2.0, 4.0, 4.0, 6.0, 9.0, 9.0], 2, 2, 2, SourceTag::DinoQk).unwrap();
        let t = region_features(&s, &f).unwrap();
        assert_eq!(t.features.row(0).to_vec(), vec![1.0, 0.0]);
        assert_eq!(t.features.row(1).to_vec(), vec![3.0, 5.0]);
    }

    #[test]
    fn merge_close_regions_only() {
        let s = two_by_two([1, 2, 3, 0]);
        let c = 0.9f32;
        let table = RegionFeatureTable {
            features: Array2::from_shape_vec((3, 2), vec![1.0, 0.0, c, (1.0 - c * c).sqrt(), 0.0, 1.0]).unwrap(),
            region_ids: vec![1, 2, 3],
        };
        let m = merge_regions(&s, &table, 0.2, 1).unwrap();
        assert_eq!(m.num_regions(), 2);
        assert_eq!(m.pixel_labels(), &[1, 1, 2, 0]);
        assert_eq!(m.patch_labels().unwrap(), &[1, 1, 2, 0]);
        assert_eq!(m.origins(1), &[1, 2]);
        assert!(m.is_merged());
    }

    #[test]
    fn merging_disabled_with_zero_samples() {
        let s = two_by_two([1, 2, 3, 0]);
        let table = RegionFeatureTable {
            features: Array2::from_elem((3, 2), 1.0),
            region_ids: vec![1, 2, 3],
        };
        let m = merge_regions(&s, &table, 0.0, 0).unwrap();
        assert_eq!(m.pixel_labels(), s.pixel_labels());
        // eps 0 with one sample still merges exact duplicates
        let m = merge_regions(&s, &table, 0.0, 1).unwrap();
        assert_eq!(m.num_regions(), 1);
    }

    #[test]
    fn crop_drops_absent_regions() {
        let s = RegionMaskSet::from_pixel_labels(2, 3, &[1, 2, 3, 1, 2, 3]).unwrap();
        let c = s.crop(0, 1, 2, 2).unwrap();
        assert_eq!(c.num_regions(), 2);
        assert_eq!(c.pixel_labels(), &[1, 2, 1, 2]);
        assert_eq!(c.origins(1), &[2]);
        assert_eq!(c.origins(2), &[3]);
    }

    #[test]
    fn archive_round_trip() {
        let s = two_by_two([1, 2, 2, 0]);
        let mut a = TensorArchive::new();
        s.write_to_archive(&mut a, "masks").unwrap();
        let back = RegionMaskSet::read_from_archive(&a, "masks", 1).unwrap();
        assert_eq!(back.pixel_labels(), s.pixel_labels());
        assert_eq!(back.patch_labels(), s.patch_labels());
    }

    #[test]
    fn labels_to_proposals() {
        let p = proposals_from_labels(&[0, 1, 255, 1], 2, 2, Some(255)).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].mask.data, vec![false, true, false, true]);
    }

    #[test]
    fn pad_and_resize() {
        let s = RegionMaskSet::from_pixel_labels(1, 2, &[1, 2]).unwrap();
        let p = s.pad_to(2, 3).unwrap();
        assert_eq!(p.pixel_labels(), &[1, 2, 0, 0, 0, 0]);
        assert_eq!(p.num_regions(), 2);
        let big = s.resize_nearest(2, 4);
        assert_eq!(big.pixel_labels(), &[1, 1, 2, 2, 1, 1, 2, 2]);
        let small = RegionMaskSet::from_pixel_labels(1, 4, &[1, 2, 3, 3])
            .unwrap()
            .resize_nearest(1, 2);
        assert_eq!(small.num_regions(), 2);
    }

    #[test]
    fn union_by_origins_joins_transitively() {
        let s = RegionMaskSet::from_pixel_labels(1, 5, &[1, 2, 3, 4, 0]).unwrap();
        let groups: Vec<Vec<u32>> = vec![vec![2, 4], vec![4, 3], vec![9]];
        let u = s.union_by_origins(groups.iter().map(|g| g.as_slice()));
        assert!(u.is_merged());
        assert_eq!(u.num_regions(), 2);
        assert_eq!(u.pixel_labels(), &[1, 2, 2, 2, 0]);
        assert_eq!(u.origins(2), &[2, 3, 4]);
    }
}
