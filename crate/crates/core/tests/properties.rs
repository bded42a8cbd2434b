use std::collections::BTreeSet;

use corrseg::correction::mode_correct;
use corrseg::correlation::{semantic_matrix, SimilarityMatrix, SimilaritySource};
use corrseg::evaluation::ConfusionAccumulator;
use corrseg::masks::{rasterize_to_patches, threshold_and_flatten, RegionMaskSet};
use corrseg::providers::{embed_classes, BinaryMask, ClipBackbone, RawMaskProposal, SyntheticProvider};
use ndarray::Array2;
use proptest::prelude::*;

/// Patch-level region set on a 1 x n strip.
fn strip(labels: &[u32]) -> RegionMaskSet {
    let set = RegionMaskSet::from_pixel_labels(1, labels.len(), labels).unwrap();
    rasterize_to_patches(&set, 1, labels.len(), 1).unwrap()
}

fn sim_from(n: usize, raw: &[i8]) -> SimilarityMatrix {
    let mut s = Array2::<f32>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (i.min(j), i.max(j));
            s[[i, j]] = if i == j { 1.0 } else { raw[a * n + b] as f32 / 8.0 };
        }
    }
    SimilarityMatrix {
        values: s,
        source: SimilaritySource::DinoQk,
        normalized: true,
    }
}

fn strip_case() -> impl Strategy<Value = (Vec<u32>, Vec<i8>)> {
    (1usize..=12).prop_flat_map(|n| {
        (
            prop::collection::vec(0u32..4, n),
            prop::collection::vec(-8i8..=8, n * n),
        )
    })
}

proptest! {
    #[test]
    fn semantic_matrix_symmetric_with_true_diagonal((labels, raw) in strip_case()) {
        let n = labels.len();
        let e = semantic_matrix(&strip(&labels), &sim_from(n, &raw)).unwrap();
        for i in 0..n {
            prop_assert!(e.e()[[i, i]]);
            for j in 0..n {
                prop_assert_eq!(e.e()[[i, j]], e.e()[[j, i]]);
            }
        }
    }

    #[test]
    fn semantic_matrix_commutes_with_permutation((labels, raw) in strip_case(), seed in any::<u64>()) {
        let n = labels.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut x = seed;
        for k in (1..n).rev() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(k, (x >> 33) as usize % (k + 1));
        }
        let s = sim_from(n, &raw);
        let e = semantic_matrix(&strip(&labels), &s).unwrap();
        let plabels: Vec<u32> = perm.iter().map(|&p| labels[p]).collect();
        let mut ps = s.clone();
        for i in 0..n {
            for j in 0..n {
                ps.values[[i, j]] = s.values[[perm[i], perm[j]]];
            }
        }
        let pe = semantic_matrix(&strip(&plabels), &ps).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(pe.e()[[i, j]], e.e()[[perm[i], perm[j]]]);
            }
        }
    }

    #[test]
    fn splitting_a_region_only_removes_interactions((labels, raw) in strip_case(), flips in prop::collection::vec(any::<bool>(), 12)) {
        let n = labels.len();
        // move some patches of region 1 into a fresh region 9
        let split: Vec<u32> = labels
            .iter()
            .zip(&flips)
            .map(|(&l, &f)| if l == 1 && f { 9 } else { l })
            .collect();
        let s = sim_from(n, &raw);
        let coarse = semantic_matrix(&strip(&labels), &s).unwrap();
        let fine = semantic_matrix(&strip(&split), &s).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!(!fine.e()[[i, j]] || coarse.e()[[i, j]]);
            }
        }
    }

    #[test]
    fn flattened_masks_partition_the_image(
        rects in prop::collection::vec((0usize..10, 0usize..10, 1usize..10, 1usize..10, 0.0f32..1.0, 0.0f32..1.0), 0..8),
        ti in 0.0f32..1.0,
        ts in 0.0f32..1.0,
    ) {
        let (h, w) = (10, 10);
        let proposals: Vec<RawMaskProposal> = rects
            .iter()
            .map(|&(y, x, dh, dw, iou, stab)| {
                let data = (0..h * w).map(|i| {
                    let (py, px) = (i / w, i % w);
                    y <= py && py < y + dh && x <= px && px < x + dw
                }).collect();
                RawMaskProposal::new(BinaryMask::new(h, w, data).unwrap(), iou, stab).unwrap()
            })
            .collect();
        let set = threshold_and_flatten(&proposals, h, w, ti, ts).unwrap();
        let z = set.num_regions();
        let mut count = vec![0usize; h * w];
        for r in 0..=z {
            let m = if r == 0 { set.unsegmented_pixel() } else { set.pixel_mask(r) };
            prop_assert!(r == 0 || m.iter().any(|&b| b));
            for (c, b) in count.iter_mut().zip(m) {
                *c += b as usize;
            }
        }
        prop_assert!(count.iter().all(|&c| c == 1));
    }

    #[test]
    fn mode_correction_is_idempotent_and_conservative(
        regions in prop::collection::vec(0u32..4, 36),
        labels in prop::collection::vec(0u32..5, 36),
    ) {
        let set = RegionMaskSet::from_pixel_labels(6, 6, &regions).unwrap();
        let once = mode_correct(&labels, &set).unwrap();
        prop_assert_eq!(&mode_correct(&once, &set).unwrap(), &once);
        let before: BTreeSet<u32> = labels.iter().copied().collect();
        prop_assert!(once.iter().all(|l| before.contains(l)));
        let region_of = set.pixel_labels();
        for p in 0..36 {
            if region_of[p] == 0 {
                prop_assert_eq!(once[p], labels[p]);
            }
            for q in 0..36 {
                if region_of[p] != 0 && region_of[p] == region_of[q] {
                    prop_assert_eq!(once[p], once[q]);
                }
            }
        }
        // at most the pixels outside each region's mode change
        for r in 1..=set.num_regions() as u32 {
            let members: Vec<usize> = (0..36).filter(|&p| region_of[p] == r).collect();
            let kept = members.iter().filter(|&&p| once[p] == labels[p]).count();
            let best = (0..5).map(|c| members.iter().filter(|&&p| labels[p] == c).count()).max().unwrap();
            prop_assert_eq!(kept, best);
        }
    }

    #[test]
    fn class_embeddings_follow_class_order(names in prop::collection::btree_set("[a-z]{1,8}", 1..6)) {
        let provider = SyntheticProvider::new(ClipBackbone::B16);
        let templates = vec!["a photo of a {}.".to_string(), "{}".to_string()];
        let fwd: Vec<Vec<String>> = names.iter().map(|n| vec![n.clone()]).collect();
        let rev: Vec<Vec<String>> = fwd.iter().rev().cloned().collect();
        let a = embed_classes(&provider, &fwd, &templates).unwrap();
        let b = embed_classes(&provider, &rev, &templates).unwrap();
        let k = fwd.len();
        for i in 0..k {
            prop_assert_eq!(a.embeddings.row(i), b.embeddings.row(k - 1 - i));
        }
    }

    #[test]
    fn confusion_counts_ignore_update_order(
        pairs in prop::collection::vec((0u32..4, prop_oneof![0u8..4, Just(255u8)]), 1..200),
        cut in 0usize..200,
    ) {
        let cut = cut.min(pairs.len());
        let (pred, gt): (Vec<u32>, Vec<u8>) = pairs.into_iter().unzip();
        let mut whole = ConfusionAccumulator::new(4);
        whole.update(&pred, &gt, 255).unwrap();
        let mut head = ConfusionAccumulator::new(4);
        head.update(&pred[..cut], &gt[..cut], 255).unwrap();
        let mut tail = ConfusionAccumulator::new(4);
        tail.update(&pred[cut..], &gt[cut..], 255).unwrap();
        let mut ab = head.clone();
        ab.merge(&tail).unwrap();
        let mut ba = tail.clone();
        ba.merge(&head).unwrap();
        for acc in [&ab, &ba] {
            prop_assert_eq!(acc.intersection(), whole.intersection());
            prop_assert_eq!(acc.union(), whole.union());
            prop_assert_eq!(acc.seen(), whole.seen());
        }
    }
}
