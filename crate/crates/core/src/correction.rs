//! Post-hoc corrections: per-region mode correction of label maps and
//! class-name expansion with plural variants and background subclasses.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::masks::RegionMaskSet;

/// Bundled plural variants. A reconstruction, not an authoritative list.
pub const DEFAULT_PLURAL_MAP: &str = include_str!("../data/plural_map.json");
pub const BACKGROUND_VOC: &str = include_str!("../data/background_voc.json");
pub const BACKGROUND_CONTEXT: &str = include_str!("../data/background_context.json");
pub const BACKGROUND_OBJECT: &str = include_str!("../data/background_object.json");

pub type PluralMap = BTreeMap<String, Vec<String>>;

pub fn default_plural_map() -> PluralMap {
    serde_json::from_str(DEFAULT_PLURAL_MAP).expect("bundled plural map parses")
}

pub fn load_plural_map(path: impl AsRef<Path>) -> Result<PluralMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Bundled background subclass list by name: `voc`, `context` or `object`.
pub fn bundled_background(name: &str) -> Option<Vec<String>> {
    let text = match name {
        "voc" => BACKGROUND_VOC,
        "context" => BACKGROUND_CONTEXT,
        "object" => BACKGROUND_OBJECT,
        _ => return None,
    };
    Some(serde_json::from_str(text).expect("bundled background list parses"))
}

/// Replace every label inside each segmented region with the region's most
/// frequent label (ties to the lowest label). Unsegmented pixels keep
/// their label.
pub fn mode_correct(labels: &[u32], set: &RegionMaskSet) -> Result<Vec<u32>> {
    let regions = set.pixel_labels();
    if labels.len() != regions.len() {
        return Err(Error::shape(format!(
            "label map has {} pixels, region masks {}",
            labels.len(),
            regions.len()
        )));
    }
    let z = set.num_regions();
    let mut hist: Vec<BTreeMap<u32, usize>> = vec![BTreeMap::new(); z + 1];
    for (&l, &r) in labels.iter().zip(regions) {
        if r != 0 {
            *hist[r as usize].entry(l).or_default() += 1;
        }
    }
    let modal: Vec<u32> = hist
        .iter()
        .map(|h| {
            // BTreeMap iterates labels ascending, so `>` keeps the lowest on ties
            let mut best = (0u32, 0usize);
            for (&l, &n) in h {
                if n > best.1 {
                    best = (l, n);
                }
            }
            best.0
        })
        .collect();
    Ok(labels
        .iter()
        .zip(regions)
        .map(|(&l, &r)| if r == 0 { l } else { modal[r as usize] })
        .collect())
}

/// Classifier rows after name expansion and the map from rows back to
/// evaluation classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassExpansion {
    /// Name variants per classifier row.
    pub rows: Vec<Vec<String>>,
    /// Evaluation class of each row.
    pub fold: Vec<u32>,
    pub num_classes: usize,
}

impl ClassExpansion {
    pub fn fold_labels(&self, labels: &[u32]) -> Vec<u32> {
        labels.iter().map(|&l| self.fold[l as usize]).collect()
    }
}

/// Build name variants per class: the canonical name plus any plural map
/// entries. With `background = Some(i)` and a non-empty subclass list,
/// class `i` is replaced in place by one row per subclass, all folding
/// back to `i`.
pub fn expand_class_names(
    classes: &[String],
    plural_map: &PluralMap,
    background_subclasses: &[String],
    background: Option<usize>,
) -> Result<ClassExpansion> {
    if classes.is_empty() {
        return Err(Error::invalid("class list is empty"));
    }
    if let Some(b) = background {
        if b >= classes.len() {
            return Err(Error::Config(format!(
                "background index {b} outside {} classes",
                classes.len()
            )));
        }
    }
    let mut rows = Vec::new();
    let mut fold = Vec::new();
    for (i, name) in classes.iter().enumerate() {
        if Some(i) == background && !background_subclasses.is_empty() {
            for sub in background_subclasses {
                rows.push(vec![sub.clone()]);
                fold.push(i as u32);
            }
            continue;
        }
        let mut variants = vec![name.clone()];
        if let Some(extra) = plural_map.get(name) {
            variants.extend(extra.iter().cloned());
        }
        rows.push(variants);
        fold.push(i as u32);
    }
    let mut seen = HashSet::new();
    for name in rows.iter().flatten() {
        if !seen.insert(name.trim().to_lowercase()) {
            return Err(Error::DuplicateName(name.clone()));
        }
    }
    Ok(ClassExpansion {
        rows,
        fold,
        num_classes: classes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn region_row(labels: &[u32]) -> RegionMaskSet {
        RegionMaskSet::from_pixel_labels(1, labels.len(), labels).unwrap()
    }

    #[test]
    fn majority_and_tie() {
        assert_eq!(
            mode_correct(&[1, 1, 2], &region_row(&[1, 1, 1])).unwrap(),
            vec![1, 1, 1]
        );
        assert_eq!(mode_correct(&[2, 1], &region_row(&[1, 1])).unwrap(), vec![1, 1]);
    }

    #[test]
    fn unsegmented_untouched() {
        let out = mode_correct(&[3, 4, 5, 5], &region_row(&[0, 1, 1, 0])).unwrap();
        assert_eq!(out, vec![3, 4, 4, 5]);
    }

    #[test]
    fn shape_mismatch() {
        assert!(mode_correct(&[1, 2], &region_row(&[1])).is_err());
    }

    #[test]
    fn plural_variants() {
        let mut map = PluralMap::new();
        map.insert("person".into(), names(&["people"]));
        let e = expand_class_names(&names(&["person", "cat"]), &map, &[], None).unwrap();
        assert_eq!(e.rows, vec![names(&["person", "people"]), names(&["cat"])]);
        assert_eq!(e.fold, vec![0, 1]);
    }

    #[test]
    fn background_folds_back() {
        let e = expand_class_names(
            &names(&["background", "cat", "dog"]),
            &PluralMap::new(),
            &names(&["sky", "wall"]),
            Some(0),
        )
        .unwrap();
        assert_eq!(e.rows.len(), 4);
        assert_eq!(e.fold, vec![0, 0, 1, 2]);
        // every row predicted once folds onto the original class set
        let folded = e.fold_labels(&[0, 1, 2, 3]);
        assert_eq!(folded, vec![0, 0, 1, 2]);
    }

    #[test]
    fn duplicates_rejected() {
        let mut map = PluralMap::new();
        map.insert("cat".into(), names(&["dog"]));
        let err = expand_class_names(&names(&["cat", "dog"]), &map, &[], None).unwrap_err();
        assert!(matches!(err, Error::DuplicateName(n) if n == "dog"));
        let err = expand_class_names(
            &names(&["background", "sky"]),
            &PluralMap::new(),
            &names(&["sky"]),
            Some(0),
        );
        assert!(err.is_err());
    }

    #[test]
    fn bundled_lists_parse_and_expand_cleanly() {
        let map = default_plural_map();
        assert_eq!(map["person"], names(&["people"]));
        let voc: Vec<String> = serde_json::from_str(include_str!("../data/classes_voc21.json")).unwrap();
        let e = expand_class_names(&voc, &map, &bundled_background("voc").unwrap(), Some(0)).unwrap();
        assert_eq!(e.num_classes, 21);
        assert!(bundled_background("context").is_some());
        assert!(bundled_background("object").is_some());
        assert!(bundled_background("nope").is_none());
    }
}
