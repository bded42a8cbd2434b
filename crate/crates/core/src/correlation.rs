//! Inter-patch correlations: the similarity matrix, the region-derived
//! interaction mask and the masked softmax attention built from them.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::RegionMaskSet;
use crate::providers::{ClipVisual, FeatureGrid, SourceTag};

/// Features the similarity matrix is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilaritySource {
    ClipQq,
    ClipKk,
    ClipVv,
    /// `Q_C + K_C`.
    ClipQkqk,
    /// `Q_D + K_D` from the self-supervised backbone.
    DinoQk,
    /// All-ones matrix.
    Ones,
}

impl SimilaritySource {
    pub const ALL: [SimilaritySource; 6] = [
        SimilaritySource::ClipQq,
        SimilaritySource::ClipKk,
        SimilaritySource::ClipVv,
        SimilaritySource::ClipQkqk,
        SimilaritySource::DinoQk,
        SimilaritySource::Ones,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SimilaritySource::ClipQq => "clip_qq",
            SimilaritySource::ClipKk => "clip_kk",
            SimilaritySource::ClipVv => "clip_vv",
            SimilaritySource::ClipQkqk => "clip_qkqk",
            SimilaritySource::DinoQk => "dino_qk",
            SimilaritySource::Ones => "ones",
        }
    }

    pub fn needs_dino(self) -> bool {
        self == SimilaritySource::DinoQk
    }
}

impl fmt::Display for SimilaritySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimilaritySource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SimilaritySource::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown similarity source `{s}`")))
    }
}

/// The grid a source reads from, or `None` for [`SimilaritySource::Ones`].
pub fn source_features(
    source: SimilaritySource,
    clip: &ClipVisual,
    dino_qk: Option<&FeatureGrid>,
) -> Result<Option<FeatureGrid>> {
    Ok(match source {
        SimilaritySource::ClipQq => Some(clip.q.clone()),
        SimilaritySource::ClipKk => Some(clip.k.clone()),
        SimilaritySource::ClipVv => Some(clip.v.clone()),
        SimilaritySource::ClipQkqk => Some(clip.q.add(&clip.k, SourceTag::ClipQ)?),
        SimilaritySource::DinoQk => Some(
            dino_qk
                .cloned()
                .ok_or_else(|| Error::invalid("dino_qk similarity requires DINO features"))?,
        ),
        SimilaritySource::Ones => None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Array2<f32>,
    pub source: SimilaritySource,
    /// Entries are cosine similarities.
    pub normalized: bool,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Mean over all N² entries.
    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }
}

/// Pairwise cosine similarity of the rows of `features`, or the all-ones
/// matrix for [`SimilaritySource::Ones`].
pub fn similarity(features: Option<&FeatureGrid>, source: SimilaritySource, n: usize) -> Result<SimilarityMatrix> {
    if source == SimilaritySource::Ones {
        return Ok(SimilarityMatrix {
            values: Array2::ones((n, n)),
            source,
            normalized: false,
        });
    }
    let f = features.ok_or_else(|| Error::invalid(format!("similarity source {source} needs a feature grid")))?;
    if f.len() != n {
        return Err(Error::shape(format!(
            "feature grid has {} patches, expected {n}",
            f.len()
        )));
    }
    let mut unit = f.data().clone();
    for (i, mut row) in unit.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm {
                what: format!("{source} features"),
                row: i,
            });
        }
        row.mapv_inplace(|v| (v as f64 / norm) as f32);
    }
    let mut values = unit.dot(&unit.t());
    for i in 0..n {
        values[[i, i]] = values[[i, i]].clamp(-1.0, 1.0);
        for j in i + 1..n {
            let v = values[[i, j]].clamp(-1.0, 1.0);
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    Ok(SimilarityMatrix {
        values,
        source,
        normalized: true,
    })
}

/// Boolean semantic matrix `E` (which patch pairs may interact).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMask {
    e: Array2<bool>,
}

impl InteractionMask {
    /// No restriction: every pair interacts.
    pub fn full(n: usize) -> Self {
        Self {
            e: Array2::from_elem((n, n), true),
        }
    }

    pub fn from_matrix(e: Array2<bool>) -> Result<Self> {
        if e.nrows() != e.ncols() {
            return Err(Error::shape("interaction mask must be square"));
        }
        if (0..e.nrows()).any(|i| !e[[i, i]]) {
            return Err(Error::invalid("interaction mask diagonal must be true"));
        }
        if e != e.t() {
            return Err(Error::invalid("interaction mask must be symmetric"));
        }
        Ok(Self { e })
    }

    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    pub fn e(&self) -> &Array2<bool> {
        &self.e
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.e[[i, j]]
    }

    /// Additive bias `A`: 0 where interaction is allowed, −∞ elsewhere.
    pub fn bias(&self) -> Array2<f32> {
        self.e.mapv(|b| if b { 0.0 } else { f32::NEG_INFINITY })
    }
}

/// Semantic matrix from merged regions:
///
/// `E = (m0·1ᵀ + 1·m0ᵀ) ⊙ [S > mean(S)] + Σ m̂ᵢ m̂ᵢᵀ`, binarized, with the
/// diagonal forced true.
///
/// Two patches of one region always interact, patches of two different
/// regions never do, and a pair with at least one unsegmented patch
/// interacts iff its similarity exceeds the global mean.
pub fn semantic_matrix(set: &RegionMaskSet, s: &SimilarityMatrix) -> Result<InteractionMask> {
    let labels = set
        .patch_labels()
        .ok_or_else(|| Error::invalid("region masks have not been rasterized to patches"))?;
    let n = labels.len();
    if s.n() != n || s.values.ncols() != n {
        return Err(Error::shape(format!(
            "similarity is {}x{}, masks have {n} patches",
            s.n(),
            s.values.ncols()
        )));
    }
    let mean = s.mean();
    let e = Array2::from_shape_fn((n, n), |(i, j)| {
        let (a, b) = (labels[i], labels[j]);
        i == j || (a != 0 && a == b) || ((a == 0 || b == 0) && s.values[[i, j]] as f64 > mean)
    });
    Ok(InteractionMask { e })
}

/// Softmax scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttentionMode {
    /// `(S + A) / sqrt(d)`.
    ScopeOnly { d: usize },
    /// `(S + A) / tau`.
    ValueRecon { tau: f32 },
}

impl AttentionMode {
    fn scale(self) -> Result<f64> {
        match self {
            AttentionMode::ScopeOnly { d } if d >= 1 => Ok(1.0 / (d as f64).sqrt()),
            AttentionMode::ValueRecon { tau } if tau > 0.0 && tau.is_finite() => Ok(1.0 / tau as f64),
            AttentionMode::ScopeOnly { d } => Err(Error::invalid(format!("attention dim {d} must be >= 1"))),
            AttentionMode::ValueRecon { tau } => Err(Error::invalid(format!("temperature {tau} must be > 0"))),
        }
    }
}

/// Row-wise masked softmax of the scaled similarity. Disallowed entries
/// are exactly zero.
pub fn masked_attention(s: &SimilarityMatrix, mask: &InteractionMask, mode: AttentionMode) -> Result<Array2<f32>> {
    let n = s.n();
    if mask.n() != n {
        return Err(Error::shape(format!("mask is {}x{0}, similarity {n}x{n}", mask.n())));
    }
    let scale = mode.scale()?;
    let mut attn = Array2::<f32>::zeros((n, n));
    let mut buf = vec![0.0f64; n];
    for i in 0..n {
        let srow = s.values.row(i);
        let erow = mask.e.row(i);
        let max = srow
            .iter()
            .zip(erow.iter())
            .filter(|(_, &e)| e)
            .map(|(&v, _)| v as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(max.is_finite(), "attention row {i} has no allowed entry");
        let mut sum = 0.0;
        for j in 0..n {
            buf[j] = if erow[j] {
                ((srow[j] as f64 - max) * scale).exp()
            } else {
                0.0
            };
            sum += buf[j];
        }
        for (a, b) in attn.row_mut(i).iter_mut().zip(&buf) {
            *a = (b / sum) as f32;
        }
    }
    Ok(attn)
}
