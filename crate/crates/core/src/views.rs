//! Three-plane 2D views of a segmented case.
//!
//! Every slice of every plane becomes a [`View`] with three channels: HU,
//! tumor mask and kidney mask. Views are weighted by their share of the
//! case's tumor voxels; the weights are normalized over the whole view list
//! so that they form one probability distribution.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use thiserror::Error;

use crate::seed::rng_from_seed;
use crate::volume_io::{SegmentationVolume, Volume, LABEL_KIDNEY, LABEL_TUMOR};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ViewError {
    #[error("no tumor voxels in any view")]
    NoTumorVoxels,
    #[error("sample count must be positive")]
    ZeroSampleCount,
    #[error("length mismatch: {preds} predictions, {weights} weights")]
    LengthMismatch { preds: usize, weights: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("image dims {image:?} do not match segmentation dims {seg:?}")]
    ShapeMismatch { image: [usize; 3], seg: [usize; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Plane {
    /// Fixed z; spans (x, y).
    Axial,
    /// Fixed y; spans (x, z).
    Coronal,
    /// Fixed x; spans (y, z).
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            Plane::Axial => "axial",
            Plane::Coronal => "coronal",
            Plane::Sagittal => "sagittal",
        }
    }

    /// (fixed axis, fast in-plane axis, slow in-plane axis)
    fn axes(self) -> (usize, usize, usize) {
        match self {
            Plane::Axial => (2, 0, 1),
            Plane::Coronal => (1, 0, 2),
            Plane::Sagittal => (0, 1, 2),
        }
    }
}

/// One 2D slice. Channels are stored fast-axis first; `shape` is
/// `(fast, slow)` extent.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub plane: Plane,
    pub index: usize,
    pub shape: (usize, usize),
    pub hu: Vec<f64>,
    pub tumor: Vec<u8>,
    pub kidney: Vec<u8>,
    pub tumor_voxels: usize,
}

impl View {
    pub fn pixel_count(&self) -> usize {
        self.shape.0 * self.shape.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub case_id: String,
    pub views: Vec<View>,
    pub weights: Vec<f64>,
}

impl ViewSet {
    /// Indices of views with a nonzero weight.
    pub fn tumor_view_indices(&self) -> Vec<usize> {
        (0..self.views.len())
            .filter(|&i| self.weights[i] > 0.0)
            .collect()
    }
}

/// Slice `image` and `seg` along all three planes (axial, coronal, sagittal,
/// each in ascending slice order).
pub fn extract_views(
    case_id: &str,
    image: &Volume,
    seg: &SegmentationVolume,
) -> Result<ViewSet, ViewError> {
    if image.dims != seg.dims {
        return Err(ViewError::ShapeMismatch {
            image: image.dims,
            seg: seg.dims,
        });
    }
    let dims = image.dims;
    let mut views = Vec::with_capacity(dims.iter().sum());
    for plane in Plane::ALL {
        let (fixed, fast, slow) = plane.axes();
        let shape = (dims[fast], dims[slow]);
        for index in 0..dims[fixed] {
            let n = shape.0 * shape.1;
            let mut hu = Vec::with_capacity(n);
            let mut tumor = Vec::with_capacity(n);
            let mut kidney = Vec::with_capacity(n);
            let mut coord = [0usize; 3];
            coord[fixed] = index;
            for s in 0..shape.1 {
                coord[slow] = s;
                for f in 0..shape.0 {
                    coord[fast] = f;
                    let at = image.index(coord[0], coord[1], coord[2]);
                    hu.push(image.voxels[at]);
                    let label = seg.labels[at];
                    tumor.push((label == LABEL_TUMOR) as u8);
                    kidney.push((label == LABEL_KIDNEY) as u8);
                }
            }
            let tumor_voxels = tumor.iter().map(|&t| t as usize).sum();
            views.push(View {
                plane,
                index,
                shape,
                hu,
                tumor,
                kidney,
                tumor_voxels,
            });
        }
    }
    let weights = tumor_fraction_weights(&views)?;
    Ok(ViewSet {
        case_id: case_id.to_string(),
        views,
        weights,
    })
}

/// Each view's share of the tumor voxels summed over all views.
pub fn tumor_fraction_weights(views: &[View]) -> Result<Vec<f64>, ViewError> {
    let counts: Vec<usize> = views.iter().map(|v| v.tumor_voxels).collect();
    weights_from_counts(&counts)
}

pub fn weights_from_counts(counts: &[usize]) -> Result<Vec<f64>, ViewError> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(ViewError::NoTumorVoxels);
    }
    let total = total as f64;
    Ok(counts.iter().map(|&c| c as f64 / total).collect())
}

/// Draw `n` view indices with replacement, proportional to the weights.
pub fn sample_views(set: &ViewSet, n: usize, seed: u64) -> Result<Vec<usize>, ViewError> {
    sample_indices(&set.weights, n, seed)
}

pub fn sample_indices(weights: &[f64], n: usize, seed: u64) -> Result<Vec<usize>, ViewError> {
    if n == 0 {
        return Err(ViewError::ZeroSampleCount);
    }
    let dist =
        WeightedIndex::new(weights).map_err(|e| ViewError::InvalidWeights(e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Weighted mean of per-view predictions.
///
/// Terms are summed in a canonical order (sorted by weight, then
/// prediction) so the result does not depend on how the views are listed.
pub fn aggregate_predictions(preds: &[f64], weights: &[f64]) -> Result<f64, ViewError> {
    if preds.len() != weights.len() {
        return Err(ViewError::LengthMismatch {
            preds: preds.len(),
            weights: weights.len(),
        });
    }
    if preds.is_empty() {
        return Err(ViewError::EmptyInput);
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(ViewError::InvalidWeights(format!("weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(ViewError::InvalidWeights(format!("weights sum to {total}")));
    }
    let mut terms: Vec<(f64, f64)> = weights
        .iter()
        .copied()
        .zip(preds.iter().copied())
        .filter(|(w, _)| *w > 0.0)
        .collect();
    terms.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let sum: f64 = terms.iter().map(|(w, p)| w * p).sum();
    // Clamp rounding drift so the result never leaves the prediction range.
    let lo = terms.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    let hi = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(sum.clamp(lo, hi))
}
