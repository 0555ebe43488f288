//! Evaluation statistics: classification accuracy, landmark error, and the
//! segmentation/detection pipeline (Otsu, connected components, nucleus
//! matching, Dice, precision/recall/F1).

mod segmentation;

pub use segmentation::{
    between_class_variance, connected_components, dice, nuclei_detection_counts, otsu_bin, otsu_threshold, prf1, ComponentLabeling,
    DetectionCounts, OTSU_BINS,
};

use crate::diffcore::Tensor;
use crate::error::{contract_err, shape_err, Result};

/// Fraction of positions where `predicted` equals `truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(contract_err!("accuracy of an empty prediction set"));
    }
    if predicted.len() != truth.len() {
        return Err(shape_err!("{} predictions for {} labels", predicted.len(), truth.len()));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Mean over samples of the summed squared coordinate differences.
pub fn landmark_error(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    if pred.shape() != gt.shape() || pred.ndim() != 2 {
        return Err(shape_err!("landmark error needs equal [N, 2K] shapes, got {:?} and {:?}", pred.shape(), gt.shape()));
    }
    let total: f64 = pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(total / pred.rows() as f64)
}
