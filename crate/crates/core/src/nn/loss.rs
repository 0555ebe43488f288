//! Task losses and the penalty terms used by the regularization variants.
//!
//! Each function appends a scalar node to the tape; [`loss_value`] reads the
//! value and per-sample breakdown back out.

use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::Result;

/// Stabilizer added to `||f||^2` in the relative reconstruction loss.
pub const RELATIVE_LOSS_EPS: f64 = 1e-8;

/// Scalar loss with optional per-sample contributions (whose mean is `value`).
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub per_sample: Option<Vec<f64>>,
}

pub fn loss_value(g: &Graph, node: NodeId) -> LossValue {
    LossValue {
        value: g.value(node).data()[0],
        per_sample: g.per_sample(node).map(<[f64]>::to_vec),
    }
}

/// Mean softmax cross-entropy, evaluated through log-sum-exp.
pub fn cross_entropy_loss(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    g.softmax_cross_entropy(logits, labels)
}

/// Mean over the batch of the squared Euclidean distance per sample.
pub fn mse_loss(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId> {
    g.squared_error(pred, target)
}

/// Mean over the batch of `||f - f_hat||^2 / max(||f||^2, eps)`.
///
/// Normalizing by the feature energy makes the loss invariant to a common
/// rescaling of `f` and `f_hat`, so it cannot be reduced by shrinking features.
pub fn relative_reconstruction_loss(g: &mut Graph, f: NodeId, f_hat: NodeId) -> Result<NodeId> {
    g.relative_reconstruction(f, f_hat, RELATIVE_LOSS_EPS)
}

/// Mean over the batch of `sum |z_i|` (subgradient zero at zero).
pub fn l1_latent_penalty(g: &mut Graph, z: NodeId) -> NodeId {
    g.abs_sum(z)
}

/// `sum_blocks sum w^2` over the given weight nodes; an empty list yields 0.
pub fn l2_weight_penalty(g: &mut Graph, weights: &[NodeId]) -> Result<NodeId> {
    if weights.is_empty() {
        return Ok(g.input(Tensor::scalar(0.0)));
    }
    let terms: Vec<(NodeId, f64)> = weights.iter().map(|&w| (g.sum_squares(w), 1.0)).collect();
    g.lin_comb(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ParamId;

    fn input(g: &mut Graph, shape: &[usize], v: &[f64]) -> NodeId {
        g.input(Tensor::new(shape, v.to_vec()).unwrap())
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let mut g = Graph::new();
        let l = input(&mut g, &[2, 10], &[0.3; 20]);
        let loss = cross_entropy_loss(&mut g, l, &[3, 7]).unwrap();
        assert!((loss_value(&g, loss).value - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_logit_does_not_overflow() {
        let mut g = Graph::new();
        let l = input(&mut g, &[1, 3], &[1000.0, 0.0, 0.0]);
        let loss = cross_entropy_loss(&mut g, l, &[0]).unwrap();
        let v = loss_value(&g, loss).value;
        assert!(v.is_finite() && v.abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let logits = [0.2, -1.0, 0.7, 1.5, 0.0, -0.3];
        let labels = [2usize, 0];
        let mut g = Graph::new();
        let l = g.param(ParamId(0), Tensor::new(&[2, 3], logits.to_vec()).unwrap());
        let loss = cross_entropy_loss(&mut g, l, &labels).unwrap();
        let grads = g.backward(loss).unwrap();
        let got = grads.get(ParamId(0)).unwrap().data();
        for n in 0..2 {
            let row = &logits[n * 3..n * 3 + 3];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for j in 0..3 {
                let want = (row[j].exp() / z - if j == labels[n] { 1.0 } else { 0.0 }) / 2.0;
                assert!((got[n * 3 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mse_values() {
        let mut g = Graph::new();
        let p = input(&mut g, &[1, 2], &[0., 0.]);
        let t = input(&mut g, &[1, 2], &[3., 4.]);
        let loss = mse_loss(&mut g, p, t).unwrap();
        assert_eq!(loss_value(&g, loss).value, 25.0);
        let same = mse_loss(&mut g, t, t).unwrap();
        assert_eq!(loss_value(&g, same).value, 0.0);
        let wrong = input(&mut g, &[2, 1], &[0., 0.]);
        assert!(mse_loss(&mut g, p, wrong).is_err());
    }

    #[test]
    fn relative_loss_reference_values() {
        let mut g = Graph::new();
        let f = input(&mut g, &[1, 2], &[1., 0.]);
        let fh = input(&mut g, &[1, 2], &[0., 1.]);
        let loss = relative_reconstruction_loss(&mut g, f, fh).unwrap();
        assert!((loss_value(&g, loss).value - 2.0).abs() < 1e-7);

        let zero = input(&mut g, &[1, 2], &[0., 0.]);
        let unity = relative_reconstruction_loss(&mut g, f, zero).unwrap();
        assert!((loss_value(&g, unity).value - 1.0).abs() < 1e-7);

        let perfect = relative_reconstruction_loss(&mut g, f, f).unwrap();
        assert_eq!(loss_value(&g, perfect).value, 0.0);
    }

    #[test]
    fn per_sample_mean_equals_value() {
        let mut g = Graph::new();
        let f = input(&mut g, &[3, 2], &[1., 2., -1., 0.5, 3., 3.]);
        let fh = input(&mut g, &[3, 2], &[0.5, 2., 0., 0., 1., 3.]);
        let loss = relative_reconstruction_loss(&mut g, f, fh).unwrap();
        let lv = loss_value(&g, loss);
        let ps = lv.per_sample.unwrap();
        assert!((ps.iter().sum::<f64>() / 3.0 - lv.value).abs() < 1e-12);
    }

    #[test]
    fn l1_and_l2_values() {
        let mut g = Graph::new();
        let z = input(&mut g, &[1, 3], &[1., -2., 3.]);
        let l1 = l1_latent_penalty(&mut g, z);
        assert_eq!(loss_value(&g, l1).value, 6.0);
        let zeros = input(&mut g, &[2, 3], &[0.; 6]);
        let l1z = l1_latent_penalty(&mut g, zeros);
        assert_eq!(loss_value(&g, l1z).value, 0.0);

        let w = input(&mut g, &[2], &[1., 2.]);
        let l2 = l2_weight_penalty(&mut g, &[w]).unwrap();
        assert_eq!(g.value(l2).data(), &[5.0]);
        let l2z = l2_weight_penalty(&mut g, &[zeros]).unwrap();
        assert_eq!(g.value(l2z).data(), &[0.0]);
        let none = l2_weight_penalty(&mut g, &[]).unwrap();
        assert_eq!(g.value(none).data(), &[0.0]);
    }
}
