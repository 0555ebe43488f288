//! Central finite-difference checks of the reverse-mode gradients.

use super::graph::{Graph, NodeId, ParamId};
use super::tensor::Tensor;
use crate::error::Result;

/// Id of the probed leaf; chosen so it cannot collide with the parameters of
/// a network built inside `f`.
const LEAF: ParamId = ParamId(usize::MAX);

/// Largest relative discrepancy between the tape gradient of `f` at `x` and a
/// central difference with step `eps`.
///
/// `f` builds a scalar node from the differentiable leaf it is handed. The
/// relative error per coordinate is `|a - n| / max(|a| + |n|, 1e-12)`. At a
/// kink (ReLU at zero, a clamp boundary) the two derivatives legitimately
/// disagree, so probe points must stay away from them. A NaN anywhere in the
/// evaluation propagates into the result.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let analytic = {
        let mut g = Graph::new();
        let leaf = g.param(LEAF, x.clone());
        let out = f(&mut g, leaf)?;
        g.backward(out)?
            .get(LEAF)
            .cloned()
            .expect("leaf parameter always receives a gradient")
    };
    let eval = |point: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.param(LEAF, point.clone());
        let out = f(&mut g, leaf)?;
        g.value(out).item()
    };
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
        if rel.is_nan() {
            return Ok(f64::NAN);
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_gradient_of_sum() {
        let x = Tensor::new(&[4], vec![0.3, -1.2, 5.0, 2.5]).unwrap();
        let err = grad_check(|g, x| Ok(g.sum(x)), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn cubic_sum() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let err = grad_check(
            |g, x| {
                let sq = g.mul(x, x)?;
                let cube = g.mul(sq, x)?;
                Ok(g.sum(cube))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn kink_can_report_large_error() {
        // ReLU exactly at 0: the tape uses the zero subgradient, the central
        // difference sees slope 1/2.
        let x = Tensor::new(&[1], vec![0.0]).unwrap();
        let err = grad_check(
            |g, x| {
                let r = g.relu(x);
                Ok(g.sum(r))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err > 0.5);
    }

    #[test]
    fn nan_propagates() {
        let x = Tensor::new(&[1], vec![1.0]).unwrap();
        let err = grad_check(
            |g, x| {
                let nan = g.input(Tensor::scalar(f64::NAN));
                let p = g.mul(x, nan)?;
                Ok(g.sum(p))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err.is_nan());
    }
}
