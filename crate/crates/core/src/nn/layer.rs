use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::init::xavier_tensor;
use super::params::{ParamGroup, ParamRole, ParamStore};
use crate::diffcore::{Graph, NodeId, ParamId, Tensor};
use crate::error::{config_err, shape_err, Result};

pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Whether a forward pass trains (batch statistics, dropout active) or infers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Dense {
        fan_in: usize,
        fan_out: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        size: usize,
    },
    Relu,
    BatchNorm {
        channels: usize,
        momentum: f64,
        eps: f64,
    },
    Dropout {
        p: f64,
    },
    Flatten,
}

/// Running mean and (unbiased) variance tracked by a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-pass state threaded through layer forwards.
pub struct ForwardCtx {
    pub mode: Mode,
    rng: Option<ChaCha8Rng>,
}

impl ForwardCtx {
    /// Training pass drawing dropout masks from `rng`.
    pub fn train(rng: ChaCha8Rng) -> Self {
        Self {
            mode: Mode::Train,
            rng: Some(rng),
        }
    }

    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            rng: None,
        }
    }
}

/// One layer: its kind, the ids of its parameter blocks and any running state.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub params: Vec<ParamId>,
    pub running: Option<RunningStats>,
}

impl Layer {
    fn stateless(kind: LayerKind) -> Self {
        Self {
            kind,
            params: Vec::new(),
            running: None,
        }
    }

    /// Dense layer with weight `[fan_in, fan_out]` (Xavier) and zero bias.
    pub fn dense(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, group: ParamGroup, seed: u64) -> Result<Self> {
        let w = xavier_tensor(&[fan_in, fan_out], fan_in, fan_out, seed)?;
        let b = Tensor::zeros(&[fan_out])?;
        let params = vec![
            store.add(format!("{name}.weight"), w, ParamRole::Weight, group),
            store.add(format!("{name}.bias"), b, ParamRole::Bias, group),
        ];
        Ok(Self {
            kind: LayerKind::Dense { fan_in, fan_out },
            params,
            running: None,
        })
    }

    /// Square-kernel convolution with kernel `[out_ch, in_ch, k, k]`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        group: ParamGroup,
        seed: u64,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(config_err!("{name}: kernel and stride must be positive"));
        }
        let area = kernel * kernel;
        let w = xavier_tensor(&[out_ch, in_ch, kernel, kernel], in_ch * area, out_ch * area, seed)?;
        let b = Tensor::zeros(&[out_ch])?;
        let params = vec![
            store.add(format!("{name}.weight"), w, ParamRole::Weight, group),
            store.add(format!("{name}.bias"), b, ParamRole::Bias, group),
        ];
        Ok(Self {
            kind: LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            },
            params,
            running: None,
        })
    }

    pub fn batch_norm(store: &mut ParamStore, name: &str, channels: usize, group: ParamGroup) -> Result<Self> {
        Self::batch_norm_with(store, name, channels, BATCH_NORM_MOMENTUM, BATCH_NORM_EPS, group)
    }

    pub fn batch_norm_with(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        momentum: f64,
        eps: f64,
        group: ParamGroup,
    ) -> Result<Self> {
        if eps <= 0.0 {
            return Err(config_err!("{name}: batch-norm epsilon must be positive"));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(config_err!("{name}: batch-norm momentum must lie in [0, 1]"));
        }
        let params = vec![
            store.add(format!("{name}.scale"), Tensor::full(&[channels], 1.0)?, ParamRole::Scale, group),
            store.add(format!("{name}.shift"), Tensor::zeros(&[channels])?, ParamRole::Shift, group),
        ];
        Ok(Self {
            kind: LayerKind::BatchNorm {
                channels,
                momentum,
                eps,
            },
            params,
            running: Some(RunningStats {
                mean: vec![0.0; channels],
                var: vec![1.0; channels],
            }),
        })
    }

    pub fn dropout(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(config_err!("dropout rate {p} outside [0, 1)"));
        }
        Ok(Self::stateless(LayerKind::Dropout { p }))
    }

    pub fn relu() -> Self {
        Self::stateless(LayerKind::Relu)
    }

    pub fn max_pool2d(size: usize) -> Self {
        Self::stateless(LayerKind::MaxPool2d { size })
    }

    pub fn flatten() -> Self {
        Self::stateless(LayerKind::Flatten)
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match &self.kind {
            LayerKind::Dense { fan_in, fan_out } => {
                if input != [*fan_in] {
                    return Err(shape_err!("dense layer expects [{fan_in}], got {input:?}"));
                }
                Ok(vec![*fan_out])
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => {
                if input.len() != 3 || input[0] != *in_ch {
                    return Err(shape_err!("conv layer expects [{in_ch}, H, W], got {input:?}"));
                }
                if input[1] + 2 * pad < *kernel || input[2] + 2 * pad < *kernel {
                    return Err(shape_err!("kernel {kernel} does not fit {input:?} with pad {pad}"));
                }
                Ok(vec![
                    *out_ch,
                    (input[1] + 2 * pad - kernel) / stride + 1,
                    (input[2] + 2 * pad - kernel) / stride + 1,
                ])
            }
            LayerKind::MaxPool2d { size } => {
                if input.len() != 3 || input[1] < *size || input[2] < *size {
                    return Err(shape_err!("max-pool {size} cannot reduce {input:?}"));
                }
                Ok(vec![input[0], input[1] / size, input[2] / size])
            }
            LayerKind::BatchNorm { channels, .. } => {
                if input.first() != Some(channels) {
                    return Err(shape_err!("batch norm over {channels} channels, got {input:?}"));
                }
                Ok(input.to_vec())
            }
            LayerKind::Relu | LayerKind::Dropout { .. } => Ok(input.to_vec()),
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Appends this layer's computation to the tape.
    pub fn forward(&mut self, g: &mut Graph, store: &ParamStore, x: NodeId, ctx: &mut ForwardCtx) -> Result<NodeId> {
        match &self.kind {
            LayerKind::Dense { fan_in, .. } => {
                let shape = g.value(x).shape();
                if shape.len() != 2 || shape[1] != *fan_in {
                    return Err(shape_err!("dense layer expects [batch, {fan_in}], got {shape:?}"));
                }
                let w = g.param(self.params[0], store.get(self.params[0]).clone());
                let b = g.param(self.params[1], store.get(self.params[1]).clone());
                let xw = g.matmul(x, w)?;
                g.add_row_vector(xw, b)
            }
            LayerKind::Conv2d { stride, pad, .. } => {
                let w = g.param(self.params[0], store.get(self.params[0]).clone());
                let b = g.param(self.params[1], store.get(self.params[1]).clone());
                g.conv2d(x, w, b, *stride, *pad)
            }
            LayerKind::MaxPool2d { size } => g.max_pool2d(x, *size),
            LayerKind::Relu => Ok(g.relu(x)),
            LayerKind::Flatten => g.flatten(x),
            LayerKind::Dropout { p } => {
                let p = *p;
                if ctx.mode == Mode::Eval || p == 0.0 {
                    return Ok(x);
                }
                let rng = ctx
                    .rng
                    .as_mut()
                    .expect("training context always carries a generator");
                let keep = 1.0 / (1.0 - p);
                let mask: Vec<f64> = (0..g.value(x).len())
                    .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                    .collect();
                g.mask_mul(x, mask)
            }
            LayerKind::BatchNorm { momentum, eps, .. } => {
                let (momentum, eps) = (*momentum, *eps);
                let gamma = g.param(self.params[0], store.get(self.params[0]).clone());
                let beta = g.param(self.params[1], store.get(self.params[1]).clone());
                let running = self.running.as_mut().expect("batch norm keeps running stats");
                match ctx.mode {
                    Mode::Train => {
                        let (out, stats) = g.batch_norm(x, gamma, beta, eps)?;
                        let unbias = stats.count as f64 / (stats.count as f64 - 1.0);
                        for c in 0..stats.mean.len() {
                            running.mean[c] = (1.0 - momentum) * running.mean[c] + momentum * stats.mean[c];
                            running.var[c] = (1.0 - momentum) * running.var[c] + momentum * stats.var[c] * unbias;
                        }
                        Ok(out)
                    }
                    Mode::Eval => g.channel_affine(x, gamma, beta, &running.mean, &running.var, eps),
                }
            }
        }
    }
}

/// Ordered chain of layers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, g: &mut Graph, store: &ParamStore, mut x: NodeId, ctx: &mut ForwardCtx) -> Result<NodeId> {
        for layer in &mut self.layers {
            x = layer.forward(g, store, x, ctx)?;
        }
        Ok(x)
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |shape, l| l.output_shape(&shape))
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.params.iter().copied()).collect()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn dense_with(w: &[f64], fan_in: usize, fan_out: usize, b: &[f64]) -> (ParamStore, Layer) {
        let mut store = ParamStore::new();
        let mut layer = Layer::dense(&mut store, "d", fan_in, fan_out, ParamGroup::Primary, 0).unwrap();
        *store.get_mut(layer.params[0]) = Tensor::new(&[fan_in, fan_out], w.to_vec()).unwrap();
        *store.get_mut(layer.params[1]) = Tensor::new(&[fan_out], b.to_vec()).unwrap();
        layer.running = None;
        (store, layer)
    }

    #[test]
    fn dense_identity() {
        let (store, mut layer) = dense_with(&[1., 0., 0., 1.], 2, 2, &[0., 0.]);
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[2, 2], vec![3., -1., 0.5, 2.]).unwrap());
        let y = layer.forward(&mut g, &store, x, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(g.value(y).data(), &[3., -1., 0.5, 2.]);
    }

    #[test]
    fn dense_hand_computation() {
        let (store, mut layer) = dense_with(&[1., 1.], 2, 1, &[0.5]);
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[1, 2], vec![1., 1.]).unwrap());
        let y = layer.forward(&mut g, &store, x, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(g.value(y).data(), &[2.5]);
    }

    #[test]
    fn dense_width_mismatch() {
        let (store, mut layer) = dense_with(&[1., 1.], 2, 1, &[0.5]);
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[1, 3], vec![1., 1., 1.]).unwrap());
        assert!(layer.forward(&mut g, &store, x, &mut ForwardCtx::eval()).is_err());
    }

    #[test]
    fn conv_identity_kernel() {
        let mut store = ParamStore::new();
        let mut layer = Layer::conv2d(&mut store, "c", 2, 2, 1, 1, 0, ParamGroup::Primary, 0).unwrap();
        *store.get_mut(layer.params[0]) = Tensor::new(&[2, 2, 1, 1], vec![1., 0., 0., 1.]).unwrap();
        let mut g = Graph::new();
        let input: Vec<f64> = (0..18).map(|v| v as f64 * 0.5 - 3.0).collect();
        let x = g.input(Tensor::new(&[1, 2, 3, 3], input.clone()).unwrap());
        let y = layer.forward(&mut g, &store, x, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(g.value(y).data(), &input[..]);
    }

    #[test]
    fn conv_box_sum() {
        let mut store = ParamStore::new();
        let mut layer = Layer::conv2d(&mut store, "c", 1, 1, 3, 1, 0, ParamGroup::Primary, 0).unwrap();
        *store.get_mut(layer.params[0]) = Tensor::full(&[1, 1, 3, 3], 1.0).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 1, 5, 5], 1.0).unwrap());
        let y = layer.forward(&mut g, &store, x, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn batch_norm_train_normalizes() {
        let mut store = ParamStore::new();
        let mut layer = Layer::batch_norm(&mut store, "bn", 2, ParamGroup::Primary).unwrap();
        let data: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 + 0.3 * i as f64).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[4, 2, 2], data).unwrap());
        let mut ctx = ForwardCtx::train(rng::stream(0, "t", 0));
        let y = layer.forward(&mut g, &store, x, &mut ctx).unwrap();
        let out = g.value(y).data();
        for c in 0..2 {
            let vals: Vec<f64> = (0..4).flat_map(|n| (0..2).map(move |s| (n * 2 + c) * 2 + s)).map(|i| out[i]).collect();
            let mean = vals.iter().sum::<f64>() / 8.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3, "{var}");
        }
        let running = layer.running.as_ref().unwrap();
        assert_ne!(running.mean, vec![0.0, 0.0]);
    }

    #[test]
    fn batch_norm_eval_identity_stats() {
        let mut store = ParamStore::new();
        let mut layer = Layer::batch_norm(&mut store, "bn", 3, ParamGroup::Primary).unwrap();
        let data = vec![0.5, -2.0, 3.0, 1.0, 0.0, -1.0];
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[2, 3], data.clone()).unwrap());
        let y = layer.forward(&mut g, &store, x, &mut ForwardCtx::eval()).unwrap();
        for (a, b) in g.value(y).data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn batch_norm_train_rejects_single_sample() {
        let mut store = ParamStore::new();
        let mut layer = Layer::batch_norm(&mut store, "bn", 3, ParamGroup::Primary).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[1, 3], vec![1., 2., 3.]).unwrap());
        let mut ctx = ForwardCtx::train(rng::stream(0, "t", 0));
        assert!(matches!(
            layer.forward(&mut g, &store, x, &mut ctx),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn dropout_zero_rate_and_eval_are_identity() {
        let store = ParamStore::new();
        let data: Vec<f64> = (0..10).map(|v| v as f64).collect();
        for p in [0.0, 0.5] {
            let mut layer = Layer::dropout(p).unwrap();
            let mut g = Graph::new();
            let x = g.input(Tensor::new(&[2, 5], data.clone()).unwrap());
            let y = layer.forward(&mut g, &store, x, &mut ForwardCtx::eval()).unwrap();
            assert_eq!(g.value(y).data(), &data[..]);
        }
        let mut layer = Layer::dropout(0.0).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[2, 5], data.clone()).unwrap());
        let mut ctx = ForwardCtx::train(rng::stream(1, "d", 0));
        let y = layer.forward(&mut g, &store, x, &mut ctx).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn inverted_dropout_preserves_mean() {
        let store = ParamStore::new();
        let mut layer = Layer::dropout(0.5).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[100_000, 1], 1.0).unwrap());
        let mut ctx = ForwardCtx::train(rng::stream(3, "d", 0));
        let y = layer.forward(&mut g, &store, x, &mut ctx).unwrap();
        let mean = g.value(y).data().iter().sum::<f64>() / 100_000.0;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn dropout_rate_validated() {
        assert!(Layer::dropout(1.0).is_err());
        assert!(Layer::dropout(-0.1).is_err());
    }
}
