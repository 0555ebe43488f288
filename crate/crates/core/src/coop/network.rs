use std::fmt;

use super::arch::{select_attach_point, ArchConfig, AttachPoint, BlockSpec};
use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{config_err, contract_err, shape_err, Result};
use crate::nn::{self, ForwardCtx, Layer, ParamGroup, ParamRole, ParamStore, Sequential};
use crate::rng::derive_seed;

/// The regularization variants under comparison.
///
/// The weight of the reconstruction term (alpha) lives in the training
/// schedule because it changes between the burn-in and joint phases.
#[derive(Clone, Debug, PartialEq)]
pub enum NetworkVariant {
    Baseline,
    /// Cooperating auto-encoder with bottleneck width `bottleneck`.
    CoopSubNet { bottleneck: usize },
    /// Cooperating auto-encoder plus an L1 penalty of weight `l1` on the latent code.
    CoopSubNetL1 { bottleneck: usize, l1: f64 },
    /// Dropout with rate `p` right after the feature vector.
    Dropout { p: f64 },
    /// Weight decay of strength `weight_decay` on primary weights.
    L2Reg { weight_decay: f64 },
    /// Width-`bottleneck` dense layer spliced into the primary path.
    HardCon { bottleneck: usize },
}

impl NetworkVariant {
    pub const NAMES: [&'static str; 6] = ["baseline", "coopsubnet", "coopsubnet-l1", "dropout", "l2reg", "hardcon"];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::CoopSubNet { .. } => "coopsubnet",
            Self::CoopSubNetL1 { .. } => "coopsubnet-l1",
            Self::Dropout { .. } => "dropout",
            Self::L2Reg { .. } => "l2reg",
            Self::HardCon { .. } => "hardcon",
        }
    }

    /// True for variants that carry a cooperating auto-encoder.
    pub fn is_coop(&self) -> bool {
        matches!(self, Self::CoopSubNet { .. } | Self::CoopSubNetL1 { .. })
    }

    pub fn bottleneck(&self) -> Option<usize> {
        match self {
            Self::CoopSubNet { bottleneck } | Self::CoopSubNetL1 { bottleneck, .. } | Self::HardCon { bottleneck } => {
                Some(*bottleneck)
            }
            _ => None,
        }
    }
}

impl fmt::Display for NetworkVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Primary network split at the attach point, plus the optional auto-encoder.
#[derive(Clone, Debug)]
pub struct CompositeNetwork {
    pub store: ParamStore,
    pub feature_extractor: Sequential,
    pub output_head: Sequential,
    pub encoder: Option<Sequential>,
    pub decoder: Option<Sequential>,
    pub attach: AttachPoint,
    pub input_shape: Vec<usize>,
    /// Per-sample shape of the activation at the attach point.
    pub feature_shape: Vec<usize>,
    /// F: flattened width of the feature vector.
    pub feature_width: usize,
    pub variant: NetworkVariant,
}

/// Tape nodes produced by one composite forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardResult {
    pub primary_output: NodeId,
    /// Flattened feature vector `[batch, F]`.
    pub f: NodeId,
    pub z: Option<NodeId>,
    pub f_hat: Option<NodeId>,
}

/// Supervision for the primary loss.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    /// Class indices, scored with softmax cross-entropy.
    Classes(&'a [usize]),
    /// Real-valued targets `[batch, O]`, scored with squared error.
    Values(&'a Tensor),
}

/// Total loss node with its additive terms; the weighted terms sum to `total`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeLoss {
    pub node: NodeId,
    pub total: f64,
    pub primary: f64,
    /// Unweighted mean relative reconstruction loss.
    pub coop: Option<f64>,
    pub alpha: f64,
    /// Unweighted latent L1 penalty.
    pub l1: Option<f64>,
    pub l1_weight: f64,
    /// Unweighted sum of squared primary weights.
    pub weight_decay: Option<f64>,
    pub weight_decay_coef: f64,
}

impl CompositeLoss {
    /// `(label, weighted value)` for each term present.
    pub fn weighted_terms(&self) -> Vec<(&'static str, f64)> {
        let mut terms = vec![("primary", self.primary)];
        if let Some(c) = self.coop {
            terms.push(("coop", self.alpha * c));
        }
        if let Some(l) = self.l1 {
            terms.push(("l1", self.l1_weight * l));
        }
        if let Some(w) = self.weight_decay {
            terms.push(("weight_decay", self.weight_decay_coef * w));
        }
        terms
    }
}

fn block_layers(
    store: &mut ParamStore,
    block: &BlockSpec,
    name: &str,
    in_shape: &[usize],
    seed: u64,
) -> Result<Vec<Layer>> {
    let group = ParamGroup::Primary;
    let layer_seed = derive_seed(seed, name);
    Ok(match block {
        BlockSpec::Conv {
            out_ch,
            kernel,
            pad,
            batch_norm,
            pool,
        } => {
            if in_shape.len() != 3 {
                return Err(config_err!("{name}: convolution needs [C, H, W] input, got {in_shape:?}"));
            }
            let mut layers = vec![Layer::conv2d(store, name, in_shape[0], *out_ch, *kernel, 1, *pad, group, layer_seed)?];
            if *batch_norm {
                layers.push(Layer::batch_norm(store, &format!("{name}.bn"), *out_ch, group)?);
            }
            layers.push(Layer::relu());
            if let Some(size) = pool {
                layers.push(Layer::max_pool2d(*size));
            }
            layers
        }
        BlockSpec::Flatten => vec![Layer::flatten()],
        BlockSpec::Dense { width } => {
            if in_shape.len() != 1 {
                return Err(config_err!("{name}: dense layer needs flat input, got {in_shape:?}"));
            }
            vec![
                Layer::dense(store, name, in_shape[0], *width, group, layer_seed)?,
                Layer::relu(),
            ]
        }
    })
}

/// Builds the composite network for `variant`, Xavier-initialized from `seed`.
///
/// Primary layers are seeded by name, so every variant built from the same
/// seed starts from identical primary parameters.
pub fn build_composite(arch: &ArchConfig, attach: &str, variant: NetworkVariant, seed: u64) -> Result<CompositeNetwork> {
    let attach = select_attach_point(arch, attach)?;
    let mut store = ParamStore::new();
    let names = arch.boundary_names();
    let mut shape = arch.input_shape.clone();
    let mut extractor = Vec::new();
    let mut head = Vec::new();
    let mut feature_shape = Vec::new();
    for (i, block) in arch.blocks.iter().enumerate() {
        let name = names[i].trim_start_matches("after-").to_string();
        let layers = block_layers(&mut store, block, &name, &shape, seed)?;
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        if i < attach.index {
            extractor.extend(layers);
        } else {
            head.extend(layers);
        }
        if i + 1 == attach.index {
            feature_shape = shape.clone();
        }
    }
    if shape.len() != 1 {
        return Err(config_err!("{}: output layer needs flat input, got {shape:?}", arch.name));
    }
    head.push(Layer::dense(
        &mut store,
        "output",
        shape[0],
        arch.output_width,
        ParamGroup::Primary,
        derive_seed(seed, "output"),
    )?);
    let feature_width: usize = feature_shape.iter().product();

    let (mut encoder, mut decoder) = (None, None);
    match &variant {
        NetworkVariant::Baseline => {}
        NetworkVariant::CoopSubNet { bottleneck } | NetworkVariant::CoopSubNetL1 { bottleneck, .. } => {
            let l = *bottleneck;
            if l == 0 || l >= feature_width {
                return Err(config_err!("bottleneck L = {l} must satisfy 1 <= L < F = {feature_width}"));
            }
            if let NetworkVariant::CoopSubNetL1 { l1, .. } = &variant {
                if *l1 < 0.0 {
                    return Err(config_err!("latent L1 weight must be non-negative, got {l1}"));
                }
            }
            encoder = Some(Sequential::new(vec![
                Layer::dense(&mut store, "coop.encoder", feature_width, l, ParamGroup::Coop, derive_seed(seed, "coop.encoder"))?,
                Layer::relu(),
            ]));
            decoder = Some(Sequential::new(vec![Layer::dense(
                &mut store,
                "coop.decoder",
                l,
                feature_width,
                ParamGroup::Coop,
                derive_seed(seed, "coop.decoder"),
            )?]));
        }
        NetworkVariant::Dropout { p } => {
            head.insert(0, Layer::dropout(*p)?);
        }
        NetworkVariant::L2Reg { weight_decay } => {
            if *weight_decay < 0.0 {
                return Err(config_err!("weight decay must be non-negative, got {weight_decay}"));
            }
        }
        NetworkVariant::HardCon { bottleneck } => {
            let l = *bottleneck;
            if feature_shape.len() != 1 {
                return Err(config_err!("hardcon needs a flat attach point, {} yields {feature_shape:?}", attach.name));
            }
            if l == 0 || l >= feature_width {
                return Err(config_err!("bottleneck L = {l} must satisfy 1 <= L < F = {feature_width}"));
            }
            extractor.push(Layer::dense(&mut store, "hardcon.down", feature_width, l, ParamGroup::Primary, derive_seed(seed, "hardcon.down"))?);
            extractor.push(Layer::relu());
            extractor.push(Layer::dense(&mut store, "hardcon.up", l, feature_width, ParamGroup::Primary, derive_seed(seed, "hardcon.up"))?);
        }
    }
    Ok(CompositeNetwork {
        store,
        feature_extractor: Sequential::new(extractor),
        output_head: Sequential::new(head),
        encoder,
        decoder,
        attach,
        input_shape: arch.input_shape.clone(),
        feature_shape,
        feature_width,
        variant,
    })
}

impl CompositeNetwork {
    pub fn bottleneck(&self) -> Option<usize> {
        self.variant.bottleneck()
    }

    /// Records the composite forward pass for a batch `x` of shape `[batch, input_shape..]`.
    ///
    /// Eval mode bypasses dropout and normalizes with running statistics.
    pub fn forward(&mut self, g: &mut Graph, x: NodeId, ctx: &mut ForwardCtx) -> Result<ForwardResult> {
        let shape = g.value(x).shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(shape_err!("network expects [batch, {:?}], got {shape:?}", self.input_shape));
        }
        let features = self.feature_extractor.forward(g, &self.store, x, ctx)?;
        let f = if g.value(features).ndim() == 2 {
            features
        } else {
            g.flatten(features)?
        };
        let primary_output = self.output_head.forward(g, &self.store, features, ctx)?;
        let (mut z, mut f_hat) = (None, None);
        if let (Some(enc), Some(dec)) = (self.encoder.as_mut(), self.decoder.as_mut()) {
            let code = enc.forward(g, &self.store, f, ctx)?;
            f_hat = Some(dec.forward(g, &self.store, code, ctx)?);
            z = Some(code);
        }
        Ok(ForwardResult {
            primary_output,
            f,
            z,
            f_hat,
        })
    }

    /// Primary-network weight blocks (dense matrices and conv kernels).
    pub fn primary_weights(&self) -> Vec<crate::diffcore::ParamId> {
        self.store
            .iter()
            .filter(|(_, e)| e.group == ParamGroup::Primary && e.role == ParamRole::Weight)
            .map(|(id, _)| id)
            .collect()
    }

    /// Appends the composite loss `L_P + alpha * L_C` (plus the variant's
    /// penalty terms) to the tape.
    ///
    /// For CoopSubNet-L1 the latent term is `l1 * mean_n sum_i |z_i|`; for
    /// L2Reg the weight-decay term is `weight_decay * sum w^2`.
    pub fn composite_loss(&self, g: &mut Graph, result: &ForwardResult, target: Target<'_>, alpha: f64) -> Result<CompositeLoss> {
        if alpha < 0.0 {
            return Err(contract_err!("alpha must be non-negative, got {alpha}"));
        }
        let primary_node = match target {
            Target::Classes(labels) => nn::cross_entropy_loss(g, result.primary_output, labels)?,
            Target::Values(values) => {
                let t = g.input(values.clone());
                nn::mse_loss(g, result.primary_output, t)?
            }
        };
        let primary = g.value(primary_node).data()[0];
        let mut terms = vec![(primary_node, 1.0)];
        let mut loss = CompositeLoss {
            node: primary_node,
            total: primary,
            primary,
            coop: None,
            alpha,
            l1: None,
            l1_weight: 0.0,
            weight_decay: None,
            weight_decay_coef: 0.0,
        };
        if self.variant.is_coop() {
            let f_hat = result
                .f_hat
                .ok_or_else(|| contract_err!("{} forward result lacks a reconstruction", self.variant))?;
            let c = nn::relative_reconstruction_loss(g, result.f, f_hat)?;
            loss.coop = Some(g.value(c).data()[0]);
            terms.push((c, alpha));
        }
        if let NetworkVariant::CoopSubNetL1 { l1, .. } = self.variant {
            let z = result
                .z
                .ok_or_else(|| contract_err!("{} forward result lacks a latent code", self.variant))?;
            let p = nn::l1_latent_penalty(g, z);
            loss.l1 = Some(g.value(p).data()[0]);
            loss.l1_weight = l1;
            terms.push((p, l1));
        }
        if let NetworkVariant::L2Reg { weight_decay } = self.variant {
            let nodes: Vec<NodeId> = self
                .primary_weights()
                .into_iter()
                .map(|id| g.param(id, self.store.get(id).clone()))
                .collect();
            let p = nn::l2_weight_penalty(g, &nodes)?;
            loss.weight_decay = Some(g.value(p).data()[0]);
            loss.weight_decay_coef = weight_decay;
            terms.push((p, weight_decay));
        }
        if terms.len() > 1 {
            loss.node = g.lin_comb(&terms)?;
            loss.total = g.value(loss.node).data()[0];
        }
        Ok(loss)
    }
}
