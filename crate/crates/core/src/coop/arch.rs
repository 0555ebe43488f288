//! Primary-network architecture descriptions and attach-point resolution.

use log::warn;

use crate::error::{config_err, Result};

/// One block of the primary network.
#[derive(Clone, Debug, PartialEq)]
pub enum BlockSpec {
    /// convolution, optional batch norm, ReLU, optional max-pool
    Conv {
        out_ch: usize,
        kernel: usize,
        pad: usize,
        batch_norm: bool,
        pool: Option<usize>,
    },
    Flatten,
    /// hidden dense layer followed by ReLU
    Dense { width: usize },
}

/// A primary network: hidden blocks followed by a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    pub name: String,
    /// Per-sample input shape, `[C, H, W]` or `[D]`.
    pub input_shape: Vec<usize>,
    pub blocks: Vec<BlockSpec>,
    pub output_width: usize,
}

/// Where the primary network is split into feature extractor and output head.
#[derive(Clone, Debug, PartialEq)]
pub struct AttachPoint {
    /// Number of hidden blocks in the feature extractor.
    pub index: usize,
    pub name: String,
    /// Set when the boundary lies before the first dense layer.
    pub warning: Option<String>,
}

pub const DEFAULT_ATTACH: &str = "after-final-dense-hidden";

impl ArchConfig {
    /// Convolutional MNIST classifier:
    /// conv(1->c1, 5x5, pad 2)-BN-ReLU-pool2, conv(c1->c2, 5x5, pad 2)-BN-ReLU-pool2,
    /// flatten, dense(->feature)-ReLU, dense(feature->10).
    pub fn mnist(conv1: usize, conv2: usize, feature: usize) -> Self {
        Self {
            name: "mnist".into(),
            input_shape: vec![1, 28, 28],
            blocks: vec![
                BlockSpec::Conv {
                    out_ch: conv1,
                    kernel: 5,
                    pad: 2,
                    batch_norm: true,
                    pool: Some(2),
                },
                BlockSpec::Conv {
                    out_ch: conv2,
                    kernel: 5,
                    pad: 2,
                    batch_norm: true,
                    pool: Some(2),
                },
                BlockSpec::Flatten,
                BlockSpec::Dense { width: feature },
            ],
            output_width: 10,
        }
    }

    /// The reference MNIST network with 32/64 channels and `F = 1024`.
    pub fn mnist_reference() -> Self {
        Self::mnist(32, 64, 1024)
    }

    /// Small convolutional regressor for square single-channel images whose
    /// side is divisible by four.
    pub fn small_conv(name: &str, side: usize, conv1: usize, conv2: usize, feature: usize, output_width: usize) -> Self {
        let conv = |out_ch| BlockSpec::Conv {
            out_ch,
            kernel: 3,
            pad: 1,
            batch_norm: true,
            pool: Some(2),
        };
        Self {
            name: name.into(),
            input_shape: vec![1, side, side],
            blocks: vec![conv(conv1), conv(conv2), BlockSpec::Flatten, BlockSpec::Dense { width: feature }],
            output_width,
        }
    }

    /// Names of the boundaries after each hidden block, plus `after-output`.
    pub fn boundary_names(&self) -> Vec<String> {
        let (mut conv, mut dense) = (0, 0);
        let mut names: Vec<String> = self
            .blocks
            .iter()
            .map(|b| match b {
                BlockSpec::Conv { .. } => {
                    conv += 1;
                    format!("after-conv{conv}")
                }
                BlockSpec::Flatten => "after-flatten".to_string(),
                BlockSpec::Dense { .. } => {
                    dense += 1;
                    format!("after-dense{dense}")
                }
            })
            .collect();
        names.push("after-output".into());
        names
    }

    fn first_dense(&self) -> Option<usize> {
        self.blocks.iter().position(|b| matches!(b, BlockSpec::Dense { .. }))
    }
}

/// Resolves a named boundary of `arch` to an attach point.
///
/// `after-final-dense-hidden` aliases the last hidden dense block. Boundaries
/// before the first dense layer are accepted but carry a warning, since a
/// cooperating auto-encoder that close to the input regularizes poorly.
pub fn select_attach_point(arch: &ArchConfig, requested: &str) -> Result<AttachPoint> {
    let names = arch.boundary_names();
    let index = if requested == DEFAULT_ATTACH {
        let last = arch
            .blocks
            .iter()
            .rposition(|b| matches!(b, BlockSpec::Dense { .. }))
            .ok_or_else(|| config_err!("architecture {} has no hidden dense layer", arch.name))?;
        last + 1
    } else {
        let pos = names
            .iter()
            .position(|n| n == requested)
            .ok_or_else(|| config_err!("unknown attach boundary {requested:?}; known: {DEFAULT_ATTACH}, {}", names.join(", ")))?;
        if pos == arch.blocks.len() {
            return Err(config_err!("{requested}: the output layer has no downstream head to attach before"));
        }
        pos + 1
    };
    let warning = match arch.first_dense() {
        Some(first) if index <= first => {
            let msg = format!(
                "attaching at {requested} places the auto-encoder before the first dense layer; early attachment regularizes poorly"
            );
            warn!("{msg}");
            Some(msg)
        }
        _ => None,
    };
    Ok(AttachPoint {
        index,
        name: names[index - 1].clone(),
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_attach_is_feature_vector() {
        let arch = ArchConfig::mnist_reference();
        let ap = select_attach_point(&arch, DEFAULT_ATTACH).unwrap();
        assert_eq!(ap.index, 4);
        assert_eq!(ap.name, "after-dense1");
        assert!(ap.warning.is_none());
    }

    #[test]
    fn early_attach_warns() {
        let arch = ArchConfig::mnist_reference();
        let ap = select_attach_point(&arch, "after-conv1").unwrap();
        assert_eq!(ap.index, 1);
        assert!(ap.warning.is_some());
    }

    #[test]
    fn output_boundary_rejected() {
        let arch = ArchConfig::mnist_reference();
        assert!(matches!(
            select_attach_point(&arch, "after-output"),
            Err(crate::Error::Config(_))
        ));
        assert!(select_attach_point(&arch, "after-conv9").is_err());
    }
}
