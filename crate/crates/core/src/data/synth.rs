//! Seeded synthetic tasks: landmark-like regression on a low-dimensional
//! manifold, and nucleus-like blob segmentation.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::binary_map::{dilate, BinaryMap};
use super::dataset::{Dataset, Provenance, Targets};
use crate::diffcore::Tensor;
use crate::error::{config_err, contract_err, Result};
use crate::rng;

/// Side of the rendered regression images.
pub const MANIFOLD_IMAGE: usize = 16;
const LANDMARK_SIGMA: f64 = 1.0;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    let u: f64 = rng.gen();
    let v: f64 = rng.gen();
    (-2.0 * (1.0 - u).ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Linear and quadratic monomials of `z`: `d (d + 3) / 2` features.
fn quadratic_features(z: &[f64]) -> Vec<f64> {
    let mut phi = z.to_vec();
    for i in 0..z.len() {
        for j in i..z.len() {
            phi.push(z[i] * z[j]);
        }
    }
    phi
}

pub fn quadratic_rank(latent_dim: usize) -> usize {
    latent_dim * (latent_dim + 3) / 2
}

/// Share of target variance captured by the top `k` principal components.
pub fn pca_explained(targets: &Tensor, k: usize) -> f64 {
    let (n, d) = (targets.rows(), targets.row_len());
    let x = DMatrix::from_row_slice(n, d, targets.data());
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().map(|v| v.max(0.0)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    if total == 0.0 {
        return 1.0;
    }
    eig.iter().take(k).sum::<f64>() / total
}

/// `n` samples whose targets are a fixed random quadratic embedding of a
/// uniform latent cube `[-1, 1]^latent_dim` into `ambient_dim` coordinates
/// (pairs read as landmark offsets from the centre of a 16x16 frame), and whose
/// inputs are Gaussian spots rendered at those landmarks plus `noise`-scaled
/// pixel noise.
///
/// Centred targets keep the output bias near zero; absolute pixel positions
/// would cost thousands of Adam steps just to learn the offset.
pub fn synth_manifold_regression(n: usize, latent_dim: usize, ambient_dim: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if latent_dim == 0 || latent_dim >= ambient_dim {
        return Err(config_err!("need 0 < latent_dim ({latent_dim}) < ambient_dim ({ambient_dim})"));
    }
    if ambient_dim % 2 != 0 {
        return Err(config_err!("ambient_dim {ambient_dim} must be even (x, y pairs)"));
    }
    if n < 2 || !(noise >= 0.0) {
        return Err(config_err!("need n >= 2 and noise >= 0"));
    }
    let m = quadratic_rank(latent_dim);
    let mut emb_rng = rng::stream(seed, "manifold-embedding", 0);
    // Rows normalized by their L1 norm keep every coordinate inside the frame.
    let a: Vec<Vec<f64>> = (0..ambient_dim)
        .map(|_| {
            let row: Vec<f64> = (0..m).map(|_| gaussian(&mut emb_rng)).collect();
            let l1: f64 = row.iter().map(|v| v.abs()).sum();
            row.into_iter().map(|v| v / l1).collect()
        })
        .collect();
    let side = MANIFOLD_IMAGE as f64;
    let (center, half) = ((side - 1.0) / 2.0, (side - 1.0) / 2.0 - 2.0);

    let mut sample_rng = rng::stream(seed, "manifold-samples", 0);
    let mut targets = Vec::with_capacity(n * ambient_dim);
    let mut images = Vec::with_capacity(n * MANIFOLD_IMAGE * MANIFOLD_IMAGE);
    for _ in 0..n {
        let z: Vec<f64> = (0..latent_dim).map(|_| sample_rng.gen_range(-1.0..=1.0)).collect();
        let phi = quadratic_features(&z);
        let t: Vec<f64> = a.iter().map(|row| half * row.iter().zip(&phi).map(|(w, p)| w * p).sum::<f64>()).collect();
        for r in 0..MANIFOLD_IMAGE {
            for c in 0..MANIFOLD_IMAGE {
                let mut v = 0.0;
                for k in 0..ambient_dim / 2 {
                    let (x, y) = (center + t[2 * k], center + t[2 * k + 1]);
                    let d2 = (c as f64 - x).powi(2) + (r as f64 - y).powi(2);
                    v += (-d2 / (2.0 * LANDMARK_SIGMA * LANDMARK_SIGMA)).exp();
                }
                if noise > 0.0 {
                    v += noise * gaussian(&mut sample_rng);
                }
                images.push(v);
            }
        }
        targets.extend(t);
    }
    let targets = Tensor::new(&[n, ambient_dim], targets)?;
    let k = m.min(ambient_dim);
    let explained = pca_explained(&targets, k);
    if explained < 0.99 {
        return Err(contract_err!("quadratic embedding explains only {explained} of the variance in {k} components"));
    }
    let mut prov = Provenance::new("synth-manifold-regression");
    prov.seed = Some(seed);
    for (key, v) in [
        ("latent_dim", latent_dim.to_string()),
        ("ambient_dim", ambient_dim.to_string()),
        ("intrinsic_dim", latent_dim.to_string()),
        ("noise", noise.to_string()),
        ("pca_components", k.to_string()),
        ("pca_explained", format!("{explained:.6}")),
    ] {
        prov.notes.push((key.to_string(), v));
    }
    Dataset::new(
        Tensor::new(&[n, 1, MANIFOLD_IMAGE, MANIFOLD_IMAGE], images)?,
        Targets::Values(targets),
        prov,
    )
}

/// One synthetic microscopy-like image and its nucleus annotations.
#[derive(Clone, Debug)]
pub struct BlobImage {
    /// `[1, size, size]` intensities.
    pub image: Tensor,
    /// Nucleus centers `(row, col)`.
    pub centers: Vec<(usize, usize)>,
    /// Center markers after one 3x3 dilation.
    pub markers: BinaryMap,
}

/// `count` square images with `nuclei` bright disks each, Gaussian noise of
/// standard deviation `noise`, and dilated center-marker maps.
pub fn synth_blobs(count: usize, size: usize, nuclei: usize, radius: f64, noise: f64, seed: u64) -> Result<Vec<BlobImage>> {
    if size < 3 || radius <= 0.0 || !(noise >= 0.0) {
        return Err(config_err!("blob images need size >= 3, radius > 0 and noise >= 0"));
    }
    let mut out = Vec::with_capacity(count);
    let margin = radius.ceil() as usize;
    if 2 * margin >= size {
        return Err(config_err!("radius {radius} too large for {size}px images"));
    }
    for i in 0..count {
        let mut rng = rng::stream(seed, "blobs", i as u64);
        let centers: Vec<(usize, usize)> = (0..nuclei)
            .map(|_| (rng.gen_range(margin..size - margin), rng.gen_range(margin..size - margin)))
            .collect();
        let mut img = vec![0.0; size * size];
        let mut marks = BinaryMap::zeros(size, size);
        for &(cr, cc) in &centers {
            marks.set(cr, cc, true);
            for r in 0..size {
                for c in 0..size {
                    let d2 = (r as f64 - cr as f64).powi(2) + (c as f64 - cc as f64).powi(2);
                    if d2 <= radius * radius {
                        img[r * size + c] = 1.0;
                    }
                }
            }
        }
        if noise > 0.0 {
            for v in &mut img {
                *v += noise * gaussian(&mut rng);
            }
        }
        out.push(BlobImage {
            image: Tensor::new(&[1, size, size], img)?,
            centers,
            markers: dilate(&marks, 1),
        });
    }
    Ok(out)
}
