use rand::seq::index;

use super::dataset::Dataset;
use crate::diffcore::Tensor;
use crate::error::{config_err, shape_err, Result};
use crate::rng;

/// Uniform subset of `round(fraction * N)` samples without replacement.
pub fn sample_reduction(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(config_err!("reduction fraction {fraction} outside (0, 1]"));
    }
    let count = (fraction * dataset.len() as f64).round() as usize;
    sample_count(dataset, count, seed)
}

/// Uniform subset of exactly `count` samples, indices in ascending order.
pub fn sample_count(dataset: &Dataset, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(config_err!("reduction leaves no samples"));
    }
    if count > dataset.len() {
        return Err(config_err!("cannot draw {count} samples from {}", dataset.len()));
    }
    let mut idx = index::sample(&mut rng::stream(seed, "reduction", 0), dataset.len(), count).into_vec();
    idx.sort_unstable();
    let mut out = dataset.subset(&idx)?;
    out.provenance.fraction *= count as f64 / dataset.len() as f64;
    out.provenance.seed = Some(seed);
    Ok(out)
}

/// Number of patches per axis: `floor((size - patch) / stride) + 1`.
pub fn patch_positions(size: usize, patch: usize, stride: usize) -> usize {
    (size - patch) / stride + 1
}

/// All fully contained `patch x patch` windows of a `[C, H, W]` image at
/// offsets `0, stride, ...`, in row-major order of their top-left corner.
pub fn extract_patches(image: &Tensor, patch: usize, stride: usize) -> Result<Vec<Tensor>> {
    let &[ch, h, w] = image.shape() else {
        return Err(shape_err!("extract_patches expects [C, H, W], got {:?}", image.shape()));
    };
    if patch == 0 || stride == 0 {
        return Err(config_err!("patch size and stride must be positive"));
    }
    if patch > h || patch > w {
        return Err(config_err!("patch {patch} larger than the {h}x{w} image"));
    }
    let (ny, nx) = (patch_positions(h, patch, stride), patch_positions(w, patch, stride));
    let src = image.data();
    let mut out = Vec::with_capacity(ny * nx);
    for py in 0..ny {
        for px in 0..nx {
            let (oy, ox) = (py * stride, px * stride);
            let mut data = Vec::with_capacity(ch * patch * patch);
            for c in 0..ch {
                for r in 0..patch {
                    let start = c * h * w + (oy + r) * w + ox;
                    data.extend_from_slice(&src[start..start + patch]);
                }
            }
            out.push(Tensor::new(&[ch, patch, patch], data)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Provenance, Targets};

    fn numbered(n: usize) -> Dataset {
        let x = Tensor::new(&[n, 1], (0..n).map(|i| i as f64).collect()).unwrap();
        Dataset::new(x, Targets::Classes((0..n).collect()), Provenance::new("numbers")).unwrap()
    }

    #[test]
    fn full_fraction_keeps_everything() {
        let d = numbered(50);
        let r = sample_reduction(&d, 1.0, 3).unwrap();
        let mut got = r.inputs.data().to_vec();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, d.inputs.data());
    }

    #[test]
    fn one_percent_of_sixty_thousand() {
        let d = numbered(60_000);
        let r = sample_reduction(&d, 0.01, 0).unwrap();
        assert_eq!(r.len(), 600);
        assert_eq!(r.provenance.fraction, 0.01);
        assert_eq!(r.provenance.seed, Some(0));
    }

    #[test]
    fn seeds_control_the_subset() {
        let d = numbered(1000);
        let a = sample_reduction(&d, 0.1, 1).unwrap();
        assert_eq!(a, sample_reduction(&d, 0.1, 1).unwrap());
        assert_ne!(a.inputs, sample_reduction(&d, 0.1, 2).unwrap().inputs);
    }

    #[test]
    fn empty_reduction_rejected() {
        let err = sample_reduction(&numbered(10), 0.01, 0).unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
        assert!(sample_reduction(&numbered(10), 0.0, 0).is_err());
        assert!(sample_reduction(&numbered(10), 1.5, 0).is_err());
    }

    #[test]
    fn patch_counts() {
        let img = Tensor::zeros(&[1, 500, 500]).unwrap();
        assert_eq!(extract_patches(&img, 250, 50).unwrap().len(), 36);
        let small = Tensor::new(&[1, 10, 10], (0..100).map(f64::from).collect()).unwrap();
        let p = extract_patches(&small, 4, 3).unwrap();
        assert_eq!(p.len(), 9);
        // Last patch starts at (6, 6).
        assert_eq!(p[8].data()[0], 66.0);
        let whole = extract_patches(&small, 10, 7).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].data(), small.data());
        assert!(matches!(extract_patches(&small, 11, 1), Err(crate::Error::Config(_))));
    }
}
