//! Datasets: MNIST IDX ingestion, budget reduction, patches, dilation and the
//! synthetic stand-in tasks.

mod binary_map;
mod dataset;
mod idx;
mod ops;
mod synth;

use std::fs;
use std::path::Path;

pub use binary_map::{dilate, BinaryMap};
pub use dataset::{Dataset, Provenance, Targets};
pub use idx::{
    load_idx_images, load_idx_labels, load_mnist_split, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, IMAGE_MAGIC,
    LABEL_MAGIC,
};
pub use ops::{extract_patches, patch_positions, sample_count, sample_reduction};
pub use synth::{pca_explained, quadratic_rank, synth_blobs, synth_manifold_regression, BlobImage, MANIFOLD_IMAGE};

use crate::diffcore::Tensor;
use crate::error::{contract_err, Result};
use crate::trainer::{read_blocks, write_blocks};

/// Writes `<stem>.bin` (blocks `inputs` and `targets`) and a
/// `<stem>.provenance` text sidecar.
pub fn save_dataset(ds: &Dataset, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let targets = match &ds.targets {
        Targets::Classes(c) => Tensor::vector(c.iter().map(|&v| v as f64).collect())?,
        Targets::Values(t) => t.clone(),
    };
    let kind = if matches!(ds.targets, Targets::Classes(_)) { "classes" } else { "values" };
    let mut f = fs::File::create(dir.join(format!("{stem}.bin")))?;
    write_blocks(&mut f, &[("inputs".into(), ds.inputs.clone()), (format!("targets.{kind}"), targets)])?;
    fs::write(dir.join(format!("{stem}.provenance")), ds.provenance.to_string())?;
    Ok(())
}

pub fn load_dataset(dir: &Path, stem: &str) -> Result<Dataset> {
    let blocks = read_blocks(&mut fs::File::open(dir.join(format!("{stem}.bin")))?)?;
    let [(n0, inputs), (n1, targets)]: [(String, Tensor); 2] = blocks.try_into().map_err(|_| contract_err!("dataset file needs two blocks"))?;
    if n0 != "inputs" {
        return Err(contract_err!("first dataset block is {n0}, expected inputs"));
    }
    let targets = match n1.as_str() {
        "targets.classes" => Targets::Classes(targets.data().iter().map(|&v| v as usize).collect()),
        "targets.values" => Targets::Values(targets),
        other => return Err(contract_err!("unknown target block {other}")),
    };
    let text = fs::read_to_string(dir.join(format!("{stem}.provenance")))?;
    let mut prov = Provenance::new("");
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        match k {
            "source" => prov.source = v.to_string(),
            "fraction" => prov.fraction = v.parse().map_err(|_| contract_err!("bad fraction {v}"))?,
            "seed" => prov.seed = Some(v.parse().map_err(|_| contract_err!("bad seed {v}"))?),
            _ => prov.notes.push((k.to_string(), v.to_string())),
        }
    }
    Dataset::new(inputs, targets, prov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = synth_manifold_regression(6, 1, 4, 0.1, 2).unwrap();
        save_dataset(&d, dir.path(), "m").unwrap();
        assert_eq!(load_dataset(dir.path(), "m").unwrap(), d);
    }
}
