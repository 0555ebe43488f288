use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;

use super::config::{ExperimentConfig, Task, Timing};
use super::report::{emit_results, parse_results, result_paths, ExperimentReport, Format, RunRecord};
use crate::coop::{build_composite, ArchConfig, CompositeNetwork};
use crate::data::{self, BinaryMap, Dataset, Provenance, Targets};
use crate::diffcore::Tensor;
use crate::error::{config_err, Result};
use crate::metrics::{self, DetectionCounts};
use crate::trainer::{evaluate, predict, save_checkpoint, train};

/// Training pool and test split for one experiment.
pub struct TaskData {
    pub pool: Dataset,
    pub test: Dataset,
    /// Ground-truth nucleus marker maps per test patch (segmentation only).
    pub test_markers: Vec<BinaryMap>,
}

pub fn load_task_data(cfg: &ExperimentConfig, data_root: &Path) -> Result<TaskData> {
    match cfg.task {
        Task::MnistReduced => {
            let dir = data_root.join(&cfg.mnist_dir);
            let pool = data::load_mnist_split(&dir, "train")?;
            let mut test = data::load_mnist_split(&dir, "t10k")?;
            if let Some(limit) = cfg.test_limit {
                let idx: Vec<usize> = (0..limit.min(test.len())).collect();
                test = test.subset(&idx)?;
            }
            Ok(TaskData {
                pool,
                test,
                test_markers: Vec::new(),
            })
        }
        Task::SynthRegression => {
            let all = data::synth_manifold_regression(cfg.train_pool + cfg.test_size, cfg.latent_dim, cfg.ambient_dim, cfg.noise, cfg.data_seed)?;
            let pool = all.subset(&(0..cfg.train_pool).collect::<Vec<_>>())?;
            let test = all.subset(&(cfg.train_pool..all.len()).collect::<Vec<_>>())?;
            Ok(TaskData {
                pool,
                test,
                test_markers: Vec::new(),
            })
        }
        Task::SynthSegmentation => {
            let images = data::synth_blobs(cfg.train_pool + cfg.test_size, cfg.image_size, cfg.nuclei, cfg.radius, cfg.noise, cfg.data_seed)?;
            let (train_imgs, test_imgs) = images.split_at(cfg.train_pool);
            let (pool, _) = patch_dataset(train_imgs, cfg)?;
            let (test, test_markers) = patch_dataset(test_imgs, cfg)?;
            Ok(TaskData { pool, test, test_markers })
        }
    }
}

fn patch_dataset(images: &[data::BlobImage], cfg: &ExperimentConfig) -> Result<(Dataset, Vec<BinaryMap>)> {
    let (p, s) = (cfg.patch, cfg.stride);
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut maps = Vec::new();
    for img in images {
        let marker_tensor = Tensor::new(&[1, cfg.image_size, cfg.image_size], img.markers.to_f64())?;
        let xs = data::extract_patches(&img.image, p, s)?;
        let ts = data::extract_patches(&marker_tensor, p, s)?;
        for (x, t) in xs.into_iter().zip(ts) {
            inputs.extend_from_slice(x.data());
            targets.extend_from_slice(t.data());
            maps.push(BinaryMap::new(p, p, t.data().iter().map(|&v| v as u8).collect())?);
        }
    }
    let n = maps.len();
    let mut prov = Provenance::new("synth-blobs");
    prov.seed = Some(cfg.data_seed);
    prov.notes.push(("images".into(), images.len().to_string()));
    prov.notes.push(("patches".into(), n.to_string()));
    let ds = Dataset::new(Tensor::new(&[n, 1, p, p], inputs)?, Targets::Values(Tensor::new(&[n, p * p], targets)?), prov)?;
    Ok((ds, maps))
}

pub fn architecture(cfg: &ExperimentConfig) -> ArchConfig {
    match cfg.task {
        Task::MnistReduced => ArchConfig::mnist(cfg.conv1, cfg.conv2, cfg.feature),
        Task::SynthRegression => ArchConfig::small_conv("synth-regression", data::MANIFOLD_IMAGE, cfg.conv1, cfg.conv2, cfg.feature, cfg.ambient_dim),
        Task::SynthSegmentation => ArchConfig::small_conv("synth-segmentation", cfg.patch, cfg.conv1, cfg.conv2, cfg.feature, cfg.patch * cfg.patch),
    }
}

/// Nucleus detection over predicted patch maps: Otsu binarization, connected
/// components and centroid matching, summed over patches.
pub fn detection_counts(pred: &Tensor, markers: &[BinaryMap]) -> Result<DetectionCounts> {
    let mut total = DetectionCounts::default();
    for (i, gt) in markers.iter().enumerate() {
        let probs: Vec<f64> = pred.row(i).iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let centroids = match metrics::otsu_threshold(&probs) {
            Ok(t) => metrics::connected_components(&BinaryMap::from_threshold(gt.rows(), gt.cols(), &probs, t)?).centroids,
            // A flat map has nothing to detect.
            Err(_) => Vec::new(),
        };
        let c = metrics::nuclei_detection_counts(&centroids, gt)?;
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn_ += c.fn_;
    }
    Ok(total)
}

/// Test metric and mean test reconstruction loss of a trained network.
fn score(cfg: &ExperimentConfig, net: &mut CompositeNetwork, data: &TaskData) -> Result<(f64, Option<f64>)> {
    let eval = evaluate(net, &data.test)?;
    let metric = match cfg.task {
        Task::SynthSegmentation => metrics::prf1(detection_counts(&predict(net, &data.test.inputs)?, &data.test_markers)?).2,
        _ => eval.metric,
    };
    Ok((metric, eval.coop_loss))
}

/// Runs every (variant, fraction, seed) triple without writing result files.
/// Checkpoints go to `<output>/checkpoints` when enabled.
pub fn execute(cfg: &ExperimentConfig, data: &TaskData) -> Result<ExperimentReport> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(config_err!("{}", problems.join("\n")));
    }
    let hash = cfg.hash();
    let nominal = cfg.nominal_train_size.unwrap_or(data.pool.len());
    let arch = architecture(cfg);
    let mut rows = Vec::new();
    for spec in &cfg.variants {
        for &fraction in &cfg.fractions {
            let variant = cfg.network_variant(spec, fraction)?;
            let count = (fraction * nominal as f64).round() as usize;
            for &seed in &cfg.seeds {
                let mut train_set = data::sample_count(&data.pool, count, seed)?;
                train_set.provenance.fraction = fraction;
                let start = Instant::now();
                let mut net = build_composite(&arch, &cfg.attach, variant.clone(), seed)?;
                let schedule = cfg.schedule(spec, seed);
                let history = train(&mut net, &train_set, None, &schedule)?;
                let (metric, coop_loss) = score(cfg, &mut net, data)?;
                let wall_seconds = match cfg.timing {
                    Timing::Wall => start.elapsed().as_secs_f64(),
                    Timing::Off => 0.0,
                };
                info!(
                    "{} {} fraction={fraction} seed={seed} n={count}: metric={metric:.5} coop_loss={coop_loss:?} ({wall_seconds:.1}s)",
                    cfg.task.name(),
                    spec.label
                );
                if cfg.checkpoints {
                    let stem = format!("{}-{}-f{fraction}-s{seed}", cfg.task.name(), spec.label);
                    save_checkpoint(&net, &cfg.output.join("checkpoints"), &stem, &hash, history.records.len())?;
                }
                rows.push(RunRecord {
                    task: cfg.task.name().into(),
                    variant: spec.label.clone(),
                    fraction,
                    seed,
                    metric,
                    coop_loss,
                    wall_seconds,
                });
            }
        }
    }
    Ok(ExperimentReport::new(hash, rows))
}

/// Loads data, runs everything, and writes CSV and JSON results (plus the
/// canonical config) to the output directory.
///
/// A directory already holding results from a different config is refused.
pub fn run_experiment(cfg: &ExperimentConfig, data_root: &Path) -> Result<ExperimentReport> {
    let (existing, _) = result_paths(&cfg.output, Format::Csv);
    if existing.exists() {
        if let Ok(old) = parse_results(&existing, Format::Csv) {
            if old.config_hash != cfg.hash() {
                return Err(config_err!(
                    "{} holds results of config {}, not {}; choose another output directory",
                    cfg.output.display(),
                    old.config_hash,
                    cfg.hash()
                ));
            }
        }
    }
    let data = load_task_data(cfg, data_root)?;
    let report = execute(cfg, &data)?;
    emit_results(&report, &cfg.output, Format::Csv)?;
    emit_results(&report, &cfg.output, Format::Json)?;
    fs::write(cfg.output.join("config.txt"), format!("# config_hash={}\n{}", report.config_hash, cfg.canonical()))?;
    Ok(report)
}
