//! Built-in verification suites shared by the command line and the tests:
//! finite-difference gradient checks for every layer and loss, and metric
//! checks against deliberately naive oracles.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::coop::{build_composite, ArchConfig, BlockSpec, NetworkVariant, Target};
use crate::data::{dilate, BinaryMap};
use crate::diffcore::{grad_check, Graph, NodeId, Tensor};
use crate::error::Result;
use crate::metrics::{self, DetectionCounts};
use crate::nn::{self, ForwardCtx, BATCH_NORM_EPS};
use crate::rng;

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    /// Measured quantity (worst relative error, mismatch count, ...).
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn within(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value < tolerance,
        }
    }

    fn exact(name: impl Into<String>, mismatches: usize) -> Self {
        Self {
            name: name.into(),
            value: mismatches as f64,
            tolerance: 0.0,
            passed: mismatches == 0,
        }
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        if self.tolerance > 0.0 {
            write!(f, "{verdict} {:<34} {:.3e} (< {:.0e})", self.name, self.value, self.tolerance)
        } else {
            write!(f, "{verdict} {:<34} {} mismatches", self.name, self.value)
        }
    }
}

pub const GRAD_TOL: f64 = 1e-5;
pub const GRAD_TOL_BATCH_NORM: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("valid shape")
}

/// Uniform values whose magnitude is at least `gap`, keeping probes off
/// kinks at zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let mut t = uniform(rng, shape, gap, 1.0);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Distinct values spaced `0.05` apart in random order, so every pooling
/// window has a clear maximum.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).expect("valid shape")
}

/// Random linear functional of `out`, giving a scalar with a generic gradient.
fn project(g: &mut Graph, out: NodeId, weights: &[f64]) -> Result<NodeId> {
    let m = g.mask_mul(out, weights[..g.value(out).len()].to_vec())?;
    Ok(g.sum(m))
}

type Builder = Box<dyn Fn(&mut ChaCha8Rng) -> (Tensor, Box<dyn Fn(&mut Graph, NodeId) -> Result<NodeId>>)>;

fn case<F>(build: F) -> Builder
where
    F: Fn(&mut ChaCha8Rng) -> (Tensor, Box<dyn Fn(&mut Graph, NodeId) -> Result<NodeId>>) + 'static,
{
    Box::new(build)
}

fn gradient_cases() -> Vec<(&'static str, f64, Builder)> {
    let proj = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    vec![
        (
            "dense/input",
            GRAD_TOL,
            case(move |r| {
                let (w, b, p) = (uniform(r, &[5, 3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0), proj(r));
                let x = uniform(r, &[4, 5], -1.0, 1.0);
                (x, Box::new(move |g, x| {
                    let (wn, bn) = (g.input(w.clone()), g.input(b.clone()));
                    let y = g.matmul(x, wn)?;
                    let y = g.add_row_vector(y, bn)?;
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "dense/weight",
            GRAD_TOL,
            case(move |r| {
                let (x, b, p) = (uniform(r, &[4, 5], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0), proj(r));
                (uniform(r, &[5, 3], -1.0, 1.0), Box::new(move |g, w| {
                    let (xn, bn) = (g.input(x.clone()), g.input(b.clone()));
                    let y = g.matmul(xn, w)?;
                    let y = g.add_row_vector(y, bn)?;
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "dense/bias",
            GRAD_TOL,
            case(move |r| {
                let (x, w, p) = (uniform(r, &[4, 5], -1.0, 1.0), uniform(r, &[5, 3], -1.0, 1.0), proj(r));
                (uniform(r, &[3], -1.0, 1.0), Box::new(move |g, b| {
                    let (xn, wn) = (g.input(x.clone()), g.input(w.clone()));
                    let y = g.matmul(xn, wn)?;
                    let y = g.add_row_vector(y, b)?;
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "conv2d/input",
            GRAD_TOL,
            case(move |r| {
                let (w, b, p) = (uniform(r, &[3, 2, 3, 3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0), proj(r));
                (uniform(r, &[2, 2, 5, 5], -1.0, 1.0), Box::new(move |g, x| {
                    let (wn, bn) = (g.input(w.clone()), g.input(b.clone()));
                    let y = g.conv2d(x, wn, bn, 1, 1)?;
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "conv2d/weight",
            GRAD_TOL,
            case(move |r| {
                let (x, b, p) = (uniform(r, &[2, 2, 6, 6], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0), proj(r));
                (uniform(r, &[3, 2, 3, 3], -1.0, 1.0), Box::new(move |g, w| {
                    let (xn, bn) = (g.input(x.clone()), g.input(b.clone()));
                    let y = g.conv2d(xn, w, bn, 2, 0)?;
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "conv2d/bias",
            GRAD_TOL,
            case(move |r| {
                let (x, w, p) = (uniform(r, &[2, 2, 5, 5], -1.0, 1.0), uniform(r, &[3, 2, 3, 3], -1.0, 1.0), proj(r));
                (uniform(r, &[3], -1.0, 1.0), Box::new(move |g, b| {
                    let (xn, wn) = (g.input(x.clone()), g.input(w.clone()));
                    let y = g.conv2d(xn, wn, b, 1, 2)?;
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "maxpool2d",
            GRAD_TOL,
            case(move |r| {
                let p = proj(r);
                (distinct(r, &[2, 2, 4, 6]), Box::new(move |g, x| {
                    let y = g.max_pool2d(x, 2)?;
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "relu",
            GRAD_TOL,
            case(move |r| {
                let p = proj(r);
                (away_from_zero(r, &[3, 7], 0.01), Box::new(move |g, x| {
                    let y = g.relu(x);
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "flatten",
            GRAD_TOL,
            case(move |r| {
                let p = proj(r);
                (uniform(r, &[2, 3, 2, 2], -1.0, 1.0), Box::new(move |g, x| {
                    let y = g.flatten(x)?;
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "dropout/fixed-mask",
            GRAD_TOL,
            case(move |r| {
                let p = proj(r);
                let mask: Vec<f64> = (0..24).map(|_| if r.gen_bool(0.7) { 1.0 / 0.7 } else { 0.0 }).collect();
                (uniform(r, &[4, 6], -1.0, 1.0), Box::new(move |g, x| {
                    let y = g.mask_mul(x, mask.clone())?;
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "batchnorm/input",
            GRAD_TOL_BATCH_NORM,
            case(move |r| {
                let (gamma, beta, p) = (uniform(r, &[3], 0.5, 1.5), uniform(r, &[3], -0.5, 0.5), proj(r));
                (uniform(r, &[4, 3, 2, 2], -1.0, 1.0), Box::new(move |g, x| {
                    let (gn, bn) = (g.input(gamma.clone()), g.input(beta.clone()));
                    let (y, _) = g.batch_norm(x, gn, bn, BATCH_NORM_EPS)?;
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "batchnorm/input-dense",
            GRAD_TOL_BATCH_NORM,
            case(move |r| {
                let (gamma, beta, p) = (uniform(r, &[4], 0.5, 1.5), uniform(r, &[4], -0.5, 0.5), proj(r));
                (uniform(r, &[5, 4], -1.0, 1.0), Box::new(move |g, x| {
                    let (gn, bn) = (g.input(gamma.clone()), g.input(beta.clone()));
                    let (y, _) = g.batch_norm(x, gn, bn, BATCH_NORM_EPS)?;
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "batchnorm/scale",
            GRAD_TOL_BATCH_NORM,
            case(move |r| {
                let (x, beta, p) = (uniform(r, &[4, 3, 2, 2], -1.0, 1.0), uniform(r, &[3], -0.5, 0.5), proj(r));
                (uniform(r, &[3], 0.5, 1.5), Box::new(move |g, gamma| {
                    let (xn, bn) = (g.input(x.clone()), g.input(beta.clone()));
                    let (y, _) = g.batch_norm(xn, gamma, bn, BATCH_NORM_EPS)?;
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "batchnorm/shift",
            GRAD_TOL_BATCH_NORM,
            case(move |r| {
                let (x, gamma, p) = (uniform(r, &[4, 3, 2, 2], -1.0, 1.0), uniform(r, &[3], 0.5, 1.5), proj(r));
                (uniform(r, &[3], -0.5, 0.5), Box::new(move |g, beta| {
                    let (xn, gn) = (g.input(x.clone()), g.input(gamma.clone()));
                    let (y, _) = g.batch_norm(xn, gn, beta, BATCH_NORM_EPS)?;
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "batchnorm/eval",
            GRAD_TOL_BATCH_NORM,
            case(move |r| {
                let (gamma, beta, p) = (uniform(r, &[3], 0.5, 1.5), uniform(r, &[3], -0.5, 0.5), proj(r));
                let mean: Vec<f64> = (0..3).map(|_| r.gen_range(-0.3..0.3)).collect();
                let var: Vec<f64> = (0..3).map(|_| r.gen_range(0.2..2.0)).collect();
                (uniform(r, &[2, 3, 2, 2], -1.0, 1.0), Box::new(move |g, x| {
                    let (gn, bn) = (g.input(gamma.clone()), g.input(beta.clone()));
                    let y = g.channel_affine(x, gn, bn, &mean, &var, BATCH_NORM_EPS)?;
                    project(g, y, &p)
                }))
            }),
        ),
        (
            "loss/cross-entropy",
            GRAD_TOL,
            case(move |r| {
                let labels: Vec<usize> = (0..4).map(|_| r.gen_range(0..5)).collect();
                (uniform(r, &[4, 5], -2.0, 2.0), Box::new(move |g, x| nn::cross_entropy_loss(g, x, &labels)))
            }),
        ),
        (
            "loss/mse",
            GRAD_TOL,
            case(move |r| {
                let t = uniform(r, &[4, 3], -1.0, 1.0);
                (uniform(r, &[4, 3], -1.0, 1.0), Box::new(move |g, x| {
                    let tn = g.input(t.clone());
                    nn::mse_loss(g, x, tn)
                }))
            }),
        ),
        (
            "loss/relative-recon/f",
            GRAD_TOL,
            case(move |r| {
                let f_hat = uniform(r, &[3, 6], -1.0, 1.0);
                (uniform(r, &[3, 6], -1.0, 1.0), Box::new(move |g, f| {
                    let h = g.input(f_hat.clone());
                    nn::relative_reconstruction_loss(g, f, h)
                }))
            }),
        ),
        (
            "loss/relative-recon/f_hat",
            GRAD_TOL,
            case(move |r| {
                let f = uniform(r, &[3, 6], -1.0, 1.0);
                (uniform(r, &[3, 6], -1.0, 1.0), Box::new(move |g, h| {
                    let fn_ = g.input(f.clone());
                    nn::relative_reconstruction_loss(g, fn_, h)
                }))
            }),
        ),
        (
            "loss/l1-latent",
            GRAD_TOL,
            case(move |r| (away_from_zero(r, &[3, 4], 0.01), Box::new(move |g, z| Ok(nn::l1_latent_penalty(g, z))))),
        ),
        (
            "loss/l2-weights",
            GRAD_TOL,
            case(move |r| {
                let other = uniform(r, &[2, 2], -1.0, 1.0);
                (uniform(r, &[3, 4], -1.0, 1.0), Box::new(move |g, w| {
                    let o = g.input(other.clone());
                    nn::l2_weight_penalty(g, &[w, o])
                }))
            }),
        ),
        (
            "composite/coopsubnet-input",
            GRAD_TOL_BATCH_NORM,
            case(move |r| {
                let arch = ArchConfig {
                    name: "probe".into(),
                    input_shape: vec![1, 4, 4],
                    blocks: vec![
                        BlockSpec::Conv {
                            out_ch: 2,
                            kernel: 3,
                            pad: 1,
                            batch_norm: true,
                            pool: Some(2),
                        },
                        BlockSpec::Flatten,
                        BlockSpec::Dense { width: 6 },
                    ],
                    output_width: 3,
                };
                let seed = r.gen();
                let net = build_composite(&arch, crate::coop::DEFAULT_ATTACH, NetworkVariant::CoopSubNet { bottleneck: 2 }, seed)
                    .expect("probe network builds");
                let labels: Vec<usize> = (0..3).map(|_| r.gen_range(0..3)).collect();
                (uniform(r, &[3, 1, 4, 4], -1.0, 1.0), Box::new(move |g, x| {
                    let mut net = net.clone();
                    let res = net.forward(g, x, &mut ForwardCtx::train(rng::stream(0, "probe", 0)))?;
                    Ok(net.composite_loss(g, &res, Target::Classes(&labels), 0.7)?.node)
                }))
            }),
        ),
    ]
}

/// Runs every gradient case at `points` random points; each outcome carries
/// the worst relative error over all points.
pub fn gradcheck_suite(points: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for (name, tol, build) in gradient_cases() {
        let mut worst: f64 = 0.0;
        for point in 0..points {
            let mut r = rng::stream(seed, name, point as u64);
            let (x, f) = build(&mut r);
            let err = grad_check(f, &x, FD_STEP)?;
            worst = if err.is_nan() { f64::NAN } else { worst.max(err) };
        }
        out.push(CheckOutcome::within(name, worst, tol));
    }
    Ok(out)
}

/// Exhaustive Otsu: evaluates every candidate edge `(k+1)/256` directly from
/// the raw values and returns `(best threshold, best variance, all variances)`.
pub fn otsu_oracle(values: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = values.len() as f64;
    let vars: Vec<f64> = (0..255)
        .map(|k| {
            let t = (k + 1) as f64 / 256.0;
            let lo: Vec<f64> = values.iter().copied().filter(|&v| v <= t).collect();
            let hi: Vec<f64> = values.iter().copied().filter(|&v| v > t).collect();
            if lo.is_empty() || hi.is_empty() {
                return 0.0;
            }
            let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
            let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
            (lo.len() as f64 / n) * (hi.len() as f64 / n) * (m0 - m1) * (m0 - m1)
        })
        .collect();
    let best = vars.iter().copied().fold(0.0, f64::max);
    let k = vars.iter().position(|&v| v == best).unwrap_or(0);
    ((k + 1) as f64 / 256.0, best, vars)
}

/// Breadth-first flood fill under 8-connectivity.
pub fn flood_fill_oracle(map: &BinaryMap) -> Vec<usize> {
    let (h, w) = (map.rows(), map.cols());
    let mut labels = vec![0usize; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if labels[start] != 0 || !map.get(start / w, start % w) {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let j = rr as usize * w + cc as usize;
                    if labels[j] == 0 && map.get(rr as usize, cc as usize) {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    labels
}

/// True when two labelings induce the same partition (0 is background).
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    use std::collections::HashMap;
    let (mut ab, mut ba) = (HashMap::new(), HashMap::new());
    a.len() == b.len()
        && a.iter().zip(b).all(|(&x, &y)| {
            (x == 0) == (y == 0) && (x == 0 || (*ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x))
        })
}

/// Neighbourhood-scan dilation used to check [`dilate`].
pub fn dilate_oracle(map: &BinaryMap) -> BinaryMap {
    let (h, w) = (map.rows(), map.cols());
    let mut out = BinaryMap::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut any = false;
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    any |= map.get(rr, cc);
                }
            }
            out.set(r, c, any);
        }
    }
    out
}

fn random_map(r: &mut ChaCha8Rng, side: usize) -> BinaryMap {
    let density = r.gen_range(0.1..0.6);
    BinaryMap::new(side, side, (0..side * side).map(|_| u8::from(r.gen_bool(density))).collect()).expect("binary")
}

fn random_probability_map(r: &mut ChaCha8Rng, i: usize) -> Vec<f64> {
    let n = 16 * 16;
    match i % 3 {
        // Uniform.
        0 => (0..n).map(|_| r.gen_range(0.0..=1.0)).collect(),
        // Two noisy modes.
        1 => (0..n)
            .map(|_| {
                let m = if r.gen_bool(0.3) { 0.8 } else { 0.2 };
                (m + r.gen_range(-0.15..0.15f64)).clamp(0.0, 1.0)
            })
            .collect(),
        // 8-bit quantized.
        _ => (0..n).map(|_| f64::from(r.gen_range(0u8..=255)) / 255.0).collect(),
    }
}

/// Otsu, components, dilation and detection metrics against oracles and
/// hand-enumerated fixtures. `maps` random maps are used per oracle check.
pub fn metric_oracle_suite(maps: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    let mut otsu_bad = 0;
    for i in 0..maps {
        let mut r = rng::stream(seed, "otsu", i as u64);
        let values = random_probability_map(&mut r, i);
        let t = metrics::otsu_threshold(&values)?;
        let (t_oracle, best, vars) = otsu_oracle(&values);
        let k = (t * 256.0).round() as usize - 1;
        let attains = vars[k] >= best - 1e-12 * best.max(1.0);
        let lowest = vars[..k].iter().all(|&v| v < best - 1e-12 * best.max(1.0));
        if !(attains && lowest) || (t != t_oracle && vars[k] != best) {
            otsu_bad += 1;
        }
    }
    out.push(CheckOutcome::exact(format!("otsu vs exhaustive scan ({maps} maps)"), otsu_bad));

    let mut cc_bad = 0;
    for i in 0..maps {
        let mut r = rng::stream(seed, "components", i as u64);
        let map = random_map(&mut r, 16);
        let cc = metrics::connected_components(&map);
        let oracle = flood_fill_oracle(&map);
        let k_oracle = oracle.iter().copied().max().unwrap_or(0);
        let contiguous = cc.labels.iter().copied().max().unwrap_or(0) == cc.count();
        let centroids_ok = (1..=cc.count()).all(|k| {
            let px: Vec<(usize, usize)> = (0..256).filter(|&j| cc.labels[j] == k).map(|j| (j / 16, j % 16)).collect();
            let (mr, mc) = (
                px.iter().map(|p| p.0 as f64).sum::<f64>() / px.len() as f64,
                px.iter().map(|p| p.1 as f64).sum::<f64>() / px.len() as f64,
            );
            let (cr, cc_) = cc.centroids[k - 1];
            (cr - mr).abs() < 1e-12 && (cc_ - mc).abs() < 1e-12
        });
        if !(same_partition(&cc.labels, &oracle) && k_oracle == cc.count() && contiguous && centroids_ok) {
            cc_bad += 1;
        }
    }
    out.push(CheckOutcome::exact(format!("components vs flood fill ({maps} maps)"), cc_bad));

    let mut dil_bad = 0;
    for i in 0..maps {
        let mut r = rng::stream(seed, "dilate", i as u64);
        let map = random_map(&mut r, 16);
        let sparse = BinaryMap::new(16, 16, map.data().iter().map(|&v| v & u8::from(r.gen_bool(0.2))).collect())?;
        if dilate(&sparse, 2) != dilate_oracle(&dilate_oracle(&sparse)) {
            dil_bad += 1;
        }
    }
    out.push(CheckOutcome::exact(format!("dilation vs neighbourhood scan ({maps} maps)"), dil_bad));

    // Hand-enumerated fixtures.
    let mut fixture_bad = 0;
    let mut gt = BinaryMap::zeros(10, 10);
    for (r, c) in [(1, 1), (1, 8), (8, 5)] {
        for rr in r - 1..=r + 1 {
            for cc in c - 1..=c + 1 {
                gt.set(rr, cc, true);
            }
        }
    }
    let expect = |got: DetectionCounts, tp, fp, fn_| got == DetectionCounts { tp, fp, fn_ };
    fixture_bad += usize::from(!expect(metrics::nuclei_detection_counts(&[(1.0, 1.0), (8.0, 5.0), (5.0, 5.0)], &gt)?, 2, 1, 1));
    fixture_bad += usize::from(!expect(metrics::nuclei_detection_counts(&[(1.0, 1.0), (2.0, 2.0)], &gt)?, 1, 1, 2));
    fixture_bad += usize::from(!expect(metrics::nuclei_detection_counts(&[(1.0, 1.0), (1.0, 8.0), (8.0, 5.0)], &gt)?, 3, 0, 0));
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let (p, rc, f1) = metrics::prf1(DetectionCounts { tp: 2, fp: 1, fn_: 1 });
    fixture_bad += usize::from(!(close(p, 2.0 / 3.0) && close(rc, 2.0 / 3.0) && close(f1, 2.0 / 3.0)));
    let (p, rc, f1) = metrics::prf1(DetectionCounts { tp: 1, fp: 1, fn_: 2 });
    fixture_bad += usize::from(!(close(p, 0.5) && close(rc, 1.0 / 3.0) && close(f1, 0.4)));
    fixture_bad += usize::from(metrics::prf1(DetectionCounts { tp: 0, fp: 4, fn_: 3 }) != (0.0, 0.0, 0.0));
    fixture_bad += usize::from(metrics::prf1(DetectionCounts { tp: 10, fp: 0, fn_: 0 }) != (1.0, 1.0, 1.0));
    let a = BinaryMap::new(2, 4, vec![1, 1, 1, 1, 0, 0, 0, 0])?;
    let b = BinaryMap::new(2, 4, vec![1, 1, 1, 0, 1, 1, 1, 0])?;
    fixture_bad += usize::from(!close(metrics::dice(&a, &b)?, 0.6));
    fixture_bad += usize::from(metrics::dice(&a, &a)? != 1.0);
    fixture_bad += usize::from(metrics::dice(&BinaryMap::zeros(2, 4), &BinaryMap::zeros(2, 4))? != 1.0);
    out.push(CheckOutcome::exact("detection/dice/prf1 fixtures", fixture_bad));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_comparison() {
        assert!(same_partition(&[0, 1, 1, 2], &[0, 5, 5, 3]));
        assert!(!same_partition(&[0, 1, 1, 2], &[0, 5, 3, 3]));
        assert!(!same_partition(&[0, 1], &[1, 1]));
        assert!(!same_partition(&[1, 2], &[1, 1]));
    }

    #[test]
    fn otsu_oracle_two_modes() {
        let v = [0.1, 0.9, 0.1, 0.9];
        let (t, best, _) = otsu_oracle(&v);
        assert!((0.1..0.9).contains(&t));
        assert!((best - 0.16).abs() < 1e-12);
    }
}
