use crate::data::BinaryMap;
use crate::error::{contract_err, shape_err, Result};

pub const OTSU_BINS: usize = 256;

/// Histogram bin of a value in [0, 1]. Bin `k` covers `(k/256, (k+1)/256]`
/// (bin 0 also takes 0), so `v > (k+1)/256` holds exactly when the bin of
/// `v` exceeds `k`.
pub fn otsu_bin(v: f64) -> usize {
    ((v * OTSU_BINS as f64).ceil() as isize - 1).clamp(0, OTSU_BINS as isize - 1) as usize
}

/// `w0 * w1 * (mu0 - mu1)^2` for the split `v <= t` / `v > t`.
pub fn between_class_variance(values: &[f64], threshold: f64) -> f64 {
    let (mut n0, mut s0, mut n1, mut s1) = (0usize, 0.0, 0usize, 0.0);
    for &v in values {
        if v > threshold {
            n1 += 1;
            s1 += v;
        } else {
            n0 += 1;
            s0 += v;
        }
    }
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let n = values.len() as f64;
    let (w0, w1) = (n0 as f64 / n, n1 as f64 / n);
    let d = s0 / n0 as f64 - s1 / n1 as f64;
    w0 * w1 * d * d
}

/// Otsu threshold over a 256-bin histogram of values in [0, 1].
///
/// Candidate thresholds are the bin edges `(k+1)/256`; the first (lowest)
/// maximizer of between-class variance wins. Binarize with `v > t`.
pub fn otsu_threshold(values: &[f64]) -> Result<f64> {
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(contract_err!("otsu input {v} outside [0, 1]"));
    }
    let mut count = [0usize; OTSU_BINS];
    let mut sum = [0.0f64; OTSU_BINS];
    for &v in values {
        let b = otsu_bin(v);
        count[b] += 1;
        sum[b] += v;
    }
    if count.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(contract_err!("otsu threshold needs values in at least two histogram bins"));
    }
    let n = values.len() as f64;
    let total: f64 = sum.iter().sum();
    let (mut n0, mut s0) = (0usize, 0.0);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for k in 0..OTSU_BINS - 1 {
        n0 += count[k];
        s0 += sum[k];
        let n1 = values.len() - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let (w0, w1) = (n0 as f64 / n, n1 as f64 / n);
        let d = s0 / n0 as f64 - (total - s0) / n1 as f64;
        let var = w0 * w1 * d * d;
        if var > best.0 {
            best = (var, k);
        }
    }
    Ok((best.1 + 1) as f64 / OTSU_BINS as f64)
}

/// Labels 1..=K in raster order of first pixel, plus per-component centroids.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentLabeling {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<usize>,
    /// `(row, col)` center of mass of each component, index `k - 1`.
    pub centroids: Vec<(f64, f64)>,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.centroids.len()
    }

    pub fn label(&self, r: usize, c: usize) -> usize {
        self.labels[r * self.cols + c]
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Two-pass union-find labeling under 8-connectivity.
pub fn connected_components(map: &BinaryMap) -> ComponentLabeling {
    let (h, w) = (map.rows(), map.cols());
    let mut provisional = vec![0usize; h * w];
    let mut parent = vec![0usize];
    for r in 0..h {
        for c in 0..w {
            if !map.get(r, c) {
                continue;
            }
            // Already-visited neighbours: W, NW, N, NE.
            let mut neighbours = [0usize; 4];
            if c > 0 {
                neighbours[0] = provisional[r * w + c - 1];
            }
            if r > 0 {
                if c > 0 {
                    neighbours[1] = provisional[(r - 1) * w + c - 1];
                }
                neighbours[2] = provisional[(r - 1) * w + c];
                if c + 1 < w {
                    neighbours[3] = provisional[(r - 1) * w + c + 1];
                }
            }
            let mut label = 0;
            for &n in neighbours.iter().filter(|&&n| n > 0) {
                if label == 0 {
                    label = n;
                } else {
                    let (a, b) = (find(&mut parent, label), find(&mut parent, n));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
            if label == 0 {
                label = parent.len();
                parent.push(label);
            }
            provisional[r * w + c] = label;
        }
    }
    let mut remap = vec![0usize; parent.len()];
    let mut labels = vec![0usize; h * w];
    let mut acc: Vec<(f64, f64, usize)> = Vec::new();
    for i in 0..h * w {
        if provisional[i] == 0 {
            continue;
        }
        let root = find(&mut parent, provisional[i]);
        if remap[root] == 0 {
            acc.push((0.0, 0.0, 0));
            remap[root] = acc.len();
        }
        let k = remap[root];
        labels[i] = k;
        let a = &mut acc[k - 1];
        a.0 += (i / w) as f64;
        a.1 += (i % w) as f64;
        a.2 += 1;
    }
    ComponentLabeling {
        rows: h,
        cols: w,
        labels,
        centroids: acc.iter().map(|&(sr, sc, n)| (sr / n as f64, sc / n as f64)).collect(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DetectionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Matches detected centroids against dilated ground-truth nucleus markers.
///
/// Each centroid is rounded to its pixel. Centroids are processed in order;
/// one landing on a nucleus component that has not been claimed yet is a true
/// positive, anything else (background or an already-claimed nucleus) is a
/// false positive. Nuclei never claimed are false negatives.
pub fn nuclei_detection_counts(centroids: &[(f64, f64)], gt_map: &BinaryMap) -> Result<DetectionCounts> {
    let gt = connected_components(gt_map);
    let mut claimed = vec![false; gt.count()];
    let mut counts = DetectionCounts::default();
    for &(r, c) in centroids {
        let (rr, cc) = (r.round(), c.round());
        if !(rr >= 0.0 && cc >= 0.0 && (rr as usize) < gt.rows && (cc as usize) < gt.cols) {
            return Err(contract_err!("centroid ({r}, {c}) outside the {}x{} map", gt.rows, gt.cols));
        }
        let k = gt.label(rr as usize, cc as usize);
        if k > 0 && !claimed[k - 1] {
            claimed[k - 1] = true;
            counts.tp += 1;
        } else {
            counts.fp += 1;
        }
    }
    counts.fn_ = claimed.iter().filter(|&&c| !c).count();
    Ok(counts)
}

/// `2|A∩B| / (|A|+|B|)`, with two empty maps scoring 1.
pub fn dice(a: &BinaryMap, b: &BinaryMap) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(shape_err!("dice of {}x{} and {}x{} maps", a.rows(), a.cols(), b.rows(), b.cols()));
    }
    let inter = a.data().iter().zip(b.data()).filter(|(&x, &y)| x == 1 && y == 1).count();
    let denom = a.count_ones() + b.count_ones();
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / denom as f64)
}

/// Precision, recall and F1; every 0/0 is taken as 0.
pub fn prf1(c: DetectionCounts) -> (f64, f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}
