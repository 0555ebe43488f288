use crate::error::{contract_err, shape_err, Result};

/// Row-major 2-D map of exact zeros and ones.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMap {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BinaryMap {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!("{rows}x{cols} map needs {} values, got {}", rows * cols, data.len()));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(contract_err!("binary map value {v} is not 0 or 1"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    /// Ones where `values[i] > threshold`.
    pub fn from_threshold(rows: usize, cols: usize, values: &[f64], threshold: f64) -> Result<Self> {
        Self::new(rows, cols, values.iter().map(|&v| u8::from(v > threshold)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c] == 1
    }

    pub fn set(&mut self, r: usize, c: usize, on: bool) {
        self.data[r * self.cols + c] = u8::from(on);
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// True when every one in `self` is also a one in `other`.
    pub fn is_subset_of(&self, other: &BinaryMap) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Square 3x3 dilation, repeated `iterations` times; the structuring element
/// is clipped at the borders.
pub fn dilate(map: &BinaryMap, iterations: usize) -> BinaryMap {
    let mut cur = map.clone();
    let (h, w) = (map.rows, map.cols);
    for _ in 0..iterations {
        // Separable: a horizontal then a vertical 3-wide max.
        let mut horiz = vec![0u8; h * w];
        for r in 0..h {
            let row = &cur.data[r * w..(r + 1) * w];
            for c in 0..w {
                let lo = c.saturating_sub(1);
                let hi = (c + 1).min(w - 1);
                horiz[r * w + c] = row[lo..=hi].iter().copied().max().unwrap_or(0);
            }
        }
        let mut next = vec![0u8; h * w];
        for r in 0..h {
            let lo = r.saturating_sub(1);
            let hi = (r + 1).min(h - 1);
            for c in 0..w {
                next[r * w + c] = (lo..=hi).map(|rr| horiz[rr * w + c]).max().unwrap_or(0);
            }
        }
        cur.data = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_binary_values() {
        assert!(BinaryMap::new(1, 2, vec![0, 2]).is_err());
        assert!(BinaryMap::new(1, 2, vec![0]).is_err());
    }

    #[test]
    fn zero_map_stays_zero() {
        let m = BinaryMap::zeros(7, 5);
        assert_eq!(dilate(&m, 3), m);
    }

    #[test]
    fn center_pixel_grows_to_block() {
        let mut m = BinaryMap::zeros(5, 5);
        m.set(2, 2, true);
        let d = dilate(&m, 1);
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(d.get(r, c), (1..=3).contains(&r) && (1..=3).contains(&c));
            }
        }
    }

    #[test]
    fn corner_pixel_is_clipped() {
        let mut m = BinaryMap::zeros(4, 4);
        m.set(0, 0, true);
        assert_eq!(dilate(&m, 1).count_ones(), 4);
    }

    #[test]
    fn zero_iterations_is_identity() {
        let m = BinaryMap::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(dilate(&m, 0), m);
    }
}
