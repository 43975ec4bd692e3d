use crate::error::{dim_err, Error, Result};
use crate::nn::{Dataset, Matrix};

pub const CLASSES: usize = 10;

/// Gray images in `[0, 1]`, stored row-major one after another, with digit labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pixels: Vec<f64>,
    labels: Vec<u8>,
    rows: usize,
    cols: usize,
}

impl ImageSet {
    pub fn new(pixels: Vec<f64>, labels: Vec<u8>, rows: usize, cols: usize) -> Result<Self> {
        if pixels.len() != labels.len() * rows * cols {
            return Err(dim_err!(
                "{} pixels for {} images of {rows}×{cols}",
                pixels.len(),
                labels.len()
            ));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidInput(format!("pixel {p} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|&&l| usize::from(l) >= CLASSES) {
            return Err(Error::InvalidInput(format!("label {l} outside 0..{CLASSES}")));
        }
        Ok(Self {
            pixels,
            labels,
            rows,
            cols,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn select(&self, indices: &[usize]) -> Result<ImageSet> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidInput(format!("image index {bad} out of range")));
        }
        let pixels = indices.iter().flat_map(|&i| self.image(i).iter().copied()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        ImageSet::new(pixels, labels, self.rows, self.cols)
    }

    /// Flattened images as inputs, one-hot labels as targets.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let x = Matrix::new(self.len(), self.rows * self.cols, self.pixels.clone())?;
        let labels: Vec<usize> = self.labels.iter().map(|&l| usize::from(l)).collect();
        Dataset::from_labels(x, &labels, CLASSES)
    }
}

/// Rotates every image clockwise about its center with bilinear
/// interpolation; samples falling outside the frame read as 0.
pub fn rotate(set: &ImageSet, degrees: f64) -> ImageSet {
    if degrees == 0.0 {
        return set.clone();
    }
    let (rows, cols) = set.shape();
    let (cy, cx) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    // Source coordinate of every destination pixel (inverse rotation).
    let sources: Vec<(f64, f64)> = (0..rows * cols)
        .map(|k| {
            let (y, x) = ((k / cols) as f64 - cy, (k % cols) as f64 - cx);
            (cy - x * sin + y * cos, cx + x * cos + y * sin)
        })
        .collect();
    let mut pixels = Vec::with_capacity(set.pixels.len());
    for i in 0..set.len() {
        let img = set.image(i);
        let at = |r: isize, c: isize| {
            if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
                0.0
            } else {
                img[r as usize * cols + c as usize]
            }
        };
        for &(sy, sx) in &sources {
            let (r0, c0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - r0, sx - c0);
            let (r0, c0) = (r0 as isize, c0 as isize);
            let v = at(r0, c0) * (1.0 - fy) * (1.0 - fx)
                + at(r0, c0 + 1) * (1.0 - fy) * fx
                + at(r0 + 1, c0) * fy * (1.0 - fx)
                + at(r0 + 1, c0 + 1) * fy * fx;
            pixels.push(v.clamp(0.0, 1.0));
        }
    }
    ImageSet {
        pixels,
        labels: set.labels.clone(),
        rows,
        cols,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(r: usize, c: usize) -> ImageSet {
        let mut px = vec![0.0; 28 * 28];
        px[r * 28 + c] = 1.0;
        ImageSet::new(px, vec![3], 28, 28).unwrap()
    }

    /// Exact quarter turn clockwise: (r, c) → (c, n−1−r).
    fn quarter_turn(set: &ImageSet) -> ImageSet {
        let n = set.rows;
        let mut px = vec![0.0; set.pixels.len()];
        for i in 0..set.len() {
            let img = set.image(i);
            for r in 0..n {
                for c in 0..n {
                    px[i * n * n + c * n + (n - 1 - r)] = img[r * n + c];
                }
            }
        }
        ImageSet::new(px, set.labels.clone(), n, n).unwrap()
    }

    fn max_diff(a: &ImageSet, b: &ImageSet) -> f64 {
        a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_rotation_is_identity() {
        let s = single(3, 20);
        assert_eq!(rotate(&s, 0.0), s);
    }

    #[test]
    fn bright_pixel_lands_on_rotated_coordinate() {
        let out = rotate(&single(5, 20), 90.0);
        let total: f64 = out.pixels.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!((out.image(0)[20 * 28 + (27 - 5)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_turn_matches_four_exact_quarter_turns() {
        let px: Vec<f64> = (0..28 * 28).map(|k| ((k * 37) % 101) as f64 / 100.0).collect();
        let s = ImageSet::new(px, vec![1], 28, 28).unwrap();
        let mut exact = s.clone();
        for _ in 0..4 {
            exact = quarter_turn(&exact);
        }
        assert_eq!(exact, s);
        assert!(max_diff(&rotate(&s, 360.0), &exact) < 1e-6);
        assert!(max_diff(&rotate(&s, 90.0), &quarter_turn(&s)) < 1e-6);
    }

    #[test]
    fn constructor_checks() {
        assert!(ImageSet::new(vec![0.0; 3], vec![1], 2, 2).is_err());
        assert!(ImageSet::new(vec![2.0; 4], vec![1], 2, 2).is_err());
        assert!(ImageSet::new(vec![0.0; 4], vec![10], 2, 2).is_err());
    }

    #[test]
    fn to_dataset_is_one_hot() {
        let d = single(0, 0).to_dataset().unwrap();
        assert_eq!(d.labels().unwrap(), vec![3]);
        assert_eq!(d.input_dim(), 784);
    }
}
