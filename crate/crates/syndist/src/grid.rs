//! Dense row-major containers for per-pixel data.
//!
//! `Grid<T>` is a single-channel H×W array indexed as `(v, u)` = (row, column)
//! with pixel centers at integer coordinates and `(0, 0)` at the top left.
//! `Image` is the H×W×C float container all photometric losses consume;
//! intensities live in `[0, 1]`.

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(v, u));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "grid data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape<U: Copy>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn at(&self, v: usize, u: usize) -> T {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, v: usize, u: usize, value: T) {
        self.data[v * self.width + u] = value;
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&t| f(t)).collect(),
        }
    }

    pub fn zip_map<U: Copy, V: Copy>(&self, other: &Grid<U>, f: impl Fn(T, U) -> V) -> Grid<V> {
        assert!(self.same_shape(other), "zip_map shape mismatch");
        Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

impl Grid<f64> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Grid::filled(width, height, 0.0)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Grid<bool>) -> Grid<bool> {
        self.zip_map(other, |a, b| a && b)
    }
}

/// Per-pixel radial distances in meters (pinhole semantics: z-depth).
pub type DistanceMap = Grid<f64>;
/// Per-pixel integer class labels in `1..=S`.
pub type SegMask = Grid<u16>;
/// 1 exactly where a warped sample landed inside source bounds with a valid projection.
pub type ValidityMask = Grid<bool>;

/// H×W×C intensities in `[0, 1]`, stored row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} does not match {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument(
                "image contains non-finite values".into(),
            ));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for v in 0..height {
            for u in 0..width {
                for c in 0..channels {
                    data.push(f(v, u, c));
                }
            }
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    /// Single-channel image backed by an existing grid.
    pub fn from_grid(grid: &Grid<f64>) -> Self {
        Image {
            width: grid.width(),
            height: grid.height(),
            channels: 1,
            data: grid.data().to_vec(),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn at(&self, v: usize, u: usize, c: usize) -> f64 {
        self.data[(v * self.width + u) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, v: usize, u: usize, c: usize, value: f64) {
        self.data[(v * self.width + u) * self.channels + c] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// One grid per channel.
    pub fn channel(&self, c: usize) -> Grid<f64> {
        Grid::from_fn(self.width, self.height, |v, u| self.at(v, u, c))
    }
}

/// Peak signal-to-noise ratio in dB over an optional pixel mask, peak = 1.
///
/// Returns infinity for identical inputs.
pub fn psnr(a: &Image, b: &Image, mask: Option<&Grid<bool>>) -> f64 {
    assert!(a.same_shape(b), "psnr shape mismatch");
    let mut se = 0.0;
    let mut n = 0usize;
    for v in 0..a.height() {
        for u in 0..a.width() {
            if let Some(m) = mask {
                if !m.at(v, u) {
                    continue;
                }
            }
            for c in 0..a.channels() {
                let d = a.at(v, u, c) - b.at(v, u, c);
                se += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        return f64::NAN;
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Mask keeping pixels at least `margin` away from every image border.
pub fn interior_mask(width: usize, height: usize, margin: usize) -> Grid<bool> {
    Grid::from_fn(width, height, |v, u| {
        u >= margin && v >= margin && u + margin < width && v + margin < height
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_roundtrip() {
        let g = Grid::from_fn(4, 3, |v, u| (v * 10 + u) as f64);
        assert_eq!(g.at(2, 3), 23.0);
        assert_eq!(g.width(), 4);
        assert_eq!(g.height(), 3);
    }

    #[test]
    fn image_rejects_bad_channel_count() {
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
    }

    #[test]
    fn image_rejects_non_finite() {
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let img = Image::from_fn(8, 8, 1, |v, u, _| ((v + u) % 5) as f64 / 5.0);
        assert!(psnr(&img, &img, None).is_infinite());
    }
}
