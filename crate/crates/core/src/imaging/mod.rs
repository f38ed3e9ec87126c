//! Plain image containers plus color conversion, quality metrics,
//! histograms and PNG I/O.
//!
//! Everything here is a pure function over immutable inputs. Differentiable
//! counterparts live in [`crate::autodiff`].

mod color;
mod io;
mod metrics;

pub use color::{rgb_to_yuv, yuv_to_rgb, RGB_TO_YUV};
pub use io::{load_image, save_image};
pub use metrics::{histogram256, psnr, ssim, Histogram256, MetricKind, MetricValue, SSIM_WINDOW};

use crate::error::{Error, Result};

/// Number of color channels in every [`Image`].
pub const CHANNELS: usize = 3;

/// Channel-major `C×H×W` array of `f32` with no range constraint.
///
/// Used for intermediate quantities such as YUV planes or raw perturbations
/// that may leave the unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ChwTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ChwTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// A 3-channel image with intensities in `[0, 1]`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image, rejecting wrong lengths and values outside `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != CHANNELS * height * width {
            return Err(Error::Shape(format!(
                "image data length {} does not match 3x{}x{}",
                data.len(),
                height,
                width
            )));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::InvalidValue(format!(
                "pixel {i} has value {v}, expected a finite value in [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; CHANNELS * height * width])
    }

    /// Builds an image with a constant value per channel.
    pub fn from_channel_values(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let n = height * width;
        let data = rgb
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, n))
            .collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "3x{}x{} vs 3x{}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    /// Largest absolute elementwise difference to `other`.
    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn to_tensor(&self) -> ChwTensor {
        ChwTensor {
            channels: CHANNELS,
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }

    /// Wraps already-validated data without re-checking the range.
    pub(crate) fn from_trusted(height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), CHANNELS * height * width);
        Self {
            height,
            width,
            data,
        }
    }
}

impl TryFrom<ChwTensor> for Image {
    type Error = Error;

    fn try_from(t: ChwTensor) -> Result<Self> {
        if t.channels != CHANNELS {
            return Err(Error::Shape(format!(
                "expected 3 channels, found {}",
                t.channels
            )));
        }
        Image::new(t.height, t.width, t.data)
    }
}

/// Clamps every element into `[0, 1]`.
pub fn clamp01(t: &ChwTensor) -> Result<Image> {
    if t.channels != CHANNELS {
        return Err(Error::Shape(format!(
            "expected 3 channels, found {}",
            t.channels
        )));
    }
    if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("element {i} of clamp input")));
    }
    let data = t.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(Image::from_trusted(t.height, t.width, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        assert!(Image::new(1, 1, vec![0.0, 0.5, 1.1]).is_err());
        assert!(Image::new(1, 1, vec![0.0, f32::NAN, 1.0]).is_err());
        assert!(Image::new(1, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn clamp_behaviour() {
        let t = ChwTensor::new(3, 1, 2, vec![-0.1, 1.3, 0.25, 0.5, 0.0, 1.0]).unwrap();
        let img = clamp01(&t).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 0.25, 0.5, 0.0, 1.0]);

        let inside = ChwTensor::new(3, 1, 1, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(clamp01(&inside).unwrap().data(), inside.data());

        let bad = ChwTensor::new(3, 1, 1, vec![0.1, f32::INFINITY, 0.3]).unwrap();
        assert!(matches!(clamp01(&bad), Err(Error::NonFinite(_))));
    }

    #[test]
    fn channel_constant_layout() {
        let img = Image::from_channel_values(2, 2, [0.1, 0.2, 0.3]).unwrap();
        assert_eq!(img.plane(1), &[0.2; 4]);
        assert_eq!(img.get(2, 1, 1), 0.3);
    }
}
