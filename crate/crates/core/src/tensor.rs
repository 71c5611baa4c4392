//! Dense channel-last image container.

use std::fmt;

use crate::error::{Error, Result};

/// An `height × width × channels` image of 32-bit samples stored row-major,
/// channel-last. The shape is fixed at construction.
#[derive(Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl fmt::Debug for ImageTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ImageTensor({}x{}x{})",
            self.height, self.width, self.channels
        )
    }
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidShape("channel count must be positive".into()));
        }
        let len = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidShape(format!("{height}x{width}x{channels} overflows")))?;
        if data.len() != len {
            return Err(Error::shape(
                format!("{len} samples for {height}x{width}x{channels}"),
                format!("{} samples", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(channels > 0, "channel count must be positive");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        assert!(channels > 0, "channel count must be positive");
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access to the samples; the length (and therefore the shape)
    /// cannot change through a slice.
    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    fn offset(&self, row: usize, col: usize, ch: usize) -> usize {
        assert!(
            row < self.height && col < self.width && ch < self.channels,
            "index ({row}, {col}, {ch}) out of bounds for {}x{}x{}",
            self.height,
            self.width,
            self.channels
        );
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[self.offset(row, col, ch)]
    }

    pub fn try_get(&self, row: usize, col: usize, ch: usize) -> Option<f32> {
        (row < self.height && col < self.width && ch < self.channels)
            .then(|| self.data[(row * self.width + col) * self.channels + ch])
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        let i = self.offset(row, col, ch);
        self.data[i] = value;
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ))
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> ImageTensor {
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ImageTensor, f: impl Fn(f32, f32) -> f32) -> Result<ImageTensor> {
        self.ensure_same_shape(other)?;
        Ok(ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, ch: usize) -> ImageTensor {
        assert!(ch < self.channels, "channel {ch} out of range");
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self
                .data
                .iter()
                .skip(ch)
                .step_by(self.channels)
                .copied()
                .collect(),
        }
    }

    /// Interleaves single-channel images into one multi-channel image.
    pub fn from_channels(planes: &[ImageTensor]) -> Result<ImageTensor> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidArgument("no channels given".into()))?;
        for p in planes {
            if p.channels != 1 || p.height != first.height || p.width != first.width {
                return Err(Error::shape(
                    format!("{}x{}x1", first.height, first.width),
                    format!("{:?}", p.shape()),
                ));
            }
        }
        let n = first.height * first.width;
        let mut data = Vec::with_capacity(n * planes.len());
        for i in 0..n {
            for p in planes {
                data.push(p.data[i]);
            }
        }
        ImageTensor::new(first.height, first.width, planes.len(), data)
    }

    pub fn crop(&self, row0: usize, col0: usize, height: usize, width: usize) -> Result<ImageTensor> {
        if row0 + height > self.height || col0 + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width} at ({row0}, {col0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for r in row0..row0 + height {
            let start = (r * self.width + col0) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        ImageTensor::new(height, width, self.channels, data)
    }

    /// Pads bottom and right by mirror reflection (edge sample not repeated).
    pub fn reflect_pad(&self, pad_bottom: usize, pad_right: usize) -> Result<ImageTensor> {
        if pad_bottom == 0 && pad_right == 0 {
            return Ok(self.clone());
        }
        if pad_bottom >= self.height.max(2) || pad_right >= self.width.max(2) {
            return Err(Error::InvalidArgument(format!(
                "reflection pad ({pad_bottom}, {pad_right}) too large for {}x{}",
                self.height, self.width
            )));
        }
        let h = self.height + pad_bottom;
        let w = self.width + pad_right;
        let reflect = |i: usize, n: usize| if i < n { i } else { 2 * (n - 1) - i };
        Ok(ImageTensor::from_fn(h, w, self.channels, |r, c, ch| {
            self.get(reflect(r, self.height), reflect(c, self.width), ch)
        }))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn from_f64(height: usize, width: usize, channels: usize, data: &[f64]) -> Result<ImageTensor> {
        ImageTensor::new(height, width, channels, data.iter().map(|&v| v as f32).collect())
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(ImageTensor::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageTensor::new(2, 2, 0, vec![]).is_err());
    }

    #[test]
    #[should_panic]
    fn out_of_bounds_read_panics() {
        ImageTensor::zeros(2, 2, 1).get(2, 0, 0);
    }

    #[test]
    fn channel_split_and_merge() {
        let img = ImageTensor::from_fn(3, 4, 3, |r, c, ch| (r * 100 + c * 10 + ch) as f32);
        let planes: Vec<_> = (0..3).map(|ch| img.channel(ch)).collect();
        assert_eq!(planes[2].get(1, 2, 0), 122.0);
        assert_eq!(ImageTensor::from_channels(&planes).unwrap(), img);
    }

    #[test]
    fn reflect_pad_then_crop_is_identity() {
        let img = ImageTensor::from_fn(5, 7, 2, |r, c, ch| (r * 7 + c) as f32 + ch as f32 * 0.5);
        let padded = img.reflect_pad(3, 1).unwrap();
        assert_eq!(padded.shape(), (8, 8, 2));
        assert_eq!(padded.get(5, 0, 0), img.get(3, 0, 0));
        assert_eq!(padded.get(0, 7, 1), img.get(0, 5, 1));
        assert_eq!(padded.crop(0, 0, 5, 7).unwrap(), img);
    }
}
