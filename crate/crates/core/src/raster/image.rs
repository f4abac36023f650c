use std::path::Path;

use crate::error::{Error, Result};

/// Row-major `f64` image with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "image buffer has {} values, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Mean of squared differences over all values.
    pub fn mean_squared_diff(&self, other: &Image) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::invalid("image shapes differ"));
        }
        let n = self.data.len().max(1) as f64;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
    }

    /// Fraction of values above one half.
    pub fn coverage(&self) -> f64 {
        let n = self.data.len().max(1) as f64;
        self.data.iter().filter(|v| **v > 0.5).count() as f64 / n
    }

    /// 8-bit quantization, `round(255 v)` after clamping to `[0,1]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// Writes a grayscale (1 channel) or RGB (3 channel) PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(Error::invalid(format!("cannot write {c}-channel image as PNG"))),
        };
        image::save_buffer(path, &self.to_bytes(), self.width as u32, self.height as u32, color).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other.to_string()),
        })
    }

    /// Reads a PNG and converts it to `channels` (1 or 3) values in `[0,1]`.
    pub fn load_png(path: impl AsRef<Path>, channels: usize) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(format!("{}: {other}", path.display())),
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data: Vec<f64> = match channels {
            1 => img.to_luma8().into_raw().into_iter().map(|b| b as f64 / 255.0).collect(),
            3 => img.to_rgb8().into_raw().into_iter().map(|b| b as f64 / 255.0).collect(),
            c => return Err(Error::invalid(format!("cannot read PNG as {c} channels"))),
        };
        Self::from_data(w, h, channels, data)
    }
}

/// Color image plus per-pixel residual transmittance.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub pixels: Image,
    pub transmittance: Image,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..4 * 3 * 3).map(|i| i as f64 / 35.0).collect();
        let img = Image::from_data(4, 3, 3, data).unwrap();
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path, 3).unwrap();
        assert!(back.same_shape(&img));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let mask = Image::filled(5, 5, 1, 1.0);
        let mpath = dir.path().join("m.png");
        mask.save_png(&mpath).unwrap();
        assert_eq!(Image::load_png(&mpath, 1).unwrap(), mask);
    }

    #[test]
    fn shape_checks() {
        assert!(Image::from_data(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(2, 2, 1).mean_squared_diff(&Image::new(2, 2, 3)).is_err());
        assert_eq!(Image::new(2, 2, 1).mean_squared_diff(&Image::filled(2, 2, 1, 0.5)).unwrap(), 0.25);
    }
}
