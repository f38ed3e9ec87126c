use std::path::Path;

use image::{ColorType, ImageReader, RgbImage};

use super::{Image, CHANNELS};
use crate::error::{Error, Result};

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads an 8-bit RGB PNG, mapping byte `b` to `b / 255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e.to_string()))?;
    if decoded.color() != ColorType::Rgb8 {
        return Err(image_err(
            path,
            format!("expected 8-bit RGB, found {:?}", decoded.color()),
        ));
    }
    let rgb = decoded.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let n = w * h;
    let mut data = vec![0.0f32; CHANNELS * n];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..CHANNELS {
            data[c * n + i] = px.0[c] as f32 / 255.0;
        }
    }
    Ok(Image::from_trusted(h, w, data))
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Saves as an 8-bit RGB PNG, mapping `v` to `round(v·255)`.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (img.height(), img.width());
    let n = h * w;
    let mut buf = vec![0u8; CHANNELS * n];
    for i in 0..n {
        for c in 0..CHANNELS {
            buf[i * CHANNELS + c] = quantize(img.data()[c * n + i]);
        }
    }
    let rgb = RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized from image");
    rgb.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))
}
