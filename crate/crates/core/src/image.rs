//! Dense row-major images and 8-bit PNG I/O.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

pub type RgbImage = Image<Rgb>;
pub type GrayImage = Image<f64>;

impl<T: Clone> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Image { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_dims<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Image<U> {
        Image { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }
}

pub(crate) fn check_dims<A, B>(a: &Image<A>, b: &Image<B>, what: &str) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl RgbImage {
    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantized(&self) -> RgbImage {
        self.map(|p| p.map(|c| quantize(c) as f64 / 255.0))
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().flat_map(|p| p.map(quantize)).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_png(path, self.width, self.height, png::ColorType::Rgb, &self.to_rgb8())
    }

    pub fn load_png(path: &Path) -> Result<RgbImage> {
        let (w, h, ch, bytes) = read_png(path)?;
        let data = bytes
            .chunks(ch)
            .map(|px| match ch {
                1 | 2 => [px[0] as f64 / 255.0; 3],
                _ => [px[0] as f64 / 255.0, px[1] as f64 / 255.0, px[2] as f64 / 255.0],
            })
            .collect();
        Ok(Image { width: w, height: h, data })
    }
}

impl GrayImage {
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        write_png(path, self.width, self.height, png::ColorType::Grayscale, &bytes)
    }

    pub fn load_png(path: &Path) -> Result<GrayImage> {
        let (w, h, ch, bytes) = read_png(path)?;
        let data = bytes.chunks(ch).map(|px| px[0] as f64 / 255.0).collect();
        Ok(Image { width: w, height: h, data })
    }

    /// Maps finite values linearly onto [0, 1]; infinite values become 0.
    pub fn normalized_finite(&self) -> GrayImage {
        let finite = self.data.iter().copied().filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        self.map(|&v| if v.is_finite() { 1.0 - (v - lo) / span * 0.8 } else { 0.0 })
    }
}

fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let to_err = |e: png::EncodingError| Error::io(format!("writing {}", path.display()), std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(bytes).map_err(to_err)?;
    writer.finish().map_err(to_err)?;
    Ok(())
}

fn read_png(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let to_err = |e: png::DecodingError| Error::io(format!("decoding {}", path.display()), std::io::Error::other(e));
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(to_err)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(to_err)?;
    buf.truncate(info.buffer_size());
    let ch = info.color_type.samples();
    Ok((info.width as usize, info.height as usize, ch, buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(5, 3, |x, y| [x as f64 / 4.0, y as f64 / 2.0, 0.3]);
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        let back = RgbImage::load_png(&path).unwrap();
        assert_eq!(back, img.quantized());
    }
}
