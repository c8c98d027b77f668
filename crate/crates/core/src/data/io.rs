//! Raster and text float-map I/O.

use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{contract_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Magic first line of the plain-text float map format.
pub const FLOAT_MAP_MAGIC: &str = "TFM";

/// Storage precision of a loaded image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    /// 8-bit raster, normalized to `[0, 1]`.
    Eight,
    /// 16-bit raster, raw stored units.
    Sixteen,
    /// Real-valued text map, values as written.
    Float,
}

impl BitDepth {
    /// Largest representable value in the loaded units.
    pub fn peak(self) -> f64 {
        match self {
            BitDepth::Eight | BitDepth::Float => 1.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadedImage<T: Scalar> {
    pub tensor: Tensor<T>,
    pub depth: BitDepth,
}

fn is_float_map(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("tfm"))
}

/// Loads a PNG (8/16-bit, gray or color; alpha dropped) or a text float map.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<LoadedImage<T>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    if is_float_map(path) {
        return Ok(LoadedImage { tensor: read_float_map(&fs::read_to_string(path)?)?, depth: BitDepth::Float });
    }
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let planar = |c: usize, px: &dyn Fn(usize, usize, usize) -> f64| Tensor::from_fn3(c, h, w, |ci, y, x| T::lit(px(ci, y, x)));
    let n8 = 1.0 / 255.0;
    let out = match &img {
        DynamicImage::ImageLuma8(b) => (planar(1, &|_, y, x| b.get_pixel(x as u32, y as u32).0[0] as f64 * n8), BitDepth::Eight),
        DynamicImage::ImageLumaA8(b) => (planar(1, &|_, y, x| b.get_pixel(x as u32, y as u32).0[0] as f64 * n8), BitDepth::Eight),
        DynamicImage::ImageRgb8(b) => (planar(3, &|c, y, x| b.get_pixel(x as u32, y as u32).0[c] as f64 * n8), BitDepth::Eight),
        DynamicImage::ImageRgba8(b) => (planar(3, &|c, y, x| b.get_pixel(x as u32, y as u32).0[c] as f64 * n8), BitDepth::Eight),
        DynamicImage::ImageLuma16(b) => (planar(1, &|_, y, x| b.get_pixel(x as u32, y as u32).0[0] as f64), BitDepth::Sixteen),
        DynamicImage::ImageLumaA16(b) => (planar(1, &|_, y, x| b.get_pixel(x as u32, y as u32).0[0] as f64), BitDepth::Sixteen),
        DynamicImage::ImageRgb16(b) => (planar(3, &|c, y, x| b.get_pixel(x as u32, y as u32).0[c] as f64), BitDepth::Sixteen),
        DynamicImage::ImageRgba16(b) => (planar(3, &|c, y, x| b.get_pixel(x as u32, y as u32).0[c] as f64), BitDepth::Sixteen),
        other => {
            return contract_err(format!("unsupported pixel format {:?} in {}", other.color(), path.display()));
        }
    };
    Ok(LoadedImage { tensor: out.0, depth: out.1 })
}

/// Writes `tensor` to `path`: `.tfm` as exact text, otherwise PNG at the
/// requested depth (8-bit expects `[0, 1]` values, 16-bit raw units).
pub fn save_image<T: Scalar>(path: &Path, tensor: &Tensor<T>, depth: BitDepth) -> Result<()> {
    if is_float_map(path) || depth == BitDepth::Float {
        fs::write(path, write_float_map(tensor)?)?;
        return Ok(());
    }
    let (c, h, w) = tensor.dims3()?;
    let quant = |v: T| -> f64 {
        let v = v.as_f64();
        match depth {
            BitDepth::Eight => (v * 255.0).round().clamp(0.0, 255.0),
            _ => v.round().clamp(0.0, 65535.0),
        }
    };
    let (w32, h32) = (w as u32, h as u32);
    let img = match (c, depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(ImageBuffer::from_fn(w32, h32, |x, y| {
            Luma([quant(tensor.at3(0, y as usize, x as usize)) as u8])
        })),
        (3, BitDepth::Eight) => DynamicImage::ImageRgb8(ImageBuffer::from_fn(w32, h32, |x, y| {
            Rgb([0, 1, 2].map(|ci| quant(tensor.at3(ci, y as usize, x as usize)) as u8))
        })),
        (1, _) => DynamicImage::ImageLuma16(ImageBuffer::from_fn(w32, h32, |x, y| {
            Luma([quant(tensor.at3(0, y as usize, x as usize)) as u16])
        })),
        (3, _) => DynamicImage::ImageRgb16(ImageBuffer::from_fn(w32, h32, |x, y| {
            Rgb([0, 1, 2].map(|ci| quant(tensor.at3(ci, y as usize, x as usize)) as u16))
        })),
        (c, _) => return contract_err(format!("cannot store a {c}-channel image as PNG")),
    };
    img.save(path)?;
    Ok(())
}

/// Min-max normalized 8-bit rendering of the channel mean, for inspection.
pub fn save_visualization<T: Scalar>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    let t = match tensor.shape() {
        [h, w] => tensor.clone().reshape(vec![1, *h, *w])?,
        _ => tensor.channel_mean()?,
    };
    let (lo, hi) = (t.min(), t.max());
    let span = if hi > lo { hi - lo } else { T::one() };
    save_image(path, &t.map(|v| (v - lo) / span), BitDepth::Eight)
}

pub fn write_float_map<T: Scalar>(tensor: &Tensor<T>) -> Result<String> {
    let (c, h, w) = tensor.dims3()?;
    let mut s = format!("{FLOAT_MAP_MAGIC}\n{c} {h} {w}\n");
    for row in tensor.data().chunks(w.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    Ok(s)
}

pub fn read_float_map<T: Scalar>(text: &str) -> Result<Tensor<T>> {
    let bad = |d: String| Error::Parse { what: "float map".into(), detail: d };
    let mut tokens = text.split_whitespace();
    if tokens.next() != Some(FLOAT_MAP_MAGIC) {
        return Err(bad("missing TFM header".into()));
    }
    let mut dim = || -> Result<usize> {
        tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad extents".into()))
    };
    let (c, h, w) = (dim()?, dim()?, dim()?);
    let data: Vec<T> = tokens
        .map(|t| t.parse::<f64>().map(T::lit).map_err(|e| bad(e.to_string())))
        .collect::<Result<_>>()?;
    Tensor::new(vec![c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_bit_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let t = Tensor::<f64>::from_fn3(1, 7, 9, |_, y, x| ((y * 9 + x) * 977 % 65536) as f64);
        save_image(&path, &t, BitDepth::Sixteen).unwrap();
        let a = load_image::<f64>(&path).unwrap();
        assert_eq!(a.depth, BitDepth::Sixteen);
        assert_eq!(a.tensor, t);
        save_image(&path, &a.tensor, BitDepth::Sixteen).unwrap();
        assert_eq!(load_image::<f64>(&path).unwrap().tensor, t);
    }

    #[test]
    fn eight_bit_color_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let t = Tensor::<f32>::from_fn3(3, 4, 5, |c, y, x| ((c * 20 + y * 5 + x) as f32) / 255.0);
        save_image(&path, &t, BitDepth::Eight).unwrap();
        let a = load_image::<f32>(&path).unwrap();
        assert_eq!(a.depth, BitDepth::Eight);
        assert!(a.tensor.max_abs_diff(&t).unwrap() < 1e-6);
    }

    #[test]
    fn float_map_exact() {
        let t = Tensor::<f64>::from_fn3(2, 3, 4, |c, y, x| (c as f64 + 0.1) * (y as f64 - 1.7) / (x as f64 + 3.0));
        assert_eq!(read_float_map::<f64>(&write_float_map(&t).unwrap()).unwrap(), t);
        assert!(read_float_map::<f64>("TFM\n1 2 2\n1 2 3").is_err());
    }

    #[test]
    fn missing_file_is_named() {
        let err = load_image::<f64>(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
