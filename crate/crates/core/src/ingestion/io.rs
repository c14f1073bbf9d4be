use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use ndarray::{Array2, Array3};

use super::layout::Layout;
use super::{Sample, SampleMeta};
use crate::datamodel::SparseDepthMap;
use crate::error::{Error, Result};

pub const RGB_FILE: &str = "rgb.png";
pub const DEPTH_FILE: &str = "depth.png";
pub const META_FILE: &str = "meta.json";
/// Depth PNG counts per metre.
pub const DEPTH_SCALE: f64 = 256.0;

pub fn quantize_unit(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn rgb_to_image(rgb: &Array3<f32>) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
    let (_, h, w) = rgb.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (i, j) = (y as usize, x as usize);
        Rgb([quantize_unit(rgb[[0, i, j]]), quantize_unit(rgb[[1, i, j]]), quantize_unit(rgb[[2, i, j]])])
    })
}

pub fn image_to_rgb(img: &ImageBuffer<Rgb<u8>, Vec<u8>>) -> Array3<f32> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, i, j)| {
        img.get_pixel(j as u32, i as u32)[c] as f32 / 255.0
    })
}

pub fn save_rgb_png(rgb: &Array3<f32>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    rgb_to_image(rgb).save(path)?;
    Ok(())
}

pub fn load_rgb_png(path: &Path) -> Result<Array3<f32>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?;
    match img {
        image::DynamicImage::ImageRgb8(b) => Ok(image_to_rgb(&b)),
        other => Err(Error::Corrupt(format!("{}: expected 8-bit RGB, got {:?}", path.display(), other.color()))),
    }
}

/// Writes depth as 16-bit counts of 1/256 m; 0 marks invalid pixels.
pub fn save_depth_png(d: &SparseDepthMap, path: &Path) -> Result<()> {
    let (h, w) = d.dim();
    let mut buf = ImageBuffer::<Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for ((i, j), &z) in d.depth().indexed_iter() {
        let v = if d.mask().get(i, j) { (z as f64 * DEPTH_SCALE).round() } else { 0.0 };
        if v > u16::MAX as f64 {
            return Err(Error::InvalidInput(format!("depth {z} m exceeds the 16-bit range")));
        }
        if d.mask().get(i, j) && v < 1.0 {
            return Err(Error::InvalidInput(format!("depth {z} m rounds to the invalid marker")));
        }
        buf.put_pixel(j as u32, i as u32, Luma([v as u16]));
    }
    buf.save(path)?;
    Ok(())
}

pub fn load_depth_png(path: &Path) -> Result<SparseDepthMap> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let buf = match image::open(path)? {
        image::DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(Error::Corrupt(format!(
                "{}: expected 16-bit grayscale, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = buf.dimensions();
    let depth = Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        (buf.get_pixel(j as u32, i as u32)[0] as f64 / DEPTH_SCALE) as f32
    });
    SparseDepthMap::from_depth(depth)
}

pub fn save_sample(s: &Sample, dir: &Path) -> Result<()> {
    s.validate()?;
    fs::create_dir_all(dir)?;
    save_rgb_png(&s.full_rgb, &dir.join(RGB_FILE))?;
    save_depth_png(&s.depth, &dir.join(DEPTH_FILE))?;
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&s.meta)?)?;
    Ok(())
}

pub fn load_sample(dir: &Path) -> Result<Sample> {
    for f in [RGB_FILE, DEPTH_FILE, META_FILE] {
        if !dir.join(f).is_file() {
            return Err(Error::MissingFile(dir.join(f)));
        }
    }
    let full_rgb = load_rgb_png(&dir.join(RGB_FILE))?;
    let depth = load_depth_png(&dir.join(DEPTH_FILE))?;
    let meta: SampleMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
    let (_, h, w) = full_rgb.dim();
    let input_rgb = Layout::new(h, w)?.apply(&full_rgb)?;
    let s = Sample { full_rgb, input_rgb, depth, meta };
    s.validate()?;
    Ok(s)
}

/// A sample directory itself, or its immediate sample subdirectories in name order.
pub fn discover_samples(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if dir.join(RGB_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut found: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RGB_FILE).is_file())
        .collect();
    found.sort();
    Ok(found)
}
