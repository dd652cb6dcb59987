//! PNG encode/decode for targets (8-bit sRGB), depth (16-bit gray), plane masks
//! (indexed) and reconstruction snapshots.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::OnceLock;

use ndarray::{Array2, Array3, Axis};

use crate::{Error, Result};

fn srgb_decode_table() -> &'static [f32; 256] {
    static TABLE: OnceLock<[f32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0f32; 256];
        for (c, v) in t.iter_mut().enumerate() {
            *v = srgb_to_linear(c as f64 / 255.0) as f32;
        }
        t
    })
}

pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.0031308 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Linear intensity to an 8-bit sRGB code.
pub fn encode_srgb8(v: f32) -> u8 {
    (linear_to_srgb((v as f64).clamp(0.0, 1.0)) * 255.0).round() as u8
}

/// 8-bit sRGB code to linear intensity.
pub fn decode_srgb8(code: u8) -> f32 {
    srgb_decode_table()[code as usize]
}

/// Snap linear intensities onto the values an 8-bit sRGB PNG can represent.
pub fn quantize_srgb8(values: &Array3<f32>) -> Array3<f32> {
    values.mapv(|v| decode_srgb8(encode_srgb8(v)))
}

pub fn encode_depth16(v: f32) -> u16 {
    ((v as f64).clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn decode_depth16(code: u16) -> f32 {
    code as f32 / 65535.0
}

pub fn quantize_depth16(values: &Array2<f32>) -> Array2<f32> {
    values.mapv(|v| decode_depth16(encode_depth16(v)))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn encode_err(path: &Path, e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Image { path: path.to_path_buf(), detail: other.to_string() },
    }
}

struct Decoded {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| corrupt(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Image {
        path: path.to_path_buf(),
        detail: "image too large".into(),
    })?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data).map_err(|e| corrupt(path, e))?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

fn corrupt(path: &Path, e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => Error::ShapeMismatch {
            path: path.to_path_buf(),
            detail: "image data is truncated".into(),
        },
        png::DecodingError::IoError(io) => Error::io(path, io),
        other => Error::Image { path: path.to_path_buf(), detail: other.to_string() },
    }
}

/// Write a `(3, H, W)` linear target as an sRGB-tagged 8-bit PNG.
pub fn save_target_png(path: &Path, rgb: &Array3<f32>) -> Result<()> {
    let (c, h, w) = rgb.dim();
    if c != 3 {
        return Err(Error::DimensionMismatch(format!("expected 3 channels, got {c}")));
    }
    let mut bytes = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                bytes.push(encode_srgb8(rgb[[ch, y, x]]));
            }
        }
    }
    let mut enc = png::Encoder::new(create(path)?, w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_source_srgb(png::SrgbRenderingIntent::Perceptual);
    let mut writer = enc.write_header().map_err(|e| encode_err(path, e))?;
    writer.write_image_data(&bytes).map_err(|e| encode_err(path, e))
}

/// Read any 8/16-bit gray or RGB(A) PNG as linear `(3, H, W)` intensity.
pub fn load_target_png(path: &Path) -> Result<Array3<f32>> {
    let img = decode(path)?;
    let channels = match img.color {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::Image { path: path.to_path_buf(), detail: "indexed targets are not supported".into() })
        }
    };
    let sixteen = img.depth == png::BitDepth::Sixteen;
    if !sixteen && img.depth != png::BitDepth::Eight {
        return Err(Error::Image { path: path.to_path_buf(), detail: format!("unsupported bit depth {:?}", img.depth) });
    }
    let bps = if sixteen { 2 } else { 1 };
    let sample = |i: usize| -> f32 {
        if sixteen {
            let code = u16::from_be_bytes([img.data[2 * i], img.data[2 * i + 1]]);
            srgb_to_linear(code as f64 / 65535.0) as f32
        } else {
            decode_srgb8(img.data[i])
        }
    };
    if img.data.len() < img.width * img.height * channels * bps {
        return Err(Error::ShapeMismatch { path: path.to_path_buf(), detail: "image data is truncated".into() });
    }
    Ok(Array3::from_shape_fn((3, img.height, img.width), |(c, y, x)| {
        let base = (y * img.width + x) * channels;
        let ch = if channels >= 3 { c } else { 0 };
        sample(base + ch)
    }))
}

pub fn save_depth_png(path: &Path, depth: &Array2<f32>) -> Result<()> {
    let (h, w) = depth.dim();
    let mut bytes = Vec::with_capacity(h * w * 2);
    for v in depth.iter() {
        bytes.extend_from_slice(&encode_depth16(*v).to_be_bytes());
    }
    let mut enc = png::Encoder::new(create(path)?, w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header().map_err(|e| encode_err(path, e))?;
    writer.write_image_data(&bytes).map_err(|e| encode_err(path, e))
}

/// Read a gray PNG (8 or 16 bit) as depth in `[0, 1]`.
pub fn load_depth_png(path: &Path) -> Result<Array2<f32>> {
    let img = decode(path)?;
    let (h, w) = (img.height, img.width);
    let channels = match img.color {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::Image { path: path.to_path_buf(), detail: "indexed depth is not supported".into() })
        }
    };
    match img.depth {
        png::BitDepth::Sixteen => Ok(Array2::from_shape_fn((h, w), |(y, x)| {
            let i = 2 * (y * w + x) * channels;
            decode_depth16(u16::from_be_bytes([img.data[i], img.data[i + 1]]))
        })),
        png::BitDepth::Eight => Ok(Array2::from_shape_fn((h, w), |(y, x)| img.data[(y * w + x) * channels] as f32 / 255.0)),
        other => Err(Error::Image { path: path.to_path_buf(), detail: format!("unsupported bit depth {other:?}") }),
    }
}

/// Palette PNG where pixel value `k` marks plane `k`.
pub fn save_label_png(path: &Path, labels: &Array2<u8>, planes: usize) -> Result<()> {
    let (h, w) = labels.dim();
    let mut palette = Vec::with_capacity(planes * 3);
    for k in 0..planes.max(1) {
        let g = if planes > 1 { (k * 255 / (planes - 1)) as u8 } else { 255 };
        palette.extend_from_slice(&[g, g, g]);
    }
    let mut enc = png::Encoder::new(create(path)?, w as u32, h as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(palette);
    let mut writer = enc.write_header().map_err(|e| encode_err(path, e))?;
    let flat: Vec<u8> = labels.iter().copied().collect();
    writer.write_image_data(&flat).map_err(|e| encode_err(path, e))
}

pub fn load_label_png(path: &Path) -> Result<Array2<u8>> {
    let img = decode(path)?;
    if img.color != png::ColorType::Indexed && img.color != png::ColorType::Grayscale || img.depth != png::BitDepth::Eight {
        return Err(Error::Image {
            path: path.to_path_buf(),
            detail: format!("expected 8-bit indexed labels, found {:?} {:?}", img.color, img.depth),
        });
    }
    Array2::from_shape_vec((img.height, img.width), img.data).map_err(|e| Error::ShapeMismatch {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Write `(3, H, W)` (or single-channel) intensity for viewing, normalized by `peak`.
pub fn save_preview_png(path: &Path, image: &Array3<f32>, peak: f32) -> Result<()> {
    let scaled = image.mapv(|v| (v / peak).clamp(0.0, 1.0));
    if scaled.dim().0 == 3 {
        return save_target_png(path, &scaled);
    }
    let chan = scaled.index_axis(Axis(0), 0).to_owned();
    let rgb = Array3::from_shape_fn((3, chan.nrows(), chan.ncols()), |(_, y, x)| chan[[y, x]]);
    save_target_png(path, &rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srgb_codes_round_trip() {
        for c in 0..=255u8 {
            assert_eq!(encode_srgb8(decode_srgb8(c)), c);
        }
        assert_eq!(decode_srgb8(0), 0.0);
        assert_eq!(decode_srgb8(255), 1.0);
    }

    #[test]
    fn depth_codes_round_trip() {
        for c in [0u16, 1, 2, 1000, 32767, 65534, 65535] {
            assert_eq!(encode_depth16(decode_depth16(c)), c);
        }
    }

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = quantize_srgb8(&Array3::from_shape_fn((3, 5, 7), |(c, y, x)| ((c + y * 7 + x) % 11) as f32 / 10.0));
        save_target_png(&dir.path().join("t.png"), &rgb).unwrap();
        assert_eq!(load_target_png(&dir.path().join("t.png")).unwrap(), rgb);

        let depth = quantize_depth16(&Array2::from_shape_fn((5, 7), |(y, x)| (y * 7 + x) as f32 / 34.0));
        save_depth_png(&dir.path().join("d.png"), &depth).unwrap();
        assert_eq!(load_depth_png(&dir.path().join("d.png")).unwrap(), depth);

        let labels = Array2::from_shape_fn((5, 7), |(y, x)| ((y + x) % 3) as u8);
        save_label_png(&dir.path().join("m.png"), &labels, 3).unwrap();
        assert_eq!(load_label_png(&dir.path().join("m.png")).unwrap(), labels);
    }

    #[test]
    fn truncated_png_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let rgb = Array3::from_shape_fn((3, 32, 32), |(c, y, x)| ((c * 31 + y * 7 + x * 13) % 17) as f32 / 16.0);
        save_target_png(&path, &rgb).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_target_png(&path).unwrap_err();
        assert!(err.to_string().contains("t.png"), "{err}");
    }
}
