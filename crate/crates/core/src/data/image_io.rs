//! 8-bit RGB PNG and binary PPM (P6, maxval 255) I/O.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{ImageSet, ImageSource};
use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Clamps to `[0,1]` and rounds half up onto `0..=255`.
#[inline]
pub fn quantize(v: f32) -> u8 {
    (f64::from(v.clamp(0.0, 1.0)) * 255.0 + 0.5).floor() as u8
}

fn image_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Image { path: path.to_path_buf(), detail: detail.into() }
}

fn from_interleaved(path: &Path, rgb: &[u8], w: usize, h: usize) -> Result<Tensor> {
    if rgb.len() != w * h * 3 {
        return Err(image_err(path, "truncated pixel data"));
    }
    let mut data = vec![0.0f32; 3 * w * h];
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = f32::from(px[c]) / 255.0;
        }
    }
    Tensor::new([1, 3, h, w], data)
}

fn to_interleaved(t: &Tensor) -> Vec<u8> {
    let (h, w) = (t.h(), t.w());
    let plane = h * w;
    let d = t.data();
    (0..plane).flat_map(|i| (0..3).map(move |c| quantize(d[c * plane + i]))).collect()
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| image_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.buffer_size()];
    match info.color_type {
        png::ColorType::Rgb => from_interleaved(path, buf, w, h),
        png::ColorType::Rgba => {
            let rgb: Vec<u8> = buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
            from_interleaved(path, &rgb, w, h)
        }
        other => Err(image_err(path, format!("expected an RGB image, found {other:?}"))),
    }
}

fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    // Header: "P6" then width, height, maxval as whitespace-separated tokens,
    // with '#' comments; exactly one whitespace byte precedes the raster.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(image_err(path, "truncated PPM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| image_err(path, "malformed PPM header"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(image_err(path, format!("PPM maxval {maxval} unsupported (need 255)")));
    }
    let raster = bytes.get(pos + 1..).ok_or_else(|| image_err(path, "missing PPM raster"))?;
    from_interleaved(path, raster.get(..w * h * 3).unwrap_or(raster), w, h)
}

/// Reads a PNG or P6 PPM into `(1,3,H,W)` in `[0,1]`. Greyscale is rejected.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| image_err(path, e.to_string()))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(path, &bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(path, &bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        Err(image_err(path, "expected an RGB image, found greyscale PGM"))
    } else {
        Err(image_err(path, "unrecognised image format (need PNG or P6 PPM)"))
    }
}

/// Writes PNG when the extension is `.png`, otherwise P6 PPM. Values are
/// clamped to `[0,1]` and quantised round-half-up.
pub fn save_image(t: &Tensor, path: &Path) -> Result<()> {
    if t.n() != 1 || t.c() != 3 {
        return Err(Error::shape("save_image", format!("expected (1,3,H,W), got {:?}", t.shape())));
    }
    let rgb = to_interleaved(t);
    let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let file = File::create(path).map_err(|e| image_err(path, e.to_string()))?;
    let mut out = BufWriter::new(file);
    if is_png {
        let mut enc = png::Encoder::new(&mut out, t.w() as u32, t.h() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| image_err(path, e.to_string()))?;
        writer.write_image_data(&rgb).map_err(|e| image_err(path, e.to_string()))?;
        writer.finish().map_err(|e| image_err(path, e.to_string()))?;
    } else {
        write!(out, "P6\n{} {}\n255\n", t.w(), t.h())?;
        out.write_all(&rgb)?;
    }
    out.flush()?;
    Ok(())
}

/// All `.png` / `.ppm` files in `dir`, sorted by file name.
pub fn load_folder(dir: &Path) -> Result<ImageSet> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Dataset { path: dir.to_path_buf(), detail: e.to_string() })?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset { path: dir.to_path_buf(), detail: "no .png or .ppm images".into() });
    }
    let mut images = Vec::with_capacity(paths.len());
    let mut names = Vec::with_capacity(paths.len());
    for p in &paths {
        images.push(load_image(p)?);
        names.push(p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string());
    }
    ImageSet::new(images, names, ImageSource::Folder)
}
