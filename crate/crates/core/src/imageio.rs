//! Image and label-map files.

use std::io::Cursor;
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};

pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

/// Raw 8-bit values of a grayscale or palette PNG, as `(height, width,
/// values)`. Palette indices are returned as stored, not as colors.
pub fn read_label_png(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    decode_label_png(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::InvalidInput(m) => Error::invalid(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn decode_label_png<R: std::io::BufRead + std::io::Seek>(reader: R) -> Result<(usize, usize, Vec<u8>)> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::invalid(format!("label map: {e}")))?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight || !matches!(color, png::ColorType::Grayscale | png::ColorType::Indexed) {
        return Err(Error::invalid(format!(
            "label map must be 8-bit grayscale or palette, found {color:?} at {depth:?}"
        )));
    }
    let mut buf = vec![0u8; reader.output_buffer_size().expect("label map buffer size")];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::invalid(format!("label map: {e}")))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let stride = frame.line_size;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        out.extend_from_slice(&buf[y * stride..y * stride + w]);
    }
    Ok((h, w, out))
}

/// 8-bit grayscale PNG bytes.
pub fn encode_label_png(labels: &[u8], height: usize, width: usize) -> Result<Vec<u8>> {
    if labels.len() != height * width {
        return Err(Error::shape("label map size does not match its dimensions"));
    }
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(Cursor::new(&mut bytes), width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
        w.write_image_data(labels)
            .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
    }
    Ok(bytes)
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: "<memory>".into(),
            source,
        })?;
    Ok(bytes)
}

/// The usual segmentation palette: bits of the label spread over the
/// high bits of each channel.
pub fn palette_color(label: u32) -> [u8; 3] {
    let mut c = [0u8; 3];
    let mut l = label;
    let mut shift = 7;
    while l > 0 && shift >= 0 {
        for (ch, v) in c.iter_mut().enumerate() {
            *v |= (((l >> ch) & 1) as u8) << shift;
        }
        l >>= 3;
        shift -= 1;
    }
    c
}

/// Half-and-half blend of the image with the label palette.
pub fn overlay(img: &RgbImage, labels: &[u32]) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    if labels.len() != (w * h) as usize {
        return Err(Error::shape("overlay: label map and image differ in size"));
    }
    Ok(RgbImage::from_fn(w, h, |x, y| {
        let p = img.get_pixel(x, y).0;
        let c = palette_color(labels[(y * w + x) as usize]);
        image::Rgb([
            ((p[0] as u16 + c[0] as u16) / 2) as u8,
            ((p[1] as u16 + c[1] as u16) / 2) as u8,
            ((p[2] as u16 + c[2] as u16) / 2) as u8,
        ])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_first_entries() {
        assert_eq!(palette_color(0), [0, 0, 0]);
        assert_eq!(palette_color(1), [128, 0, 0]);
        assert_eq!(palette_color(2), [0, 128, 0]);
        assert_eq!(palette_color(15), [192, 128, 128]);
    }

    #[test]
    fn label_png_round_trip() {
        let labels: Vec<u8> = (0..35).map(|i| (i * 7) as u8).collect();
        let bytes = encode_label_png(&labels, 5, 7).unwrap();
        let (h, w, back) = decode_label_png(Cursor::new(bytes)).unwrap();
        assert_eq!((h, w), (5, 7));
        assert_eq!(back, labels);
    }

    #[test]
    fn rgb_labels_rejected() {
        let img = RgbImage::new(2, 2);
        let bytes = encode_rgb_png(&img).unwrap();
        assert!(decode_label_png(Cursor::new(bytes)).is_err());
    }
}
