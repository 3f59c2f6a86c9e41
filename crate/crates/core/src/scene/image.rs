//! PNG encodings for frames and cue maps.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType};

use crate::error::{Error, Result};

/// Keyword of the tEXt chunk carrying the metric scale of a 16-bit depth map.
pub const DEPTH_SCALE_KEY: &str = "depth_scale";

pub struct Decoded {
    pub width: u32,
    pub height: u32,
    pub color: ColorType,
    pub depth: BitDepth,
    pub bytes: Vec<u8>,
    pub text: Vec<(String, String)>,
}

fn encoder<'a, W: std::io::Write>(w: W, width: u32, height: u32, color: ColorType, depth: BitDepth) -> png::Encoder<'a, W> {
    let mut e = png::Encoder::new(w, width, height);
    e.set_color(color);
    e.set_depth(depth);
    e.set_compression(png::Compression::Default);
    e
}

fn finish<W: std::io::Write>(e: png::Encoder<'_, W>, data: &[u8], path: &Path) -> Result<()> {
    let mut w = e.write_header().map_err(|err| Error::format(path, err.to_string()))?;
    w.write_image_data(data).map_err(|err| Error::format(path, err.to_string()))?;
    w.finish().map_err(|err| Error::format(path, err.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Encodes 8-bit RGB into PNG bytes.
pub fn encode_rgb8(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    finish(encoder(&mut out, width, height, ColorType::Rgb, BitDepth::Eight), rgb, Path::new("<memory>"))?;
    Ok(out)
}

pub fn write_rgb8(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    finish(encoder(create(path)?, width, height, ColorType::Rgb, BitDepth::Eight), rgb, path)
}

pub fn write_gray16(path: &Path, width: u32, height: u32, values: &[u16], text: &[(&str, String)]) -> Result<()> {
    let mut e = encoder(create(path)?, width, height, ColorType::Grayscale, BitDepth::Sixteen);
    for (k, v) in text {
        e.add_text_chunk(k.to_string(), v.clone()).map_err(|err| Error::format(path, err.to_string()))?;
    }
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
    finish(e, &bytes, path)
}

pub fn write_indexed8(path: &Path, width: u32, height: u32, indices: &[u8], palette: &[[u8; 3]]) -> Result<()> {
    let mut e = encoder(create(path)?, width, height, ColorType::Indexed, BitDepth::Eight);
    e.set_palette(palette.iter().flatten().copied().collect::<Vec<u8>>());
    finish(e, indices, path)
}

fn decoder<'a>(bytes: &'a [u8], path: &Path) -> Result<png::Reader<&'a [u8]>> {
    let mut d = png::Decoder::new(bytes);
    d.set_transformations(png::Transformations::IDENTITY);
    d.read_info().map_err(|err| Error::format(path, err.to_string()))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Decoded> {
    let mut reader = decoder(bytes, path)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|err| Error::format(path, err.to_string()))?;
    buf.truncate(info.buffer_size());
    let text = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|t| (t.keyword.clone(), t.text.clone()))
        .collect();
    Ok(Decoded { width: info.width, height: info.height, color: info.color_type, depth: info.bit_depth, bytes: buf, text })
}

pub fn read(path: &Path) -> Result<Decoded> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Width and height from the PNG header without decoding pixel data.
pub fn read_dimensions(path: &Path) -> Result<(u32, u32)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut d = png::Decoder::new(BufReader::new(f));
    d.set_transformations(png::Transformations::IDENTITY);
    let reader = d.read_info().map_err(|err| Error::format(path, err.to_string()))?;
    let info = reader.info();
    Ok((info.width, info.height))
}

pub fn read_rgb8(path: &Path) -> Result<Decoded> {
    let d = read(path)?;
    if d.color != ColorType::Rgb || d.depth != BitDepth::Eight {
        return Err(Error::format(path, format!("expected 8-bit RGB, found {:?} {:?}", d.color, d.depth)));
    }
    Ok(d)
}

/// Returns the raw 16-bit samples and the value of the depth scale chunk.
pub fn read_gray16(path: &Path) -> Result<(Decoded, Vec<u16>, Option<String>)> {
    let d = read(path)?;
    if d.color != ColorType::Grayscale || d.depth != BitDepth::Sixteen {
        return Err(Error::format(path, format!("expected 16-bit grayscale, found {:?} {:?}", d.color, d.depth)));
    }
    let vals = d.bytes.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    let scale = d.text.iter().find(|(k, _)| k == DEPTH_SCALE_KEY).map(|(_, v)| v.clone());
    Ok((d, vals, scale))
}

pub fn read_indexed8(path: &Path) -> Result<Decoded> {
    let d = read(path)?;
    if d.color != ColorType::Indexed || d.depth != BitDepth::Eight {
        return Err(Error::format(path, format!("expected 8-bit indexed, found {:?} {:?}", d.color, d.depth)));
    }
    Ok(d)
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 13) as u8).collect();
        let p = dir.path().join("a.png");
        write_rgb8(&p, 3, 2, &rgb).unwrap();
        assert_eq!(read_rgb8(&p).unwrap().bytes, rgb);
        assert_eq!(read_dimensions(&p).unwrap(), (3, 2));

        let g = [0u16, 1, 65535, 300, 7, 9];
        let p = dir.path().join("d.png");
        write_gray16(&p, 2, 3, &g, &[(DEPTH_SCALE_KEY, "0.001".into())]).unwrap();
        let (_, vals, scale) = read_gray16(&p).unwrap();
        assert_eq!(vals, g);
        assert_eq!(scale.as_deref(), Some("0.001"));

        let idx = [0u8, 1, 2, 3];
        let p = dir.path().join("s.png");
        write_indexed8(&p, 2, 2, &idx, &[[0, 0, 0], [255, 0, 0], [0, 255, 0], [0, 0, 255]]).unwrap();
        assert_eq!(read_indexed8(&p).unwrap().bytes, idx);
    }
}
