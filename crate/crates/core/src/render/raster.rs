//! Raster file formats.
//!
//! Float rasters (`MLF1`): 16-byte little-endian header `magic, width, height,
//! channels` followed by `width * height * channels` f32 values, row major.
//! Material ids and masks use binary 8-bit PGM; colour uses PNG or binary PPM.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const FLOAT_MAGIC: &[u8; 4] = b"MLF1";
/// File value of background pixels in material-id PGMs.
pub const PGM_BACKGROUND: u8 = 255;

#[derive(Debug, Clone, PartialEq)]
pub struct FloatRaster {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl FloatRaster {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(FLOAT_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.channels.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != FLOAT_MAGIC {
            return Err(Error::Format("missing MLF1 header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let (width, height, channels) = (word(4), word(8), word(12));
        let n = width as usize * height as usize * channels as usize;
        if bytes.len() != 16 + 4 * n {
            return Err(Error::Format(format!(
                "MLF1 payload is {} bytes, expected {}",
                bytes.len() - 16,
                4 * n
            )));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), &self.encode())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(width: u32, height: u32, data: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let (fields, offset) = header_fields(bytes, b"P5", 3)?;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::Format("only 8-bit PGM supported".into()));
    }
    let n = w as usize * h as usize;
    let data = bytes
        .get(offset..offset + n)
        .ok_or_else(|| Error::Format("truncated PGM".into()))?;
    Ok((w, h, data.to_vec()))
}

pub fn encode_ppm(width: u32, height: u32, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Parses `count` whitespace-separated header integers after `magic`, skipping comments.
fn header_fields(bytes: &[u8], magic: &[u8], count: usize) -> Result<(Vec<u32>, usize)> {
    if !bytes.starts_with(magic) {
        return Err(Error::Format("bad netpbm magic".into()));
    }
    let mut pos = magic.len();
    let mut fields = Vec::with_capacity(count);
    while fields.len() < count {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let token = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        fields.push(
            token
                .parse()
                .map_err(|_| Error::Format("bad netpbm header".into()))?,
        );
    }
    // exactly one whitespace byte separates header and payload
    Ok((fields, pos + 1))
}

pub fn encode_png(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        writer
            .write_image_data(rgb)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format("expected 8-bit RGB png".into()));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width, info.height, buf))
}

/// Material ids to PGM bytes; background (`-1`) becomes 255.
pub fn ids_to_pgm_values(ids: &[i32]) -> Result<Vec<u8>> {
    ids.iter()
        .map(|&id| match id {
            -1 => Ok(PGM_BACKGROUND),
            0..=254 => Ok(id as u8),
            _ => Err(Error::Format(format!("material id {id} does not fit a PGM"))),
        })
        .collect()
}

pub fn pgm_values_to_ids(values: &[u8]) -> Vec<i32> {
    values
        .iter()
        .map(|&v| if v == PGM_BACKGROUND { -1 } else { v as i32 })
        .collect()
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
