use std::io::{self, BufRead, BufReader, Read, Write};

use super::VisionError;

/// 8-bit single channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, 0)
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, VisionError> {
        if data.len() != width as usize * height as usize {
            return Err(VisionError::InvalidInput(format!(
                "{} bytes for a {width}x{height} gray image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }

    pub fn write_pgm(&self, mut out: impl Write) -> io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.data)
    }
}

/// 8-bit RGB image, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, VisionError> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(VisionError::InvalidInput(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn flipped_horizontally(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    pub fn write_ppm(&self, mut out: impl Write) -> io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.data)
    }

    /// Read a binary (P6) PPM with maxval 255.
    pub fn read_ppm(input: impl Read) -> Result<Self, VisionError> {
        let mut r = BufReader::new(input);
        let magic = next_token(&mut r)?;
        if magic != "P6" {
            return Err(VisionError::InvalidInput(format!("not a P6 image: {magic}")));
        }
        let width = parse_dim(&next_token(&mut r)?)?;
        let height = parse_dim(&next_token(&mut r)?)?;
        let maxval = next_token(&mut r)?;
        if maxval != "255" {
            return Err(VisionError::InvalidInput(format!("unsupported maxval {maxval}")));
        }
        let mut data = vec![0u8; width as usize * height as usize * 3];
        r.read_exact(&mut data)
            .map_err(|e| VisionError::InvalidInput(format!("short pixel data: {e}")))?;
        Self::from_raw(width, height, data)
    }
}

fn parse_dim(s: &str) -> Result<u32, VisionError> {
    s.parse::<u32>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| VisionError::InvalidInput(format!("bad image dimension `{s}`")))
}

/// Next whitespace separated header token. Consumes exactly one whitespace
/// byte after the token, as the format requires before pixel data.
fn next_token(r: &mut impl BufRead) -> Result<String, VisionError> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)
            .map_err(|e| VisionError::InvalidInput(e.to_string()))?
            == 0
        {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)
                .map_err(|e| VisionError::InvalidInput(e.to_string()))?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c as char);
    }
    if tok.is_empty() {
        return Err(VisionError::InvalidInput("truncated image header".into()));
    }
    Ok(tok)
}

/// Luma conversion with weights 0.299/0.587/0.114, rounded to nearest.
pub fn grayscale(rgb: &RgbImage) -> GrayImage {
    let data = rgb
        .data
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage {
        width: rgb.width,
        height: rgb.height,
        data,
    }
}
