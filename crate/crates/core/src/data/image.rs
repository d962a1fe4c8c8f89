use std::io::{BufRead, Write};

use super::DataError;

/// Row-major `(height, width, channels)` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Binary PPM (P6), 8 bits per channel. Requires 3 channels.
    pub fn write_ppm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        assert_eq!(self.channels, 3, "ppm needs rgb");
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        out.write_all(&bytes)
    }

    pub fn read_ppm<R: BufRead>(mut input: R) -> Result<Self, DataError> {
        let bad = |m: &str| DataError::ImageFormat(m.to_string());
        let mut header = Vec::new();
        // magic, width, height, maxval separated by whitespace
        let mut tokens = Vec::new();
        let mut byte = [0u8; 1];
        while tokens.len() < 4 {
            let mut tok = Vec::new();
            loop {
                if input.read(&mut byte)? == 0 {
                    return Err(bad("truncated header"));
                }
                header.push(byte[0]);
                if byte[0] == b'#' {
                    let mut skip = String::new();
                    input.read_line(&mut skip)?;
                    continue;
                }
                if byte[0].is_ascii_whitespace() {
                    if tok.is_empty() {
                        continue;
                    }
                    break;
                }
                tok.push(byte[0]);
            }
            tokens.push(String::from_utf8(tok).map_err(|_| bad("non-utf8 header"))?);
        }
        if tokens[0] != "P6" {
            return Err(bad("expected P6 magic"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 {
            return Err(bad("only 8-bit ppm is supported"));
        }
        let mut bytes = vec![0u8; width * height * 3];
        input.read_exact(&mut bytes)?;
        Ok(Self { height, width, channels: 3, data: bytes.iter().map(|&b| b as f64 / 255.0).collect() })
    }
}
