//! DOTA annotation text format.
//!
//! Optional `imagesource:` and `gsd:` header lines, then one object per line:
//! `x1 y1 x2 y2 x3 y3 x4 y4 category difficult`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::geometry::{Point, Quad};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub quad: Quad,
    pub category: String,
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DotaFile {
    pub imagesource: Option<String>,
    pub gsd: Option<String>,
    pub annotations: Vec<Annotation>,
}

const TOKENS: usize = 10;

/// Whitespace-separated tokens with their 1-based column.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    out.into_iter().map(|(s, t)| (line[..s].chars().count() + 1, t)).collect()
}

pub fn parse_dota(text: &str) -> Result<DotaFile, DataError> {
    let mut file = DotaFile::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(v) = line.strip_prefix("imagesource:") {
            file.imagesource = Some(v.to_string());
            continue;
        }
        if let Some(v) = line.strip_prefix("gsd:") {
            file.gsd = Some(v.to_string());
            continue;
        }
        let toks = tokens(line);
        if toks.len() < TOKENS {
            return Err(DataError::TooFewTokens { line: line_no, got: toks.len() });
        }
        if toks.len() > TOKENS {
            return Err(DataError::Parse {
                line: line_no,
                column: toks[TOKENS].0,
                reason: format!("expected {TOKENS} tokens, got {}", toks.len()),
            });
        }
        let mut coords = [0.0; 8];
        for (c, &(col, tok)) in coords.iter_mut().zip(&toks[..8]) {
            *c = match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    return Err(DataError::NonNumericCoordinate { line: line_no, column: col, token: tok.to_string() })
                }
            };
        }
        let (cat_col, category) = toks[8];
        if category.parse::<f64>().is_ok() {
            return Err(DataError::Parse {
                line: line_no,
                column: cat_col,
                reason: format!("category token {category:?} is numeric"),
            });
        }
        let (diff_col, diff) = toks[9];
        let difficult = match diff {
            "0" => false,
            "1" => true,
            other => {
                return Err(DataError::Parse {
                    line: line_no,
                    column: diff_col,
                    reason: format!("difficult flag must be 0 or 1, got {other:?}"),
                })
            }
        };
        let corners = [
            Point::new(coords[0], coords[1]),
            Point::new(coords[2], coords[3]),
            Point::new(coords[4], coords[5]),
            Point::new(coords[6], coords[7]),
        ];
        file.annotations.push(Annotation { quad: Quad::new(corners), category: category.to_string(), difficult });
    }
    Ok(file)
}

/// Serializes in the same format. Coordinates use the shortest decimal form
/// that reads back to the same value, so integers print without a fraction.
pub fn write_dota(file: &DotaFile) -> String {
    let mut out = String::new();
    if let Some(s) = &file.imagesource {
        let _ = writeln!(out, "imagesource:{s}");
    }
    if let Some(g) = &file.gsd {
        let _ = writeln!(out, "gsd:{g}");
    }
    for a in &file.annotations {
        for p in &a.quad.corners {
            let _ = write!(out, "{} {} ", p.x, p.y);
        }
        let _ = writeln!(out, "{} {}", a.category, u8::from(a.difficult));
    }
    out
}
