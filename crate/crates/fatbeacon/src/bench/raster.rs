//! Raster masks and the layer-difference coverage analysis.
//!
//! A mask is a row-major boolean grid; set bits in the trails layer that
//! also appear in the signal layer count as covered. Masks load and save
//! as plain-text PBM (P1), where `1` marks a set pixel.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("layer dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("layer A has no set pixels")]
    EmptyLayerA,
    #[error("bad PBM: {0}")]
    BadPbm(String),
}

/// Row-major boolean grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl RasterMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Parses a plain-text P1 bitmap; `#` comments allowed anywhere.
    pub fn from_pbm(text: &str) -> Result<Self, RasterError> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(|l| l.split_whitespace().map(str::to_owned).collect::<Vec<_>>());
        let magic = tokens
            .next()
            .ok_or_else(|| RasterError::BadPbm("empty file".into()))?;
        if magic != "P1" {
            return Err(RasterError::BadPbm(format!(
                "expected P1 magic, got {magic:?}"
            )));
        }
        let mut dim = |name: &str| {
            tokens
                .next()
                .ok_or_else(|| RasterError::BadPbm(format!("missing {name}")))?
                .parse::<usize>()
                .map_err(|e| RasterError::BadPbm(format!("bad {name}: {e}")))
        };
        let width = dim("width")?;
        let height = dim("height")?;
        let mut bits = Vec::with_capacity(width * height);
        for token in tokens {
            // P1 pixel data may or may not be whitespace-separated.
            for ch in token.chars() {
                match ch {
                    '0' => bits.push(false),
                    '1' => bits.push(true),
                    other => {
                        return Err(RasterError::BadPbm(format!("bad pixel {other:?}")));
                    }
                }
            }
        }
        if bits.len() != width * height {
            return Err(RasterError::BadPbm(format!(
                "expected {} pixels, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn to_pbm(&self) -> String {
        let mut out = format!("P1\n{} {}\n", self.width, self.height);
        for row in self.bits.chunks(self.width) {
            let line: Vec<&str> = row.iter().map(|b| if *b { "1" } else { "0" }).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Fractions of layer A's set pixels inside / outside layer B.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageDiff {
    pub covered_fraction: f64,
    pub uncovered_fraction: f64,
}

/// Layer difference: which part of `layer_a` (trails) falls inside
/// `layer_b` (signal coverage).
pub fn coverage_diff(
    layer_a: &RasterMask,
    layer_b: &RasterMask,
) -> Result<CoverageDiff, RasterError> {
    if (layer_a.width, layer_a.height) != (layer_b.width, layer_b.height) {
        return Err(RasterError::DimensionMismatch(
            layer_a.width,
            layer_a.height,
            layer_b.width,
            layer_b.height,
        ));
    }
    let total = layer_a.count_ones();
    if total == 0 {
        return Err(RasterError::EmptyLayerA);
    }
    let both = layer_a
        .bits
        .iter()
        .zip(&layer_b.bits)
        .filter(|(a, b)| **a && **b)
        .count();
    let covered_fraction = both as f64 / total as f64;
    Ok(CoverageDiff {
        covered_fraction,
        uncovered_fraction: 1.0 - covered_fraction,
    })
}
