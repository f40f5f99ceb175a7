//! FGRID: a plain-text grid format built for diffs and bit-exact round trips.
//!
//! Layout: header line `fgrid <width> <height> <channels>`, then one block
//! per channel of `height` lines, each holding `width` space-separated
//! decimals. UTF-8, LF endings, trailing newline. Values are written with
//! the shortest decimal that parses back to the same f64, so
//! read(write(g)) == g bitwise and write(read(f)) == f for canonical files.

use std::fs;
use std::path::Path;

use thiserror::Error;
use xlab_core::grid::GridError;
use xlab_core::{FloatGrid, SaliencyMap};

/// Hard cap on total values, to refuse absurd headers before allocating.
const MAX_VALUES: usize = 1 << 28;

#[derive(Debug, Error)]
pub enum FgridError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed header {found:?} (want `fgrid <width> <height> <channels>`)")]
    Header {
        path: String,
        line: usize,
        found: String,
    },
    #[error("{path}:1: grid too large ({0} values exceeds {MAX_VALUES})", .values)]
    TooLarge { path: String, values: u128 },
    #[error("{path}:{line}: value count mismatch: expected {expected} values per line, found {found}")]
    ValueCount {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: non-finite or unparseable token {token:?}")]
    BadToken {
        path: String,
        line: usize,
        token: String,
    },
    #[error("{path}:{line}: trailing content after {expected} data lines")]
    TrailingContent {
        path: String,
        line: usize,
        expected: usize,
    },
    #[error("{path}: truncated: expected {expected} data lines, found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: carriage return found; FGRID requires LF line endings")]
    CrLf { path: String, line: usize },
    #[error("refusing to encode: value at index {index} is {value}")]
    NonFinite { index: usize, value: f64 },
    #[error("{path}: {source}")]
    Grid {
        path: String,
        #[source]
        source: GridError,
    },
}

fn grid_err(path: &str, source: GridError) -> FgridError {
    FgridError::Grid {
        path: path.to_string(),
        source,
    }
}

/// Parses FGRID text. `path` is used in error messages only.
pub fn parse_grid(text: &str, path: &str) -> Result<FloatGrid, FgridError> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    for (i, line) in lines.iter().enumerate() {
        if line.contains('\r') {
            return Err(FgridError::CrLf {
                path: path.to_string(),
                line: i + 1,
            });
        }
    }
    let header = *lines.first().unwrap_or(&"");
    let parts: Vec<&str> = header.split(' ').collect();
    let bad_header = || FgridError::Header {
        path: path.to_string(),
        line: 1,
        found: header.to_string(),
    };
    if parts.len() != 4 || parts[0] != "fgrid" {
        return Err(bad_header());
    }
    let dims: Vec<usize> = parts[1..]
        .iter()
        .map(|p| p.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad_header())?;
    let (width, height, channels) = (dims[0], dims[1], dims[2]);
    if width == 0 || height == 0 || channels == 0 {
        return Err(bad_header());
    }
    let total = width as u128 * height as u128 * channels as u128;
    if total > MAX_VALUES as u128 {
        return Err(FgridError::TooLarge {
            path: path.to_string(),
            values: total,
        });
    }

    let expected_lines = height * channels;
    let data = &lines[1..];
    if data.len() < expected_lines {
        return Err(FgridError::Truncated {
            path: path.to_string(),
            expected: expected_lines,
            found: data.len(),
        });
    }
    if data.len() > expected_lines {
        return Err(FgridError::TrailingContent {
            path: path.to_string(),
            line: expected_lines + 2,
            expected: expected_lines,
        });
    }

    let mut values = Vec::with_capacity(total as usize);
    for (i, line) in data.iter().enumerate() {
        let line_no = i + 2;
        let tokens: Vec<&str> = line.split(' ').collect();
        if tokens.len() != width || tokens.iter().any(|t| t.is_empty()) {
            return Err(FgridError::ValueCount {
                path: path.to_string(),
                line: line_no,
                expected: width,
                found: tokens.iter().filter(|t| !t.is_empty()).count(),
            });
        }
        for token in tokens {
            let v: f64 = token.parse().map_err(|_| FgridError::BadToken {
                path: path.to_string(),
                line: line_no,
                token: token.to_string(),
            })?;
            if !v.is_finite() {
                return Err(FgridError::BadToken {
                    path: path.to_string(),
                    line: line_no,
                    token: token.to_string(),
                });
            }
            values.push(v);
        }
    }
    FloatGrid::new(width, height, channels, values).map_err(|e| grid_err(path, e))
}

/// Canonical FGRID encoding. Fails on non-finite values without producing
/// any output.
pub fn encode_grid(grid: &FloatGrid) -> Result<String, FgridError> {
    if let Some((index, &value)) = grid
        .values()
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite())
    {
        return Err(FgridError::NonFinite { index, value });
    }
    let (w, h, c) = (grid.width(), grid.height(), grid.channels());
    let mut out = format!("fgrid {w} {h} {c}\n");
    let values = grid.values();
    for ch in 0..c {
        for y in 0..h {
            let row = &values[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (x, v) in row.iter().enumerate() {
                if x > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<FloatGrid, FgridError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| FgridError::Io {
        path: shown.clone(),
        source,
    })?;
    parse_grid(&text, &shown)
}

/// Writes the canonical encoding. The grid is validated (and the encoding
/// built) before the file is touched.
pub fn write_grid(grid: &FloatGrid, path: impl AsRef<Path>) -> Result<(), FgridError> {
    let text = encode_grid(grid)?;
    let path = path.as_ref();
    fs::write(path, text).map_err(|source| FgridError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a grid that must qualify as a saliency map (single channel, values
/// in [0,1]). Out-of-range values are rejected, never clamped.
pub fn read_saliency(path: impl AsRef<Path>) -> Result<SaliencyMap, FgridError> {
    let path = path.as_ref();
    let grid = read_grid(path)?;
    SaliencyMap::new(grid).map_err(|e| grid_err(&path.display().to_string(), e))
}
