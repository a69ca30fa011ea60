//! Instance generation and ingestion: seeded random assignment costs,
//! pixel-grid transport with normalized distances, image marginals with
//! additive smoothing, and bit-exact problem files.

use crate::problem::Problem;
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Uniform f64 in [0, 1) from the raw 64-bit stream: 53 mantissa bits,
/// identical on every platform and rand version.
pub(crate) fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub(crate) fn random_cost_problem(n: usize, rng: &mut ChaCha8Rng, eta: f64) -> Problem {
    let cost: Vec<f64> = (0..n * n).map(|_| unit_f64(rng)).collect();
    let uniform = vec![1.0 / n as f64; n];
    Problem::new(n, cost, uniform.clone(), uniform, eta).expect("generated instance is valid")
}

/// Random assignment instance: cost entries i.i.d. uniform on [0, 1) from a
/// seeded generator, uniform marginals `1/n`, regularization chosen by the
/// caller. Same seed, same bits.
pub fn gen_random_assignment(n: usize, seed: u64, eta: f64) -> Result<Problem> {
    if n == 0 {
        return Err(Error::DimensionMismatch("n must be at least 1".into()));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidEta(eta));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(random_cost_problem(n, &mut rng, eta))
}

/// Ground metric between grid pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMetric {
    L1,
    L2Squared,
}

/// Cost matrix between all pixel pairs of a `width×height` grid.
///
/// Pixel `(i, j)` (row `i` varying slowest) is embedded at
/// `(i/s, j/s)` with `s = max(width, height)`, then the metric is applied;
/// on a square 28×28 grid this reproduces the `/28` normalization.
/// The output is `(w·h)×(w·h)`, row-major over pixel indices `i·width + j`.
pub fn grid_cost(width: usize, height: usize, metric: GridMetric) -> Vec<f64> {
    assert!(width >= 1 && height >= 1);
    let scale = width.max(height) as f64;
    let n = width * height;
    let mut cost = vec![0.0; n * n];
    for a in 0..n {
        let (ia, ja) = ((a / width) as f64, (a % width) as f64);
        for b in 0..n {
            let (ib, jb) = ((b / width) as f64, (b % width) as f64);
            let di = (ia - ib) / scale;
            let dj = (ja - jb) / scale;
            cost[a * n + b] = match metric {
                GridMetric::L1 => di.abs() + dj.abs(),
                GridMetric::L2Squared => di * di + dj * dj,
            };
        }
    }
    cost
}

/// A grid of non-negative pixel intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub width: usize,
    pub height: usize,
    /// Row-major, length `width·height`.
    pub intensities: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, intensities: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || intensities.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "image {}x{} with {} intensities",
                width,
                height,
                intensities.len()
            )));
        }
        if !intensities.iter().any(|&v| v > 0.0) {
            return Err(Error::InvalidConfig(
                "image must have at least one positive intensity".into(),
            ));
        }
        Ok(ImageGrid {
            width,
            height,
            intensities,
        })
    }

    /// Synthetic Gaussian blob centered at `(cx, cy)` in pixel coordinates.
    pub fn gaussian(width: usize, height: usize, cx: f64, cy: f64, sigma: f64) -> Self {
        let mut intensities = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                let dx = i as f64 - cy;
                let dy = j as f64 - cx;
                intensities.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
            }
        }
        ImageGrid {
            width,
            height,
            intensities,
        }
    }
}

/// Normalize an image to a strictly positive probability vector: add
/// `smoothing_eps / (w·h)` to every intensity, then divide by the sum.
pub fn image_to_marginal(img: &ImageGrid, smoothing_eps: f64) -> Result<Vec<f64>> {
    if smoothing_eps < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "smoothing must be non-negative, got {smoothing_eps}"
        )));
    }
    let cells = (img.width * img.height) as f64;
    let add = smoothing_eps / cells;
    let mut out: Vec<f64> = img.intensities.iter().map(|&v| v + add).collect();
    let sum: f64 = out.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::InvalidConfig(
            "image has zero total mass and no smoothing".into(),
        ));
    }
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Build the transport instance between two same-shape images: marginals
/// from smoothed intensities, cost from the pixel grid.
pub fn image_pair_problem(
    a: &ImageGrid,
    b: &ImageGrid,
    metric: GridMetric,
    smoothing_eps: f64,
    eta: f64,
) -> Result<Problem> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let r = image_to_marginal(a, smoothing_eps)?;
    let c = image_to_marginal(b, smoothing_eps)?;
    let cost = grid_cost(a.width, a.height, metric);
    Problem::new(a.width * a.height, cost, r, c, eta)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, col: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        col,
        message: message.into(),
    }
}

/// Load a plain-text PGM (P2) or CSV grid, sniffing the header.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if text.trim_start().starts_with("P2") {
        parse_pgm(path, &text)
    } else {
        parse_csv_grid(path, &text)
    }
}

fn parse_pgm(path: &Path, text: &str) -> Result<ImageGrid> {
    // Tokenize with positions; '#' starts a comment to end of line.
    let mut tokens: Vec<(usize, usize, &str)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let content = match line.find('#') {
            Some(idx) => &line[..idx],
            None => line,
        };
        let mut col = 0;
        for piece in content.split_whitespace() {
            let at = content[col..].find(piece).unwrap() + col;
            tokens.push((lineno + 1, at + 1, piece));
            col = at + piece.len();
        }
    }
    if tokens.is_empty() || tokens[0].2 != "P2" {
        return Err(parse_err(path, 1, 1, "expected PGM magic 'P2'"));
    }
    let mut nums = tokens.into_iter().skip(1);
    let mut next_usize = |what: &str| -> Result<(usize, usize, usize)> {
        let (line, col, tok) = nums
            .next()
            .ok_or_else(|| parse_err(path, 0, 0, format!("unexpected end of file reading {what}")))?;
        let v = tok
            .parse::<usize>()
            .map_err(|_| parse_err(path, line, col, format!("invalid {what}: '{tok}'")))?;
        Ok((line, col, v))
    };
    let (_, _, width) = next_usize("width")?;
    let (_, _, height) = next_usize("height")?;
    let (line, col, maxval) = next_usize("maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(path, line, col, "zero image dimension"));
    }
    if maxval == 0 {
        return Err(parse_err(path, line, col, "maxval must be positive"));
    }
    let mut intensities = Vec::with_capacity(width * height);
    for k in 0..width * height {
        let (line, col, v) = next_usize("pixel")?;
        if v > maxval {
            return Err(parse_err(
                path,
                line,
                col,
                format!("pixel {k} value {v} exceeds maxval {maxval}"),
            ));
        }
        intensities.push(v as f64);
    }
    if let Some((line, col, tok)) = nums.next() {
        return Err(parse_err(
            path,
            line,
            col,
            format!("trailing token '{tok}' after {} pixels", width * height),
        ));
    }
    ImageGrid::new(width, height, intensities)
}

fn parse_csv_grid(path: &Path, text: &str) -> Result<ImageGrid> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        let mut col_start = 0;
        for (colno, cell) in line.split(',').enumerate() {
            let trimmed = cell.trim();
            let v = trimmed.parse::<f64>().map_err(|_| {
                parse_err(
                    path,
                    lineno + 1,
                    col_start + 1,
                    format!("cell {} is not a number: '{trimmed}'", colno + 1),
                )
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(parse_err(
                    path,
                    lineno + 1,
                    col_start + 1,
                    format!("cell {} must be a non-negative real, got {v}", colno + 1),
                ));
            }
            row.push(v);
            col_start += cell.len() + 1;
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    path,
                    lineno + 1,
                    1,
                    format!("row has {} cells, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, 1, "empty grid"));
    }
    let height = rows.len();
    let width = rows[0].len();
    ImageGrid::new(width, height, rows.into_iter().flatten().collect())
}

#[derive(Serialize, Deserialize)]
struct ProblemHeader {
    n: usize,
    eta: f64,
    cost: String,
    r: Vec<f64>,
    c: Vec<f64>,
    format: String,
}

const PROBLEM_FORMAT: &str = "f64le-rowmajor-v1";

/// Write `<name>.otp.json` (header with marginals) plus the sidecar binary
/// cost file of exactly `8·n²` little-endian bytes. Round-trips bit-exactly.
pub fn save_problem(problem: &Problem, json_path: impl AsRef<Path>) -> Result<()> {
    let json_path = json_path.as_ref();
    let bin_name = {
        let stem = json_path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("problem.otp.json");
        match stem.strip_suffix(".otp.json") {
            Some(base) => format!("{base}.otp.bin"),
            None => format!("{stem}.bin"),
        }
    };
    let header = ProblemHeader {
        n: problem.n(),
        eta: problem.eta(),
        cost: bin_name.clone(),
        r: problem.row_marginal().to_vec(),
        c: problem.col_marginal().to_vec(),
        format: PROBLEM_FORMAT.to_string(),
    };
    let json = serde_json::to_string_pretty(&header)
        .map_err(|e| Error::InvalidConfig(format!("header serialization failed: {e}")))?;
    std::fs::write(json_path, json).map_err(|e| io_err(json_path, e))?;

    let bin_path = json_path.with_file_name(&bin_name);
    let mut bytes = Vec::with_capacity(8 * problem.cost().len());
    for &v in problem.cost() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(&bin_path).map_err(|e| io_err(&bin_path, e))?;
    f.write_all(&bytes).map_err(|e| io_err(&bin_path, e))?;
    Ok(())
}

/// Load a problem saved by [`save_problem`] (cost path resolved relative to
/// the header file).
pub fn load_problem(json_path: impl AsRef<Path>) -> Result<Problem> {
    let json_path = json_path.as_ref();
    let text = std::fs::read_to_string(json_path).map_err(|e| io_err(json_path, e))?;
    let header: ProblemHeader = serde_json::from_str(&text)
        .map_err(|e| parse_err(json_path, e.line(), e.column(), e.to_string()))?;
    if header.format != PROBLEM_FORMAT {
        return Err(parse_err(
            json_path,
            1,
            1,
            format!("unsupported format '{}'", header.format),
        ));
    }
    let bin_path = json_path.with_file_name(&header.cost);
    let mut bytes = Vec::new();
    std::fs::File::open(&bin_path)
        .map_err(|e| io_err(&bin_path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(&bin_path, e))?;
    let expect = 8 * header.n * header.n;
    if bytes.len() != expect {
        return Err(parse_err(
            &bin_path,
            1,
            1,
            format!("cost file has {} bytes, expected {expect}", bytes.len()),
        ));
    }
    let cost: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Problem::new(header.n, cost, header.r, header.c, header.eta)
}
