//! Instance generators and file loaders.
//!
//! Generators draw from `ChaCha8Rng::seed_from_u64(seed)` (rand_chacha), in
//! the order: cost-defining samples, then `a`, then `b`. Outputs are pure
//! functions of `(m, n, seed)`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{OtError, Result};
use crate::matrix::DenseMatrix;
use crate::problem::{renormalize, OtProblem};

/// Added to every pixel intensity before normalizing image marginals.
pub const PIXEL_EPS: f64 = 1e-9;

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// U(0,1) restricted to the open interval.
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let x: f64 = rng.gen();
        if x > 0.0 {
            return x;
        }
    }
}

fn uniform_marginal(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| open_unit(rng)).collect();
    renormalize(&raw)
}

fn assemble(cost: DenseMatrix, rng: &mut ChaCha8Rng) -> OtProblem {
    let a = uniform_marginal(rng, cost.rows());
    let b = uniform_marginal(rng, cost.cols());
    OtProblem::normalized(cost, a, b).expect("generated instances are valid")
}

/// i.i.d. U(0,1) costs and marginals.
pub fn gen_uniform(m: usize, n: usize, seed: u64) -> OtProblem {
    assert!(m >= 1 && n >= 1, "dimensions must be positive");
    let mut rng = rng_for(seed);
    let cost = DenseMatrix::from_fn(m, n, |_, _| rng.gen::<f64>());
    assemble(cost, &mut rng)
}

/// `C_ij = (i − j)²` scaled by `(max(m, n) − 1)²`, uniform random marginals.
pub fn gen_square(m: usize, n: usize, seed: u64) -> OtProblem {
    assert!(m >= 1 && n >= 1, "dimensions must be positive");
    let mut rng = rng_for(seed);
    let scale = ((m.max(n) - 1) as f64).powi(2).max(1.0);
    let cost = DenseMatrix::from_fn(m, n, |i, j| (i as f64 - j as f64).powi(2) / scale);
    assemble(cost, &mut rng)
}

fn sphere_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z = 2.0 * rng.gen::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.gen::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Great-circle distance `arccos<x, y>` between two unit vectors.
pub fn spherical_distance(x: [f64; 3], y: [f64; 3]) -> f64 {
    let d = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    d.clamp(-1.0, 1.0).acos()
}

/// Spherical-distance costs between `m` and `n` uniform points on S².
pub fn gen_spherical(m: usize, n: usize, seed: u64) -> OtProblem {
    assert!(m >= 1 && n >= 1, "dimensions must be positive");
    let mut rng = rng_for(seed);
    let xs: Vec<[f64; 3]> = (0..m).map(|_| sphere_point(&mut rng)).collect();
    let ys: Vec<[f64; 3]> = (0..n).map(|_| sphere_point(&mut rng)).collect();
    let cost = DenseMatrix::from_fn(m, n, |i, j| spherical_distance(xs[i], ys[j]));
    assemble(cost, &mut rng)
}

/// A grayscale image as row-major intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

fn load_err(path: &Path, msg: impl Into<String>) -> OtError {
    OtError::LoadError {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Reads a PGM (P2 or P5) or a CSV grid, chosen by content.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| load_err(path, e.to_string()))?;
    match bytes.get(..2) {
        Some(b"P2") | Some(b"P5") => parse_pgm(&bytes).map_err(|m| load_err(path, m)),
        Some([b'P', _]) => Err(load_err(path, "only grayscale PGM (P2/P5) is supported")),
        _ => {
            let text = String::from_utf8(bytes).map_err(|_| load_err(path, "not UTF-8 text"))?;
            parse_csv_grid(&text).map_err(|m| load_err(path, m))
        }
    }
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 2;
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let tok = std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?;
        *slot = tok
            .parse()
            .map_err(|_| format!("bad PGM header token {tok:?}"))?;
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!(
            "unsupported PGM header {width}x{height} maxval {maxval}"
        ));
    }
    let count = width * height;
    let pixels: Vec<f64> = if &bytes[..2] == b"P5" {
        pos += 1;
        let data = &bytes[pos.min(bytes.len())..];
        let bpp = if maxval < 256 { 1 } else { 2 };
        if data.len() < count * bpp {
            return Err("truncated PGM raster".into());
        }
        (0..count)
            .map(|k| {
                if bpp == 1 {
                    data[k] as f64
                } else {
                    u16::from_be_bytes([data[2 * k], data[2 * k + 1]]) as f64
                }
            })
            .collect()
    } else {
        let text = std::str::from_utf8(&bytes[pos..]).map_err(|e| e.to_string())?;
        let vals: std::result::Result<Vec<f64>, _> = text
            .split_ascii_whitespace()
            .take(count)
            .map(|t| t.parse::<u32>().map(f64::from))
            .collect();
        let vals = vals.map_err(|e| e.to_string())?;
        if vals.len() < count {
            return Err("truncated PGM raster".into());
        }
        vals
    };
    if pixels.iter().any(|&v| v > maxval as f64) {
        return Err("pixel exceeds maxval".into());
    }
    Ok(GrayImage {
        height,
        width,
        pixels: pixels.iter().map(|v| v / maxval as f64).collect(),
    })
}

fn parse_csv_grid(text: &str) -> std::result::Result<GrayImage, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| format!("bad CSV value: {e}"))?;
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err("CSV grid must hold finite nonnegative values".into());
        }
        rows.push(row);
    }
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err("CSV grid rows must be nonempty and of equal length".into());
    }
    Ok(GrayImage {
        height: rows.len(),
        width,
        pixels: rows.concat(),
    })
}

/// Squared Euclidean distances between the pixel grid points of an `h×w` image.
pub fn grid_cost(height: usize, width: usize) -> DenseMatrix {
    let k = height * width;
    DenseMatrix::from_fn(k, k, |p, q| {
        let (r1, c1) = ((p / width) as f64, (p % width) as f64);
        let (r2, c2) = ((q / width) as f64, (q % width) as f64);
        (r1 - r2).powi(2) + (c1 - c2).powi(2)
    })
}

/// Intensities plus [`PIXEL_EPS`], normalized to unit mass.
pub fn image_marginal(img: &GrayImage) -> Vec<f64> {
    renormalize(&img.pixels.iter().map(|v| v + PIXEL_EPS).collect::<Vec<_>>())
}

/// Two same-size grayscale images as an OT instance on the pixel grid.
pub fn load_image_pair(path1: &Path, path2: &Path) -> Result<OtProblem> {
    let (x, y) = (load_image(path1)?, load_image(path2)?);
    if (x.height, x.width) != (y.height, y.width) {
        return Err(load_err(
            path2,
            format!(
                "dimensions {}x{} differ from {}x{}",
                y.height, y.width, x.height, x.width
            ),
        ));
    }
    OtProblem::normalized(
        grid_cost(x.height, x.width),
        image_marginal(&x),
        image_marginal(&y),
    )
}

/// Reads a cost CSV; an optional first line `# m n` is checked against the body.
pub fn read_cost_csv(path: &Path) -> Result<DenseMatrix> {
    let text = fs::read_to_string(path).map_err(|e| load_err(path, e.to_string()))?;
    let mut declared = None;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if k == 0 {
                let dims: Vec<usize> = rest
                    .split_whitespace()
                    .filter_map(|t| t.parse().ok())
                    .collect();
                if dims.len() == 2 {
                    declared = Some((dims[0], dims[1]));
                }
            }
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| load_err(path, format!("line {}: {e}", k + 1)))?);
    }
    let m = DenseMatrix::from_rows(&rows).map_err(|e| load_err(path, e.to_string()))?;
    if let Some(d) = declared {
        if d != m.shape() {
            return Err(load_err(
                path,
                format!(
                    "header declares {}x{}, body is {}x{}",
                    d.0,
                    d.1,
                    m.rows(),
                    m.cols()
                ),
            ));
        }
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Err(load_err(path, "empty cost matrix"));
    }
    Ok(m)
}

/// Reads one value per line.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| load_err(path, e.to_string()))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>()
                .map_err(|e| load_err(path, format!("{l:?}: {e}")))
        })
        .collect()
}

pub fn write_cost_csv(path: &Path, cost: &DenseMatrix) -> std::io::Result<()> {
    let mut out = format!("# {} {}\n", cost.rows(), cost.cols());
    for i in 0..cost.rows() {
        let line: Vec<String> = cost.row(i).iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out)
}

pub fn write_vector(path: &Path, v: &[f64]) -> std::io::Result<()> {
    let mut out = String::new();
    for x in v {
        let _ = writeln!(out, "{x}");
    }
    fs::write(path, out)
}
