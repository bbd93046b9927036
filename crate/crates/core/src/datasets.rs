//! Data living in the unit box: synthetic mixtures, IDX ingestion, min-max
//! normalization and a small CSV interchange format.

use std::fmt::{self, Write as _};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Mixture {
        components: usize,
        spread: f64,
    },
    Idx {
        source: String,
    },
    Normalized,
    Csv,
    Other(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Mixture { components, spread } => {
                write!(f, "mixture(components={components}, spread={spread})")
            }
            Provenance::Idx { source } => write!(f, "idx({source})"),
            Provenance::Normalized => f.write_str("normalized"),
            Provenance::Csv => f.write_str("csv"),
            Provenance::Other(s) => f.write_str(s),
        }
    }
}

/// Points in `[0, 1]^dim`, so that `dim` bounds every squared distance.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundedDataset {
    dim: usize,
    points: Vec<Vec<f64>>,
    provenance: Provenance,
}

impl BoundedDataset {
    pub fn new(dim: usize, points: Vec<Vec<f64>>, provenance: Provenance) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("dimension must be >= 1".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Parameter(format!(
                    "point {i} has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            if let Some(j) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Parameter(format!(
                    "point {i} coordinate {j} = {} lies outside [0, 1]",
                    p[j]
                )));
            }
        }
        Ok(BoundedDataset {
            dim,
            points,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec<f64>> {
        self.points
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Bound on the squared diameter of the box.
    pub fn delta(&self) -> f64 {
        self.dim as f64
    }
}

/// The first `components` points of the regular grid over `[0.2, 0.8]^dim`
/// with the fewest levels per axis that holds them, in lexicographic order.
pub fn lattice_means(dim: usize, components: usize) -> Vec<Vec<f64>> {
    let mut levels = 1usize;
    while levels.checked_pow(dim as u32).is_some_and(|c| c < components) {
        levels += 1;
    }
    let coord = |i: usize| {
        if levels == 1 {
            0.5
        } else {
            0.2 + 0.6 * i as f64 / (levels - 1) as f64
        }
    };
    (0..components)
        .map(|c| {
            let mut rem = c;
            let mut p = vec![0.0; dim];
            for slot in p.iter_mut().rev() {
                *slot = coord(rem % levels);
                rem /= levels;
            }
            p
        })
        .collect()
}

/// Equal-weight isotropic Gaussian mixture on [`lattice_means`], clamped to
/// the unit box.
pub fn synth_mixture<R: Rng + ?Sized>(
    dim: usize,
    components: usize,
    n: usize,
    spread: f64,
    rng: &mut R,
) -> Result<BoundedDataset> {
    if components == 0 {
        return Err(Error::Parameter("components must be >= 1".into()));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::Parameter(format!("spread must be > 0, got {spread}")));
    }
    if dim == 0 {
        return Err(Error::Parameter("dimension must be >= 1".into()));
    }
    let means = lattice_means(dim, components);
    let noise = Normal::new(0.0, spread).map_err(|e| Error::Parameter(e.to_string()))?;
    let points = (0..n)
        .map(|_| {
            let c = &means[rng.random_range(0..components)];
            c.iter()
                .map(|m| (m + noise.sample(rng)).clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    BoundedDataset::new(dim, points, Provenance::Mixture { components, spread })
}

const IDX_MAGIC: [u8; 4] = [0x00, 0x00, 0x08, 0x03];
const IDX_HEADER_LEN: usize = 16;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: bytes.len(),
            message: format!("truncated header, needed bytes up to {}", offset + 4),
        })
}

/// Parse an unsigned-byte rank-3 IDX tensor (`count x rows x cols`) into
/// flattened images scaled to `[0, 1]`.
pub fn parse_idx(bytes: &[u8]) -> Result<BoundedDataset> {
    if bytes.len() < 4 {
        return Err(Error::Format {
            offset: bytes.len(),
            message: "truncated magic number".into(),
        });
    }
    if bytes[..4] != IDX_MAGIC {
        let found = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic 0x{found:08x}, expected 0x00000803"),
        });
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let dim = rows.checked_mul(cols).filter(|&d| d > 0).ok_or(Error::Format {
        offset: 8,
        message: format!("invalid image shape {rows}x{cols}"),
    })?;
    let payload = &bytes[IDX_HEADER_LEN..];
    let expected = count.checked_mul(dim).ok_or(Error::Format {
        offset: 4,
        message: "declared size overflows".into(),
    })?;
    if payload.len() != expected {
        return Err(Error::Format {
            offset: IDX_HEADER_LEN + payload.len().min(expected),
            message: format!(
                "header declares {expected} payload bytes, file holds {}",
                payload.len()
            ),
        });
    }
    let points = payload
        .chunks_exact(dim)
        .map(|img| img.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect();
    Ok(BoundedDataset {
        dim,
        points,
        provenance: Provenance::Idx {
            source: "bytes".into(),
        },
    })
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<BoundedDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut ds = parse_idx(&bytes)?;
    ds.provenance = Provenance::Idx {
        source: path.display().to_string(),
    };
    Ok(ds)
}

/// Encode images as an IDX tensor; values are rounded to the nearest of the
/// 256 byte levels.
pub fn encode_idx(points: &[Vec<f64>], rows: usize, cols: usize) -> Result<Vec<u8>> {
    let dim = rows * cols;
    let mut out = Vec::with_capacity(IDX_HEADER_LEN + points.len() * dim);
    out.extend_from_slice(&IDX_MAGIC);
    for v in [points.len(), rows, cols] {
        let v = u32::try_from(v).map_err(|_| Error::Size(format!("{v} does not fit in u32")))?;
        out.extend_from_slice(&v.to_be_bytes());
    }
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::Parameter(format!(
                "image {i} has {} pixels, expected {dim}",
                p.len()
            )));
        }
        out.extend(p.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn write_idx(path: impl AsRef<Path>, points: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_idx(points, rows, cols)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Per-coordinate min-max map `u = (x - min) / (max - min)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineRecord {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
}

impl AffineRecord {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.range))
            .map(|(v, (lo, r))| if *r > 0.0 { ((v - lo) / r).clamp(0.0, 1.0) } else { 0.5 })
            .collect()
    }

    /// Constant coordinates come back as their constant value.
    pub fn inverse(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.min.iter().zip(&self.range))
            .map(|(v, (lo, r))| if *r > 0.0 { lo + v * r } else { *lo })
            .collect()
    }
}

pub fn normalize_to_box(points: &[Vec<f64>]) -> Result<(BoundedDataset, AffineRecord)> {
    let first = points
        .first()
        .ok_or_else(|| Error::Parameter("cannot normalize an empty point set".into()))?;
    let dim = first.len();
    let mut min = vec![f64::INFINITY; dim];
    let mut max = vec![f64::NEG_INFINITY; dim];
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::Parameter(format!(
                "point {i} has {} coordinates, expected {dim}",
                p.len()
            )));
        }
        for (j, &v) in p.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Parameter(format!("point {i} coordinate {j} is {v}")));
            }
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    let range = min.iter().zip(&max).map(|(lo, hi)| hi - lo).collect();
    let record = AffineRecord { min, range };
    let mapped = points.iter().map(|p| record.apply(p)).collect();
    let ds = BoundedDataset::new(dim, mapped, Provenance::Normalized)?;
    Ok((ds, record))
}

/// `dim,n` header, a value line, then one comma-separated row per point.
pub fn dataset_to_csv(ds: &BoundedDataset) -> String {
    let mut out = format!("dim,n\n{},{}\n", ds.dim(), ds.len());
    for p in ds.points() {
        let row: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn csv_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

pub fn parse_dataset_csv(text: &str) -> Result<BoundedDataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (ln, header) = lines.next().ok_or_else(|| csv_err(1, "missing header"))?;
    if header.replace(' ', "") != "dim,n" {
        return Err(csv_err(ln, format!("expected header `dim,n`, found {header:?}")));
    }
    let (ln, sizes) = lines.next().ok_or_else(|| csv_err(ln + 1, "missing size line"))?;
    let parsed: Vec<usize> = sizes
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_err(ln, format!("bad size line: {e}")))?;
    let [dim, n] = parsed[..] else {
        return Err(csv_err(ln, "size line must hold exactly `dim,n`"));
    };
    let mut points = Vec::with_capacity(n.min(1 << 20));
    for (ln, line) in lines {
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| csv_err(ln, format!("bad coordinate: {e}")))?;
        if row.len() != dim {
            return Err(csv_err(ln, format!("expected {dim} coordinates, found {}", row.len())));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(csv_err(ln, format!("coordinate {v} lies outside [0, 1]")));
        }
        points.push(row);
    }
    if points.len() != n {
        return Err(csv_err(0, format!("header declares {n} rows, found {}", points.len())));
    }
    BoundedDataset::new(dim, points, Provenance::Csv)
}

pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<BoundedDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset_csv(&text)
}

pub fn write_dataset_csv(path: impl AsRef<Path>, ds: &BoundedDataset) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset_to_csv(ds)).map_err(|e| Error::io(path, e))
}
