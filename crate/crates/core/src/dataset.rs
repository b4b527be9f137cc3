//! Dataset ingestion (CSV and a small binary format) and synthetic
//! benchmark generators (swiss roll, Gaussian blobs).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{GdrError, Result};

/// Magic bytes at the start of the binary matrix format.
pub const BINARY_MAGIC: &[u8; 4] = b"GDRM";

/// Swiss roll angular range, the classic construction.
pub const SWISS_ROLL_T_RANGE: (f64, f64) = (1.5 * std::f64::consts::PI, 4.5 * std::f64::consts::PI);
/// Swiss roll height range.
pub const SWISS_ROLL_H_RANGE: (f64, f64) = (0.0, 21.0);

/// An n x dim row-major matrix of points with optional integer class labels.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    pub n: usize,
    pub dim: usize,
    /// Row-major values, length `n * dim`.
    pub values: Vec<f64>,
    /// Optional class ids, length `n` when present.
    pub labels: Option<Vec<i64>>,
}

impl DataMatrix {
    /// Validates the invariants: finite values, matching label length,
    /// n >= 2 and dim >= 1.
    pub fn new(n: usize, dim: usize, values: Vec<f64>, labels: Option<Vec<i64>>) -> Result<Self> {
        if n < 2 || dim < 1 {
            return Err(GdrError::InvalidArgument(format!(
                "matrix must have n >= 2 and dim >= 1, got n={n}, dim={dim}"
            )));
        }
        if values.len() != n * dim {
            return Err(GdrError::InvalidArgument(format!(
                "expected {} values, got {}",
                n * dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(GdrError::NonFinite {
                row: pos / dim + 1,
                col: pos % dim + 1,
            });
        }
        if let Some(ref l) = labels {
            if l.len() != n {
                return Err(GdrError::InvalidArgument(format!(
                    "labels length {} does not match n={n}",
                    l.len()
                )));
            }
        }
        Ok(Self {
            n,
            dim,
            values,
            labels,
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Squared Euclidean distance between rows `i` and `j`.
    #[inline]
    pub fn dist2(&self, i: usize, j: usize) -> f64 {
        let a = self.row(i);
        let b = self.row(j);
        let mut acc = 0.0;
        for c in 0..self.dim {
            let diff = a[c] - b[c];
            acc += diff * diff;
        }
        acc
    }
}

/// On-disk format selector for [`load_matrix`] / [`save_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    /// Comma-separated values. `has_header` skips the first row;
    /// `label_column` treats the last column as an integer (or string) label.
    Csv { has_header: bool, label_column: bool },
    /// "GDRM" magic, u64 n, u64 dim, u8 has_labels, then row-major
    /// little-endian f32 values, then (if labels) n little-endian i64.
    F32Binary,
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<DataMatrix> {
    match format {
        MatrixFormat::Csv {
            has_header,
            label_column,
        } => load_csv(path, has_header, label_column),
        MatrixFormat::F32Binary => load_binary(path),
    }
}

/// Writes a matrix back to disk. Binary output stores values as f32,
/// so a binary round trip is bit-exact only for f32-representable data.
pub fn save_matrix(path: &Path, data: &DataMatrix, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Csv { label_column, .. } => save_csv(path, data, label_column),
        MatrixFormat::F32Binary => save_binary(path, data),
    }
}

fn load_csv(path: &Path, has_header: bool, label_column: bool) -> Result<DataMatrix> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let path_str = path.display().to_string();

    let mut values: Vec<f64> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut width: Option<usize> = None;
    let mut n = 0usize;

    for (line_idx, line) in reader.lines().enumerate() {
        let line = line?;
        let row_no = line_idx + 1;
        if line_idx == 0 && has_header {
            continue;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(|f| f.trim()).collect();
        match width {
            None => {
                if label_column && fields.len() < 2 {
                    return Err(GdrError::Parse {
                        path: path_str,
                        row: row_no,
                        msg: "need at least one feature column besides the label".into(),
                    });
                }
                width = Some(fields.len());
            }
            Some(w) if w != fields.len() => {
                return Err(GdrError::Parse {
                    path: path_str,
                    row: row_no,
                    msg: format!("expected {w} fields, found {}", fields.len()),
                });
            }
            _ => {}
        }
        let n_features = fields.len() - usize::from(label_column);
        for (col, field) in fields[..n_features].iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| GdrError::Parse {
                path: path_str.clone(),
                row: row_no,
                msg: format!("cannot parse '{field}' as a number (column {})", col + 1),
            })?;
            if !v.is_finite() {
                return Err(GdrError::NonFinite {
                    row: row_no,
                    col: col + 1,
                });
            }
            values.push(v);
        }
        if label_column {
            raw_labels.push(fields[n_features].to_string());
        }
        n += 1;
    }

    let dim = match width {
        Some(w) => w - usize::from(label_column),
        None => {
            return Err(GdrError::Parse {
                path: path_str,
                row: 0,
                msg: "file holds no data rows".into(),
            })
        }
    };

    let labels = if label_column {
        Some(map_labels(&raw_labels))
    } else {
        None
    };
    DataMatrix::new(n, dim, values, labels)
}

/// Integer labels parse directly; anything else is mapped to ids via a
/// stable sorted mapping over the distinct strings.
fn map_labels(raw: &[String]) -> Vec<i64> {
    if raw.iter().all(|s| s.parse::<i64>().is_ok()) {
        return raw.iter().map(|s| s.parse::<i64>().unwrap()).collect();
    }
    let mut distinct: Vec<&String> = raw.iter().collect();
    distinct.sort();
    distinct.dedup();
    raw.iter()
        .map(|s| distinct.binary_search(&s).unwrap() as i64)
        .collect()
}

fn save_csv(path: &Path, data: &DataMatrix, label_column: bool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..data.n {
        let mut fields: Vec<String> = data.row(i).iter().map(|v| format!("{v}")).collect();
        if label_column {
            let label = data.labels.as_ref().map(|l| l[i]).unwrap_or(0);
            fields.push(label.to_string());
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

fn load_binary(path: &Path) -> Result<DataMatrix> {
    let mut reader = BufReader::new(File::open(path)?);
    let path_str = path.display().to_string();

    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(GdrError::Parse {
            path: path_str,
            row: 0,
            msg: "bad magic bytes (expected GDRM)".into(),
        });
    }
    let mut u64buf = [0u8; 8];
    reader.read_exact(&mut u64buf)?;
    let n = u64::from_le_bytes(u64buf) as usize;
    reader.read_exact(&mut u64buf)?;
    let dim = u64::from_le_bytes(u64buf) as usize;
    let mut flag = [0u8; 1];
    reader.read_exact(&mut flag)?;
    let has_labels = flag[0] != 0;

    let mut values = Vec::with_capacity(n * dim);
    let mut f32buf = [0u8; 4];
    for idx in 0..n * dim {
        reader.read_exact(&mut f32buf)?;
        let v = f32::from_le_bytes(f32buf) as f64;
        if !v.is_finite() {
            return Err(GdrError::NonFinite {
                row: idx / dim + 1,
                col: idx % dim + 1,
            });
        }
        values.push(v);
    }
    let labels = if has_labels {
        let mut l = Vec::with_capacity(n);
        for _ in 0..n {
            reader.read_exact(&mut u64buf)?;
            l.push(i64::from_le_bytes(u64buf));
        }
        Some(l)
    } else {
        None
    };
    DataMatrix::new(n, dim, values, labels)
}

fn save_binary(path: &Path, data: &DataMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(data.n as u64).to_le_bytes())?;
    w.write_all(&(data.dim as u64).to_le_bytes())?;
    w.write_all(&[u8::from(data.labels.is_some())])?;
    for &v in &data.values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    if let Some(ref labels) = data.labels {
        for &l in labels {
            w.write_all(&l.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Swiss roll point cloud: (t cos t, h, t sin t) plus Gaussian noise.
///
/// Returns the matrix together with the unrolled parameter `t` per point,
/// which downstream manifold-preservation checks rank against.
pub fn make_swiss_roll(n: usize, noise: f64, seed: u64) -> Result<(DataMatrix, Vec<f64>)> {
    if n < 2 {
        return Err(GdrError::InvalidArgument("swiss roll needs n >= 2".into()));
    }
    if noise < 0.0 {
        return Err(GdrError::InvalidArgument("noise must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (t_lo, t_hi) = SWISS_ROLL_T_RANGE;
    let (h_lo, h_hi) = SWISS_ROLL_H_RANGE;

    let mut values = Vec::with_capacity(n * 3);
    let mut ts = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.random_range(t_lo..t_hi);
        let h = rng.random_range(h_lo..h_hi);
        let mut p = [t * t.cos(), h, t * t.sin()];
        if noise > 0.0 {
            for c in &mut p {
                *c += noise * normal.sample(&mut rng);
            }
        }
        values.extend_from_slice(&p);
        ts.push(t);
    }
    Ok((DataMatrix::new(n, 3, values, None)?, ts))
}

/// Isotropic unit-variance Gaussian clusters with labels. Cluster centers
/// are drawn uniformly in a box and rejected until pairwise >= `sep` apart.
pub fn make_blobs(n: usize, clusters: usize, dim: usize, sep: f64, seed: u64) -> Result<DataMatrix> {
    if n < 2 || clusters < 1 || dim < 1 {
        return Err(GdrError::InvalidArgument(
            "blobs need n >= 2, clusters >= 1, dim >= 1".into(),
        ));
    }
    if sep <= 0.0 {
        return Err(GdrError::InvalidArgument("sep must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Box side grows until all centers fit with the required spacing.
    let mut side = sep * (clusters as f64).powf(1.0 / dim as f64) * 2.0;
    let centers: Vec<Vec<f64>> = loop {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(clusters);
        let mut attempts = 0usize;
        while centers.len() < clusters && attempts < 10_000 {
            attempts += 1;
            let cand: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..side)).collect();
            let ok = centers.iter().all(|c| {
                let d2: f64 = c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 >= sep * sep
            });
            if ok {
                centers.push(cand);
            }
        }
        if centers.len() == clusters {
            break centers;
        }
        side *= 1.5;
    };

    let base = n / clusters;
    let extra = n % clusters;
    let mut values = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        let count = base + usize::from(c < extra);
        for _ in 0..count {
            for &m in center {
                values.push(m + normal.sample(&mut rng));
            }
            labels.push(c as i64);
        }
    }
    DataMatrix::new(n, dim, values, Some(labels))
}
