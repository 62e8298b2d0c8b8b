//! On-disk formats: the binary orbital container, the plain-text
//! selection list, and the JSON report helpers.
//!
//! Orbital container layout, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "SCDM"
//! version      u32      1
//! n_points     u64      must equal the dims product
//! n_cols       u32
//! dims         3 x u32
//! weight mode  u8       0 = uniform, 1 = per-point
//! weights      1 f64 (uniform) or n_points f64 (per-point)
//! payload      n_points * n_cols f64, column-major
//! checksum     u32      CRC32 of every preceding byte
//! ```
//!
//! Grid spacing is fixed at one grid unit per axis; files carry
//! coefficients with quadrature weights already absorbed, so the weight
//! record is metadata for coordinate-aware consumers.

use anyhow::{bail, Context, Result};
use crc32fast::Hasher;
use scdm_core::{Grid, Matrix, WeightMode};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"SCDM";
const VERSION: u32 = 1;

struct ChecksumWriter<W: Write> {
    inner: W,
    hasher: Hasher,
}

impl<W: Write> ChecksumWriter<W> {
    fn new(inner: W) -> Self {
        ChecksumWriter {
            inner,
            hasher: Hasher::new(),
        }
    }

    fn put(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.hasher.update(bytes);
        self.inner.write_all(bytes)
    }

    /// Appends the checksum itself (unhashed) and flushes.
    fn seal(mut self) -> std::io::Result<()> {
        let crc = self.hasher.clone().finalize();
        self.inner.write_all(&crc.to_le_bytes())?;
        self.inner.flush()
    }
}

pub fn write_orbital_file(path: &Path, grid: &Grid, m: &Matrix) -> Result<()> {
    if m.rows() != grid.n_points() {
        bail!(
            "matrix has {} rows but the grid has {} points",
            m.rows(),
            grid.n_points()
        );
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = ChecksumWriter::new(BufWriter::new(file));
    let write = |w: &mut ChecksumWriter<_>| -> std::io::Result<()> {
        w.put(&MAGIC)?;
        w.put(&VERSION.to_le_bytes())?;
        w.put(&(grid.n_points() as u64).to_le_bytes())?;
        w.put(&(m.cols() as u32).to_le_bytes())?;
        for d in grid.dims() {
            w.put(&(d as u32).to_le_bytes())?;
        }
        match grid.weights() {
            WeightMode::Uniform(v) => {
                w.put(&[0u8])?;
                w.put(&v.to_le_bytes())?;
            }
            WeightMode::PerPoint(vs) => {
                w.put(&[1u8])?;
                for v in vs {
                    w.put(&v.to_le_bytes())?;
                }
            }
        }
        let mut buf = Vec::with_capacity(m.rows().min(1 << 16) * 8);
        for c in 0..m.cols() {
            buf.clear();
            for v in m.col(c) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.put(&buf)?;
        }
        Ok(())
    };
    write(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.seal().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            bail!("file truncated: wanted {n} bytes at offset {}", self.pos);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_orbital_file(path: &Path) -> Result<(Grid, Matrix)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() < 4 {
        bail!("{}: too short to hold a checksum", path.display());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let mut hasher = Hasher::new();
    hasher.update(body);
    let actual = hasher.finalize();
    if stored != actual {
        bail!(
            "{}: checksum mismatch (stored {stored:08x}, computed {actual:08x})",
            path.display()
        );
    }

    let mut cur = Cursor { bytes: body, pos: 0 };
    if cur.take(4)? != MAGIC {
        bail!("{}: not an orbital file (bad magic)", path.display());
    }
    let version = cur.u32()?;
    if version != VERSION {
        bail!("{}: unsupported format version {version}", path.display());
    }
    let n = cur.u64()? as usize;
    let n_cols = cur.u32()? as usize;
    let dims = [
        cur.u32()? as usize,
        cur.u32()? as usize,
        cur.u32()? as usize,
    ];
    if dims[0] * dims[1] * dims[2] != n {
        bail!(
            "{}: header says {n} points but dims {}x{}x{}",
            path.display(),
            dims[0],
            dims[1],
            dims[2]
        );
    }
    let weights = match cur.take(1)?[0] {
        0 => WeightMode::Uniform(cur.f64s(1)?[0]),
        1 => WeightMode::PerPoint(cur.f64s(n)?),
        other => bail!("{}: unknown weight mode {other}", path.display()),
    };
    let data = cur.f64s(n * n_cols)?;
    if cur.pos != body.len() {
        bail!(
            "{}: {} trailing bytes after payload",
            path.display(),
            body.len() - cur.pos
        );
    }
    let grid = Grid::new(dims, [1.0; 3], weights)?;
    let matrix = Matrix::from_col_major(n, n_cols, data)?;
    Ok((grid, matrix))
}

/// One line per selected point: 1-based linear index, then physical
/// coordinates. Plain text so runs diff cleanly.
pub fn write_selection_file(path: &Path, grid: &Grid, indices: &[usize]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# index x y z (1-based linear grid index)")?;
    for &j in indices {
        let [x, y, z] = grid.point_coords(j);
        writeln!(w, "{} {x} {y} {z}", j + 1)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back the leading 1-based index column, returning 0-based indices.
pub fn read_selection_file(path: &Path, n_points: usize) -> Result<Vec<usize>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok = line.split_whitespace().next().unwrap();
        let idx: usize = tok
            .parse()
            .with_context(|| format!("{}:{}: bad index {tok:?}", path.display(), ln + 1))?;
        if idx == 0 || idx > n_points {
            bail!(
                "{}:{}: index {idx} outside 1..={n_points}",
                path.display(),
                ln + 1
            );
        }
        out.push(idx - 1);
    }
    Ok(out)
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// `base` with `_tag` spliced in front of the extension:
/// `out/run.orb` + `rho` -> `out/run_rho.orb`.
pub fn tagged_path(base: &Path, tag: &str) -> std::path::PathBuf {
    let stem = base.file_stem().unwrap_or_default().to_string_lossy();
    let name = match base.extension() {
        Some(ext) => format!("{stem}_{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{tag}"),
    };
    base.with_file_name(name)
}
