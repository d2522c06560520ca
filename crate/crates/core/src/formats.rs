//! On-disk formats.
//!
//! All multi-byte values in the checkpoint and dataset binaries are
//! little-endian. IDX files follow the MNIST convention (big-endian).
//!
//! Checkpoint (`MLNCKPT1`):
//!
//! | bytes      | content                                        |
//! |------------|------------------------------------------------|
//! | 8          | magic `MLNCKPT1`                               |
//! | 4 × 3      | `u32` mixtures K, classes C, layer count L     |
//! | 4 × L      | `u32` input dim followed by each hidden width  |
//! | 8 × 2      | `f64` σ lower and upper bound                  |
//! | 8          | `u64` parameter count P                        |
//! | 8 × P      | `f64` parameters, backbone then π, μ, σ heads  |
//!
//! Each layer stores its `out × in` weight row-major, then its bias.
//!
//! Dataset (`MLNDATA1`):
//!
//! | bytes      | content                                           |
//! |------------|---------------------------------------------------|
//! | 8          | magic `MLNDATA1`                                  |
//! | 8          | `u64` instances N                                 |
//! | 4 × 2      | `u32` feature dim D, classes C                    |
//! | 4 × 2      | `u32` image height, width (0, 0 when not images)  |
//! | 1          | flags: bit 0 clean labels, bit 1 set index        |
//! | 8 × N × D  | `f64` features, row-major                         |
//! | 4 × N      | `u32` noisy labels                                |
//! | 4 × N      | `u32` clean labels (if flagged)                   |
//! | N          | `u8` set index (if flagged)                       |

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::noise::{LabeledDataset, NoiseSpec, TransitionMatrix};
use crate::numerics::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MLNCKPT1";
pub const DATASET_MAGIC: &[u8; 8] = b"MLNDATA1";
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| usage(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Little-endian cursor over a byte buffer that reports truncation against
/// the owning file.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self {
            bytes,
            pos: 0,
            path,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| self.format("size overflow"))?;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: end,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.format("size overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| self.format("size overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn magic(&mut self, want: &[u8; 8]) -> Result<()> {
        let got = self.take(8)?;
        if got != want {
            return Err(self.format(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(want),
                String::from_utf8_lossy(got)
            )));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.format(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }

    fn format(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| usage(format!("{what} {v} does not fit in 32 bits")))
}

pub fn encode_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    let arch = &params.arch;
    let mut out = Vec::with_capacity(64 + params.num_params() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&to_u32(arch.num_mixtures, "mixture count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(arch.num_classes, "class count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(arch.hidden.len() + 1, "layer count")?.to_le_bytes());
    for &d in std::iter::once(&arch.input_dim).chain(&arch.hidden) {
        out.extend_from_slice(&to_u32(d, "layer width")?.to_le_bytes());
    }
    out.extend_from_slice(&arch.sigma_lo.to_le_bytes());
    out.extend_from_slice(&arch.sigma_hi.to_le_bytes());
    out.extend_from_slice(&(params.num_params() as u64).to_le_bytes());
    for s in params.slices() {
        for v in s {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let mut r = Reader::new(bytes, path);
    r.magic(CHECKPOINT_MAGIC)?;
    let num_mixtures = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let layers = r.u32()? as usize;
    if layers == 0 {
        return Err(r.format("layer count must be at least one"));
    }
    let dims = r.u32s(layers)?;
    let arch = Architecture {
        input_dim: dims[0] as usize,
        hidden: dims[1..].iter().map(|&d| d as usize).collect(),
        num_mixtures,
        num_classes,
        sigma_lo: r.f64()?,
        sigma_hi: r.f64()?,
    };
    arch.validate().map_err(|e| r.format(e.to_string()))?;
    let count = r.u64()? as usize;
    let mut params = ModelParams::zeros(arch)?;
    if count != params.num_params() {
        return Err(r.format(format!(
            "header declares {count} parameters, architecture needs {}",
            params.num_params()
        )));
    }
    let flat = r.f64s(count)?;
    r.finish()?;
    params
        .set_flat(&flat)
        .map_err(|e| r.format(e.to_string()))?;
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params)?)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    decode_checkpoint(&fs::read(path)?, path)
}

pub fn encode_dataset(ds: &LabeledDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let (n, d) = (ds.len(), ds.dim());
    let mut out = Vec::with_capacity(40 + n * (d * 8 + 9));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&to_u32(d, "feature dim")?.to_le_bytes());
    out.extend_from_slice(&to_u32(ds.num_classes, "class count")?.to_le_bytes());
    let (h, w) = ds.image_shape.unwrap_or((0, 0));
    out.extend_from_slice(&to_u32(h, "image height")?.to_le_bytes());
    out.extend_from_slice(&to_u32(w, "image width")?.to_le_bytes());
    let flags = u8::from(ds.clean_labels.is_some()) | (u8::from(ds.set_index.is_some()) << 1);
    out.push(flags);
    for v in ds.features.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut labels = |ls: &[usize]| {
        for &y in ls {
            out.extend_from_slice(&(y as u32).to_le_bytes());
        }
    };
    labels(&ds.noisy_labels);
    if let Some(clean) = &ds.clean_labels {
        labels(clean);
    }
    if let Some(set) = &ds.set_index {
        out.extend_from_slice(set);
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<LabeledDataset> {
    let mut r = Reader::new(bytes, path);
    r.magic(DATASET_MAGIC)?;
    let n = r.u64()? as usize;
    let d = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let (h, w) = (r.u32()? as usize, r.u32()? as usize);
    let flags = r.u8()?;
    if flags & !0b11 != 0 {
        return Err(r.format(format!("unknown flag bits {flags:#04x}")));
    }
    let size = n.checked_mul(d).ok_or_else(|| r.format("size overflow"))?;
    let features = Matrix::from_vec(n, d, r.f64s(size)?).map_err(|e| r.format(e.to_string()))?;
    let to_usize = |v: Vec<u32>| v.into_iter().map(|y| y as usize).collect::<Vec<_>>();
    let noisy_labels = to_usize(r.u32s(n)?);
    let clean_labels = if flags & 1 != 0 {
        Some(to_usize(r.u32s(n)?))
    } else {
        None
    };
    let set_index = if flags & 2 != 0 {
        Some(r.take(n)?.to_vec())
    } else {
        None
    };
    r.finish()?;
    let ds = LabeledDataset {
        features,
        noisy_labels,
        clean_labels,
        set_index,
        num_classes,
        image_shape: (h * w > 0).then_some((h, w)),
    };
    ds.validate().map_err(|e| r.format(e.to_string()))?;
    Ok(ds)
}

pub fn save_dataset(path: &Path, ds: &LabeledDataset) -> Result<()> {
    write_atomic(path, &encode_dataset(ds)?)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    decode_dataset(&fs::read(path)?, path)
}

/// JSON companion of a dataset binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub source: String,
    pub num_instances: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Noise applied to the whole set, or to the ambiguous set for SDN data.
    pub noise: Option<NoiseSpec>,
    /// Noise applied to the clean set of SDN data.
    pub clean_noise: Option<NoiseSpec>,
    pub ambiguous_fraction: Option<f64>,
    /// Generating matrices, one per partition.
    pub transitions: Vec<TransitionMatrix>,
}

fn idx_header(r: &mut &[u8], path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let mut word = || -> Result<u32> {
        if r.len() < 4 {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: 4 * (1 + dims),
                found: 0,
            });
        }
        let (head, tail) = r.split_at(4);
        *r = tail;
        Ok(u32::from_be_bytes(head.try_into().expect("4 bytes")))
    };
    let found = word()?;
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    (0..dims).map(|_| word().map(|v| v as usize)).collect()
}

fn idx_body<'a>(body: &'a [u8], path: &Path, header: usize, want: usize) -> Result<&'a [u8]> {
    if body.len() < want {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header + want,
            found: header + body.len(),
        });
    }
    if body.len() > want {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", body.len() - want),
        });
    }
    Ok(body)
}

/// Reads an IDX image/label pair. Pixels are scaled to `[0, 1]`; the class
/// count is one more than the largest label (at least two).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;

    let mut img = image_bytes.as_slice();
    let dims = idx_header(&mut img, images_path, IDX_IMAGES_MAGIC, 3)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let mut lab = label_bytes.as_slice();
    let count = idx_header(&mut lab, labels_path, IDX_LABELS_MAGIC, 1)?[0];
    if count != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: count,
        });
    }
    let pixels = idx_body(img, images_path, 16, n * h * w)?;
    let labels = idx_body(lab, labels_path, 8, n)?;

    let features = Matrix::from_vec(
        n,
        h * w,
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )?;
    let labels: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let mut ds = LabeledDataset::new(features, labels, num_classes)?;
    ds.image_shape = Some((h, w));
    Ok(ds)
}

/// Writes `images` (each `h·w` bytes) and `labels` as an IDX pair.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    images: &[Vec<u8>],
    labels: &[u8],
    (h, w): (usize, usize),
) -> Result<()> {
    if images.iter().any(|im| im.len() != h * w) {
        return Err(usage(format!("every image must hold {h}x{w} pixels")));
    }
    let mut img = Vec::with_capacity(16 + images.len() * h * w);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [images.len(), h, w] {
        img.extend_from_slice(&to_u32(d, "IDX dimension")?.to_be_bytes());
    }
    images.iter().for_each(|im| img.extend_from_slice(im));
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&to_u32(labels.len(), "IDX dimension")?.to_be_bytes());
    lab.extend_from_slice(labels);
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}

/// One row per line, comma separated, shortest round-trip decimal.
pub fn matrix_csv(m: &Matrix) -> String {
    let mut s = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_matrix_csv(text: &str, path: &Path) -> Result<Matrix> {
    let fail = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut rows = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let row = line
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|e| fail(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(fail("no rows".into()));
    }
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(fail("rows have different lengths".into()));
    }
    Matrix::from_rows(&rows).map_err(|e| fail(e.to_string()))
}

/// Heatmap color for a probability: linear ramp from white (0) to
/// `rgb(8, 48, 107)` (1).
pub fn ramp_color(v: f64) -> (u8, u8, u8) {
    let t = v.clamp(0.0, 1.0);
    let mix = |hi: f64| (255.0 + (hi - 255.0) * t).round() as u8;
    (mix(8.0), mix(48.0), mix(107.0))
}

/// Value-annotated heatmap of a matrix, rows top to bottom.
pub fn matrix_svg(m: &Matrix, title: &str) -> String {
    const CELL: usize = 48;
    const PAD: usize = 36;
    let (rows, cols) = (m.rows(), m.cols());
    let width = PAD + cols * CELL + 8;
    let height = PAD + rows * CELL + 8;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape_xml(title));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="14" font-size="12" text-anchor="middle">{}</text>"#,
        width / 2,
        escape_xml(title)
    );
    for j in 0..cols {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{j}</text>"#,
            PAD + j * CELL + CELL / 2,
            PAD - 6
        );
    }
    for i in 0..rows {
        let y = PAD + i * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{i}</text>"#,
            PAD - 6,
            y + CELL / 2 + 4
        );
        for j in 0..cols {
            let v = m[(i, j)];
            let (r, g, b) = ramp_color(v);
            let x = PAD + j * CELL;
            let ink = if v > 0.5 { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({r},{g},{b})" stroke="#cccccc"/>"##
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="11" text-anchor="middle" fill="{ink}">{v:.2}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// `dir/name`, creating `dir` if needed.
pub fn artifact_path(dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}
