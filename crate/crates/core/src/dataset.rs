//! Feature datasets, squared-L2 distances and the `.ecf` file format.
//!
//! `.ecf` layout, all integers little endian:
//!
//! ```text
//! "ECOS"            4 bytes magic
//! version  u16      currently 1
//! flags    u16      bit0 = labels present, bit1 = domains present
//! n        u64      rows
//! dim      u32      feature dimension
//! data     n*dim f32, row-major
//! labels   n i32    (if bit0)
//! domains  n i32    (if bit1)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const ECF_MAGIC: [u8; 4] = *b"ECOS";
pub const ECF_VERSION: u16 = 1;
const FLAG_LABELS: u16 = 1;
const FLAG_DOMAINS: u16 = 1 << 1;
const HEADER_LEN: u64 = 4 + 2 + 2 + 8 + 4;

/// Distance used between feature vectors. Only squared L2 exists for now.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceKind {
    #[default]
    SquaredL2,
}

/// How a dataset file is encoded on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Binary,
    /// Comma separated rows. With `trailing_label` the last column is a class id.
    Csv {
        trailing_label: bool,
    },
}

impl DataFormat {
    /// Picks csv for `.csv` paths and the binary format otherwise.
    pub fn from_path(path: &Path, trailing_label: bool) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv { trailing_label },
            _ => DataFormat::Binary,
        }
    }
}

/// `n` feature rows of dimension `dim`, with optional class and domain ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    n: usize,
    dim: usize,
    data: Vec<f32>,
    labels: Option<Vec<u32>>,
    domains: Option<Vec<u32>>,
}

fn check_ids(ids: &Option<Vec<u32>>, n: usize, what: &str) -> Result<()> {
    if let Some(ids) = ids {
        if ids.len() != n {
            return Err(Error::invalid(format!(
                "{what} has length {} but dataset has {n} rows",
                ids.len()
            )));
        }
        if let Some(bad) = ids.iter().find(|&&id| id > i32::MAX as u32) {
            return Err(Error::invalid(format!("{what} id {bad} exceeds i32 range")));
        }
    }
    Ok(())
}

impl FeatureDataset {
    pub fn new(
        dim: usize,
        data: Vec<f32>,
        labels: Option<Vec<u32>>,
        domains: Option<Vec<u32>>,
    ) -> Result<Self> {
        if dim == 0 {
            if !data.is_empty() {
                return Err(Error::invalid("dim is 0 but data is not empty"));
            }
        } else if !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "data length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        let n = data.len().checked_div(dim).unwrap_or_else(|| {
            labels
                .as_ref()
                .or(domains.as_ref())
                .map_or(0, |ids| ids.len())
        });
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { row: pos / dim });
        }
        check_ids(&labels, n, "labels")?;
        check_ids(&domains, n, "domains")?;
        Ok(Self {
            n,
            dim,
            data,
            labels,
            domains,
        })
    }

    /// Builds an unlabeled dataset from row slices; all rows must share a length.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data, None, None)
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        let labels = Some(labels);
        check_ids(&labels, self.n, "labels")?;
        self.labels = labels;
        Ok(self)
    }

    pub fn with_domains(mut self, domains: Vec<u32>) -> Result<Self> {
        let domains = Some(domains);
        check_ids(&domains, self.n, "domains")?;
        self.domains = domains;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn domains(&self) -> Option<&[u32]> {
        self.domains.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        (0..self.n).map(move |i| self.row(i))
    }

    /// Copies the given rows (with their labels and domains) into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n) {
            return Err(Error::invalid(format!(
                "row index {bad} out of range for {} rows",
                self.n
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let pick = |ids: &Option<Vec<u32>>| {
            ids.as_ref()
                .map(|ids| indices.iter().map(|&i| ids[i]).collect::<Vec<_>>())
        };
        Ok(Self {
            n: indices.len(),
            dim: self.dim,
            data,
            labels: pick(&self.labels),
            domains: pick(&self.domains),
        })
    }

    /// Mean squared row norm, accumulated in f64.
    pub fn mean_sq_norm(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let total: f64 = self.rows().map(sq_dist_to_origin).sum();
        total / self.n as f64
    }
}

fn sq_dist_to_origin(a: &[f32]) -> f64 {
    a.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
}

/// Squared L2 distance with f64 accumulation.
#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

/// Index and squared distance of the nearest row of `refs` (row-major, `dim`
/// columns) to `query`. Ties go to the lowest index. `refs` must be non-empty.
#[inline]
pub(crate) fn nearest(query: &[f32], refs: &[f32], dim: usize) -> (f64, usize) {
    if dim == 0 {
        return (0.0, 0);
    }
    let mut best = (f64::INFINITY, 0);
    for (j, r) in refs.chunks_exact(dim).enumerate() {
        let d = sq_dist(query, r);
        if d < best.0 {
            best = (d, j);
        }
    }
    best
}

/// For every query row, the minimum squared distance to `refs` and the lowest
/// index attaining it.
pub fn pairwise_min_dist(
    queries: &FeatureDataset,
    refs: &FeatureDataset,
) -> Result<Vec<(f64, usize)>> {
    if queries.dim != refs.dim {
        return Err(Error::DimensionMismatch {
            expected: refs.dim,
            found: queries.dim,
        });
    }
    if refs.n == 0 {
        return Err(Error::invalid("reference set is empty"));
    }
    let dim = refs.dim;
    Ok((0..queries.n)
        .into_par_iter()
        .map(|i| nearest(queries.row(i), &refs.data, dim))
        .collect())
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        DataFormat::Binary => read_ecf(BufReader::new(file)),
        DataFormat::Csv { trailing_label } => read_csv(BufReader::new(file), trailing_label),
    }
}

/// Writes the `.ecf` binary form.
pub fn save_dataset(ds: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ecf(ds, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ecf<W: Write>(ds: &FeatureDataset, w: &mut W) -> std::io::Result<()> {
    let mut flags = 0u16;
    if ds.labels.is_some() {
        flags |= FLAG_LABELS;
    }
    if ds.domains.is_some() {
        flags |= FLAG_DOMAINS;
    }
    w.write_all(&ECF_MAGIC)?;
    w.write_all(&ECF_VERSION.to_le_bytes())?;
    w.write_all(&flags.to_le_bytes())?;
    w.write_all(&(ds.n as u64).to_le_bytes())?;
    w.write_all(&(ds.dim as u32).to_le_bytes())?;
    for x in &ds.data {
        w.write_all(&x.to_le_bytes())?;
    }
    for ids in [&ds.labels, &ds.domains].into_iter().flatten() {
        for &id in ids {
            w.write_all(&(id as i32).to_le_bytes())?;
        }
    }
    Ok(())
}

struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn exact<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| Error::Format {
            offset: self.offset,
            message: format!("reading {what}: {e}"),
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn ids(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let at = self.offset;
            let v = i32::from_le_bytes(self.exact::<4>(what)?);
            if v < 0 {
                return Err(Error::Format {
                    offset: at,
                    message: format!("negative {what} id {v}"),
                });
            }
            ids.push(v as u32);
        }
        Ok(ids)
    }
}

pub fn read_ecf<R: Read>(reader: R) -> Result<FeatureDataset> {
    let mut r = OffsetReader {
        inner: reader,
        offset: 0,
    };
    let magic = r.exact::<4>("magic")?;
    if magic != ECF_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:02x?}"),
        });
    }
    let version = u16::from_le_bytes(r.exact::<2>("version")?);
    if version != ECF_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let flags = u16::from_le_bytes(r.exact::<2>("flags")?);
    if flags & !(FLAG_LABELS | FLAG_DOMAINS) != 0 {
        return Err(Error::Format {
            offset: 6,
            message: format!("unknown flag bits {flags:#06x}"),
        });
    }
    let n = u64::from_le_bytes(r.exact::<8>("row count")?);
    let dim = u32::from_le_bytes(r.exact::<4>("dim")?) as usize;
    let n = usize::try_from(n).map_err(|_| Error::Format {
        offset: 8,
        message: format!("row count {n} too large"),
    })?;
    let cells = n.checked_mul(dim).ok_or_else(|| Error::Format {
        offset: 8,
        message: "n * dim overflows".into(),
    })?;
    // Cap the up-front allocation; a bogus header should fail on read, not on alloc.
    let mut data = Vec::with_capacity(cells.min(1 << 24));
    for i in 0..cells {
        let x = f32::from_le_bytes(r.exact::<4>("feature data")?);
        if !x.is_finite() {
            return Err(Error::NonFinite { row: i / dim });
        }
        data.push(x);
    }
    let labels = if flags & FLAG_LABELS != 0 {
        Some(r.ids(n, "label")?)
    } else {
        None
    };
    let domains = if flags & FLAG_DOMAINS != 0 {
        Some(r.ids(n, "domain")?)
    } else {
        None
    };
    let mut probe = [0u8; 1];
    match r.inner.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::Format {
                offset: r.offset,
                message: "trailing bytes after dataset".into(),
            })
        }
        Err(e) => {
            return Err(Error::Format {
                offset: r.offset,
                message: e.to_string(),
            })
        }
    }
    debug_assert!(r.offset >= HEADER_LEN);
    Ok(FeatureDataset {
        n,
        dim,
        data,
        labels,
        domains,
    })
}

/// Parses headerless comma-separated rows. Rows are numbered from 0.
pub fn read_csv<R: Read>(reader: R, trailing_label: bool) -> Result<FeatureDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut dim: Option<usize> = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut row = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(row as u64 + 1, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let features = if trailing_label {
            if record.len() < 2 {
                return Err(Error::Csv {
                    line,
                    message: "expected features followed by a label".into(),
                });
            }
            let raw = &record[record.len() - 1];
            let label: i64 = raw.parse().map_err(|_| Error::Csv {
                line,
                message: format!("bad label {raw:?}"),
            })?;
            if !(0..=i64::from(i32::MAX)).contains(&label) {
                return Err(Error::Csv {
                    line,
                    message: format!("label {label} out of range"),
                });
            }
            labels.push(label as u32);
            record.len() - 1
        } else {
            record.len()
        };
        match dim {
            None => dim = Some(features),
            Some(d) if d != features => {
                return Err(Error::Csv {
                    line,
                    message: format!("row {row} has {features} columns, expected {d}"),
                })
            }
            Some(_) => {}
        }
        for field in record.iter().take(features) {
            let x: f32 = field.parse().map_err(|_| Error::Csv {
                line,
                message: format!("bad number {field:?}"),
            })?;
            if !x.is_finite() {
                return Err(Error::NonFinite { row });
            }
            data.push(x);
        }
        row += 1;
    }
    let labels = trailing_label.then_some(labels);
    FeatureDataset::new(dim.unwrap_or(0), data, labels, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(q: &FeatureDataset, r: &FeatureDataset) -> Vec<(f64, usize)> {
        q.rows()
            .map(|a| {
                let mut best = (f64::INFINITY, usize::MAX);
                for (j, b) in r.rows().enumerate() {
                    let d: f64 = a
                        .iter()
                        .zip(b)
                        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
                        .sum();
                    if d < best.0 {
                        best = (d, j);
                    }
                }
                best
            })
            .collect()
    }

    fn ds(rows: &[&[f32]]) -> FeatureDataset {
        FeatureDataset::from_rows(rows).unwrap()
    }

    #[test]
    fn min_dist_examples() {
        let refs = ds(&[&[0.0, 0.0], &[3.0, 4.0]]);
        let got = pairwise_min_dist(&ds(&[&[0.0, 0.0]]), &refs).unwrap();
        assert_eq!(got, vec![(0.0, 0)]);

        let refs = ds(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let got = pairwise_min_dist(&ds(&[&[1.0, 0.0]]), &refs).unwrap();
        assert_eq!(got, vec![(1.0, 0)]);

        let refs = ds(&[&[0.0, 0.0], &[3.0, 4.0], &[6.0, 0.0]]);
        let q = ds(&[&[5.0, 0.0]]);
        assert_eq!(naive(&q, &refs), vec![(1.0, 2)]);
        assert_eq!(pairwise_min_dist(&q, &refs).unwrap(), vec![(1.0, 2)]);
    }

    #[test]
    fn swapping_equidistant_refs_follows_lowest_index() {
        let q = ds(&[&[1.0, 0.0]]);
        let a = ds(&[&[0.0, 0.0], &[2.0, 0.0], &[9.0, 9.0]]);
        let b = ds(&[&[9.0, 9.0], &[2.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(pairwise_min_dist(&q, &a).unwrap()[0].1, 0);
        assert_eq!(pairwise_min_dist(&q, &b).unwrap()[0].1, 1);
    }

    #[test]
    fn min_dist_errors() {
        let q = ds(&[&[1.0, 0.0]]);
        let wrong = ds(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(
            pairwise_min_dist(&q, &wrong),
            Err(Error::DimensionMismatch { .. })
        ));
        let empty = FeatureDataset::new(2, vec![], None, None).unwrap();
        assert!(pairwise_min_dist(&q, &empty).is_err());
    }

    #[test]
    fn binary_round_trip_3x2() {
        let d = ds(&[&[0.0, 1.0], &[2.0, 3.0], &[-4.5, 1e-30]])
            .with_labels(vec![0, 1, 1])
            .unwrap();
        let mut buf = Vec::new();
        write_ecf(&d, &mut buf).unwrap();
        assert_eq!(buf.len() as u64, HEADER_LEN + 6 * 4 + 3 * 4);
        assert_eq!(&buf[..4], &[0x45, 0x43, 0x4F, 0x53]);
        let back = read_ecf(buf.as_slice()).unwrap();
        assert_eq!(back.n(), 3);
        assert_eq!(back.dim(), 2);
        assert_eq!(back, d);
        assert!(back.labels().is_some());
        assert!(back.domains().is_none());
    }

    #[test]
    fn zero_rows_round_trip() {
        let d = FeatureDataset::new(4, vec![], None, None).unwrap();
        let mut buf = Vec::new();
        write_ecf(&d, &mut buf).unwrap();
        let back = read_ecf(buf.as_slice()).unwrap();
        assert_eq!(back.n(), 0);
        assert_eq!(back.dim(), 4);
    }

    #[test]
    fn nan_is_rejected_with_row() {
        let mut buf = Vec::new();
        let d = ds(&[&[0.0, 1.0], &[2.0, 3.0], &[4.0, 5.0]]);
        write_ecf(&d, &mut buf).unwrap();
        // row 1, column 1
        let at = HEADER_LEN as usize + 3 * 4;
        buf[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = read_ecf(buf.as_slice()).unwrap_err();
        assert_eq!(err.to_string(), "non-finite at row 1");
    }

    #[test]
    fn truncated_and_bad_headers_name_offsets() {
        let mut buf = Vec::new();
        write_ecf(&ds(&[&[0.0, 1.0]]), &mut buf).unwrap();
        let err = read_ecf(&buf[..buf.len() - 2]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 24, .. }), "{err}");

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_ecf(bad.as_slice()),
            Err(Error::Format { offset: 0, .. })
        ));

        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_ecf(extra.as_slice()).is_err());
    }

    #[test]
    fn csv_parse() {
        let d = read_csv("0.0,1.0\n2.0,3.0".as_bytes(), false).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.row(0), &[0.0, 1.0]);
        assert_eq!(d.row(1), &[2.0, 3.0]);

        let d = read_csv("0.5,1.0,3\n2.0,3.0,0\n".as_bytes(), true).unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.labels(), Some(&[3, 0][..]));

        assert!(matches!(
            read_csv("1,2\n3\n".as_bytes(), false),
            Err(Error::Csv { .. })
        ));
        assert!(matches!(
            read_csv("1,2\n3,NaN\n".as_bytes(), false),
            Err(Error::NonFinite { row: 1 })
        ));
    }

    #[test]
    fn label_length_checked() {
        let d = ds(&[&[0.0], &[1.0]]);
        assert!(d.clone().with_labels(vec![1]).is_err());
        assert!(d.with_domains(vec![1, 2]).is_ok());
    }
}
