//! `.cpds` binary dataset files.
//!
//! Layout, all little-endian with no padding: magic `CPDS`, version `u32`,
//! `D` `u32`, `K` `u32`, sample count `u64`, then per sample `subject_id`
//! `u32`, `severity` `u8` and `D` `f32` features.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, Dataset, Sample};

pub const CPDS_MAGIC: [u8; 4] = *b"CPDS";
pub const CPDS_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<(), DataError> {
    if ds.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let dim = u32::try_from(ds.dim())
        .map_err(|_| DataError::InvalidConfig("dimension exceeds u32".into()))?;
    let mut buf = Vec::with_capacity(24 + ds.len() * (5 + 4 * ds.dim()));
    buf.extend_from_slice(&CPDS_MAGIC);
    buf.extend_from_slice(&CPDS_VERSION.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(&u32::from(ds.max_severity()).to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for s in ds.samples() {
        buf.extend_from_slice(&s.subject_id.to_le_bytes());
        buf.push(s.severity);
        for v in &s.features {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err(Path::new("<writer>")))?;
    w.flush().map_err(io_err(Path::new("<writer>")))
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    if ds.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let file = File::create(path).map_err(io_err(path))?;
    write_dataset(ds, BufWriter::new(file)).map_err(|e| match e {
        DataError::Io { source, .. } => DataError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            DataError::Truncated(format!("{what} at byte {} needs {n} bytes", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset, DataError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(io_err(Path::new("<reader>")))?;
    parse(&bytes)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io_err(path))?)
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<Dataset, DataError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != CPDS_MAGIC {
        return Err(DataError::BadMagic {
            expected: String::from_utf8_lossy(&CPDS_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = c.u32("version")?;
    if version != CPDS_VERSION {
        return Err(DataError::UnsupportedVersion {
            expected: CPDS_VERSION,
            found: version,
        });
    }
    let dim = c.u32("dimension")? as usize;
    let k = c.u32("max severity")?;
    let max_severity = u8::try_from(k)
        .map_err(|_| DataError::Inconsistent(format!("max severity {k} exceeds 255")))?;
    let count = c.u64("sample count")?;
    let record = 5 + 4 * dim as u64;
    let remaining = (bytes.len() - c.pos) as u64;
    let expected = count.checked_mul(record);
    match expected {
        Some(e) if e == remaining => {}
        Some(e) if e > remaining => {
            return Err(DataError::Truncated(format!(
                "{count} samples need {e} bytes, {remaining} present"
            )))
        }
        Some(e) => {
            return Err(DataError::Inconsistent(format!(
                "{} trailing bytes after {count} samples",
                remaining - e
            )))
        }
        None => return Err(DataError::Truncated(format!("sample count {count} is implausible"))),
    }

    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let subject_id = c.u32("subject id")?;
        let severity = c.take(1, "severity")?[0];
        let features = c
            .take(4 * dim, "features")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        samples.push(Sample {
            features,
            severity,
            subject_id,
        });
    }
    Dataset::new(dim, max_severity, samples).map_err(|e| DataError::Inconsistent(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GenConfig};

    fn small() -> Dataset {
        generate_synthetic(&GenConfig {
            subjects_per_class: 2,
            dim: 4,
            ..GenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = small();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(buf.len(), 24 + ds.len() * (5 + 16));
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.cpds");
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn header_layout() {
        let ds = Dataset::new(
            2,
            3,
            vec![Sample {
                features: vec![1.0, -0.5],
                severity: 2,
                subject_id: 7,
            }],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let mut want = b"CPDS".to_vec();
        for v in [1u32, 2, 3] {
            want.extend_from_slice(&v.to_le_bytes());
        }
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&7u32.to_le_bytes());
        want.push(2);
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-0.5f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn corrupt_files() {
        let ds = small();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        let err = read_dataset(bad.as_slice()).unwrap_err();
        assert!(matches!(err, DataError::BadMagic { .. }));
        assert!(err.to_string().contains("CPDS"));

        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(
            read_dataset(bad.as_slice()),
            Err(DataError::UnsupportedVersion { found: 2, .. })
        ));

        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_dataset(short), Err(DataError::Truncated(_))));
        assert!(matches!(read_dataset(&buf[..10]), Err(DataError::Truncated(_))));

        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_dataset(long.as_slice()), Err(DataError::Inconsistent(_))));

        let mut big_count = buf.clone();
        big_count[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(read_dataset(big_count.as_slice()), Err(DataError::Truncated(_))));
    }

    #[test]
    fn refuses_empty() {
        let empty = Dataset::new(3, 2, vec![]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            save_dataset(&empty, dir.path().join("e.cpds")),
            Err(DataError::EmptyDataset)
        ));
    }
}
