use std::fs::File;
use std::path::Path;

use super::{DataError, Dataset, Sample};

/// Which CSV columns hold the subject, the severity and the features.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvSchema {
    pub subject_column: String,
    pub severity_column: String,
    /// Feature columns, in the order they become vector entries.
    pub feature_columns: Vec<String>,
    pub max_severity: u8,
}

impl CsvSchema {
    /// `subject_id,severity,f0..f{dim-1}`.
    pub fn standard(dim: usize, max_severity: u8) -> Self {
        Self {
            subject_column: "subject_id".into(),
            severity_column: "severity".into(),
            feature_columns: (0..dim).map(|i| format!("f{i}")).collect(),
            max_severity,
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn parse_cell<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    row: usize,
    name: &str,
) -> Result<T, DataError> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| DataError::NonNumeric {
        row,
        column: name.to_string(),
        value: raw.to_string(),
    })
}

/// Reads a headed CSV. Row indices in errors count data rows from 0.
pub fn import_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let subject = column(&headers, &schema.subject_column)?;
    let severity = column(&headers, &schema.severity_column)?;
    let features = schema
        .feature_columns
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut samples = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(DataError::Ragged {
                row,
                expected: headers.len(),
                found: rec.len(),
            });
        }
        let subject_id: u32 = parse_cell(&rec, subject, row, &schema.subject_column)?;
        let sev: i64 = parse_cell(&rec, severity, row, &schema.severity_column)?;
        if sev < 0 || sev > i64::from(schema.max_severity) {
            return Err(DataError::SeverityOutOfRange {
                row,
                value: sev,
                max: schema.max_severity,
            });
        }
        let values = features
            .iter()
            .zip(&schema.feature_columns)
            .map(|(&i, name)| parse_cell::<f32>(&rec, i, row, name))
            .collect::<Result<Vec<_>, _>>()?;
        samples.push(Sample {
            features: values,
            severity: sev as u8,
            subject_id,
        });
    }
    Dataset::new(schema.feature_columns.len(), schema.max_severity, samples)
}

/// Writes `subject_id,severity,f0..` with shortest round-trip float formatting.
pub fn export_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["subject_id".to_string(), "severity".to_string()];
    header.extend((0..ds.dim()).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for s in ds.samples() {
        let mut rec = vec![s.subject_id.to_string(), s.severity.to_string()];
        rec.extend(s.features.iter().map(f32::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GenConfig};
    use std::fs;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("in.csv");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "subject_id,severity,f0,f1\n1,0,0.5,1\n1,0,0.25,2\n2,3,-1,0\n");
        let ds = import_csv(&p, &CsvSchema::standard(2, 5)).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.samples()[2].features, vec![-1.0, 0.0]);
        assert_eq!(ds.samples()[2].severity, 3);
    }

    #[test]
    fn declared_feature_order_and_extra_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "b,sev,note,a,sid\n2,1,x,1,9\n");
        let schema = CsvSchema {
            subject_column: "sid".into(),
            severity_column: "sev".into(),
            feature_columns: vec!["a".into(), "b".into()],
            max_severity: 1,
        };
        let ds = import_csv(&p, &schema).unwrap();
        assert_eq!(ds.samples()[0].features, vec![1.0, 2.0]);
        assert_eq!(ds.samples()[0].subject_id, 9);
    }

    #[test]
    fn errors_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let schema = CsvSchema::standard(2, 5);
        let p = write(&dir, "subject_id,severity,f0,f1\n1,0,0,0\n1,7,0,0\n");
        assert!(matches!(
            import_csv(&p, &schema),
            Err(DataError::SeverityOutOfRange { row: 1, value: 7, max: 5 })
        ));
        let p = write(&dir, "subject_id,severity,f0,f1\n1,0,abc,0\n");
        assert!(matches!(import_csv(&p, &schema), Err(DataError::NonNumeric { row: 0, .. })));
        let p = write(&dir, "subject_id,severity,f0\n1,0,0\n");
        assert!(matches!(import_csv(&p, &schema), Err(DataError::MissingColumn(c)) if c == "f1"));
        let p = write(&dir, "subject_id,severity,f0,f1\n1,0,0,0\n1,0,0\n");
        assert!(matches!(
            import_csv(&p, &schema),
            Err(DataError::Ragged { row: 1, expected: 4, found: 3 })
        ));
    }

    #[test]
    fn export_import_round_trip() {
        let ds = generate_synthetic(&GenConfig {
            subjects_per_class: 2,
            ..GenConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        export_csv(&ds, &p).unwrap();
        let back = import_csv(&p, &CsvSchema::standard(ds.dim(), ds.max_severity())).unwrap();
        assert_eq!(back, ds);
    }
}
