//! Append-only CSV writer.
//!
//! The file is opened in append mode and never truncated. The header is
//! written once, when the file is created (or found empty); later rows must
//! match it. Format details live in `docs/csv.md`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};

use super::SinkError;
use crate::datatree::DataTree;
use crate::dsp::BandSpec;
use crate::wire::ChannelLayout;

pub const TIMESTAMP_COLUMN: &str = "timestamp";

/// `ch{i}_b{j}` names for a depth-1 tree; deeper paths join their indices
/// with `_` (`p0_2_v1`).
pub fn generic_column_names(tree: &DataTree) -> Vec<String> {
    let mut names = Vec::with_capacity(tree.len());
    for (path, values) in tree.branches() {
        let idx = path.indices();
        for j in 0..values.len() {
            if idx.len() == 1 {
                names.push(format!("ch{}_b{j}", idx[0]));
            } else {
                let p: Vec<String> = idx.iter().map(u32::to_string).collect();
                names.push(format!("p{}_v{j}", p.join("_")));
            }
        }
    }
    names
}

/// `{electrode}_{band}` names, channel-major.
pub fn layout_column_names(layout: &ChannelLayout, bands: &[BandSpec]) -> Vec<String> {
    layout
        .names()
        .iter()
        .flat_map(|ch| bands.iter().map(move |b| format!("{ch}_{}", b.name)))
        .collect()
}

/// ISO-8601 UTC with milliseconds, e.g. `2024-05-01T12:00:00.250Z`.
pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
}

/// Shortest decimal that round-trips to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

pub struct CsvAppender {
    path: PathBuf,
    with_timestamp: bool,
    names: Option<Vec<String>>,
    header: Option<Vec<String>>,
    rows_written: u64,
    rejected: u64,
}

impl CsvAppender {
    /// `names` fixes the value columns; when `None` they are derived from
    /// the first tree.
    pub fn open(
        path: impl AsRef<Path>,
        with_timestamp: bool,
        names: Option<Vec<String>>,
    ) -> Result<Self, SinkError> {
        let path = path.as_ref().to_path_buf();
        let header = read_header(&path)?;
        Ok(CsvAppender {
            path,
            with_timestamp,
            names,
            header,
            rows_written: 0,
            rejected: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> Option<&[String]> {
        self.header.as_deref()
    }

    pub fn rows_written(&self) -> u64 {
        self.rows_written
    }

    /// Rows refused because their shape disagreed with the header.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    fn expected_header(&self, names: &[String]) -> Vec<String> {
        let mut h = Vec::with_capacity(names.len() + 1);
        if self.with_timestamp {
            h.push(TIMESTAMP_COLUMN.to_string());
        }
        h.extend_from_slice(names);
        h
    }

    /// Appends `flatten(tree)` as one row, stamped with the current time if enabled.
    pub fn append(&mut self, tree: &DataTree) -> Result<(), SinkError> {
        let names = match &self.names {
            Some(n) => n.clone(),
            None => generic_column_names(tree),
        };
        self.append_row(&names, &tree.flatten(), Utc::now())
    }

    /// Appends an explicit row of values under `names`.
    pub fn append_row(
        &mut self,
        names: &[String],
        values: &[f64],
        now: DateTime<Utc>,
    ) -> Result<(), SinkError> {
        let result = self.try_append(names, values, now);
        if matches!(
            result,
            Err(SinkError::ShapeMismatch { .. } | SinkError::HeaderMismatch { .. })
        ) {
            self.rejected += 1;
        }
        result
    }

    fn try_append(
        &mut self,
        names: &[String],
        values: &[f64],
        now: DateTime<Utc>,
    ) -> Result<(), SinkError> {
        let ts_cols = usize::from(self.with_timestamp);
        if let Some(h) = &self.header {
            if values.len() + ts_cols != h.len() || names.len() != values.len() {
                return Err(SinkError::ShapeMismatch {
                    expected: h.len(),
                    actual: values.len() + ts_cols,
                });
            }
            let want = self.expected_header(names);
            if &want != h {
                return Err(SinkError::HeaderMismatch {
                    expected: want,
                    found: h.clone(),
                });
            }
        } else if names.len() != values.len() || values.is_empty() {
            return Err(SinkError::ShapeMismatch {
                expected: names.len(),
                actual: values.len(),
            });
        }

        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        let mut out = String::new();
        if self.header.is_none() {
            let h = self.expected_header(names);
            out.push_str(&h.join(","));
            out.push('\n');
            self.header = Some(h);
        }
        if self.with_timestamp {
            out.push_str(&format_timestamp(now));
            out.push(',');
        }
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format_value(*v));
        }
        out.push('\n');
        file.write_all(out.as_bytes())?;
        self.rows_written += 1;
        Ok(())
    }
}

fn read_header(path: &Path) -> Result<Option<Vec<String>>, SinkError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut line = String::new();
    BufReader::new(file).read_line(&mut line)?;
    let line = line.trim_end_matches(['\n', '\r']);
    if line.is_empty() {
        return Ok(None);
    }
    Ok(Some(line.split(',').map(str::to_string).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree16x5(offset: f64) -> DataTree {
        let rows: Vec<Vec<f64>> = (0..16)
            .map(|c| (0..5).map(|b| offset + (c * 5 + b) as f64).collect())
            .collect();
        DataTree::from_matrix(&rows).unwrap()
    }

    #[test]
    fn two_appends_give_header_and_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        for (ts, width) in [(false, 80), (true, 81)] {
            let path = dir.path().join(format!("log_{ts}.csv"));
            let mut w = CsvAppender::open(&path, ts, None).unwrap();
            w.append(&tree16x5(0.0)).unwrap();
            w.append(&tree16x5(0.5)).unwrap();
            let text = std::fs::read_to_string(&path).unwrap();
            let lines: Vec<&str> = text.lines().collect();
            assert_eq!(lines.len(), 3);
            assert!(lines.iter().all(|l| l.split(',').count() == width));
            assert!(text.ends_with('\n') && !text.contains('\r'));
            if ts {
                assert!(lines[0].starts_with("timestamp,ch0_b0,ch0_b1"));
                assert!(lines[0].ends_with("ch15_b4"));
                assert_eq!(lines[1].split(',').next().unwrap().len(), 24);
            } else {
                assert!(lines[0].starts_with("ch0_b0,"));
            }
        }
    }

    #[test]
    fn reopening_preserves_prior_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut w = CsvAppender::open(&path, false, None).unwrap();
        w.append(&tree16x5(0.0)).unwrap();
        let before = std::fs::read_to_string(&path).unwrap();
        let mut w2 = CsvAppender::open(&path, false, None).unwrap();
        assert_eq!(w2.header().unwrap().len(), 80);
        w2.append(&tree16x5(1.0)).unwrap();
        let after = std::fs::read_to_string(&path).unwrap();
        assert!(after.starts_with(&before));
        assert_eq!(after.lines().count(), 3);
    }

    #[test]
    fn shape_mismatch_is_refused_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut w = CsvAppender::open(&path, false, None).unwrap();
        w.append(&tree16x5(0.0)).unwrap();
        let small = DataTree::from_matrix(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(w.append(&small), Err(SinkError::ShapeMismatch { .. })));
        assert!(matches!(w.append(&DataTree::new()), Err(SinkError::ShapeMismatch { .. })));
        assert_eq!(w.rejected(), 2);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    #[test]
    fn header_names_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        let mut w = CsvAppender::open(&path, false, None).unwrap();
        let t = DataTree::from_matrix(&[vec![3.0, 4.0]]).unwrap();
        assert!(matches!(w.append(&t), Err(SinkError::HeaderMismatch { .. })));
        let mut named = CsvAppender::open(&path, false, Some(vec!["a".into(), "b".into()])).unwrap();
        named.append(&t).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,2\n3,4\n");
    }

    #[test]
    fn names_and_formats() {
        let layout = ChannelLayout::default();
        let names = layout_column_names(&layout, &crate::dsp::default_bands());
        assert_eq!(names.len(), 80);
        assert_eq!(names[0], "Fp1_delta");
        assert_eq!(names[79], "P4_gamma");
        assert_eq!(format_value(0.1), "0.1");
        assert_eq!(format_value(2.0), "2");
        let ts = DateTime::from_timestamp_millis(1_700_000_000_250).unwrap();
        assert_eq!(format_timestamp(ts), "2023-11-14T22:13:20.250Z");
    }
}
