//! Line-delimited JSON datasets and training histories.
//!
//! One record per line: `{"pair_id": "...", "class": "...", "vision": [...], "language": [...]}`.
//! `class` may be absent. Blank lines are ignored.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use xmodal_core::{Dataset, EpochRecord, PairRecord};

use crate::error::{Error, Result};

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_dataset(reader: impl BufRead) -> Result<Dataset> {
    let mut records: Vec<PairRecord> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let (dv, dl) = match records.first() {
            Some(first) => (first.vision.len(), first.language.len()),
            None => (rec.vision.len(), rec.language.len()),
        };
        Dataset::check_record(&rec, dv, dl).map_err(|source| Error::Record {
            line: line_no,
            source,
        })?;
        if !seen.insert(rec.pair_id.clone()) {
            return Err(Error::Record {
                line: line_no,
                source: xmodal_core::Error::DuplicatePairId(rec.pair_id),
            });
        }
        records.push(rec);
    }
    Ok(Dataset::new(records)?)
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, ds)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_dataset(w: &mut impl Write, ds: &Dataset) -> std::io::Result<()> {
    for rec in ds.records() {
        serde_json::to_writer(&mut *w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// The canonical serialization of a dataset, as written by [`write_dataset`].
pub fn dataset_bytes(ds: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, ds).expect("writing to memory cannot fail");
    buf
}

pub fn save_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for rec in history {
        serde_json::to_writer(&mut buf, rec).expect("epoch records serialize");
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

pub fn load_history(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let text = read_file(path.as_ref())?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, class: Option<&str>, v: Vec<f64>, l: Vec<f64>) -> PairRecord {
        PairRecord {
            pair_id: id.into(),
            class_label: class.map(Into::into),
            vision: v,
            language: l,
        }
    }

    #[test]
    fn reads_two_records() {
        let text =
            "{\"pair_id\":\"a\",\"class\":\"mug\",\"vision\":[1,2,3,4],\"language\":[0.5,0,1]}\n\
                    {\"pair_id\":\"b\",\"vision\":[0,0,0,1],\"language\":[1,1,1]}\n";
        let ds = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!((ds.dim_vision(), ds.dim_language()), (4, 3));
        assert_eq!(ds.records()[0].class_label.as_deref(), Some("mug"));
        assert_eq!(ds.records()[1].class_label, None);
    }

    #[test]
    fn dimension_mismatch_names_line() {
        let text = "{\"pair_id\":\"a\",\"vision\":[1,2,3,4],\"language\":[1,2,3]}\n\
                    {\"pair_id\":\"b\",\"vision\":[1,2,3,4,5],\"language\":[1,2,3]}\n";
        let err = read_dataset(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Record { line: 2, .. }), "{err}");
        assert!(err.to_string().starts_with("line 2:"));
    }

    #[test]
    fn malformed_line_is_reported() {
        let text = "{\"pair_id\":\"a\",\"vision\":[1],\"language\":[1]}\n\nnot json\n";
        assert!(matches!(
            read_dataset(text.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn duplicate_and_empty() {
        let text = "{\"pair_id\":\"a\",\"vision\":[1],\"language\":[1]}\n{\"pair_id\":\"a\",\"vision\":[2],\"language\":[2]}\n";
        assert!(matches!(
            read_dataset(text.as_bytes()),
            Err(Error::Record { line: 2, .. })
        ));
        assert!(matches!(
            read_dataset("".as_bytes()),
            Err(Error::Core(xmodal_core::Error::EmptyDataset))
        ));
    }

    #[test]
    fn awkward_floats_survive_round_trip() {
        let values = vec![
            0.1,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            5e-324,
            -1.7976931348623157e308,
            123456789.12345679,
        ];
        let ds = Dataset::new(vec![rec("x", Some("c"), values.clone(), values.clone())]).unwrap();
        let back = read_dataset(dataset_bytes(&ds).as_slice()).unwrap();
        for (a, b) in back.records()[0].vision.iter().zip(&values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
