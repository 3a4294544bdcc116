use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::{validate_record, ImageRecord};
use crate::error::{PriseError, Result};

pub const FORMAT_NAME: &str = "prise-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    /// Feature dimension.
    pub f: usize,
    /// Relation classes.
    pub c: usize,
    /// Latent scene types of the generator (informational for real data).
    pub s: usize,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub f: usize,
    pub c: usize,
    pub s: usize,
    pub records: Vec<ImageRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize)]
pub struct DatasetSummary {
    pub images: usize,
    pub labelled_pairs: usize,
    pub class_counts: Vec<usize>,
    /// persons-per-image → image count
    pub person_histogram: BTreeMap<usize, usize>,
}

impl Dataset {
    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            f: self.f,
            c: self.c,
            s: self.s,
            records: self.records.len(),
        }
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut s = DatasetSummary {
            images: self.records.len(),
            class_counts: vec![0; self.c],
            ..Default::default()
        };
        for r in &self.records {
            *s.person_histogram.entry(r.n_persons).or_default() += 1;
            for l in &r.pair_labels {
                s.labelled_pairs += 1;
                if let Some(c) = s.class_counts.get_mut(l.class) {
                    *c += 1;
                }
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.records
            .iter()
            .try_for_each(|r| validate_record(r, self.f, self.c))
    }
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let io = |e| PriseError::io(path, e);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
        let line = serde_json::to_string(&dataset.header()).expect("header serializes");
        writeln!(w, "{line}").map_err(io)?;
        for r in &dataset.records {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}

/// Reads and validates a dataset file. Errors carry the 1-based line number.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| PriseError::io(path, e))?;
    let parse = |line: usize, message: String| PriseError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| PriseError::io(path, e))?,
        None => return Err(parse(1, "empty file: missing header".into())),
    };
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| parse(1, format!("bad header: {e}")))?;
    if header.format != FORMAT_NAME {
        return Err(parse(1, format!("unknown format `{}`", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(parse(1, format!("unsupported version {}", header.version)));
    }

    let mut records = Vec::with_capacity(header.records);
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let line = line.map_err(|e| PriseError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ImageRecord =
            serde_json::from_str(&line).map_err(|e| parse(lineno, e.to_string()))?;
        validate_record(&record, header.f, header.c)?;
        records.push(record);
    }
    if records.len() != header.records {
        return Err(parse(
            records.len() + 2,
            format!(
                "unexpected end of file: header declares {} records, found {}",
                header.records,
                records.len()
            ),
        ));
    }
    let dataset = Dataset {
        f: header.f,
        c: header.c,
        s: header.s,
        records,
    };
    let summary = dataset.summary();
    log::info!(
        "loaded {}: {} images, {} labelled pairs, classes {:?}, persons {:?}",
        path.display(),
        summary.images,
        summary.labelled_pairs,
        summary.class_counts,
        summary.person_histogram
    );
    Ok(dataset)
}
