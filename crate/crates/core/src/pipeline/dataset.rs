//! Labelled text datasets in csv, tsv or jsonl form.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textgraph::{Corpus, Document};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub text: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Tsv,
    Jsonl,
}

impl DataFormat {
    /// Guesses from the file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        ext.parse().map_err(|_| {
            Error::Config(format!(
                "cannot infer the format of {} (use .csv, .tsv or .jsonl)",
                path.display()
            ))
        })
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "tsv" => Ok(DataFormat::Tsv),
            "jsonl" | "json" => Ok(DataFormat::Jsonl),
            other => Err(Error::Config(format!("unknown data format {other:?}"))),
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::Csv => "csv",
            DataFormat::Tsv => "tsv",
            DataFormat::Jsonl => "jsonl",
        })
    }
}

/// Records plus the label list in first-occurrence order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub labels: Vec<String>,
}

impl Dataset {
    pub fn new(records: Vec<DatasetRecord>) -> Self {
        let mut labels: Vec<String> = Vec::new();
        for r in &records {
            if !labels.contains(&r.label) {
                labels.push(r.label.clone());
            }
        }
        Dataset { records, labels }
    }

    /// Keeps a given label order; every record label must appear in it.
    pub fn with_labels(records: Vec<DatasetRecord>, labels: Vec<String>) -> Result<Self> {
        for r in &records {
            if !labels.contains(&r.label) {
                return Err(Error::Input(format!("label {:?} is not in the label map", r.label)));
            }
        }
        Ok(Dataset { records, labels })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn targets(&self) -> Vec<usize> {
        self.records
            .iter()
            .map(|r| self.label_index(&r.label).expect("record label in map"))
            .collect()
    }

    /// Graph corpus over the records, with document ids `doc0`, `doc1`, ...
    pub fn corpus(&self) -> Result<Corpus> {
        Corpus::new(
            self.records
                .iter()
                .enumerate()
                .map(|(i, r)| Document::new(format!("doc{i}"), &r.text, r.label.clone(), r.user_id.clone()))
                .collect(),
        )
    }

    /// Per-label seeded shuffle, then the first `train_fraction` of each
    /// label goes to the training half. Both halves keep the label list.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0 < train_fraction && train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
        }
        let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, t) in self.targets().into_iter().enumerate() {
            by_label.entry(t).or_default().push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (_, mut idx) in by_label {
            idx.shuffle(&mut rng);
            let cut = ((idx.len() as f64) * train_fraction).round() as usize;
            let cut = cut.clamp(1.min(idx.len()), idx.len());
            train.extend_from_slice(&idx[..cut]);
            val.extend_from_slice(&idx[cut..]);
        }
        train.sort_unstable();
        val.sort_unstable();
        let pick = |idx: &[usize]| Dataset {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            labels: self.labels.clone(),
        };
        Ok((pick(&train), pick(&val)))
    }

    pub fn to_delimited(&self, delimiter: u8) -> Result<String> {
        let with_users = self.records.iter().any(|r| r.user_id.is_some());
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(Vec::new());
        let mut header = vec!["text", "label"];
        if with_users {
            header.push("user_id");
        }
        let io = |e: csv::Error| Error::Input(format!("csv write failed: {e}"));
        w.write_record(&header).map_err(io)?;
        for r in &self.records {
            let mut row = vec![r.text.as_str(), r.label.as_str()];
            if with_users {
                row.push(r.user_id.as_deref().unwrap_or(""));
            }
            w.write_record(&row).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(format!("csv write failed: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serialises"));
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path, format: DataFormat) -> Result<()> {
        let body = match format {
            DataFormat::Csv => self.to_delimited(b',')?,
            DataFormat::Tsv => self.to_delimited(b'\t')?,
            DataFormat::Jsonl => self.to_jsonl(),
        };
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

fn parse_error(origin: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_path_buf(),
        line: line as usize,
        msg: msg.into(),
    }
}

fn check_record(origin: &Path, line: u64, text: Option<String>, label: Option<String>, user: Option<String>) -> Result<DatasetRecord> {
    let text = text.filter(|t| !t.trim().is_empty()).ok_or_else(|| parse_error(origin, line, "missing text"))?;
    let label = label
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .ok_or_else(|| parse_error(origin, line, "missing label"))?;
    let user_id = user.map(|u| u.trim().to_string()).filter(|u| !u.is_empty());
    Ok(DatasetRecord { text, label, user_id })
}

fn parse_delimited(text: &str, delimiter: u8, origin: &Path) -> Result<Vec<DatasetRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_error(origin, 1, format!("unreadable header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let text_col = col("text").ok_or_else(|| parse_error(origin, 1, "header has no text column"))?;
    let label_col = col("label").ok_or_else(|| parse_error(origin, 1, "header has no label column"))?;
    let user_col = col("user_id");
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(origin, line, format!("malformed row: {e}"))
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let get = |i: usize| row.get(i).map(str::to_string);
        out.push(check_record(origin, line, get(text_col), get(label_col), user_col.and_then(get))?);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct JsonRecord {
    text: Option<String>,
    label: Option<serde_json::Value>,
    user_id: Option<serde_json::Value>,
}

fn json_scalar(v: Option<serde_json::Value>) -> Option<String> {
    match v? {
        serde_json::Value::String(s) => Some(s),
        serde_json::Value::Null => None,
        other => Some(other.to_string()),
    }
}

fn parse_jsonl(text: &str, origin: &Path) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let r: JsonRecord =
            serde_json::from_str(line).map_err(|e| parse_error(origin, n, format!("malformed json: {e}")))?;
        out.push(check_record(origin, n, r.text, json_scalar(r.label), json_scalar(r.user_id))?);
    }
    Ok(out)
}

pub fn parse_dataset(text: &str, format: DataFormat, origin: &Path) -> Result<Dataset> {
    let records = match format {
        DataFormat::Csv => parse_delimited(text, b',', origin)?,
        DataFormat::Tsv => parse_delimited(text, b'\t', origin)?,
        DataFormat::Jsonl => parse_jsonl(text, origin)?,
    };
    Ok(Dataset::new(records))
}

pub fn load_dataset(path: &Path, format: Option<DataFormat>) -> Result<Dataset> {
    let format = match format {
        Some(f) => f,
        None => DataFormat::from_path(path)?,
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, format, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn csv_with_header() {
        let d = parse_dataset(
            "text,label,user_id\nhello there,neutral,u1\n\"you, idiot\",abusive,u2\nnice day,neutral,\n",
            DataFormat::Csv,
            origin(),
        )
        .unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.labels, ["neutral", "abusive"]);
        assert_eq!(d.records[1].text, "you, idiot");
        assert_eq!(d.records[2].user_id, None);
    }

    #[test]
    fn tsv_without_user_column() {
        let d = parse_dataset("label\ttext\nb\tsecond\na\tfirst\n", DataFormat::Tsv, origin()).unwrap();
        assert_eq!(d.labels, ["b", "a"]);
        assert!(d.records.iter().all(|r| r.user_id.is_none()));
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_dataset("text,label\nok,a\n,b\n", DataFormat::Csv, origin()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse_dataset("text,label\nok,a\nbad,a,extra\n", DataFormat::Csv, origin()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse_dataset("words,label\nok,a\n", DataFormat::Csv, origin()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }), "{e}");
        let e = parse_dataset("{\"text\":\"a\",\"label\":\"x\"}\n{\"text\":\"b\"}\n", DataFormat::Jsonl, origin())
            .unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
    }

    #[test]
    fn jsonl_round_trip() {
        let d = Dataset::new(vec![
            DatasetRecord {
                text: "a \"quoted\" b".into(),
                label: "x".into(),
                user_id: Some("u".into()),
            },
            DatasetRecord {
                text: "c".into(),
                label: "y".into(),
                user_id: None,
            },
        ]);
        assert_eq!(parse_dataset(&d.to_jsonl(), DataFormat::Jsonl, origin()).unwrap(), d);
        assert_eq!(parse_dataset(&d.to_delimited(b'\t').unwrap(), DataFormat::Tsv, origin()).unwrap(), d);
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let records = (0..40)
            .map(|i| DatasetRecord {
                text: format!("t{i}"),
                label: if i % 4 == 0 { "a".into() } else { "b".into() },
                user_id: None,
            })
            .collect();
        let d = Dataset::new(records);
        let (tr, va) = d.split(0.9, 3).unwrap();
        assert_eq!(tr.len() + va.len(), 40);
        assert_eq!(tr.records.iter().filter(|r| r.label == "a").count(), 9);
        assert_eq!(d.split(0.9, 3).unwrap(), (tr, va));
        assert!(d.split(1.0, 0).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_dataset(Path::new("/nonexistent/x.csv"), None),
            Err(Error::Io { .. })
        ));
        assert!(load_dataset(Path::new("x.xlsx"), None).is_err());
    }
}
