//! Dataset loading, categorical encoding, and the availability-masking
//! simulator that turns a dense table into a haphazard stream.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_space::{FeatureId, FeatureSpaceError, HaphazardInstance};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: String, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("encoding error in column {column}: cannot encode {value:?} as {scheme:?}")]
    Encoding { column: String, value: String, scheme: CategoricalScheme },
    #[error("invalid mask probability {0}")]
    InvalidProbability(f64),
    #[error(transparent)]
    Instance(#[from] FeatureSpaceError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StreamError + '_ {
    move |source| StreamError::Io { path: path.to_path_buf(), source }
}

/// A dense table: `None` marks a value that is already missing in the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: Vec<Vec<Option<f64>>>,
    pub labels: Vec<u8>,
    pub feature_names: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub encodings: Vec<(String, CategoricalScheme)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    /// Keep the first `n` rows.
    pub fn truncate(&mut self, n: usize) {
        self.rows.truncate(n);
        self.labels.truncate(n);
    }

    /// The dataset as-is: presence equals non-missingness.
    pub fn to_stream(&self) -> Result<HaphazardStream, StreamError> {
        self.rows
            .iter()
            .zip(&self.labels)
            .enumerate()
            .map(|(t, (row, &y))| {
                let x = row
                    .iter()
                    .enumerate()
                    .filter_map(|(j, v)| v.map(|v| (FeatureId(j as u32), v)))
                    .collect();
                Ok(HaphazardInstance::new(t as u64, x, y)?)
            })
            .collect::<Result<Vec<_>, StreamError>>()
            .map(HaphazardStream)
    }
}

/// Table as read from disk before numeric parsing; categorical columns are
/// encoded at this stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
    pub labels: Vec<u8>,
    pub source: String,
    pub encodings: Vec<(String, CategoricalScheme)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalScheme {
    /// 1..K in order of first appearance.
    IntegerCodes,
    /// `[a,b]` or `[a-b)` style interval strings replaced by their midpoint.
    BracketMedian,
}

impl std::str::FromStr for CategoricalScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "integer_codes" | "codes" => Ok(Self::IntegerCodes),
            "bracket_median" | "median" => Ok(Self::BracketMedian),
            other => Err(format!("unknown categorical scheme {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
    Last,
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
    pub label_column: LabelColumn,
    pub missing_markers: Vec<String>,
    pub categorical: Vec<(String, CategoricalScheme)>,
    /// Stop after this many data rows.
    pub max_rows: Option<usize>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: true,
            label_column: LabelColumn::Last,
            missing_markers: vec!["?".into(), "".into(), "nan".into(), "NaN".into(), "NA".into()],
            categorical: Vec::new(),
            max_rows: None,
        }
    }
}

fn parse_label(raw: &str, row: usize, column: &str) -> Result<u8, StreamError> {
    let trimmed = raw.trim();
    let value: f64 = trimmed.parse().map_err(|_| StreamError::Parse {
        row,
        column: column.to_owned(),
        message: format!("label {trimmed:?} is not numeric"),
    })?;
    if value == 1.0 {
        Ok(1)
    } else if value == 0.0 || value == -1.0 {
        Ok(0)
    } else {
        Err(StreamError::Parse {
            row,
            column: column.to_owned(),
            message: format!("label {trimmed:?} is not in {{-1,0,1}}"),
        })
    }
}

impl RawDataset {
    pub fn read_csv(path: &Path, opts: &CsvOptions) -> Result<Self, StreamError> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(opts.delimiter)
            .has_headers(false)
            .flexible(true)
            .from_reader(BufReader::new(file));
        let mut records = reader.records();
        let mut header: Option<Vec<String>> = None;
        if opts.has_header {
            match records.next() {
                Some(rec) => {
                    let rec = rec.map_err(|e| StreamError::Format(e.to_string()))?;
                    header = Some(rec.iter().map(|s| s.trim().to_owned()).collect());
                }
                None => return Err(StreamError::Format("empty file".into())),
            }
        }
        let mut cells: Vec<Vec<String>> = Vec::new();
        for rec in records {
            if opts.max_rows.is_some_and(|m| cells.len() >= m) {
                break;
            }
            let rec = rec.map_err(|e| StreamError::Format(e.to_string()))?;
            if rec.len() == 1 && rec[0].trim().is_empty() {
                continue;
            }
            cells.push(rec.iter().map(|s| s.trim().to_owned()).collect());
        }
        let width = match (&header, cells.first()) {
            (Some(h), _) => h.len(),
            (None, Some(r)) => r.len(),
            (None, None) => return Err(StreamError::Format("no data rows".into())),
        };
        let header = header.unwrap_or_else(|| (0..width).map(|i| format!("c{i}")).collect());
        for (i, row) in cells.iter().enumerate() {
            if row.len() != width {
                return Err(StreamError::Format(format!(
                    "row {} has {} cells, expected {width}",
                    i + 1,
                    row.len()
                )));
            }
        }
        let label_idx = match &opts.label_column {
            LabelColumn::Name(name) => header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| StreamError::Format(format!("label column {name:?} not found")))?,
            LabelColumn::Index(i) if *i < width => *i,
            LabelColumn::Index(i) => {
                return Err(StreamError::Format(format!("label column index {i} out of range")))
            }
            LabelColumn::Last => width
                .checked_sub(1)
                .ok_or_else(|| StreamError::Format("no columns".into()))?,
        };
        let label_name = header[label_idx].clone();
        let mut rows = Vec::with_capacity(cells.len());
        let mut labels = Vec::with_capacity(cells.len());
        for (i, row) in cells.into_iter().enumerate() {
            labels.push(parse_label(&row[label_idx], i + 1, &label_name)?);
            rows.push(
                row.into_iter()
                    .enumerate()
                    .filter(|&(j, _)| j != label_idx)
                    .map(|(_, cell)| (!opts.missing_markers.contains(&cell)).then_some(cell))
                    .collect(),
            );
        }
        let header = header
            .into_iter()
            .enumerate()
            .filter(|&(j, _)| j != label_idx)
            .map(|(_, h)| h)
            .collect();
        Ok(Self { header, rows, labels, source: path.display().to_string(), encodings: Vec::new() })
    }

    pub fn into_dataset(self) -> Result<Dataset, StreamError> {
        let header = self.header;
        let rows = self
            .rows
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(j, cell)| match cell {
                        None => Ok(None),
                        Some(s) => match s.parse::<f64>() {
                            Ok(v) if v.is_finite() => Ok(Some(v)),
                            _ => Err(StreamError::Parse {
                                row: i + 1,
                                column: header[j].clone(),
                                message: format!("{s:?} is not a finite number"),
                            }),
                        },
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset {
            rows,
            labels: self.labels,
            feature_names: header,
            provenance: Provenance { source: self.source, encodings: self.encodings },
        })
    }
}

fn bracket_midpoint(s: &str) -> Option<f64> {
    let inner = s.trim();
    let inner = inner.strip_prefix(['[', '('])?;
    let inner = inner.strip_suffix([']', ')'])?;
    // "[10,20]" and the "[10-20)" form used in some sources
    let (a, b) = match inner.split_once(',') {
        Some(pair) => pair,
        None => {
            let k = inner.get(1..)?.find('-')? + 1;
            (&inner[..k], &inner[k + 1..])
        }
    };
    let a: f64 = a.trim().parse().ok()?;
    let b: f64 = b.trim().parse().ok()?;
    Some((a + b) / 2.0)
}

/// Replace a text column by numbers according to `scheme`. Missing cells stay missing.
pub fn encode_categorical(
    mut raw: RawDataset,
    column: &str,
    scheme: CategoricalScheme,
) -> Result<RawDataset, StreamError> {
    let j = raw
        .header
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| StreamError::Format(format!("column {column:?} not found")))?;
    match scheme {
        CategoricalScheme::IntegerCodes => {
            let mut codes: HashMap<String, usize> = HashMap::new();
            for row in &mut raw.rows {
                if let Some(cell) = &mut row[j] {
                    let next = codes.len() + 1;
                    let code = *codes.entry(cell.clone()).or_insert(next);
                    *cell = code.to_string();
                }
            }
        }
        CategoricalScheme::BracketMedian => {
            for row in &mut raw.rows {
                if let Some(cell) = &mut row[j] {
                    let mid = bracket_midpoint(cell).ok_or_else(|| StreamError::Encoding {
                        column: column.to_owned(),
                        value: cell.clone(),
                        scheme,
                    })?;
                    *cell = mid.to_string();
                }
            }
        }
    }
    raw.encodings.push((column.to_owned(), scheme));
    Ok(raw)
}

pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<Dataset, StreamError> {
    let mut raw = RawDataset::read_csv(path, opts)?;
    for (column, scheme) in &opts.categorical {
        raw = encode_categorical(raw, column, *scheme)?;
    }
    raw.into_dataset()
}

/// `label idx:val ...` lines with 1-based indices.
pub fn load_libsvm(path: &Path) -> Result<Dataset, StreamError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut sparse_rows: Vec<BTreeMap<usize, f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row_no = i + 1;
        let mut tokens = line.split_whitespace();
        let label = parse_label(tokens.next().unwrap_or_default(), row_no, "label")?;
        let mut row = BTreeMap::new();
        for tok in tokens {
            let bad = |message: String| StreamError::Parse { row: row_no, column: tok.to_owned(), message };
            let (idx, val) = tok.split_once(':').ok_or_else(|| bad("expected index:value".into()))?;
            let idx: usize = idx.parse().map_err(|_| bad(format!("bad index {idx:?}")))?;
            if idx == 0 {
                return Err(bad("indices are 1-based".into()));
            }
            let val: f64 = val
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| bad(format!("bad value {val:?}")))?;
            if row.insert(idx - 1, val).is_some() {
                return Err(bad(format!("duplicate index {idx}")));
            }
            width = width.max(idx);
        }
        sparse_rows.push(row);
        labels.push(label);
    }
    let rows = sparse_rows
        .into_iter()
        .map(|r| {
            let mut dense = vec![None; width];
            for (j, v) in r {
                dense[j] = Some(v);
            }
            dense
        })
        .collect();
    Ok(Dataset {
        rows,
        labels,
        feature_names: (1..=width).map(|i| i.to_string()).collect(),
        provenance: Provenance { source: path.display().to_string(), encodings: Vec::new() },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub p: f64,
    pub seed: u64,
}

impl MaskConfig {
    pub fn new(p: f64, seed: u64) -> Result<Self, StreamError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(StreamError::InvalidProbability(p));
        }
        Ok(Self { p, seed })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HaphazardStream(pub Vec<HaphazardInstance>);

impl HaphazardStream {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, HaphazardInstance> {
        self.0.iter()
    }

    /// One JSON object per line: `{"t":..,"x":{"<id>":value,..},"y":0|1}`,
    /// ids ascending.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for inst in &self.0 {
            write!(out, "{{\"t\":{},\"x\":{{", inst.t())?;
            for (k, (id, v)) in inst.features().iter().enumerate() {
                if k > 0 {
                    out.write_all(b",")?;
                }
                let v = serde_json::to_string(v).map_err(std::io::Error::other)?;
                write!(out, "\"{id}\":{v}")?;
            }
            writeln!(out, "}},\"y\":{}}}", inst.label())?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, StreamError> {
        #[derive(Deserialize)]
        struct Line {
            t: u64,
            x: BTreeMap<String, f64>,
            y: u8,
        }
        let file = File::open(path).map_err(io_err(path))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| StreamError::Parse {
                row: i + 1,
                column: "-".into(),
                message: e.to_string(),
            })?;
            let x = parsed
                .x
                .into_iter()
                .map(|(k, v)| {
                    k.parse::<u32>().map(|id| (FeatureId(id), v)).map_err(|_| StreamError::Parse {
                        row: i + 1,
                        column: k.clone(),
                        message: "feature key is not an integer id".into(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            out.push(HaphazardInstance::new(parsed.t, x, parsed.y)?);
        }
        Ok(Self(out))
    }
}

impl<'a> IntoIterator for &'a HaphazardStream {
    type Item = &'a HaphazardInstance;
    type IntoIter = std::slice::Iter<'a, HaphazardInstance>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Keep each cell independently with probability `p`. One uniform draw is
/// consumed per cell in row-major order, including cells that are already
/// missing, so the presence pattern depends only on `(seed, shape)`.
pub fn mask_stream(dataset: &Dataset, cfg: &MaskConfig) -> HaphazardStream {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(dataset.len());
    for (t, (row, &y)) in dataset.rows.iter().zip(&dataset.labels).enumerate() {
        let mut x = Vec::new();
        for (j, cell) in row.iter().enumerate() {
            let keep = rng.gen::<f64>() < cfg.p;
            if let (true, Some(v)) = (keep, cell) {
                x.push((FeatureId(j as u32), *v));
            }
        }
        out.push(
            HaphazardInstance::new(t as u64, x, y).expect("dataset cells are finite and unique"),
        );
    }
    HaphazardStream(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn small() -> Dataset {
        Dataset {
            rows: vec![
                vec![Some(1.0), None, Some(3.0)],
                vec![Some(4.0), Some(5.0), Some(6.0)],
            ],
            labels: vec![0, 1],
            feature_names: vec!["a".into(), "b".into(), "c".into()],
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn csv_basic_and_missing_marker() {
        let f = write_tmp("a,b,y\n1,2,0\n?,4,1\n5,6,1\n");
        let d = load_csv(f.path(), &CsvOptions::default()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.rows[1][0], None);
        assert_eq!(d.labels, vec![0, 1, 1]);
        assert_eq!(d.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn csv_errors() {
        let f = write_tmp("a,b,y\n1,x,0\n");
        let err = load_csv(f.path(), &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, StreamError::Parse { row: 1, ref column, .. } if column == "b"));

        let f = write_tmp("a,b,y\n1,2\n");
        assert!(matches!(load_csv(f.path(), &CsvOptions::default()), Err(StreamError::Format(_))));

        let opts = CsvOptions { label_column: LabelColumn::Name("label".into()), ..Default::default() };
        let f = write_tmp("a,b,y\n1,2,0\n");
        assert!(matches!(load_csv(f.path(), &opts), Err(StreamError::Format(_))));
    }

    #[test]
    fn csv_delimiter_and_no_header() {
        let f = write_tmp("1;-1\n2;1\n");
        let opts = CsvOptions { delimiter: b';', has_header: false, ..Default::default() };
        let d = load_csv(f.path(), &opts).unwrap();
        assert_eq!(d.labels, vec![0, 1]);
        assert_eq!(d.feature_names, vec!["c0"]);
    }

    #[test]
    fn csv_max_rows_stops_early() {
        let f = write_tmp("0,1.5\n1,2.5\n0,bad\n");
        let opts = CsvOptions {
            has_header: false,
            label_column: LabelColumn::Index(0),
            max_rows: Some(2),
            ..Default::default()
        };
        let d = load_csv(f.path(), &opts).unwrap();
        assert_eq!(d.labels, vec![0, 1]);
    }

    #[test]
    fn categorical_encodings() {
        let f = write_tmp("age,race,weight,y\n\"[10,20]\",A,[75-100),0\n[0-10),B,?,1\n\"[10,20]\",A,[0-25),0\n");
        let opts = CsvOptions {
            categorical: vec![
                ("age".into(), CategoricalScheme::BracketMedian),
                ("race".into(), CategoricalScheme::IntegerCodes),
                ("weight".into(), CategoricalScheme::BracketMedian),
            ],
            ..Default::default()
        };
        let d = load_csv(f.path(), &opts).unwrap();
        assert_eq!(d.rows[0], vec![Some(15.0), Some(1.0), Some(87.5)]);
        assert_eq!(d.rows[1], vec![Some(5.0), Some(2.0), None]);
        assert_eq!(d.rows[2], vec![Some(15.0), Some(1.0), Some(12.5)]);
        assert_eq!(d.provenance.encodings.len(), 3);

        let raw = RawDataset::read_csv(write_tmp("c,y\nfoo,0\n").path(), &CsvOptions::default()).unwrap();
        assert!(matches!(
            encode_categorical(raw, "c", CategoricalScheme::BracketMedian),
            Err(StreamError::Encoding { .. })
        ));
    }

    #[test]
    fn libsvm_rows() {
        let f = write_tmp("+1 1:0.5 3:2.0\n-1\n");
        let d = load_libsvm(f.path()).unwrap();
        assert_eq!(d.rows[0], vec![Some(0.5), None, Some(2.0)]);
        assert_eq!(d.rows[1], vec![None, None, None]);
        assert_eq!(d.labels, vec![1, 0]);

        let f = write_tmp("1 2:1 2:3\n");
        assert!(matches!(load_libsvm(f.path()), Err(StreamError::Parse { .. })));
        let f = write_tmp("1 2-1\n");
        assert!(matches!(load_libsvm(f.path()), Err(StreamError::Parse { .. })));
    }

    #[test]
    fn mask_extremes() {
        let d = small();
        let full = mask_stream(&d, &MaskConfig::new(1.0, 3).unwrap());
        assert_eq!(full, d.to_stream().unwrap());
        let none = mask_stream(&d, &MaskConfig::new(0.0, 3).unwrap());
        assert!(none.iter().all(HaphazardInstance::is_empty));
        assert_eq!(none.0[1].label(), 1);
        assert!(MaskConfig::new(1.5, 0).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let s = mask_stream(&small(), &MaskConfig::new(0.6, 11).unwrap());
        let mut buf = Vec::new();
        s.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().all(|l| l.starts_with("{\"t\":")));
        let f = write_tmp(&text);
        assert_eq!(HaphazardStream::read_jsonl(f.path()).unwrap(), s);
    }
}
