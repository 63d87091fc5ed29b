//! CSV ingestion, line-delimited JSON records and a binary matrix dump.

use std::io::{BufRead, Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Sample;

/// Streaming CSV reader: a header naming the channels, then one numeric
/// row per sample. Times are assigned `0, 1, 2, ...` in file order.
pub struct CsvSamples<R: Read> {
    reader: csv::Reader<R>,
    channels: Vec<String>,
    record: csv::StringRecord,
    t: usize,
}

impl<R: Read> CsvSamples<R> {
    pub fn new(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        let headers = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
        if headers.is_empty() || headers.iter().all(str::is_empty) {
            return Err(Error::Parse {
                line: 1,
                message: "empty input: expected a header naming the channels".into(),
            });
        }
        Ok(Self {
            reader,
            channels: headers.iter().map(str::to_owned).collect(),
            record: csv::StringRecord::new(),
            t: 0,
        })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e
        .position()
        .map(|p| p.line())
        .unwrap_or(fallback_line);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

impl<R: Read> Iterator for CsvSamples<R> {
    type Item = Result<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.reader.read_record(&mut self.record) {
            Ok(false) => None,
            Err(e) => Some(Err(csv_error(e, self.t as u64 + 2))),
            Ok(true) => {
                let line = self
                    .record
                    .position()
                    .map(|p| p.line())
                    .unwrap_or(self.t as u64 + 2);
                let p = self.channels.len();
                if self.record.len() != p {
                    return Some(Err(Error::Parse {
                        line,
                        message: format!("expected {p} fields, found {}", self.record.len()),
                    }));
                }
                let mut values = DVector::zeros(p);
                for (i, field) in self.record.iter().enumerate() {
                    match field.parse::<f64>() {
                        Ok(v) => values[i] = v,
                        Err(_) => {
                            return Some(Err(Error::Parse {
                                line,
                                message: format!(
                                    "field {} ('{}') is not a number",
                                    i + 1,
                                    field
                                ),
                            }))
                        }
                    }
                }
                let s = Sample::new(self.t, values);
                self.t += 1;
                Some(Ok(s))
            }
        }
    }
}

/// Read every sample; the header gives the channel names.
pub fn ingest_csv<R: Read>(source: R) -> Result<(Vec<String>, Vec<Sample>)> {
    let reader = CsvSamples::new(source)?;
    let names = reader.channels().to_vec();
    let samples = reader.collect::<Result<Vec<_>>>()?;
    Ok((names, samples))
}

/// Channel names `x0, x1, ...`.
pub fn default_channel_names(p: usize) -> Vec<String> {
    (0..p).map(|i| format!("x{i}")).collect()
}

/// Write samples as CSV. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn write_csv<W: Write>(out: W, names: &[String], samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(names).map_err(|e| csv_error(e, 1))?;
    let mut row = Vec::with_capacity(names.len());
    for s in samples {
        if s.dim() != names.len() {
            return Err(Error::Dimension(format!(
                "sample at t={} has {} channels, header has {}",
                s.t,
                s.dim(),
                names.len()
            )));
        }
        row.clear();
        row.extend(s.values.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| csv_error(e, 0))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Params,
    Truth,
    Connectivity,
    Network,
    Timing,
    Mse,
    Transfer,
    Jump,
}

/// A matrix framed with explicit dimensions, row-major. Non-finite values
/// are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixPayload {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(with = "nullable_f64")]
    pub data: Vec<f64>,
}

impl MatrixPayload {
    pub fn from_matrix(name: impl Into<String>, m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            data.extend(m.row(i).iter());
        }
        Self {
            name: name.into(),
            rows,
            cols,
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Dimension(format!(
                "payload {} has {} values for a {}x{} matrix",
                self.name,
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| if x.is_finite() { Some(*x) } else { None }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

/// One line of structured output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default)]
    pub payload: Vec<MatrixPayload>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl OutputRecord {
    pub fn new(kind: RecordKind) -> Self {
        Self {
            kind,
            t: None,
            payload: Vec::new(),
            flags: Vec::new(),
            meta: serde_json::Map::new(),
        }
    }

    pub fn at(mut self, t: usize) -> Self {
        self.t = Some(t);
        self
    }

    pub fn matrix(mut self, name: &str, m: &DMatrix<f64>) -> Self {
        self.payload.push(MatrixPayload::from_matrix(name, m));
        self
    }

    pub fn flag(mut self, flag: &str) -> Self {
        self.flags.push(flag.to_owned());
        self
    }

    pub fn meta(mut self, key: &str, value: impl Serialize) -> Result<Self> {
        self.meta.insert(key.to_owned(), serde_json::to_value(value)?);
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&MatrixPayload> {
        self.payload.iter().find(|p| p.name == name)
    }
}

/// Writes one JSON record per line, flushing after each.
pub struct RecordWriter<W: Write> {
    out: W,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, rec: &OutputRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parse line-delimited records, skipping blank lines.
pub fn read_records<R: BufRead>(source: R) -> Result<Vec<OutputRecord>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

const DUMP_MAGIC: &[u8; 4] = b"TVVM";
const DUMP_VERSION: u32 = 1;

/// Little-endian dump: magic `TVVM`, `u32` version, `u64` count, then per
/// matrix a `u32` name length, UTF-8 name, `u64` rows, `u64` cols and
/// `rows * cols` row-major `f64`s.
pub fn write_matrix_dump<W: Write>(mut out: W, mats: &[MatrixPayload]) -> Result<()> {
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&DUMP_VERSION.to_le_bytes())?;
    out.write_all(&(mats.len() as u64).to_le_bytes())?;
    for m in mats {
        if m.data.len() != m.rows * m.cols {
            return Err(Error::Dimension(format!("payload {} is ragged", m.name)));
        }
        out.write_all(&(m.name.len() as u32).to_le_bytes())?;
        out.write_all(m.name.as_bytes())?;
        out.write_all(&(m.rows as u64).to_le_bytes())?;
        out.write_all(&(m.cols as u64).to_le_bytes())?;
        for v in &m.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_dump<R: Read>(mut src: R) -> Result<Vec<MatrixPayload>> {
    let bad = |m: &str| Error::Parse {
        line: 0,
        message: format!("matrix dump: {m}"),
    };
    let mut magic = [0u8; 4];
    src.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    src.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != DUMP_VERSION {
        return Err(bad("unsupported version"));
    }
    src.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8);
    let mut out = Vec::new();
    for _ in 0..count {
        src.read_exact(&mut b4)?;
        let mut name = vec![0u8; u32::from_le_bytes(b4) as usize];
        src.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
        src.read_exact(&mut b8)?;
        let rows = u64::from_le_bytes(b8) as usize;
        src.read_exact(&mut b8)?;
        let cols = u64::from_le_bytes(b8) as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| bad("size overflow"))?;
        let mut data = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            src.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        out.push(MatrixPayload {
            name,
            rows,
            cols,
            data,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_simple_csv() {
        let (names, s) = ingest_csv("a,b\n1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].t, 1);
        assert_eq!(s[1].values.as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn reports_line_numbers() {
        match ingest_csv("a,b\n1,2\n1,x\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match ingest_csv("a,b\n1,2\n3,4\n5\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(ingest_csv("".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn record_round_trip_with_nan() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, f64::NAN, 6.0]);
        let rec = OutputRecord::new(RecordKind::Params)
            .at(7)
            .matrix("phi", &m)
            .flag("unstable_frame")
            .meta("method", "sope")
            .unwrap();
        let mut w = RecordWriter::new(Vec::new());
        w.write(&rec).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        assert!(text.contains("[1.0,2.0,3.0,4.0,null,6.0]"));
        let back = read_records(text.as_bytes()).unwrap();
        let got = back[0].get("phi").unwrap().to_matrix().unwrap();
        assert!(got[(1, 1)].is_nan());
        assert_eq!(got[(0, 2)], 3.0);
        assert_eq!(back[0].t, Some(7));
    }

    #[test]
    fn dump_round_trip() {
        let mats = vec![
            MatrixPayload::from_matrix("a", &DMatrix::from_row_slice(1, 2, &[0.1, -2.5])),
            MatrixPayload::from_matrix("bb", &DMatrix::zeros(0, 3)),
        ];
        let mut buf = Vec::new();
        write_matrix_dump(&mut buf, &mats).unwrap();
        assert_eq!(read_matrix_dump(buf.as_slice()).unwrap(), mats);
        assert!(read_matrix_dump(&b"XXXX"[..]).is_err());
    }
}
