//! CSV and JSON formats, checksums and atomic output writing.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nvdeer::sequence::SequenceKind;
use nvdeer::tomography::{TomographyResult, TraceMeta, TraceSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const TRACE_HEADER: [&str; 9] = [
    "scan_value", "i_x", "i_minus_x", "i_y", "i_minus_y", "d_x", "d_y", "d", "phi_rad",
];

/// A named file and its bytes, held in memory until every output of a
/// command is ready.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl OutputFile {
    pub fn new(name: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        OutputFile {
            name: name.into(),
            bytes: bytes.into(),
        }
    }

    pub fn json<T: Serialize>(name: impl Into<String>, value: &T) -> Result<Self, CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Io(format!("serializing JSON: {e}")))?;
        text.push('\n');
        Ok(OutputFile::new(name, text))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputChecksum {
    pub file: String,
    pub sha256: String,
}

/// Provenance of one command run. Holds no wall-clock data so that
/// identical runs give identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub outputs: Vec<OutputChecksum>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: &str, seed: u64, files: &[OutputFile]) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            outputs: files
                .iter()
                .map(|f| OutputChecksum {
                    file: f.name.clone(),
                    sha256: sha256_hex(&f.bytes),
                })
                .collect(),
        }
    }
}

/// Writes every file through a temporary file in `dir` and renames it into
/// place, so a reader never sees a half-written output.
pub fn write_outputs(dir: &Path, files: &[OutputFile]) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::with_capacity(files.len());
    for f in files {
        let target = dir.join(&f.name);
        let mut tmp = tempfile::NamedTempFile::new_in(dir)
            .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        tmp.write_all(&f.bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target)
            .map_err(|e| CliError::Io(format!("{}: {}", target.display(), e.error)))?;
        written.push(target);
    }
    Ok(written)
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, CliError> {
    w.into_inner()
        .map_err(|e| CliError::Io(format!("writing CSV: {e}")))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(format!("writing CSV: {e}"))
}

/// Numeric columns with a header and optional `# key=value` comment lines.
pub fn write_table(comments: &[(&str, String)], header: &[&str], columns: &[&[f64]]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    for (k, v) in comments {
        writeln!(out, "# {k}={}", v.replace('\n', " "))?;
    }
    let mut w = csv_writer();
    w.write_record(header).map_err(csv_err)?;
    let rows = columns.first().map_or(0, |c| c.len());
    for i in 0..rows {
        w.write_record(columns.iter().map(|c| c[i].to_string()))
            .map_err(csv_err)?;
    }
    out.extend(finish(w)?);
    Ok(out)
}

/// Parsed numeric table: comment metadata, header and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub comments: Vec<(String, String)>,
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn comment(&self, key: &str) -> Option<&str> {
        self.comments
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

pub fn read_table(text: &str, source: &str) -> Result<Table, CliError> {
    let bad = |msg: String| CliError::Input(format!("{source}: {msg}"));
    let comments = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .filter_map(|l| l.trim().split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(bad("missing header row".into()));
    }
    let mut columns = vec![Vec::new(); header.len()];
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for (i, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| bad(format!("row {}: `{field}` is not a number", n + 1)))?;
            columns[i].push(v);
        }
    }
    Ok(Table {
        comments,
        header,
        columns,
    })
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn trace_csv(trace: &TraceSet, tomo: &TomographyResult, noise_floor: f64) -> Result<Vec<u8>, CliError> {
    let kind = trace.meta.kind.map_or("unknown", SequenceKind::name);
    let comments = [
        ("kind", kind.to_string()),
        ("summary", trace.meta.summary.clone()),
        ("noise_floor", noise_floor.to_string()),
    ];
    let mut header = TRACE_HEADER.to_vec();
    let mut cols: Vec<&[f64]> = vec![
        &trace.scan_values,
        &trace.i_x,
        &trace.i_minus_x,
        &trace.i_y,
        &trace.i_minus_y,
        &tomo.d_x,
        &tomo.d_y,
        &tomo.d,
        &tomo.phi,
    ];
    if let Some(e) = &tomo.d_err {
        header.push("d_err");
        cols.push(e);
    }
    write_table(&comments, &header, &cols)
}

/// Reads a trace written by [`trace_csv`]. The angle flags are recomputed
/// from the recorded noise floor.
pub fn parse_trace_csv(text: &str, source: &str) -> Result<(TraceSet, TomographyResult), CliError> {
    let t = read_table(text, source)?;
    let col = |name: &str| -> Result<Vec<f64>, CliError> {
        t.column(name)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| CliError::Input(format!("{source}: missing column `{name}`")))
    };
    let kind = match t.comment("kind") {
        None | Some("unknown") => None,
        Some(k) => Some(
            SequenceKind::from_name(k)
                .ok_or_else(|| CliError::Input(format!("{source}: unknown kind `{k}`")))?,
        ),
    };
    let noise_floor = match t.comment("noise_floor") {
        None => 0.0,
        Some(v) => v
            .parse()
            .map_err(|_| CliError::Input(format!("{source}: bad noise_floor `{v}`")))?,
    };
    let trace = TraceSet {
        scan_values: col("scan_value")?,
        i_x: col("i_x")?,
        i_minus_x: col("i_minus_x")?,
        i_y: col("i_y")?,
        i_minus_y: col("i_minus_y")?,
        meta: TraceMeta {
            kind,
            summary: t.comment("summary").unwrap_or_default().to_string(),
        },
    };
    trace
        .validate()
        .map_err(|e| CliError::Input(format!("{source}: {e}")))?;
    let d = col("d")?;
    let phi = col("phi_rad")?;
    let tomo = TomographyResult {
        angle_defined: d.iter().map(|&v| v > noise_floor).collect(),
        d_x: col("d_x")?,
        d_y: col("d_y")?,
        d,
        phi,
        d_err: t.column("d_err").map(<[f64]>::to_vec),
    };
    Ok((trace, tomo))
}

/// Two-column frequency/signal spectrum.
pub fn parse_spectrum_csv(text: &str, source: &str) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let t = read_table(text, source)?;
    match (t.column("frequency_hz"), t.column("signal")) {
        (Some(f), Some(s)) => Ok((f.to_vec(), s.to_vec())),
        _ => Err(CliError::Input(format!(
            "{source}: expected columns `frequency_hz` and `signal`"
        ))),
    }
}
