//! Line-delimited snapshot streams and bulk-field side files.
//!
//! Every record is one line and starts with the schema-version token
//! `wts1`; arrays are comma-separated decimal lists written in shortest
//! round-trip form, so identical runs produce bit-identical records and
//! the stream parses back without loss.
//!
//! Record kinds:
//! - `wts1 config key=value ...` — effective numerical configuration
//! - `wts1 snapshot t=... n_x=... eta=... psi=... hamiltonian=... mass=...`
//! - `wts1 abort kind=... t=... detail=...` — typed failure, final record
//! - `wts1 summary steps=... snapshots=... wall_ms=... max_hamiltonian_drift=... mass_drift=...`

use std::io::{BufRead, Write};
use std::path::Path;

use crate::config::ConfigError;
use crate::geometry::BulkField;

pub const SCHEMA: &str = "wts1";

/// One persisted surface snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotRecord {
    pub t: f64,
    pub eta: Vec<f64>,
    pub psi: Vec<f64>,
    pub hamiltonian: f64,
    pub mass: f64,
    pub bulk_ref: Option<String>,
}

/// Closing summary of a simulate run.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRecord {
    pub steps: usize,
    pub snapshots: usize,
    pub wall_ms: u128,
    pub max_hamiltonian_drift: f64,
    pub mass_drift: f64,
}

/// Any record of the stream.
#[derive(Clone, Debug)]
pub enum StreamRecord {
    Config(Vec<(String, String)>),
    Snapshot(SnapshotRecord),
    Abort { kind: String, t: f64, detail: String },
    Summary(SummaryRecord),
}

fn fmt_array(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 8);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&format!("{v}"));
    }
    s
}

fn parse_array(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad number `{t}`: {e}")))
        .collect()
}

pub fn write_config_record(
    w: &mut dyn Write,
    pairs: &[(&str, String)],
) -> std::io::Result<()> {
    let mut line = format!("{SCHEMA} config");
    for (k, v) in pairs {
        line.push(' ');
        line.push_str(k);
        line.push('=');
        line.push_str(v);
    }
    writeln!(w, "{line}")
}

pub fn write_snapshot(w: &mut dyn Write, rec: &SnapshotRecord) -> std::io::Result<()> {
    let mut line = format!(
        "{SCHEMA} snapshot t={} n_x={} eta={} psi={} hamiltonian={} mass={}",
        rec.t,
        rec.eta.len(),
        fmt_array(&rec.eta),
        fmt_array(&rec.psi),
        rec.hamiltonian,
        rec.mass
    );
    if let Some(b) = &rec.bulk_ref {
        line.push_str(&format!(" bulk={b}"));
    }
    writeln!(w, "{line}")
}

pub fn write_abort(w: &mut dyn Write, kind: &str, t: f64, detail: &str) -> std::io::Result<()> {
    writeln!(w, "{SCHEMA} abort kind={kind} t={t} detail={detail}")
}

pub fn write_summary(w: &mut dyn Write, s: &SummaryRecord) -> std::io::Result<()> {
    writeln!(
        w,
        "{SCHEMA} summary steps={} snapshots={} wall_ms={} max_hamiltonian_drift={} mass_drift={}",
        s.steps, s.snapshots, s.wall_ms, s.max_hamiltonian_drift, s.mass_drift
    )
}

fn field<'a>(tokens: &'a [&'a str], key: &str) -> Result<&'a str, String> {
    let prefix = format!("{key}=");
    tokens
        .iter()
        .find_map(|t| t.strip_prefix(&prefix))
        .ok_or_else(|| format!("missing field `{key}`"))
}

/// Parse one stream line.
pub fn parse_record(line: &str) -> Result<StreamRecord, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() < 2 || tokens[0] != SCHEMA {
        return Err(format!("not a `{SCHEMA}` record: `{line}`"));
    }
    match tokens[1] {
        "config" => {
            let pairs = tokens[2..]
                .iter()
                .filter_map(|t| t.split_once('='))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
            Ok(StreamRecord::Config(pairs))
        }
        "snapshot" => {
            let t: f64 = field(&tokens, "t")?.parse().map_err(|e| format!("t: {e}"))?;
            let n_x: usize = field(&tokens, "n_x")?
                .parse()
                .map_err(|e| format!("n_x: {e}"))?;
            let eta = parse_array(field(&tokens, "eta")?)?;
            let psi = parse_array(field(&tokens, "psi")?)?;
            if eta.len() != n_x || psi.len() != n_x {
                return Err(format!(
                    "array length mismatch: n_x={} eta={} psi={}",
                    n_x,
                    eta.len(),
                    psi.len()
                ));
            }
            let hamiltonian: f64 = field(&tokens, "hamiltonian")?
                .parse()
                .map_err(|e| format!("hamiltonian: {e}"))?;
            let mass: f64 = field(&tokens, "mass")?
                .parse()
                .map_err(|e| format!("mass: {e}"))?;
            let bulk_ref = field(&tokens, "bulk").ok().map(|s| s.to_string());
            Ok(StreamRecord::Snapshot(SnapshotRecord {
                t,
                eta,
                psi,
                hamiltonian,
                mass,
                bulk_ref,
            }))
        }
        "abort" => {
            let kind = field(&tokens, "kind")?.to_string();
            let t: f64 = field(&tokens, "t")?.parse().map_err(|e| format!("t: {e}"))?;
            let detail = line
                .split_once("detail=")
                .map(|(_, d)| d.to_string())
                .unwrap_or_default();
            Ok(StreamRecord::Abort { kind, t, detail })
        }
        "summary" => Ok(StreamRecord::Summary(SummaryRecord {
            steps: field(&tokens, "steps")?.parse().map_err(|e| format!("steps: {e}"))?,
            snapshots: field(&tokens, "snapshots")?
                .parse()
                .map_err(|e| format!("snapshots: {e}"))?,
            wall_ms: field(&tokens, "wall_ms")?
                .parse()
                .map_err(|e| format!("wall_ms: {e}"))?,
            max_hamiltonian_drift: field(&tokens, "max_hamiltonian_drift")?
                .parse()
                .map_err(|e| format!("max_hamiltonian_drift: {e}"))?,
            mass_drift: field(&tokens, "mass_drift")?
                .parse()
                .map_err(|e| format!("mass_drift: {e}"))?,
        })),
        other => Err(format!("unknown record kind `{other}`")),
    }
}

/// Read a whole stream file.
pub fn read_stream(path: &Path) -> Result<Vec<StreamRecord>, ConfigError> {
    let file = std::fs::File::open(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(&line).map_err(|what| ConfigError::Parse {
            line: idx + 1,
            what,
        })?;
        records.push(rec);
    }
    Ok(records)
}

const BULK_MAGIC: &[u8; 4] = b"WTB1";
const BULK_FIELDS: [&str; 5] = ["phi", "q", "p", "vx", "vy"];

/// Write the five bulk fields as a text side file (row-major, bottom row first).
pub fn write_bulk_text(path: &Path, fields: [&BulkField; 5]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n_x = fields[0].grid().n_x();
    let n_z = fields[0].n_z();
    writeln!(w, "wtb1 n_x={n_x} n_z={n_z}")?;
    for (name, f) in BULK_FIELDS.iter().zip(fields.iter()) {
        writeln!(w, "field {name}")?;
        for m in 0..n_z {
            let row: Vec<f64> = (0..n_x).map(|j| f.values()[[m, j]]).collect();
            writeln!(w, "{}", fmt_array(&row))?;
        }
    }
    w.flush()
}

/// Write the five bulk fields as a binary side file:
/// magic `WTB1`, little-endian u32 `n_x`, u32 `n_z`, then the fields
/// phi, q, p, vx, vy as row-major little-endian f64.
pub fn write_bulk_binary(path: &Path, fields: [&BulkField; 5]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n_x = fields[0].grid().n_x();
    let n_z = fields[0].n_z();
    w.write_all(BULK_MAGIC)?;
    w.write_all(&(n_x as u32).to_le_bytes())?;
    w.write_all(&(n_z as u32).to_le_bytes())?;
    for f in fields.iter() {
        for m in 0..n_z {
            for j in 0..n_x {
                w.write_all(&f.values()[[m, j]].to_le_bytes())?;
            }
        }
    }
    w.flush()
}

/// Read a binary bulk side file back: `(n_x, n_z, five fields)`.
pub fn read_bulk_binary(path: &Path) -> std::io::Result<(usize, usize, Vec<Vec<f64>>)> {
    let data = std::fs::read(path)?;
    if data.len() < 12 || &data[0..4] != BULK_MAGIC {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "bad bulk file header",
        ));
    }
    let n_x = u32::from_le_bytes(data[4..8].try_into().unwrap()) as usize;
    let n_z = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
    let per_field = n_x * n_z;
    let expect = 12 + 5 * per_field * 8;
    if data.len() != expect {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("bulk file length {} != expected {expect}", data.len()),
        ));
    }
    let mut fields = Vec::with_capacity(5);
    let mut offset = 12;
    for _ in 0..5 {
        let mut vals = Vec::with_capacity(per_field);
        for _ in 0..per_field {
            vals.push(f64::from_le_bytes(data[offset..offset + 8].try_into().unwrap()));
            offset += 8;
        }
        fields.push(vals);
    }
    Ok((n_x, n_z, fields))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip_is_exact() {
        let rec = SnapshotRecord {
            t: 0.612_345_678_901_234_5,
            eta: vec![1.0 / 3.0, -2.5e-17, 7.125],
            psi: vec![0.1, 0.2, f64::MIN_POSITIVE],
            hamiltonian: 1.234e-8,
            mass: -0.0,
            bulk_ref: None,
        };
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &rec).unwrap();
        let line = String::from_utf8(buf).unwrap();
        match parse_record(line.trim()).unwrap() {
            StreamRecord::Snapshot(back) => {
                assert_eq!(back.t.to_bits(), rec.t.to_bits());
                for (a, b) in back.eta.iter().zip(rec.eta.iter()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
                for (a, b) in back.psi.iter().zip(rec.psi.iter()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            other => panic!("wrong record {other:?}"),
        }
    }

    #[test]
    fn abort_record_round_trip() {
        let mut buf = Vec::new();
        write_abort(&mut buf, "StripViolation", 1.25, "gap 0 below margin").unwrap();
        let line = String::from_utf8(buf).unwrap();
        match parse_record(line.trim()).unwrap() {
            StreamRecord::Abort { kind, t, detail } => {
                assert_eq!(kind, "StripViolation");
                assert_eq!(t, 1.25);
                assert_eq!(detail, "gap 0 below margin");
            }
            other => panic!("wrong record {other:?}"),
        }
    }

    #[test]
    fn rejects_foreign_lines() {
        assert!(parse_record("csv,1,2,3").is_err());
        assert!(parse_record("wts1 wiggle a=1").is_err());
    }
}
