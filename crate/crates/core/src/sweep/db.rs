//! Database file format.
//!
//! ```text
//! # pourdb v1; particle_volume_ml=1; omega_deg_s=30; spec_hash=0123abcd
//! container,v_start_ml,theta_stop_deg,t_stop_s,seed,v_received_ml,v_spill_ml,v_remaining_ml
//! flask,25,40,0.5,1234,0,0,25
//! ```
//!
//! Floats are written in their shortest round-trip form.

use super::{DatabaseMeta, PourDatabase, PourParams, PourRecord, SweepError, DB_VERSION};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CSV_HEADER: &str =
    "container,v_start_ml,theta_stop_deg,t_stop_s,seed,v_received_ml,v_spill_ml,v_remaining_ml";

const MAGIC: &str = "# pourdb ";

fn io_error(path: &Path, e: impl ToString) -> SweepError {
    SweepError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

pub fn write_database<W: Write>(db: &PourDatabase, out: W) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    let m = &db.meta;
    writeln!(
        out,
        "{MAGIC}{}; particle_volume_ml={}; omega_deg_s={}; spec_hash={}",
        m.version, m.particle_volume, m.omega_deg_s, m.spec_hash
    )?;
    let mut csv = csv::WriterBuilder::new().from_writer(out);
    csv.write_record(CSV_HEADER.split(','))?;
    for r in &db.records {
        let p = &r.params;
        csv.write_record([
            p.container.clone(),
            p.v_start.to_string(),
            p.theta_stop_deg.to_string(),
            p.t_stop.to_string(),
            p.seed.to_string(),
            r.v_received.to_string(),
            r.v_spill.to_string(),
            r.v_remaining.to_string(),
        ])?;
    }
    csv.flush()
}

pub fn save_database(db: &PourDatabase, path: impl AsRef<Path>) -> Result<(), SweepError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    write_database(db, file).map_err(|e| io_error(path, e))
}

fn parse_meta(line: &str) -> Result<DatabaseMeta, SweepError> {
    let malformed = |reason: &str| SweepError::MalformedRow {
        row: 1,
        reason: reason.to_string(),
    };
    let rest = line
        .strip_prefix(MAGIC)
        .ok_or_else(|| malformed("missing '# pourdb' header line"))?;
    let mut parts = rest.split(';').map(str::trim);
    let version = parts.next().unwrap_or_default();
    if version != DB_VERSION {
        return Err(SweepError::VersionMismatch {
            found: version.to_string(),
            expected: DB_VERSION.to_string(),
        });
    }
    let (mut pv, mut omega, mut hash) = (None, None, None);
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| malformed("header field without '='"))?;
        match key {
            "particle_volume_ml" => pv = value.parse::<f64>().ok(),
            "omega_deg_s" => omega = value.parse::<f64>().ok(),
            "spec_hash" => hash = Some(value.to_string()),
            _ => return Err(malformed(&format!("unknown header field '{key}'"))),
        }
    }
    match (pv, omega, hash) {
        (Some(particle_volume), Some(omega_deg_s), Some(spec_hash)) => Ok(DatabaseMeta {
            version: version.to_string(),
            particle_volume,
            omega_deg_s,
            spec_hash,
        }),
        _ => Err(malformed(
            "header needs particle_volume_ml, omega_deg_s and spec_hash",
        )),
    }
}

/// Reads a database; rows are numbered by file line.
pub fn read_database<R: Read>(input: R) -> Result<PourDatabase, SweepError> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| SweepError::MalformedRow {
            row: 1,
            reason: e.to_string(),
        })?;
    let meta = parse_meta(first.trim_end())?;

    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = Vec::new();
    let mut header_seen = false;
    for row in csv.records() {
        let row = row.map_err(|e| SweepError::MalformedRow {
            row: e.position().map_or(0, |p| p.line() as usize + 1),
            reason: e.to_string(),
        })?;
        // the first line of the file is consumed before the CSV reader starts
        let line = row.position().map_or(0, |p| p.line() as usize) + 1;
        if !header_seen {
            if row.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
                return Err(SweepError::MalformedRow {
                    row: line,
                    reason: format!("expected header '{CSV_HEADER}'"),
                });
            }
            header_seen = true;
            continue;
        }
        if row.len() != 8 {
            return Err(SweepError::MalformedRow {
                row: line,
                reason: format!("expected 8 fields, found {}", row.len()),
            });
        }
        let num = |k: usize| -> Result<f64, SweepError> {
            row[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| SweepError::MalformedRow {
                    row: line,
                    reason: format!("field {} is not a number: '{}'", k + 1, &row[k]),
                })
        };
        let seed = row[4]
            .parse::<u64>()
            .map_err(|_| SweepError::MalformedRow {
                row: line,
                reason: format!("seed is not an integer: '{}'", &row[4]),
            })?;
        let record = PourRecord {
            params: PourParams {
                container: row[0].to_string(),
                v_start: num(1)?,
                theta_stop_deg: num(2)?,
                t_stop: num(3)?,
                omega_deg_s: meta.omega_deg_s,
                seed,
            },
            v_received: num(5)?,
            v_spill: num(6)?,
            v_remaining: num(7)?,
        };
        let sum = record.v_received + record.v_spill + record.v_remaining;
        // the fill rounds the start volume to whole particles
        if (sum - record.params.v_start).abs() > 0.5 * meta.particle_volume + 1e-9 {
            return Err(SweepError::Inconsistent(format!(
                "row {line}: volumes add up to {sum} mL, not the start volume {} mL",
                record.params.v_start
            )));
        }
        records.push(record);
    }
    if !header_seen {
        return Err(SweepError::MalformedRow {
            row: 2,
            reason: "missing CSV header".into(),
        });
    }
    Ok(PourDatabase { meta, records })
}

pub fn load_database(path: impl AsRef<Path>) -> Result<PourDatabase, SweepError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    read_database(file)
}
