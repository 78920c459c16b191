//! Regression metrics, the spill table and the comparison against measured
//! pours.

use crate::sweep::PourDatabase;
use std::io::{self, Read, Write};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid series: {0}")]
    Series(String),
    #[error("MAPE is undefined when an actual value is zero")]
    ZeroActual,
    #[error("R2 is undefined for a constant actual series")]
    ConstantActual,
    #[error("the database is empty")]
    EmptyDatabase,
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("row {row}: record {index} is not in the database ({len} records)")]
    UnknownRecord {
        row: usize,
        index: usize,
        len: usize,
    },
    #[error("{0}")]
    Io(String),
}

/// Predicted and actual volumes, mL.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    predicted: Vec<f64>,
    actual: Vec<f64>,
}

impl PairedSeries {
    pub fn new(predicted: Vec<f64>, actual: Vec<f64>) -> Result<Self, AnalysisError> {
        if predicted.len() != actual.len() {
            return Err(AnalysisError::Series(format!(
                "{} predictions against {} actual values",
                predicted.len(),
                actual.len()
            )));
        }
        if predicted.is_empty() {
            return Err(AnalysisError::Series("no values".into()));
        }
        if predicted
            .iter()
            .chain(&actual)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(AnalysisError::Series(
                "volumes must be finite and non-negative".into(),
            ));
        }
        Ok(Self { predicted, actual })
    }

    pub fn len(&self) -> usize {
        self.actual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actual.is_empty()
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.predicted
            .iter()
            .copied()
            .zip(self.actual.iter().copied())
    }
}

pub fn rmse(s: &PairedSeries) -> f64 {
    (s.pairs().map(|(p, a)| (p - a).powi(2)).sum::<f64>() / s.len() as f64).sqrt()
}

/// Mean absolute percentage error relative to the actual values, percent.
pub fn mape(s: &PairedSeries) -> Result<f64, AnalysisError> {
    if s.actual.contains(&0.0) {
        return Err(AnalysisError::ZeroActual);
    }
    Ok(100.0 * s.pairs().map(|(p, a)| ((p - a) / a).abs()).sum::<f64>() / s.len() as f64)
}

pub fn r2(s: &PairedSeries) -> Result<f64, AnalysisError> {
    let mean = s.actual.iter().sum::<f64>() / s.len() as f64;
    let total: f64 = s.actual.iter().map(|a| (a - mean).powi(2)).sum();
    if total == 0.0 {
        return Err(AnalysisError::ConstantActual);
    }
    let residual: f64 = s.pairs().map(|(p, a)| (a - p).powi(2)).sum();
    Ok(1.0 - residual / total)
}

pub fn max_abs_error(s: &PairedSeries) -> f64 {
    s.pairs().map(|(p, a)| (p - a).abs()).fold(0.0, f64::max)
}

/// Ranks starting at 1; ties share their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation; `None` if either side is constant or the
/// lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpillRow {
    pub record_index: usize,
    pub container: String,
    pub theta_stop_deg: f64,
    pub v_received: f64,
    pub v_spill: f64,
}

pub const SPILL_HEADER: &str = "record_index,container,theta_stop_deg,v_received_ml,v_spill_ml";

/// One row per record (optionally of one container), sorted by stop angle
/// then received volume.
pub fn spill_report(
    db: &PourDatabase,
    container: Option<&str>,
) -> Result<Vec<SpillRow>, AnalysisError> {
    let mut rows: Vec<SpillRow> = db
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| container.is_none_or(|c| r.params.container == c))
        .map(|(i, r)| SpillRow {
            record_index: i,
            container: r.params.container.clone(),
            theta_stop_deg: r.params.theta_stop_deg,
            v_received: r.v_received,
            v_spill: r.v_spill,
        })
        .collect();
    if rows.is_empty() {
        return Err(AnalysisError::EmptyDatabase);
    }
    rows.sort_by(|a, b| {
        a.theta_stop_deg
            .total_cmp(&b.theta_stop_deg)
            .then(a.v_received.total_cmp(&b.v_received))
            .then(a.record_index.cmp(&b.record_index))
    });
    Ok(rows)
}

pub fn write_spill_report<W: Write>(rows: &[SpillRow], out: W) -> io::Result<()> {
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(SPILL_HEADER.split(','))?;
    for r in rows {
        csv.write_record([
            r.record_index.to_string(),
            r.container.clone(),
            r.theta_stop_deg.to_string(),
            r.v_received.to_string(),
            r.v_spill.to_string(),
        ])?;
    }
    csv.flush()
}

pub const REAL_HEADER: &str =
    "container,v_start_real_ml,v_goal_ml,record_index,v_received_real_ml,v_spill_real_ml";

/// One executed pour.
#[derive(Debug, Clone, PartialEq)]
pub struct RealPour {
    pub container: String,
    pub v_start_real: f64,
    pub v_goal: f64,
    pub record_index: usize,
    pub v_received_real: f64,
    pub v_spill_real: f64,
}

/// Parses the measured-pour CSV; `row` in errors is the file line.
pub fn read_real_pours<R: Read>(input: R) -> Result<Vec<RealPour>, AnalysisError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut out = Vec::new();
    for (k, row) in csv.records().enumerate() {
        let row = row.map_err(|e| AnalysisError::Row {
            row: k + 1,
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(k + 1, |p| p.line() as usize);
        let bad = |reason: String| AnalysisError::Row { row: line, reason };
        if k == 0 {
            if row.iter().collect::<Vec<_>>().join(",") != REAL_HEADER {
                return Err(bad(format!("expected header '{REAL_HEADER}'")));
            }
            continue;
        }
        if row.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", row.len())));
        }
        let num = |i: usize| -> Result<f64, AnalysisError> {
            match row[i].trim().parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
                _ => Err(bad(format!(
                    "field {} is not a non-negative number: '{}'",
                    i + 1,
                    &row[i]
                ))),
            }
        };
        let record_index = row[3]
            .trim()
            .parse::<usize>()
            .map_err(|_| bad(format!("record_index is not an integer: '{}'", &row[3])))?;
        out.push(RealPour {
            container: row[0].trim().to_string(),
            v_start_real: num(1)?,
            v_goal: num(2)?,
            record_index,
            v_received_real: num(4)?,
            v_spill_real: num(5)?,
        });
    }
    if out.is_empty() {
        return Err(AnalysisError::Row {
            row: 1,
            reason: "no measured pours".into(),
        });
    }
    Ok(out)
}

/// Simulated against measured received volume of the executed records.
#[derive(Debug, Clone, PartialEq)]
pub struct SimToRealReport {
    pub pours: usize,
    pub rmse: f64,
    /// `None` when some measured volume is zero.
    pub mape: Option<f64>,
    pub max_error: f64,
    /// Pours whose measured spill was below the simulated one.
    pub spill_real_below_sim: usize,
    /// Mean and largest `sim - real` spill difference, mL.
    pub spill_mean_diff: f64,
    pub spill_max_diff: f64,
}

impl SimToRealReport {
    pub fn summary(&self) -> String {
        let mape = self
            .mape
            .map_or_else(|| "n/a".to_string(), |m| format!("{m:.0}%"));
        format!(
            "RMSE is {:.1} mL (MAPE = {mape}), maximum difference {:.1} mL over {} pours; \
             real spill below simulated in {} pours",
            self.rmse, self.max_error, self.pours, self.spill_real_below_sim
        )
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut csv = csv::Writer::from_writer(out);
        csv.write_record(["metric", "value"])?;
        let mape = self.mape.map_or_else(String::new, |m| m.to_string());
        for (k, v) in [
            ("pours", self.pours.to_string()),
            ("rmse_ml", self.rmse.to_string()),
            ("mape_percent", mape),
            ("max_error_ml", self.max_error.to_string()),
            (
                "spill_real_below_sim",
                self.spill_real_below_sim.to_string(),
            ),
            ("spill_mean_diff_ml", self.spill_mean_diff.to_string()),
            ("spill_max_diff_ml", self.spill_max_diff.to_string()),
        ] {
            csv.write_record([k, v.as_str()])?;
        }
        csv.flush()
    }
}

pub fn compare_real(
    db: &PourDatabase,
    pours: &[RealPour],
) -> Result<SimToRealReport, AnalysisError> {
    let mut sim = Vec::with_capacity(pours.len());
    let mut real = Vec::with_capacity(pours.len());
    let mut spill_diff = Vec::with_capacity(pours.len());
    for (k, p) in pours.iter().enumerate() {
        // header is line 1
        let row = k + 2;
        let rec = db
            .records
            .get(p.record_index)
            .ok_or(AnalysisError::UnknownRecord {
                row,
                index: p.record_index,
                len: db.records.len(),
            })?;
        if rec.params.container != p.container {
            return Err(AnalysisError::Row {
                row,
                reason: format!(
                    "record {} is for '{}', not '{}'",
                    p.record_index, rec.params.container, p.container
                ),
            });
        }
        sim.push(rec.v_received);
        real.push(p.v_received_real);
        spill_diff.push(rec.v_spill - p.v_spill_real);
    }
    let series = PairedSeries::new(sim, real)?;
    Ok(SimToRealReport {
        pours: series.len(),
        rmse: rmse(&series),
        mape: mape(&series).ok(),
        max_error: max_abs_error(&series),
        spill_real_below_sim: spill_diff.iter().filter(|&&d| d > 0.0).count(),
        spill_mean_diff: spill_diff.iter().sum::<f64>() / spill_diff.len() as f64,
        spill_max_diff: spill_diff
            .iter()
            .fold(0.0, |m, d| if d.abs() > m.abs() { *d } else { m }),
    })
}

pub fn sim_to_real_report(
    db: &PourDatabase,
    real_results: impl AsRef<std::path::Path>,
) -> Result<SimToRealReport, AnalysisError> {
    let path = real_results.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| AnalysisError::Io(format!("{}: {e}", path.display())))?;
    compare_real(db, &read_real_pours(file)?)
}
