//! Cheapest simulated pour for a measured start volume and a goal volume.
//!
//! The cost of a record is `|start_sim - start_real| + |received_sim - goal|
//! + spill_sim`, all in mL. Queries always return an existing record.

use crate::sweep::{PourDatabase, PourRecord};
use std::cmp::Ordering;
use std::io::{self, Write};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SelectError {
    #[error("invalid query: {0}")]
    Query(String),
    #[error("record is for '{record}' but the query is for '{query}'")]
    ContainerMismatch { record: String, query: String },
    #[error("the database has no records for '{0}'")]
    NoRecords(String),
    #[error("invalid cost-map grid: {0}")]
    Grid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PourQuery {
    pub container: String,
    /// mL
    pub v_start_real: f64,
    /// mL
    pub v_goal: f64,
}

impl PourQuery {
    pub fn new(container: &str, v_start_real: f64, v_goal: f64) -> Result<Self, SelectError> {
        if !(v_start_real.is_finite() && v_goal.is_finite()) || v_start_real < 0.0 || v_goal < 0.0 {
            return Err(SelectError::Query(
                "volumes must be finite and non-negative".into(),
            ));
        }
        if v_goal > v_start_real {
            return Err(SelectError::Query(format!(
                "goal {v_goal} mL exceeds the start volume {v_start_real} mL"
            )));
        }
        Ok(Self {
            container: container.to_string(),
            v_start_real,
            v_goal,
        })
    }
}

#[inline]
fn raw_cost(record: &PourRecord, v_start_real: f64, v_goal: f64) -> f64 {
    (record.params.v_start - v_start_real).abs()
        + (record.v_received - v_goal).abs()
        + record.v_spill
}

/// Cost of running `record` for `query`, mL.
pub fn cost(record: &PourRecord, query: &PourQuery) -> Result<f64, SelectError> {
    if record.params.container != query.container {
        return Err(SelectError::ContainerMismatch {
            record: record.params.container.clone(),
            query: query.container.clone(),
        });
    }
    Ok(raw_cost(record, query.v_start_real, query.v_goal))
}

/// Ranking used everywhere: cost, then spill, then stop angle, then index.
fn rank(a: (f64, &PourRecord, usize), b: (f64, &PourRecord, usize)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.v_spill.total_cmp(&b.1.v_spill))
        .then(
            a.1.params
                .theta_stop_deg
                .total_cmp(&b.1.params.theta_stop_deg),
        )
        .then(a.2.cmp(&b.2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection<'a> {
    /// Index into `db.records`.
    pub index: usize,
    pub record: &'a PourRecord,
    pub cost: f64,
}

fn best_of<'a>(
    candidates: impl Iterator<Item = (usize, &'a PourRecord)>,
    v_start_real: f64,
    v_goal: f64,
) -> Option<Selection<'a>> {
    candidates
        .map(|(index, record)| (raw_cost(record, v_start_real, v_goal), record, index))
        .min_by(|&a, &b| rank(a, b))
        .map(|(cost, record, index)| Selection {
            index,
            record,
            cost,
        })
}

/// Lowest-cost record for `query`; linear scan.
pub fn select_best<'a>(
    db: &'a PourDatabase,
    query: &PourQuery,
) -> Result<Selection<'a>, SelectError> {
    best_of(
        db.for_container(&query.container),
        query.v_start_real,
        query.v_goal,
    )
    .ok_or_else(|| SelectError::NoRecords(query.container.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostCell {
    pub v_start: f64,
    pub v_goal: f64,
    pub min_cost: f64,
    pub record_index: usize,
}

/// Minimum cost over a (start, goal) grid for one container.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    pub container: String,
    pub starts: Vec<f64>,
    /// Largest received volume in the database, mL; caps the goal axis.
    pub max_received: f64,
    /// Start-major, goals ascending from 0.
    pub cells: Vec<CostCell>,
}

pub const COST_MAP_HEADER: &str = "v_start_ml,v_goal_ml,min_cost_ml,record_index";

impl CostMap {
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut csv = csv::Writer::from_writer(out);
        csv.write_record(COST_MAP_HEADER.split(','))?;
        for c in &self.cells {
            csv.write_record([
                c.v_start.to_string(),
                c.v_goal.to_string(),
                c.min_cost.to_string(),
                c.record_index.to_string(),
            ])?;
        }
        csv.flush()
    }

    pub fn mean_cost(&self) -> f64 {
        self.cells.iter().map(|c| c.min_cost).sum::<f64>() / self.cells.len().max(1) as f64
    }
}

/// Goals `0, step, ...` up to `min(start, max_received)`.
fn goal_count(start: f64, max_received: f64, step: f64) -> usize {
    (start.min(max_received) / step + 1e-9).floor() as usize + 1
}

/// Cost map over starts `start_min, start_min + step, ... <= start_max`.
pub fn cost_map(
    db: &PourDatabase,
    container: &str,
    start_min: f64,
    start_max: f64,
    step: f64,
) -> Result<CostMap, SelectError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(SelectError::Grid("step must be positive".into()));
    }
    if !(start_min.is_finite() && start_max.is_finite()) || start_min < 0.0 || start_max < start_min
    {
        return Err(SelectError::Grid(format!(
            "start range {start_min}..{start_max} is empty or negative"
        )));
    }
    let records: Vec<(usize, &PourRecord)> = db.for_container(container).collect();
    if records.is_empty() {
        return Err(SelectError::NoRecords(container.to_string()));
    }
    let max_received = records
        .iter()
        .map(|(_, r)| r.v_received)
        .fold(0.0, f64::max);
    let n_starts = ((start_max - start_min) / step + 1e-9).floor() as usize + 1;
    let starts: Vec<f64> = (0..n_starts).map(|k| start_min + k as f64 * step).collect();
    let mut cells = Vec::new();
    for &s in &starts {
        for k in 0..goal_count(s, max_received, step) {
            let g = k as f64 * step;
            let best = best_of(records.iter().copied(), s, g).expect("non-empty");
            cells.push(CostCell {
                v_start: s,
                v_goal: g,
                min_cost: best.cost,
                record_index: best.index,
            });
        }
    }
    Ok(CostMap {
        container: container.to_string(),
        starts,
        max_received,
        cells,
    })
}

/// Cell count of a unit-step map with starts `0..=start_max` and goals
/// `0..=min(start, received_max)`.
pub fn triangular_cell_count(start_max: u64, received_max: u64) -> u64 {
    let r = received_max.min(start_max);
    (r + 1) * (r + 2) / 2 + (start_max - r) * (r + 1)
}

/// Largest goal `T` such that every goal on the `step` grid below `T` is
/// met within one step by some record with no spill.
pub fn zero_spill_threshold(db: &PourDatabase, container: &str, step: f64) -> Option<f64> {
    let mut clean: Vec<f64> = db
        .for_container(container)
        .filter(|(_, r)| r.v_spill == 0.0)
        .map(|(_, r)| r.v_received)
        .collect();
    if clean.is_empty() || step.is_nan() || step <= 0.0 {
        return None;
    }
    clean.sort_by(f64::total_cmp);
    let mut k = 0usize;
    loop {
        let g = k as f64 * step;
        let i = clean.partition_point(|&v| v < g - step);
        if i == clean.len() || clean[i] > g + step {
            return Some(g);
        }
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::{DatabaseMeta, PourParams, DB_VERSION};
    use proptest::prelude::*;

    fn record(container: &str, start: f64, received: f64, spill: f64, theta: f64) -> PourRecord {
        PourRecord {
            params: PourParams {
                container: container.into(),
                v_start: start,
                theta_stop_deg: theta,
                t_stop: 1.0,
                omega_deg_s: 30.0,
                seed: 0,
            },
            v_received: received,
            v_spill: spill,
            v_remaining: start - received - spill,
        }
    }

    fn db(records: Vec<PourRecord>) -> PourDatabase {
        PourDatabase {
            meta: DatabaseMeta {
                version: DB_VERSION.into(),
                particle_volume: 1.0,
                omega_deg_s: 30.0,
                spec_hash: String::new(),
            },
            records,
        }
    }

    fn q(start: f64, goal: f64) -> PourQuery {
        PourQuery::new("flask", start, goal).unwrap()
    }

    #[test]
    fn cost_examples() {
        assert_eq!(
            cost(&record("flask", 100.0, 50.0, 0.0, 90.0), &q(100.0, 50.0)),
            Ok(0.0)
        );
        assert_eq!(
            cost(&record("flask", 120.0, 45.0, 3.0, 90.0), &q(100.0, 50.0)),
            Ok(28.0)
        );
        assert_eq!(
            cost(&record("flask", 100.0, 50.0, 7.0, 90.0), &q(100.0, 50.0)),
            Ok(7.0)
        );
        assert!(matches!(
            cost(
                &record("media_bottle", 100.0, 50.0, 0.0, 90.0),
                &q(100.0, 50.0)
            ),
            Err(SelectError::ContainerMismatch { .. })
        ));
    }

    #[test]
    fn query_validation() {
        assert!(PourQuery::new("flask", 50.0, 60.0).is_err());
        assert!(PourQuery::new("flask", -1.0, 0.0).is_err());
        assert!(PourQuery::new("flask", 50.0, 50.0).is_ok());
    }

    #[test]
    fn exact_match_wins() {
        let d = db(vec![
            record("flask", 100.0, 40.0, 0.0, 60.0),
            record("flask", 100.0, 50.0, 0.0, 80.0),
            record("media_bottle", 100.0, 50.0, 0.0, 80.0),
        ]);
        let s = select_best(&d, &q(100.0, 50.0)).unwrap();
        assert_eq!((s.index, s.cost), (1, 0.0));
    }

    #[test]
    fn ties_prefer_less_spill_then_lower_angle() {
        // both cost 7
        let d = db(vec![
            record("flask", 100.0, 48.0, 5.0, 60.0),
            record("flask", 100.0, 45.0, 2.0, 90.0),
        ]);
        assert_eq!(select_best(&d, &q(100.0, 50.0)).unwrap().index, 1);
        let d = db(vec![
            record("flask", 100.0, 50.0, 0.0, 90.0),
            record("flask", 100.0, 50.0, 0.0, 60.0),
            record("flask", 100.0, 50.0, 0.0, 60.0),
        ]);
        assert_eq!(select_best(&d, &q(100.0, 50.0)).unwrap().index, 1);
    }

    #[test]
    fn missing_container() {
        let d = db(vec![record("flask", 100.0, 50.0, 0.0, 60.0)]);
        let query = PourQuery::new("media_bottle", 100.0, 50.0).unwrap();
        assert_eq!(
            select_best(&d, &query).unwrap_err(),
            SelectError::NoRecords("media_bottle".into())
        );
    }

    #[test]
    fn single_record_map() {
        let d = db(vec![record("flask", 100.0, 50.0, 0.0, 60.0)]);
        let map = cost_map(&d, "flask", 0.0, 100.0, 1.0).unwrap();
        let at = |s: f64, g: f64| {
            map.cells
                .iter()
                .find(|c| c.v_start == s && c.v_goal == g)
                .unwrap()
                .min_cost
        };
        assert_eq!(at(100.0, 50.0), 0.0);
        assert_eq!(at(90.0, 50.0), 10.0);
        assert_eq!(map.cells.len() as u64, triangular_cell_count(100, 50));
        assert!(map.cells.iter().all(|c| c.v_goal <= c.v_start));
    }

    #[test]
    fn closed_form_count() {
        let brute = |s: u64, r: u64| (0..=s).map(|x| x.min(r) + 1).sum::<u64>();
        for s in 0..40 {
            for r in 0..40 {
                assert_eq!(triangular_cell_count(s, r), brute(s, r), "{s} {r}");
            }
        }
        assert_eq!(triangular_cell_count(139, 124), 9750);
    }

    #[test]
    fn zero_spill_threshold_stops_at_first_gap() {
        let d = db(vec![
            record("flask", 100.0, 0.0, 0.0, 40.0),
            record("flask", 100.0, 2.0, 0.0, 50.0),
            record("flask", 100.0, 4.0, 0.0, 60.0),
            record("flask", 100.0, 9.0, 0.0, 70.0),
            record("flask", 100.0, 6.0, 3.0, 80.0),
        ]);
        // goals 0..=5 are within 1 mL of 0, 2 or 4; 6 is not
        assert_eq!(zero_spill_threshold(&d, "flask", 1.0), Some(6.0));
    }

    fn arb_db() -> impl Strategy<Value = PourDatabase> {
        let rec = (
            prop::sample::select(vec!["flask", "media_bottle"]),
            1u32..40,
            0u32..40,
            0u32..6,
            prop::sample::select(vec![40.0, 60.0, 90.0]),
        )
            .prop_map(|(c, s, r, sp, th)| {
                let s = s as f64 * 5.0;
                let r = (r as f64).min(s);
                let sp = (sp as f64).min(s - r);
                record(c, s, r, sp, th)
            });
        prop::collection::vec(rec, 1..60).prop_map(db)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn select_best_is_brute_force_argmin(d in arb_db(), s in 0u32..200, g in 0u32..200) {
            let (s, g) = (s as f64, (g.min(s)) as f64);
            let query = q(s, g);
            let mut best: Option<(f64, f64, f64, usize)> = None;
            for (i, r) in d.records.iter().enumerate() {
                if r.params.container != "flask" {
                    continue;
                }
                let key = (cost(r, &query).unwrap(), r.v_spill, r.params.theta_stop_deg, i);
                if best.is_none_or(|b| key.partial_cmp(&b) == Some(Ordering::Less)) {
                    best = Some(key);
                }
            }
            match (select_best(&d, &query), best) {
                (Ok(sel), Some(b)) => prop_assert_eq!((sel.cost, sel.index), (b.0, b.3)),
                (Err(SelectError::NoRecords(_)), None) => {}
                (got, want) => prop_assert!(false, "{:?} vs {:?}", got, want),
            }
        }

        #[test]
        fn adding_records_never_raises_a_cell(d in arb_db(), extra in arb_db()) {
            prop_assume!(d.records.iter().any(|r| r.params.container == "flask"));
            let before = cost_map(&d, "flask", 0.0, 60.0, 5.0).unwrap();
            let mut grown = d.clone();
            grown.records.extend(extra.records);
            let after = cost_map(&grown, "flask", 0.0, 60.0, 5.0).unwrap();
            for b in &before.cells {
                let a = after.cells.iter().find(|c| c.v_start == b.v_start && c.v_goal == b.v_goal);
                if let Some(a) = a {
                    prop_assert!(a.min_cost <= b.min_cost);
                }
            }
        }

        #[test]
        fn cost_is_zero_only_for_exact_clean_match(s in 1u32..100, r in 0u32..100, sp in 0u32..5, qs in 0u32..100, qg in 0u32..100) {
            let r = r.min(s);
            let sp = sp.min(s - r);
            let rec = record("flask", s as f64, r as f64, sp as f64, 60.0);
            let qg = qg.min(qs);
            let c = cost(&rec, &q(qs as f64, qg as f64)).unwrap();
            prop_assert!(c >= 0.0);
            prop_assert_eq!(c == 0.0, s == qs && r == qg && sp == 0);
        }
    }
}
