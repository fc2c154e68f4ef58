//! Features from the user's own records: sociodemographics and calling
//! behaviour.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use super::{Column, Group, ScoringError};
use crate::data::{CallEvent, CallKind, Direction, LoanRecord, UserRecord};

/// Day-type by time-of-day partition of the week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BucketPartition {
    pub weekend: Vec<Weekday>,
    /// Increasing hour boundaries from 0 to 24.
    pub hour_bounds: Vec<u32>,
    /// One name per time-of-day interval.
    pub names: Vec<String>,
}

impl Default for BucketPartition {
    fn default() -> Self {
        BucketPartition {
            weekend: vec![Weekday::Sat, Weekday::Sun],
            hour_bounds: vec![0, 6, 12, 18, 24],
            names: ["night", "morning", "afternoon", "evening"].map(String::from).to_vec(),
        }
    }
}

impl BucketPartition {
    pub fn validate(&self) -> Result<(), ScoringError> {
        let b = &self.hour_bounds;
        if b.first() != Some(&0) || b.last() != Some(&24) || b.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ScoringError::InvalidConfig("hour bounds must rise strictly from 0 to 24".into()));
        }
        if self.names.len() + 1 != b.len() {
            return Err(ScoringError::InvalidConfig("need one bucket name per hour interval".into()));
        }
        if self.names.iter().collect::<BTreeSet<_>>().len() != self.names.len() {
            return Err(ScoringError::InvalidConfig("bucket names must be unique".into()));
        }
        Ok(())
    }

    fn slot(&self, t: NaiveDateTime) -> (usize, usize) {
        let weekend = self.weekend.contains(&t.weekday()) as usize;
        let hour = t.hour();
        let bucket = self.hour_bounds.windows(2).position(|w| hour >= w[0] && hour < w[1]).expect("partition covers the day");
        (weekend, bucket)
    }
}

/// First grant date per user.
pub fn first_grant_dates(loans: &[LoanRecord]) -> BTreeMap<String, NaiveDate> {
    let mut first: BTreeMap<String, NaiveDate> = BTreeMap::new();
    for loan in loans {
        first
            .entry(loan.user_id.clone())
            .and_modify(|d| *d = (*d).min(loan.grant_date))
            .or_insert(loan.grant_date);
    }
    first
}

const DIRECTIONS: [Direction; 2] = [Direction::Made, Direction::Received];
const KINDS: [CallKind; 2] = [CallKind::Call, CallKind::Sms];
const DAY_TYPES: [&str; 2] = ["weekday", "weekend"];

/// Count and total duration of calls and texts per direction, kind, day type
/// and time-of-day bucket, one row per entry of `ids`.
///
/// Only events strictly before the user's `cutoff` date (typically the first
/// loan grant) are used; users without a cutoff keep all events. Events of
/// users outside `ids` are ignored.
pub fn build_behavior_features(
    calls: &[CallEvent],
    ids: &[String],
    cutoff: &BTreeMap<String, NaiveDate>,
    partition: &BucketPartition,
) -> Result<Vec<Column>, ScoringError> {
    partition.validate()?;
    let buckets = partition.names.len();
    let cells = DIRECTIONS.len() * KINDS.len() * DAY_TYPES.len() * buckets;
    let cell = |d: usize, k: usize, w: usize, b: usize| ((d * KINDS.len() + k) * DAY_TYPES.len() + w) * buckets + b;

    let row_of: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut events: Vec<(usize, usize, f64)> = Vec::new();
    for e in calls {
        let Some(&row) = row_of.get(e.user_id.as_str()) else { continue };
        if cutoff.get(&e.user_id).is_some_and(|c| e.timestamp.date() >= *c) {
            continue;
        }
        let d = DIRECTIONS.iter().position(|&x| x == e.direction).unwrap();
        let k = KINDS.iter().position(|&x| x == e.kind).unwrap();
        let (w, b) = partition.slot(e.timestamp);
        events.push((row, cell(d, k, w, b), e.duration));
    }
    // a fixed summation order keeps totals independent of the input order
    events.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));

    let mut counts = vec![vec![0.0; ids.len()]; cells];
    let mut durations = vec![vec![0.0; ids.len()]; cells];
    for (row, c, duration) in events {
        counts[c][row] += 1.0;
        durations[c][row] += duration;
    }

    let mut columns = Vec::with_capacity(2 * cells);
    for (d, dir) in DIRECTIONS.iter().enumerate() {
        for (k, kind) in KINDS.iter().enumerate() {
            for (w, day) in DAY_TYPES.iter().enumerate() {
                for (b, bucket) in partition.names.iter().enumerate() {
                    let c = cell(d, k, w, b);
                    let stem = format!("{}_{}_{day}_{bucket}", dir.as_str(), kind.as_str());
                    columns.push(Column::complete(format!("{stem}_count"), Group::Behavior, std::mem::take(&mut counts[c])));
                    columns.push(Column::complete(
                        format!("{stem}_duration"),
                        Group::Behavior,
                        std::mem::take(&mut durations[c]),
                    ));
                }
            }
        }
    }
    Ok(columns)
}

/// Age, installed-app count and one-hot region, one row per entry of `ids`.
pub fn build_sociodemographic_features(users: &[UserRecord], ids: &[String]) -> Vec<Column> {
    let by_id: HashMap<&str, &UserRecord> = users.iter().map(|u| (u.user_id.as_str(), u)).collect();
    let rows: Vec<Option<&UserRecord>> = ids.iter().map(|id| by_id.get(id.as_str()).copied()).collect();
    let regions: BTreeSet<&str> = users.iter().filter_map(|u| u.region.as_deref()).collect();

    let mut columns = vec![
        Column::optional("age", Group::Sociodemographic, rows.iter().map(|u| u.and_then(|u| u.age).map(f64::from))),
        Column::optional(
            "device_app_count",
            Group::Sociodemographic,
            rows.iter().map(|u| u.map(|u| f64::from(u.device_app_count))),
        ),
    ];
    for region in regions {
        let values = rows
            .iter()
            .map(|u| u.and_then(|u| u.region.as_deref()).map(|r| if r == region { 1.0 } else { 0.0 }))
            .collect::<Vec<_>>();
        columns.push(Column::optional(format!("region_{region}"), Group::Sociodemographic, values));
    }
    columns
}
