use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{AppUsage, CallEvent, CallKind, DataError, Dataset, Direction, LoanRecord, UserRecord};

const DATE_FORMAT: &str = "%Y-%m-%d";
const DATETIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub users: PathBuf,
    pub app_usage: PathBuf,
    pub calls: PathBuf,
    pub loans: PathBuf,
}

impl DatasetPaths {
    /// The conventional file names inside one directory.
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            users: dir.join("users.csv"),
            app_usage: dir.join("app_usage.csv"),
            calls: dir.join("calls.csv"),
            loans: dir.join("loans.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserColumns {
    pub user_id: String,
    pub age: String,
    pub region: String,
    pub device_app_count: String,
}

impl Default for UserColumns {
    fn default() -> Self {
        UserColumns {
            user_id: "user_id".into(),
            age: "age".into(),
            region: "region".into(),
            device_app_count: "device_app_count".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppUsageColumns {
    pub user_id: String,
    pub app_id: String,
    pub app_category: String,
    pub uses_per_week: String,
    pub days_since_last_use: String,
}

impl Default for AppUsageColumns {
    fn default() -> Self {
        AppUsageColumns {
            user_id: "user_id".into(),
            app_id: "app_id".into(),
            app_category: "app_category".into(),
            uses_per_week: "uses_per_week".into(),
            days_since_last_use: "days_since_last_use".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CallColumns {
    pub user_id: String,
    pub direction: String,
    pub kind: String,
    pub timestamp: String,
    pub duration: String,
}

impl Default for CallColumns {
    fn default() -> Self {
        CallColumns {
            user_id: "user_id".into(),
            direction: "direction".into(),
            kind: "kind".into(),
            timestamp: "timestamp".into(),
            duration: "duration".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoanColumns {
    pub user_id: String,
    pub grant_date: String,
    pub amount: String,
    pub repaid_date: String,
}

impl Default for LoanColumns {
    fn default() -> Self {
        LoanColumns {
            user_id: "user_id".into(),
            grant_date: "grant_date".into(),
            amount: "amount".into(),
            repaid_date: "repaid_date".into(),
        }
    }
}

/// Maps each record field onto a header name, so exports with other column
/// names can be read without rewriting them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub delimiter: char,
    pub users: UserColumns,
    pub app_usage: AppUsageColumns,
    pub calls: CallColumns,
    pub loans: LoanColumns,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            delimiter: ',',
            users: UserColumns::default(),
            app_usage: AppUsageColumns::default(),
            calls: CallColumns::default(),
            loans: LoanColumns::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Fraction of rejected rows per file above which loading aborts.
    pub rejection_tolerance: f64,
    /// Allowed loan amounts; `None` accepts any positive amount.
    pub amount_menu: Option<Vec<f64>>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            rejection_tolerance: 0.01,
            amount_menu: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line number in the file, counting the header.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub file: String,
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub files: Vec<FileReport>,
}

/// Column positions of a header, looked up by mapped name.
struct Header {
    file: String,
    positions: Vec<usize>,
}

impl Header {
    fn resolve(file: &str, header: &csv::StringRecord, names: &[&str]) -> Result<Self, DataError> {
        let positions = names
            .iter()
            .map(|name| {
                header
                    .iter()
                    .position(|h| h.trim() == *name)
                    .ok_or_else(|| DataError::MissingColumn {
                        file: file.to_string(),
                        column: name.to_string(),
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(Header {
            file: file.to_string(),
            positions,
        })
    }

    fn field<'r>(&self, record: &'r csv::StringRecord, i: usize) -> Result<&'r str, String> {
        record
            .get(self.positions[i])
            .map(str::trim)
            .ok_or_else(|| format!("row has {} fields, expected more", record.len()))
    }
}

fn read_file<T>(
    path: &Path,
    file: &str,
    delimiter: char,
    columns: &[&str],
    tolerance: f64,
    mut parse: impl FnMut(&Header, &csv::StringRecord) -> Result<T, String>,
) -> Result<(Vec<T>, FileReport), DataError> {
    if !path.is_file() {
        return Err(DataError::MissingFile {
            path: path.display().to_string(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter as u8)
        .flexible(true)
        .from_reader(File::open(path)?);
    let header = Header::resolve(file, reader.headers()?, columns)?;

    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    let mut total = 0usize;
    for (i, result) in reader.records().enumerate() {
        total += 1;
        let line = i as u64 + 2;
        let outcome = result
            .map_err(|e| e.to_string())
            .and_then(|record| parse(&header, &record));
        match outcome {
            Ok(row) => rows.push(row),
            Err(reason) => {
                log::warn!(target: "data", "{file}:{line}: rejected: {reason}");
                rejected.push(Rejection { line, reason });
            }
        }
    }
    if rejected.len() as f64 > tolerance * total as f64 {
        return Err(DataError::TooManyRejected {
            file: header.file,
            rejected: rejected.len(),
            total,
            tolerance,
        });
    }
    log::info!(target: "data", "{file}: {} rows accepted, {} rejected", rows.len(), rejected.len());
    let report = FileReport {
        file: file.to_string(),
        accepted: rows.len(),
        rejected,
    };
    Ok((rows, report))
}

fn parse_f64(s: &str, what: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{what}: '{s}' is not a number"))?;
    if !v.is_finite() {
        return Err(format!("{what}: '{s}' is not finite"));
    }
    Ok(v)
}

fn parse_nonneg(s: &str, what: &str) -> Result<f64, String> {
    let v = parse_f64(s, what)?;
    if v < 0.0 {
        return Err(format!("{what}: {v} is negative"));
    }
    Ok(v)
}

fn parse_date(s: &str, what: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, DATE_FORMAT).map_err(|_| format!("{what}: '{s}' is not an ISO-8601 date"))
}

fn parse_datetime(s: &str) -> Result<NaiveDateTime, String> {
    NaiveDateTime::parse_from_str(s, DATETIME_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .map_err(|_| format!("timestamp: '{s}' is not an ISO-8601 datetime"))
}

fn non_empty(s: &str, what: &str) -> Result<String, String> {
    if s.is_empty() {
        Err(format!("{what} is empty"))
    } else {
        Ok(s.to_string())
    }
}

/// Reads and validates the four input files.
///
/// Rows violating a record invariant are rejected and logged; a file whose
/// rejected fraction exceeds `options.rejection_tolerance` aborts the load.
pub fn load_dataset(
    paths: &DatasetPaths,
    schema: &Schema,
    options: &LoadOptions,
) -> Result<(Dataset, LoadReport), DataError> {
    let tol = options.rejection_tolerance;
    let d = schema.delimiter;

    let c = &schema.users;
    let mut seen_users = HashSet::new();
    let (users, users_report) = read_file(
        &paths.users,
        "users",
        d,
        &[&c.user_id, &c.age, &c.region, &c.device_app_count],
        tol,
        |h, r| {
            let user_id = non_empty(h.field(r, 0)?, "user_id")?;
            let age = match h.field(r, 1)? {
                "" => None,
                s => {
                    let age: u32 = s.parse().map_err(|_| format!("age: '{s}' is not an integer"))?;
                    if !(18..=120).contains(&age) {
                        return Err(format!("age {age} outside [18, 120]"));
                    }
                    Some(age)
                }
            };
            let region = match h.field(r, 2)? {
                "" => None,
                s => Some(s.to_string()),
            };
            let count = h.field(r, 3)?;
            let device_app_count: u32 = count
                .parse()
                .map_err(|_| format!("device_app_count: '{count}' is not a nonnegative integer"))?;
            if !seen_users.insert(user_id.clone()) {
                return Err(format!("duplicate user_id {user_id}"));
            }
            Ok(UserRecord {
                user_id,
                age,
                region,
                device_app_count,
            })
        },
    )?;

    let c = &schema.app_usage;
    let mut seen_pairs = HashSet::new();
    let (app_usage, usage_report) = read_file(
        &paths.app_usage,
        "app_usage",
        d,
        &[&c.user_id, &c.app_id, &c.app_category, &c.uses_per_week, &c.days_since_last_use],
        tol,
        |h, r| {
            let user_id = non_empty(h.field(r, 0)?, "user_id")?;
            let app_id = non_empty(h.field(r, 1)?, "app_id")?;
            let app_category = h.field(r, 2)?.to_string();
            let uses_per_week = parse_nonneg(h.field(r, 3)?, "uses_per_week")?;
            let days_since_last_use = parse_nonneg(h.field(r, 4)?, "days_since_last_use")?;
            if !seen_pairs.insert((user_id.clone(), app_id.clone())) {
                return Err(format!("duplicate (user_id, app_id) = ({user_id}, {app_id})"));
            }
            Ok(AppUsage {
                user_id,
                app_id,
                app_category,
                uses_per_week,
                days_since_last_use,
            })
        },
    )?;

    let c = &schema.calls;
    let (calls, calls_report) = read_file(
        &paths.calls,
        "calls",
        d,
        &[&c.user_id, &c.direction, &c.kind, &c.timestamp, &c.duration],
        tol,
        |h, r| {
            let user_id = non_empty(h.field(r, 0)?, "user_id")?;
            let direction = match h.field(r, 1)? {
                "made" => Direction::Made,
                "received" => Direction::Received,
                s => return Err(format!("direction: '{s}' is not made/received")),
            };
            let kind = match h.field(r, 2)? {
                "call" => CallKind::Call,
                "sms" => CallKind::Sms,
                s => return Err(format!("kind: '{s}' is not call/sms")),
            };
            let timestamp = parse_datetime(h.field(r, 3)?)?;
            let duration = parse_nonneg(h.field(r, 4)?, "duration")?;
            if kind == CallKind::Sms && duration != 0.0 {
                return Err(format!("sms with nonzero duration {duration}"));
            }
            Ok(CallEvent {
                user_id,
                direction,
                kind,
                timestamp,
                duration,
            })
        },
    )?;

    let c = &schema.loans;
    let menu = options.amount_menu.as_deref();
    let (loans, loans_report) = read_file(
        &paths.loans,
        "loans",
        d,
        &[&c.user_id, &c.grant_date, &c.amount, &c.repaid_date],
        tol,
        |h, r| {
            let user_id = non_empty(h.field(r, 0)?, "user_id")?;
            let grant_date = parse_date(h.field(r, 1)?, "grant_date")?;
            let amount = parse_f64(h.field(r, 2)?, "amount")?;
            if amount <= 0.0 {
                return Err(format!("amount {amount} is not positive"));
            }
            if let Some(menu) = menu {
                if !menu.contains(&amount) {
                    return Err(format!("amount {amount} not in the loan menu"));
                }
            }
            let repaid_date = match h.field(r, 3)? {
                "" => None,
                s => Some(parse_date(s, "repaid_date")?),
            };
            if repaid_date.is_some_and(|rd| rd < grant_date) {
                return Err("repaid_date before grant_date".to_string());
            }
            Ok(LoanRecord {
                user_id,
                grant_date,
                amount,
                repaid_date,
            })
        },
    )?;

    let dataset = Dataset {
        users,
        app_usage,
        calls,
        loans,
    };
    let report = LoadReport {
        files: vec![users_report, usage_report, calls_report, loans_report],
    };
    Ok((dataset, report))
}

/// Writes a dataset in the default schema (comma-separated, header row).
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetPaths, DataError> {
    std::fs::create_dir_all(dir)?;
    let paths = DatasetPaths::in_dir(dir);

    let mut w = csv::Writer::from_path(&paths.users)?;
    w.write_record(["user_id", "age", "region", "device_app_count"])?;
    for u in &dataset.users {
        w.write_record([
            u.user_id.clone(),
            u.age.map(|a| a.to_string()).unwrap_or_default(),
            u.region.clone().unwrap_or_default(),
            u.device_app_count.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&paths.app_usage)?;
    w.write_record(["user_id", "app_id", "app_category", "uses_per_week", "days_since_last_use"])?;
    for a in &dataset.app_usage {
        w.write_record([
            a.user_id.clone(),
            a.app_id.clone(),
            a.app_category.clone(),
            a.uses_per_week.to_string(),
            a.days_since_last_use.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&paths.calls)?;
    w.write_record(["user_id", "direction", "kind", "timestamp", "duration"])?;
    for c in &dataset.calls {
        w.write_record([
            c.user_id.clone(),
            c.direction.as_str().to_string(),
            c.kind.as_str().to_string(),
            c.timestamp.format(DATETIME_FORMAT).to_string(),
            c.duration.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&paths.loans)?;
    w.write_record(["user_id", "grant_date", "amount", "repaid_date"])?;
    for l in &dataset.loans {
        w.write_record([
            l.user_id.clone(),
            l.grant_date.format(DATE_FORMAT).to_string(),
            l.amount.to_string(),
            l.repaid_date
                .map(|d| d.format(DATE_FORMAT).to_string())
                .unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    Ok(paths)
}
