//! Microlending records: users, app usage, call/SMS events and loans.
//!
//! Records are loaded from delimiter-separated files ([`load_dataset`]) or
//! produced by the synthetic generator ([`generate_synthetic`]). Default labels
//! are derived from loan repayment behaviour by [`derive_labels`].

mod io;
mod synth;

use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

pub use io::{
    load_dataset, write_dataset, AppUsageColumns, CallColumns, DatasetPaths, FileReport,
    LoadOptions, LoadReport, LoanColumns, Rejection, Schema, UserColumns,
};
pub use synth::{generate_synthetic, generate_synthetic_with_truth, SynthSpec, SynthTruth};

/// Default repayment window: a loan unpaid 60 days after grant is a default.
pub const DEFAULT_WINDOW_DAYS: i64 = 60;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("missing input file {path}")]
    MissingFile { path: String },
    #[error("{file}: column '{column}' required by the schema is not in the header")]
    MissingColumn { file: String, column: String },
    #[error("{file}: {rejected} of {total} rows rejected, above the {tolerance} tolerance")]
    TooManyRejected {
        file: String,
        rejected: usize,
        total: usize,
        tolerance: f64,
    },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub age: Option<u32>,
    pub region: Option<String>,
    pub device_app_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppUsage {
    pub user_id: String,
    pub app_id: String,
    pub app_category: String,
    pub uses_per_week: f64,
    pub days_since_last_use: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Made,
    Received,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Call,
    Sms,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Made => "made",
            Direction::Received => "received",
        }
    }
}

impl CallKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CallKind::Call => "call",
            CallKind::Sms => "sms",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallEvent {
    pub user_id: String,
    pub direction: Direction,
    pub kind: CallKind,
    pub timestamp: NaiveDateTime,
    /// Seconds; always zero for SMS.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanRecord {
    pub user_id: String,
    pub grant_date: NaiveDate,
    pub amount: f64,
    pub repaid_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Good,
    Bad,
    Unlabeled,
}

impl Label {
    pub fn is_labeled(self) -> bool {
        !matches!(self, Label::Unlabeled)
    }
}

/// The four record lists of one dataset, validated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub users: Vec<UserRecord>,
    pub app_usage: Vec<AppUsage>,
    pub calls: Vec<CallEvent>,
    pub loans: Vec<LoanRecord>,
}

impl Dataset {
    /// Latest grant or repayment date in the loan file.
    pub fn latest_loan_date(&self) -> Option<NaiveDate> {
        self.loans
            .iter()
            .flat_map(|l| std::iter::once(l.grant_date).chain(l.repaid_date))
            .max()
    }
}

/// Assigns Good/Bad/Unlabeled to every user that holds a loan.
///
/// A loan is matured once `grant_date + window_days <= as_of`; loans granted
/// after `as_of` are ignored. A user is Bad when any matured loan was not repaid
/// within the window, Good when every matured loan was, and Unlabeled when no
/// loan has matured yet.
pub fn derive_labels(
    loans: &[LoanRecord],
    window_days: i64,
    as_of: NaiveDate,
) -> BTreeMap<String, Label> {
    let window = chrono::Duration::days(window_days);
    let mut labels = BTreeMap::new();
    for loan in loans {
        let entry = labels.entry(loan.user_id.clone()).or_insert(Label::Unlabeled);
        let due = loan.grant_date + window;
        if loan.grant_date > as_of || due > as_of {
            continue;
        }
        let on_time = loan.repaid_date.is_some_and(|r| r <= due);
        *entry = match (*entry, on_time) {
            (Label::Bad, _) | (_, false) => Label::Bad,
            (_, true) => Label::Good,
        };
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(n: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(n)
    }

    fn loan(user: &str, grant: i64, repaid: Option<i64>) -> LoanRecord {
        LoanRecord {
            user_id: user.to_string(),
            grant_date: day(grant),
            amount: 100.0,
            repaid_date: repaid.map(day),
        }
    }

    #[test]
    fn repaid_within_window_is_good() {
        let labels = derive_labels(&[loan("a", 0, Some(45))], 60, day(90));
        assert_eq!(labels["a"], Label::Good);
    }

    #[test]
    fn never_repaid_is_bad() {
        let labels = derive_labels(&[loan("a", 0, None)], 60, day(90));
        assert_eq!(labels["a"], Label::Bad);
    }

    #[test]
    fn immature_loan_is_unlabeled() {
        let labels = derive_labels(&[loan("a", 0, None)], 60, day(30));
        assert_eq!(labels["a"], Label::Unlabeled);
    }

    #[test]
    fn any_default_dominates() {
        let loans = [loan("a", 0, Some(59)), loan("a", 0, Some(75))];
        assert_eq!(derive_labels(&loans, 60, day(90))["a"], Label::Bad);
        let reversed = [loans[1].clone(), loans[0].clone()];
        assert_eq!(derive_labels(&reversed, 60, day(90))["a"], Label::Bad);
    }

    #[test]
    fn repayment_on_due_date_counts() {
        let labels = derive_labels(&[loan("a", 0, Some(60))], 60, day(60));
        assert_eq!(labels["a"], Label::Good);
    }

    #[test]
    fn empty_loans_give_empty_map() {
        assert!(derive_labels(&[], 60, day(0)).is_empty());
    }

    #[test]
    fn loans_after_as_of_are_ignored() {
        let loans = [loan("a", 0, Some(10)), loan("a", 200, None)];
        assert_eq!(derive_labels(&loans, 60, day(100))["a"], Label::Good);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn loans_strategy() -> impl Strategy<Value = Vec<LoanRecord>> {
            prop::collection::vec(
                (0u8..6, 0i64..200, prop::option::of(0i64..120)),
                0..40,
            )
            .prop_map(|rows| {
                rows.into_iter()
                    .map(|(u, g, r)| loan(&format!("u{u}"), g, r.map(|d| g + d)))
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn order_independent_and_matches_scan(
                loans in loans_strategy(),
                window in 1i64..90,
                as_of in 0i64..300,
                rot in 0usize..40,
            ) {
                let labels = derive_labels(&loans, window, day(as_of));
                let mut permuted = loans.clone();
                permuted.reverse();
                if !permuted.is_empty() {
                    let k = rot % permuted.len();
                    permuted.rotate_left(k);
                }
                prop_assert_eq!(&labels, &derive_labels(&permuted, window, day(as_of)));

                for (user, label) in &labels {
                    let mine: Vec<_> = loans.iter().filter(|l| &l.user_id == user).collect();
                    let matured: Vec<_> = mine
                        .iter()
                        .filter(|l| l.grant_date + chrono::Duration::days(window) <= day(as_of))
                        .collect();
                    let defaulted = matured.iter().any(|l| match l.repaid_date {
                        None => true,
                        Some(r) => r > l.grant_date + chrono::Duration::days(window),
                    });
                    let expected = if matured.is_empty() {
                        Label::Unlabeled
                    } else if defaulted {
                        Label::Bad
                    } else {
                        Label::Good
                    };
                    prop_assert_eq!(*label, expected);
                }
            }
        }
    }
}
