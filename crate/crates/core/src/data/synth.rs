//! Synthetic microlending populations with a planted app-cluster default signal.
//!
//! Apps are partitioned into clusters and every user frequently uses apps from
//! one primary cluster. Each cluster carries a default-risk multiplier; the
//! planted signal strength `s` mixes it with an individual multiplier driven by
//! age and night-time phone activity:
//!
//! `p(default) ∝ (1 - s) * individual + s * cluster`
//!
//! With `s = 0` app adoption is independent of the labels.

use std::collections::{BTreeMap, HashSet};

use chrono::{Duration, NaiveDate, NaiveTime};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use super::{AppUsage, CallEvent, CallKind, DataError, Dataset, Direction, LoanRecord, UserRecord};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub users: usize,
    pub apps: usize,
    pub app_clusters: usize,
    /// Relative weight of each app category in the catalog.
    pub category_mix: BTreeMap<String, f64>,
    /// Planted-signal strength in [0, 1].
    pub signal_strength: f64,
    pub base_default_rate: f64,
    /// Log-scale spread of the per-cluster risk multipliers.
    pub risk_dispersion: f64,
    /// Mean number of apps a user uses at least once a week.
    pub frequent_apps_per_user: f64,
    /// Mean number of installed but rarely used apps.
    pub casual_apps_per_user: f64,
    /// Probability that a frequently used app comes from the user's own cluster.
    pub cluster_loyalty: f64,
    pub calls_per_user: f64,
    pub loan_amounts: Vec<f64>,
    pub observation_end: NaiveDate,
    /// Share of users whose only loan has not matured by `observation_end`.
    pub unlabeled_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let category_mix = [
            ("social", 3.0),
            ("games", 3.0),
            ("tools", 2.0),
            ("entertainment", 2.0),
            ("finance", 1.0),
            ("shopping", 1.0),
            ("news", 1.0),
            ("productivity", 1.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        SynthSpec {
            users: 5000,
            apps: 400,
            app_clusters: 20,
            category_mix,
            signal_strength: 0.8,
            base_default_rate: 0.15,
            risk_dispersion: 1.5,
            frequent_apps_per_user: 3.0,
            casual_apps_per_user: 6.0,
            cluster_loyalty: 0.85,
            calls_per_user: 40.0,
            loan_amounts: vec![50.0, 100.0, 200.0, 500.0],
            observation_end: NaiveDate::from_ymd_opt(2019, 12, 31).unwrap(),
            unlabeled_fraction: 0.03,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: &str| Err(DataError::InvalidSpec(msg.to_string()));
        if self.users < 10 {
            return bad("at least 10 users are required");
        }
        if self.apps == 0 || self.app_clusters == 0 || self.app_clusters > self.apps {
            return bad("need 1 <= app_clusters <= apps");
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return bad("signal_strength must lie in [0, 1]");
        }
        if !(self.base_default_rate > 0.0 && self.base_default_rate < 1.0) {
            return bad("base_default_rate must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.cluster_loyalty) || !(0.0..1.0).contains(&self.unlabeled_fraction) {
            return bad("cluster_loyalty and unlabeled_fraction must be probabilities");
        }
        if self.frequent_apps_per_user < 1.0 || self.casual_apps_per_user < 0.0 || self.calls_per_user < 0.0 {
            return bad("app and call counts must be nonnegative (frequent apps >= 1)");
        }
        if self.risk_dispersion < 0.0 {
            return bad("risk_dispersion must be nonnegative");
        }
        if self.loan_amounts.is_empty() || self.loan_amounts.iter().any(|a| *a <= 0.0) {
            return bad("loan_amounts must be a nonempty list of positive amounts");
        }
        if self.category_mix.is_empty() || self.category_mix.values().any(|w| *w < 0.0) || self.category_mix.values().sum::<f64>() <= 0.0 {
            return bad("category_mix needs nonnegative weights with a positive sum");
        }
        Ok(())
    }
}

/// Latent quantities behind a synthetic dataset, indexed like `Dataset::users`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub cluster: Vec<usize>,
    pub default_probability: Vec<f64>,
    pub cluster_multiplier: Vec<f64>,
    /// App index → cluster.
    pub app_cluster: Vec<usize>,
}

pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<Dataset, DataError> {
    generate_synthetic_with_truth(spec, seed).map(|(ds, _)| ds)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Evenly spaced quantiles of a unit-variance logistic distribution.
fn spread_quantiles(k: usize) -> Vec<f64> {
    let scale = 3f64.sqrt() / std::f64::consts::PI;
    (0..k)
        .map(|i| {
            let u = (i as f64 + 0.5) / k as f64;
            scale * (u / (1.0 - u)).ln()
        })
        .collect()
}

/// Finds the scale `c` with `mean(min(c * raw, cap)) = target`.
fn calibrate(raw: &[f64], target: f64, cap: f64) -> Vec<f64> {
    let mean_at = |c: f64| raw.iter().map(|r| (c * r).min(cap)).sum::<f64>() / raw.len() as f64;
    let (mut lo, mut hi) = (0.0, 1.0);
    while mean_at(hi) < target && hi < 1e6 {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    raw.iter().map(|r| (hi * r).min(cap)).collect()
}

pub fn generate_synthetic_with_truth(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(Dataset, SynthTruth), DataError> {
    spec.validate()?;
    let mut rng = seed::rng(seed);
    let n = spec.users;
    let end = spec.observation_end;

    // App catalog: round-robin clusters, categories drawn from the mix.
    let categories: Vec<(&String, f64)> = spec.category_mix.iter().map(|(k, v)| (k, *v)).collect();
    let total_weight: f64 = categories.iter().map(|c| c.1).sum();
    let app_ids: Vec<String> = (0..spec.apps).map(|i| format!("app{i:04}")).collect();
    let app_cluster: Vec<usize> = (0..spec.apps).map(|i| i % spec.app_clusters).collect();
    let app_category: Vec<String> = (0..spec.apps)
        .map(|_| {
            let mut x = rng.random::<f64>() * total_weight;
            for (name, w) in &categories {
                if x < *w {
                    return (*name).clone();
                }
                x -= w;
            }
            categories.last().unwrap().0.clone()
        })
        .collect();
    let mut cluster_apps = vec![Vec::new(); spec.app_clusters];
    for (a, &c) in app_cluster.iter().enumerate() {
        cluster_apps[c].push(a);
    }

    let mut cluster_multiplier: Vec<f64> = spread_quantiles(spec.app_clusters)
        .into_iter()
        .map(|z| (spec.risk_dispersion * z).exp())
        .collect();
    cluster_multiplier.shuffle(&mut rng);
    let mean_m = cluster_multiplier.iter().sum::<f64>() / spec.app_clusters as f64;
    cluster_multiplier.iter_mut().for_each(|m| *m /= mean_m);

    // Users and individual risk.
    let mut cluster = Vec::with_capacity(n);
    let mut ages = Vec::with_capacity(n);
    let mut night = Vec::with_capacity(n);
    let mut users = Vec::with_capacity(n);
    for i in 0..n {
        cluster.push(rng.random_range(0..spec.app_clusters));
        let age: u32 = rng.random_range(18..=70);
        ages.push(age);
        night.push(rng.random::<f64>());
        users.push(UserRecord {
            user_id: format!("u{i:05}"),
            age: (rng.random::<f64>() >= 0.03).then_some(age),
            region: Some(format!("r{}", rng.random_range(1..=6))),
            device_app_count: 0,
        });
    }
    let mut individual: Vec<f64> = (0..n)
        .map(|i| (-0.03 * (ages[i] as f64 - 44.0)).exp() * (0.8 * (night[i] - 0.5)).exp())
        .collect();
    let mean_ind = individual.iter().sum::<f64>() / n as f64;
    individual.iter_mut().for_each(|d| *d /= mean_ind);
    let s = spec.signal_strength;
    let raw: Vec<f64> = (0..n)
        .map(|i| (1.0 - s) * individual[i] + s * cluster_multiplier[cluster[i]])
        .collect();
    let default_probability = calibrate(&raw, spec.base_default_rate, 0.95);
    let defaulter: Vec<bool> = default_probability
        .iter()
        .map(|p| rng.random::<f64>() < *p)
        .collect();

    // App usage.
    let frequent_extra = Poisson::new(spec.frequent_apps_per_user - 1.0).ok();
    let casual_count = Poisson::new(spec.casual_apps_per_user).ok();
    let extra_installs = Poisson::new(10.0).unwrap();
    let heavy_use = Exp::new(1.0 / 5.0).unwrap();
    let recent = Exp::new(1.0 / 1.5).unwrap();
    let stale = Exp::new(1.0 / 20.0).unwrap();
    let mut app_usage = Vec::new();
    for i in 0..n {
        let k_freq = 1 + frequent_extra.map_or(0, |d| d.sample(&mut rng) as usize);
        let k_freq = k_freq.min(spec.apps);
        let mut chosen = HashSet::new();
        let mut rows = Vec::new();
        let mut attempts = 0;
        while chosen.len() < k_freq && attempts < 50 * k_freq {
            attempts += 1;
            let app = if rng.random::<f64>() < spec.cluster_loyalty {
                let pool = &cluster_apps[cluster[i]];
                pool[rng.random_range(0..pool.len())]
            } else {
                rng.random_range(0..spec.apps)
            };
            if chosen.insert(app) {
                rows.push((app, round2(1.0 + heavy_use.sample(&mut rng)), round2(recent.sample(&mut rng))));
            }
        }
        let k_casual = casual_count.map_or(0, |d| d.sample(&mut rng) as usize);
        let k_casual = k_casual.min(spec.apps - chosen.len());
        let mut attempts = 0;
        let target = chosen.len() + k_casual;
        while chosen.len() < target && attempts < 50 * (k_casual + 1) {
            attempts += 1;
            let app = rng.random_range(0..spec.apps);
            if chosen.insert(app) {
                rows.push((app, round2(rng.random::<f64>() * 0.95), round2(stale.sample(&mut rng))));
            }
        }
        users[i].device_app_count = (rows.len() + extra_installs.sample(&mut rng) as usize) as u32;
        rows.sort_by_key(|r| r.0);
        for (app, uses, days) in rows {
            app_usage.push(AppUsage {
                user_id: users[i].user_id.clone(),
                app_id: app_ids[app].clone(),
                app_category: app_category[app].clone(),
                uses_per_week: uses,
                days_since_last_use: days,
            });
        }
    }

    // Loans: at most one open loan per user; all loans of labeled users mature
    // before `observation_end`.
    let mut loans = Vec::new();
    let mut first_grant = Vec::with_capacity(n);
    let days = |d: i64| Duration::days(d);
    for i in 0..n {
        let user_id = &users[i].user_id;
        let amount = |rng: &mut seed::Rng| spec.loan_amounts[rng.random_range(0..spec.loan_amounts.len())];
        if rng.random::<f64>() < spec.unlabeled_fraction {
            let grant = end - days(rng.random_range(0..59));
            first_grant.push(grant);
            loans.push(LoanRecord {
                user_id: user_id.clone(),
                grant_date: grant,
                amount: amount(&mut rng),
                repaid_date: None,
            });
            continue;
        }
        let mut grant = end - days(rng.random_range(90..=330));
        first_grant.push(grant);
        let planned = rng.random_range(1..=3);
        for k in 0..planned {
            let repay = grant + days(rng.random_range(7..=45));
            let next = repay + days(rng.random_range(3..=30));
            let last = k + 1 == planned || next + days(61) > end;
            if last && defaulter[i] {
                let late = grant + days(rng.random_range(61..=120));
                let repaid_date = (rng.random::<f64>() < 0.4 && late <= end).then_some(late);
                loans.push(LoanRecord {
                    user_id: user_id.clone(),
                    grant_date: grant,
                    amount: amount(&mut rng),
                    repaid_date,
                });
                break;
            }
            loans.push(LoanRecord {
                user_id: user_id.clone(),
                grant_date: grant,
                amount: amount(&mut rng),
                repaid_date: Some(repay),
            });
            if last {
                break;
            }
            grant = next;
        }
    }

    // Calls and SMS in the 90 days before the first loan.
    let call_count = Poisson::new(spec.calls_per_user.max(1e-9)).unwrap();
    let call_length = Exp::<f64>::new(1.0 / 90.0).unwrap();
    let mut calls = Vec::new();
    for i in 0..n {
        let k = if spec.calls_per_user > 0.0 { call_count.sample(&mut rng) as usize } else { 0 };
        let start = first_grant[i] - days(90);
        let mut events = Vec::with_capacity(k);
        for _ in 0..k {
            let day = start + days(rng.random_range(0..90));
            let hour = if rng.random::<f64>() < 0.1 + 0.4 * night[i] {
                rng.random_range(0..6)
            } else {
                rng.random_range(6..24)
            };
            let time = NaiveTime::from_hms_opt(hour, rng.random_range(0..60), rng.random_range(0..60)).unwrap();
            let direction = if rng.random::<bool>() { Direction::Made } else { Direction::Received };
            let kind = if rng.random::<f64>() < 0.6 { CallKind::Call } else { CallKind::Sms };
            let duration = match kind {
                CallKind::Call => 1.0 + call_length.sample(&mut rng).round(),
                CallKind::Sms => 0.0,
            };
            events.push(CallEvent {
                user_id: users[i].user_id.clone(),
                direction,
                kind,
                timestamp: day.and_time(time),
                duration,
            });
        }
        events.sort_by_key(|e| e.timestamp);
        calls.extend(events);
    }

    let dataset = Dataset {
        users,
        app_usage,
        calls,
        loans,
    };
    let truth = SynthTruth {
        cluster,
        default_probability,
        cluster_multiplier,
        app_cluster,
    };
    Ok((dataset, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{derive_labels, Label, DEFAULT_WINDOW_DAYS};

    fn small(users: usize) -> SynthSpec {
        SynthSpec {
            users,
            ..Default::default()
        }
    }

    fn default_rate(ds: &Dataset, end: NaiveDate) -> f64 {
        let labels = derive_labels(&ds.loans, DEFAULT_WINDOW_DAYS, end);
        let bad = labels.values().filter(|l| **l == Label::Bad).count();
        let good = labels.values().filter(|l| **l == Label::Good).count();
        bad as f64 / (bad + good) as f64
    }

    #[test]
    fn too_few_users_rejected() {
        assert!(matches!(generate_synthetic(&small(9), 1), Err(DataError::InvalidSpec(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small(200), 5).unwrap();
        let b = generate_synthetic(&small(200), 5).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(200), 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_rate_near_base_rate() {
        let spec = small(5000);
        let ds = generate_synthetic(&spec, 42).unwrap();
        let rate = default_rate(&ds, spec.observation_end);
        assert!((0.12..=0.18).contains(&rate), "rate {rate}");
    }

    #[test]
    fn records_satisfy_invariants() {
        let spec = small(500);
        let ds = generate_synthetic(&spec, 11).unwrap();
        let mut ids = HashSet::new();
        assert!(ds.users.iter().all(|u| ids.insert(u.user_id.clone())));
        assert!(ds.users.iter().all(|u| u.age.is_none_or(|a| (18..=120).contains(&a))));
        let mut pairs = HashSet::new();
        assert!(ds.app_usage.iter().all(|a| pairs.insert((a.user_id.clone(), a.app_id.clone()))));
        assert!(ds.calls.iter().all(|c| c.kind == CallKind::Call || c.duration == 0.0));
        assert!(ds.loans.iter().all(|l| l.repaid_date.is_none_or(|r| r >= l.grant_date)));
        assert!(ds.loans.iter().all(|l| spec.loan_amounts.contains(&l.amount)));

        // at most one open loan per user
        let mut by_user: BTreeMap<&str, Vec<&LoanRecord>> = BTreeMap::new();
        for l in &ds.loans {
            by_user.entry(&l.user_id).or_default().push(l);
        }
        for loans in by_user.values() {
            for w in loans.windows(2) {
                let repaid = w[0].repaid_date.expect("only the last loan may be open");
                assert!(w[1].grant_date > repaid);
            }
        }
    }

    #[test]
    fn zero_signal_decouples_clusters_from_default() {
        let spec = SynthSpec {
            signal_strength: 0.0,
            ..small(4000)
        };
        let (_, truth) = generate_synthetic_with_truth(&spec, 9).unwrap();
        let mut sums = vec![(0.0, 0usize); spec.app_clusters];
        for (c, p) in truth.cluster.iter().zip(&truth.default_probability) {
            sums[*c].0 += p;
            sums[*c].1 += 1;
        }
        let means: Vec<f64> = sums.iter().map(|(s, k)| s / *k as f64).collect();
        let spread = means.iter().cloned().fold(f64::MIN, f64::max) - means.iter().cloned().fold(f64::MAX, f64::min);
        // only sampling noise of the individual multiplier remains
        assert!(spread < 0.04, "cluster means {means:?}");
    }

    #[test]
    fn planted_signal_separates_clusters() {
        let spec = small(2000);
        let (_, truth) = generate_synthetic_with_truth(&spec, 3).unwrap();
        let max = truth.cluster_multiplier.iter().cloned().fold(f64::MIN, f64::max);
        let min = truth.cluster_multiplier.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min > 10.0);
        let mean = truth.cluster_multiplier.iter().sum::<f64>() / spec.app_clusters as f64;
        assert!((mean - 1.0).abs() < 1e-12);
    }
}
