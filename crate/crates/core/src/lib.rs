//! Replicated vaccination supply-chain ledger.
//!
//! `ledger` holds the hash-chained block log, `contract` the deterministic
//! state machine applied to it, `coldchain` the per-product temperature
//! rules, `consensus` the round-robin replication simulator and `scenario`
//! the scripted end-to-end runs used by the CLI.

pub mod certificates;
pub mod codec;
pub mod coldchain;
pub mod consensus;
pub mod contract;
pub mod identity;
pub mod ledger;
pub mod scenario;
pub mod telemetry;
pub mod testkit;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

const DAY: i64 = 86_400;

/// `YYYY-MM-DD` for a count of days since the Unix epoch.
pub fn days_to_date(days: i64) -> String {
    DateTime::from_timestamp(days.saturating_mul(DAY), 0)
        .map(|d| d.format("%Y-%m-%d").to_string())
        .unwrap_or_else(|| format!("day {days}"))
}

/// `YYYY-MM-DDTHH:MM:SSZ` for epoch seconds.
pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

/// Parses a UTC date (`2021-03-01`), date-time (`2021-03-01T08:30:00`,
/// optional trailing `Z`) or raw epoch seconds.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(n) = s.parse::<i64>() {
        return Some(n);
    }
    let s = s.strip_suffix('Z').unwrap_or(s);
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Some(dt.and_utc().timestamp());
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M") {
        return Some(dt.and_utc().timestamp());
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

/// Days since the epoch for a date string or epoch seconds.
pub fn parse_day(s: &str) -> Option<i64> {
    parse_timestamp(s).map(|t| t.div_euclid(DAY))
}
