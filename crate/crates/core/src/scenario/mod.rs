//! Scripted end-to-end runs.
//!
//! A scenario file holds one event per line as `key=value` pairs:
//!
//! ```text
//! tick=3 actor=DIST-1 action=start-transport vid=VID-1 tid=TID-7 at=2021-03-01T02:00:00Z
//! ```
//!
//! `tick`, `actor`, `action` and `at` are common to every line; the rest
//! depend on the action. Values may be double-quoted to include spaces.
//! Blank lines and lines starting with `#` are ignored.

mod run;

pub use run::{
    derive_seed, parse_actors, run_scenario, validator_identities, AlertCounts,
    CertificateCounts, RejectionEntry, RunOutcome, RunReport, ScenarioConfig,
};

use std::path::Path;

use thiserror::Error;

use crate::identity::Directory;
use crate::telemetry::{
    generate_trace, parse_trace, Subject, TelemetryReading, TraceProfile,
    DEFAULT_INTERVAL_SECONDS,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: unknown actor `{actor}`")]
    Reference { line: usize, actor: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioEvent {
    pub line: usize,
    pub tick: u64,
    pub actor: String,
    pub at: i64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    DefineProduct {
        product_id: String,
    },
    RegisterLot {
        vid: String,
        product_id: String,
        vials: u32,
        manufactured_at: Option<i64>,
    },
    Dispatch {
        vid: String,
    },
    StartTransport {
        vid: String,
        tid: String,
    },
    ReceiveLot {
        vid: String,
        tid: String,
    },
    Store {
        vid: String,
        unit: String,
    },
    Thaw {
        vid: String,
        vials: Option<Vec<u32>>,
    },
    Puncture {
        vid: String,
        vial: u32,
    },
    Telemetry {
        readings: Vec<TelemetryReading>,
    },
    RegisterBeneficiary {
        bid: String,
        center: String,
        priority: u8,
    },
    RegisterSelf {
        center: String,
        priority: u8,
    },
    Schedule {
        day: i64,
        capacity: u32,
    },
    Administer {
        bid: String,
        vid: String,
        vial: u32,
    },
    ReportSideEffect {
        vid: String,
        text: String,
    },
    ReportAdverseEvent {
        vid: String,
        grade: u8,
        text: String,
    },
    IssueCert {
        bid: String,
    },
}

pub const ACTION_NAMES: [&str; 16] = [
    "define-product",
    "register-lot",
    "dispatch",
    "start-transport",
    "receive-lot",
    "store",
    "thaw",
    "puncture",
    "telemetry",
    "register-beneficiary",
    "register-self",
    "schedule",
    "administer",
    "report-side-effect",
    "report-adverse-event",
    "issue-cert",
];

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::DefineProduct { .. } => "define-product",
            Action::RegisterLot { .. } => "register-lot",
            Action::Dispatch { .. } => "dispatch",
            Action::StartTransport { .. } => "start-transport",
            Action::ReceiveLot { .. } => "receive-lot",
            Action::Store { .. } => "store",
            Action::Thaw { .. } => "thaw",
            Action::Puncture { .. } => "puncture",
            Action::Telemetry { .. } => "telemetry",
            Action::RegisterBeneficiary { .. } => "register-beneficiary",
            Action::RegisterSelf { .. } => "register-self",
            Action::Schedule { .. } => "schedule",
            Action::Administer { .. } => "administer",
            Action::ReportSideEffect { .. } => "report-side-effect",
            Action::ReportAdverseEvent { .. } => "report-adverse-event",
            Action::IssueCert { .. } => "issue-cert",
        }
    }
}

struct Token<'a> {
    column: usize,
    key: &'a str,
    value: String,
}

fn tokenize(line: &str) -> Result<Vec<Token<'_>>, (usize, String)> {
    let mut out = Vec::new();
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i] != b'=' && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= bytes.len() || bytes[i] != b'=' || i == start {
            return Err((start + 1, format!("expected key=value at `{}`", &line[start..i])));
        }
        let key = &line[start..i];
        i += 1;
        let value = if bytes.get(i) == Some(&b'"') {
            let open = i;
            i += 1;
            let body = i;
            while i < bytes.len() && bytes[i] != b'"' {
                i += 1;
            }
            if i >= bytes.len() {
                return Err((open + 1, "unterminated quoted value".into()));
            }
            let v = line[body..i].to_string();
            i += 1;
            v
        } else {
            let body = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            line[body..i].to_string()
        };
        out.push(Token {
            column: start + 1,
            key,
            value,
        });
    }
    Ok(out)
}

struct Fields<'a> {
    line: usize,
    tokens: Vec<Token<'a>>,
    used: Vec<bool>,
    action: String,
}

impl<'a> Fields<'a> {
    fn err<T>(&self, column: usize, message: String) -> Result<T, ScenarioError> {
        Err(ScenarioError::Parse {
            line: self.line,
            column,
            message,
        })
    }

    fn find(&mut self, key: &str) -> Option<(usize, String)> {
        let i = self.tokens.iter().position(|t| t.key == key)?;
        self.used[i] = true;
        Some((self.tokens[i].column, self.tokens[i].value.clone()))
    }

    fn opt<T>(
        &mut self,
        key: &str,
        parse: impl FnOnce(&str) -> Result<T, String>,
    ) -> Result<Option<T>, ScenarioError> {
        match self.find(key) {
            None => Ok(None),
            Some((col, v)) => match parse(&v) {
                Ok(x) => Ok(Some(x)),
                Err(m) => self.err(col, format!("field `{key}`: {m}")),
            },
        }
    }

    fn req<T>(
        &mut self,
        key: &str,
        parse: impl FnOnce(&str) -> Result<T, String>,
    ) -> Result<T, ScenarioError> {
        match self.opt(key, parse)? {
            Some(v) => Ok(v),
            None => self.err(
                1,
                format!("action `{}` is missing field `{key}`", self.action),
            ),
        }
    }

    fn string(&mut self, key: &str) -> Result<String, ScenarioError> {
        self.req(key, nonempty)
    }

    fn finish(&self) -> Result<(), ScenarioError> {
        match self.used.iter().position(|u| !u) {
            Some(i) => self.err(
                self.tokens[i].column,
                format!(
                    "field `{}` is not used by action `{}`",
                    self.tokens[i].key, self.action
                ),
            ),
            None => Ok(()),
        }
    }
}

fn nonempty(s: &str) -> Result<String, String> {
    if s.is_empty() {
        Err("empty value".into())
    } else {
        Ok(s.to_string())
    }
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| format!("`{s}`: {e}"))
}

fn timestamp(s: &str) -> Result<i64, String> {
    crate::parse_timestamp(s).ok_or_else(|| format!("`{s}` is not a date, date-time or epoch seconds"))
}

fn day(s: &str) -> Result<i64, String> {
    crate::parse_day(s).ok_or_else(|| format!("`{s}` is not a date"))
}

/// `90`, `90s`, `30m`, `7h` or `2d`, in seconds.
pub fn parse_duration(s: &str) -> Result<u64, String> {
    let (digits, unit) = match s.char_indices().find(|(_, c)| !c.is_ascii_digit()) {
        Some((i, _)) => s.split_at(i),
        None => (s, "s"),
    };
    let n: u64 = digits.parse().map_err(|_| format!("`{s}` is not a duration"))?;
    let mul = match unit {
        "s" => 1,
        "m" => 60,
        "h" => 3_600,
        "d" => 86_400,
        _ => return Err(format!("unknown duration unit in `{s}`")),
    };
    Ok(n * mul)
}

/// `5`, `5.0`, `-70.5` degrees Celsius, in tenths.
pub fn parse_celsius(s: &str) -> Result<i32, String> {
    let bad = || format!("`{s}` is not a temperature with at most one decimal");
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (whole, frac) = body.split_once('.').unwrap_or((body, "0"));
    if whole.is_empty() || frac.len() != 1 {
        return Err(bad());
    }
    let whole: i32 = whole.parse().map_err(|_| bad())?;
    let frac: i32 = frac.parse().map_err(|_| bad())?;
    let v = whole.checked_mul(10).and_then(|w| w.checked_add(frac)).ok_or_else(bad)?;
    Ok(if neg { -v } else { v })
}

fn index_list(s: &str) -> Result<Vec<u32>, String> {
    s.split(',').map(num::<u32>).collect()
}

/// Parses scenario text. Trace files named by `file=` are resolved against
/// `base_dir`.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<Vec<ScenarioEvent>, ScenarioError> {
    let mut events: Vec<ScenarioEvent> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens = tokenize(raw).map_err(|(column, message)| ScenarioError::Parse {
            line,
            column,
            message,
        })?;
        let used = vec![false; tokens.len()];
        let mut f = Fields {
            line,
            tokens,
            used,
            action: String::new(),
        };
        if let Some(dup) = f
            .tokens
            .iter()
            .enumerate()
            .find(|(i, t)| f.tokens[..*i].iter().any(|o| o.key == t.key))
            .map(|(_, t)| t)
        {
            return f.err(dup.column, format!("field `{}` given twice", dup.key));
        }
        let (acol, action) = match f.find("action") {
            Some(a) => a,
            None => return f.err(1, "missing field `action`".into()),
        };
        if !ACTION_NAMES.contains(&action.as_str()) {
            return f.err(acol, format!("unknown action `{action}`"));
        }
        f.action = action.clone();
        let tick: u64 = f.req("tick", num)?;
        if let Some(prev) = events.last() {
            if tick < prev.tick {
                return f.err(1, format!("tick {tick} precedes tick {} of line {}", prev.tick, prev.line));
            }
        }
        let actor = f.string("actor")?;
        let at = f.req("at", timestamp)?;
        let action = match action.as_str() {
            "define-product" => Action::DefineProduct {
                product_id: f.string("product")?,
            },
            "register-lot" => Action::RegisterLot {
                vid: f.string("vid")?,
                product_id: f.string("product")?,
                vials: f.req("vials", num)?,
                manufactured_at: f.opt("manufactured", timestamp)?,
            },
            "dispatch" => Action::Dispatch {
                vid: f.string("vid")?,
            },
            "start-transport" => Action::StartTransport {
                vid: f.string("vid")?,
                tid: f.string("tid")?,
            },
            "receive-lot" => Action::ReceiveLot {
                vid: f.string("vid")?,
                tid: f.string("tid")?,
            },
            "store" => Action::Store {
                vid: f.string("vid")?,
                unit: f.string("unit")?,
            },
            "thaw" => Action::Thaw {
                vid: f.string("vid")?,
                vials: f.opt("vials", index_list)?,
            },
            "puncture" => Action::Puncture {
                vid: f.string("vid")?,
                vial: f.req("vial", num)?,
            },
            "telemetry" => Action::Telemetry {
                readings: telemetry(&mut f, base_dir)?,
            },
            "register-beneficiary" => Action::RegisterBeneficiary {
                bid: f.string("bid")?,
                center: f.string("center")?,
                priority: f.opt("priority", num)?.unwrap_or(0),
            },
            "register-self" => Action::RegisterSelf {
                center: f.string("center")?,
                priority: f.opt("priority", num)?.unwrap_or(0),
            },
            "schedule" => Action::Schedule {
                day: f.req("day", day)?,
                capacity: f.req("capacity", num)?,
            },
            "administer" => Action::Administer {
                bid: f.string("bid")?,
                vid: f.string("vid")?,
                vial: f.req("vial", num)?,
            },
            "report-side-effect" => Action::ReportSideEffect {
                vid: f.string("vid")?,
                text: f.opt("text", |s| Ok(s.to_string()))?.unwrap_or_default(),
            },
            "report-adverse-event" => Action::ReportAdverseEvent {
                vid: f.string("vid")?,
                grade: f.req("grade", num)?,
                text: f.opt("text", |s| Ok(s.to_string()))?.unwrap_or_default(),
            },
            "issue-cert" => Action::IssueCert {
                bid: f.string("bid")?,
            },
            _ => unreachable!("action names checked above"),
        };
        f.finish()?;
        events.push(ScenarioEvent {
            line,
            tick,
            actor,
            at,
            action,
        });
    }
    Ok(events)
}

/// Either `file=<trace>` or an inline constant trace:
/// `subject=unit:U-1 start=<time> duration=7h temp=5.0 [interval=600] [noise=0] [seed=0]`.
fn telemetry(f: &mut Fields<'_>, base_dir: &Path) -> Result<Vec<TelemetryReading>, ScenarioError> {
    if let Some((col, file)) = f.find("file") {
        let path = base_dir.join(&file);
        let text = std::fs::read_to_string(&path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        return match parse_trace(&text) {
            Ok((_, readings)) if !readings.is_empty() => Ok(readings),
            Ok(_) => f.err(col, format!("trace file `{file}` has no readings")),
            Err(e) => f.err(col, format!("trace file `{file}`: {e}")),
        };
    }
    let subject: Subject = f.req("subject", |s| s.parse::<Subject>())?;
    let mut profile = TraceProfile::new(subject, f.req("temp", parse_celsius)?);
    profile.start_timestamp = f.req("start", timestamp)?;
    profile.interval_seconds = f
        .opt("interval", parse_duration)?
        .unwrap_or(DEFAULT_INTERVAL_SECONDS);
    profile.noise_amplitude_decic = f.opt("noise", parse_celsius)?.map_or(0, |n| n.unsigned_abs());
    profile.seed = f.opt("seed", num)?.unwrap_or(0);
    let duration = f.req("duration", parse_duration)?;
    generate_trace(&profile, duration).or_else(|e| f.err(1, e.to_string()))
}

/// Reads a scenario file, resolving trace references next to it.
pub fn parse_scenario_file(path: &Path) -> Result<Vec<ScenarioEvent>, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scenario(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Checks that every event names a known actor.
pub fn check_actors(events: &[ScenarioEvent], dir: &Directory) -> Result<(), ScenarioError> {
    match events.iter().find(|e| dir.get(&e.actor).is_none()) {
        Some(e) => Err(ScenarioError::Reference {
            line: e.line,
            actor: e.actor.clone(),
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<ScenarioEvent>, ScenarioError> {
        parse_scenario(text, Path::new("."))
    }

    #[test]
    fn empty_and_comments() {
        assert_eq!(parse("").unwrap(), vec![]);
        assert_eq!(parse("# nothing\n\n   \n").unwrap(), vec![]);
    }

    #[test]
    fn administer_without_vial() {
        let err = parse("tick=1 actor=DOC-1 action=administer bid=B vid=V at=2021-03-01").unwrap_err();
        match err {
            ScenarioError::Parse { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("`vial`"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_action_and_column() {
        let err = parse("\ntick=1 actor=X action=teleport at=0").unwrap_err();
        assert_eq!(
            err,
            ScenarioError::Parse {
                line: 2,
                column: 16,
                message: "unknown action `teleport`".into()
            }
        );
    }

    #[test]
    fn quoted_values_and_extras() {
        let ev = parse(
            "tick=0 actor=B action=report-side-effect vid=V text=\"sore arm\" at=2021-03-01T10:00:00Z",
        )
        .unwrap();
        assert_eq!(
            ev[0].action,
            Action::ReportSideEffect {
                vid: "V".into(),
                text: "sore arm".into()
            }
        );
        let err = parse("tick=0 actor=B action=dispatch vid=V colour=red at=0").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { column: 38, .. }), "{err:?}");
        assert!(parse("tick=2 actor=A action=dispatch vid=V at=0\ntick=1 actor=A action=dispatch vid=V at=0").is_err());
    }

    #[test]
    fn inline_telemetry() {
        let ev = parse(
            "tick=0 actor=C action=telemetry subject=unit:U-1 start=2021-03-01 duration=1h temp=5.0 at=2021-03-01T01:00:00Z",
        )
        .unwrap();
        let Action::Telemetry { readings } = &ev[0].action else {
            panic!()
        };
        assert_eq!(readings.len(), 6);
        assert!(readings.iter().all(|r| r.temperature_decic == 50));
    }

    #[test]
    fn units() {
        assert_eq!(parse_duration("7h"), Ok(25_200));
        assert_eq!(parse_duration("90"), Ok(90));
        assert!(parse_duration("7w").is_err());
        assert_eq!(parse_celsius("-70.5"), Ok(-705));
        assert_eq!(parse_celsius("+25"), Ok(250));
        assert!(parse_celsius("2.55").is_err());
    }
}
