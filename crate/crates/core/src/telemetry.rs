//! Reproducible sensor traces for storage units and transport vehicles, and
//! their packaging into signed telemetry transactions.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, EncodeError, Reader, Writer};
use crate::identity::{ActorIdentity, Role};
use crate::ledger::{Payload, Transaction, TxKind};

pub const DEFAULT_INTERVAL_SECONDS: u64 = 600;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TelemetryError {
    #[error("trace profile: {0}")]
    Profile(String),
    #[error("batch: {0}")]
    Batch(String),
    #[error("{author} ({role}) may not record telemetry for {subject}")]
    Auth {
        author: String,
        role: Role,
        subject: String,
    },
    #[error("trace file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SubjectKind {
    Transport,
    StorageUnit,
}

/// A monitored location: a transport vehicle (TID) or a storage unit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Subject {
    pub kind: SubjectKind,
    pub id: String,
}

impl Subject {
    pub fn transport(tid: impl Into<String>) -> Self {
        Self {
            kind: SubjectKind::Transport,
            id: tid.into(),
        }
    }

    pub fn unit(unit_id: impl Into<String>) -> Self {
        Self {
            kind: SubjectKind::StorageUnit,
            id: unit_id.into(),
        }
    }
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SubjectKind::Transport => write!(f, "transport:{}", self.id),
            SubjectKind::StorageUnit => write!(f, "unit:{}", self.id),
        }
    }
}

impl FromStr for Subject {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, id) = s
            .split_once(':')
            .ok_or_else(|| format!("subject `{s}` must be `transport:<tid>` or `unit:<id>`"))?;
        if id.is_empty() {
            return Err(format!("subject `{s}` has an empty id"));
        }
        match kind {
            "transport" => Ok(Subject::transport(id)),
            "unit" => Ok(Subject::unit(id)),
            _ => Err(format!("unknown subject kind `{kind}`")),
        }
    }
}

impl Serialize for Subject {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Subject {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetryReading {
    pub subject: Subject,
    pub timestamp: i64,
    pub temperature_decic: i32,
    pub light_exposed: bool,
    pub humidity_pct: Option<u8>,
}

impl TelemetryReading {
    pub fn storage(unit: &str, timestamp: i64, temperature_decic: i32, light_exposed: bool) -> Self {
        Self {
            subject: Subject::unit(unit),
            timestamp,
            temperature_decic,
            light_exposed,
            humidity_pct: None,
        }
    }

    pub fn transport(
        tid: &str,
        timestamp: i64,
        temperature_decic: i32,
        light_exposed: bool,
        humidity_pct: Option<u8>,
    ) -> Self {
        Self {
            subject: Subject::transport(tid),
            timestamp,
            temperature_decic,
            light_exposed,
            humidity_pct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcursionSegment {
    pub start_offset: u64,
    pub duration: u64,
    pub temp_decic: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LightEvent {
    pub start_offset: u64,
    pub duration: u64,
}

/// Parameters of a synthetic trace. Noise is uniform on
/// `[-noise_amplitude_decic, +noise_amplitude_decic]`, drawn once per reading
/// from a ChaCha8 stream seeded with `seed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceProfile {
    pub subject: Subject,
    #[serde(default)]
    pub start_timestamp: i64,
    pub base_temp_decic: i32,
    #[serde(default)]
    pub noise_amplitude_decic: u32,
    #[serde(default = "default_interval")]
    pub interval_seconds: u64,
    #[serde(default, rename = "excursion", skip_serializing_if = "Vec::is_empty")]
    pub excursion_segments: Vec<ExcursionSegment>,
    #[serde(default, rename = "light", skip_serializing_if = "Vec::is_empty")]
    pub light_events: Vec<LightEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub humidity_pct: Option<u8>,
    #[serde(default)]
    pub seed: u64,
}

fn default_interval() -> u64 {
    DEFAULT_INTERVAL_SECONDS
}

impl TraceProfile {
    pub fn new(subject: Subject, base_temp_decic: i32) -> Self {
        Self {
            subject,
            start_timestamp: 0,
            base_temp_decic,
            noise_amplitude_decic: 0,
            interval_seconds: DEFAULT_INTERVAL_SECONDS,
            excursion_segments: Vec::new(),
            light_events: Vec::new(),
            humidity_pct: None,
            seed: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, TelemetryError> {
        toml::from_str(text).map_err(|e| TelemetryError::Profile(e.to_string()))
    }

    fn validate(&self, duration: u64) -> Result<(), TelemetryError> {
        let err = |m: String| Err(TelemetryError::Profile(m));
        if self.interval_seconds == 0 {
            return err("interval must be at least 1 s".into());
        }
        if duration < self.interval_seconds {
            return err(format!(
                "duration {duration} s is shorter than the interval {} s",
                self.interval_seconds
            ));
        }
        if self.start_timestamp < 0 {
            return err("start timestamp must be non-negative".into());
        }
        if self.humidity_pct.is_some_and(|h| h > 100) {
            return err("humidity must be within 0-100".into());
        }
        if self.humidity_pct.is_some() && self.subject.kind != SubjectKind::Transport {
            return err("humidity is recorded for transport subjects only".into());
        }
        let mut segs = self.excursion_segments.clone();
        segs.sort_by_key(|s| s.start_offset);
        for s in &segs {
            if s.duration == 0 || s.start_offset + s.duration > duration {
                return err(format!(
                    "segment at offset {} (+{} s) lies outside the {duration} s trace",
                    s.start_offset, s.duration
                ));
            }
        }
        for pair in segs.windows(2) {
            if pair[0].start_offset + pair[0].duration > pair[1].start_offset {
                return err(format!(
                    "excursion segments at offsets {} and {} overlap",
                    pair[0].start_offset, pair[1].start_offset
                ));
            }
        }
        Ok(())
    }
}

/// Generates readings at offsets `0, interval, 2*interval, ...` strictly
/// below `duration_seconds`.
pub fn generate_trace(
    profile: &TraceProfile,
    duration_seconds: u64,
) -> Result<Vec<TelemetryReading>, TelemetryError> {
    profile.validate(duration_seconds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let amp = profile.noise_amplitude_decic as i32;
    let mut out = Vec::with_capacity((duration_seconds / profile.interval_seconds) as usize);
    let mut offset = 0u64;
    while offset < duration_seconds {
        let noise = if amp == 0 { 0 } else { rng.gen_range(-amp..=amp) };
        let in_range = |start: u64, len: u64| start <= offset && offset < start + len;
        let base = profile
            .excursion_segments
            .iter()
            .find(|s| in_range(s.start_offset, s.duration))
            .map_or(profile.base_temp_decic, |s| s.temp_decic);
        out.push(TelemetryReading {
            subject: profile.subject.clone(),
            timestamp: profile.start_timestamp + offset as i64,
            temperature_decic: base + noise,
            light_exposed: profile
                .light_events
                .iter()
                .any(|l| in_range(l.start_offset, l.duration)),
            humidity_pct: profile.humidity_pct,
        });
        offset += profile.interval_seconds;
    }
    Ok(out)
}

/// Readings for one subject, as carried in a telemetry transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetryBatch {
    pub subject: Subject,
    pub readings: Vec<TelemetryReading>,
}

impl TelemetryBatch {
    pub fn new(readings: Vec<TelemetryReading>) -> Result<Self, TelemetryError> {
        let first = readings
            .first()
            .ok_or_else(|| TelemetryError::Batch("empty reading list".into()))?;
        let subject = first.subject.clone();
        if let Some(other) = readings.iter().find(|r| r.subject != subject) {
            return Err(TelemetryError::Batch(format!(
                "mixed subjects {subject} and {}",
                other.subject
            )));
        }
        if readings.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(TelemetryError::Batch(
                "timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self { subject, readings })
    }

    pub fn kind(&self) -> TxKind {
        match self.subject.kind {
            SubjectKind::Transport => TxKind::RecordTransportTelemetry,
            SubjectKind::StorageUnit => TxKind::RecordStorageTelemetry,
        }
    }
}

impl Canonical for TelemetryBatch {
    fn encode(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.u8(match self.subject.kind {
            SubjectKind::Transport => 1,
            SubjectKind::StorageUnit => 2,
        });
        w.str("subject", &self.subject.id)?;
        w.count("readings", self.readings.len())?;
        for r in &self.readings {
            w.timestamp("reading.timestamp", r.timestamp)?;
            w.i32(r.temperature_decic);
            w.bool(r.light_exposed);
            match r.humidity_pct {
                Some(h) => {
                    w.u8(1);
                    w.u8(h);
                }
                None => w.u8(0),
            }
        }
        Ok(())
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let kind = match r.u8()? {
            1 => SubjectKind::Transport,
            2 => SubjectKind::StorageUnit,
            _ => return Err(r.invalid("subject kind")),
        };
        let subject = Subject {
            kind,
            id: r.string()?,
        };
        let n = r.count(14)?;
        let mut readings = Vec::with_capacity(n);
        for _ in 0..n {
            let timestamp = r.timestamp()?;
            let temperature_decic = r.i32()?;
            let light_exposed = r.bool()?;
            let humidity_pct = match r.u8()? {
                0 => None,
                1 => Some(r.u8()?),
                _ => return Err(r.invalid("humidity flag")),
            };
            readings.push(TelemetryReading {
                subject: subject.clone(),
                timestamp,
                temperature_decic,
                light_exposed,
                humidity_pct,
            });
        }
        Ok(Self { subject, readings })
    }
}

/// Wraps readings into a signed telemetry transaction. Transport readings
/// must be recorded by a distributor and storage readings by a medical
/// center.
pub fn make_batch(
    readings: Vec<TelemetryReading>,
    author: &ActorIdentity,
) -> Result<Transaction, TelemetryError> {
    let batch = TelemetryBatch::new(readings)?;
    let required = match batch.subject.kind {
        SubjectKind::Transport => Role::Distributor,
        SubjectKind::StorageUnit => Role::MedicalCenter,
    };
    if author.role() != required {
        return Err(TelemetryError::Auth {
            author: author.actor_id().to_string(),
            role: author.role(),
            subject: batch.subject.to_string(),
        });
    }
    let timestamp = batch.readings.last().map_or(0, |r| r.timestamp);
    let kind = batch.kind();
    Ok(Transaction::sign(
        kind,
        Payload::TelemetryBatch(batch),
        author,
        timestamp,
    )?)
}

/// Writes the trace file format: a header line, then
/// `timestamp temp_decic light [humidity]` per reading.
pub fn write_trace(profile: &TraceProfile, readings: &[TelemetryReading]) -> String {
    let mut out = format!(
        "subject={} interval={} seed={}\n",
        profile.subject, profile.interval_seconds, profile.seed
    );
    for r in readings {
        out.push_str(&format!(
            "{} {} {}",
            r.timestamp,
            r.temperature_decic,
            u8::from(r.light_exposed)
        ));
        if let Some(h) = r.humidity_pct {
            out.push_str(&format!(" {h}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceHeader {
    pub subject: Subject,
    pub interval_seconds: u64,
    pub seed: u64,
}

pub fn parse_trace(text: &str) -> Result<(TraceHeader, Vec<TelemetryReading>), TelemetryError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let perr = |line: usize, message: String| TelemetryError::Parse { line, message };
    let (hline, header) = lines
        .next()
        .ok_or_else(|| perr(1, "missing header line".into()))?;
    let (mut subject, mut interval, mut seed) = (None, None, None);
    for tok in header.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| perr(hline, format!("expected key=value, got `{tok}`")))?;
        match k {
            "subject" => subject = Some(v.parse::<Subject>().map_err(|e| perr(hline, e))?),
            "interval" => {
                interval = Some(v.parse::<u64>().map_err(|e| perr(hline, e.to_string()))?)
            }
            "seed" => seed = Some(v.parse::<u64>().map_err(|e| perr(hline, e.to_string()))?),
            _ => return Err(perr(hline, format!("unknown header key `{k}`"))),
        }
    }
    let header = TraceHeader {
        subject: subject.ok_or_else(|| perr(hline, "header lacks subject".into()))?,
        interval_seconds: interval.ok_or_else(|| perr(hline, "header lacks interval".into()))?,
        seed: seed.unwrap_or(0),
    };
    let mut readings = Vec::new();
    for (ln, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if !(3..=4).contains(&f.len()) {
            return Err(perr(ln, format!("expected 3 or 4 fields, got {}", f.len())));
        }
        let num = |s: &str, what: &str| {
            s.parse::<i64>()
                .map_err(|_| perr(ln, format!("bad {what} `{s}`")))
        };
        let light = match f[2] {
            "0" => false,
            "1" => true,
            other => return Err(perr(ln, format!("bad light flag `{other}`"))),
        };
        let humidity_pct = match f.get(3) {
            Some(h) => Some(
                h.parse::<u8>()
                    .ok()
                    .filter(|h| *h <= 100)
                    .ok_or_else(|| perr(ln, format!("bad humidity `{h}`")))?,
            ),
            None => None,
        };
        let temp = num(f[1], "temperature")?;
        readings.push(TelemetryReading {
            subject: header.subject.clone(),
            timestamp: num(f[0], "timestamp")?,
            temperature_decic: i32::try_from(temp)
                .map_err(|_| perr(ln, format!("temperature `{temp}` out of range")))?,
            light_exposed: light,
            humidity_pct,
        });
    }
    Ok((header, readings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coldchain::{
        builtin_profiles, evaluate_excursion, transition_phase, PhaseEvent, TempWindow, VialState,
    };

    fn identity(role: Role, id: &str) -> ActorIdentity {
        ActorIdentity::from_seed(role, id, [3u8; 32])
    }

    #[test]
    fn generation_is_deterministic() {
        let mut p = TraceProfile::new(Subject::unit("U-1"), 50);
        p.noise_amplitude_decic = 7;
        p.seed = 99;
        let a = generate_trace(&p, 86_400).unwrap();
        assert_eq!(a, generate_trace(&p, 86_400).unwrap());
        assert!(a.iter().all(|r| (43..=57).contains(&r.temperature_decic)));
        p.seed = 100;
        assert_ne!(a, generate_trace(&p, 86_400).unwrap());
    }

    #[test]
    fn six_readings_per_hour_at_default_interval() {
        let p = TraceProfile::new(Subject::unit("U-1"), -700);
        let t = generate_trace(&p, 3_600).unwrap();
        assert_eq!(t.len(), 6);
        assert!(t.iter().all(|r| r.temperature_decic == -700));
        assert!(t.windows(2).all(|w| w[1].timestamp - w[0].timestamp == 600));
    }

    #[test]
    fn overlapping_or_outside_segments_are_rejected() {
        let mut p = TraceProfile::new(Subject::unit("U-1"), 50);
        p.excursion_segments = vec![
            ExcursionSegment { start_offset: 0, duration: 1200, temp_decic: 100 },
            ExcursionSegment { start_offset: 600, duration: 600, temp_decic: 120 },
        ];
        assert!(matches!(generate_trace(&p, 7200), Err(TelemetryError::Profile(_))));
        p.excursion_segments = vec![ExcursionSegment { start_offset: 7000, duration: 600, temp_decic: 1 }];
        assert!(matches!(generate_trace(&p, 7200), Err(TelemetryError::Profile(_))));
        p.excursion_segments.clear();
        p.interval_seconds = 0;
        assert!(matches!(generate_trace(&p, 7200), Err(TelemetryError::Profile(_))));
    }

    /// A two-hour segment at +15.0C, then back to +5.0C, uses exactly the
    /// two-hour (8, 25] budget of a thawed Pfizer vial.
    #[test]
    fn two_hour_segment_consumes_two_hours_of_room_temperature_budget() {
        let pfizer = builtin_profiles().remove(0);
        let mut p = TraceProfile::new(Subject::unit("U-1"), 50);
        p.excursion_segments = vec![ExcursionSegment {
            start_offset: 0,
            duration: 7_200,
            temp_decic: 150,
        }];
        let trace = generate_trace(&p, 4 * 3_600).unwrap();
        let v = VialState::new(&pfizer, "VID-1", 0, 0);
        let v = transition_phase(&pfizer, &v, PhaseEvent::Thaw, 0).unwrap();
        let res = evaluate_excursion(&pfizer, &v, &trace).unwrap();
        let room = TempWindow::new(81, 250);
        assert_eq!(res.updated_state.budget_for(room), Some(0));
        assert_eq!(res.alerts.last().unwrap().timestamp, 7_200);

        // The same segment at +5.0C stays inside [2, 8] and leaves the
        // room-temperature budget untouched.
        p.excursion_segments[0].temp_decic = 50;
        let trace = generate_trace(&p, 4 * 3_600).unwrap();
        let res = evaluate_excursion(&pfizer, &v, &trace).unwrap();
        assert_eq!(res.updated_state.budget_for(room), Some(7_200));
        assert_eq!(
            res.updated_state.budget_for(TempWindow::new(20, 80)),
            Some(120 * 3_600 - (4 * 3_600 - 600))
        );
    }

    #[test]
    fn make_batch_checks_subject_and_role() {
        let center = identity(Role::MedicalCenter, "CENTER-A");
        let readings: Vec<_> = (0..10)
            .map(|i| TelemetryReading::storage("U-1", i * 60, 50, false))
            .collect();
        let tx = make_batch(readings, &center).unwrap();
        assert_eq!(tx.kind, TxKind::RecordStorageTelemetry);
        assert_eq!(tx.timestamp, 540);

        let truck = vec![TelemetryReading::transport("TID-7", 0, -700, false, Some(40))];
        assert!(matches!(
            make_batch(truck, &center),
            Err(TelemetryError::Auth { .. })
        ));
        assert!(matches!(make_batch(vec![], &center), Err(TelemetryError::Batch(_))));

        let mixed = vec![
            TelemetryReading::storage("U-1", 0, 50, false),
            TelemetryReading::storage("U-2", 60, 50, false),
        ];
        assert!(matches!(make_batch(mixed, &center), Err(TelemetryError::Batch(_))));
    }

    #[test]
    fn trace_file_round_trip() {
        let mut p = TraceProfile::new(Subject::transport("TID-7"), -700);
        p.humidity_pct = Some(45);
        p.noise_amplitude_decic = 3;
        p.light_events = vec![LightEvent { start_offset: 0, duration: 1200 }];
        let t = generate_trace(&p, 7_200).unwrap();
        let (h, back) = parse_trace(&write_trace(&p, &t)).unwrap();
        assert_eq!(h.subject, p.subject);
        assert_eq!(h.interval_seconds, 600);
        assert_eq!(back, t);
    }

    #[test]
    fn profile_toml() {
        let text = r#"
            subject = "transport:TID-7"
            base_temp_decic = -700
            seed = 5
            humidity_pct = 40
            [[excursion]]
            start_offset = 600
            duration = 1200
            temp_decic = -500
        "#;
        let p = TraceProfile::from_toml(text).unwrap();
        assert_eq!(p.interval_seconds, 600);
        assert_eq!(p.excursion_segments.len(), 1);
        let t = generate_trace(&p, 3_600).unwrap();
        assert_eq!(t[1].temperature_decic, -500);
        assert_eq!(t[3].temperature_decic, -700);
    }

    proptest::proptest! {
        #[test]
        fn batch_payload_round_trips(
            temps in proptest::collection::vec(-900i32..400, 1..50),
            light in proptest::collection::vec(proptest::bool::ANY, 50),
            humid in proptest::option::of(0u8..=100),
        ) {
            let readings: Vec<_> = temps
                .iter()
                .enumerate()
                .map(|(i, t)| TelemetryReading::transport("TID-1", i as i64 * 61, *t, light[i], humid))
                .collect();
            let batch = TelemetryBatch::new(readings.clone()).unwrap();
            let bytes = batch.to_canonical_bytes().unwrap();
            let back = TelemetryBatch::from_canonical_bytes(&bytes).unwrap();
            proptest::prop_assert_eq!(back.readings, readings);
        }
    }
}
