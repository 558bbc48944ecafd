//! Cold-chain storage rules and per-vial excursion accounting.
//!
//! Temperatures are integer tenths of a degree Celsius ("decic") so that
//! window bounds are exact: an exclusive bound such as `(8, 25]` becomes the
//! inclusive decic range `[81, 250]`.

mod eval;
mod profiles;

pub use eval::{evaluate_excursion, expiry_check, transition_phase};
pub use profiles::{builtin_profiles, profiles_from_toml, profiles_to_toml, ProfileError};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_HOUR: u64 = 3_600;
pub const SECONDS_PER_DAY: u64 = 86_400;

/// Default cumulative out-of-window allowance per phase.
pub const DEFAULT_GRACE_SECONDS: u64 = 30 * 60;
/// Default light budget outside the frozen phase.
pub const DEFAULT_LIGHT_BUDGET_SECONDS: u64 = 60 * 60;
/// Default punctured-vial lifetime where the source table gives none.
pub const DEFAULT_PUNCTURED_BUDGET_SECONDS: u64 = 6 * SECONDS_PER_HOUR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    FrozenPreUse,
    ThawedUnpunctured,
    Punctured,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::FrozenPreUse, Phase::ThawedUnpunctured, Phase::Punctured];

    pub fn name(self) -> &'static str {
        match self {
            Phase::FrozenPreUse => "frozen",
            Phase::ThawedUnpunctured => "thawed-unpunctured",
            Phase::Punctured => "punctured",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Phase::FrozenPreUse => 0,
            Phase::ThawedUnpunctured => 1,
            Phase::Punctured => 2,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseEvent {
    Thaw,
    Puncture,
}

/// Inclusive temperature range in tenths of a degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TempWindow {
    pub low_decic: i32,
    pub high_decic: i32,
}

impl TempWindow {
    pub const fn new(low_decic: i32, high_decic: i32) -> Self {
        Self {
            low_decic,
            high_decic,
        }
    }

    pub fn contains(&self, decic: i32) -> bool {
        self.low_decic <= decic && decic <= self.high_decic
    }

    fn overlaps(&self, other: &TempWindow) -> bool {
        self.low_decic <= other.high_decic && other.low_decic <= self.high_decic
    }
}

impl fmt::Display for TempWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}]",
            format_decic(self.low_decic),
            format_decic(self.high_decic)
        )
    }
}

pub fn format_decic(decic: i32) -> String {
    let sign = if decic < 0 { "-" } else { "" };
    format!("{sign}{}.{}C", decic.abs() / 10, decic.abs() % 10)
}

/// One allowed temperature window with an optional cumulative dwell budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionRule {
    #[serde(flatten)]
    pub window: TempWindow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_seconds: Option<u64>,
}

impl ConditionRule {
    pub const fn unlimited(low_decic: i32, high_decic: i32) -> Self {
        Self {
            window: TempWindow::new(low_decic, high_decic),
            budget_seconds: None,
        }
    }

    pub const fn budgeted(low_decic: i32, high_decic: i32, budget_seconds: u64) -> Self {
        Self {
            window: TempWindow::new(low_decic, high_decic),
            budget_seconds: Some(budget_seconds),
        }
    }
}

/// Rules for one phase. A reading strictly below `hard_floor_decic` or
/// strictly above `hard_ceiling_decic` spoils the vial immediately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRules {
    pub rules: Vec<ConditionRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_floor_decic: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_ceiling_decic: Option<i32>,
    #[serde(default = "default_grace")]
    pub grace_seconds: u64,
    #[serde(default = "default_light_budget")]
    pub light_budget_seconds: u64,
}

fn default_grace() -> u64 {
    DEFAULT_GRACE_SECONDS
}

fn default_light_budget() -> u64 {
    DEFAULT_LIGHT_BUDGET_SECONDS
}

impl PhaseRules {
    pub fn new(rules: Vec<ConditionRule>) -> Self {
        Self {
            rules,
            hard_floor_decic: None,
            hard_ceiling_decic: None,
            grace_seconds: DEFAULT_GRACE_SECONDS,
            light_budget_seconds: DEFAULT_LIGHT_BUDGET_SECONDS,
        }
    }

    pub fn with_floor(mut self, decic: i32) -> Self {
        self.hard_floor_decic = Some(decic);
        self
    }

    pub fn with_ceiling(mut self, decic: i32) -> Self {
        self.hard_ceiling_decic = Some(decic);
        self
    }

    pub fn with_light_budget(mut self, seconds: u64) -> Self {
        self.light_budget_seconds = seconds;
        self
    }

    pub fn window_of(&self, decic: i32) -> Option<&ConditionRule> {
        self.rules.iter().find(|r| r.window.contains(decic))
    }
}

/// Per-phase rule blocks. Products without a frozen phase leave
/// `frozen_pre_use` empty and start life thawed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhaseTable {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_pre_use: Option<PhaseRules>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thawed_unpunctured: Option<PhaseRules>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub punctured: Option<PhaseRules>,
}

impl PhaseTable {
    pub fn get(&self, phase: Phase) -> Option<&PhaseRules> {
        match phase {
            Phase::FrozenPreUse => self.frozen_pre_use.as_ref(),
            Phase::ThawedUnpunctured => self.thawed_unpunctured.as_ref(),
            Phase::Punctured => self.punctured.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaccineProduct {
    pub product_id: String,
    pub display_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeze_forbidden_below_decic: Option<i32>,
    pub light_protected: bool,
    pub doses_per_vial: u32,
    pub dose_interval_days: u32,
    pub shelf_life_days: u32,
    pub phases: PhaseTable,
}

impl VaccineProduct {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseRules> {
        self.phases.get(phase)
    }

    pub fn has_frozen_phase(&self) -> bool {
        self.phases.frozen_pre_use.is_some()
    }

    pub fn initial_phase(&self) -> Phase {
        if self.has_frozen_phase() {
            Phase::FrozenPreUse
        } else {
            Phase::ThawedUnpunctured
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let bad = |msg: String| ProfileError::Invalid {
            product: self.product_id.clone(),
            message: msg,
        };
        if self.product_id.is_empty() {
            return Err(bad("empty product id".into()));
        }
        if self.doses_per_vial == 0 || self.dose_interval_days == 0 || self.shelf_life_days == 0 {
            return Err(bad(
                "doses_per_vial, dose_interval_days and shelf_life_days must be positive".into(),
            ));
        }
        if self.phases.thawed_unpunctured.is_none() || self.phases.punctured.is_none() {
            return Err(bad("thawed_unpunctured and punctured phases are required".into()));
        }
        for phase in Phase::ALL {
            let Some(rules) = self.phase(phase) else {
                continue;
            };
            if rules.rules.is_empty() {
                return Err(bad(format!("phase {phase} has no rules")));
            }
            for (i, r) in rules.rules.iter().enumerate() {
                if r.window.low_decic > r.window.high_decic {
                    return Err(bad(format!("phase {phase}: window {} is inverted", r.window)));
                }
                if r.budget_seconds == Some(0) {
                    return Err(bad(format!("phase {phase}: zero budget on {}", r.window)));
                }
                for other in &rules.rules[i + 1..] {
                    if r.window.overlaps(&other.window) {
                        return Err(bad(format!(
                            "phase {phase}: windows {} and {} overlap",
                            r.window, other.window
                        )));
                    }
                }
            }
            if rules.grace_seconds == 0 {
                return Err(bad(format!("phase {phase}: grace budget must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VialId {
    pub vid: String,
    pub index: u32,
}

impl fmt::Display for VialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.vid, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpoilReason {
    BudgetExhausted { window: TempWindow },
    GraceExhausted,
    BelowHardFloor { reading_decic: i32 },
    AboveHardCeiling { reading_decic: i32 },
    Frozen { reading_decic: i32 },
}

impl fmt::Display for SpoilReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpoilReason::BudgetExhausted { window } => {
                write!(f, "dwell budget for {window} exhausted")
            }
            SpoilReason::GraceExhausted => f.write_str("out-of-range grace budget exhausted"),
            SpoilReason::BelowHardFloor { reading_decic } => {
                write!(f, "reading {} below hard floor", format_decic(*reading_decic))
            }
            SpoilReason::AboveHardCeiling { reading_decic } => {
                write!(f, "reading {} above hard ceiling", format_decic(*reading_decic))
            }
            SpoilReason::Frozen { reading_decic } => {
                write!(f, "reading {} on a do-not-freeze product", format_decic(*reading_decic))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum VialStatus {
    Usable,
    Spoiled(SpoilReason),
    Administered,
    Expired,
}

impl VialStatus {
    pub fn is_usable(&self) -> bool {
        matches!(self, VialStatus::Usable)
    }

    pub fn label(&self) -> &'static str {
        match self {
            VialStatus::Usable => "usable",
            VialStatus::Spoiled(_) => "spoiled",
            VialStatus::Administered => "administered",
            VialStatus::Expired => "expired",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowBudget {
    pub window: TempWindow,
    pub remaining_seconds: u64,
}

/// The most recent reading; it holds until the next one arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldReading {
    pub timestamp: i64,
    pub temperature_decic: i32,
    pub light_exposed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VialState {
    pub vial_id: VialId,
    pub phase: Phase,
    pub status: VialStatus,
    pub phase_entered_at: i64,
    pub last_evaluated_at: i64,
    /// Remaining dwell per budgeted window of the current phase.
    pub budgets: Vec<WindowBudget>,
    pub grace_remaining_seconds: u64,
    /// Lifetime light exposure.
    pub light_exposure_seconds: u64,
    /// Light exposure since entering the current phase.
    pub phase_light_seconds: u64,
    pub light_alerted: bool,
    pub in_excursion: bool,
    pub held: Option<HeldReading>,
    pub doses_administered: u32,
}

impl VialState {
    /// Fresh vial in the product's initial phase.
    pub fn new(product: &VaccineProduct, vid: &str, index: u32, at: i64) -> Self {
        let mut state = Self {
            vial_id: VialId {
                vid: vid.to_string(),
                index,
            },
            phase: product.initial_phase(),
            status: VialStatus::Usable,
            phase_entered_at: at,
            last_evaluated_at: at,
            budgets: Vec::new(),
            grace_remaining_seconds: 0,
            light_exposure_seconds: 0,
            phase_light_seconds: 0,
            light_alerted: false,
            in_excursion: false,
            held: None,
            doses_administered: 0,
        };
        state.enter_phase(product, state.phase, at);
        state
    }

    pub(crate) fn enter_phase(&mut self, product: &VaccineProduct, phase: Phase, at: i64) {
        let rules = product.phase(phase);
        self.phase = phase;
        self.phase_entered_at = at;
        self.last_evaluated_at = self.last_evaluated_at.max(at);
        self.budgets = rules
            .map(|r| {
                r.rules
                    .iter()
                    .filter_map(|rule| {
                        rule.budget_seconds.map(|b| WindowBudget {
                            window: rule.window,
                            remaining_seconds: b,
                        })
                    })
                    .collect()
            })
            .unwrap_or_default();
        self.grace_remaining_seconds = rules.map_or(DEFAULT_GRACE_SECONDS, |r| r.grace_seconds);
        self.phase_light_seconds = 0;
        self.light_alerted = false;
        self.in_excursion = false;
        self.held = None;
    }

    pub fn budget_for(&self, window: TempWindow) -> Option<u64> {
        self.budgets
            .iter()
            .find(|b| b.window == window)
            .map(|b| b.remaining_seconds)
    }

    pub fn doses_remaining(&self, product: &VaccineProduct) -> u32 {
        product.doses_per_vial.saturating_sub(self.doses_administered)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Warning,
    Critical,
}

impl Severity {
    pub fn name(self) -> &'static str {
        match self {
            Severity::Warning => "warning",
            Severity::Critical => "critical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcursionAlert {
    pub timestamp: i64,
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExcursionResult {
    pub updated_state: VialState,
    pub alerts: Vec<ExcursionAlert>,
    pub spoiled: Option<SpoilReason>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ColdChainError {
    #[error("readings out of order at index {index}")]
    Unsorted { index: usize },
    #[error("reading at {timestamp} precedes last evaluated time {last_evaluated_at}")]
    Stale {
        timestamp: i64,
        last_evaluated_at: i64,
    },
    #[error("vial {vial} is {status}, not usable")]
    NotUsable { vial: String, status: &'static str },
    #[error("illegal transition {event:?} from phase {from}")]
    IllegalTransition { from: Phase, event: PhaseEvent },
    #[error("product {0} has no frozen phase")]
    NoFrozenPhase(String),
    #[error("product {product} has no rules for phase {phase}")]
    MissingPhase { product: String, phase: Phase },
}
