use super::{
    format_decic, ColdChainError, ExcursionAlert, ExcursionResult, HeldReading, Phase, PhaseEvent,
    PhaseRules, Severity, SpoilReason, VaccineProduct, VialState, VialStatus, SECONDS_PER_DAY,
};
use crate::telemetry::TelemetryReading;

/// Integrates a time-ordered trace into the vial's budgets.
///
/// Each reading holds until the next one (forward hold). The last reading of
/// a call is carried in `VialState::held` and integrated when the next call
/// supplies a later reading, so evaluating a trace in one call or in several
/// consecutive calls gives the same result.
pub fn evaluate_excursion(
    product: &VaccineProduct,
    state: &VialState,
    readings: &[TelemetryReading],
) -> Result<ExcursionResult, ColdChainError> {
    if !state.status.is_usable() {
        return Err(ColdChainError::NotUsable {
            vial: state.vial_id.to_string(),
            status: state.status.label(),
        });
    }
    if let Some(index) = readings
        .windows(2)
        .position(|w| w[1].timestamp < w[0].timestamp)
    {
        return Err(ColdChainError::Unsorted { index: index + 1 });
    }
    if let Some(first) = readings.first() {
        if first.timestamp < state.last_evaluated_at {
            return Err(ColdChainError::Stale {
                timestamp: first.timestamp,
                last_evaluated_at: state.last_evaluated_at,
            });
        }
    }
    let rules = product
        .phase(state.phase)
        .ok_or_else(|| ColdChainError::MissingPhase {
            product: product.product_id.clone(),
            phase: state.phase,
        })?;

    let mut eval = Evaluator {
        product,
        rules,
        state: state.clone(),
        alerts: Vec::new(),
        spoiled: None,
    };
    for reading in readings {
        if let Some(held) = eval.state.held {
            eval.hold(held, reading.timestamp);
            if eval.spoiled.is_some() {
                break;
            }
        }
        eval.state.last_evaluated_at = reading.timestamp;
        eval.observe(reading);
        if eval.spoiled.is_some() {
            break;
        }
        eval.state.held = Some(HeldReading {
            timestamp: reading.timestamp,
            temperature_decic: reading.temperature_decic,
            light_exposed: reading.light_exposed,
        });
    }
    Ok(ExcursionResult {
        updated_state: eval.state,
        alerts: eval.alerts,
        spoiled: eval.spoiled,
    })
}

struct Evaluator<'a> {
    product: &'a VaccineProduct,
    rules: &'a PhaseRules,
    state: VialState,
    alerts: Vec<ExcursionAlert>,
    spoiled: Option<SpoilReason>,
}

impl Evaluator<'_> {
    fn spoil(&mut self, at: i64, reason: SpoilReason) {
        self.alerts.push(ExcursionAlert {
            timestamp: at,
            severity: Severity::Critical,
            message: format!("spoiled in {} phase: {reason}", self.state.phase),
        });
        self.state.status = VialStatus::Spoiled(reason.clone());
        self.state.last_evaluated_at = at;
        self.state.held = None;
        self.spoiled = Some(reason);
    }

    /// Instantaneous checks at a reading's own timestamp.
    fn observe(&mut self, r: &TelemetryReading) {
        let t = r.temperature_decic;
        let reading_decic = t;
        if let Some(limit) = self.product.freeze_forbidden_below_decic {
            if t < limit {
                return self.spoil(r.timestamp, SpoilReason::Frozen { reading_decic });
            }
        }
        if let Some(floor) = self.rules.hard_floor_decic {
            if t < floor {
                return self.spoil(r.timestamp, SpoilReason::BelowHardFloor { reading_decic });
            }
        }
        if let Some(ceiling) = self.rules.hard_ceiling_decic {
            if t > ceiling {
                return self.spoil(r.timestamp, SpoilReason::AboveHardCeiling { reading_decic });
            }
        }

        if self.rules.window_of(t).is_some() {
            self.state.in_excursion = false;
        } else if !self.state.in_excursion {
            self.state.in_excursion = true;
            self.alerts.push(ExcursionAlert {
                timestamp: r.timestamp,
                severity: Severity::Warning,
                message: format!(
                    "temperature {} outside allowed windows for {} phase",
                    format_decic(t),
                    self.state.phase
                ),
            });
        }

        if self.product.light_protected
            && r.light_exposed
            && !self.state.light_alerted
            && self.state.phase_light_seconds >= self.rules.light_budget_seconds
        {
            self.light_alert(r.timestamp);
        }
    }

    fn light_alert(&mut self, at: i64) {
        self.state.light_alerted = true;
        self.alerts.push(ExcursionAlert {
            timestamp: at,
            severity: Severity::Warning,
            message: format!(
                "light exposure budget of {} s exceeded in {} phase",
                self.rules.light_budget_seconds, self.state.phase
            ),
        });
    }

    /// Integrates `held` over `[held.timestamp, until)`.
    fn hold(&mut self, held: HeldReading, until: i64) {
        let start = held.timestamp;
        let duration = (until - start).max(0) as u64;
        if duration == 0 {
            return;
        }

        // Time at which a budget reaches zero, if within this interval.
        let mut spoil_after: Option<(u64, SpoilReason)> = None;
        match self.rules.window_of(held.temperature_decic) {
            Some(rule) => {
                if let Some(budget) = self
                    .state
                    .budgets
                    .iter_mut()
                    .find(|b| b.window == rule.window)
                {
                    let used = duration.min(budget.remaining_seconds);
                    budget.remaining_seconds -= used;
                    if budget.remaining_seconds == 0 {
                        spoil_after = Some((used, SpoilReason::BudgetExhausted { window: rule.window }));
                    }
                }
            }
            None => {
                let used = duration.min(self.state.grace_remaining_seconds);
                self.state.grace_remaining_seconds -= used;
                if self.state.grace_remaining_seconds == 0 {
                    spoil_after = Some((used, SpoilReason::GraceExhausted));
                }
            }
        }

        let active = spoil_after.as_ref().map_or(duration, |(used, _)| *used);
        if self.product.light_protected && held.light_exposed {
            let before = self.state.phase_light_seconds;
            self.state.phase_light_seconds += active;
            self.state.light_exposure_seconds += active;
            let budget = self.rules.light_budget_seconds;
            if !self.state.light_alerted && before < budget && before + active >= budget {
                self.light_alert(start + (budget - before) as i64);
            }
        }

        if let Some((used, reason)) = spoil_after {
            self.spoil(start + used as i64, reason);
        }
    }
}

/// Advances a vial to the next phase and initialises that phase's budgets.
pub fn transition_phase(
    product: &VaccineProduct,
    state: &VialState,
    event: PhaseEvent,
    at: i64,
) -> Result<VialState, ColdChainError> {
    if !state.status.is_usable() {
        return Err(ColdChainError::NotUsable {
            vial: state.vial_id.to_string(),
            status: state.status.label(),
        });
    }
    let next = match (event, state.phase) {
        (PhaseEvent::Thaw, _) if !product.has_frozen_phase() => {
            return Err(ColdChainError::NoFrozenPhase(product.product_id.clone()))
        }
        (PhaseEvent::Thaw, Phase::FrozenPreUse) => Phase::ThawedUnpunctured,
        (PhaseEvent::Puncture, Phase::ThawedUnpunctured) => Phase::Punctured,
        (event, from) => return Err(ColdChainError::IllegalTransition { from, event }),
    };
    if product.phase(next).is_none() {
        return Err(ColdChainError::MissingPhase {
            product: product.product_id.clone(),
            phase: next,
        });
    }
    let mut out = state.clone();
    out.enter_phase(product, next, at);
    Ok(out)
}

/// Marks a usable vial expired once its shelf life has elapsed. Any other
/// status is returned unchanged.
pub fn expiry_check(
    product: &VaccineProduct,
    state: &VialState,
    now: i64,
    manufactured_at: i64,
) -> VialState {
    let mut out = state.clone();
    let shelf = i64::from(product.shelf_life_days) * SECONDS_PER_DAY as i64;
    if out.status.is_usable() && now - manufactured_at > shelf {
        out.status = VialStatus::Expired;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coldchain::{builtin_profiles, TempWindow, SECONDS_PER_HOUR};

    const H: i64 = SECONDS_PER_HOUR as i64;

    fn product(id: &str) -> VaccineProduct {
        builtin_profiles()
            .into_iter()
            .find(|p| p.product_id == id)
            .unwrap()
    }

    fn constant(temp: i32, start: i64, end: i64, step: i64) -> Vec<TelemetryReading> {
        (0..)
            .map(|i| start + i * step)
            .take_while(|t| *t <= end)
            .map(|t| TelemetryReading::storage("U-1", t, temp, false))
            .collect()
    }

    fn thawed(p: &VaccineProduct) -> VialState {
        let v = VialState::new(p, "VID-1", 0, 0);
        transition_phase(p, &v, PhaseEvent::Thaw, 0).unwrap()
    }

    #[test]
    fn pfizer_frozen_at_minus_70_for_two_days() {
        let p = product("pfizer-biontech");
        let v = VialState::new(&p, "VID-1", 0, 0);
        let res = evaluate_excursion(&p, &v, &constant(-700, 0, 48 * H, 600)).unwrap();
        assert!(res.alerts.is_empty());
        assert_eq!(res.updated_state.status, VialStatus::Usable);
        assert_eq!(res.updated_state.grace_remaining_seconds, 1800);
    }

    #[test]
    fn pfizer_thawed_spoils_at_120_hours() {
        let p = product("pfizer-biontech");
        let res = evaluate_excursion(&p, &thawed(&p), &constant(50, 0, 121 * H, 600)).unwrap();
        assert_eq!(res.alerts.len(), 1);
        assert_eq!(res.alerts[0].timestamp, 120 * H);
        assert_eq!(res.alerts[0].severity, Severity::Critical);
        assert_eq!(
            res.spoiled,
            Some(SpoilReason::BudgetExhausted {
                window: TempWindow::new(20, 80)
            })
        );
    }

    #[test]
    fn empty_readings_leave_state_unchanged() {
        let p = product("moderna");
        let v = VialState::new(&p, "VID-1", 0, 0);
        let res = evaluate_excursion(&p, &v, &[]).unwrap();
        assert_eq!(res.updated_state, v);
        assert!(res.alerts.is_empty());
    }

    #[test]
    fn moderna_below_minus_40_spoils_immediately() {
        let p = product("moderna");
        let v = VialState::new(&p, "VID-1", 0, 0);
        let res =
            evaluate_excursion(&p, &v, &[TelemetryReading::storage("U-1", 10, -450, false)]).unwrap();
        assert_eq!(
            res.spoiled,
            Some(SpoilReason::BelowHardFloor { reading_decic: -450 })
        );
        assert_eq!(res.alerts.len(), 1);
        assert_eq!(res.alerts[0].timestamp, 10);
    }

    #[test]
    fn grace_budget_spoils_frozen_vial_after_thirty_minutes_out_of_window() {
        let p = product("pfizer-biontech");
        let v = VialState::new(&p, "VID-1", 0, 0);
        // -50C is above the frozen window but below no hard limit.
        let res = evaluate_excursion(&p, &v, &constant(-500, 0, H, 60)).unwrap();
        assert_eq!(res.spoiled, Some(SpoilReason::GraceExhausted));
        assert_eq!(res.alerts[0].severity, Severity::Warning);
        assert_eq!(res.alerts[0].timestamp, 0);
        assert_eq!(res.alerts[1].timestamp, 1800);
    }

    #[test]
    fn unsorted_and_stale_inputs_are_rejected() {
        let p = product("covaxin");
        let v = VialState::new(&p, "VID-1", 0, 100);
        let r = |t| TelemetryReading::storage("U-1", t, 50, false);
        assert_eq!(
            evaluate_excursion(&p, &v, &[r(200), r(150)]).unwrap_err(),
            ColdChainError::Unsorted { index: 1 }
        );
        assert!(matches!(
            evaluate_excursion(&p, &v, &[r(50)]).unwrap_err(),
            ColdChainError::Stale { .. }
        ));
    }

    #[test]
    fn evaluating_spoiled_vial_is_state_error() {
        let p = product("covaxin");
        let mut v = VialState::new(&p, "VID-1", 0, 0);
        v.status = VialStatus::Expired;
        assert!(matches!(
            evaluate_excursion(&p, &v, &[]),
            Err(ColdChainError::NotUsable { .. })
        ));
    }

    #[test]
    fn covishield_freezing_spoils() {
        let p = product("covishield");
        let v = VialState::new(&p, "VID-1", 0, 0);
        let res =
            evaluate_excursion(&p, &v, &[TelemetryReading::storage("U-1", 5, -1, false)]).unwrap();
        assert_eq!(res.spoiled, Some(SpoilReason::Frozen { reading_decic: -1 }));
    }

    #[test]
    fn light_alert_is_immediate_in_frozen_phase_and_budgeted_after_thaw() {
        let p = product("pfizer-biontech");
        let v = VialState::new(&p, "VID-1", 0, 0);
        let lit = |t, temp| TelemetryReading::storage("U-1", t, temp, true);
        let res = evaluate_excursion(&p, &v, &[lit(0, -700), lit(600, -700)]).unwrap();
        assert_eq!(res.alerts.len(), 1);
        assert_eq!(res.alerts[0].timestamp, 0);

        let res = evaluate_excursion(&p, &thawed(&p), &[lit(0, 50), lit(2 * H, 50)]).unwrap();
        assert_eq!(res.alerts.len(), 1);
        assert_eq!(res.alerts[0].timestamp, H);
        assert_eq!(res.updated_state.light_exposure_seconds, 2 * H as u64);
    }

    #[test]
    fn split_evaluation_matches_single_call() {
        let p = product("moderna");
        let v = thawed(&p);
        let mut trace = constant(50, 0, 10 * H, 600);
        trace.extend(constant(120, 10 * H + 600, 14 * H, 600));
        let whole = evaluate_excursion(&p, &v, &trace).unwrap();
        for k in [1, 7, 60, trace.len() - 1] {
            let a = evaluate_excursion(&p, &v, &trace[..k]).unwrap();
            let b = evaluate_excursion(&p, &a.updated_state, &trace[k..]).unwrap();
            let mut alerts = a.alerts.clone();
            alerts.extend(b.alerts);
            assert_eq!(b.updated_state, whole.updated_state, "split at {k}");
            assert_eq!(alerts, whole.alerts);
        }
    }

    #[test]
    fn transitions() {
        let pfizer = product("pfizer-biontech");
        let frozen = VialState::new(&pfizer, "VID-1", 0, 0);
        let t = transition_phase(&pfizer, &frozen, PhaseEvent::Thaw, 50).unwrap();
        assert_eq!(t.phase, Phase::ThawedUnpunctured);
        assert_eq!(t.budget_for(TempWindow::new(20, 80)), Some(120 * H as u64));
        assert_eq!(t.budget_for(TempWindow::new(81, 250)), Some(2 * H as u64));
        assert_eq!(t.phase_entered_at, 50);

        let p = transition_phase(&pfizer, &t, PhaseEvent::Puncture, 60).unwrap();
        assert_eq!(p.phase, Phase::Punctured);
        assert_eq!(p.budget_for(TempWindow::new(20, 250)), Some(6 * H as u64));

        assert!(matches!(
            transition_phase(&pfizer, &frozen, PhaseEvent::Puncture, 1),
            Err(ColdChainError::IllegalTransition { .. })
        ));
        let covaxin = product("covaxin");
        let c = VialState::new(&covaxin, "VID-2", 0, 0);
        assert_eq!(
            transition_phase(&covaxin, &c, PhaseEvent::Thaw, 1).unwrap_err(),
            ColdChainError::NoFrozenPhase("covaxin".into())
        );
    }

    #[test]
    fn moderna_shelf_life_is_180_days() {
        let p = product("moderna");
        let made = 1_000;
        let v = VialState::new(&p, "VID-1", 0, made);
        let day = SECONDS_PER_DAY as i64;
        assert_eq!(expiry_check(&p, &v, made + 179 * day, made).status, VialStatus::Usable);
        assert_eq!(expiry_check(&p, &v, made + 180 * day, made).status, VialStatus::Usable);
        assert_eq!(expiry_check(&p, &v, made + 181 * day, made).status, VialStatus::Expired);

        let mut spoiled = v.clone();
        spoiled.status = VialStatus::Spoiled(SpoilReason::GraceExhausted);
        assert_eq!(expiry_check(&p, &spoiled, made + 400 * day, made), spoiled);
    }
}
