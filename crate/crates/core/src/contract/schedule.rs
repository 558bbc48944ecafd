use std::collections::BTreeMap;

use super::{day_of, Appointment, AppointmentStatus, Event, Location, WorldState, DOSES_PER_COURSE};
use crate::coldchain::expiry_check;

struct Demand {
    bid: String,
    dose_number: u8,
    priority: u8,
    requested_at: i64,
    earliest_day: i64,
    /// Product the dose must match, for second doses.
    product: Option<String>,
}

struct Supply {
    vid: String,
    product_id: String,
    available: u32,
}

/// Assigns open dose requests at one center to lots and days.
///
/// Planned appointments before `as_of_day` are marked missed and their
/// beneficiaries become eligible again. Second doses are placed first,
/// never earlier than the product's interval after the first dose and only
/// from the same product. Within each group requests are served by priority
/// class, then request time. Lots are drawn oldest first and each day holds
/// at most `daily_capacity` planned appointments.
pub fn schedule_doses(
    world: &mut WorldState,
    center_id: &str,
    as_of_day: i64,
    daily_capacity: u32,
) -> Vec<Event> {
    let mut events = Vec::new();
    for a in world.appointments.iter_mut().filter(|a| {
        a.center_id == center_id && a.status == AppointmentStatus::Planned && a.day < as_of_day
    }) {
        a.status = AppointmentStatus::Missed;
        events.push(Event::AppointmentMissed {
            bid: a.bid.clone(),
            dose_number: a.dose_number,
            day: a.day,
        });
    }

    let planned = |a: &&Appointment| a.center_id == center_id && a.status == AppointmentStatus::Planned;
    let mut load: BTreeMap<i64, u32> = BTreeMap::new();
    let mut reserved: BTreeMap<&str, u32> = BTreeMap::new();
    for a in world.appointments.iter().filter(planned) {
        *load.entry(a.day).or_default() += 1;
        *reserved.entry(a.vid.as_str()).or_default() += 1;
    }

    let now = as_of_day * 86_400;
    let mut lots: Vec<_> = world
        .lots
        .values()
        .filter(|l| matches!(&l.location, Location::AtCenter { center_id: c } if c == center_id))
        .collect();
    lots.sort_by(|a, b| (a.manufactured_at, &a.vid).cmp(&(b.manufactured_at, &b.vid)));
    let mut supply: Vec<Supply> = lots
        .into_iter()
        .filter_map(|lot| {
            let product = world.product(&lot.product_id)?;
            let usable: u32 = lot
                .vials
                .iter()
                .map(|v| expiry_check(product, v, now, lot.manufactured_at))
                .filter(|v| v.status.is_usable())
                .map(|v| v.doses_remaining(product))
                .sum();
            let taken = reserved.get(lot.vid.as_str()).copied().unwrap_or(0);
            Some(Supply {
                vid: lot.vid.clone(),
                product_id: lot.product_id.clone(),
                available: usable.saturating_sub(taken),
            })
        })
        .collect();

    let mut second = Vec::new();
    let mut first = Vec::new();
    for b in world.beneficiaries.values().filter(|b| b.center_id == center_id) {
        let next = b.doses.len() as u8 + 1;
        if next > DOSES_PER_COURSE {
            continue;
        }
        let pending = world
            .appointments
            .iter()
            .filter(planned)
            .any(|a| a.bid == b.bid && a.dose_number == next);
        if pending {
            continue;
        }
        match b.doses.last() {
            Some(prev) => {
                let interval = world
                    .product(&prev.product_id)
                    .map_or(0, |p| i64::from(p.dose_interval_days));
                second.push(Demand {
                    bid: b.bid.clone(),
                    dose_number: next,
                    priority: b.priority_class,
                    requested_at: b.requested_at,
                    earliest_day: as_of_day.max(prev.day + interval),
                    product: Some(prev.product_id.clone()),
                });
            }
            None => first.push(Demand {
                bid: b.bid.clone(),
                dose_number: next,
                priority: b.priority_class,
                requested_at: b.requested_at,
                earliest_day: as_of_day.max(day_of(b.requested_at)),
                product: None,
            }),
        }
    }

    let mut new = Vec::new();
    for mut group in [second, first] {
        group.sort_by(|a, b| {
            (a.priority, a.requested_at, &a.bid).cmp(&(b.priority, b.requested_at, &b.bid))
        });
        for d in group {
            let Some(lot) = supply.iter_mut().find(|s| {
                s.available > 0 && d.product.as_ref().is_none_or(|p| *p == s.product_id)
            }) else {
                events.push(Event::Unassigned {
                    bid: d.bid.clone(),
                    dose_number: d.dose_number,
                    reason: match &d.product {
                        Some(p) => format!("no usable {p} doses at {center_id}"),
                        None => format!("no usable doses at {center_id}"),
                    },
                });
                continue;
            };
            let mut day = d.earliest_day;
            while load.get(&day).copied().unwrap_or(0) >= daily_capacity {
                day += 1;
            }
            *load.entry(day).or_default() += 1;
            lot.available -= 1;
            events.push(Event::AppointmentScheduled {
                bid: d.bid.clone(),
                vid: lot.vid.clone(),
                dose_number: d.dose_number,
                day,
            });
            new.push(Appointment {
                bid: d.bid,
                vid: lot.vid.clone(),
                center_id: center_id.to_string(),
                dose_number: d.dose_number,
                day,
                status: AppointmentStatus::Planned,
            });
        }
    }
    world.appointments.extend(new);
    events
}
