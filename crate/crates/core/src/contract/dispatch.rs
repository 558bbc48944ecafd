use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{day_of, AppointmentStatus, WorldState};
use crate::coldchain::expiry_check;
use crate::identity::Role;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchRequest {
    pub center_id: String,
    pub as_of_day: i64,
    pub horizon_days: u32,
    /// Product that open first-dose requests will be served with.
    pub product_id: String,
    /// Transport duration from each manufacturer to this center.
    pub transport_seconds: BTreeMap<String, u64>,
    pub safety_margin_seconds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchOrder {
    pub center_id: String,
    pub product_id: String,
    pub manufacturer: String,
    pub need_day: i64,
    pub doses: u32,
    /// Need time (start of `need_day`) minus transport and safety margin.
    pub latest_dispatch_time: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DispatchError {
    #[error("{0} is not a registered manufacturer")]
    UnknownManufacturer(String),
    #[error("no transport duration for manufacturer {0}")]
    MissingTransport(String),
    #[error("unknown product {0}")]
    UnknownProduct(String),
    #[error("unknown center {0}")]
    UnknownCenter(String),
}

/// Plans shipments so that every dose needed at the center within the
/// horizon is on site by the start of its day.
///
/// Demand per day is the planned appointments of that day plus doses still
/// to be scheduled: second doses fall due at the first dose day plus the
/// product interval, first doses on the later of `as_of_day` and the request
/// day. Supply is the usable doses already at the center. Each day whose
/// cumulative demand outruns supply and earlier orders gets one order for
/// the difference.
pub fn plan_dispatch(
    world: &WorldState,
    req: &DispatchRequest,
) -> Result<Vec<DispatchOrder>, DispatchError> {
    for m in req.transport_seconds.keys() {
        if world.role_of(m) != Some(Role::Manufacturer) {
            return Err(DispatchError::UnknownManufacturer(m.clone()));
        }
    }
    if !world.centers.contains_key(&req.center_id) {
        return Err(DispatchError::UnknownCenter(req.center_id.clone()));
    }
    if world.product(&req.product_id).is_none() {
        return Err(DispatchError::UnknownProduct(req.product_id.clone()));
    }
    let first = req.as_of_day;
    let end = first + i64::from(req.horizon_days);
    let in_horizon = |d: i64| d >= first && d < end;

    // product -> day -> doses
    let mut demand: BTreeMap<String, BTreeMap<i64, u32>> = BTreeMap::new();
    let mut add = |product: &str, day: i64| {
        *demand
            .entry(product.to_string())
            .or_default()
            .entry(day)
            .or_default() += 1;
    };
    let planned: Vec<_> = world
        .appointments
        .iter()
        .filter(|a| a.center_id == req.center_id && a.status == AppointmentStatus::Planned)
        .collect();
    for a in &planned {
        if let Some(lot) = world.lots.get(&a.vid) {
            if in_horizon(a.day) {
                add(&lot.product_id, a.day);
            }
        }
    }
    for b in world.beneficiaries.values().filter(|b| b.center_id == req.center_id) {
        let next = b.doses.len() as u8 + 1;
        if next > super::DOSES_PER_COURSE
            || planned.iter().any(|a| a.bid == b.bid && a.dose_number == next)
        {
            continue;
        }
        let (product, day) = match b.doses.last() {
            Some(prev) => {
                let interval = world
                    .product(&prev.product_id)
                    .map_or(0, |p| i64::from(p.dose_interval_days));
                (prev.product_id.as_str(), first.max(prev.day + interval))
            }
            None => (req.product_id.as_str(), first.max(day_of(b.requested_at))),
        };
        if in_horizon(day) {
            add(product, day);
        }
    }

    let now = first * 86_400;
    let mut orders = Vec::new();
    for (product_id, days) in demand {
        let product = world
            .product(&product_id)
            .ok_or_else(|| DispatchError::UnknownProduct(product_id.clone()))?;
        let mut covered: u32 = world
            .lots
            .values()
            .filter(|l| l.product_id == product_id && l.center() == Some(req.center_id.as_str()))
            .flat_map(|l| {
                l.vials
                    .iter()
                    .map(move |v| expiry_check(product, v, now, l.manufactured_at))
            })
            .filter(|v| v.status.is_usable())
            .map(|v| v.doses_remaining(product))
            .sum();
        let manufacturer = world.products[&product_id].defined_by.clone();
        let mut needed = 0u32;
        for (day, n) in days {
            needed += n;
            if needed <= covered {
                continue;
            }
            let transport = *req
                .transport_seconds
                .get(&manufacturer)
                .ok_or_else(|| DispatchError::MissingTransport(manufacturer.clone()))?;
            let doses = needed - covered;
            covered = needed;
            orders.push(DispatchOrder {
                center_id: req.center_id.clone(),
                product_id: product_id.clone(),
                manufacturer: manufacturer.clone(),
                need_day: day,
                doses,
                latest_dispatch_time: day * 86_400
                    - transport as i64
                    - req.safety_margin_seconds as i64,
            });
        }
    }
    orders.sort_by(|a, b| {
        (a.latest_dispatch_time, &a.product_id).cmp(&(b.latest_dispatch_time, &b.product_id))
    });
    Ok(orders)
}
