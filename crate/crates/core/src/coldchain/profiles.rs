use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    ConditionRule, PhaseRules, PhaseTable, VaccineProduct, DEFAULT_PUNCTURED_BUDGET_SECONDS,
    SECONDS_PER_DAY, SECONDS_PER_HOUR,
};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile `{product}`: {message}")]
    Invalid { product: String, message: String },
    #[error("duplicate product id `{0}`")]
    Duplicate(String),
    #[error("profile file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("profile file: {0}")]
    Write(#[from] toml::ser::Error),
}

/// The four products of the storage-condition table.
///
/// Dose counts, dose intervals and the shelf life of products other than
/// Moderna are not part of that table; the values here are label defaults
/// that a profile file can override.
pub fn builtin_profiles() -> Vec<VaccineProduct> {
    let h = SECONDS_PER_HOUR;
    let d = SECONDS_PER_DAY;
    vec![
        VaccineProduct {
            product_id: "pfizer-biontech".into(),
            display_name: "Pfizer-BioNTech".into(),
            freeze_forbidden_below_decic: None,
            light_protected: true,
            doses_per_vial: 6,
            dose_interval_days: 21,
            shelf_life_days: 180,
            phases: PhaseTable {
                frozen_pre_use: Some(
                    PhaseRules::new(vec![ConditionRule::unlimited(-800, -600)]).with_light_budget(0),
                ),
                thawed_unpunctured: Some(
                    PhaseRules::new(vec![
                        ConditionRule::budgeted(20, 80, 120 * h),
                        ConditionRule::budgeted(81, 250, 2 * h),
                    ])
                    .with_floor(20)
                    .with_ceiling(250),
                ),
                punctured: Some(
                    PhaseRules::new(vec![ConditionRule::budgeted(
                        20,
                        250,
                        DEFAULT_PUNCTURED_BUDGET_SECONDS,
                    )])
                    .with_floor(20)
                    .with_ceiling(250),
                ),
            },
        },
        VaccineProduct {
            product_id: "moderna".into(),
            display_name: "Moderna".into(),
            freeze_forbidden_below_decic: None,
            light_protected: true,
            doses_per_vial: 10,
            dose_interval_days: 28,
            shelf_life_days: 180,
            phases: PhaseTable {
                frozen_pre_use: Some(
                    PhaseRules::new(vec![ConditionRule::unlimited(-250, -150)])
                        .with_floor(-400)
                        .with_light_budget(0),
                ),
                thawed_unpunctured: Some(
                    PhaseRules::new(vec![
                        ConditionRule::budgeted(20, 80, 30 * d),
                        ConditionRule::budgeted(81, 250, 12 * h),
                    ])
                    .with_floor(20)
                    .with_ceiling(250),
                ),
                // "+2C to below +25C"
                punctured: Some(
                    PhaseRules::new(vec![ConditionRule::unlimited(20, 249)])
                        .with_floor(20)
                        .with_ceiling(249),
                ),
            },
        },
        VaccineProduct {
            product_id: "covaxin".into(),
            display_name: "Covaxin".into(),
            freeze_forbidden_below_decic: Some(0),
            light_protected: false,
            doses_per_vial: 10,
            dose_interval_days: 28,
            shelf_life_days: 180,
            phases: PhaseTable {
                frozen_pre_use: None,
                thawed_unpunctured: Some(PhaseRules::new(vec![ConditionRule::unlimited(20, 80)])),
                punctured: Some(PhaseRules::new(vec![ConditionRule::unlimited(20, 80)])),
            },
        },
        VaccineProduct {
            product_id: "covishield".into(),
            display_name: "Covishield".into(),
            freeze_forbidden_below_decic: Some(0),
            light_protected: false,
            doses_per_vial: 10,
            dose_interval_days: 28,
            shelf_life_days: 180,
            phases: PhaseTable {
                frozen_pre_use: None,
                thawed_unpunctured: Some(PhaseRules::new(vec![ConditionRule::unlimited(20, 80)])),
                punctured: Some(PhaseRules::new(vec![ConditionRule::budgeted(20, 250, 6 * h)])),
            },
        },
    ]
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    #[serde(default)]
    product: Vec<VaccineProduct>,
}

pub fn profiles_to_toml(products: &[VaccineProduct]) -> Result<String, ProfileError> {
    Ok(toml::to_string(&ProfileFile {
        product: products.to_vec(),
    })?)
}

/// Parses and validates a profile file.
pub fn profiles_from_toml(text: &str) -> Result<Vec<VaccineProduct>, ProfileError> {
    let file: ProfileFile = toml::from_str(text)?;
    let mut seen = std::collections::BTreeSet::new();
    for p in &file.product {
        p.validate()?;
        if !seen.insert(p.product_id.clone()) {
            return Err(ProfileError::Duplicate(p.product_id.clone()));
        }
    }
    Ok(file.product)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coldchain::Phase;

    #[test]
    fn four_profiles_all_valid() {
        let all = builtin_profiles();
        assert_eq!(all.len(), 4);
        for p in &all {
            p.validate().unwrap();
        }
    }

    #[test]
    fn pfizer_frozen_window_contains_minus_70() {
        let p = &builtin_profiles()[0];
        assert!(p.phase(Phase::FrozenPreUse).unwrap().window_of(-700).is_some());
    }

    #[test]
    fn covishield_punctured_budget() {
        let p = builtin_profiles()
            .into_iter()
            .find(|p| p.product_id == "covishield")
            .unwrap();
        assert_eq!(
            p.phase(Phase::Punctured).unwrap().rules[0].budget_seconds,
            Some(21_600)
        );
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        let all = builtin_profiles();
        let text = profiles_to_toml(&all).unwrap();
        assert_eq!(profiles_from_toml(&text).unwrap(), all);
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        let mut p = builtin_profiles().remove(0);
        p.phases.thawed_unpunctured.as_mut().unwrap().rules[1].window.low_decic = 70;
        assert!(matches!(p.validate(), Err(ProfileError::Invalid { .. })));

        let mut q = builtin_profiles().remove(1);
        q.doses_per_vial = 0;
        assert!(q.validate().is_err());

        let twice = profiles_to_toml(&[builtin_profiles().remove(2), builtin_profiles().remove(2)])
            .unwrap();
        assert!(matches!(profiles_from_toml(&twice), Err(ProfileError::Duplicate(_))));
    }
}
