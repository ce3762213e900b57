//! Warm/cold labelling of users and items and the four evaluation
//! scenarios built from them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, RatingRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "W-W")]
    WarmUserWarmItem,
    #[serde(rename = "W-C")]
    WarmUserColdItem,
    #[serde(rename = "C-W")]
    ColdUserWarmItem,
    #[serde(rename = "C-C")]
    ColdUserColdItem,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::WarmUserWarmItem,
        Scenario::WarmUserColdItem,
        Scenario::ColdUserWarmItem,
        Scenario::ColdUserColdItem,
    ];

    pub fn from_flags(user_cold: bool, item_cold: bool) -> Self {
        match (user_cold, item_cold) {
            (false, false) => Scenario::WarmUserWarmItem,
            (false, true) => Scenario::WarmUserColdItem,
            (true, false) => Scenario::ColdUserWarmItem,
            (true, true) => Scenario::ColdUserColdItem,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::WarmUserWarmItem => "W-W",
            Scenario::WarmUserColdItem => "W-C",
            Scenario::ColdUserWarmItem => "C-W",
            Scenario::ColdUserColdItem => "C-C",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown scenario {s:?}")))
    }
}

/// How users are split into warm and cold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum UserColdRule {
    /// Cold when the user's earliest record has `order_key >= cutoff`.
    FirstOrderKeyAtLeast { cutoff: i64 },
    /// The lowest `warm_fraction` of user ids are warm, the rest cold.
    IdPercentile { warm_fraction: f64 },
}

impl UserColdRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            UserColdRule::IdPercentile { warm_fraction } if !(0.0..=1.0).contains(&warm_fraction) => Err(
                Error::Config(format!("warm_fraction must lie in [0, 1], got {warm_fraction}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Items with fewer than `min_warm_ratings` ratings are cold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemColdRule {
    pub min_warm_ratings: usize,
}

/// Per-user and per-item cold flags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColdMaps {
    pub users: BTreeMap<u64, bool>,
    pub items: HashMap<String, bool>,
}

impl ColdMaps {
    pub fn build(records: &[RatingRecord], item_rule: ItemColdRule, user_rule: UserColdRule) -> Result<Self> {
        user_rule.validate()?;
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut first_key: BTreeMap<u64, i64> = BTreeMap::new();
        for r in records {
            *counts.entry(&r.item_id).or_default() += 1;
            let k = first_key.entry(r.user_id).or_insert(r.order_key);
            *k = (*k).min(r.order_key);
        }
        let items = counts
            .into_iter()
            .map(|(id, n)| (id.to_string(), n < item_rule.min_warm_ratings))
            .collect();
        let users = match user_rule {
            UserColdRule::FirstOrderKeyAtLeast { cutoff } => {
                first_key.into_iter().map(|(u, k)| (u, k >= cutoff)).collect()
            }
            UserColdRule::IdPercentile { warm_fraction } => {
                let ids: BTreeSet<u64> = first_key.into_keys().collect();
                let n_warm = (warm_fraction * ids.len() as f64).round() as usize;
                ids.into_iter().enumerate().map(|(i, u)| (u, i >= n_warm)).collect()
            }
        };
        Ok(Self { users, items })
    }

    /// Unknown users and items count as cold.
    pub fn label(&self, user_id: u64, item_id: &str) -> Scenario {
        let user_cold = *self.users.get(&user_id).unwrap_or_else(|| {
            log::warn!("user {user_id} has no warm/cold label; treating as cold");
            &true
        });
        let item_cold = *self.items.get(item_id).unwrap_or_else(|| {
            log::warn!("item {item_id} has no warm/cold label; treating as cold");
            &true
        });
        Scenario::from_flags(user_cold, item_cold)
    }
}

/// Builds the warm/cold maps from `records` into `split` and tags every
/// record.
pub fn label_scenarios(
    split: &mut DatasetSplit,
    records: &[RatingRecord],
    item_rule: ItemColdRule,
    user_rule: UserColdRule,
) -> Result<Vec<Scenario>> {
    split.cold = ColdMaps::build(records, item_rule, user_rule)?;
    Ok(records.iter().map(|r| split.cold.label(r.user_id, &r.item_id)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn rec(user: u64, item: &str, key: i64) -> RatingRecord {
        RatingRecord {
            user_id: user,
            item_id: item.into(),
            rating: 3.0,
            order_key: key,
        }
    }

    const EVERYONE_WARM: UserColdRule = UserColdRule::FirstOrderKeyAtLeast { cutoff: i64::MAX };

    #[test]
    fn twelve_ratings_with_threshold_ten_is_warm() {
        let mut records: Vec<RatingRecord> = (0..12).map(|u| rec(u, "popular", 5)).collect();
        records.push(rec(1, "rare", 6));
        let mut split = DatasetSplit::default();
        let tags = label_scenarios(&mut split, &records, ItemColdRule { min_warm_ratings: 10 }, EVERYONE_WARM).unwrap();
        assert_eq!(tags[0], Scenario::WarmUserWarmItem);
        assert_eq!(tags[12], Scenario::WarmUserColdItem);
    }

    #[test]
    fn no_prior_ratings_means_all_items_cold() {
        let maps = ColdMaps::build(&[], ItemColdRule { min_warm_ratings: 1 }, EVERYONE_WARM).unwrap();
        assert_eq!(maps.label(3, "anything"), Scenario::ColdUserColdItem);
        let records = vec![rec(1, "a", 0), rec(2, "b", 0)];
        let maps = ColdMaps::build(&records, ItemColdRule { min_warm_ratings: 2 }, EVERYONE_WARM).unwrap();
        assert!(maps.items.values().all(|&c| c));
    }

    #[test]
    fn user_rules() {
        let records = vec![rec(1, "a", 10), rec(1, "b", 50), rec(2, "a", 40), rec(3, "a", 60)];
        let maps = ColdMaps::build(
            &records,
            ItemColdRule { min_warm_ratings: 0 },
            UserColdRule::FirstOrderKeyAtLeast { cutoff: 40 },
        )
        .unwrap();
        assert_eq!(maps.users, BTreeMap::from([(1, false), (2, true), (3, true)]));

        let records: Vec<RatingRecord> = (1..=10).map(|u| rec(u, "a", 0)).collect();
        let maps = ColdMaps::build(
            &records,
            ItemColdRule { min_warm_ratings: 0 },
            UserColdRule::IdPercentile { warm_fraction: 0.9 },
        )
        .unwrap();
        let cold: Vec<u64> = maps.users.iter().filter(|(_, &c)| c).map(|(&u, _)| u).collect();
        assert_eq!(cold, vec![10]);
    }

    #[test]
    fn histogram_matches_brute_force_recount() {
        let mut rng = Rng::new(3);
        let records: Vec<RatingRecord> = (0..2000)
            .map(|i| {
                let item = rng.below(60);
                // Skewed popularity so both item classes occur.
                let item = item * item / 60;
                rec(rng.below(80) as u64, &format!("i{item}"), 1000 + i)
            })
            .collect();
        let rule = UserColdRule::FirstOrderKeyAtLeast { cutoff: 1100 };
        let mut split = DatasetSplit::default();
        let tags = label_scenarios(&mut split, &records, ItemColdRule { min_warm_ratings: 25 }, rule).unwrap();

        let mut expected: BTreeMap<Scenario, usize> = BTreeMap::new();
        for r in &records {
            let n = records.iter().filter(|o| o.item_id == r.item_id).count();
            let first = records.iter().filter(|o| o.user_id == r.user_id).map(|o| o.order_key).min().unwrap();
            *expected.entry(Scenario::from_flags(first >= 1100, n < 25)).or_default() += 1;
        }
        let mut got: BTreeMap<Scenario, usize> = BTreeMap::new();
        for t in tags {
            *got.entry(t).or_default() += 1;
        }
        assert_eq!(got, expected);
        assert_eq!(got.values().sum::<usize>(), records.len());
        assert!(got.len() == 4, "all scenarios should occur: {got:?}");
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.as_str().parse::<Scenario>().unwrap(), s);
        }
    }
}
