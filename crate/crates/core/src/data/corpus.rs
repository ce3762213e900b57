//! The canonical on-disk dataset and its conversion into episodes.
//!
//! A dataset directory holds
//!
//! * `ratings.csv`: `user_id,item_id,rating,order_key`
//! * `users.csv`: `user_id,<user fields...>`
//! * `items.csv`: `item_id,<item fields...>`
//! * `schema.json`: the [`DatasetSchema`] describing the profile fields.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenario::{ColdMaps, ItemColdRule, UserColdRule};
use super::schema::encode_profile;
use super::split::{split_users, DatasetSplit};
use super::{make_episode, DatasetSchema, Episode, ProfileVector, RatedItem, RatingRecord};
use crate::error::{Error, Result};

pub const RATINGS_FILE: &str = "ratings.csv";
pub const USERS_FILE: &str = "users.csv";
pub const ITEMS_FILE: &str = "items.csv";
pub const SCHEMA_FILE: &str = "schema.json";
pub const CLUSTERS_FILE: &str = "clusters.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub schema: DatasetSchema,
    /// Raw field values per user, in schema order.
    pub users: BTreeMap<u64, Vec<String>>,
    pub items: BTreeMap<String, Vec<String>>,
    pub ratings: Vec<RatingRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RatingRow {
    user_id: u64,
    item_id: String,
    rating: f64,
    order_key: i64,
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

fn read_profiles(path: &Path, fields: &[&str]) -> Result<Vec<(String, Vec<String>)>> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() != fields.len() + 1 || header[1..].iter().zip(fields).any(|(h, f)| h != f) {
        return Err(Error::Data(format!(
            "{}: header {header:?} does not match schema fields {fields:?}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let mut it = row.iter().map(str::to_string);
        let id = it.next().unwrap_or_default();
        out.push((id, it.collect()));
    }
    Ok(out)
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self> {
        let schema_path = dir.join(SCHEMA_FILE);
        let text = fs::read_to_string(&schema_path).map_err(|e| Error::io(&schema_path, e))?;
        let schema: DatasetSchema = serde_json::from_str(&text)?;
        schema.validate()?;

        let users = read_profiles(&dir.join(USERS_FILE), &schema.user.field_names())?
            .into_iter()
            .map(|(id, v)| {
                id.parse::<u64>()
                    .map(|id| (id, v))
                    .map_err(|_| Error::Data(format!("user id {id:?} is not an unsigned integer")))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        let items = read_profiles(&dir.join(ITEMS_FILE), &schema.item.field_names())?
            .into_iter()
            .collect();

        let mut ratings = Vec::new();
        for row in reader(&dir.join(RATINGS_FILE))?.deserialize() {
            let r: RatingRow = row?;
            if !(schema.rating_min..=schema.rating_max).contains(&r.rating) {
                return Err(Error::Data(format!(
                    "rating {} of user {} outside [{}, {}]",
                    r.rating, r.user_id, schema.rating_min, schema.rating_max
                )));
            }
            ratings.push(RatingRecord {
                user_id: r.user_id,
                item_id: r.item_id,
                rating: r.rating,
                order_key: r.order_key,
            });
        }
        Ok(Self {
            schema,
            users,
            items,
            ratings,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let schema_path = dir.join(SCHEMA_FILE);
        let json = serde_json::to_string_pretty(&self.schema)?;
        fs::write(&schema_path, json + "\n").map_err(|e| Error::io(&schema_path, e))?;

        let mut w = writer(&dir.join(RATINGS_FILE))?;
        for r in &self.ratings {
            w.serialize(RatingRow {
                user_id: r.user_id,
                item_id: r.item_id.clone(),
                rating: r.rating,
                order_key: r.order_key,
            })?;
        }
        w.flush().map_err(|e| Error::io(dir.join(RATINGS_FILE), e))?;

        let mut w = writer(&dir.join(USERS_FILE))?;
        w.write_record(std::iter::once("user_id").chain(self.schema.user.field_names()))?;
        for (id, fields) in &self.users {
            w.write_record(std::iter::once(id.to_string()).chain(fields.iter().cloned()))?;
        }
        w.flush().map_err(|e| Error::io(dir.join(USERS_FILE), e))?;

        let mut w = writer(&dir.join(ITEMS_FILE))?;
        w.write_record(std::iter::once("item_id").chain(self.schema.item.field_names()))?;
        for (id, fields) in &self.items {
            w.write_record(std::iter::once(id.as_str()).chain(fields.iter().map(String::as_str)))?;
        }
        w.flush().map_err(|e| Error::io(dir.join(ITEMS_FILE), e))?;
        Ok(())
    }

    /// Encodes profiles, builds one episode per eligible user, splits users
    /// and labels every query record with its scenario.
    pub fn prepare(&self, opts: &PrepareOptions) -> Result<PreparedData> {
        let mut skipped = Vec::new();
        let mut user_profiles = HashMap::new();
        for (id, raw) in &self.users {
            let raw: Vec<&str> = raw.iter().map(String::as_str).collect();
            match encode_profile(&raw, &self.schema.user) {
                Ok(p) => {
                    user_profiles.insert(*id, p);
                }
                Err(e) => skipped.push((*id, format!("user profile rejected: {e}"))),
            }
        }
        let mut item_profiles: HashMap<&str, ProfileVector> = HashMap::new();
        for (id, raw) in &self.items {
            let raw: Vec<&str> = raw.iter().map(String::as_str).collect();
            match encode_profile(&raw, &self.schema.item) {
                Ok(p) => {
                    item_profiles.insert(id, p);
                }
                Err(e) => log::warn!("item {id}: profile rejected: {e}"),
            }
        }

        let mut by_user: BTreeMap<u64, Vec<RatingRecord>> = BTreeMap::new();
        let mut dropped = 0usize;
        for r in &self.ratings {
            if user_profiles.contains_key(&r.user_id) && item_profiles.contains_key(r.item_id.as_str()) {
                by_user.entry(r.user_id).or_default().push(r.clone());
            } else {
                dropped += 1;
            }
        }
        if dropped > 0 {
            log::info!("dropped {dropped} ratings whose user or item has no profile");
        }

        let mut episodes = Vec::new();
        for (user, records) in by_user {
            match make_episode(records, opts.support_size, opts.record_cap) {
                Ok(ep) => episodes.push(ep),
                Err(e) => {
                    log::info!("skipping user {user}: {e}");
                    skipped.push((user, e.to_string()));
                }
            }
        }
        if episodes.is_empty() {
            return Err(Error::Data("no user has enough records to form an episode".into()));
        }

        let kept: Vec<RatingRecord> = episodes
            .iter()
            .flat_map(|e| e.support.iter().chain(&e.query).cloned())
            .collect();
        let ids: Vec<u64> = episodes.iter().map(|e| e.user_id).collect();
        let mut split = split_users(&ids, opts.split_ratio, opts.seed)?;
        split.cold = ColdMaps::build(&kept, opts.item_rule, opts.user_rule)?;

        let to_items = |records: &[RatingRecord]| -> Vec<RatedItem> {
            records
                .iter()
                .map(|r| RatedItem {
                    item_id: r.item_id.clone(),
                    profile: item_profiles[r.item_id.as_str()].values.clone(),
                    rating: r.rating,
                    order_key: r.order_key,
                })
                .collect()
        };
        let mut train = Vec::new();
        let mut test = Vec::new();
        for ep in episodes {
            let episode = Episode {
                user_id: ep.user_id,
                user_profile: user_profiles[&ep.user_id].clone(),
                support: to_items(&ep.support),
                query: to_items(&ep.query),
                scenarios: ep.query.iter().map(|r| split.cold.label(r.user_id, &r.item_id)).collect(),
            };
            if split.train_users.contains(&ep.user_id) {
                train.push(episode);
            } else {
                test.push(episode);
            }
        }
        Ok(PreparedData {
            train,
            test,
            split,
            skipped,
            rating_range: self.schema.rating_range(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareOptions {
    pub support_size: usize,
    pub record_cap: usize,
    pub split_ratio: f64,
    pub seed: u64,
    pub item_rule: ItemColdRule,
    pub user_rule: UserColdRule,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            support_size: 15,
            record_cap: 20,
            split_ratio: 0.8,
            seed: 0,
            item_rule: ItemColdRule { min_warm_ratings: 10 },
            user_rule: UserColdRule::IdPercentile { warm_fraction: 0.9 },
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    /// Training episodes, ascending user id.
    pub train: Vec<Episode>,
    /// Test episodes, ascending user id.
    pub test: Vec<Episode>,
    pub split: DatasetSplit,
    /// Users left out, with the reason.
    pub skipped: Vec<(u64, String)>,
    pub rating_range: (f64, f64),
}
