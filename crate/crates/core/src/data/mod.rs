//! Ratings, profiles and episodes: everything between raw files and the
//! meta-learner.

mod corpus;
mod episode;
pub mod parse;
mod scenario;
mod schema;
mod split;
mod synth;

use std::ops::Deref;

use serde::{Deserialize, Serialize};

pub use corpus::{
    Corpus, PreparedData, PrepareOptions, CLUSTERS_FILE, ITEMS_FILE, RATINGS_FILE, SCHEMA_FILE, USERS_FILE,
};
pub use episode::{make_episode, EpisodeRecords};
pub use scenario::{label_scenarios, ColdMaps, ItemColdRule, Scenario, UserColdRule};
pub use schema::{
    decode_profile, encode_profile, DatasetSchema, FieldKind, FieldSpec, FieldValue, ProfileSchema, MULTI_SEPARATOR,
};
pub use split::{split_users, DatasetSplit};
pub use synth::{generate_synthetic, SyntheticConfig, SyntheticData};

/// One explicit rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user_id: u64,
    pub item_id: String,
    pub rating: f64,
    /// Review time, or a surrogate ordering when the corpus has none.
    pub order_key: i64,
}

/// An encoded user or item profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileVector {
    pub values: Vec<f64>,
    pub schema_id: String,
}

impl ProfileVector {
    pub fn new(values: Vec<f64>, schema_id: impl Into<String>) -> Self {
        Self {
            values,
            schema_id: schema_id.into(),
        }
    }
}

impl Deref for ProfileVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// A rated item as the learner sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct RatedItem {
    pub item_id: String,
    pub profile: Vec<f64>,
    pub rating: f64,
    pub order_key: i64,
}

/// One user's task: profile, support set and query set. `scenarios` is
/// either empty (unlabelled) or aligned with `query`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub user_id: u64,
    pub user_profile: ProfileVector,
    pub support: Vec<RatedItem>,
    pub query: Vec<RatedItem>,
    pub scenarios: Vec<Scenario>,
}
