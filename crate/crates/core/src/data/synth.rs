//! Seeded synthetic populations with planted preference clusters.
//!
//! Each cluster has a prototype profile (every user field takes the
//! prototype category with probability `prototype_prob`) and a linear
//! preference over item genres. Consecutive clusters are paired with
//! opposite preferences, so two clusters disagree on every item.

use std::collections::BTreeMap;
use std::path::Path;

use super::corpus::CLUSTERS_FILE;
use super::schema::{FieldKind, FieldSpec, MULTI_SEPARATOR};
use super::{Corpus, DatasetSchema, ProfileSchema, RatingRecord};
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const GENRES: usize = 8;
const USER_FIELDS: usize = 3;
const BASE_RATING: f64 = 3.0;
const YEAR_EDGES: [f64; 6] = [1960.0, 1970.0, 1980.0, 1990.0, 2000.0, 2010.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub ratings_per_user: usize,
    /// Probability that a user field carries the cluster's prototype value.
    pub prototype_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_items: 100,
            n_clusters: 2,
            noise_sd: 0.3,
            seed: 0,
            ratings_per_user: 20,
            prototype_prob: 0.9,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 {
            return Err(Error::Config("n_clusters must be at least 1".into()));
        }
        if self.n_users == 0 || self.ratings_per_user == 0 {
            return Err(Error::Config("n_users and ratings_per_user must be positive".into()));
        }
        if self.n_items < self.ratings_per_user {
            return Err(Error::Config(format!(
                "n_items ({}) must be at least ratings_per_user ({})",
                self.n_items, self.ratings_per_user
            )));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::Config(format!("noise_sd must be non-negative, got {}", self.noise_sd)));
        }
        if !(0.0..=1.0).contains(&self.prototype_prob) {
            return Err(Error::Config("prototype_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub corpus: Corpus,
    /// Ground-truth cluster of every user.
    pub clusters: BTreeMap<u64, usize>,
    /// Genre weights of each cluster's preference function.
    pub preferences: Vec<[f64; GENRES]>,
    /// Genre indicator of every item.
    pub item_genres: BTreeMap<String, [f64; GENRES]>,
}

impl SyntheticData {
    /// Writes the canonical dataset files plus `clusters.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.corpus.write(dir)?;
        let path = dir.join(CLUSTERS_FILE);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["user_id", "cluster_id"])?;
        for (user, cluster) in &self.clusters {
            w.write_record([user.to_string(), cluster.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Noise-free rating of `cluster` for `item_id`, before clamping.
    pub fn planted_rating(&self, cluster: usize, item_id: &str) -> f64 {
        let g = &self.item_genres[item_id];
        BASE_RATING + self.preferences[cluster].iter().zip(g).map(|(w, x)| w * x).sum::<f64>()
    }
}

fn vocabulary(n: usize, prefix: &str) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn schema(categories: usize) -> DatasetSchema {
    let user_fields = (0..USER_FIELDS)
        .map(|f| FieldSpec {
            name: format!("trait_{f}"),
            kind: FieldKind::Categorical {
                vocabulary: vocabulary(categories, "c"),
            },
        })
        .collect();
    DatasetSchema {
        rating_min: 1.0,
        rating_max: 5.0,
        user: ProfileSchema {
            id: "synthetic-user-v1".into(),
            fields: user_fields,
        },
        item: ProfileSchema {
            id: "synthetic-item-v1".into(),
            fields: vec![
                FieldSpec {
                    name: "genres".into(),
                    kind: FieldKind::MultiCategorical {
                        vocabulary: vocabulary(GENRES, "g"),
                    },
                },
                FieldSpec {
                    name: "year".into(),
                    kind: FieldKind::NumericBucketed {
                        edges: YEAR_EDGES.to_vec(),
                    },
                },
            ],
        },
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let categories = cfg.n_clusters.max(6);
    let schema = schema(categories);

    // Weights in ±[0.4, 0.65]: at most three genres keep 3 ± w·x inside [1, 5].
    let mut preferences: Vec<[f64; GENRES]> = Vec::with_capacity(cfg.n_clusters);
    for c in 0..cfg.n_clusters {
        let w = if c % 2 == 1 {
            preferences[c - 1].map(|x| -x)
        } else {
            std::array::from_fn(|_| {
                let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                sign * rng.uniform(0.4, 0.65)
            })
        };
        preferences.push(w);
    }

    let mut items = BTreeMap::new();
    let mut item_genres = BTreeMap::new();
    let item_ids: Vec<String> = (0..cfg.n_items).map(|i| format!("i{i:05}")).collect();
    for id in &item_ids {
        let n_genres = 1 + rng.below(3);
        let mut genres = [0.0; GENRES];
        while genres.iter().sum::<f64>() < n_genres as f64 {
            genres[rng.below(GENRES)] = 1.0;
        }
        let names: Vec<String> = (0..GENRES).filter(|&g| genres[g] == 1.0).map(|g| format!("g{g}")).collect();
        let year = 1950 + rng.below(71);
        items.insert(id.clone(), vec![names.join(&MULTI_SEPARATOR.to_string()), year.to_string()]);
        item_genres.insert(id.clone(), genres);
    }

    // Popularity skew so some items end up cold.
    let weights: Vec<f64> = (0..cfg.n_items).map(|i| 1.0 / ((i + 1) as f64).sqrt()).collect();
    let total_weight: f64 = weights.iter().sum();

    let mut users = BTreeMap::new();
    let mut clusters = BTreeMap::new();
    let mut ratings = Vec::with_capacity(cfg.n_users * cfg.ratings_per_user);
    for u in 0..cfg.n_users {
        let user_id = u as u64 + 1;
        let cluster = u % cfg.n_clusters;
        let fields = (0..USER_FIELDS)
            .map(|f| {
                let v = if rng.bernoulli(cfg.prototype_prob) {
                    (cluster + 2 * f) % categories
                } else {
                    rng.below(categories)
                };
                format!("c{v}")
            })
            .collect();
        users.insert(user_id, fields);
        clusters.insert(user_id, cluster);

        let mut chosen = vec![false; cfg.n_items];
        for j in 0..cfg.ratings_per_user {
            let item = loop {
                let mut r = rng.uniform(0.0, total_weight);
                let mut pick = cfg.n_items - 1;
                for (i, w) in weights.iter().enumerate() {
                    if r < *w {
                        pick = i;
                        break;
                    }
                    r -= w;
                }
                if !chosen[pick] {
                    chosen[pick] = true;
                    break pick;
                }
            };
            let genres = &item_genres[&item_ids[item]];
            let planted = BASE_RATING
                + preferences[cluster].iter().zip(genres).map(|(w, x)| w * x).sum::<f64>();
            let rating = (planted + rng.normal(0.0, cfg.noise_sd)).clamp(schema.rating_min, schema.rating_max);
            ratings.push(RatingRecord {
                user_id,
                item_id: item_ids[item].clone(),
                rating,
                order_key: (u * cfg.ratings_per_user + j) as i64,
            });
        }
    }

    Ok(SyntheticData {
        corpus: Corpus {
            schema,
            users,
            items,
            ratings,
        },
        clusters,
        preferences,
        item_genres,
    })
}
