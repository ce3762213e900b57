use super::RatingRecord;
use crate::error::{Error, Result};

/// A user's records ordered and split, before profiles are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecords {
    pub user_id: u64,
    pub support: Vec<RatingRecord>,
    pub query: Vec<RatingRecord>,
}

/// Sorts one user's records by `(order_key, item_id)`, keeps the first
/// `cap`, and puts the first `support_size` in the support set.
pub fn make_episode(
    mut records: Vec<RatingRecord>,
    support_size: usize,
    cap: usize,
) -> Result<EpisodeRecords> {
    let user_id = match records.first() {
        Some(r) => r.user_id,
        None => return Err(Error::Data("user has no records".into())),
    };
    if records.iter().any(|r| r.user_id != user_id) {
        return Err(Error::Contract("records of several users passed to make_episode".into()));
    }
    records.sort_by(|a, b| a.order_key.cmp(&b.order_key).then_with(|| a.item_id.cmp(&b.item_id)));
    records.truncate(cap);
    if records.len() < support_size + 1 {
        return Err(Error::Data(format!(
            "user {user_id}: {} records, need at least {}",
            records.len(),
            support_size + 1
        )));
    }
    let query = records.split_off(support_size);
    Ok(EpisodeRecords {
        user_id,
        support: records,
        query,
    })
}
