//! Profile schemas and the one-hot / multi-hot / bucketed encodings.

use serde::{Deserialize, Serialize};

use super::ProfileVector;
use crate::error::{Error, Result};

/// Separator between values of a multi-categorical field in profile CSVs.
pub const MULTI_SEPARATOR: char = '|';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldKind {
    Categorical { vocabulary: Vec<String> },
    MultiCategorical { vocabulary: Vec<String> },
    /// `edges` ascending; value `v` falls in bucket `#{e : e <= v}`.
    NumericBucketed { edges: Vec<f64> },
}

impl FieldKind {
    pub fn width(&self) -> usize {
        match self {
            FieldKind::Categorical { vocabulary } | FieldKind::MultiCategorical { vocabulary } => {
                vocabulary.len()
            }
            FieldKind::NumericBucketed { edges } => edges.len() + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FieldKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSchema {
    pub id: String,
    pub fields: Vec<FieldSpec>,
}

impl ProfileSchema {
    pub fn dim(&self) -> usize {
        self.fields.iter().map(|f| f.kind.width()).sum()
    }

    pub fn field_names(&self) -> Vec<&str> {
        self.fields.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.fields {
            match &f.kind {
                FieldKind::Categorical { vocabulary } | FieldKind::MultiCategorical { vocabulary } => {
                    if vocabulary.is_empty() {
                        return Err(Error::Config(format!("field {} has an empty vocabulary", f.name)));
                    }
                }
                FieldKind::NumericBucketed { edges } => {
                    if edges.windows(2).any(|w| !(w[0] < w[1])) {
                        return Err(Error::Config(format!("bucket edges of {} must ascend", f.name)));
                    }
                }
            }
        }
        Ok(())
    }
}

/// The sidecar schema file of a canonical dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub rating_min: f64,
    pub rating_max: f64,
    pub user: ProfileSchema,
    pub item: ProfileSchema,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<()> {
        if !(self.rating_min < self.rating_max) {
            return Err(Error::Config("rating_min must be below rating_max".into()));
        }
        self.user.validate()?;
        self.item.validate()
    }

    pub fn rating_range(&self) -> (f64, f64) {
        (self.rating_min, self.rating_max)
    }
}

/// Decoded value of one field, for inspection and round-trip checks.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Category(usize),
    Categories(Vec<usize>),
    Bucket(usize),
}

fn position(vocabulary: &[String], value: &str, field: &str) -> Result<usize> {
    vocabulary
        .iter()
        .position(|v| v == value)
        .ok_or_else(|| Error::Data(format!("field {field}: unknown value {value:?}")))
}

/// Encodes raw field values (in schema order) into a profile vector.
/// Missing or unrecognised values reject the record.
pub fn encode_profile(raw: &[&str], schema: &ProfileSchema) -> Result<ProfileVector> {
    if raw.len() != schema.fields.len() {
        return Err(Error::Data(format!(
            "expected {} fields, got {}",
            schema.fields.len(),
            raw.len()
        )));
    }
    let mut values = vec![0.0; schema.dim()];
    let mut offset = 0;
    for (f, value) in schema.fields.iter().zip(raw) {
        let value = value.trim();
        if value.is_empty() {
            return Err(Error::Data(format!("field {}: missing", f.name)));
        }
        match &f.kind {
            FieldKind::Categorical { vocabulary } => {
                values[offset + position(vocabulary, value, &f.name)?] = 1.0;
            }
            FieldKind::MultiCategorical { vocabulary } => {
                for part in value.split(MULTI_SEPARATOR).map(str::trim).filter(|p| !p.is_empty()) {
                    values[offset + position(vocabulary, part, &f.name)?] = 1.0;
                }
            }
            FieldKind::NumericBucketed { edges } => {
                let v: f64 = value
                    .parse()
                    .map_err(|_| Error::Data(format!("field {}: not a number: {value:?}", f.name)))?;
                if !v.is_finite() {
                    return Err(Error::Data(format!("field {}: not finite", f.name)));
                }
                values[offset + edges.iter().filter(|&&e| e <= v).count()] = 1.0;
            }
        }
        offset += f.kind.width();
    }
    Ok(ProfileVector::new(values, schema.id.clone()))
}

/// Inverse of [`encode_profile`] at the level of category indices.
pub fn decode_profile(profile: &ProfileVector, schema: &ProfileSchema) -> Result<Vec<FieldValue>> {
    if profile.values.len() != schema.dim() || profile.schema_id != schema.id {
        return Err(Error::shape(
            "decode_profile",
            format!("{} values under {}", schema.dim(), schema.id),
            format!("{} values under {}", profile.values.len(), profile.schema_id),
        ));
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(schema.fields.len());
    for f in &schema.fields {
        let block = &profile.values[offset..offset + f.kind.width()];
        let active: Vec<usize> = block
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect();
        let single = |active: &[usize]| {
            if active.len() == 1 {
                Ok(active[0])
            } else {
                Err(Error::Data(format!("field {}: expected one active bit", f.name)))
            }
        };
        out.push(match f.kind {
            FieldKind::Categorical { .. } => FieldValue::Category(single(&active)?),
            FieldKind::NumericBucketed { .. } => FieldValue::Bucket(single(&active)?),
            FieldKind::MultiCategorical { .. } => FieldValue::Categories(active),
        });
        offset += f.kind.width();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn movielens_users() -> ProfileSchema {
        ProfileSchema {
            id: "movielens-user".into(),
            fields: vec![
                FieldSpec {
                    name: "gender".into(),
                    kind: FieldKind::Categorical { vocabulary: vocab(&["F", "M"]) },
                },
                FieldSpec {
                    name: "age".into(),
                    kind: FieldKind::Categorical {
                        vocabulary: vocab(&["1", "18", "25", "35", "45", "50", "56"]),
                    },
                },
                FieldSpec {
                    name: "occupation".into(),
                    kind: FieldKind::Categorical {
                        vocabulary: (0..21).map(|i| i.to_string()).collect(),
                    },
                },
            ],
        }
    }

    fn items() -> ProfileSchema {
        ProfileSchema {
            id: "items".into(),
            fields: vec![
                FieldSpec {
                    name: "year".into(),
                    kind: FieldKind::NumericBucketed { edges: vec![1970.0, 1980.0, 1990.0] },
                },
                FieldSpec {
                    name: "genres".into(),
                    kind: FieldKind::MultiCategorical {
                        vocabulary: vocab(&["Action", "Comedy", "Drama", "War"]),
                    },
                },
            ],
        }
    }

    #[test]
    fn movielens_user_dimension_is_thirty() {
        let s = movielens_users();
        assert_eq!(s.dim(), 30);
        let p = encode_profile(&["M", "25", "12"], &s).unwrap();
        assert_eq!(p.values.len(), 30);
        assert_eq!(p.values.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn encoding_is_deterministic() {
        let s = movielens_users();
        assert_eq!(
            encode_profile(&["F", "1", "0"], &s).unwrap(),
            encode_profile(&["F", "1", "0"], &s).unwrap()
        );
    }

    #[test]
    fn multi_hot_and_buckets() {
        let s = items();
        let p = encode_profile(&["1985", "Action|War"], &s).unwrap();
        assert_eq!(p.values, vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let p = encode_profile(&["1990", "Drama"], &s).unwrap();
        assert_eq!(&p.values[..4], &[0.0, 0.0, 0.0, 1.0]);
        let p = encode_profile(&["1900", "Drama"], &s).unwrap();
        assert_eq!(&p.values[..4], &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_or_unknown_values_reject() {
        let s = movielens_users();
        assert!(encode_profile(&["", "25", "1"], &s).is_err());
        assert!(encode_profile(&["X", "25", "1"], &s).is_err());
        assert!(encode_profile(&["M", "25"], &s).is_err());
        assert!(encode_profile(&["abc", "Drama"], &items()).is_err());
    }

    proptest! {
        #[test]
        fn decode_recovers_category_indices(
            g in 0usize..2, a in 0usize..7, o in 0usize..21,
            year in 1900.0f64..2020.0, genres in prop::collection::btree_set(0usize..4, 1..4),
        ) {
            let us = movielens_users();
            let FieldKind::Categorical { vocabulary: ages } = &us.fields[1].kind else { unreachable!() };
            let FieldKind::Categorical { vocabulary: genders } = &us.fields[0].kind else { unreachable!() };
            let occ = o.to_string();
            let p = encode_profile(&[&genders[g], &ages[a], &occ], &us).unwrap();
            prop_assert_eq!(
                decode_profile(&p, &us).unwrap(),
                vec![FieldValue::Category(g), FieldValue::Category(a), FieldValue::Category(o)]
            );

            let is = items();
            let names = ["Action", "Comedy", "Drama", "War"];
            let joined: Vec<&str> = genres.iter().map(|&i| names[i]).collect();
            let joined = joined.join("|");
            let ys = year.to_string();
            let p = encode_profile(&[&ys, &joined], &is).unwrap();
            let bucket = [1970.0, 1980.0, 1990.0].iter().filter(|&&e| e <= year).count();
            prop_assert_eq!(p.values[4..].iter().sum::<f64>(), genres.len() as f64);
            prop_assert_eq!(
                decode_profile(&p, &is).unwrap(),
                vec![FieldValue::Bucket(bucket), FieldValue::Categories(genres.into_iter().collect())]
            );
        }
    }
}
