//! Parsers for the raw MovieLens-1M and Book-crossing dumps.
//!
//! Both produce a [`Corpus`] ready to be written in the canonical layout,
//! plus a per-file count of read, kept, malformed and filtered rows.
//! The raw files are Latin-1, so bytes are decoded one-to-one.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use super::schema::{encode_profile, FieldKind, FieldSpec, ProfileSchema};
use super::{Corpus, DatasetSchema, RatingRecord};
use crate::error::{Error, Result};

pub const BX_AGE_RANGE: (f64, f64) = (5.0, 110.0);
pub const BX_YEAR_RANGE: (i64, i64) = (1500, 2010);

pub const MOVIELENS_GENRES: [&str; 18] = [
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];
const MOVIELENS_AGES: [&str; 7] = ["1", "18", "25", "35", "45", "50", "56"];
const MOVIELENS_YEAR_EDGES: [f64; 7] = [1950.0, 1960.0, 1970.0, 1980.0, 1990.0, 1995.0, 2000.0];
const BX_AGE_EDGES: [f64; 6] = [18.0, 25.0, 35.0, 45.0, 50.0, 56.0];
const BX_YEAR_EDGES: [f64; 8] = [1950.0, 1960.0, 1970.0, 1980.0, 1990.0, 1995.0, 2000.0, 2005.0];

/// Row accounting for one input file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FileReport {
    pub file: String,
    pub read: usize,
    pub kept: usize,
    pub malformed: usize,
    /// Rows dropped by a filter rule, keyed by reason.
    pub filtered: BTreeMap<String, usize>,
}

impl FileReport {
    fn new(path: &Path) -> Self {
        Self {
            file: path.display().to_string(),
            ..Default::default()
        }
    }

    fn filter(&mut self, reason: &str) {
        *self.filtered.entry(reason.to_string()).or_default() += 1;
    }

    pub fn filtered_total(&self) -> usize {
        self.filtered.values().sum()
    }
}

impl fmt::Display for FileReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: read {}, kept {}, malformed {}",
            self.file, self.read, self.kept, self.malformed
        )?;
        for (reason, n) in &self.filtered {
            write!(f, ", {reason} {n}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParseReport {
    pub users: FileReport,
    pub items: FileReport,
    pub ratings: FileReport,
}

impl fmt::Display for ParseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.users)?;
        writeln!(f, "{}", self.items)?;
        write!(f, "{}", self.ratings)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDataset {
    pub corpus: Corpus,
    pub report: ParseReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovieLensPaths {
    pub ratings: PathBuf,
    pub users: PathBuf,
    pub movies: PathBuf,
}

impl MovieLensPaths {
    pub fn from_dir(dir: &Path) -> Self {
        Self {
            ratings: dir.join("ratings.dat"),
            users: dir.join("users.dat"),
            movies: dir.join("movies.dat"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BookCrossingPaths {
    pub ratings: PathBuf,
    pub users: PathBuf,
    pub books: PathBuf,
}

impl BookCrossingPaths {
    pub fn from_dir(dir: &Path) -> Self {
        Self {
            ratings: dir.join("BX-Book-Ratings.csv"),
            users: dir.join("BX-Users.csv"),
            books: dir.join("BX-Books.csv"),
        }
    }
}

fn read_latin1_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text: String = bytes.iter().map(|&b| b as char).collect();
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.trim().is_empty())
        .collect())
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn movielens_schema() -> DatasetSchema {
    DatasetSchema {
        rating_min: 1.0,
        rating_max: 5.0,
        user: ProfileSchema {
            id: "movielens-user-v1".into(),
            fields: vec![
                FieldSpec {
                    name: "gender".into(),
                    kind: FieldKind::Categorical { vocabulary: strings(&["F", "M"]) },
                },
                FieldSpec {
                    name: "age".into(),
                    kind: FieldKind::Categorical { vocabulary: strings(&MOVIELENS_AGES) },
                },
                FieldSpec {
                    name: "occupation".into(),
                    kind: FieldKind::Categorical {
                        vocabulary: (0..21).map(|i| i.to_string()).collect(),
                    },
                },
            ],
        },
        item: ProfileSchema {
            id: "movielens-item-v1".into(),
            fields: vec![
                FieldSpec {
                    name: "year".into(),
                    kind: FieldKind::NumericBucketed { edges: MOVIELENS_YEAR_EDGES.to_vec() },
                },
                FieldSpec {
                    name: "genres".into(),
                    kind: FieldKind::MultiCategorical { vocabulary: strings(&MOVIELENS_GENRES) },
                },
            ],
        },
    }
}

/// Release year from a title such as `Toy Story (1995)`.
fn title_year(title: &str) -> Option<i64> {
    let t = title.trim_end();
    let inner = t.strip_suffix(')')?;
    let open = inner.rfind('(')?;
    let year = &inner[open + 1..];
    (year.len() == 4).then(|| year.parse().ok()).flatten()
}

/// Parses `ratings.dat`, `users.dat` and `movies.dat` (`::`-separated).
pub fn parse_movielens(paths: &MovieLensPaths) -> Result<ParsedDataset> {
    let schema = movielens_schema();
    let mut report = ParseReport {
        users: FileReport::new(&paths.users),
        items: FileReport::new(&paths.movies),
        ratings: FileReport::new(&paths.ratings),
    };

    let mut users = BTreeMap::new();
    for line in read_latin1_lines(&paths.users)? {
        let r = &mut report.users;
        r.read += 1;
        let parts: Vec<&str> = line.split("::").collect();
        let Some(id) = (parts.len() == 5).then(|| parts[0].trim().parse::<u64>().ok()).flatten() else {
            r.malformed += 1;
            continue;
        };
        let fields = strings(&parts[1..4]);
        let raw: Vec<&str> = fields.iter().map(String::as_str).collect();
        if encode_profile(&raw, &schema.user).is_err() {
            r.filter("invalid_profile");
            continue;
        }
        r.kept += 1;
        users.insert(id, fields);
    }

    let mut items = BTreeMap::new();
    for line in read_latin1_lines(&paths.movies)? {
        let r = &mut report.items;
        r.read += 1;
        let parts: Vec<&str> = line.split("::").collect();
        if parts.len() != 3 || parts[0].trim().parse::<u64>().is_err() {
            r.malformed += 1;
            continue;
        }
        let Some(year) = title_year(parts[1]) else {
            r.filter("no_year");
            continue;
        };
        let fields = vec![year.to_string(), parts[2].trim().to_string()];
        let raw: Vec<&str> = fields.iter().map(String::as_str).collect();
        if encode_profile(&raw, &schema.item).is_err() {
            r.filter("invalid_profile");
            continue;
        }
        r.kept += 1;
        items.insert(parts[0].trim().to_string(), fields);
    }

    let mut ratings = Vec::new();
    for line in read_latin1_lines(&paths.ratings)? {
        let r = &mut report.ratings;
        r.read += 1;
        let parts: Vec<&str> = line.split("::").collect();
        if parts.len() != 4 {
            r.malformed += 1;
            continue;
        }
        let (Ok(user_id), Ok(rating), Ok(order_key)) = (
            parts[0].trim().parse::<u64>(),
            parts[2].trim().parse::<f64>(),
            parts[3].trim().parse::<i64>(),
        ) else {
            r.malformed += 1;
            continue;
        };
        let item_id = parts[1].trim().to_string();
        if !(schema.rating_min..=schema.rating_max).contains(&rating) {
            r.filter("rating_out_of_range");
            continue;
        }
        if !users.contains_key(&user_id) || !items.contains_key(&item_id) {
            r.filter("no_profile");
            continue;
        }
        r.kept += 1;
        ratings.push(RatingRecord {
            user_id,
            item_id,
            rating,
            order_key,
        });
    }

    Ok(ParsedDataset {
        corpus: Corpus {
            schema,
            users,
            items,
            ratings,
        },
        report,
    })
}

fn clean(field: &str) -> String {
    field.replace("\\\"", "\"").replace("&amp;", "&").trim().to_string()
}

/// Splits a `"a";"b";NULL` row. Fields may be quoted or bare; inside
/// quotes `\"` is an escaped quote.
fn split_bx(line: &str) -> Option<Vec<String>> {
    let mut fields = Vec::new();
    let mut rest = line.trim();
    loop {
        if let Some(body) = rest.strip_prefix('"') {
            let bytes = body.as_bytes();
            let mut from = 0;
            let end = loop {
                let k = from + body[from..].find('"')?;
                let escaped = k > 0 && bytes[k - 1] == b'\\';
                let after = &body[k + 1..];
                if !escaped && (after.is_empty() || after.starts_with(';')) {
                    break k;
                }
                from = k + 1;
            };
            fields.push(clean(&body[..end]));
            rest = &body[end + 1..];
        } else {
            let end = rest.find(';').unwrap_or(rest.len());
            fields.push(clean(&rest[..end]));
            rest = &rest[end..];
        }
        match rest.strip_prefix(';') {
            Some(r) => rest = r,
            None => return rest.is_empty().then_some(fields),
        }
    }
}

fn is_header(fields: &[String], first: &str) -> bool {
    fields.first().is_some_and(|f| f == first)
}

fn categorical(name: &str, values: &BTreeSet<String>) -> FieldSpec {
    FieldSpec {
        name: name.into(),
        kind: FieldKind::Categorical {
            vocabulary: values.iter().cloned().collect(),
        },
    }
}

/// Parses the three `;`-separated Book-crossing files. Ratings of 0 are
/// implicit feedback and are dropped; the row index stands in for review
/// time.
pub fn parse_bookcrossing(paths: &BookCrossingPaths) -> Result<ParsedDataset> {
    let mut report = ParseReport {
        users: FileReport::new(&paths.users),
        items: FileReport::new(&paths.books),
        ratings: FileReport::new(&paths.ratings),
    };

    let mut users = BTreeMap::new();
    let mut countries = BTreeSet::new();
    for line in read_latin1_lines(&paths.users)? {
        let Some(fields) = split_bx(&line) else {
            report.users.read += 1;
            report.users.malformed += 1;
            continue;
        };
        if is_header(&fields, "User-ID") {
            continue;
        }
        let r = &mut report.users;
        r.read += 1;
        let (3, Ok(id)) = (fields.len(), fields[0].parse::<u64>()) else {
            r.malformed += 1;
            continue;
        };
        let Ok(age) = fields[2].parse::<f64>() else {
            r.filter("age_missing");
            continue;
        };
        if !(BX_AGE_RANGE.0..=BX_AGE_RANGE.1).contains(&age) {
            r.filter("age_out_of_range");
            continue;
        }
        let country = fields[1].rsplit(',').next().unwrap_or("").trim().to_lowercase();
        if country.is_empty() || country == "n/a" {
            r.filter("no_country");
            continue;
        }
        r.kept += 1;
        countries.insert(country.clone());
        users.insert(id, vec![fields[2].clone(), country]);
    }

    let mut items = BTreeMap::new();
    let mut authors = BTreeSet::new();
    let mut publishers = BTreeSet::new();
    for line in read_latin1_lines(&paths.books)? {
        let Some(fields) = split_bx(&line) else {
            report.items.read += 1;
            report.items.malformed += 1;
            continue;
        };
        if is_header(&fields, "ISBN") {
            continue;
        }
        let r = &mut report.items;
        r.read += 1;
        if fields.len() < 5 || fields[0].is_empty() {
            r.malformed += 1;
            continue;
        }
        let Ok(year) = fields[3].parse::<i64>() else {
            r.malformed += 1;
            continue;
        };
        if !(BX_YEAR_RANGE.0..=BX_YEAR_RANGE.1).contains(&year) {
            r.filter("year_out_of_range");
            continue;
        }
        if fields[2].is_empty() || fields[4].is_empty() {
            r.filter("missing_field");
            continue;
        }
        r.kept += 1;
        authors.insert(fields[2].clone());
        publishers.insert(fields[4].clone());
        items.insert(fields[0].clone(), vec![year.to_string(), fields[2].clone(), fields[4].clone()]);
    }

    let mut ratings = Vec::new();
    let mut seen = HashSet::new();
    for line in read_latin1_lines(&paths.ratings)? {
        let Some(fields) = split_bx(&line) else {
            report.ratings.read += 1;
            report.ratings.malformed += 1;
            continue;
        };
        if is_header(&fields, "User-ID") {
            continue;
        }
        let r = &mut report.ratings;
        let order_key = r.read as i64;
        r.read += 1;
        let [user, isbn, rating] = fields.as_slice() else {
            r.malformed += 1;
            continue;
        };
        let (Ok(user_id), Ok(rating)) = (user.parse::<u64>(), rating.parse::<f64>()) else {
            r.malformed += 1;
            continue;
        };
        if rating == 0.0 {
            r.filter("implicit_rating");
            continue;
        }
        if !(1.0..=10.0).contains(&rating) {
            r.filter("rating_out_of_range");
            continue;
        }
        if !users.contains_key(&user_id) || !items.contains_key(isbn) {
            r.filter("no_profile");
            continue;
        }
        if !seen.insert((user_id, isbn.clone())) {
            r.filter("duplicate");
            continue;
        }
        r.kept += 1;
        ratings.push(RatingRecord {
            user_id,
            item_id: isbn.clone(),
            rating,
            order_key,
        });
    }

    let schema = DatasetSchema {
        rating_min: 1.0,
        rating_max: 10.0,
        user: ProfileSchema {
            id: "bookcrossing-user-v1".into(),
            fields: vec![
                FieldSpec {
                    name: "age".into(),
                    kind: FieldKind::NumericBucketed { edges: BX_AGE_EDGES.to_vec() },
                },
                categorical("country", &countries),
            ],
        },
        item: ProfileSchema {
            id: "bookcrossing-item-v1".into(),
            fields: vec![
                FieldSpec {
                    name: "year".into(),
                    kind: FieldKind::NumericBucketed { edges: BX_YEAR_EDGES.to_vec() },
                },
                categorical("author", &authors),
                categorical("publisher", &publishers),
            ],
        },
    };
    Ok(ParsedDataset {
        corpus: Corpus {
            schema,
            users,
            items,
            ratings,
        },
        report,
    })
}
