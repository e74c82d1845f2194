use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawFormat {
    /// `user::item::rating::timestamp`
    Movielens,
    /// `user,item,rating,timestamp`
    Amazon,
    /// tab-separated `user, check-in time, latitude, longitude, location_id`
    Gowalla,
}

impl FromStr for RawFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "movielens" => Ok(RawFormat::Movielens),
            "amazon" => Ok(RawFormat::Amazon),
            "gowalla" => Ok(RawFormat::Gowalla),
            other => Err(Error::Config(format!(
                "unknown dataset format {other:?} (expected movielens, amazon or gowalla)"
            ))),
        }
    }
}

impl fmt::Display for RawFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RawFormat::Movielens => "movielens",
            RawFormat::Amazon => "amazon",
            RawFormat::Gowalla => "gowalla",
        })
    }
}

/// One line of a raw file. `rating` is `None` for check-in data.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub user: String,
    pub item: String,
    pub rating: Option<f64>,
    pub timestamp: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawStats {
    pub users: usize,
    pub items: usize,
    pub records: usize,
}

pub fn raw_stats(records: &[RawRecord]) -> RawStats {
    let users: BTreeSet<&str> = records.iter().map(|r| r.user.as_str()).collect();
    let items: BTreeSet<&str> = records.iter().map(|r| r.item.as_str()).collect();
    RawStats {
        users: users.len(),
        items: items.len(),
        records: records.len(),
    }
}

pub fn load_raw(path: &Path, format: RawFormat) -> Result<Vec<RawRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_raw(&text, format, path)
}

/// Parses file contents; `origin` is only used in error messages.
pub fn parse_raw(text: &str, format: RawFormat, origin: &Path) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: idx + 1,
            msg,
        };
        let record = match format {
            RawFormat::Movielens => parse_rating_line(line.split("::").collect(), "::").map_err(err)?,
            RawFormat::Amazon => parse_rating_line(line.split(',').collect(), ",").map_err(err)?,
            RawFormat::Gowalla => parse_checkin_line(line).map_err(err)?,
        };
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Empty(format!("{} contains no records", origin.display())));
    }
    Ok(records)
}

fn parse_rating_line(fields: Vec<&str>, sep: &str) -> std::result::Result<RawRecord, String> {
    if !(3..=4).contains(&fields.len()) {
        return Err(format!(
            "expected user{sep}item{sep}rating[{sep}timestamp], found {} fields",
            fields.len()
        ));
    }
    let user = non_empty(fields[0], "user id")?;
    let item = non_empty(fields[1], "item id")?;
    let rating: f64 = fields[2]
        .trim()
        .parse()
        .map_err(|_| format!("rating {:?} is not a number", fields[2]))?;
    if !rating.is_finite() {
        return Err(format!("rating {rating} is not finite"));
    }
    let timestamp = match fields.get(3) {
        Some(ts) => {
            let ts = ts.trim();
            ts.parse::<f64>()
                .map_err(|_| format!("timestamp {ts:?} is not a number"))?;
            Some(ts.to_string())
        }
        None => None,
    };
    Ok(RawRecord {
        user,
        item,
        rating: Some(rating),
        timestamp,
    })
}

fn parse_checkin_line(line: &str) -> std::result::Result<RawRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(format!(
            "expected 5 tab-separated fields (user, time, latitude, longitude, location), found {}",
            fields.len()
        ));
    }
    for (name, value) in [("latitude", fields[2]), ("longitude", fields[3])] {
        value
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("{name} {value:?} is not a number"))?;
    }
    Ok(RawRecord {
        user: non_empty(fields[0], "user id")?,
        item: non_empty(fields[4], "location id")?,
        rating: None,
        timestamp: Some(fields[1].trim().to_string()),
    })
}

fn non_empty(field: &str, what: &str) -> std::result::Result<String, String> {
    let f = field.trim();
    if f.is_empty() {
        Err(format!("empty {what}"))
    } else {
        Ok(f.to_string())
    }
}
