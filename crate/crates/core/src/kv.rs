//! `key=value` text: one pair per line, `#` starts a comment, blank lines ignored.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KvError {
    #[error("line {line}: expected key=value, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key {key}")]
    Duplicate { line: usize, key: String },
    #[error("key {key}: cannot parse {value:?} ({reason})")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing key {0}")]
    Missing(String),
}

pub type KvMap = BTreeMap<String, String>;

/// Splits one `key=value` pair, trimming both sides.
pub fn split_pair(text: &str) -> Option<(String, String)> {
    let (k, v) = text.split_once('=')?;
    let k = k.trim();
    if k.is_empty() {
        return None;
    }
    Some((k.to_string(), v.trim().to_string()))
}

pub fn parse_kv(text: &str) -> Result<KvMap, KvError> {
    let mut map = KvMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = split_pair(line).ok_or_else(|| KvError::Syntax {
            line: i + 1,
            text: raw.to_string(),
        })?;
        if map.contains_key(&k) {
            return Err(KvError::Duplicate { line: i + 1, key: k });
        }
        map.insert(k, v);
    }
    Ok(map)
}

pub fn render_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Parses `map[key]` if present.
pub fn get<T>(map: &KvMap, key: &str) -> Result<Option<T>, KvError>
where
    T: FromStr,
    T::Err: Display,
{
    map.get(key)
        .map(|v| {
            v.parse().map_err(|e: T::Err| KvError::BadValue {
                key: key.to_string(),
                value: v.clone(),
                reason: e.to_string(),
            })
        })
        .transpose()
}

pub fn require<T>(map: &KvMap, key: &str) -> Result<T, KvError>
where
    T: FromStr,
    T::Err: Display,
{
    get(map, key)?.ok_or_else(|| KvError::Missing(key.to_string()))
}
