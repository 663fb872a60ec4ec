//! Daily adverse-event alert feed, matched on the client.
//!
//! Clients download the whole day's feed; the only request they send names
//! the day, so the request bytes are the same for every user.

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::canonical::{Canonical, DecodeError, MapBuilder, MapReader, Value};
use crate::vaccination::DoseInfo;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertScope {
    Product,
    Lot,
    Site,
    ConditionCode,
}

impl AlertScope {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "product" => Some(AlertScope::Product),
            "lot" => Some(AlertScope::Lot),
            "site" => Some(AlertScope::Site),
            "condition_code" | "condition" => Some(AlertScope::ConditionCode),
            _ => None,
        }
    }
}

impl fmt::Display for AlertScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlertScope::Product => "product",
            AlertScope::Lot => "lot",
            AlertScope::Site => "site",
            AlertScope::ConditionCode => "condition_code",
        })
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct AlertEntry {
    pub scope: AlertScope,
    pub key: String,
    pub message: String,
    pub day: NaiveDate,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AlertFeed {
    pub day: NaiveDate,
    pub entries: Vec<AlertEntry>,
}

/// Stamps every entry with the feed's day.
pub fn publish_alert_feed<I>(day: NaiveDate, entries: I) -> AlertFeed
where
    I: IntoIterator<Item = (AlertScope, String, String)>,
{
    AlertFeed {
        day,
        entries: entries
            .into_iter()
            .map(|(scope, key, message)| AlertEntry {
                scope,
                key,
                message,
                day,
            })
            .collect(),
    }
}

impl AlertFeed {
    /// One JSON record per line.
    pub fn to_lines(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("serializable") + "\n")
            .collect()
    }

    pub fn from_lines(day: NaiveDate, text: &str) -> Result<Self, serde_json::Error> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<AlertEntry>, _>>()?;
        Ok(AlertFeed { day, entries })
    }
}

/// The only message a client sends to fetch alerts.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct FeedRequest {
    pub day: NaiveDate,
}

impl Canonical for FeedRequest {
    fn to_value(&self) -> Value {
        MapBuilder::new().field("day", self.day).build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let day = m.date("day")?;
        m.finish()?;
        Ok(FeedRequest { day })
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct MatchResult {
    pub matches: Vec<AlertEntry>,
}

impl MatchResult {
    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn scopes(&self) -> Vec<AlertScope> {
        self.matches.iter().map(|e| e.scope).collect()
    }
}

/// Matches the feed against the wallet's doses and the user's condition codes.
pub fn match_alerts<S: AsRef<str>>(feed: &AlertFeed, doses: &[DoseInfo], conditions: &[S]) -> MatchResult {
    let hit = |e: &AlertEntry| match e.scope {
        AlertScope::Product => doses.iter().any(|d| d.product == e.key),
        AlertScope::Lot => doses.iter().any(|d| d.lot == e.key),
        AlertScope::Site => doses.iter().any(|d| d.site_id == e.key),
        AlertScope::ConditionCode => conditions.iter().any(|c| c.as_ref() == e.key),
    };
    let mut matches: Vec<AlertEntry> = feed.entries.iter().filter(|e| hit(e)).cloned().collect();
    matches.sort_by(|a, b| a.scope.cmp(&b.scope).then_with(|| a.key.cmp(&b.key)));
    MatchResult { matches }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 4, 2).unwrap()
    }

    fn dose(lot: &str, site: &str) -> DoseInfo {
        DoseInfo::new("PFZ", lot, NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(), 1, site)
    }

    fn feed() -> AlertFeed {
        publish_alert_feed(
            day(),
            [
                (AlertScope::Lot, "L-123".to_string(), "lot recalled".to_string()),
                (AlertScope::Site, "S-9".to_string(), "cold chain failure".to_string()),
                (AlertScope::ConditionCode, "ALG-PEG".to_string(), "PEG allergy advisory".to_string()),
            ],
        )
    }

    #[test]
    fn matching_rules() {
        let f = feed();
        let m = match_alerts(&f, &[dose("L-123", "S-1")], &[] as &[&str]);
        assert_eq!(m.scopes(), vec![AlertScope::Lot]);
        let m = match_alerts(&f, &[dose("L-999", "S-1")], &[] as &[&str]);
        assert!(m.is_empty());
        let m = match_alerts(&f, &[dose("L-999", "S-1")], &["ALG-PEG"]);
        assert_eq!(m.scopes(), vec![AlertScope::ConditionCode]);
        let m = match_alerts(&f, &[dose("L-1", "S-1"), dose("L-123", "S-9")], &["ALG-PEG"]);
        assert_eq!(m.matches.len(), 3);
    }

    #[test]
    fn feed_lines_round_trip() {
        let f = feed();
        let text = f.to_lines();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().contains("\"scope\":\"lot\""));
        assert_eq!(AlertFeed::from_lines(day(), &text).unwrap(), f);
    }

    #[test]
    fn request_bytes_depend_only_on_day() {
        let a = FeedRequest { day: day() }.canonical_bytes();
        // Different users build the same request whatever they hold.
        let b = FeedRequest { day: day() }.canonical_bytes();
        assert_eq!(a, b);
        let next = FeedRequest {
            day: day().succ_opt().unwrap(),
        };
        assert_ne!(a, next.canonical_bytes());
        assert_eq!(FeedRequest::from_canonical_bytes(&a).unwrap().day, day());
    }
}
