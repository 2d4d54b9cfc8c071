//! Engagement and requested-tag metrics over generation records and events.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use chrono::Duration;
use serde::Serialize;
use thiserror::Error;

use crate::records::{EventType, GenerationRecord, PlaylistEvent};
use crate::taxonomy::Facet;

pub const DEFAULT_WINDOW_DAYS: u32 = 7;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("window must be at least one day")]
    InvalidWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngagementReport {
    pub window_days: u32,
    pub generated_count: usize,
    pub listened_count: usize,
    pub listen_through_rate: f64,
}

/// A playlist counts as listened iff some `listened` event satisfies
/// `created_at <= occurred_at < created_at + window_days`. Records sharing a
/// playlist id count once, using the first.
pub fn listen_through(
    records: &[GenerationRecord],
    events: &[PlaylistEvent],
    window_days: u32,
) -> Result<EngagementReport, AnalyticsError> {
    if window_days == 0 {
        return Err(AnalyticsError::InvalidWindow);
    }
    let window = Duration::days(i64::from(window_days));
    let mut created = HashMap::with_capacity(records.len());
    for r in records {
        created.entry(r.playlist_id.as_str()).or_insert(r.created_at);
    }
    let mut listened = HashSet::new();
    for e in events {
        if e.event_type != EventType::Listened {
            continue;
        }
        if let Some(&start) = created.get(e.playlist_id.as_str()) {
            if start <= e.occurred_at && e.occurred_at < start + window {
                listened.insert(e.playlist_id.as_str());
            }
        }
    }
    let generated_count = created.len();
    let listened_count = listened.len();
    let listen_through_rate = if generated_count == 0 {
        0.0
    } else {
        listened_count as f64 / generated_count as f64
    };
    Ok(EngagementReport {
        window_days,
        generated_count,
        listened_count,
        listen_through_rate,
    })
}

impl EngagementReport {
    pub fn to_table(&self) -> String {
        format!(
            "window_days  generated  listened  listen_through\n{:>11}  {:>9}  {:>8}  {:>14.4}\n",
            self.window_days, self.generated_count, self.listened_count, self.listen_through_rate
        )
    }

    pub fn to_csv(&self) -> String {
        format!(
            "window_days,generated,listened,listen_through_rate\n{},{},{},{:.6}\n",
            self.window_days, self.generated_count, self.listened_count, self.listen_through_rate
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagCount {
    pub value: String,
    pub count: u64,
    pub share: f64,
}

/// Per facet: rows by descending count, then value.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TagFrequencyReport {
    pub facets: BTreeMap<Facet, Vec<TagCount>>,
}

pub fn tag_frequencies(records: &[GenerationRecord]) -> TagFrequencyReport {
    let mut counts: BTreeMap<Facet, BTreeMap<&str, u64>> = BTreeMap::new();
    for r in records {
        let unique: HashSet<_> = r.extracted_tags().collect();
        for tag in unique {
            *counts.entry(tag.facet).or_default().entry(&tag.value).or_default() += 1;
        }
    }
    let facets = counts
        .into_iter()
        .map(|(facet, values)| {
            let total: u64 = values.values().sum();
            let mut rows: Vec<TagCount> = values
                .into_iter()
                .map(|(value, count)| TagCount {
                    value: value.to_string(),
                    count,
                    share: count as f64 / total as f64,
                })
                .collect();
            rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.value.cmp(&b.value)));
            (facet, rows)
        })
        .collect();
    TagFrequencyReport { facets }
}

impl TagFrequencyReport {
    pub fn facet(&self, facet: Facet) -> &[TagCount] {
        self.facets.get(&facet).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_empty(&self) -> bool {
        self.facets.is_empty()
    }

    fn rows(&self, only: Option<Facet>) -> impl Iterator<Item = (Facet, &TagCount)> {
        self.facets
            .iter()
            .filter(move |(f, _)| only.is_none_or(|o| o == **f))
            .flat_map(|(f, rows)| rows.iter().map(move |r| (*f, r)))
    }

    pub fn to_table(&self, only: Option<Facet>) -> String {
        let rows: Vec<_> = self.rows(only).collect();
        let fw = rows.iter().map(|(f, _)| f.as_str().len()).max().unwrap_or(0).max(5);
        let vw = rows.iter().map(|(_, r)| r.value.chars().count()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<fw$}  {:<vw$}  {:>7}  {:>6}\n", "facet", "value", "count", "share");
        for (f, r) in rows {
            let _ = writeln!(out, "{:<fw$}  {:<vw$}  {:>7}  {:>6.4}", f.as_str(), r.value, r.count, r.share);
        }
        out
    }

    pub fn to_csv(&self, only: Option<Facet>) -> String {
        let mut out = String::from("facet,value,count,share\n");
        for (f, r) in self.rows(only) {
            let _ = writeln!(out, "{},{},{},{:.6}", f.as_str(), r.value, r.count, r.share);
        }
        out
    }
}
