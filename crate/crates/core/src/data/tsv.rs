//! MIND-style tab-separated files.
//!
//! - news: `news_id<TAB>space-joined title tokens`
//! - behaviors: `user_id<TAB>space-joined history ids<TAB>space-joined id-label pairs`
//!
//! Titles are lowercased, split on whitespace and truncated to the title
//! length; the vocabulary is built from the kept tokens in first-seen order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};

use super::types::{BehaviorLog, Dataset, NewsIdx, NewsTable, Vocab};

pub const DEFAULT_TITLE_LEN: usize = 16;

/// Malformed-line share above which a file is rejected.
const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub news_lines: usize,
    pub malformed_news: usize,
    pub behavior_lines: usize,
    pub malformed_behaviors: usize,
    pub skipped_empty_history: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn check_malformed(path: &Path, bad: usize, total: usize) -> Result<()> {
    if total > 0 && bad as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("{bad} of {total} lines are malformed"),
        });
    }
    Ok(())
}

pub fn load_dataset(
    news_path: &Path,
    behaviors_path: &Path,
    title_len: usize,
) -> Result<(Dataset, LoadReport)> {
    if title_len == 0 {
        return Err(Error::invalid("title length must be >= 1"));
    }
    let mut report = LoadReport::default();
    let mut vocab = Vocab::new();
    let mut news = NewsTable::new(title_len);

    for line in read(news_path)?.lines().filter(|l| !l.trim().is_empty()) {
        report.news_lines += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let parsed = match fields.as_slice() {
            [id, text] if !id.trim().is_empty() && !text.trim().is_empty() => {
                Some((id.trim(), text))
            }
            _ => None,
        };
        let Some((id, text)) = parsed else {
            report.malformed_news += 1;
            continue;
        };
        if news.resolve(id).is_some() {
            report.malformed_news += 1;
            continue;
        }
        let lower = text.to_lowercase();
        let tokens: Vec<u32> = lower
            .split_whitespace()
            .take(title_len)
            .map(|t| vocab.intern(t))
            .collect();
        news.push(id, tokens)?;
    }
    check_malformed(news_path, report.malformed_news, report.news_lines)?;

    let mut logs = Vec::new();
    for line in read(behaviors_path)?.lines().filter(|l| !l.trim().is_empty()) {
        report.behavior_lines += 1;
        match parse_behavior(line, &news) {
            Some(log) if log.history.is_empty() => report.skipped_empty_history += 1,
            Some(log) => logs.push(log),
            None => report.malformed_behaviors += 1,
        }
    }
    check_malformed(behaviors_path, report.malformed_behaviors, report.behavior_lines)?;
    if report.malformed_news + report.malformed_behaviors + report.skipped_empty_history > 0 {
        warn!(
            "skipped {} malformed news, {} malformed behaviors, {} empty histories",
            report.malformed_news, report.malformed_behaviors, report.skipped_empty_history
        );
    }

    let dataset = Dataset { vocab, news, logs };
    dataset.check()?;
    Ok((dataset, report))
}

fn parse_behavior(line: &str, news: &NewsTable) -> Option<BehaviorLog> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [user, history, impressions] = fields.as_slice() else {
        return None;
    };
    let user = user.trim();
    if user.is_empty() {
        return None;
    }
    let history = history
        .split_whitespace()
        .map(|id| news.resolve(id))
        .collect::<Option<Vec<NewsIdx>>>()?;
    let impressions = impressions
        .split_whitespace()
        .map(|pair| {
            let (id, label) = pair.rsplit_once('-')?;
            let label = match label {
                "0" => 0,
                "1" => 1,
                _ => return None,
            };
            Some((news.resolve(id)?, label))
        })
        .collect::<Option<Vec<(NewsIdx, u8)>>>()?;
    if impressions.is_empty() {
        return None;
    }
    Some(BehaviorLog {
        user_id: user.to_string(),
        history,
        impressions,
    })
}

pub fn write_news_tsv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for a in dataset.news.articles() {
        let words: Vec<&str> = a
            .token_ids
            .iter()
            .filter(|&&t| t != 0)
            .map(|&t| dataset.vocab.token(t).expect("token in vocabulary"))
            .collect();
        writeln!(out, "{}\t{}", a.news_id, words.join(" ")).expect("write to string");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_behaviors_tsv(dataset: &Dataset, logs: &[BehaviorLog], path: &Path) -> Result<()> {
    let id = |n: NewsIdx| dataset.news.get(n).news_id.as_str();
    let mut out = String::new();
    for log in logs {
        let hist: Vec<&str> = log.history.iter().map(|&n| id(n)).collect();
        let imps: Vec<String> = log
            .impressions
            .iter()
            .map(|&(n, y)| format!("{}-{}", id(n), y))
            .collect();
        writeln!(out, "{}\t{}\t{}", log.user_id, hist.join(" "), imps.join(" "))
            .expect("write to string");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
