use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Surface form reserved for token id 0.
pub const PAD_TOKEN: &str = "[pad]";

/// Index of an article in its [`NewsTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NewsIdx(pub u32);

impl NewsIdx {
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

/// Token vocabulary; id 0 is the pad token and never produced by real text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        Vocab {
            tokens: vec![PAD_TOKEN.to_string()],
            index: HashMap::new(),
        }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut v = Vocab::new();
        for t in tokens.into_iter().skip(1) {
            if v.index.contains_key(&t) || t == PAD_TOKEN {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
            v.intern(&t);
        }
        Ok(v)
    }

    /// Id of `token`, inserting it if new.
    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Number of ids including the pad token.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsArticle {
    pub news_id: String,
    /// Title tokens, truncated or padded with id 0 to the table's title length.
    pub token_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsTable {
    title_len: usize,
    articles: Vec<NewsArticle>,
    #[serde(skip)]
    index: HashMap<String, NewsIdx>,
}

impl NewsTable {
    pub fn new(title_len: usize) -> Self {
        NewsTable {
            title_len,
            articles: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn title_len(&self) -> usize {
        self.title_len
    }

    /// Add an article, padding/truncating its tokens. Fails on duplicate ids.
    pub fn push(&mut self, news_id: &str, mut token_ids: Vec<u32>) -> Result<NewsIdx> {
        if self.index.contains_key(news_id) {
            return Err(Error::invalid(format!("duplicate news id {news_id:?}")));
        }
        token_ids.resize(self.title_len, 0);
        let idx = NewsIdx(self.articles.len() as u32);
        self.articles.push(NewsArticle {
            news_id: news_id.to_string(),
            token_ids,
        });
        self.index.insert(news_id.to_string(), idx);
        Ok(idx)
    }

    pub fn resolve(&self, news_id: &str) -> Option<NewsIdx> {
        self.index.get(news_id).copied()
    }

    pub fn get(&self, idx: NewsIdx) -> &NewsArticle {
        &self.articles[idx.get()]
    }

    pub fn tokens(&self, idx: NewsIdx) -> &[u32] {
        &self.articles[idx.get()].token_ids
    }

    pub fn articles(&self) -> &[NewsArticle] {
        &self.articles
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.index = self
            .articles
            .iter()
            .enumerate()
            .map(|(i, a)| (a.news_id.clone(), NewsIdx(i as u32)))
            .collect();
    }
}

/// One user's local data: click history plus one impression of labelled candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorLog {
    pub user_id: String,
    pub history: Vec<NewsIdx>,
    pub impressions: Vec<(NewsIdx, u8)>,
}

impl BehaviorLog {
    pub fn positives(&self) -> impl Iterator<Item = NewsIdx> + '_ {
        self.impressions.iter().filter(|(_, y)| *y == 1).map(|(n, _)| *n)
    }

    pub fn negatives(&self) -> impl Iterator<Item = NewsIdx> + '_ {
        self.impressions.iter().filter(|(_, y)| *y == 0).map(|(n, _)| *n)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.impressions.iter().map(|(_, y)| *y).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub vocab: Vocab,
    pub news: NewsTable,
    pub logs: Vec<BehaviorLog>,
}

impl Dataset {
    /// Check that every id in every log resolves and every token is in the vocabulary.
    pub fn check(&self) -> Result<()> {
        let n = self.news.len();
        let ok = |idx: &NewsIdx| idx.get() < n;
        for log in &self.logs {
            if !log.history.iter().all(ok) || !log.impressions.iter().all(|(i, _)| ok(i)) {
                return Err(Error::invalid(format!(
                    "log for user {} references unknown news",
                    log.user_id
                )));
            }
        }
        let v = self.vocab.len() as u32;
        if self.news.articles().iter().any(|a| a.token_ids.iter().any(|&t| t >= v)) {
            return Err(Error::invalid("news token outside vocabulary"));
        }
        Ok(())
    }

    /// Restore lookup tables after deserialisation.
    pub fn rebuild_indices(&mut self) {
        self.vocab.rebuild_index();
        self.news.rebuild_index();
    }
}
