//! Articles, event annotations and the train/validation split.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Timelike, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The corporate events tracked by the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventType {
    /// Acquisition
    A,
    /// Positive clinical trial / FDA approval
    CT,
    /// Regular dividend
    RD,
    /// Dividend cut
    DC,
    /// Dividend increase
    DI,
    /// Guidance increase
    GI,
    /// New contract
    NC,
    /// Reverse stock split
    RSS,
    /// Special dividend
    SD,
    /// Stock repurchase
    SR,
    /// Stock split
    SS,
}

impl EventType {
    pub const ALL: [EventType; 11] = [
        EventType::A,
        EventType::CT,
        EventType::RD,
        EventType::DC,
        EventType::DI,
        EventType::GI,
        EventType::NC,
        EventType::RSS,
        EventType::SD,
        EventType::SR,
        EventType::SS,
    ];

    pub fn code(self) -> &'static str {
        match self {
            EventType::A => "A",
            EventType::CT => "CT",
            EventType::RD => "RD",
            EventType::DC => "DC",
            EventType::DI => "DI",
            EventType::GI => "GI",
            EventType::NC => "NC",
            EventType::RSS => "RSS",
            EventType::SD => "SD",
            EventType::SR => "SR",
            EventType::SS => "SS",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EventType::A => "Acquisition",
            EventType::CT => "Clinical Trial",
            EventType::RD => "Dividend",
            EventType::DC => "Dividend Cut",
            EventType::DI => "Dividend Increase",
            EventType::GI => "Guidance Increase",
            EventType::NC => "New Contract",
            EventType::RSS => "Reverse Stock Split",
            EventType::SD => "Special Dividend",
            EventType::SR => "Stock Repurchase",
            EventType::SS => "Stock Split",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for EventType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EventType::ALL
            .iter()
            .copied()
            .find(|e| e.code() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown event code {s:?}")))
    }
}

/// A token label: one of the tracked events or `O` (no event).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Event(EventType),
    O,
}

/// The ordered events `e_1..e_K` plus the no-event label.
///
/// Score columns follow this order: column `j < K` is `events[j]`, column
/// `K` is `O`. The ordering is persisted with every trained model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    events: Vec<EventType>,
}

impl LabelSet {
    pub fn new(events: Vec<EventType>) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::Invalid("label set needs at least one event".into()));
        }
        let distinct: HashSet<_> = events.iter().collect();
        if distinct.len() != events.len() {
            return Err(Error::Invalid("label set contains duplicate events".into()));
        }
        Ok(LabelSet { events })
    }

    /// All eleven events in canonical order.
    pub fn full() -> Self {
        LabelSet {
            events: EventType::ALL.to_vec(),
        }
    }

    pub fn events(&self) -> &[EventType] {
        &self.events
    }

    /// Number of events, `K`.
    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    /// `K + 1`.
    pub fn len(&self) -> usize {
        self.events.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Column of the no-event label.
    pub fn o_index(&self) -> usize {
        self.events.len()
    }

    pub fn event_index(&self, e: EventType) -> Option<usize> {
        self.events.iter().position(|&x| x == e)
    }

    pub fn index(&self, label: Label) -> Option<usize> {
        match label {
            Label::O => Some(self.o_index()),
            Label::Event(e) => self.event_index(e),
        }
    }

    pub fn label(&self, idx: usize) -> Label {
        if idx == self.o_index() {
            Label::O
        } else {
            Label::Event(self.events[idx])
        }
    }

    pub fn contains(&self, label: Label) -> bool {
        self.index(label).is_some()
    }
}

/// A news article with a minute-precision publish time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub title: String,
    pub text: String,
    pub published_at: DateTime<Utc>,
}

impl Article {
    /// Stand-in timestamp for undated documents such as encyclopedia entries.
    pub fn sentinel_ts() -> DateTime<Utc> {
        DateTime::<Utc>::UNIX_EPOCH
    }

    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        text: impl Into<String>,
        published_at: DateTime<Utc>,
    ) -> Result<Self> {
        let article = Article {
            id: id.into(),
            title: title.into().trim().to_string(),
            text: text.into().trim().to_string(),
            published_at,
        };
        if article.title.is_empty() || article.text.is_empty() {
            return Err(Error::Invalid(format!(
                "article {:?}: title and text must be non-empty",
                article.id
            )));
        }
        if article.published_at.second() != 0 || article.published_at.nanosecond() != 0 {
            return Err(Error::Invalid(format!(
                "article {:?}: timestamp has sub-minute component",
                article.id
            )));
        }
        Ok(article)
    }

    /// `title ⊕ " " ⊕ text`, the string all character spans index into.
    pub fn full_text(&self) -> String {
        format!("{} {}", self.title, self.text)
    }
}

/// Character-level annotation `[start, end)` over [`Article::full_text`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpan {
    pub start: usize,
    pub end: usize,
    pub event: EventType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledArticle {
    pub article: Article,
    pub spans: Vec<EventSpan>,
    /// Gold ticker, when the source provides one.
    pub ticker: Option<String>,
}

impl LabeledArticle {
    pub fn unlabeled(article: Article) -> Self {
        LabeledArticle {
            article,
            spans: Vec::new(),
            ticker: None,
        }
    }

    /// Distinct annotated events.
    pub fn events(&self) -> BTreeSet<EventType> {
        self.spans.iter().map(|s| s.event).collect()
    }

    fn validate(&self) -> Result<()> {
        let len = self.article.full_text().chars().count();
        for s in &self.spans {
            if s.start >= s.end || s.end > len {
                return Err(Error::Invalid(format!(
                    "article {:?}: span [{}, {}) outside text of {} chars",
                    self.article.id, s.start, s.end, len
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

/// Tokens with character spans into `title ⊕ " " ⊕ text`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<Token>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }

    /// First `max_len` tokens.
    pub fn truncated(&self, max_len: usize) -> TokenSeq {
        TokenSeq {
            tokens: self.tokens.iter().take(max_len).cloned().collect(),
        }
    }
}

/// Labels aligned one-to-one with a [`TokenSeq`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSequence {
    pub labels: Vec<Label>,
}

impl LabelSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn events(&self) -> BTreeSet<EventType> {
        self.labels
            .iter()
            .filter_map(|l| match l {
                Label::Event(e) => Some(*e),
                Label::O => None,
            })
            .collect()
    }

    /// Maximal runs of one event as `[tok_start, tok_end)` ranges.
    pub fn runs(&self) -> Vec<(usize, usize, EventType)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.labels.len() {
            if let Label::Event(e) = self.labels[i] {
                let start = i;
                while i < self.labels.len() && self.labels[i] == Label::Event(e) {
                    i += 1;
                }
                out.push((start, i, e));
            } else {
                i += 1;
            }
        }
        out
    }

    /// Character spans covering each run, suitable for re-projection.
    pub fn to_spans(&self, toks: &TokenSeq) -> Vec<EventSpan> {
        self.runs()
            .into_iter()
            .map(|(s, e, event)| EventSpan {
                start: toks.tokens[s].start,
                end: toks.tokens[e - 1].end,
                event,
            })
            .collect()
    }
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Split `title ⊕ " " ⊕ text` into word and punctuation tokens.
///
/// Case is preserved. Every punctuation character is its own token.
pub fn tokenize(title: &str, text: &str) -> Result<TokenSeq> {
    if title.is_empty() || text.is_empty() {
        return Err(Error::Invalid(
            "tokenize: title and text must be non-empty".into(),
        ));
    }
    let joined = format!("{title} {text}");
    Ok(tokenize_str(&joined))
}

pub(crate) fn tokenize_str(s: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut cur_start = 0;
    let flush = |cur: &mut String, start: usize, end: usize, tokens: &mut Vec<Token>| {
        if !cur.is_empty() {
            tokens.push(Token {
                surface: std::mem::take(cur),
                start,
                end,
            });
        }
    };
    let mut pos = 0;
    for c in s.chars() {
        if c.is_whitespace() {
            flush(&mut cur, cur_start, pos, &mut tokens);
        } else if is_punct(c) {
            flush(&mut cur, cur_start, pos, &mut tokens);
            tokens.push(Token {
                surface: c.to_string(),
                start: pos,
                end: pos + 1,
            });
        } else {
            if cur.is_empty() {
                cur_start = pos;
            }
            cur.push(c);
        }
        pos += 1;
    }
    flush(&mut cur, cur_start, pos, &mut tokens);
    TokenSeq { tokens }
}

/// Assign each token the event of any annotation it overlaps, `O` otherwise.
///
/// Events outside `ls` count as no event. A token touched by annotations of
/// two different tracked events is an error.
pub fn project_labels(
    la: &LabeledArticle,
    toks: &TokenSeq,
    ls: &LabelSet,
) -> Result<LabelSequence> {
    la.validate()?;
    let mut labels = Vec::with_capacity(toks.len());
    for (i, t) in toks.tokens.iter().enumerate() {
        let mut label = Label::O;
        for s in &la.spans {
            if s.start < t.end && t.start < s.end && ls.event_index(s.event).is_some() {
                match label {
                    Label::O => label = Label::Event(s.event),
                    Label::Event(prev) if prev != s.event => {
                        return Err(Error::Data(format!(
                            "article {:?}: token {i} ({:?}) covered by both {prev} and {}",
                            la.article.id, t.surface, s.event
                        )));
                    }
                    Label::Event(_) => {}
                }
            }
        }
        labels.push(label);
    }
    Ok(LabelSequence { labels })
}

/// Parse an ISO-8601 UTC timestamp that must have minute precision.
pub fn parse_minute_ts(s: &str) -> Result<DateTime<Utc>> {
    let ts = if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        dt.with_timezone(&Utc)
    } else {
        let trimmed = s.strip_suffix('Z').unwrap_or(s);
        NaiveDateTime::parse_from_str(trimmed, "%Y-%m-%dT%H:%M")
            .or_else(|_| NaiveDateTime::parse_from_str(trimmed, "%Y-%m-%d %H:%M"))
            .map_err(|_| Error::Invalid(format!("unparseable timestamp {s:?}")))?
            .and_utc()
    };
    if ts.second() != 0 || ts.nanosecond() != 0 {
        return Err(Error::Invalid(format!(
            "timestamp {s:?} is not at minute precision"
        )));
    }
    Ok(ts)
}

pub fn format_minute_ts(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%MZ").to_string()
}

#[derive(Deserialize)]
struct ArticleRecord {
    id: String,
    title: String,
    text: String,
    #[serde(default)]
    published_at: Option<String>,
    #[serde(default)]
    labels: Vec<(usize, usize, String)>,
    #[serde(default)]
    ticker: Option<String>,
}

/// Load labeled articles from JSONL; unlabeled records get an empty span list.
///
/// A missing or empty `published_at` maps to [`Article::sentinel_ts`].
pub fn load_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledArticle>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ArticleRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let ts = match rec.published_at.as_deref() {
            None | Some("") => Article::sentinel_ts(),
            Some(s) => parse_minute_ts(s).map_err(|e| Error::parse(path, lineno, e.to_string()))?,
        };
        if !seen.insert(rec.id.clone()) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate id {:?}", rec.id),
            ));
        }
        let article = Article::new(rec.id, rec.title, rec.text, ts)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let spans = rec
            .labels
            .into_iter()
            .map(|(start, end, code)| {
                Ok(EventSpan {
                    start,
                    end,
                    event: code.parse()?,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let la = LabeledArticle {
            article,
            spans,
            ticker: rec.ticker.map(|t| t.to_uppercase()),
        };
        la.validate()
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        out.push(la);
    }
    Ok(out)
}

/// Load articles from JSONL in file order.
pub fn load_articles(path: impl AsRef<Path>) -> Result<Vec<Article>> {
    Ok(load_labeled(path)?
        .into_iter()
        .map(|la| la.article)
        .collect())
}

/// Serialize one article back to the JSONL record shape.
pub fn to_record(la: &LabeledArticle) -> serde_json::Value {
    let mut v = serde_json::json!({
        "id": la.article.id,
        "title": la.article.title,
        "text": la.article.text,
        "published_at": format_minute_ts(&la.article.published_at),
    });
    if !la.spans.is_empty() {
        v["labels"] = la
            .spans
            .iter()
            .map(|s| serde_json::json!([s.start, s.end, s.event.code()]))
            .collect();
    }
    if let Some(t) = &la.ticker {
        v["ticker"] = serde_json::json!(t);
    }
    v
}

/// Which strata were too small to split.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SplitReport {
    /// Event sets (as codes) whose single article went wholly to train.
    pub train_only_strata: Vec<Vec<EventType>>,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<LabeledArticle>,
    pub val: Vec<LabeledArticle>,
    pub report: SplitReport,
}

/// Stratified random split; an article's stratum is its set of events.
///
/// Both halves keep the input order.
pub fn split_train_val(data: &[LabeledArticle], ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Invalid(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut strata: BTreeMap<Vec<EventType>, Vec<usize>> = BTreeMap::new();
    for (i, la) in data.iter().enumerate() {
        strata
            .entry(la.events().into_iter().collect())
            .or_default()
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; data.len()];
    let mut report = SplitReport::default();
    for (key, mut idx) in strata {
        if idx.len() < 2 {
            report.train_only_strata.push(key);
            idx.iter().for_each(|&i| in_train[i] = true);
            continue;
        }
        idx.shuffle(&mut rng);
        let n_train = ((ratio * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        idx[..n_train].iter().for_each(|&i| in_train[i] = true);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (la, t) in data.iter().zip(in_train) {
        if t {
            train.push(la.clone());
        } else {
            val.push(la.clone());
        }
    }
    Ok(Split { train, val, report })
}
