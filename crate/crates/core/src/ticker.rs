//! Company / ticker recognition by string matching.
//!
//! Company names are matched case-insensitively on whole words after
//! dropping punctuation and trailing legal suffixes from both the names and
//! the article. Ticker symbols are matched case-sensitively on whole words.
//! Symbols of one or two characters only count right after an exchange cue
//! such as `NYSE:`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use aho_corasick::{AhoCorasick, MatchKind};
use serde::{Deserialize, Serialize};

use crate::corpus::Article;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Exchange {
    Nyse,
    Nasdaq,
    Other,
}

impl std::str::FromStr for Exchange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "NYSE" => Exchange::Nyse,
            "NASDAQ" => Exchange::Nasdaq,
            _ => Exchange::Other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TickerPair {
    pub company_name: String,
    pub ticker: String,
    pub exchange: Exchange,
}

impl TickerPair {
    pub fn new(company_name: &str, ticker: &str, exchange: Exchange) -> Result<Self> {
        let company_name = company_name.trim().to_string();
        let ticker = ticker.trim().to_uppercase();
        if company_name.is_empty() {
            return Err(Error::Invalid("empty company name".into()));
        }
        let len = ticker.chars().count();
        if !(1..=6).contains(&len)
            || !ticker
                .chars()
                .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '.' || c == '-')
        {
            return Err(Error::Invalid(format!("bad ticker symbol {ticker:?}")));
        }
        Ok(TickerPair {
            company_name,
            ticker,
            exchange,
        })
    }
}

#[derive(Debug, Deserialize)]
struct PairRow {
    company_name: String,
    ticker: String,
    #[serde(default)]
    exchange: String,
}

/// Load `company_name,ticker,exchange` CSV, dropping duplicate pairs.
pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<TickerPair>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, 0, format!("{other:?}")),
    })?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.deserialize::<PairRow>().enumerate() {
        let line = i + 2;
        let r = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let exchange = r.exchange.parse()?;
        let pair = TickerPair::new(&r.company_name, &r.ticker, exchange)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        if seen.insert((pair.company_name.clone(), pair.ticker.clone())) {
            out.push(pair);
        }
    }
    Ok(out)
}

const LEGAL_SUFFIXES: &[&str] = &[
    "inc",
    "incorporated",
    "corp",
    "corporation",
    "ltd",
    "limited",
    "co",
    "company",
    "llc",
    "plc",
    "lp",
    "com",
];

const EXCHANGE_CUES: &[&str] = &["NYSE:", "NASDAQ:", "NYSEAMERICAN:", "AMEX:"];

/// A word of the normalized article: lowercase alphanumeric run.
struct Word {
    /// Char offset in `title ⊕ " " ⊕ text`.
    char_start: usize,
    in_title: bool,
}

/// Lowercased alphanumeric words joined by single spaces, plus the char
/// offset of each word.
fn normalize(s: &str, title_chars: usize) -> (String, Vec<Word>, Vec<usize>) {
    let mut norm = String::new();
    let mut words = Vec::new();
    let mut byte_starts = Vec::new();
    let mut in_word = false;
    for (pos, c) in s.chars().enumerate() {
        if c.is_alphanumeric() {
            if !in_word {
                if !norm.is_empty() {
                    norm.push(' ');
                }
                byte_starts.push(norm.len());
                words.push(Word {
                    char_start: pos,
                    in_title: pos < title_chars,
                });
                in_word = true;
            }
            norm.extend(c.to_lowercase());
        } else {
            in_word = false;
        }
    }
    (norm, words, byte_starts)
}

/// Normalized company name used as the match pattern.
pub fn normalize_company(name: &str) -> String {
    let (norm, _, _) = normalize(name, 0);
    let mut words: Vec<&str> = norm.split(' ').filter(|w| !w.is_empty()).collect();
    while words.len() > 1 && LEGAL_SUFFIXES.contains(words.last().unwrap()) {
        words.pop();
    }
    words.join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickerMatch {
    pub ticker: String,
    pub company_name: String,
    pub occurrences: usize,
    pub title_prefix_hit: bool,
    pub confidence: f64,
    /// Char offset of the earliest occurrence.
    pub first_offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecognizerConfig {
    /// Confidence added for a company-name hit in the title prefix.
    pub boost: f64,
    /// Title prefix length, in words.
    pub prefix_window: usize,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        RecognizerConfig {
            boost: 5.0,
            prefix_window: 6,
        }
    }
}

/// Pair table compiled into matching automata. Build once, query many.
#[derive(Debug, Clone)]
pub struct TickerRecognizer {
    pairs: Vec<TickerPair>,
    config: RecognizerConfig,
    names: AhoCorasick,
    /// pattern id → pair indices sharing that normalized name
    name_pairs: Vec<Vec<usize>>,
    symbols: AhoCorasick,
    symbol_pairs: Vec<Vec<usize>>,
    symbol_lens: Vec<usize>,
}

impl TickerRecognizer {
    pub fn new(pairs: Vec<TickerPair>, config: RecognizerConfig) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Invalid(
                "ticker recognizer needs at least one pair".into(),
            ));
        }
        let mut name_ids: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut sym_ids: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, p) in pairs.iter().enumerate() {
            let n = normalize_company(&p.company_name);
            if !n.is_empty() {
                name_ids.entry(n).or_default().push(i);
            }
            sym_ids.entry(p.ticker.clone()).or_default().push(i);
        }
        let build = |pats: Vec<&String>| {
            AhoCorasick::builder()
                .match_kind(MatchKind::Standard)
                .build(pats)
                .map_err(|e| Error::Invalid(format!("cannot build matcher: {e}")))
        };
        let names = build(name_ids.keys().collect())?;
        let symbols = build(sym_ids.keys().collect())?;
        let symbol_lens = sym_ids.keys().map(|s| s.len()).collect();
        Ok(TickerRecognizer {
            pairs,
            config,
            names,
            name_pairs: name_ids.into_values().collect(),
            symbols,
            symbol_pairs: sym_ids.into_values().collect(),
            symbol_lens,
        })
    }

    pub fn pairs(&self) -> &[TickerPair] {
        &self.pairs
    }

    /// The single most relevant ticker, if any pair occurs in the article.
    ///
    /// Ranking: confidence, then earliest first occurrence, then ticker.
    pub fn recognize(&self, article: &Article) -> Option<TickerMatch> {
        let full = article.full_text();
        let title_chars = article.title.chars().count();
        // occurrences, title hit, first offset
        let mut stats: HashMap<usize, (usize, bool, usize)> = HashMap::new();

        let (norm, words, byte_starts) = normalize(&full, title_chars);
        let nb = norm.as_bytes();
        for m in self.names.find_overlapping_iter(&norm) {
            let (s, e) = (m.start(), m.end());
            if (s > 0 && nb[s - 1] != b' ') || (e < nb.len() && nb[e] != b' ') {
                continue;
            }
            let w = byte_starts.partition_point(|&b| b < s);
            let last_word = byte_starts.partition_point(|&b| b < e) - 1;
            let hit = w < self.config.prefix_window && words[last_word].in_title;
            let offset = words[w].char_start;
            for &pi in &self.name_pairs[m.pattern().as_usize()] {
                let st = stats.entry(pi).or_insert((0, false, usize::MAX));
                st.0 += 1;
                st.1 |= hit;
                st.2 = st.2.min(offset);
            }
        }

        let fb = full.as_bytes();
        for m in self.symbols.find_overlapping_iter(&full) {
            let (s, e) = (m.start(), m.end());
            let before = full[..s].chars().next_back();
            let after = full[e..].chars().next();
            if before.is_some_and(char::is_alphanumeric) || after.is_some_and(char::is_alphanumeric)
            {
                continue;
            }
            let pid = m.pattern().as_usize();
            if self.symbol_lens[pid] <= 2 && !has_exchange_cue(&fb[..s]) {
                continue;
            }
            let offset = full[..s].chars().count();
            for &pi in &self.symbol_pairs[pid] {
                let st = stats.entry(pi).or_insert((0, false, usize::MAX));
                st.0 += 1;
                st.2 = st.2.min(offset);
            }
        }

        stats
            .into_iter()
            .map(|(pi, (occ, hit, first))| {
                let p = &self.pairs[pi];
                TickerMatch {
                    ticker: p.ticker.clone(),
                    company_name: p.company_name.clone(),
                    occurrences: occ,
                    title_prefix_hit: hit,
                    confidence: occ as f64 + if hit { self.config.boost } else { 0.0 },
                    first_offset: first,
                }
            })
            .min_by(|a, b| {
                b.confidence
                    .total_cmp(&a.confidence)
                    .then(a.first_offset.cmp(&b.first_offset))
                    .then_with(|| a.ticker.cmp(&b.ticker))
                    .then_with(|| a.company_name.cmp(&b.company_name))
            })
    }
}

fn has_exchange_cue(prefix: &[u8]) -> bool {
    let trimmed = std::str::from_utf8(prefix).unwrap_or("").trim_end();
    let tail: String = trimmed
        .chars()
        .rev()
        .take(16)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_ascii_uppercase();
    EXCHANGE_CUES.iter().any(|cue| tail.ends_with(cue))
}

/// Convenience wrapper over [`TickerRecognizer`].
pub fn recognize(
    article: &Article,
    pairs: &[TickerPair],
    config: RecognizerConfig,
) -> Result<Option<TickerMatch>> {
    Ok(TickerRecognizer::new(pairs.to_vec(), config)?.recognize(article))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use std::io::Write;

    fn art(title: &str, text: &str) -> Article {
        Article::new(
            "a",
            title,
            text,
            Utc.with_ymd_and_hms(2021, 1, 4, 15, 0, 0).unwrap(),
        )
        .unwrap()
    }

    fn pair(n: &str, t: &str) -> TickerPair {
        TickerPair::new(n, t, Exchange::Nasdaq).unwrap()
    }

    #[test]
    fn load_dedup_and_normalize() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(
            b"company_name,ticker,exchange\nAmazon.com Inc.,amzn,NASDAQ\nAmazon.com Inc.,AMZN,NASDAQ\nAgilent Technologies,A,NYSE\n",
        )
        .unwrap();
        let pairs = load_pairs(f.path()).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].ticker, "AMZN");
        assert_eq!(pairs[1].exchange, Exchange::Nyse);
    }

    #[test]
    fn load_reports_bad_rows() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"company_name,ticker,exchange\nGood Co,GOOD,NYSE\nBad Co,TOOLONGSYM,NYSE\n")
            .unwrap();
        assert!(matches!(
            load_pairs(f.path()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn suffix_normalization() {
        assert_eq!(normalize_company("Amazon.com, Inc."), "amazon");
        assert_eq!(normalize_company("Ford Motor Co."), "ford motor");
        assert_eq!(normalize_company("Co"), "co");
    }

    #[test]
    fn title_prefix_boost() {
        let r = TickerRecognizer::new(vec![pair("Amazon.com, Inc.", "AMZN")], Default::default())
            .unwrap();
        let m = r
            .recognize(&art(
                "Amazon announces new warehouse",
                "The retailer said on Monday.",
            ))
            .unwrap();
        assert_eq!(m.ticker, "AMZN");
        assert!(m.title_prefix_hit);
        assert_eq!(m.occurrences, 1);
        assert_eq!(m.confidence, 6.0);
    }

    #[test]
    fn most_occurrences_wins() {
        let r = TickerRecognizer::new(
            vec![pair("Xeno Labs", "XENO"), pair("Yotta Corp", "YOTA")],
            Default::default(),
        )
        .unwrap();
        let a = art(
            "Deal news today from the sector",
            "Yotta Corp said Xeno Labs will partner. Xeno Labs shares rose. Analysts like Xeno Labs.",
        );
        assert_eq!(r.recognize(&a).unwrap().ticker, "XENO");
    }

    #[test]
    fn title_boost_beats_counts_and_ties_break_on_position() {
        let r = TickerRecognizer::new(
            vec![pair("Xeno Labs", "XENO"), pair("Yotta", "YOTA")],
            Default::default(),
        )
        .unwrap();
        // Yotta in title prefix: 1 + 5 = 6 beats Xeno's 3
        let a = art(
            "Yotta buys a stake",
            "in Xeno Labs. Xeno Labs and Xeno Labs.",
        );
        assert_eq!(r.recognize(&a).unwrap().ticker, "YOTA");
        // equal counts: earliest wins
        let b = art(
            "Market wrap for the long week",
            "Xeno Labs and Yotta both moved.",
        );
        assert_eq!(r.recognize(&b).unwrap().ticker, "XENO");
        // equal counts and positions impossible; equal confidence with lexicographic fallback
        let r2 = TickerRecognizer::new(
            vec![pair("Same Name", "BBB"), pair("Same Name", "AAA")],
            Default::default(),
        )
        .unwrap();
        let c = art("Market wrap for the week", "Same Name moved.");
        assert_eq!(r2.recognize(&c).unwrap().ticker, "AAA");
    }

    #[test]
    fn ticker_symbols_whole_word_case_sensitive() {
        let r =
            TickerRecognizer::new(vec![pair("Zeta Holdings", "ZETA")], Default::default()).unwrap();
        assert!(r
            .recognize(&art("Markets", "zeta function and ZETAX are unrelated"))
            .is_none());
        let m = r.recognize(&art("Markets", "Shares of ZETA rose")).unwrap();
        assert_eq!(m.occurrences, 1);
        assert!(!m.title_prefix_hit);
    }

    #[test]
    fn short_symbols_need_exchange_cue() {
        let r = TickerRecognizer::new(vec![pair("Agilent Technologies", "A")], Default::default())
            .unwrap();
        assert!(r
            .recognize(&art("Note", "A company said A deal is near"))
            .is_none());
        assert!(r
            .recognize(&art("Note", "The firm (NYSE: A) rose"))
            .is_some());
    }

    #[test]
    fn nothing_when_absent() {
        let r = TickerRecognizer::new(vec![pair("Amazon", "AMZN")], Default::default()).unwrap();
        assert!(r.recognize(&art("Weather", "Rain expected")).is_none());
        assert!(TickerRecognizer::new(vec![], Default::default()).is_err());
    }

    #[test]
    fn name_needs_word_boundaries() {
        let r = TickerRecognizer::new(vec![pair("Meta", "METAX")], Default::default()).unwrap();
        assert!(r
            .recognize(&art("Metadata", "metaverse metallic"))
            .is_none());
    }
}
