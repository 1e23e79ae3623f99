//! Minute bars, the trading calendar and per-article price labels.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::parse_minute_ts;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Session {
    Pre,
    Regular,
    After,
}

impl std::str::FromStr for Session {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PRE" => Ok(Session::Pre),
            "REGULAR" => Ok(Session::Regular),
            "AFTER" => Ok(Session::After),
            _ => Err(Error::Invalid(format!("unknown session {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinuteBar {
    pub ticker: String,
    pub ts: DateTime<Utc>,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: u64,
    pub session: Session,
}

impl MinuteBar {
    pub fn validate(&self) -> Result<()> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::Invalid(format!(
                "{} {}: non-positive price",
                self.ticker, self.ts
            )));
        }
        let lo = self.open.min(self.close);
        let hi = self.open.max(self.close);
        if !(self.low <= lo && hi <= self.high) {
            return Err(Error::Invalid(format!(
                "{} {}: OHLC out of order (o={} h={} l={} c={})",
                self.ticker, self.ts, self.open, self.high, self.low, self.close
            )));
        }
        Ok(())
    }
}

/// A rejected CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: usize,
    pub msg: String,
}

/// Per-ticker time-sorted bar series. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BarStore {
    series: BTreeMap<String, Vec<MinuteBar>>,
}

impl BarStore {
    /// Build from bars in any order. Invalid bars and duplicate
    /// `(ticker, ts)` keys are returned as errors (by input position).
    pub fn from_bars(bars: impl IntoIterator<Item = MinuteBar>) -> (Self, Vec<RowError>) {
        let mut errors = Vec::new();
        let mut series: BTreeMap<String, Vec<MinuteBar>> = BTreeMap::new();
        for (i, bar) in bars.into_iter().enumerate() {
            match bar.validate() {
                Ok(()) => series.entry(bar.ticker.clone()).or_default().push(bar),
                Err(e) => errors.push(RowError {
                    line: i + 1,
                    msg: e.to_string(),
                }),
            }
        }
        for bars in series.values_mut() {
            bars.sort_by_key(|b| b.ts);
            let before = bars.len();
            bars.dedup_by_key(|b| b.ts);
            if bars.len() != before {
                errors.push(RowError {
                    line: 0,
                    msg: format!(
                        "{}: {} duplicate timestamps dropped",
                        bars[0].ticker,
                        before - bars.len()
                    ),
                });
            }
        }
        (BarStore { series }, errors)
    }

    pub fn series(&self, ticker: &str) -> &[MinuteBar] {
        self.series.get(ticker).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn tickers(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn get(&self, ticker: &str, ts: DateTime<Utc>) -> Option<&MinuteBar> {
        let s = self.series(ticker);
        s.binary_search_by_key(&ts, |b| b.ts).ok().map(|i| &s[i])
    }

    /// Bars with `from <= ts <= to`.
    pub fn range(&self, ticker: &str, from: DateTime<Utc>, to: DateTime<Utc>) -> &[MinuteBar] {
        let s = self.series(ticker);
        let lo = s.partition_point(|b| b.ts < from);
        let hi = s.partition_point(|b| b.ts <= to);
        if lo >= hi {
            &[]
        } else {
            &s[lo..hi]
        }
    }

    pub fn len(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct BarRow {
    ticker: String,
    ts: String,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: u64,
    session: String,
}

/// Load `ticker,ts,open,high,low,close,volume,session` CSV.
///
/// Bad rows are skipped and returned with their 1-based file line number.
pub fn load_bars(path: impl AsRef<Path>) -> Result<(BarStore, Vec<RowError>)> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut bars = Vec::new();
    let mut lines = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in rdr.deserialize::<BarRow>().enumerate() {
        let line = i + 2;
        let parsed = row.map_err(|e| e.to_string()).and_then(|r| {
            Ok(MinuteBar {
                ts: parse_minute_ts(&r.ts).map_err(|e| e.to_string())?,
                session: r.session.parse().map_err(|e: Error| e.to_string())?,
                ticker: r.ticker,
                open: r.open,
                high: r.high,
                low: r.low,
                close: r.close,
                volume: r.volume,
            })
        });
        match parsed {
            Ok(b) => {
                bars.push(b);
                lines.push(line);
            }
            Err(msg) => errors.push(RowError { line, msg }),
        }
    }
    let (store, bad) = BarStore::from_bars(bars);
    errors.extend(bad.into_iter().map(|e| RowError {
        line: if e.line == 0 { 0 } else { lines[e.line - 1] },
        msg: e.msg,
    }));
    errors.sort_by_key(|e| e.line);
    Ok((store, errors))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::parse(
            path,
            e.position().map_or(0, |p| p.line() as usize),
            e.to_string(),
        ),
    }
}

/// One trading day's session bounds (UTC).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradingDay {
    pub date: NaiveDate,
    pub pre_open: DateTime<Utc>,
    pub reg_open: DateTime<Utc>,
    pub reg_close: DateTime<Utc>,
    pub after_close: DateTime<Utc>,
}

impl TradingDay {
    pub fn session_of(&self, ts: DateTime<Utc>) -> Option<Session> {
        if ts >= self.pre_open && ts < self.reg_open {
            Some(Session::Pre)
        } else if ts >= self.reg_open && ts < self.reg_close {
            Some(Session::Regular)
        } else if ts >= self.reg_close && ts < self.after_close {
            Some(Session::After)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TradingCalendar {
    days: Vec<TradingDay>,
}

impl TradingCalendar {
    pub fn new(days: Vec<TradingDay>) -> Result<Self> {
        for d in &days {
            if !(d.pre_open < d.reg_open && d.reg_open < d.reg_close && d.reg_close < d.after_close)
            {
                return Err(Error::Invalid(format!(
                    "{}: session bounds not strictly ordered",
                    d.date
                )));
            }
        }
        for w in days.windows(2) {
            if w[0].date >= w[1].date || w[0].after_close > w[1].pre_open {
                return Err(Error::Invalid(format!(
                    "trading days not strictly increasing at {}",
                    w[1].date
                )));
            }
        }
        Ok(TradingCalendar { days })
    }

    pub fn days(&self) -> &[TradingDay] {
        &self.days
    }

    /// Index of trading day 1 for an event at `ts`: the first day whose
    /// after-hours close has not passed.
    pub fn first_day_index(&self, ts: DateTime<Utc>) -> Option<usize> {
        let i = self.days.partition_point(|d| d.after_close < ts);
        (i < self.days.len()).then_some(i)
    }

    /// The `k`-th trading day counted from `ts` (day 1 as above).
    pub fn trading_day(&self, ts: DateTime<Utc>, k: usize) -> Result<&TradingDay> {
        if k == 0 {
            return Err(Error::Invalid(
                "horizon must be at least one trading day".into(),
            ));
        }
        self.first_day_index(ts)
            .and_then(|i| self.days.get(i + k - 1))
            .ok_or_else(|| {
                Error::Data(format!("calendar exhausted: no trading day {k} after {ts}"))
            })
    }

    /// After-hours close of trading day `k`.
    pub fn window_end(&self, ts: DateTime<Utc>, k: usize) -> Result<DateTime<Utc>> {
        self.trading_day(ts, k).map(|d| d.after_close)
    }
}

#[derive(Debug, Deserialize)]
struct CalendarRow {
    date: String,
    pre_open: String,
    reg_open: String,
    reg_close: String,
    after_close: String,
}

fn parse_bound(
    date: NaiveDate,
    s: &str,
    not_before: Option<DateTime<Utc>>,
) -> Result<DateTime<Utc>> {
    if s.contains('T') {
        return parse_minute_ts(s);
    }
    let t = NaiveTime::parse_from_str(s.trim_end_matches('Z'), "%H:%M")
        .map_err(|_| Error::Invalid(format!("bad session time {s:?}")))?;
    let mut ts = date.and_time(t).and_utc();
    // bounds past UTC midnight roll over to the next date
    if let Some(prev) = not_before {
        if ts <= prev {
            ts += TimeDelta::days(1);
        }
    }
    Ok(ts)
}

/// Load `date,pre_open,reg_open,reg_close,after_close` CSV.
///
/// Times are UTC, either `HH:MM` on the row's date (rolling past midnight
/// when a bound would otherwise go backwards) or full ISO timestamps.
pub fn load_calendar(path: impl AsRef<Path>) -> Result<TradingCalendar> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut days = Vec::new();
    for (i, row) in rdr.deserialize::<CalendarRow>().enumerate() {
        let line = i + 2;
        let r = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let day = (|| -> Result<TradingDay> {
            let date = NaiveDate::parse_from_str(&r.date, "%Y-%m-%d")
                .map_err(|_| Error::Invalid(format!("bad date {:?}", r.date)))?;
            let pre_open = parse_bound(date, &r.pre_open, None)?;
            let reg_open = parse_bound(date, &r.reg_open, Some(pre_open))?;
            let reg_close = parse_bound(date, &r.reg_close, Some(reg_open))?;
            let after_close = parse_bound(date, &r.after_close, Some(reg_close))?;
            Ok(TradingDay {
                date,
                pre_open,
                reg_open,
                reg_close,
                after_close,
            })
        })()
        .map_err(|e| Error::parse(path, line, e.to_string()))?;
        days.push(day);
    }
    TradingCalendar::new(days).map_err(|e| Error::parse(path, 0, e.to_string()))
}

/// The bar at exactly the publish minute, in any session.
pub fn first_tradable<'a>(
    store: &'a BarStore,
    ticker: &str,
    publish_ts: DateTime<Utc>,
) -> Option<&'a MinuteBar> {
    store.get(ticker, publish_ts)
}

/// Extremes and close over one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonLabels {
    pub k: usize,
    pub highest: f64,
    pub highest_ts: DateTime<Utc>,
    pub lowest: f64,
    pub lowest_ts: DateTime<Utc>,
    pub close: f64,
    pub close_ts: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceLabels {
    pub first_minute_ts: DateTime<Utc>,
    pub first_open: f64,
    pub first_close: f64,
    /// Horizons 1, 2, 3 in order.
    pub horizons: Vec<HorizonLabels>,
}

impl PriceLabels {
    pub fn horizon(&self, k: usize) -> Option<&HorizonLabels> {
        self.horizons.iter().find(|h| h.k == k)
    }
}

pub const LABEL_HORIZONS: [usize; 3] = [1, 2, 3];

/// Price labels for an article, or `None` without a bar at the publish
/// minute or when the calendar does not reach three trading days.
///
/// Each horizon window is `[first_minute_ts, window_end(k)]`; ties in the
/// extremes resolve to the earliest bar.
pub fn compute_price_labels(
    store: &BarStore,
    calendar: &TradingCalendar,
    ticker: &str,
    publish_ts: DateTime<Utc>,
) -> Option<PriceLabels> {
    let first = first_tradable(store, ticker, publish_ts)?;
    let mut horizons = Vec::with_capacity(LABEL_HORIZONS.len());
    for k in LABEL_HORIZONS {
        let end = calendar.window_end(publish_ts, k).ok()?;
        let bars = store.range(ticker, first.ts, end);
        let mut hi = &bars[0];
        let mut lo = &bars[0];
        for b in bars {
            if b.high > hi.high {
                hi = b;
            }
            if b.low < lo.low {
                lo = b;
            }
        }
        let last = bars.last().expect("window contains the entry bar");
        horizons.push(HorizonLabels {
            k,
            highest: hi.high,
            highest_ts: hi.ts,
            lowest: lo.low,
            lowest_ts: lo.ts,
            close: last.close,
            close_ts: last.ts,
        });
    }
    Some(PriceLabels {
        first_minute_ts: first.ts,
        first_open: first.open,
        first_close: first.close,
        horizons,
    })
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use chrono::{Datelike, TimeZone, Weekday};

    /// Weekday calendar with US summer hours in UTC: 08:00 / 13:30 / 20:00 / 24:00.
    pub fn weekday_calendar(start: NaiveDate, n_days: usize) -> TradingCalendar {
        let mut days = Vec::new();
        let mut d = start;
        while days.len() < n_days {
            if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                let at = |h, m| Utc.from_utc_datetime(&d.and_hms_opt(h, m, 0).unwrap());
                days.push(TradingDay {
                    date: d,
                    pre_open: at(8, 0),
                    reg_open: at(13, 30),
                    reg_close: at(20, 0),
                    after_close: at(23, 59) + TimeDelta::minutes(1),
                });
            }
            d = d.succ_opt().unwrap();
        }
        TradingCalendar::new(days).unwrap()
    }

    pub fn bar(ticker: &str, ts: DateTime<Utc>, o: f64, h: f64, l: f64, c: f64) -> MinuteBar {
        MinuteBar {
            ticker: ticker.into(),
            ts,
            open: o,
            high: h,
            low: l,
            close: c,
            volume: 100,
            session: Session::Regular,
        }
    }
}
