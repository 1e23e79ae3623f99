//! Signals, Trade-At-End / Trade-At-Best execution, the cash ledger and
//! report metrics.
//!
//! Win / big-win / average-return metrics are computed on gross returns;
//! commission only touches the ledger (and therefore total and excess
//! return).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{format_minute_ts, EventType};
use crate::error::{Error, Result};
use crate::market::{first_tradable, BarStore, MinuteBar, TradingCalendar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    Long,
    Short,
}

impl Direction {
    /// Trading direction implied by a single event; `None` for regular dividends.
    pub fn of_event(e: EventType) -> Option<Direction> {
        match e {
            EventType::RD => None,
            EventType::RSS | EventType::DC => Some(Direction::Short),
            EventType::A
            | EventType::CT
            | EventType::DI
            | EventType::GI
            | EventType::NC
            | EventType::SD
            | EventType::SR
            | EventType::SS => Some(Direction::Long),
        }
    }
}

/// Direction for an article's detected events; abstains on conflicts.
pub fn signal_from_events(events: &BTreeSet<EventType>) -> Option<Direction> {
    let dirs: BTreeSet<_> = events
        .iter()
        .filter_map(|&e| Direction::of_event(e).map(|d| d == Direction::Long))
        .collect();
    match (dirs.contains(&true), dirs.contains(&false)) {
        (true, false) => Some(Direction::Long),
        (false, true) => Some(Direction::Short),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub article_id: String,
    pub ticker: String,
    pub direction: Direction,
    pub trigger_events: BTreeSet<EventType>,
    pub publish_ts: DateTime<Utc>,
}

impl Signal {
    pub fn from_events(
        article_id: impl Into<String>,
        ticker: impl Into<String>,
        events: &BTreeSet<EventType>,
        publish_ts: DateTime<Utc>,
    ) -> Option<Signal> {
        let direction = signal_from_events(events)?;
        Some(Signal {
            article_id: article_id.into(),
            ticker: ticker.into(),
            direction,
            trigger_events: events
                .iter()
                .copied()
                .filter(|&e| e != EventType::RD)
                .collect(),
            publish_ts,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Policy {
    Tae,
    Tab,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntryMode {
    #[default]
    OpenMinute,
    CloseMinute,
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TAE" => Ok(Policy::Tae),
            "TAB" => Ok(Policy::Tab),
            _ => Err(Error::Invalid(format!("unknown policy {s:?} (TAE or TAB)"))),
        }
    }
}

impl std::str::FromStr for EntryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "OPEN_MINUTE" | "OPEN" => Ok(EntryMode::OpenMinute),
            "CLOSE_MINUTE" | "CLOSE" => Ok(EntryMode::CloseMinute),
            _ => Err(Error::Invalid(format!(
                "unknown entry mode {s:?} (OPEN_MINUTE or CLOSE_MINUTE)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExitReason {
    Horizon,
    StopLoss,
    Best,
}

/// Percentage return of one round trip.
///
/// Long: `(exit − entry) / entry · 100`. Short: entry is the sell price,
/// exit the buy-back, `(entry − exit) / entry · 100`.
pub fn transaction_return(direction: Direction, entry_price: f64, exit_price: f64) -> Result<f64> {
    if !(entry_price > 0.0 && exit_price > 0.0) {
        return Err(Error::Invalid(format!(
            "prices must be positive (entry {entry_price}, exit {exit_price})"
        )));
    }
    Ok(match direction {
        Direction::Long => (exit_price - entry_price) / entry_price * 100.0,
        Direction::Short => (entry_price - exit_price) / entry_price * 100.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub signal: Signal,
    pub entry_ts: DateTime<Utc>,
    pub entry_price: f64,
    pub exit_ts: DateTime<Utc>,
    pub exit_price: f64,
    pub policy: Policy,
    pub horizon_k: usize,
    pub exit_reason: ExitReason,
    pub gross_return_pct: f64,
}

fn make_tx(
    signal: &Signal,
    entry: (&MinuteBar, f64),
    exit: (DateTime<Utc>, f64),
    policy: Policy,
    k: usize,
    reason: ExitReason,
) -> Transaction {
    let gross =
        transaction_return(signal.direction, entry.1, exit.1).expect("bar prices are positive");
    Transaction {
        signal: signal.clone(),
        entry_ts: entry.0.ts,
        entry_price: entry.1,
        exit_ts: exit.0,
        exit_price: exit.1,
        policy,
        horizon_k: k,
        exit_reason: reason,
        gross_return_pct: gross,
    }
}

/// Check one bar against the stop. Returns the fill price if hit.
///
/// A bar opening through the stop fills at its open.
pub fn stop_fill(direction: Direction, bar: &MinuteBar, stop: f64) -> Option<f64> {
    match direction {
        Direction::Long if bar.open <= stop => Some(bar.open),
        Direction::Long if bar.low <= stop => Some(stop),
        Direction::Short if bar.open >= stop => Some(bar.open),
        Direction::Short if bar.high >= stop => Some(stop),
        _ => None,
    }
}

/// Hold for `k` trading days and exit at the regular close of day `k`,
/// unless the stop loss fires first.
///
/// Entry is the publish-minute bar's open or close. When the entry falls
/// after the regular close of day `k` the position exits at the after-hours
/// close instead. Returns `None` without an entry bar.
pub fn trade_at_end(
    signal: &Signal,
    store: &BarStore,
    calendar: &TradingCalendar,
    k: usize,
    stop_loss: f64,
    entry_mode: EntryMode,
) -> Result<Option<Transaction>> {
    if !(stop_loss > 0.0 && stop_loss < 1.0) {
        return Err(Error::Invalid(format!(
            "stop loss {stop_loss} not in (0, 1)"
        )));
    }
    let Some(entry_bar) = first_tradable(store, &signal.ticker, signal.publish_ts) else {
        return Ok(None);
    };
    let day = calendar.trading_day(signal.publish_ts, k)?;
    let deadline = if day.reg_close > entry_bar.ts {
        day.reg_close
    } else {
        day.after_close
    };
    let (entry_price, first_scan) = match entry_mode {
        EntryMode::OpenMinute => (entry_bar.open, entry_bar.ts),
        EntryMode::CloseMinute => (
            entry_bar.close,
            entry_bar.ts + chrono::TimeDelta::minutes(1),
        ),
    };
    let stop = match signal.direction {
        Direction::Long => entry_price * (1.0 - stop_loss),
        Direction::Short => entry_price * (1.0 + stop_loss),
    };
    // bars strictly before the deadline; a bar stamped at the deadline opens after it
    let window = store.range(
        &signal.ticker,
        entry_bar.ts,
        deadline - chrono::TimeDelta::minutes(1),
    );
    let mut exit = (entry_bar.ts, entry_price);
    for bar in window {
        if bar.ts >= first_scan {
            if let Some(fill) = stop_fill(signal.direction, bar, stop) {
                return Ok(Some(make_tx(
                    signal,
                    (entry_bar, entry_price),
                    (bar.ts, fill),
                    Policy::Tae,
                    k,
                    ExitReason::StopLoss,
                )));
            }
            exit = (bar.ts, bar.close);
        }
    }
    Ok(Some(make_tx(
        signal,
        (entry_bar, entry_price),
        exit,
        Policy::Tae,
        k,
        ExitReason::Horizon,
    )))
}

/// Exit at the best price within `k` trading days: highest high for longs,
/// lowest low for shorts, earliest bar on ties.
pub fn trade_at_best(
    signal: &Signal,
    store: &BarStore,
    calendar: &TradingCalendar,
    k: usize,
) -> Result<Option<Transaction>> {
    let Some(entry_bar) = first_tradable(store, &signal.ticker, signal.publish_ts) else {
        return Ok(None);
    };
    let end = calendar.window_end(signal.publish_ts, k)?;
    let window = store.range(&signal.ticker, entry_bar.ts, end);
    let mut best = entry_bar;
    for bar in window {
        let better = match signal.direction {
            Direction::Long => bar.high > best.high,
            Direction::Short => bar.low < best.low,
        };
        if better {
            best = bar;
        }
    }
    let price = match signal.direction {
        Direction::Long => best.high,
        Direction::Short => best.low,
    };
    Ok(Some(make_tx(
        signal,
        (entry_bar, entry_bar.open),
        (best.ts, price),
        Policy::Tab,
        k,
        ExitReason::Best,
    )))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub policy: Policy,
    pub horizon_k: usize,
    pub stop_loss: f64,
    pub entry_mode: EntryMode,
    /// Fraction of staked notional charged per round trip.
    pub commission: f64,
    /// Charge commission on both entry and exit notional instead.
    pub commission_per_side: bool,
    pub initial_cash: f64,
    pub stake: f64,
    /// Fraction of cash staked once cash falls below `stake`.
    pub low_cash_fraction: f64,
    pub benchmark_ticker: String,
    /// Benchmark span; defaults to the whole benchmark series.
    pub benchmark_start: Option<DateTime<Utc>>,
    pub benchmark_end: Option<DateTime<Utc>>,
}

pub const BENCHMARK_TICKER: &str = "^BENCH";

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            policy: Policy::Tae,
            horizon_k: 1,
            stop_loss: 0.2,
            entry_mode: EntryMode::OpenMinute,
            commission: 0.003,
            commission_per_side: false,
            initial_cash: 10_000.0,
            stake: 2_000.0,
            low_cash_fraction: 0.2,
            benchmark_ticker: BENCHMARK_TICKER.to_string(),
            benchmark_start: None,
            benchmark_end: None,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.horizon_k == 0 {
            return bad("horizon must be at least one trading day".into());
        }
        if !(self.stop_loss > 0.0 && self.stop_loss < 1.0) {
            return bad(format!("stop loss {} not in (0, 1)", self.stop_loss));
        }
        if !(0.0..1.0).contains(&self.commission) {
            return bad(format!("commission {} not in [0, 1)", self.commission));
        }
        if !(self.initial_cash >= 0.0 && self.stake > 0.0) {
            return bad("initial cash must be non-negative and stake positive".into());
        }
        if !(self.low_cash_fraction > 0.0 && self.low_cash_fraction <= 1.0) {
            return bad(format!(
                "low-cash fraction {} not in (0, 1]",
                self.low_cash_fraction
            ));
        }
        Ok(())
    }
}

/// A transaction after it went through the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookedTransaction {
    #[serde(flatten)]
    pub transaction: Transaction,
    pub stake: f64,
    pub commission: f64,
    /// Cash returned at exit minus the stake.
    pub pnl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventStats {
    pub win_rate: f64,
    pub avg_return_pct: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquityPoint {
    pub ts: DateTime<Utc>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config: BacktestConfig,
    pub transactions: Vec<BookedTransaction>,
    pub num_signals: usize,
    /// Signals without a bar at the publish minute.
    pub skipped_no_price: usize,
    /// Signals that arrived with no cash to stake.
    pub skipped_no_cash: usize,
    pub win_rate: f64,
    pub big_win_rate: f64,
    pub avg_return_pct: f64,
    pub final_cash: f64,
    pub total_return: f64,
    pub market_return: f64,
    pub excess_return: f64,
    pub per_event: BTreeMap<EventType, EventStats>,
    pub equity_curve: Vec<EquityPoint>,
}

/// `(win rate, big-win rate, average return)` over gross returns.
pub fn rate_metrics(returns: &[f64]) -> (f64, f64, f64) {
    if returns.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = returns.len() as f64;
    let wins = returns.iter().filter(|&&r| r >= 0.0).count() as f64;
    let big = returns.iter().filter(|&&r| r >= 1.0).count() as f64;
    (wins / n, big / n, returns.iter().sum::<f64>() / n)
}

/// Per-event win rate and average return; a transaction counts toward every
/// one of its trigger events.
pub fn per_event_breakdown(transactions: &[BookedTransaction]) -> BTreeMap<EventType, EventStats> {
    let mut by_event: BTreeMap<EventType, Vec<f64>> = BTreeMap::new();
    for t in transactions {
        for &e in &t.transaction.signal.trigger_events {
            by_event
                .entry(e)
                .or_default()
                .push(t.transaction.gross_return_pct);
        }
    }
    by_event
        .into_iter()
        .map(|(e, r)| {
            let (win_rate, _, avg_return_pct) = rate_metrics(&r);
            (
                e,
                EventStats {
                    win_rate,
                    avg_return_pct,
                    count: r.len(),
                },
            )
        })
        .collect()
}

/// Buy-and-hold dollar return of `initial_cash` in the benchmark.
pub fn market_return(store: &BarStore, config: &BacktestConfig) -> Result<f64> {
    let series = store.series(&config.benchmark_ticker);
    let start = config.benchmark_start.unwrap_or(DateTime::<Utc>::MIN_UTC);
    let end = config.benchmark_end.unwrap_or(DateTime::<Utc>::MAX_UTC);
    let span = store.range(&config.benchmark_ticker, start, end);
    let (Some(first), Some(last)) = (span.first(), span.last()) else {
        return Err(Error::Data(format!(
            "benchmark {:?} has no bars in the configured span ({} bars total)",
            config.benchmark_ticker,
            series.len()
        )));
    };
    Ok(config.initial_cash * (last.close / first.open - 1.0))
}

/// Execute one signal under the configured policy.
pub fn execute(
    signal: &Signal,
    store: &BarStore,
    calendar: &TradingCalendar,
    config: &BacktestConfig,
) -> Result<Option<Transaction>> {
    match config.policy {
        Policy::Tae => trade_at_end(
            signal,
            store,
            calendar,
            config.horizon_k,
            config.stop_loss,
            config.entry_mode,
        ),
        Policy::Tab => trade_at_best(signal, store, calendar, config.horizon_k),
    }
}

/// Replay signals through the ledger and compute every metric.
///
/// Entries and exits are processed in time order. At equal timestamps exits
/// settle before entries, except a same-minute round trip which settles
/// after its own entry.
pub fn run_backtest(
    signals: &[Signal],
    store: &BarStore,
    calendar: &TradingCalendar,
    config: &BacktestConfig,
) -> Result<BacktestReport> {
    config.validate()?;
    if signals
        .windows(2)
        .any(|w| w[0].publish_ts > w[1].publish_ts)
    {
        return Err(Error::Invalid(
            "signals must be sorted by publish time".into(),
        ));
    }
    let market = market_return(store, config)?;

    let mut txs = Vec::new();
    let mut skipped_no_price = 0;
    for s in signals {
        match execute(s, store, calendar, config)? {
            Some(t) => txs.push(t),
            None => skipped_no_price += 1,
        }
    }

    // (ts, phase, index): 0 = exit of an earlier entry, 1 = entry, 2 = same-minute exit
    let mut events: Vec<(DateTime<Utc>, u8, usize)> = Vec::with_capacity(2 * txs.len());
    for (i, t) in txs.iter().enumerate() {
        events.push((t.entry_ts, 1, i));
        events.push((t.exit_ts, if t.exit_ts > t.entry_ts { 0 } else { 2 }, i));
    }
    events.sort();

    let mut cash = config.initial_cash;
    let mut reserved = 0.0;
    let mut stakes: Vec<Option<(f64, f64)>> = vec![None; txs.len()];
    let mut pnls = vec![0.0; txs.len()];
    let mut skipped_no_cash = 0;
    let mut equity_curve = Vec::with_capacity(events.len() + 1);
    for (ts, phase, i) in events {
        let t = &txs[i];
        if phase == 1 {
            let stake = if cash >= config.stake {
                config.stake
            } else {
                cash * config.low_cash_fraction
            };
            if stake <= 0.0 {
                skipped_no_cash += 1;
                continue;
            }
            let entry_fee = if config.commission_per_side {
                stake * config.commission
            } else {
                0.0
            };
            cash -= stake + entry_fee;
            reserved += stake;
            stakes[i] = Some((stake, entry_fee));
        } else {
            let Some((stake, entry_fee)) = stakes[i] else {
                continue;
            };
            let proceeds = stake * (1.0 + t.gross_return_pct / 100.0);
            let exit_fee = if config.commission_per_side {
                proceeds * config.commission
            } else {
                stake * config.commission
            };
            cash += proceeds - exit_fee;
            reserved -= stake;
            let fee = entry_fee + exit_fee;
            stakes[i] = Some((stake, fee));
            pnls[i] = proceeds - stake - fee;
        }
        equity_curve.push(EquityPoint {
            ts,
            value: cash + reserved,
        });
    }

    let transactions: Vec<BookedTransaction> = txs
        .into_iter()
        .zip(stakes)
        .zip(pnls)
        .filter_map(|((t, s), pnl)| {
            s.map(|(stake, commission)| BookedTransaction {
                transaction: t,
                stake,
                commission,
                pnl,
            })
        })
        .collect();
    let returns: Vec<f64> = transactions
        .iter()
        .map(|t| t.transaction.gross_return_pct)
        .collect();
    let (win_rate, big_win_rate, avg_return_pct) = rate_metrics(&returns);
    let total_return = cash - config.initial_cash;
    Ok(BacktestReport {
        config: config.clone(),
        per_event: per_event_breakdown(&transactions),
        transactions,
        num_signals: signals.len(),
        skipped_no_price,
        skipped_no_cash,
        win_rate,
        big_win_rate,
        avg_return_pct,
        final_cash: cash,
        total_return,
        market_return: market,
        excess_return: total_return - market,
        equity_curve,
    })
}

/// `metric,value` rows for the headline numbers.
pub fn write_summary_csv(report: &BacktestReport, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "metric,value")?;
    writeln!(w, "transactions,{}", report.transactions.len())?;
    writeln!(w, "win_rate,{}", report.win_rate)?;
    writeln!(w, "big_win_rate,{}", report.big_win_rate)?;
    writeln!(w, "avg_return_pct,{}", report.avg_return_pct)?;
    writeln!(w, "final_cash,{}", report.final_cash)?;
    writeln!(w, "total_return,{}", report.total_return)?;
    writeln!(w, "market_return,{}", report.market_return)?;
    writeln!(w, "excess_return,{}", report.excess_return)?;
    writeln!(w, "skipped_no_price,{}", report.skipped_no_price)?;
    writeln!(w, "skipped_no_cash,{}", report.skipped_no_cash)
}

pub fn write_per_event_csv(report: &BacktestReport, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "event,win_rate,avg_return_pct,count")?;
    for (e, s) in &report.per_event {
        writeln!(w, "{},{},{},{}", e, s.win_rate, s.avg_return_pct, s.count)?;
    }
    Ok(())
}

pub fn write_equity_csv(report: &BacktestReport, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "ts,value")?;
    for p in &report.equity_curve {
        writeln!(w, "{},{}", format_minute_ts(&p.ts), p.value)?;
    }
    Ok(())
}

/// Headline table: win rate || big-win rate, average return, excess return,
/// transaction count.
pub fn headline_table(report: &BacktestReport) -> String {
    let policy = format!("{:?}({})", report.config.policy, report.config.horizon_k).to_uppercase();
    let rates = format!(
        "{:.2}% || {:.2}%",
        report.win_rate * 100.0,
        report.big_win_rate * 100.0
    );
    let avg = format!("{:.2}%", report.avg_return_pct);
    let excess = format!("{:.2}", report.excess_return);
    format!(
        "{:<10} {:>20} {:>12} {:>12} {:>12}\n{:<10} {:>20} {:>12} {:>12} {:>12}\n",
        "Policy",
        "Win Rate",
        "Ave. Return",
        "Exc. Return",
        "Num. Trans.",
        policy,
        rates,
        avg,
        excess,
        report.transactions.len()
    )
}
