use std::collections::BTreeSet;

use chrono::{DateTime, NaiveDate, TimeDelta, Utc};
use eventrade::backtest::{run_backtest, trade_at_best, trade_at_end, BENCHMARK_TICKER};
use eventrade::corpus::{split_train_val, tokenize};
use eventrade::detector::{decide, CombineMode, ScoreMatrix};
use eventrade::encoder::{mask_tokens, MASK_TOKEN};
use eventrade::market::{compute_price_labels, TradingDay};
use eventrade::{
    Article, BacktestConfig, BarStore, DetectorConfig, DetectorModel, Direction, EncoderConfig,
    EncoderParams, EntryMode, EventSpan, EventType, LabelSet, LabeledArticle, MinuteBar, Policy,
    Session, Signal, TradingCalendar,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn calendar() -> TradingCalendar {
    let mut days = Vec::new();
    let mut d = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
    while days.len() < 6 {
        if !matches!(d.format("%a").to_string().as_str(), "Sat" | "Sun") {
            let at = |h, m| d.and_hms_opt(h, m, 0).unwrap().and_utc();
            days.push(TradingDay {
                date: d,
                pre_open: at(9, 0),
                reg_open: at(14, 30),
                reg_close: at(21, 0),
                after_close: at(23, 59),
            });
        }
        d = d.succ_opt().unwrap();
    }
    TradingCalendar::new(days).unwrap()
}

/// Bars every `step` minutes from the first pre-open, built from relative moves.
fn bars_from(
    moves: &[(f64, f64, f64, f64)],
    step: i64,
    scale: f64,
    ticker: &str,
) -> Vec<MinuteBar> {
    let cal = calendar();
    let start = cal.days()[0].pre_open;
    let mut price = 50.0;
    let mut out = Vec::new();
    for (i, &(gap, body, up, down)) in moves.iter().enumerate() {
        let ts = start + TimeDelta::minutes(step * i as i64);
        let Some(session) = cal.days().iter().find_map(|d| d.session_of(ts)) else {
            continue;
        };
        let open = price * (1.0 + gap);
        let close = open * (1.0 + body);
        out.push(MinuteBar {
            ticker: ticker.into(),
            ts,
            open: open * scale,
            high: open.max(close) * (1.0 + up) * scale,
            low: open.min(close) * (1.0 - down) * scale,
            close: close * scale,
            volume: 1,
            session,
        });
        price = close;
    }
    out
}

fn moves() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    prop::collection::vec(
        (-0.1f64..0.1, -0.05f64..0.05, 0.0f64..0.05, 0.0f64..0.05),
        20..200,
    )
}

fn signal(ts: DateTime<Utc>, dir: Direction) -> Signal {
    Signal {
        article_id: "p".into(),
        ticker: "X".into(),
        direction: dir,
        trigger_events: BTreeSet::from([EventType::NC]),
        publish_ts: ts,
    }
}

proptest! {
    #[test]
    fn token_spans_increase_and_index_the_source(title in "[A-Za-z ,.]{1,30}", text in "[A-Za-z0-9 ,.!?]{1,60}") {
        prop_assume!(!title.trim().is_empty() && !text.trim().is_empty());
        let toks = tokenize(&title, &text).unwrap();
        let full: Vec<char> = format!("{title} {text}").chars().collect();
        let mut prev_end = 0;
        for t in &toks.tokens {
            prop_assert!(t.start >= prev_end && t.start < t.end && t.end <= full.len());
            prop_assert_eq!(full[t.start..t.end].iter().collect::<String>(), t.surface.clone());
            prev_end = t.end;
        }
    }

    #[test]
    fn split_partitions_deterministically(events in prop::collection::vec(0usize..4, 2..60), seed in 0u64..1000, ratio in 0.1f64..0.9) {
        let ts = Article::sentinel_ts();
        let data: Vec<LabeledArticle> = events
            .iter()
            .enumerate()
            .map(|(i, &e)| {
                let a = Article::new(format!("a{i}"), "Title", "some body text", ts).unwrap();
                let spans = if e == 0 {
                    vec![]
                } else {
                    vec![EventSpan { start: 0, end: 5, event: EventType::ALL[e] }]
                };
                LabeledArticle { article: a, spans, ticker: None }
            })
            .collect();
        let s1 = split_train_val(&data, ratio, seed).unwrap();
        let s2 = split_train_val(&data, ratio, seed).unwrap();
        let ids = |v: &[LabeledArticle]| v.iter().map(|a| a.article.id.clone()).collect::<Vec<_>>();
        prop_assert_eq!(ids(&s1.train), ids(&s2.train));
        let mut all: Vec<String> = ids(&s1.train).into_iter().chain(ids(&s1.val)).collect();
        all.sort();
        let mut want = ids(&data);
        want.sort();
        prop_assert_eq!(all, want);
        let train: BTreeSet<_> = ids(&s1.train).into_iter().collect();
        prop_assert!(ids(&s1.val).iter().all(|id| !train.contains(id)));
    }

    #[test]
    fn masking_count_and_positions(n in 1usize..80, rate in 0.01f64..0.9, seed in 0u64..500) {
        let text = (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let toks = tokenize("t", &text).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (masked, plan) = mask_tokens(&toks, rate, &mut rng).unwrap();
        let want = ((rate * toks.len() as f64).round() as usize).max(1);
        prop_assert_eq!(plan.positions.len(), want);
        let distinct: BTreeSet<_> = plan.positions.iter().collect();
        prop_assert_eq!(distinct.len(), want);
        for (&p, orig) in plan.positions.iter().zip(&plan.originals) {
            prop_assert_eq!(masked.tokens[p].surface.as_str(), MASK_TOKEN);
            prop_assert_eq!(&toks.tokens[p].surface, orig);
        }
    }

    #[test]
    fn raising_threshold_never_adds_events(logits in prop::collection::vec(-6.0f64..6.0, 11), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
        let ls = LabelSet::full();
        let sm = ScoreMatrix::zeros(4, 12, 1);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = decide(&ls, lo, CombineMode::Union, &sm, &logits);
        let b = decide(&ls, hi, CombineMode::Union, &sm, &logits);
        prop_assert!(b.high_events.is_subset(&a.high_events));
    }

    #[test]
    fn returns_are_scale_invariant(m in moves(), scale in 0.01f64..100.0, pick in 0usize..1000, long in any::<bool>()) {
        let cal = calendar();
        let base = bars_from(&m, 7, 1.0, "X");
        let scaled = bars_from(&m, 7, scale, "X");
        prop_assume!(!base.is_empty());
        let ts = base[pick % base.len()].ts;
        let (s1, _) = BarStore::from_bars(base);
        let (s2, _) = BarStore::from_bars(scaled);
        let dir = if long { Direction::Long } else { Direction::Short };
        let sig = signal(ts, dir);
        let a = trade_at_end(&sig, &s1, &cal, 2, 0.1, EntryMode::OpenMinute).unwrap().unwrap();
        let b = trade_at_end(&sig, &s2, &cal, 2, 0.1, EntryMode::OpenMinute).unwrap().unwrap();
        prop_assert!((a.gross_return_pct - b.gross_return_pct).abs() < 1e-9);
        prop_assert_eq!(a.exit_ts, b.exit_ts);
        let a = trade_at_best(&sig, &s1, &cal, 2).unwrap().unwrap();
        let b = trade_at_best(&sig, &s2, &cal, 2).unwrap().unwrap();
        prop_assert!((a.gross_return_pct - b.gross_return_pct).abs() < 1e-9);
    }

    #[test]
    fn price_labels_nest(m in moves(), pick in 0usize..1000) {
        let cal = calendar();
        let bars = bars_from(&m, 11, 1.0, "X");
        prop_assume!(!bars.is_empty());
        let ts = bars[pick % bars.len()].ts;
        let (store, _) = BarStore::from_bars(bars);
        if let Some(p) = compute_price_labels(&store, &cal, "X", ts) {
            for h in &p.horizons {
                prop_assert!(h.lowest <= h.highest);
                prop_assert!(h.highest_ts >= p.first_minute_ts && h.lowest_ts >= p.first_minute_ts);
            }
            for w in p.horizons.windows(2) {
                prop_assert!(w[1].highest >= w[0].highest && w[1].lowest <= w[0].lowest);
            }
        }
    }

    #[test]
    fn report_rates_are_ordered(m in moves(), picks in prop::collection::vec((0usize..1000, any::<bool>()), 0..12), tab in any::<bool>()) {
        let cal = calendar();
        let mut bars = bars_from(&m, 5, 1.0, "X");
        prop_assume!(!bars.is_empty());
        let mut signals: Vec<Signal> = picks
            .iter()
            .map(|&(i, long)| signal(bars[i % bars.len()].ts, if long { Direction::Long } else { Direction::Short }))
            .collect();
        signals.sort_by_key(|s| s.publish_ts);
        bars.extend(bars_from(&m, 5, 2.0, BENCHMARK_TICKER));
        let (store, _) = BarStore::from_bars(bars);
        let cfg = BacktestConfig { policy: if tab { Policy::Tab } else { Policy::Tae }, ..Default::default() };
        let r = run_backtest(&signals, &store, &cal, &cfg).unwrap();
        prop_assert!(0.0 <= r.big_win_rate && r.big_win_rate <= r.win_rate && r.win_rate <= 1.0);
        prop_assert_eq!(r.excess_return, r.total_return - r.market_return);
        if tab && !r.transactions.is_empty() {
            prop_assert_eq!(r.win_rate, 1.0);
        }
        for t in &r.transactions {
            prop_assert!(t.transaction.entry_ts <= t.transaction.exit_ts);
        }
        if let Some(last) = r.equity_curve.last() {
            prop_assert!((last.value - r.final_cash).abs() < 1e-9);
        }
    }
}

#[test]
fn window_end_strictly_increases() {
    let cal = calendar();
    let start: DateTime<Utc> = "2021-02-27T12:00:00Z".parse().unwrap();
    for h in 0..(24 * 6) {
        let ts = start + TimeDelta::hours(h);
        let ends: Vec<_> = (1..=3).filter_map(|k| cal.window_end(ts, k).ok()).collect();
        assert!(ends.windows(2).all(|w| w[0] < w[1]), "at {ts}");
    }
}

#[test]
fn model_round_trips_through_bytes() {
    let enc = EncoderParams::new(
        EncoderConfig {
            dim: 8,
            window: 1,
            vocab: 32,
            max_len: 6,
        },
        3,
    )
    .unwrap();
    let cfg = DetectorConfig {
        hidden: 4,
        threshold: 0.3,
        combine: CombineMode::Intersection,
    };
    let model = DetectorModel::new(
        enc,
        LabelSet::new(vec![EventType::SS, EventType::A]).unwrap(),
        &cfg,
        9,
    )
    .unwrap();
    let mut bytes = Vec::new();
    model.save(&mut bytes).unwrap();
    let back = DetectorModel::load(&mut bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    back.save(&mut again).unwrap();
    assert_eq!(bytes, again);
    assert_eq!(back.label_set.events(), &[EventType::SS, EventType::A]);
    assert_eq!(back.threshold, 0.3);
    let a = Article::new(
        "x",
        "Stock split",
        "announced today",
        Article::sentinel_ts(),
    )
    .unwrap();
    assert_eq!(
        eventrade::detector::decode(&model, &a).unwrap(),
        eventrade::detector::decode(&back, &a).unwrap()
    );
}

#[test]
fn session_tags_cover_the_day() {
    let cal = calendar();
    let d = &cal.days()[0];
    assert_eq!(d.session_of(d.pre_open), Some(Session::Pre));
    assert_eq!(d.session_of(d.reg_open), Some(Session::Regular));
    assert_eq!(d.session_of(d.reg_close), Some(Session::After));
    assert_eq!(d.session_of(d.after_close), None);
}
