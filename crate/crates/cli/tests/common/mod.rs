//! Synthetic corpora shared by the integration and acceptance tests.
#![allow(dead_code, clippy::type_complexity)]

use chrono::{DateTime, TimeDelta, Utc};
use eventrade::{Article, EventSpan, EventType, LabeledArticle};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const COMPANIES: &[(&str, &str)] = &[
    ("Acme Robotics", "ACMR"),
    ("Borealis Energy", "BORE"),
    ("Cobalt Mining", "CBLT"),
    ("Dunmore Foods", "DUNF"),
    ("Everline Logistics", "EVLN"),
    ("Fairhaven Bank", "FHBK"),
    ("Granite Software", "GRSW"),
    ("Harbor Pharmaceuticals", "HRBP"),
    ("Ironwood Aerospace", "IRWA"),
    ("Juniper Retail", "JNPR"),
    ("Kestrel Semiconductor", "KSTL"),
    ("Lumen Health", "LUMH"),
];

pub const EVENTS: [EventType; 4] = [EventType::A, EventType::SR, EventType::DC, EventType::NC];

// `#` marks the trigger phrase; `{c}` the subject, `{o}` another company, `{n}` a number.
fn positive_templates(e: EventType) -> &'static [&'static str] {
    match e {
        EventType::A => &[
            "{c} #agreed to acquire {o}# for {n} million dollars in cash.",
            "{c} #will buy rival {o}# in a deal valued at {n} million.",
            "{c} #signed a definitive agreement to acquire {o}#.",
        ],
        EventType::SR => &[
            "{c} #authorized a new stock repurchase program# of up to {n} million.",
            "The board of {c} #approved a share buyback# worth {n} million.",
            "{c} #launched a new share repurchase plan# covering {n} million shares.",
        ],
        EventType::DC => &[
            "{c} #cut its quarterly dividend# to {n} cents per share.",
            "{c} #suspended its dividend# to preserve cash.",
            "{c} #slashed the dividend payout# by {n} percent.",
        ],
        EventType::NC => &[
            "{c} #was awarded a contract# worth {n} million by the navy.",
            "{c} #won a multi-year supply contract# from {o}.",
            "{c} #secured a new contract# valued at {n} million.",
        ],
        _ => &[],
    }
}

fn distractor_templates() -> &'static [&'static str] {
    &[
        "{c} reported the completion of the recently announced stock repurchase program.",
        "{c} said the share buyback authorized last year has now expired.",
        "{c} denied a report that it plans to acquire {o}.",
        "{c} completed the integration of {o}, which it agreed to buy two years ago.",
        "{c} maintained its quarterly dividend at {n} cents per share.",
        "{c} said the dividend will be paid on schedule next month.",
        "{c} lost a contract renewal bid to {o}.",
        "{c} said a contract dispute with {o} was settled.",
    ]
}

const FILLER: &[&str] = &[
    "Shares moved in early trading.",
    "The company is headquartered in Ohio.",
    "Analysts expect more details on the next earnings call.",
    "The firm employs about {n} people.",
    "Executives declined to comment further.",
    "The statement was released before the market opened.",
    "Trading volume was above average.",
    "The company reports results in {n} days.",
];

const TITLES: &[&str] = &[
    "{c} issues statement",
    "{c} corporate update",
    "News from {c}",
    "{c} press release",
];

struct Builder {
    text: String,
    spans: Vec<(usize, usize)>,
}

fn fill(rng: &mut ChaCha8Rng, template: &str, company: &str, b: &mut Builder) {
    let other = loop {
        let (o, _) = COMPANIES[rng.gen_range(0..COMPANIES.len())];
        if o != company {
            break o;
        }
    };
    let s = template
        .replace("{c}", company)
        .replace("{o}", other)
        .replace("{n}", &rng.gen_range(2..900).to_string());
    let mut open = None;
    for ch in s.chars() {
        if ch == '#' {
            match open.take() {
                None => open = Some(b.text.len()),
                Some(start) => b.spans.push((start, b.text.len())),
            }
        } else {
            b.text.push(ch);
        }
    }
}

/// `n_pos` templated event articles (events round-robin) and `n_neg` near-miss
/// distractors, shuffled.
pub fn templated_corpus(n_pos: usize, n_neg: usize, seed: u64) -> Vec<LabeledArticle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: DateTime<Utc> = "2021-01-04T14:30:00Z".parse().unwrap();
    let mut kinds: Vec<Option<EventType>> =
        (0..n_pos).map(|i| Some(EVENTS[i % EVENTS.len()])).collect();
    kinds.extend(std::iter::repeat(None).take(n_neg));
    kinds.shuffle(&mut rng);
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let (company, ticker) = COMPANIES[rng.gen_range(0..COMPANIES.len())];
            let mut title = Builder {
                text: String::new(),
                spans: vec![],
            };
            let t = *TITLES.choose(&mut rng).unwrap();
            fill(&mut rng, t, company, &mut title);
            let mut b = Builder {
                text: format!("{} ", title.text),
                spans: vec![],
            };
            let main = match kind {
                Some(e) => *positive_templates(e).choose(&mut rng).unwrap(),
                None => *distractor_templates().choose(&mut rng).unwrap(),
            };
            let n_fill = rng.gen_range(1..4);
            let main_at = rng.gen_range(0..=n_fill);
            for k in 0..=n_fill {
                if k > 0 {
                    b.text.push(' ');
                }
                if k == main_at {
                    fill(&mut rng, main, company, &mut b);
                } else {
                    let f = *FILLER.choose(&mut rng).unwrap();
                    fill(&mut rng, f, company, &mut b);
                }
            }
            // spans index `title + " " + body`, exactly the article's full text
            let body = b.text[title.text.len() + 1..].to_string();
            let spans = b
                .spans
                .iter()
                .map(|&(start, end)| EventSpan {
                    start,
                    end,
                    event: kind.unwrap(),
                })
                .collect();
            let ts = base + TimeDelta::minutes(37 * i as i64);
            LabeledArticle {
                article: Article::new(format!("art-{i:04}"), title.text, body, ts).unwrap(),
                spans,
                ticker: Some(ticker.to_string()),
            }
        })
        .collect()
}

/// The five articles the pipeline fixture detects and trades on:
/// `(id, title, text, published_at, ticker, events)`.
pub const DETECT_ARTICLES: &[(&str, &str, &str, &str, &str, &[EventType])] = &[
    (
        "det-1",
        "Acme Robotics corporate update",
        "Acme Robotics agreed to acquire Dunmore Foods for 410 million dollars in cash. Executives declined to comment further.",
        "2021-01-05T15:00:00Z",
        "ACMR",
        &[EventType::A],
    ),
    (
        "det-2",
        "Cobalt Mining issues statement",
        "The statement was released before the market opened. Cobalt Mining cut its quarterly dividend to 12 cents per share.",
        "2021-01-05T12:00:00Z",
        "CBLT",
        &[EventType::DC],
    ),
    (
        "det-3",
        "Granite Software press release",
        "Granite Software authorized a new stock repurchase program of up to 250 million. Trading volume was above average.",
        "2021-01-06T22:00:00Z",
        "GRSW",
        &[EventType::SR],
    ),
    (
        "det-4",
        "News from Lumen Health",
        "Lumen Health secured a new contract valued at 75 million. The firm employs about 900 people.",
        "2021-01-07T16:37:00Z",
        "LUMH",
        &[EventType::NC],
    ),
    (
        "det-5",
        "Fairhaven Bank issues statement",
        "Fairhaven Bank maintained its quarterly dividend at 30 cents per share. Analysts expect more details on the next earnings call.",
        "2021-01-08T15:30:00Z",
        "FHBK",
        &[],
    ),
];

pub const BENCHMARK: &str = "^BENCH";

/// Write every input of the end-to-end fixture into `dir`.
pub fn write_pipeline_inputs(dir: &std::path::Path) {
    use std::fmt::Write as _;
    std::fs::create_dir_all(dir).unwrap();
    let jsonl = |data: &[LabeledArticle]| {
        data.iter()
            .map(|la| eventrade::corpus::to_record(la).to_string() + "\n")
            .collect::<String>()
    };
    let train = templated_corpus(240, 240, 11);
    std::fs::write(dir.join("train.jsonl"), jsonl(&train)).unwrap();
    let unlabeled: Vec<_> = train
        .iter()
        .map(|la| LabeledArticle::unlabeled(la.article.clone()))
        .collect();
    std::fs::write(dir.join("pretrain.jsonl"), jsonl(&unlabeled)).unwrap();
    let detect: Vec<_> = DETECT_ARTICLES
        .iter()
        .map(|(id, title, text, ts, _, _)| {
            LabeledArticle::unlabeled(
                Article::new(*id, *title, *text, ts.parse().unwrap()).unwrap(),
            )
        })
        .collect();
    std::fs::write(dir.join("detect.jsonl"), jsonl(&detect)).unwrap();

    let mut pairs = String::from("company_name,ticker,exchange\n");
    for (name, ticker) in COMPANIES {
        writeln!(pairs, "{name} Inc.,{ticker},NASDAQ").unwrap();
    }
    std::fs::write(dir.join("pairs.csv"), pairs).unwrap();

    let days: Vec<chrono::NaiveDate> = (4..=15)
        .map(|d| chrono::NaiveDate::from_ymd_opt(2021, 1, d).unwrap())
        .filter(|d| d.format("%a").to_string() != "Sat" && d.format("%a").to_string() != "Sun")
        .collect();
    let mut cal = String::from("date,pre_open,reg_open,reg_close,after_close\n");
    for d in &days {
        writeln!(cal, "{d},09:00,14:30,21:00,01:00").unwrap();
    }
    std::fs::write(dir.join("calendar.csv"), cal).unwrap();

    // 15-minute bars from pre-open to after-close; prices drift in the
    // direction of the article's event after it is published.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bars = String::from("ticker,ts,open,high,low,close,volume,session\n");
    let mut series: Vec<(&str, Option<(DateTime<Utc>, f64)>)> = DETECT_ARTICLES
        .iter()
        .map(|(_, _, _, ts, ticker, events)| {
            let drift = match events.first() {
                Some(EventType::DC) => -0.002,
                Some(_) => 0.002,
                None => 0.0,
            };
            (*ticker, Some((ts.parse().unwrap(), drift)))
        })
        .collect();
    series.push((BENCHMARK, None));
    for (ticker, shock) in series {
        let mut price: f64 = rng.gen_range(20.0..80.0);
        for d in &days {
            let start = d.and_hms_opt(9, 0, 0).unwrap().and_utc();
            for m in 0..64 {
                let ts = start + TimeDelta::minutes(15 * m);
                let session = match ts.format("%H:%M").to_string().as_str() {
                    t if ("09:00".."14:30").contains(&t) => "PRE",
                    t if ("14:30".."21:00").contains(&t) => "REGULAR",
                    _ => "AFTER",
                };
                let drift = match shock {
                    Some((at, mu)) if ts >= at => mu,
                    _ => 0.00002,
                };
                let open = price;
                let close = open * (1.0 + drift + rng.gen_range(-0.003..0.003));
                let high = open.max(close) * (1.0 + rng.gen_range(0.0..0.002));
                let low = open.min(close) * (1.0 - rng.gen_range(0.0..0.002));
                let volume: u64 = rng.gen_range(100..5000);
                writeln!(
                    bars,
                    "{ticker},{},{open:.4},{high:.4},{low:.4},{close:.4},{volume},{session}",
                    ts.format("%Y-%m-%dT%H:%MZ")
                )
                .unwrap();
                price = (close * 1e4).round() / 1e4;
            }
        }
    }
    std::fs::write(dir.join("bars.csv"), bars).unwrap();

    // detections a correct detector produces for DETECT_ARTICLES
    let mut det = String::new();
    for (id, _, _, ts, ticker, events) in DETECT_ARTICLES {
        if events.is_empty() {
            continue;
        }
        let rec = serde_json::json!({
            "id": id,
            "published_at": ts,
            "low_spans": [],
            "high_probs": {},
            "final_events": events,
            "ticker": ticker,
        });
        writeln!(det, "{rec}").unwrap();
    }
    std::fs::write(dir.join("detections.jsonl"), det).unwrap();
}
