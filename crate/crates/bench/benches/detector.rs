use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use eventrade::corpus::tokenize;
use eventrade::detector::{decode, loss_and_grad, LossPart};
use eventrade::encoder::encode;
use eventrade::{
    Article, DetectorConfig, DetectorModel, EncoderConfig, EncoderParams, EventSpan, EventType,
    LabelSet, LabeledArticle,
};

const BODY: &str = "Shares of Acme Robotics rose after the company said it would buy back up to two billion \
    dollars of stock over the next year, while analysts raised their price targets and noted strong demand \
    for its warehouse automation products across North America and Europe.";

fn model(dim: usize, max_len: usize) -> DetectorModel {
    let enc = EncoderParams::new(
        EncoderConfig {
            dim,
            window: 2,
            vocab: 4096,
            max_len,
        },
        1,
    )
    .unwrap();
    let cfg = DetectorConfig {
        hidden: 64,
        ..Default::default()
    };
    DetectorModel::new(enc, LabelSet::full(), &cfg, 2).unwrap()
}

fn article() -> Article {
    Article::new(
        "b",
        "Acme Robotics announces buyback",
        BODY,
        Article::sentinel_ts(),
    )
    .unwrap()
}

fn bench(c: &mut Criterion) {
    let a = article();
    let toks = tokenize(&a.title, &a.text).unwrap();
    c.bench_function("tokenize", |b| {
        b.iter(|| tokenize(black_box(&a.title), black_box(&a.text)).unwrap())
    });
    for (dim, max_len) in [(32, 64), (128, 128)] {
        let m = model(dim, max_len);
        c.bench_function(&format!("encode d{dim} L{max_len}"), |b| {
            b.iter(|| encode(&m.encoder, black_box(&toks)).unwrap())
        });
        c.bench_function(&format!("decode d{dim} L{max_len}"), |b| {
            b.iter(|| decode(&m, black_box(&a)).unwrap())
        });
        let la = LabeledArticle {
            article: a.clone(),
            spans: vec![EventSpan {
                start: 0,
                end: 12,
                event: EventType::SR,
            }],
            ticker: None,
        };
        c.bench_function(&format!("loss+grad d{dim} L{max_len}"), |b| {
            b.iter(|| loss_and_grad(&m, black_box(&la), LossPart::Total).unwrap())
        });
    }
}

criterion_group!(benches, bench);
criterion_main!(benches);
