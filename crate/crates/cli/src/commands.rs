use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use eventrade::backtest::{self, Signal};
use eventrade::corpus::{self, format_minute_ts};
use eventrade::detector::{self, CombineMode, DetectionRecord, EpochLog};
use eventrade::encoder::pretrain;
use eventrade::market::{compute_price_labels, load_bars, load_calendar, BarStore};
use eventrade::ticker::{load_pairs, RecognizerConfig};
use eventrade::{DetectorModel, EncoderParams, Error, LabelSet, TickerRecognizer};
use serde_json::json;

use crate::config::{require, require_file, RunConfig};
use crate::CliError;

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    write_with(path, |w| writeln!(w, "{text}"))
}

fn load_store(cfg: &RunConfig) -> Result<BarStore, CliError> {
    let path = require(&cfg.paths.bars, "bars")?;
    let (store, rejected) = load_bars(path)?;
    for r in &rejected {
        eprintln!(
            "warning: {}:{}: bar rejected: {}",
            path.display(),
            r.line,
            r.msg
        );
    }
    Ok(store)
}

fn recognizer(cfg: &RunConfig) -> Result<TickerRecognizer, CliError> {
    let pairs = load_pairs(require(&cfg.paths.pairs, "pairs")?)?;
    Ok(TickerRecognizer::new(pairs, RecognizerConfig::default())?)
}

pub fn adapt(cfg: &RunConfig) -> Result<(), CliError> {
    let sources: Vec<PathBuf> = if cfg.paths.pretrain.is_empty() {
        vec![require(&cfg.paths.articles, "pretraining corpus")?.to_path_buf()]
    } else {
        cfg.paths.pretrain.clone()
    };
    let mut corpus = Vec::new();
    for p in &sources {
        require_file(p, "pretraining corpus")?;
        corpus.extend(corpus::load_articles(p)?);
    }
    let params = match &cfg.paths.encoder {
        Some(p) => {
            require_file(p, "encoder")?;
            EncoderParams::load_file(p)?
        }
        None => EncoderParams::new(cfg.encoder.shape(), cfg.encoder.seed)?,
    };
    let dir = out_dir(cfg)?;
    println!("adapting on {} documents", corpus.len());
    let (params, _) = pretrain(&params, &corpus, &cfg.pretrain, |epoch, loss| {
        println!("epoch {epoch:>3}  mlm loss {loss:.6}");
    })?;
    let path = dir.join(crate::ENCODER_FILE);
    params.save_file(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let data = corpus::load_labeled(require(&cfg.paths.articles, "articles")?)?;
    if data.is_empty() {
        return Err(Error::Data("no labeled articles to train on".into()).into());
    }
    let label_set = if cfg.detector.events.is_empty() {
        LabelSet::full()
    } else {
        LabelSet::new(cfg.detector.events.clone())?
    };
    let encoder = match &cfg.paths.encoder {
        Some(p) => {
            require_file(p, "encoder")?;
            EncoderParams::load_file(p)?
        }
        None => EncoderParams::new(cfg.encoder.shape(), cfg.encoder.seed)?,
    };
    let dir = out_dir(cfg)?;
    let model = DetectorModel::new(
        encoder,
        label_set,
        &cfg.detector.config(),
        cfg.detector.seed,
    )?;
    let split = corpus::split_train_val(&data, cfg.train.split_ratio, cfg.train.seed)?;
    println!(
        "training on {} articles, validating on {}",
        split.train.len(),
        split.val.len()
    );
    let print_epoch = |log: &EpochLog| match &log.val {
        Some(m) => println!(
            "epoch {:>3}  loss {:.6}  val P {:.4} R {:.4} F1 {:.4}",
            log.epoch, log.train_loss, m.micro.precision, m.micro.recall, m.micro.f1
        ),
        None => println!("epoch {:>3}  loss {:.6}", log.epoch, log.train_loss),
    };
    let (model, report) = detector::train(
        &model,
        &split.train,
        &split.val,
        &cfg.train.config(),
        print_epoch,
    )?;
    let model_path = dir.join(crate::MODEL_FILE);
    model.save_file(&model_path)?;
    let metrics = json!({
        "train_articles": split.train.len(),
        "val_articles": split.val.len(),
        "train_only_strata": split.report.train_only_strata,
        "best_epoch": report.best_epoch,
        "epochs": report.epochs,
    });
    write_json(&dir.join(crate::METRICS_FILE), &metrics)?;
    println!(
        "best epoch {}; wrote {}",
        report.best_epoch,
        model_path.display()
    );
    Ok(())
}

pub fn detect(
    cfg: &RunConfig,
    emit_all: bool,
    threshold: Option<f64>,
    combine: Option<CombineMode>,
) -> Result<(), CliError> {
    let articles = corpus::load_articles(require(&cfg.paths.articles, "articles")?)?;
    let model_path = cfg.model_path();
    require_file(&model_path, "model")?;
    let mut model = DetectorModel::load_file(&model_path)?;
    if let Some(t) = threshold {
        model.threshold = t;
    }
    if let Some(c) = combine {
        model.combine = c;
    }
    let rec = recognizer(cfg)?;
    let dir = out_dir(cfg)?;
    let path = dir.join(crate::DETECTIONS_FILE);
    let mut w = create(&path)?;
    let mut written = 0;
    for a in &articles {
        let det = detector::decode(&model, a)?;
        if det.final_events.is_empty() && !emit_all {
            continue;
        }
        let ticker = rec.recognize(a).map(|m| m.ticker);
        let line = serde_json::to_string(&DetectionRecord::new(a, &det, ticker))
            .map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        written += 1;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!(
        "{written} of {} articles written to {}",
        articles.len(),
        path.display()
    );
    Ok(())
}

fn load_detections(path: &Path) -> Result<Vec<DetectionRecord>, CliError> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn backtest(cfg: &RunConfig) -> Result<(), CliError> {
    let det_path = cfg.detections_path();
    require_file(&det_path, "detections")?;
    let records = load_detections(&det_path)?;
    let store = load_store(cfg)?;
    let calendar = load_calendar(require(&cfg.paths.calendar, "calendar")?)?;
    let mut no_ticker = 0;
    let mut abstained = 0;
    let mut signals = Vec::new();
    for r in &records {
        let Some(ticker) = &r.ticker else {
            no_ticker += 1;
            continue;
        };
        let events: BTreeSet<_> = r.final_events.iter().copied().collect();
        match Signal::from_events(&r.id, ticker, &events, r.published_at) {
            Some(s) => signals.push(s),
            None => abstained += 1,
        }
    }
    signals.sort_by_key(|s| s.publish_ts);
    let report = backtest::run_backtest(&signals, &store, &calendar, &cfg.trade)?;
    let dir = out_dir(cfg)?;
    write_json(&dir.join(crate::REPORT_FILE), &report)?;
    write_with(&dir.join(crate::SUMMARY_FILE), |w| {
        backtest::write_summary_csv(&report, w)
    })?;
    write_with(&dir.join(crate::PER_EVENT_FILE), |w| {
        backtest::write_per_event_csv(&report, w)
    })?;
    write_with(&dir.join(crate::EQUITY_FILE), |w| {
        backtest::write_equity_csv(&report, w)
    })?;
    println!(
        "{} detections: {} signals, {} without ticker, {} with no or conflicting direction",
        records.len(),
        signals.len(),
        no_ticker,
        abstained
    );
    print!("{}", backtest::headline_table(&report));
    Ok(())
}

pub fn label_prices(cfg: &RunConfig) -> Result<(), CliError> {
    let data = corpus::load_labeled(require(&cfg.paths.articles, "articles")?)?;
    let store = load_store(cfg)?;
    let calendar = load_calendar(require(&cfg.paths.calendar, "calendar")?)?;
    let rec = match cfg.paths.pairs {
        Some(_) => Some(recognizer(cfg)?),
        None => None,
    };
    let dir = out_dir(cfg)?;
    let path = dir.join(crate::PRICE_LABELS_FILE);
    let mut w = create(&path)?;
    let mut written = 0;
    for la in &data {
        let ticker = la.ticker.clone().or_else(|| {
            rec.as_ref()
                .and_then(|r| r.recognize(&la.article))
                .map(|m| m.ticker)
        });
        let Some(ticker) = ticker else { continue };
        let Some(labels) =
            compute_price_labels(&store, &calendar, &ticker, la.article.published_at)
        else {
            continue;
        };
        let line = json!({
            "id": la.article.id,
            "ticker": ticker,
            "published_at": format_minute_ts(&la.article.published_at),
            "labels": labels,
        });
        writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        written += 1;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!(
        "{written} of {} articles labelled in {}",
        data.len(),
        path.display()
    );
    Ok(())
}
