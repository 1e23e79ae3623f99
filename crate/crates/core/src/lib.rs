//! Event-driven news trading: bi-level corporate event detection, ticker
//! recognition, minute-bar price labels and Trade-At-End / Trade-At-Best
//! backtesting.

// Numeric kernels index several parallel buffers at once.
#![allow(clippy::needless_range_loop)]

pub mod backtest;
pub mod container;
pub mod corpus;
pub mod detector;
pub mod encoder;
pub mod error;
pub mod market;
pub mod nn;
pub mod ticker;

pub use backtest::{
    BacktestConfig, BacktestReport, Direction, EntryMode, ExitReason, Policy, Signal, Transaction,
};
pub use corpus::{
    Article, EventSpan, EventType, Label, LabelSequence, LabelSet, LabeledArticle, TokenSeq,
};
pub use detector::{
    CombineMode, DetectionResult, DetectorConfig, DetectorModel, ScoreMatrix, TrainConfig,
};
pub use encoder::{
    EncoderConfig, EncoderOutput, EncoderParams, MaskingPlan, PretrainConfig, TextEncoder,
};
pub use error::{Error, Result};
pub use market::{BarStore, MinuteBar, PriceLabels, Session, TradingCalendar};
pub use ticker::{TickerMatch, TickerPair, TickerRecognizer};
