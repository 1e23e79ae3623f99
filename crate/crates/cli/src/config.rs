//! Run configuration: a TOML file whose values command-line flags override.

use std::path::{Path, PathBuf};

use eventrade::detector::CombineMode;
use eventrade::nn::OptimizerKind;
use eventrade::{
    BacktestConfig, DetectorConfig, EncoderConfig, EventType, PretrainConfig, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Article JSONL: the labeled corpus for `train`, the input for `detect`
    /// and `label-prices`.
    pub articles: Option<PathBuf>,
    /// Unlabeled Article JSONL for `adapt`; several files are concatenated.
    pub pretrain: Vec<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub bars: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    /// Adapted encoder to start training from.
    pub encoder: Option<PathBuf>,
    /// Trained model; defaults to `<out>/model.bin`.
    pub model: Option<PathBuf>,
    /// Detection JSONL; defaults to `<out>/detections.jsonl`.
    pub detections: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub dim: usize,
    pub window: usize,
    pub vocab: usize,
    /// Token cap L_max, shared by the detector.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let c = EncoderConfig::default();
        EncoderSection {
            dim: c.dim,
            window: c.window,
            vocab: c.vocab,
            max_len: c.max_len,
            seed: 0,
        }
    }
}

impl EncoderSection {
    pub fn shape(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.dim,
            window: self.window,
            vocab: self.vocab,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub hidden: usize,
    pub threshold: f64,
    pub combine: CombineMode,
    /// Event codes in label-set order; all eleven when empty.
    pub events: Vec<EventType>,
    pub seed: u64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let c = DetectorConfig::default();
        DetectorSection {
            hidden: c.hidden,
            threshold: c.threshold,
            combine: c.combine,
            events: Vec::new(),
            seed: 0,
        }
    }
}

impl DetectorSection {
    pub fn config(&self) -> DetectorConfig {
        DetectorConfig {
            hidden: self.hidden,
            threshold: self.threshold,
            combine: self.combine,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub split_ratio: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        TrainSection {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            optimizer: c.optimizer,
            seed: c.seed,
            split_ratio: 0.8,
        }
    }
}

impl TrainSection {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub encoder: EncoderSection,
    pub pretrain: PretrainConfig,
    pub detector: DetectorSection,
    pub train: TrainSection,
    pub trade: BacktestConfig,
}

impl RunConfig {
    /// Read a TOML file. Relative paths inside it resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.rebase(base);
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths
            .model
            .clone()
            .unwrap_or_else(|| self.out_dir().join(crate::MODEL_FILE))
    }

    pub fn detections_path(&self) -> PathBuf {
        self.paths
            .detections
            .clone()
            .unwrap_or_else(|| self.out_dir().join(crate::DETECTIONS_FILE))
    }

    /// Range checks that do not need any input file.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: eventrade::Error| CliError::Usage(e.to_string());
        self.encoder.shape().validate().map_err(usage)?;
        self.trade.validate().map_err(usage)?;
        let d = &self.detector;
        if d.hidden == 0 {
            return Err(CliError::Usage("detector.hidden must be positive".into()));
        }
        if !(d.threshold > 0.0 && d.threshold < 1.0) {
            return Err(CliError::Usage(format!(
                "detector.threshold {} not in (0, 1)",
                d.threshold
            )));
        }
        let r = self.train.split_ratio;
        if !(r > 0.0 && r < 1.0) {
            return Err(CliError::Usage(format!(
                "train.split_ratio {r} not in (0, 1)"
            )));
        }
        for (name, epochs, batch, lr) in [
            (
                "train",
                self.train.epochs,
                self.train.batch_size,
                self.train.learning_rate,
            ),
            (
                "pretrain",
                self.pretrain.epochs,
                self.pretrain.batch_size,
                self.pretrain.learning_rate,
            ),
        ] {
            if epochs == 0 || batch == 0 || !(lr > 0.0 && lr.is_finite()) {
                return Err(CliError::Usage(format!(
                    "{name}: epochs and batch_size must be positive, learning_rate positive and finite"
                )));
            }
        }
        let m = self.pretrain.mask_rate;
        if !(m > 0.0 && m < 1.0) {
            return Err(CliError::Usage(format!(
                "pretrain.mask_rate {m} not in (0, 1)"
            )));
        }
        Ok(())
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.articles,
            &mut self.pairs,
            &mut self.bars,
            &mut self.calendar,
            &mut self.encoder,
            &mut self.model,
            &mut self.detections,
            &mut self.out,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.pretrain.iter_mut().for_each(fix);
    }
}

/// The path, or a usage error naming the missing setting; the file must exist.
pub fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    let p = p
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("no {what} path given")))?;
    require_file(p, what)?;
    Ok(p)
}

pub fn require_file(p: &Path, what: &str) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} file {} does not exist",
            p.display()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.trade, BacktestConfig::default());
        assert_eq!(cfg.train.split_ratio, 0.8);
        cfg.validate().unwrap();
    }

    #[test]
    fn sections_parse() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [paths]
            articles = "a.jsonl"
            [encoder]
            dim = 16
            seed = 4
            [detector]
            hidden = 8
            combine = "high-only"
            events = ["A", "SR"]
            [train]
            epochs = 3
            optimizer = "sgd"
            [trade]
            policy = "TAB"
            horizon_k = 2
            entry_mode = "CLOSE_MINUTE"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.encoder.dim, 16);
        assert_eq!(cfg.encoder.seed, 4);
        assert_eq!(cfg.detector.hidden, 8);
        assert_eq!(cfg.detector.combine, CombineMode::HighOnly);
        assert_eq!(cfg.detector.events, vec![EventType::A, EventType::SR]);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.trade.horizon_k, 2);
        assert_eq!(cfg.trade.entry_mode, eventrade::EntryMode::CloseMinute);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[trade]\nstoploss = 0.1").is_err());
    }

    #[test]
    fn out_of_range_rejected() {
        let mut cfg = RunConfig::default();
        cfg.trade.stop_loss = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.detector.threshold = 0.0;
        assert!(cfg.validate().is_err());
    }
}
