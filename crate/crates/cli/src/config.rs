use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use seqlrp::lrp::LrpConfig;
use seqlrp::model::ModelConfig;
use seqlrp::saliency::Aggregation;
use seqlrp::training::TrainHyper;
use seqlrp::validation::{DeletionMode, DEFAULT_FRACTIONS};

use crate::UsageError;

/// Values that may come from the config file. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub weights: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub held_out: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub maps: Option<usize>,
    pub fractions: Option<Vec<f64>>,
    pub aggregation: Option<String>,
    pub mode: Option<String>,
    pub no_attention_relevance: Option<bool>,
    pub steps_back: Option<usize>,
    pub num_texts: Option<usize>,
    pub text_len: Option<usize>,
    pub trigger_free: Option<usize>,
    pub model: Option<ModelSection>,
    pub train: Option<TrainSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub vocab_size: Option<usize>,
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub max_input_len: Option<usize>,
    pub max_output_len: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub clip_norm: Option<f64>,
    pub init_scale: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }
}

/// Command-line overrides shared by all commands.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonArgs {
    /// TOML file with defaults for any of the flags below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    /// JSONL file, one `{"input": [ids...]}` object per line.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Saliency maps per text.
    #[arg(long, global = true)]
    pub maps: Option<usize>,
    /// Comma-separated deletion fractions.
    #[arg(long, global = true, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// abs, raw, scaled or scaled:<gamma>.
    #[arg(long, global = true)]
    pub aggregation: Option<String>,
    /// remove or replace.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Treat the attention context as a constant.
    #[arg(long, global = true)]
    pub no_attention_relevance: bool,
    #[arg(long, global = true)]
    pub steps_back: Option<usize>,
}

/// The merged configuration, echoed into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub weights: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub held_out: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub aggregation: String,
    pub mode: String,
    pub fractions: Vec<f64>,
    pub maps: Option<usize>,
    pub num_texts: usize,
    pub text_len: usize,
    pub trigger_free: usize,
    pub lrp: LrpConfig,
    pub model: ModelConfig,
    pub train: TrainHyper,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl RunConfig {
    pub fn resolve(command: &str, args: &CommonArgs, file: FileConfig) -> anyhow::Result<Self> {
        let train_defaults = TrainHyper::default();
        let seed = args.seed.or(file.seed).unwrap_or(train_defaults.seed);

        let mut model = ModelConfig::default();
        if let Some(m) = &file.model {
            model.vocab_size = m.vocab_size.unwrap_or(model.vocab_size);
            model.embed_dim = m.embed_dim.unwrap_or(model.embed_dim);
            model.hidden_dim = m.hidden_dim.unwrap_or(model.hidden_dim);
            model.max_input_len = m.max_input_len.unwrap_or(model.max_input_len);
            model.max_output_len = m.max_output_len.unwrap_or(model.max_output_len);
        }
        let maps = args.maps.or(file.maps);
        if let Some(m) = maps {
            model.maps_per_text = m;
        }

        let mut train = TrainHyper { seed, ..train_defaults };
        if let Some(t) = &file.train {
            train.lr = t.lr.unwrap_or(train.lr);
            train.epochs = t.epochs.unwrap_or(train.epochs);
            train.batch_size = t.batch_size.unwrap_or(train.batch_size);
            train.clip_norm = t.clip_norm.unwrap_or(train.clip_norm);
            train.init_scale = t.init_scale.unwrap_or(train.init_scale);
        }

        let lrp = LrpConfig {
            epsilon: args.epsilon.or(file.epsilon).unwrap_or(LrpConfig::default().epsilon),
            attention_path_enabled: !(args.no_attention_relevance || file.no_attention_relevance.unwrap_or(false)),
            steps_back: args.steps_back.or(file.steps_back),
            ..LrpConfig::default()
        };
        if !lrp.epsilon.is_finite() || lrp.epsilon < 0.0 {
            return Err(usage(format!("epsilon must be a finite non-negative number, got {}", lrp.epsilon)));
        }

        let aggregation = args.aggregation.clone().or(file.aggregation).unwrap_or_else(|| "abs".into());
        aggregation
            .parse::<Aggregation>()
            .map_err(|e| usage(format!("--aggregation: {e}")))?;
        let mode = args.mode.clone().or(file.mode).unwrap_or_else(|| "remove".into());
        mode.parse::<DeletionMode>().map_err(|e| usage(format!("--mode: {e}")))?;

        let fractions = args
            .fractions
            .clone()
            .or(file.fractions)
            .unwrap_or_else(|| DEFAULT_FRACTIONS.to_vec());
        if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(usage(format!("fractions must lie in (0, 1), got {fractions:?}")));
        }

        Ok(Self {
            command: command.to_string(),
            weights: args.weights.clone().or(file.weights),
            vocab: args.vocab.clone().or(file.vocab),
            corpus: args.corpus.clone().or(file.corpus),
            held_out: file.held_out,
            out: args.out.clone().or(file.out),
            seed,
            aggregation,
            mode,
            fractions,
            maps,
            num_texts: file.num_texts.unwrap_or(200),
            text_len: file.text_len.unwrap_or(model.max_input_len),
            trigger_free: file.trigger_free.unwrap_or(0),
            lrp,
            model,
            train,
        })
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation.parse().expect("validated in resolve")
    }

    pub fn mode(&self) -> DeletionMode {
        self.mode.parse().expect("validated in resolve")
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| usage(format!("{} needs --{flag}", self.command)))
    }

    /// Creates the output directory and writes `effective_config.toml` into it.
    pub fn prepare_out(&self) -> anyhow::Result<PathBuf> {
        let out = self.require(&self.out, "out")?.to_path_buf();
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let text = toml::to_string_pretty(self).context("serializing effective config")?;
        fs::write(out.join("effective_config.toml"), text)?;
        Ok(out)
    }
}
