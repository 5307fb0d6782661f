mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::CommonArgs;

#[derive(Debug, Parser)]
#[command(name = "seqlrp", version, about = "Seq2seq summarizer with relevance propagation and deletion checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus (corpus.jsonl) and its vocabulary.
    GenCorpus {
        #[arg(long)]
        num_texts: Option<usize>,
        #[arg(long)]
        text_len: Option<usize>,
        /// Extra keyword-free texts with empty targets.
        #[arg(long)]
        trigger_free: Option<usize>,
    },
    /// Train on --corpus and write weights.bin plus train_report.json.
    Train {
        /// Corpus used only for the final trigger accuracy.
        #[arg(long)]
        held_out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Greedy summaries for every text.
    Summarize {
        /// Whitespace-separated tokens, used instead of --corpus.
        #[arg(long)]
        text: Option<String>,
    },
    /// Saliency heatmaps and per-text map statistics.
    Explain {
        #[arg(long)]
        text: Option<String>,
    },
    /// Deletion experiments and the occlusion oracle.
    Validate,
    /// Render a validate output directory (--results) as a readable table.
    Report {
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

/// Bad flags or config values.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<seqlrp::Error>())
        .any(|e| e.is_numerical());
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn errors_map_to_exit_codes() {
        let diverged: anyhow::Result<()> = Err(seqlrp::Error::Divergence { epoch: 1, loss: f64::NAN }.into());
        assert_eq!(exit_code(&diverged.context("training").unwrap_err()), 3);
        assert_eq!(exit_code(&anyhow::Error::new(seqlrp::Error::EmptyInput)), 2);
        assert_eq!(exit_code(&UsageError("x".into()).into()), 1);
        assert_eq!(exit_code(&std::io::Error::other("gone").into()), 2);
    }
}
