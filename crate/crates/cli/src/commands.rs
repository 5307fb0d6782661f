use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use seqlrp::lrp::relevance_stack;
use seqlrp::model::{decode_greedy, read_weights, write_weights, ModelWeights, TokenId, Vocab};
use seqlrp::saliency::{
    attention_saliency_correlation, map_pairwise_similarity, render_ansi, render_html, AttentionCorrelation,
    HeatmapRow, SimilarityStats,
};
use seqlrp::training::{
    generate_synthetic_corpus, synthetic_vocab, train_toy, Corpus, Example, SyntheticCorpusSpec,
};
use seqlrp::validation::{
    deletion_from_ranking, explain_text, occlusion_importance, oracle_agreement, top_position, ResultRecord,
    Verdict,
};

use crate::config::{CommonArgs, FileConfig, RunConfig};
use crate::{Command, UsageError};

pub fn run(command: Command, common: &CommonArgs) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let name = match &command {
        Command::GenCorpus { .. } => "gen-corpus",
        Command::Train { .. } => "train",
        Command::Summarize { .. } => "summarize",
        Command::Explain { .. } => "explain",
        Command::Validate => "validate",
        Command::Report { .. } => "report",
    };
    let mut cfg = RunConfig::resolve(name, common, file)?;
    match command {
        Command::GenCorpus {
            num_texts,
            text_len,
            trigger_free,
        } => {
            cfg.num_texts = num_texts.unwrap_or(cfg.num_texts);
            cfg.trigger_free = trigger_free.unwrap_or(cfg.trigger_free);
            cfg.text_len = text_len.unwrap_or(cfg.text_len);
            gen_corpus(&cfg)
        }
        Command::Train {
            held_out,
            epochs,
            lr,
            batch_size,
        } => {
            cfg.held_out = held_out.or(cfg.held_out);
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.lr = lr.unwrap_or(cfg.train.lr);
            cfg.train.batch_size = batch_size.unwrap_or(cfg.train.batch_size);
            train(&cfg)
        }
        Command::Summarize { text } => summarize(&cfg, text.as_deref()),
        Command::Explain { text } => explain(&cfg, text.as_deref()),
        Command::Validate => validate(&cfg),
        Command::Report { results } => report(&cfg, results.as_deref()),
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path).with_context(|| format!("opening corpus {}", path.display()))?;
    Corpus::read(BufReader::new(file)).with_context(|| format!("reading corpus {}", path.display()))
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    let file = File::open(path).with_context(|| format!("opening vocabulary {}", path.display()))?;
    Vocab::read(BufReader::new(file)).with_context(|| format!("reading vocabulary {}", path.display()))
}

/// Weights from `--weights`, with `--maps` applied.
fn load_weights(cfg: &RunConfig) -> Result<ModelWeights> {
    let path = cfg.require(&cfg.weights, "weights")?;
    let file = File::open(path).with_context(|| format!("opening weights {}", path.display()))?;
    let mut weights =
        read_weights(BufReader::new(file)).with_context(|| format!("reading weights {}", path.display()))?;
    if let Some(maps) = cfg.maps {
        weights.config.maps_per_text = maps;
    }
    Ok(weights)
}

fn optional_vocab(cfg: &RunConfig) -> Result<Option<Vocab>> {
    cfg.vocab.as_deref().map(read_vocab).transpose()
}

/// Texts from `--text` (needs a vocabulary) or from the corpus file.
fn load_texts(cfg: &RunConfig, text: Option<&str>, vocab: Option<&Vocab>) -> Result<Vec<Example>> {
    if let Some(text) = text {
        let vocab = vocab.ok_or_else(|| UsageError("--text needs --vocab".into()))?;
        return Ok(vec![Example {
            input: vocab.encode(text),
            target: Vec::new(),
            trigger_positions: Vec::new(),
        }]);
    }
    let corpus = read_corpus(cfg.require(&cfg.corpus, "corpus")?)?;
    if corpus.is_empty() {
        eprintln!("warning: corpus is empty");
    }
    Ok(corpus.examples)
}

fn render(vocab: Option<&Vocab>, ids: &[TokenId]) -> String {
    match vocab {
        Some(v) => v.render(ids),
        None => ids.iter().map(|id| id.to_string()).collect::<Vec<_>>().join(" "),
    }
}

fn token_names(vocab: Option<&Vocab>, ids: &[TokenId]) -> Vec<String> {
    match vocab {
        Some(v) => v.decode(ids),
        None => ids.iter().map(|id| id.to_string()).collect(),
    }
}

fn gen_corpus(cfg: &RunConfig) -> Result<()> {
    let out = cfg.prepare_out()?;
    let spec = SyntheticCorpusSpec {
        text_len: cfg.text_len,
        trigger_free: cfg.trigger_free,
        ..SyntheticCorpusSpec::toy(cfg.num_texts, cfg.model.vocab_size, cfg.seed)
    };
    let corpus = generate_synthetic_corpus(&spec)?;
    let vocab = synthetic_vocab(&spec, cfg.model.vocab_size)?;
    let mut w = BufWriter::new(File::create(out.join("corpus.jsonl"))?);
    corpus.write(&mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(out.join("vocab.txt"))?);
    vocab.write(&mut w)?;
    w.flush()?;
    write_json(&out.join("corpus_spec.json"), &spec)?;
    eprintln!("wrote {} texts to {}", corpus.len(), out.display());
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let corpus = read_corpus(cfg.require(&cfg.corpus, "corpus")?)?;
    let held_out = cfg.held_out.as_deref().map(read_corpus).transpose()?;
    let out = cfg.prepare_out()?;
    let (weights, report) = train_toy(&corpus, held_out.as_ref(), cfg.model, &cfg.train)?;
    let mut w = BufWriter::new(File::create(out.join("weights.bin"))?);
    write_weights(&weights, &mut w)?;
    w.flush()?;
    write_json(&out.join("train_report.json"), &report)?;
    eprintln!(
        "final loss {:.4}, trigger accuracy {:.3} on {} {} texts",
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        report.trigger_accuracy,
        report.evaluated_texts,
        if report.held_out { "held-out" } else { "training" },
    );
    Ok(())
}

#[derive(Serialize)]
struct SummaryRecord {
    text_id: usize,
    source_len: usize,
    truncated: bool,
    summary: Vec<TokenId>,
    summary_text: String,
}

fn summarize(cfg: &RunConfig, text: Option<&str>) -> Result<()> {
    let weights = load_weights(cfg)?;
    let vocab = optional_vocab(cfg)?;
    let texts = load_texts(cfg, text, vocab.as_ref())?;
    let out = cfg.prepare_out()?;
    let rows = texts
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let tape = decode_greedy(&ex.input, &weights).with_context(|| format!("text {i}"))?;
            Ok(SummaryRecord {
                text_id: i,
                source_len: ex.input.len(),
                truncated: ex.input.len() > weights.config.max_input_len,
                summary_text: render(vocab.as_ref(), &tape.summary),
                summary: tape.summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&out.join("summaries.jsonl"), &rows)
}

#[derive(Serialize)]
struct MapInfo {
    output_step: usize,
    token: TokenId,
    token_text: String,
    total_relevance: f64,
}

#[derive(Serialize)]
struct ExplainRecord {
    text_id: usize,
    source_len: usize,
    input_len: usize,
    truncated: bool,
    note: Option<String>,
    summary: Vec<TokenId>,
    summary_text: String,
    maps: Vec<MapInfo>,
    /// Absent when fewer than two maps exist.
    map_similarity: Option<SimilarityStats>,
    attention_correlation: AttentionCorrelation,
    top_positions: Vec<usize>,
    heatmap: String,
}

fn explain(cfg: &RunConfig, text: Option<&str>) -> Result<()> {
    let weights = load_weights(cfg)?;
    let vocab = optional_vocab(cfg)?;
    let texts = load_texts(cfg, text, vocab.as_ref())?;
    let out = cfg.prepare_out()?;
    let heat_dir = out.join("heatmaps");
    fs::create_dir_all(&heat_dir)?;
    let vocab = vocab.as_ref();

    let results = texts
        .par_iter()
        .enumerate()
        .map(|(i, ex)| -> Result<Option<(ExplainRecord, String, String)>> {
            let tape = decode_greedy(&ex.input, &weights).with_context(|| format!("text {i}"))?;
            if tape.summary.is_empty() {
                return Ok(None);
            }
            let stack = relevance_stack(&tape, &weights, &cfg.lrp).with_context(|| format!("text {i}"))?;
            let similarity = if stack.len() >= 2 {
                Some(map_pairwise_similarity(&stack)?)
            } else {
                None
            };
            let correlation = attention_saliency_correlation(&stack, &tape)?;
            let agg = seqlrp::saliency::aggregate(&stack, cfg.aggregation())?;
            let ranking = seqlrp::saliency::rank_tokens(&agg, &seqlrp::saliency::special_tokens());

            let input_tokens = token_names(vocab, &tape.input_ids);
            let rows: Vec<HeatmapRow> = stack
                .maps
                .iter()
                .map(|m| HeatmapRow {
                    label: format!("{}: {}", m.output_step, render(vocab, &[m.token])),
                    relevance: m.relevance.clone(),
                })
                .collect();
            let title = format!("text {i}: {}", render(vocab, &tape.summary));
            let html = render_html(&title, &input_tokens, &rows);
            let ansi = render_ansi(&input_tokens, &rows);

            let truncated = ex.input.len() > weights.config.max_input_len;
            let record = ExplainRecord {
                text_id: i,
                source_len: ex.input.len(),
                input_len: tape.input_len(),
                truncated,
                note: truncated.then(|| {
                    format!(
                        "input truncated from {} to {} tokens",
                        ex.input.len(),
                        weights.config.max_input_len
                    )
                }),
                summary_text: render(vocab, &tape.summary),
                summary: tape.summary.clone(),
                maps: stack
                    .maps
                    .iter()
                    .map(|m| MapInfo {
                        output_step: m.output_step,
                        token: m.token,
                        token_text: render(vocab, &[m.token]),
                        total_relevance: m.relevance.iter().sum(),
                    })
                    .collect(),
                map_similarity: similarity,
                attention_correlation: correlation,
                top_positions: ranking.into_iter().take(5).collect(),
                heatmap: format!("heatmaps/text_{i:04}.html"),
            };
            Ok(Some((record, html, ansi)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    for (i, item) in results.into_iter().enumerate() {
        match item {
            Some((record, html, ansi)) => {
                fs::write(heat_dir.join(format!("text_{i:04}.html")), html)?;
                fs::write(heat_dir.join(format!("text_{i:04}.ansi")), ansi)?;
                records.push(record);
            }
            None => eprintln!("warning: text {i} has an empty summary, skipped"),
        }
    }
    write_jsonl(&out.join("explain_report.jsonl"), &records)
}

#[derive(Debug, Serialize, Deserialize)]
struct TextSummary {
    text_id: usize,
    oracle_spearman: Option<f64>,
    lrp_top1: Option<usize>,
    oracle_top1: Option<usize>,
    trigger_positions: Vec<usize>,
    /// Fractions that rounded to zero deletions for this text.
    skipped_fractions: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FractionSummary {
    fraction: f64,
    evaluated: usize,
    truthful: usize,
    truthful_fraction: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ValidateSummary {
    texts: usize,
    skipped_texts: Vec<usize>,
    mode: String,
    aggregation: String,
    mean_oracle_spearman: Option<f64>,
    per_fraction: Vec<FractionSummary>,
    per_text: Vec<TextSummary>,
}

fn validate(cfg: &RunConfig) -> Result<()> {
    let weights = load_weights(cfg)?;
    let texts = load_texts(cfg, None, None)?;
    let out = cfg.prepare_out()?;
    let (aggregation, mode) = (cfg.aggregation(), cfg.mode());

    let per_text = texts
        .par_iter()
        .enumerate()
        .map(|(i, ex)| -> Result<Option<(TextSummary, Vec<ResultRecord>)>> {
            let explained = match explain_text(&ex.input, &weights, &cfg.lrp, aggregation) {
                Ok(e) => e,
                Err(seqlrp::Error::EmptyStack) => return Ok(None),
                Err(e) => return Err(anyhow::Error::new(e).context(format!("text {i}"))),
            };
            let occlusion = occlusion_importance(&ex.input, &weights).with_context(|| format!("text {i}"))?;
            let mut records = Vec::new();
            let mut skipped = Vec::new();
            for &fraction in &cfg.fractions {
                match deletion_from_ranking(&explained, &weights, fraction, mode) {
                    Ok(result) => records.extend(result.records(i)),
                    Err(seqlrp::Error::InvalidDeletion(_)) => skipped.push(fraction),
                    Err(e) => return Err(anyhow::Error::new(e).context(format!("text {i}"))),
                }
            }
            let summary = TextSummary {
                text_id: i,
                oracle_spearman: oracle_agreement(&explained, &occlusion),
                lrp_top1: explained.ranking.first().copied(),
                oracle_top1: top_position(&occlusion, &explained.ranking),
                trigger_positions: ex.trigger_positions.clone(),
                skipped_fractions: skipped,
            };
            Ok(Some((summary, records)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut summaries = Vec::new();
    let mut skipped_texts = Vec::new();
    for (i, item) in per_text.into_iter().enumerate() {
        match item {
            Some((s, r)) => {
                summaries.push(s);
                records.extend(r);
            }
            None => {
                eprintln!("warning: text {i} has an empty summary, skipped");
                skipped_texts.push(i);
            }
        }
    }

    let mut by_fraction: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.direction == seqlrp::validation::DeletionDirection::MostImportant) {
        let e = by_fraction.entry(r.fraction.to_bits()).or_default();
        e.0 += 1;
        if r.verdict == Verdict::Truthful {
            e.1 += 1;
        }
    }
    let per_fraction: Vec<FractionSummary> = cfg
        .fractions
        .iter()
        .map(|&fraction| {
            let (evaluated, truthful) = by_fraction.get(&fraction.to_bits()).copied().unwrap_or((0, 0));
            if evaluated == 0 && !summaries.is_empty() {
                eprintln!("warning: fraction {fraction} rounds to zero deletions on every text");
            }
            FractionSummary {
                fraction,
                evaluated,
                truthful,
                truthful_fraction: (evaluated > 0).then(|| truthful as f64 / evaluated as f64),
            }
        })
        .collect();
    let rhos: Vec<f64> = summaries.iter().filter_map(|s| s.oracle_spearman).collect();
    let summary = ValidateSummary {
        texts: texts.len(),
        skipped_texts,
        mode: cfg.mode.clone(),
        aggregation: cfg.aggregation.clone(),
        mean_oracle_spearman: seqlrp::saliency::stats::mean(&rhos),
        per_fraction,
        per_text: summaries,
    };

    write_jsonl(&out.join("results.jsonl"), &records)?;
    write_json(&out.join("summary.json"), &summary)?;
    fs::write(out.join("summary.txt"), summary_table(&summary))?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

fn fmt_pos(v: Option<usize>) -> String {
    v.map_or_else(|| "-".into(), |x| x.to_string())
}

fn summary_table(s: &ValidateSummary) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "texts {}  skipped {}  mode {}  aggregation {}", s.texts, s.skipped_texts.len(), s.mode, s.aggregation);
    let _ = writeln!(t, "mean oracle-vs-LRP spearman {}\n", fmt_opt(s.mean_oracle_spearman));
    let _ = writeln!(t, "{:>9} {:>9} {:>9} {:>9}", "fraction", "texts", "truthful", "share");
    for f in &s.per_fraction {
        let _ = writeln!(t, "{:>9.2} {:>9} {:>9} {:>9}", f.fraction, f.evaluated, f.truthful, fmt_opt(f.truthful_fraction));
    }
    let _ = writeln!(t, "\n{:>6} {:>9} {:>8} {:>8} {:>8}", "text", "spearman", "lrp_top", "occ_top", "trigger");
    for p in &s.per_text {
        let trigger = p.trigger_positions.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(
            t,
            "{:>6} {:>9} {:>8} {:>8} {:>8}",
            p.text_id,
            fmt_opt(p.oracle_spearman),
            fmt_pos(p.lrp_top1),
            fmt_pos(p.oracle_top1),
            if trigger.is_empty() { "-".into() } else { trigger }
        );
    }
    t
}

fn report(cfg: &RunConfig, results: Option<&Path>) -> Result<()> {
    let dir = results.ok_or_else(|| UsageError("report needs --results".into()))?;
    let vocab = optional_vocab(cfg)?;
    let summary: ValidateSummary = serde_json::from_str(
        &fs::read_to_string(dir.join("summary.json")).with_context(|| format!("reading {}/summary.json", dir.display()))?,
    )
    .context("parsing summary.json")?;
    let file = File::open(dir.join("results.jsonl")).with_context(|| format!("opening {}/results.jsonl", dir.display()))?;
    let mut records = Vec::new();
    for (n, line) in std::io::BufRead::lines(BufReader::new(file)).enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ResultRecord = serde_json::from_str(&line).with_context(|| format!("results.jsonl line {}", n + 1))?;
        records.push(r);
    }
    let out = cfg.prepare_out()?;

    let mut t = String::from("# Deletion report\n\n```\n");
    t.push_str(&summary_table(&summary));
    t.push_str("```\n\n## Before and after\n\n");
    let vocab = vocab.as_ref();
    for pair in records.chunks(2) {
        let [most, least] = pair else { continue };
        let _ = writeln!(t, "### text {} at {:.0}% ({:?})\n", most.text_id, most.fraction * 100.0, most.verdict);
        let _ = writeln!(t, "- original: {}", render(vocab, &most.baseline_summary));
        let _ = writeln!(
            t,
            "- most important deleted {:?}: {} (jaccard {:.3})",
            most.deleted_positions,
            render(vocab, &most.perturbed_summary),
            most.metrics.token_jaccard
        );
        let _ = writeln!(
            t,
            "- least important deleted {:?}: {} (jaccard {:.3})\n",
            least.deleted_positions,
            render(vocab, &least.perturbed_summary),
            least.metrics.token_jaccard
        );
    }
    fs::write(out.join("report.md"), t)?;
    Ok(())
}
