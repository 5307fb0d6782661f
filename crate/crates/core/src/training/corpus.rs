use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::ops::Range;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::vocab::STOP;
use crate::model::{TokenId, Vocab};

/// A keyword and the summary it triggers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerRule {
    pub keyword: TokenId,
    pub template: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub num_texts: usize,
    pub text_len: usize,
    /// Keywords planted per text.
    pub num_triggers: usize,
    pub trigger_table: Vec<TriggerRule>,
    /// Ids filling every non-trigger position.
    pub noise: Range<TokenId>,
    /// Extra pure-noise texts with an empty target, appended after the
    /// triggered ones.
    #[serde(default)]
    pub trigger_free: usize,
    pub seed: u64,
}

impl SyntheticCorpusSpec {
    /// Ten keywords (ids 3..13), each mapped to its own three-token summary
    /// (ids 13..43); noise is drawn from 43..vocab_size.
    pub fn toy(num_texts: usize, vocab_size: usize, seed: u64) -> Self {
        let keywords = 10;
        let trigger_table = (0..keywords)
            .map(|k| TriggerRule {
                keyword: 3 + k,
                template: (0..3).map(|j| 3 + keywords + 3 * k + j).collect(),
            })
            .collect();
        Self {
            num_texts,
            text_len: 20,
            num_triggers: 1,
            trigger_table,
            noise: 3 + 4 * keywords..vocab_size,
            trigger_free: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidCorpus(msg));
        if self.num_texts == 0 || self.text_len == 0 || self.num_triggers == 0 {
            return bad("num_texts, text_len and num_triggers must be positive".into());
        }
        if self.num_triggers > self.text_len {
            return bad(format!("{} triggers do not fit in {} tokens", self.num_triggers, self.text_len));
        }
        if self.trigger_table.is_empty() {
            return bad("trigger table is empty".into());
        }
        if self.noise.is_empty() || self.noise.start <= STOP {
            return bad(format!("noise range {:?} must be non-empty and above the special ids", self.noise));
        }
        let mut seen = BTreeSet::new();
        for rule in &self.trigger_table {
            if rule.keyword <= STOP {
                return bad(format!("keyword {} is a special id", rule.keyword));
            }
            if self.noise.contains(&rule.keyword) {
                return bad(format!("keyword {} lies inside the noise range", rule.keyword));
            }
            if !seen.insert(rule.keyword) {
                return bad(format!("keyword {} listed twice", rule.keyword));
            }
            if rule.template.is_empty() || rule.template.iter().any(|&t| t <= STOP) {
                return bad(format!("template of keyword {} must be non-empty without special ids", rule.keyword));
            }
        }
        Ok(())
    }

    /// Largest id the corpus can contain.
    pub fn max_id(&self) -> TokenId {
        let rules = self
            .trigger_table
            .iter()
            .flat_map(|r| r.template.iter().chain(std::iter::once(&r.keyword)))
            .copied()
            .max()
            .unwrap_or(0);
        rules.max(self.noise.end.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: Vec<TokenId>,
    #[serde(default)]
    pub target: Vec<TokenId>,
    /// Ground-truth important positions, ascending.
    #[serde(default)]
    pub trigger_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub examples: Vec<Example>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// One JSON object per line.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for ex in &self.examples {
            let line = serde_json::to_string(ex).map_err(|e| Error::Format {
                what: "corpus",
                detail: e.to_string(),
            })?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut examples = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: Example = serde_json::from_str(&line).map_err(|e| Error::Format {
                what: "corpus",
                detail: format!("line {}: {e}", n + 1),
            })?;
            if let Some(&p) = ex.trigger_positions.iter().find(|&&p| p >= ex.input.len()) {
                return Err(Error::Format {
                    what: "corpus",
                    detail: format!("line {}: trigger position {p} beyond input", n + 1),
                });
            }
            examples.push(ex);
        }
        Ok(Self { examples })
    }

    /// Fails if any id falls outside `vocab_size`.
    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        for (n, ex) in self.examples.iter().enumerate() {
            if let Some(&id) = ex.input.iter().chain(&ex.target).find(|&&id| id >= vocab_size) {
                return Err(Error::InvalidCorpus(format!(
                    "text {n} uses id {id}, vocabulary has {vocab_size}"
                )));
            }
        }
        Ok(())
    }
}

pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut examples = Vec::with_capacity(spec.num_texts + spec.trigger_free);
    for _ in 0..spec.num_texts {
        let mut input: Vec<TokenId> = (0..spec.text_len).map(|_| rng.gen_range(spec.noise.clone())).collect();
        let mut positions = sample(&mut rng, spec.text_len, spec.num_triggers).into_vec();
        positions.sort_unstable();
        let mut target = Vec::new();
        for &p in &positions {
            let rule = &spec.trigger_table[rng.gen_range(0..spec.trigger_table.len())];
            input[p] = rule.keyword;
            target.extend_from_slice(&rule.template);
        }
        examples.push(Example {
            input,
            target,
            trigger_positions: positions,
        });
    }
    for _ in 0..spec.trigger_free {
        examples.push(Example {
            input: (0..spec.text_len).map(|_| rng.gen_range(spec.noise.clone())).collect(),
            target: Vec::new(),
            trigger_positions: Vec::new(),
        });
    }
    Ok(Corpus { examples })
}

/// Readable names for every id up to `vocab_size`.
pub fn synthetic_vocab(spec: &SyntheticCorpusSpec, vocab_size: usize) -> Result<Vocab> {
    if spec.max_id() >= vocab_size {
        return Err(Error::InvalidCorpus(format!(
            "corpus needs ids up to {}, vocabulary has {vocab_size}",
            spec.max_id()
        )));
    }
    let mut names: Vec<String> = (0..vocab_size).map(|id| format!("w{id}")).collect();
    for (k, rule) in spec.trigger_table.iter().enumerate() {
        names[rule.keyword] = format!("key{k}");
        for (j, &t) in rule.template.iter().enumerate() {
            names[t] = format!("out{k}_{j}");
        }
    }
    Vocab::new(names.into_iter().skip(STOP + 1))
}
