//! Autointerpretation: explain a feature from its top fragments, have a
//! simulator predict its activations from the explanation alone, and score
//! the prediction by correlation.

mod client;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::par::*;
use crate::sae::Dictionary;
use crate::store::{ActivationDataset, TokenRecord};
use crate::{Error, Result};

pub use client::{
    ClientError, ExplainRequest, HttpClient, HttpConfig, MockClient, MockKind, RetryPolicy, SimulateRequest,
    SimulatorClient,
};

pub const FRAGMENT_TOKENS: usize = 64;
pub const TOP_FRAGMENTS: usize = 20;
pub const EXPLAIN_FRAGMENTS: usize = 5;
pub const SCORE_FRAGMENTS: usize = 10;
pub const MAX_LEVEL: u8 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub doc_id: u64,
    /// Row of the first token in the corpus.
    pub offset: u64,
    pub tokens: Vec<String>,
    pub activations: Vec<f32>,
    pub max_activation: f32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RescaledFragment {
    pub doc_id: u64,
    pub offset: u64,
    pub tokens: Vec<String>,
    pub levels: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    #[default]
    TopAndRandom,
    RandomOnly,
}

/// Line boundaries `(start, end)` of the token stream: maximal runs of equal
/// `doc_id`.
fn lines(tokens: &[TokenRecord]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=tokens.len() {
        if i == tokens.len() || tokens[i].doc_id != tokens[start].doc_id {
            if i > start {
                out.push((start, i));
            }
            start = i;
        }
    }
    out
}

/// One 64-token window from the start of each of the first `max_lines`
/// lines. Lines shorter than 64 tokens and windows on which the feature's
/// activation is constant are dropped.
pub fn extract_fragments(
    feature: usize,
    dict: &Dictionary,
    activations: &ActivationDataset,
    tokens: &[TokenRecord],
    max_lines: usize,
) -> Result<Vec<Fragment>> {
    if tokens.len() != activations.len() {
        return Err(Error::dim(format!(
            "token stream has {} tokens but activation dataset has {} rows",
            tokens.len(),
            activations.len()
        )));
    }
    if feature >= dict.d_hid() {
        return Err(Error::arg(format!("feature {feature} out of range for d_hid {}", dict.d_hid())));
    }
    if activations.d_in() != dict.d_in() {
        return Err(Error::dim("activation width does not match dictionary"));
    }
    let windows: Vec<(usize, usize)> = lines(tokens)
        .into_iter()
        .take(max_lines)
        .filter(|(s, e)| e - s >= FRAGMENT_TOKENS)
        .collect();
    let frags: Vec<Result<Option<Fragment>>> = windows
        .par_iter()
        .map(|&(start, _)| {
            let acts = (start..start + FRAGMENT_TOKENS)
                .map(|r| dict.activation(feature, activations.row(r)))
                .collect::<Result<Vec<f32>>>()?;
            let max = acts.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let min = acts.iter().copied().fold(f32::INFINITY, f32::min);
            if max == min {
                return Ok(None);
            }
            Ok(Some(Fragment {
                doc_id: tokens[start].doc_id,
                offset: start as u64,
                tokens: tokens[start..start + FRAGMENT_TOKENS].iter().map(|t| t.token.clone()).collect(),
                activations: acts,
                max_activation: max,
            }))
        })
        .collect();
    let mut out = Vec::new();
    for f in frags {
        if let Some(f) = f? {
            out.push(f);
        }
    }
    Ok(out)
}

/// `round(10 a / global_max)` with halves rounded up.
pub fn rescale_level(a: f32, global_max: f32) -> u8 {
    let x = 10.0 * f64::from(a.max(0.0)) / f64::from(global_max);
    ((x + 0.5).floor() as i64).clamp(0, i64::from(MAX_LEVEL)) as u8
}

pub fn rescale_levels(fragments: &[Fragment], global_max: f32) -> Result<Vec<RescaledFragment>> {
    if !(global_max.is_finite() && global_max > 0.0) {
        return Err(Error::arg(format!("global_max must be positive, got {global_max}")));
    }
    Ok(fragments
        .iter()
        .map(|f| RescaledFragment {
            doc_id: f.doc_id,
            offset: f.offset,
            tokens: f.tokens.clone(),
            levels: f.activations.iter().map(|&a| rescale_level(a, global_max)).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// Fewer than [`TOP_FRAGMENTS`] fragments with nonzero variance.
    Skipped { qualifying: usize },
    Selected { explain: Vec<Fragment>, score: Vec<Fragment> },
}

/// Ranks fragments by max activation (ties by doc id, then offset), explains
/// with ranks 1–5 and scores with ranks 6–10 plus 5 random fragments from
/// outside the top 20 (`TopAndRandom`), or with 10 random fragments from
/// outside the top 20 (`RandomOnly`). When fewer non-top fragments exist than
/// requested, all of them are used.
pub fn select_scoring_sets(fragments: &[Fragment], mode: ScoringMode, seed: u64) -> Selection {
    if fragments.len() < TOP_FRAGMENTS {
        return Selection::Skipped {
            qualifying: fragments.len(),
        };
    }
    let mut ranked: Vec<&Fragment> = fragments.iter().collect();
    ranked.sort_by(|a, b| {
        b.max_activation
            .total_cmp(&a.max_activation)
            .then(a.doc_id.cmp(&b.doc_id))
            .then(a.offset.cmp(&b.offset))
    });
    let explain: Vec<Fragment> = ranked[..EXPLAIN_FRAGMENTS].iter().map(|&f| f.clone()).collect();
    let rest = &ranked[TOP_FRAGMENTS..];
    let n_random = match mode {
        ScoringMode::TopAndRandom => SCORE_FRAGMENTS - EXPLAIN_FRAGMENTS,
        ScoringMode::RandomOnly => SCORE_FRAGMENTS,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, rest.len(), n_random.min(rest.len())).into_vec();
    picks.sort_unstable();
    let mut score: Vec<Fragment> = match mode {
        ScoringMode::TopAndRandom => ranked[EXPLAIN_FRAGMENTS..SCORE_FRAGMENTS].iter().map(|&f| f.clone()).collect(),
        ScoringMode::RandomOnly => Vec::new(),
    };
    score.extend(picks.into_iter().map(|i| rest[i].clone()));
    Selection::Selected { explain, score }
}

/// Pearson correlation over every token of every scored fragment pooled
/// together. `None` when either side is constant.
pub fn score_simulation(actual: &[Vec<u8>], simulated: &[Vec<u8>]) -> Result<Option<f64>> {
    if actual.len() != simulated.len() || actual.iter().zip(simulated).any(|(a, s)| a.len() != s.len()) {
        return Err(Error::dim("actual and simulated levels differ in shape"));
    }
    let a: Vec<f64> = actual.iter().flatten().map(|&v| f64::from(v)).collect();
    let s: Vec<f64> = simulated.iter().flatten().map(|&v| f64::from(v)).collect();
    Ok(crate::eval::pearson(&a, &s))
}

/// Parses `token<TAB>level` lines. Exactly `expected` nonblank lines with
/// integer levels in 0–10 are required.
pub fn parse_simulation(text: &str, expected: usize) -> std::result::Result<Vec<u8>, String> {
    let mut levels = Vec::with_capacity(expected);
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let (_, level) = line
            .rsplit_once('\t')
            .ok_or_else(|| format!("line {} has no tab separator: {line:?}", i + 1))?;
        let level: u8 = level
            .trim()
            .parse()
            .map_err(|_| format!("line {} has a non-integer level: {line:?}", i + 1))?;
        if level > MAX_LEVEL {
            return Err(format!("line {} has level {level} above {MAX_LEVEL}", i + 1));
        }
        levels.push(level);
    }
    if levels.len() != expected {
        return Err(format!("expected {expected} levels, got {}", levels.len()));
    }
    Ok(levels)
}

fn display_token(t: &str) -> String {
    t.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

/// Explainer and simulator prompt templates. `{levels}` expands to the
/// explanation examples, `{tokens}` to the fragment being simulated and
/// `{explanation}` to the explainer's answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub explain: String,
    pub simulate: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts {
            explain: include_str!("../../prompts/explain.txt").to_owned(),
            simulate: include_str!("../../prompts/simulate.txt").to_owned(),
        }
    }
}

impl Prompts {
    /// Reads `explain.txt` and `simulate.txt` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(p, e))
        };
        Ok(Prompts {
            explain: read("explain.txt")?,
            simulate: read("simulate.txt")?,
        })
    }

    pub fn render_explain(&self, examples: &[RescaledFragment]) -> String {
        let blocks: Vec<String> = examples
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let body: Vec<String> = f
                    .tokens
                    .iter()
                    .zip(&f.levels)
                    .map(|(t, l)| format!("{}\t{l}", display_token(t)))
                    .collect();
                format!("Example {}:\n{}", i + 1, body.join("\n"))
            })
            .collect();
        self.explain.replace("{levels}", &blocks.join("\n\n"))
    }

    pub fn render_simulate(&self, explanation: &str, tokens: &[String]) -> String {
        let body: Vec<String> = tokens.iter().map(|t| display_token(t)).collect();
        self.simulate
            .replace("{explanation}", explanation)
            .replace("{tokens}", &body.join("\n"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpScore {
    pub feature_index: usize,
    pub mode: ScoringMode,
    /// `None` when the actual or simulated levels are constant.
    pub correlation: Option<f64>,
    pub n_fragments_scored: usize,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum InterpOutcome {
    Scored(InterpScore),
    Skipped { feature_index: usize, qualifying: usize },
}

#[derive(Debug, Clone)]
pub struct InterpOptions {
    pub mode: ScoringMode,
    pub seed: u64,
    pub max_lines: usize,
    pub retry: RetryPolicy,
    pub prompts: Prompts,
    /// Directory receiving one `feature_<N>.jsonl` transcript per feature.
    pub transcript_dir: Option<PathBuf>,
}

impl Default for InterpOptions {
    fn default() -> Self {
        InterpOptions {
            mode: ScoringMode::TopAndRandom,
            seed: 0,
            max_lines: 50_000,
            retry: RetryPolicy::default(),
            prompts: Prompts::default(),
            transcript_dir: None,
        }
    }
}

#[derive(Serialize)]
struct TranscriptEntry<'a> {
    feature: usize,
    kind: &'a str,
    attempt: u32,
    request: &'a str,
    response: Option<&'a str>,
    error: Option<String>,
}

struct Transcript {
    feature: usize,
    path: Option<PathBuf>,
}

impl Transcript {
    fn open(dir: Option<&Path>, feature: usize) -> Result<Self> {
        let path = match dir {
            Some(d) => {
                fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                Some(d.join(format!("feature_{feature}.jsonl")))
            }
            None => None,
        };
        Ok(Transcript { feature, path })
    }

    fn reference(&self) -> String {
        match &self.path {
            Some(p) => p.display().to_string(),
            None => "<not recorded>".into(),
        }
    }

    fn record(&self, entry: &TranscriptEntry<'_>) -> Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        let mut line = serde_json::to_string(entry).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
    }

    fn exchange<F>(&self, retry: &RetryPolicy, kind: &str, prompt: &str, mut call: F) -> Result<String>
    where
        F: FnMut() -> std::result::Result<String, ClientError>,
    {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let out = call();
            self.record(&TranscriptEntry {
                feature: self.feature,
                kind,
                attempt,
                request: prompt,
                response: out.as_ref().ok().map(String::as_str),
                error: out.as_ref().err().map(ToString::to_string),
            })?;
            match out {
                Ok(text) => return Ok(text),
                Err(e) if e.is_transient() && attempt <= retry.max_retries => {
                    log::warn!("feature {}: {kind} attempt {attempt} failed: {e}; retrying", self.feature);
                    std::thread::sleep(retry.delay(attempt));
                }
                Err(e) => {
                    return Err(Error::Client {
                        feature: self.feature,
                        attempts: attempt,
                        reason: e.to_string(),
                    })
                }
            }
        }
    }
}

/// Runs the full protocol for one feature: extract, select, explain,
/// simulate, score.
pub fn run_autointerp(
    feature: usize,
    dict: &Dictionary,
    activations: &ActivationDataset,
    tokens: &[TokenRecord],
    client: &dyn SimulatorClient,
    opts: &InterpOptions,
) -> Result<InterpOutcome> {
    let fragments = extract_fragments(feature, dict, activations, tokens, opts.max_lines)?;
    let (explain, score) = match select_scoring_sets(&fragments, opts.mode, opts.seed) {
        Selection::Skipped { qualifying } => {
            return Ok(InterpOutcome::Skipped {
                feature_index: feature,
                qualifying,
            })
        }
        Selection::Selected { explain, score } => (explain, score),
    };
    let global_max = explain
        .iter()
        .chain(&score)
        .map(|f| f.max_activation)
        .fold(0.0f32, f32::max);
    let explain = rescale_levels(&explain, global_max)?;
    let score = rescale_levels(&score, global_max)?;
    let transcript = Transcript::open(opts.transcript_dir.as_deref(), feature)?;

    let prompt = opts.prompts.render_explain(&explain);
    let req = ExplainRequest {
        feature,
        prompt: &prompt,
        examples: &explain,
    };
    let explanation = transcript
        .exchange(&opts.retry, "explain", &prompt, || client.explain(&req))?
        .trim()
        .to_owned();
    if explanation.is_empty() {
        return Err(Error::Protocol {
            feature,
            reason: "explainer returned an empty explanation".into(),
            transcript: transcript.reference(),
        });
    }

    let mut simulated = Vec::with_capacity(score.len());
    for frag in &score {
        let prompt = opts.prompts.render_simulate(&explanation, &frag.tokens);
        let req = SimulateRequest {
            feature,
            prompt: &prompt,
            explanation: &explanation,
            fragment: frag,
        };
        let text = transcript.exchange(&opts.retry, "simulate", &prompt, || client.simulate(&req))?;
        let levels = parse_simulation(&text, frag.tokens.len()).map_err(|reason| Error::Protocol {
            feature,
            reason: format!("fragment at offset {}: {reason}", frag.offset),
            transcript: transcript.reference(),
        })?;
        simulated.push(levels);
    }
    let actual: Vec<Vec<u8>> = score.iter().map(|f| f.levels.clone()).collect();
    Ok(InterpOutcome::Scored(InterpScore {
        feature_index: feature,
        mode: opts.mode,
        correlation: score_simulation(&actual, &simulated)?,
        n_fragments_scored: score.len(),
        explanation,
    }))
}

/// Runs [`run_autointerp`] for each feature with at most `parallelism`
/// features in flight. Results come back in input order.
pub fn run_autointerp_batch(
    features: &[usize],
    dict: &Dictionary,
    activations: &ActivationDataset,
    tokens: &[TokenRecord],
    client: &dyn SimulatorClient,
    opts: &InterpOptions,
    parallelism: usize,
) -> Vec<Result<InterpOutcome>> {
    let run = || -> Vec<Result<InterpOutcome>> {
        features
            .par_iter()
            .map(|&f| run_autointerp(f, dict, activations, tokens, client, opts))
            .collect()
    };
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = parallelism;
        run()
    }
}
