//! Feedback samples, corpora, and their line-delimited JSON file format.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"id":"s-1","diff":"...","comment":"...","feedback":"ignore","gold":1}
//! ```
//!
//! `gold` is optional; unknown keys are rejected. Binary datasets use the same
//! record with one extra `label` key.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// User reaction to a generated review comment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    Accept,
    Reject,
    Ignore,
}

impl Feedback {
    pub const ALL: [Feedback; 3] = [Feedback::Accept, Feedback::Reject, Feedback::Ignore];

    pub fn as_str(self) -> &'static str {
        match self {
            Feedback::Accept => "accept",
            Feedback::Reject => "reject",
            Feedback::Ignore => "ignore",
        }
    }

    /// Row index used by per-feedback tables (accept, reject, ignore).
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary quality label. `Intercept` (0) marks a low-quality comment the
/// reflection model should block, `Retain` (1) a comment worth showing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Intercept = 0,
    Retain = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            0 => Ok(Label::Intercept),
            1 => Ok(Label::Retain),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        label.as_u8()
    }
}

/// One (diff, comment) pair with the user's feedback and, when annotated, an
/// expert gold label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSample {
    pub id: String,
    pub diff: String,
    pub comment: String,
    pub feedback: Feedback,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Label>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusRole {
    Raw,
    AnchorValidation,
    Test,
    Training,
}

impl CorpusRole {
    pub fn requires_gold(self) -> bool {
        matches!(self, CorpusRole::AnchorValidation | CorpusRole::Test)
    }
}

impl fmt::Display for CorpusRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CorpusRole::Raw => "raw",
            CorpusRole::AnchorValidation => "anchor-validation",
            CorpusRole::Test => "test",
            CorpusRole::Training => "training",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: field `{field}` is empty")]
    EmptyField { line: usize, field: &'static str },
    #[error("line {line}: sample `{id}` has no gold label, required for a {role} corpus")]
    MissingGold {
        line: usize,
        id: String,
        role: CorpusRole,
    },
    #[error("not enough {class} samples: need {needed}, have {available} (short by {shortfall})")]
    Insufficient {
        class: String,
        needed: usize,
        available: usize,
        shortfall: usize,
    },
    #[error("{0}")]
    InvalidRequest(String),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn insufficient(class: impl Into<String>, needed: usize, available: usize) -> Self {
        CorpusError::Insufficient {
            class: class.into(),
            needed,
            available,
            shortfall: needed - available,
        }
    }
}

/// An ordered, immutable collection of samples. Samples are reference counted
/// so datasets derived from a corpus share them instead of copying text.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    samples: Vec<Arc<FeedbackSample>>,
    role: CorpusRole,
}

impl Corpus {
    pub fn new(samples: Vec<FeedbackSample>, role: CorpusRole) -> Result<Self, CorpusError> {
        Self::from_shared(samples.into_iter().map(Arc::new).collect(), role)
    }

    /// Builds a corpus from already shared samples. Positions in errors are
    /// 1-based record numbers.
    pub fn from_shared(
        samples: Vec<Arc<FeedbackSample>>,
        role: CorpusRole,
    ) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(samples.len());
        for (i, sample) in samples.iter().enumerate() {
            validate_sample(sample, i + 1, role, &mut seen)?;
        }
        Ok(Corpus { samples, role })
    }

    pub fn empty(role: CorpusRole) -> Self {
        Corpus {
            samples: Vec::new(),
            role,
        }
    }

    pub fn role(&self) -> CorpusRole {
        self.role
    }

    pub fn samples(&self) -> &[Arc<FeedbackSample>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeedbackSample> {
        self.samples.iter().map(|s| s.as_ref())
    }

    /// Same samples under a different role; fails if the new role needs gold
    /// labels that are missing.
    pub fn with_role(&self, role: CorpusRole) -> Result<Self, CorpusError> {
        Self::from_shared(self.samples.clone(), role)
    }

    /// Sample counts per feedback class, indexed by [`Feedback::index`].
    pub fn feedback_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in &self.samples {
            counts[s.feedback.index()] += 1;
        }
        counts
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }

    /// Parses line-delimited records. Blank lines are skipped but still count
    /// toward line numbers.
    pub fn parse<R: BufRead>(reader: R, role: CorpusRole) -> Result<Self, CorpusError> {
        let mut samples = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let sample: FeedbackSample =
                serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            validate_sample(&sample, line_no, role, &mut seen)?;
            samples.push(Arc::new(sample));
        }
        Ok(Corpus { samples, role })
    }

    pub fn load(path: impl AsRef<Path>, role: CorpusRole) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
        Self::parse(BufReader::new(file), role)
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for sample in &self.samples {
            serde_json::to_writer(&mut writer, sample.as_ref())?;
            writer.write_all(b"\n")?;
        }
        writer.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| CorpusError::io(path, e))
    }
}

fn validate_sample(
    sample: &FeedbackSample,
    line: usize,
    role: CorpusRole,
    seen: &mut HashSet<String>,
) -> Result<(), CorpusError> {
    if sample.id.is_empty() {
        return Err(CorpusError::EmptyField { line, field: "id" });
    }
    if sample.diff.is_empty() {
        return Err(CorpusError::EmptyField { line, field: "diff" });
    }
    if sample.comment.is_empty() {
        return Err(CorpusError::EmptyField {
            line,
            field: "comment",
        });
    }
    if role.requires_gold() && sample.gold.is_none() {
        return Err(CorpusError::MissingGold {
            line,
            id: sample.id.clone(),
            role,
        });
    }
    if !seen.insert(sample.id.clone()) {
        return Err(CorpusError::DuplicateId {
            line,
            id: sample.id.clone(),
        });
    }
    Ok(())
}

/// Draws exactly `per_class` samples of each feedback class, uniformly and
/// without replacement. Selected samples keep their corpus order.
pub fn stratified_sample(corpus: &Corpus, per_class: usize, seed: u64) -> Result<Corpus, CorpusError> {
    let mut pools: [Vec<usize>; 3] = Default::default();
    for (i, s) in corpus.samples.iter().enumerate() {
        pools[s.feedback.index()].push(i);
    }
    for class in Feedback::ALL {
        let available = pools[class.index()].len();
        if available < per_class {
            return Err(CorpusError::insufficient(class.as_str(), per_class, available));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(per_class * 3);
    for pool in &pools {
        chosen.extend(index::sample(&mut rng, pool.len(), per_class).into_iter().map(|j| pool[j]));
    }
    chosen.sort_unstable();

    Ok(Corpus {
        samples: chosen.into_iter().map(|i| corpus.samples[i].clone()).collect(),
        role: CorpusRole::Raw,
    })
}

/// Splits a fully gold-labeled corpus into disjoint anchor-validation and
/// test corpora, each balanced 1:1 between gold labels.
pub fn split_gold(
    corpus: &Corpus,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Corpus, Corpus), CorpusError> {
    if !n_val.is_multiple_of(2) || !n_test.is_multiple_of(2) {
        return Err(CorpusError::InvalidRequest(format!(
            "validation and test sizes must be even for a 1:1 split (got {n_val} and {n_test})"
        )));
    }
    let mut retain = Vec::new();
    let mut intercept = Vec::new();
    for (i, s) in corpus.samples.iter().enumerate() {
        match s.gold {
            Some(Label::Retain) => retain.push(i),
            Some(Label::Intercept) => intercept.push(i),
            None => {
                return Err(CorpusError::MissingGold {
                    line: i + 1,
                    id: s.id.clone(),
                    role: CorpusRole::AnchorValidation,
                })
            }
        }
    }
    let half = (n_val + n_test) / 2;
    if retain.len() < half {
        return Err(CorpusError::insufficient("gold-positive", half, retain.len()));
    }
    if intercept.len() < half {
        return Err(CorpusError::insufficient("gold-negative", half, intercept.len()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val = Vec::with_capacity(n_val);
    let mut test = Vec::with_capacity(n_test);
    for pool in [&retain, &intercept] {
        let picked = index::sample(&mut rng, pool.len(), half).into_vec();
        val.extend(picked[..n_val / 2].iter().map(|&j| pool[j]));
        test.extend(picked[n_val / 2..].iter().map(|&j| pool[j]));
    }
    val.sort_unstable();
    test.sort_unstable();

    let take = |idx: Vec<usize>, role| Corpus {
        samples: idx.into_iter().map(|i| corpus.samples[i].clone()).collect(),
        role,
    };
    Ok((take(val, CorpusRole::AnchorValidation), take(test, CorpusRole::Test)))
}

/// Where a binary dataset's labels came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    DopedPerturbation { alpha: f64 },
    RelabeledClean,
    NaiveMapping,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub sample: Arc<FeedbackSample>,
    pub label: Label,
}

/// Samples paired with assigned training labels.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryDataset {
    items: Vec<LabeledSample>,
    provenance: Provenance,
}

/// On-disk form of a [`LabeledSample`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabeledRecord {
    id: String,
    diff: String,
    comment: String,
    feedback: Feedback,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold: Option<Label>,
    label: Label,
}

impl BinaryDataset {
    pub fn new(items: Vec<LabeledSample>, provenance: Provenance) -> Self {
        BinaryDataset { items, provenance }
    }

    pub fn items(&self) -> &[LabeledSample] {
        &self.items
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.items.iter().filter(|item| item.label == label).count()
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.items.iter().map(|item| item.sample.id.as_str()).collect()
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for item in &self.items {
            let s = item.sample.as_ref();
            let record = LabeledRecord {
                id: s.id.clone(),
                diff: s.diff.clone(),
                comment: s.comment.clone(),
                feedback: s.feedback,
                gold: s.gold,
                label: item.label,
            };
            serde_json::to_writer(&mut writer, &record)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| CorpusError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, provenance: Provenance) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
        let mut items = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| CorpusError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: LabeledRecord =
                serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            items.push(LabeledSample {
                sample: Arc::new(FeedbackSample {
                    id: r.id,
                    diff: r.diff,
                    comment: r.comment,
                    feedback: r.feedback,
                    gold: r.gold,
                }),
                label: r.label,
            });
        }
        Ok(BinaryDataset { items, provenance })
    }
}
