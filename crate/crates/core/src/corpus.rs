//! Stance corpora: label schemes, examples, datasets and the three on-disk
//! layouts they are read from.
//!
//! Text is carried through untouched. Downstream code only ever looks at
//! examples through their ids and the embedding stores keyed by them.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label scheme of a corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// FAVOR / AGAINST / NEITHER (SemEval-style).
    ThreeWay,
    /// SUPPORT / REFUTE / COMMENT / UNRELATED (WT-WT-style).
    FourWay,
}

impl Scheme {
    pub fn labels(self) -> &'static [StanceLabel] {
        use StanceLabel::*;
        match self {
            Scheme::ThreeWay => &[Favor, Against, Neither],
            Scheme::FourWay => &[Support, Refute, Comment, Unrelated],
        }
    }

    pub fn num_classes(self) -> usize {
        self.labels().len()
    }

    /// Classes that count towards macro-F1. NEITHER is a class of no
    /// interest in the three-way scheme; the four-way scheme scores all.
    pub fn classes_of_interest(self) -> Vec<StanceLabel> {
        match self {
            Scheme::ThreeWay => vec![StanceLabel::Favor, StanceLabel::Against],
            Scheme::FourWay => self.labels().to_vec(),
        }
    }

    pub fn label(self, index: usize) -> Option<StanceLabel> {
        self.labels().get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::ThreeWay => "three-way",
            Scheme::FourWay => "four-way",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A stance value. Every label belongs to exactly one [`Scheme`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StanceLabel {
    Favor,
    Against,
    Neither,
    Support,
    Refute,
    Comment,
    Unrelated,
}

impl StanceLabel {
    pub fn scheme(self) -> Scheme {
        use StanceLabel::*;
        match self {
            Favor | Against | Neither => Scheme::ThreeWay,
            Support | Refute | Comment | Unrelated => Scheme::FourWay,
        }
    }

    /// Position of the label inside its scheme.
    pub fn index(self) -> usize {
        use StanceLabel::*;
        match self {
            Favor | Support => 0,
            Against | Refute => 1,
            Neither | Comment => 2,
            Unrelated => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        use StanceLabel::*;
        match self {
            Favor => "FAVOR",
            Against => "AGAINST",
            Neither => "NEITHER",
            Support => "SUPPORT",
            Refute => "REFUTE",
            Comment => "COMMENT",
            Unrelated => "UNRELATED",
        }
    }

    /// Equality that refuses to compare labels of different schemes.
    pub fn same_class(self, other: StanceLabel) -> Result<bool> {
        if self.scheme() != other.scheme() {
            return Err(Error::SchemeMismatch {
                expected: self.scheme().to_string(),
                found: other.scheme().to_string(),
            });
        }
        Ok(self == other)
    }

    /// Parses a stance string, optionally constrained to one scheme.
    ///
    /// SemEval files spell the neutral class `NONE`; both `NONE` and
    /// `NEITHER` are accepted. Matching is case-insensitive.
    pub fn parse(s: &str, scheme: Option<Scheme>) -> Result<StanceLabel> {
        use StanceLabel::*;
        let label = match s.trim().to_ascii_uppercase().as_str() {
            "FAVOR" | "FAVOUR" => Favor,
            "AGAINST" => Against,
            "NEITHER" | "NONE" => Neither,
            "SUPPORT" => Support,
            "REFUTE" => Refute,
            "COMMENT" => Comment,
            "UNRELATED" => Unrelated,
            _ => return Err(Error::UnknownStance(s.to_string())),
        };
        match scheme {
            Some(expected) if label.scheme() != expected => Err(Error::SchemeMismatch {
                expected: expected.to_string(),
                found: label.scheme().to_string(),
            }),
            _ => Ok(label),
        }
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub text: String,
    pub target: String,
    pub stance: StanceLabel,
    pub split: Split,
}

/// Input layouts understood by [`load_dataset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    /// Tab-separated, header `ID  Target  Tweet  Stance`.
    #[serde(rename = "semeval-tsv")]
    SemevalTsv,
    /// JSON lines with `tweet_id, text, merger, stance`.
    #[serde(rename = "wtwt-jsonl")]
    WtwtJsonl,
    /// Comma-separated, header `id,text,target,stance,split`.
    #[serde(rename = "generic-csv")]
    GenericCsv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semeval-tsv" => Ok(Format::SemevalTsv),
            "wtwt-jsonl" => Ok(Format::WtwtJsonl),
            "generic-csv" => Ok(Format::GenericCsv),
            other => Err(Error::invalid(format!("unknown corpus format {other:?}"))),
        }
    }
}

/// An ordered, scheme-homogeneous collection of examples with unique ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    scheme: Scheme,
    examples: Vec<Example>,
}

impl Dataset {
    pub fn new(scheme: Scheme, examples: Vec<Example>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if ex.stance.scheme() != scheme {
                return Err(Error::SchemeMismatch {
                    expected: scheme.to_string(),
                    found: ex.stance.scheme().to_string(),
                });
            }
            if ex.text.is_empty() {
                return Err(Error::invalid(format!("example {} has empty text", ex.id)));
            }
            if ex.target.is_empty() {
                return Err(Error::invalid(format!("example {} has empty target", ex.id)));
            }
            if !seen.insert(ex.id) {
                return Err(Error::DuplicateId(ex.id));
            }
        }
        Ok(Dataset { scheme, examples })
    }

    pub fn empty(scheme: Scheme) -> Self {
        Dataset {
            scheme,
            examples: Vec::new(),
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.examples.iter().map(|e| e.id).collect()
    }

    pub fn get(&self, id: u64) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// Distinct targets in first-seen order.
    pub fn targets(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for ex in &self.examples {
            if !out.contains(&ex.target) {
                out.push(ex.target.clone());
            }
        }
        out
    }

    fn retain(&self, keep: impl Fn(&Example) -> bool) -> Dataset {
        Dataset {
            scheme: self.scheme,
            examples: self.examples.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    pub fn filter_target(&self, target: &str) -> Dataset {
        self.retain(|e| e.target == target)
    }

    /// Complement of [`Dataset::filter_target`].
    pub fn exclude_target(&self, target: &str) -> Dataset {
        self.retain(|e| e.target != target)
    }

    pub fn filter_split(&self, split: Split) -> Dataset {
        self.retain(|e| e.split == split)
    }

    /// Concatenates datasets of one scheme, optionally relabelling every
    /// example with a synthetic target tag (e.g. `POL` for HC + DT).
    pub fn concat(parts: &[Dataset], retag: Option<&str>) -> Result<Dataset> {
        let scheme = match parts.first() {
            Some(d) => d.scheme,
            None => return Err(Error::invalid("nothing to concatenate")),
        };
        let mut examples = Vec::new();
        for part in parts {
            for ex in &part.examples {
                let mut ex = ex.clone();
                if let Some(tag) = retag {
                    ex.target = tag.to_string();
                }
                examples.push(ex);
            }
        }
        Dataset::new(scheme, examples)
    }

    /// Per-class example counts, in scheme order.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.scheme.num_classes()];
        for ex in &self.examples {
            counts[ex.stance.index()] += 1;
        }
        counts
    }

    /// Draws `size` examples with per-class counts as even as supply allows.
    ///
    /// Quotas are filled one unit at a time, always to the non-exhausted
    /// class with the smallest quota (ties: larger remaining supply, then
    /// scheme order). Members of each class are picked by a seeded shuffle
    /// and the result keeps the input order.
    pub fn subsample_balanced(&self, size: usize, seed: u64) -> Result<Dataset> {
        if size > self.len() {
            return Err(Error::invalid(format!(
                "subsample size {size} exceeds dataset size {}",
                self.len()
            )));
        }
        let supply = self.class_counts();
        let quotas = balanced_quotas(&supply, size);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = vec![false; self.len()];
        for (class, &quota) in quotas.iter().enumerate() {
            let mut members: Vec<usize> = self
                .examples
                .iter()
                .enumerate()
                .filter(|(_, e)| e.stance.index() == class)
                .map(|(i, _)| i)
                .collect();
            members.shuffle(&mut rng);
            for &i in &members[..quota] {
                chosen[i] = true;
            }
        }
        Ok(Dataset {
            scheme: self.scheme,
            examples: self
                .examples
                .iter()
                .zip(&chosen)
                .filter(|(_, &c)| c)
                .map(|(e, _)| e.clone())
                .collect(),
        })
    }

    /// Writes the dataset in the generic CSV layout.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["id", "text", "target", "stance", "split"])?;
        for ex in &self.examples {
            wtr.write_record([
                ex.id.to_string().as_str(),
                ex.text.as_str(),
                ex.target.as_str(),
                ex.stance.as_str(),
                &ex.split.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn balanced_quotas(supply: &[usize], size: usize) -> Vec<usize> {
    let mut quotas = vec![0usize; supply.len()];
    for _ in 0..size {
        let next = (0..supply.len())
            .filter(|&c| quotas[c] < supply[c])
            .min_by_key(|&c| (quotas[c], std::cmp::Reverse(supply[c] - quotas[c]), c));
        match next {
            Some(c) => quotas[c] += 1,
            None => break,
        }
    }
    quotas
}

/// Loads a dataset; rows without a split column are marked as training data.
pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<Dataset> {
    load_dataset_with_split(path, format, Split::Train)
}

/// Like [`load_dataset`], with an explicit split for rows that carry none
/// (e.g. the SemEval test file).
pub fn load_dataset_with_split(
    path: impl AsRef<Path>,
    format: Format,
    default_split: Split,
) -> Result<Dataset> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&raw, format, default_split)
}

pub fn parse_dataset(raw: &str, format: Format, default_split: Split) -> Result<Dataset> {
    if raw.trim().is_empty() {
        return Err(Error::EmptyFile);
    }
    let rows = match format {
        Format::SemevalTsv => parse_semeval(raw, default_split)?,
        Format::WtwtJsonl => parse_wtwt(raw, default_split)?,
        Format::GenericCsv => parse_generic(raw, default_split)?,
    };
    if rows.is_empty() {
        return Err(Error::EmptyFile);
    }
    let scheme = rows[0].stance.scheme();
    for (i, ex) in rows.iter().enumerate() {
        if ex.stance.scheme() != scheme {
            return Err(Error::MalformedRow {
                row: i + 2,
                reason: format!("stance {} is not in the {scheme} scheme", ex.stance),
            });
        }
    }
    Dataset::new(scheme, rows)
}

fn malformed(row: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRow {
        row,
        reason: reason.into(),
    }
}

fn semeval_target_tag(name: &str) -> String {
    match name.trim() {
        "Atheism" => "AT",
        "Climate Change is a Real Concern" | "Climate Change is Real Concern" => "CC",
        "Feminist Movement" => "FM",
        "Hillary Clinton" => "HC",
        "Legalization of Abortion" => "LA",
        "Donald Trump" => "DT",
        other => other,
    }
    .to_string()
}

fn wtwt_domain(merger: &str) -> String {
    match merger.trim() {
        "CVS_AET" | "CI_ESRX" | "ANTM_CI" | "AET_HUM" => "HLT",
        "DIS_FOXA" | "FOXA_DIS" => "ENT",
        other => other,
    }
    .to_string()
}

fn parse_id(field: &str, row: usize, fallback: usize) -> Result<u64> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(fallback as u64);
    }
    field
        .parse::<u64>()
        .map_err(|_| malformed(row, format!("id {field:?} is not a non-negative integer")))
}

fn required<'a>(field: Option<&'a str>, name: &str, row: usize) -> Result<&'a str> {
    match field {
        Some(v) if !v.trim().is_empty() => Ok(v),
        _ => Err(malformed(row, format!("missing {name}"))),
    }
}

fn stance_at(field: &str, row: usize, scheme: Option<Scheme>) -> Result<StanceLabel> {
    StanceLabel::parse(field, scheme).map_err(|e| match e {
        Error::UnknownStance(s) => Error::UnknownStance(format!("{s} (row {row})")),
        other => malformed(row, other.to_string()),
    })
}

fn check_header(got: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let ok = got.len() == expected.len()
        && got
            .iter()
            .zip(expected)
            .all(|(g, e)| g.trim().eq_ignore_ascii_case(e));
    if ok {
        Ok(())
    } else {
        Err(malformed(
            1,
            format!("expected header {:?}, got {:?}", expected, got.iter().collect::<Vec<_>>()),
        ))
    }
}

fn parse_semeval(raw: &str, default_split: Split) -> Result<Vec<Example>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(raw.as_bytes());
    check_header(rdr.headers()?, &["ID", "Target", "Tweet", "Stance"])?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| malformed(row, e.to_string()))?;
        if rec.len() != 4 {
            return Err(malformed(row, format!("expected 4 fields, found {}", rec.len())));
        }
        out.push(Example {
            id: parse_id(&rec[0], row, i)?,
            target: semeval_target_tag(required(rec.get(1), "target", row)?),
            text: required(rec.get(2), "text", row)?.to_string(),
            stance: stance_at(&rec[3], row, Some(Scheme::ThreeWay))?,
            split: default_split,
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct WtwtRow {
    tweet_id: serde_json::Value,
    text: String,
    merger: String,
    stance: String,
    #[serde(default)]
    split: Option<String>,
}

fn parse_wtwt(raw: &str, default_split: Split) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: WtwtRow =
            serde_json::from_str(line).map_err(|e| malformed(row, e.to_string()))?;
        let id = match &rec.tweet_id {
            serde_json::Value::Number(n) => n
                .as_u64()
                .ok_or_else(|| malformed(row, "tweet_id is not a non-negative integer"))?,
            serde_json::Value::String(s) => parse_id(s, row, out.len())?,
            serde_json::Value::Null => out.len() as u64,
            _ => return Err(malformed(row, "tweet_id has an unsupported type")),
        };
        if rec.text.is_empty() {
            return Err(malformed(row, "missing text"));
        }
        if rec.merger.trim().is_empty() {
            return Err(malformed(row, "missing merger"));
        }
        let split = match rec.split.as_deref() {
            Some(s) => s.parse().map_err(|e: Error| malformed(row, e.to_string()))?,
            None => default_split,
        };
        out.push(Example {
            id,
            text: rec.text,
            target: wtwt_domain(&rec.merger),
            stance: stance_at(&rec.stance, row, Some(Scheme::FourWay))?,
            split,
        });
    }
    Ok(out)
}

fn parse_generic(raw: &str, default_split: Split) -> Result<Vec<Example>> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(raw.as_bytes());
    check_header(rdr.headers()?, &["id", "text", "target", "stance", "split"])?;
    let mut out = Vec::new();
    let mut scheme = None;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| malformed(row, e.to_string()))?;
        if rec.len() != 5 {
            return Err(malformed(row, format!("expected 5 fields, found {}", rec.len())));
        }
        let stance = stance_at(&rec[3], row, scheme)?;
        scheme.get_or_insert(stance.scheme());
        let split = if rec[4].trim().is_empty() {
            default_split
        } else {
            rec[4].parse().map_err(|e: Error| malformed(row, e.to_string()))?
        };
        out.push(Example {
            id: parse_id(&rec[0], row, i)?,
            text: required(rec.get(1), "text", row)?.to_string(),
            target: required(rec.get(2), "target", row)?.trim().to_string(),
            stance,
            split,
        });
    }
    Ok(out)
}

/// Writes a dataset as WT-WT-style JSON lines (four-way scheme only).
pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    if dataset.scheme() != Scheme::FourWay {
        return Err(Error::SchemeMismatch {
            expected: Scheme::FourWay.to_string(),
            found: dataset.scheme().to_string(),
        });
    }
    let path = path.as_ref();
    let mut buf = Vec::new();
    for ex in dataset.iter() {
        let row = serde_json::json!({
            "tweet_id": ex.id.to_string(),
            "text": ex.text,
            "merger": ex.target,
            "stance": ex.stance.as_str().to_ascii_lowercase(),
            "split": ex.split.to_string(),
        });
        serde_json::to_writer(&mut buf, &row)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Counts per (target, class) for quick corpus summaries.
pub fn target_summary(dataset: &Dataset) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for ex in dataset.iter() {
        out.entry(ex.target.clone())
            .or_insert_with(|| vec![0; dataset.scheme().num_classes()])[ex.stance.index()] += 1;
    }
    out
}
