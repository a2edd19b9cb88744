//! Table corpora: data model, on-disk format, domain filtering and
//! per-label downsampling of the training split.
//!
//! A corpus directory holds:
//!
//! - `vocabulary.json`: `{"labels": [...], "hierarchy": [[child, parent], ...], "multi_label": bool}`
//! - `tables/<table_id>.csv`: raw cells, no header row
//! - `annotations.jsonl`: one record per table with roles, gold label arrays and domain
//! - `splits.json`: `{table_id: "train" | "validation" | "test"}`

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CorpusError, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    /// Column to be annotated.
    Target,
    /// Column shown for context only.
    Context,
}

/// One table with its annotation metadata. Column indices are zero-based;
/// prompts render them one-based as `Column N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableDoc {
    pub table_id: String,
    /// Row-major cell grid.
    pub cells: Vec<Vec<String>>,
    pub column_roles: Vec<ColumnRole>,
    pub gold: BTreeMap<usize, BTreeSet<String>>,
    pub domain: String,
    pub split: Split,
    pub original_headers: Option<Vec<String>>,
    /// Target columns dropped by downsampling. They keep their gold labels
    /// (and stay visible as context) but are not requested or trained on.
    pub excluded: BTreeSet<usize>,
}

impl TableDoc {
    pub fn n_columns(&self) -> usize {
        self.column_roles.len()
    }

    pub fn n_rows(&self) -> usize {
        self.cells.len()
    }

    pub fn target_columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.column_roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == ColumnRole::Target)
            .map(|(i, _)| i)
    }

    /// Target columns that are requested in prompts and scored.
    pub fn annotated_columns(&self) -> Vec<usize> {
        self.target_columns().filter(|c| !self.excluded.contains(c)).collect()
    }

    pub fn column_cells(&self, column: usize) -> impl Iterator<Item = &str> + '_ {
        self.cells
            .iter()
            .filter_map(move |row| row.get(column).map(String::as_str))
    }

    pub fn gold_labels(&self, column: usize) -> Option<&BTreeSet<String>> {
        self.gold.get(&column)
    }

    /// Checks the table-local invariants against `vocab`.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), CorpusError> {
        let err = |message: String| CorpusError::Table {
            table_id: self.table_id.clone(),
            message,
        };
        let width = self.n_columns();
        for (row, cells) in self.cells.iter().enumerate() {
            if cells.len() != width {
                return Err(CorpusError::NonRectangular {
                    file: PathBuf::from(format!("tables/{}.csv", self.table_id)),
                    table_id: self.table_id.clone(),
                    row: row + 1,
                    found: cells.len(),
                    expected: width,
                });
            }
        }
        if let Some(headers) = &self.original_headers {
            if headers.len() != width {
                return Err(err(format!("{} headers for {width} columns", headers.len())));
            }
        }
        for (col, role) in self.column_roles.iter().enumerate() {
            let gold = self.gold.get(&col);
            match role {
                ColumnRole::Target if gold.is_none_or(BTreeSet::is_empty) => {
                    return Err(err(format!("target column {col} has no gold label")));
                }
                ColumnRole::Context if gold.is_some_and(|g| !g.is_empty()) => {
                    return Err(err(format!("context column {col} carries gold labels")));
                }
                _ => {}
            }
            if let Some(gold) = gold {
                if !vocab.multi_label && gold.len() > 1 {
                    return Err(err(format!(
                        "column {col} has {} gold labels in a single-label corpus",
                        gold.len()
                    )));
                }
                if let Some(unknown) = gold.iter().find(|l| !vocab.contains(l)) {
                    return Err(CorpusError::UnknownLabel {
                        file: PathBuf::from("annotations.jsonl"),
                        locus: format!("table {} column {col}", self.table_id),
                        label: unknown.clone(),
                    });
                }
            }
        }
        if let Some(&col) = self.gold.keys().find(|c| **c >= width) {
            return Err(err(format!("gold for column {col} outside {width} columns")));
        }
        if let Some(&col) = self
            .excluded
            .iter()
            .find(|c| self.column_roles.get(**c) != Some(&ColumnRole::Target))
        {
            return Err(err(format!("excluded column {col} is not a target column")));
        }
        Ok(())
    }
}

/// The label set of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Vocabulary {
    pub labels: Vec<String>,
    /// `(child, parent)` edges.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hierarchy: Vec<(String, String)>,
    #[serde(default)]
    pub multi_label: bool,
}

impl Vocabulary {
    pub fn new(labels: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            labels: labels.into_iter().map(Into::into).collect(),
            hierarchy: Vec::new(),
            multi_label: false,
        }
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for label in &self.labels {
            if label.is_empty() {
                return Err(CorpusError::Vocabulary("empty label id".into()));
            }
            if !seen.insert(label.as_str()) {
                return Err(CorpusError::Vocabulary(format!("duplicate label \"{label}\"")));
            }
        }
        for (child, parent) in &self.hierarchy {
            for l in [child, parent] {
                if !seen.contains(l.as_str()) {
                    return Err(CorpusError::Vocabulary(format!(
                        "hierarchy edge ({child}, {parent}) references unknown label \"{l}\""
                    )));
                }
            }
        }
        if let Some(label) = self.hierarchy_cycle() {
            return Err(CorpusError::Vocabulary(format!(
                "hierarchy has a cycle through \"{label}\""
            )));
        }
        Ok(())
    }

    /// Direct children of `parent`, in vocabulary order.
    pub fn children<'a>(&'a self, parent: &str) -> Vec<&'a str> {
        let kids: HashSet<&str> = self
            .hierarchy
            .iter()
            .filter(|(_, p)| p == parent)
            .map(|(c, _)| c.as_str())
            .collect();
        self.labels
            .iter()
            .map(String::as_str)
            .filter(|l| kids.contains(l))
            .collect()
    }

    fn hierarchy_cycle(&self) -> Option<String> {
        let mut parents: HashMap<&str, Vec<&str>> = HashMap::new();
        for (c, p) in &self.hierarchy {
            parents.entry(c.as_str()).or_default().push(p.as_str());
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state: HashMap<&str, u8> = HashMap::new();
        fn visit<'a>(
            node: &'a str,
            parents: &HashMap<&'a str, Vec<&'a str>>,
            state: &mut HashMap<&'a str, u8>,
        ) -> bool {
            match state.get(node) {
                Some(1) => return true,
                Some(2) => return false,
                _ => {}
            }
            state.insert(node, 1);
            for p in parents.get(node).into_iter().flatten() {
                if visit(p, parents, state) {
                    return true;
                }
            }
            state.insert(node, 2);
            false
        }
        parents
            .keys()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .find(|n| visit(n, &parents, &mut state))
            .map(str::to_string)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub vocabulary: Vocabulary,
    pub tables: Vec<TableDoc>,
}

/// A single annotated column, addressed by table and zero-based index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnRef<'a> {
    pub table_id: &'a str,
    pub column: usize,
}

impl Corpus {
    pub fn validate(&self) -> Result<(), CorpusError> {
        self.vocabulary.validate()?;
        let mut ids = HashSet::new();
        for t in &self.tables {
            if !ids.insert(t.table_id.as_str()) {
                return Err(CorpusError::Table {
                    table_id: t.table_id.clone(),
                    message: "duplicate table id".into(),
                });
            }
            t.validate(&self.vocabulary)?;
        }
        Ok(())
    }

    pub fn table(&self, table_id: &str) -> Option<&TableDoc> {
        self.tables.iter().find(|t| t.table_id == table_id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &TableDoc> + '_ {
        self.tables.iter().filter(move |t| t.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Number of annotated (non-excluded target) columns per label in `split`.
    pub fn label_column_counts(&self, split: Split) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for t in self.split(split) {
            for col in t.annotated_columns() {
                for label in t.gold.get(&col).into_iter().flatten() {
                    *counts.entry(label.clone()).or_insert(0) += 1;
                }
            }
        }
        counts
    }

    /// Annotated columns of `split` carrying `label`, ordered by table id then column.
    pub fn columns_with_label<'a>(&'a self, split: Split, label: &str) -> Vec<ColumnRef<'a>> {
        let mut out: Vec<ColumnRef<'a>> = self
            .split(split)
            .flat_map(|t| {
                t.annotated_columns()
                    .into_iter()
                    .filter(|c| t.gold.get(c).is_some_and(|g| g.contains(label)))
                    .map(move |column| ColumnRef {
                        table_id: t.table_id.as_str(),
                        column,
                    })
            })
            .collect();
        out.sort();
        out
    }

    pub fn annotated_column_count(&self, split: Split) -> usize {
        self.split(split).map(|t| t.annotated_columns().len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterReport {
    pub tables_kept: usize,
    pub tables_removed: usize,
    pub labels_kept: usize,
    pub labels_removed: usize,
    /// Set when nothing survived the filter.
    pub empty: bool,
}

/// Keeps only tables whose domain is in `domains` and restricts the
/// vocabulary to labels that still occur.
pub fn filter_domains(corpus: &Corpus, domains: &BTreeSet<String>) -> Result<(Corpus, FilterReport)> {
    if domains.is_empty() {
        return Err(Error::invalid("filter_domains needs at least one domain"));
    }
    let tables: Vec<TableDoc> = corpus
        .tables
        .iter()
        .filter(|t| domains.contains(&t.domain))
        .cloned()
        .collect();
    let used: HashSet<&str> = tables
        .iter()
        .flat_map(|t| t.gold.values().flatten().map(String::as_str))
        .collect();
    let labels: Vec<String> = corpus
        .vocabulary
        .labels
        .iter()
        .filter(|l| used.contains(l.as_str()))
        .cloned()
        .collect();
    let hierarchy = corpus
        .vocabulary
        .hierarchy
        .iter()
        .filter(|(c, p)| used.contains(c.as_str()) && used.contains(p.as_str()))
        .cloned()
        .collect();
    let report = FilterReport {
        tables_kept: tables.len(),
        tables_removed: corpus.tables.len() - tables.len(),
        labels_kept: labels.len(),
        labels_removed: corpus.vocabulary.labels.len() - labels.len(),
        empty: tables.is_empty(),
    };
    if report.empty {
        log::warn!(
            "domain filter {:?} removed every table of corpus {}",
            domains,
            corpus.name
        );
    } else {
        log::info!(
            "domain filter kept {} tables ({} removed), {} labels",
            report.tables_kept,
            report.tables_removed,
            report.labels_kept
        );
    }
    Ok((
        Corpus {
            name: corpus.name.clone(),
            vocabulary: Vocabulary {
                labels,
                hierarchy,
                multi_label: corpus.vocabulary.multi_label,
            },
            tables,
        },
        report,
    ))
}

/// Caps the number of annotated train columns per label at
/// `max_columns_per_label`.
///
/// Train columns are visited in a seeded random order and a column is kept
/// while every one of its gold labels is still under the cap, so each label
/// receives a uniform sample without replacement. Tables with no surviving
/// target column are dropped; surviving tables mark their other target
/// columns as excluded. Validation and test tables are untouched.
pub fn downsample(corpus: &Corpus, max_columns_per_label: usize, seed: u64) -> Result<Corpus> {
    if max_columns_per_label == 0 {
        return Err(Error::invalid("max_columns_per_label must be at least 1"));
    }
    let mut candidates: Vec<(&str, usize, usize)> = corpus
        .tables
        .iter()
        .enumerate()
        .filter(|(_, t)| t.split == Split::Train)
        .flat_map(|(ti, t)| {
            t.annotated_columns()
                .into_iter()
                .map(move |c| (t.table_id.as_str(), c, ti))
        })
        .collect();
    candidates.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);

    let mut per_label: HashMap<&str, usize> = HashMap::new();
    let mut kept: HashSet<(usize, usize)> = HashSet::new();
    for (_, col, ti) in candidates {
        let gold = &corpus.tables[ti].gold[&col];
        if gold
            .iter()
            .all(|l| per_label.get(l.as_str()).copied().unwrap_or(0) < max_columns_per_label)
        {
            for l in gold {
                *per_label.entry(l.as_str()).or_insert(0) += 1;
            }
            kept.insert((ti, col));
        }
    }

    let mut tables = Vec::with_capacity(corpus.tables.len());
    for (ti, t) in corpus.tables.iter().enumerate() {
        if t.split != Split::Train {
            tables.push(t.clone());
            continue;
        }
        let annotated = t.annotated_columns();
        if !annotated.iter().any(|c| kept.contains(&(ti, *c))) {
            continue;
        }
        let mut t = t.clone();
        for c in annotated {
            if !kept.contains(&(ti, c)) {
                t.excluded.insert(c);
            }
        }
        tables.push(t);
    }
    Ok(Corpus {
        name: corpus.name.clone(),
        vocabulary: corpus.vocabulary.clone(),
        tables,
    })
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(flatten)]
    vocabulary: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct AnnotationRecord {
    table_id: String,
    domain: String,
    roles: Vec<ColumnRole>,
    gold: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    headers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    excluded: Vec<usize>,
}

fn read_to_string(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.to_path_buf()).into());
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn malformed(file: &Path, locus: impl Into<String>, message: impl ToString) -> Error {
    CorpusError::Malformed {
        file: file.to_path_buf(),
        locus: locus.into(),
        message: message.to_string(),
    }
    .into()
}

fn check_id(file: &Path, locus: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(malformed(file, locus, format!("table id \"{id}\" is not ASCII-safe")))
    }
}

/// Loads and validates a corpus directory.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let vocab_path = dir.join("vocabulary.json");
    let vocab_file: VocabularyFile = serde_json::from_str(&read_to_string(&vocab_path)?)
        .map_err(|e| malformed(&vocab_path, format!("line {}", e.line()), e))?;
    let vocabulary = vocab_file.vocabulary;
    vocabulary.validate()?;

    let splits_path = dir.join("splits.json");
    let splits: BTreeMap<String, Split> = serde_json::from_str(&read_to_string(&splits_path)?)
        .map_err(|e| malformed(&splits_path, format!("line {}", e.line()), e))?;

    let ann_path = dir.join("annotations.jsonl");
    if !ann_path.exists() {
        return Err(CorpusError::MissingFile(ann_path).into());
    }
    let reader = BufReader::new(fs::File::open(&ann_path).map_err(|e| Error::io(&ann_path, e))?);
    let mut tables = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&ann_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let locus = format!("line {}", lineno + 1);
        let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| malformed(&ann_path, &locus, e))?;
        check_id(&ann_path, &locus, &rec.table_id)?;
        if !seen.insert(rec.table_id.clone()) {
            return Err(malformed(
                &ann_path,
                &locus,
                format!("duplicate table id {}", rec.table_id),
            ));
        }
        if rec.gold.len() != rec.roles.len() {
            return Err(malformed(
                &ann_path,
                &locus,
                format!("{} gold arrays for {} columns", rec.gold.len(), rec.roles.len()),
            ));
        }
        for labels in &rec.gold {
            if let Some(l) = labels.iter().find(|l| !vocabulary.contains(l)) {
                return Err(CorpusError::UnknownLabel {
                    file: ann_path.clone(),
                    locus: format!("{locus} (table {})", rec.table_id),
                    label: l.clone(),
                }
                .into());
            }
        }
        let split = *splits
            .get(&rec.table_id)
            .ok_or_else(|| malformed(&splits_path, &rec.table_id, "table has no split assignment"))?;
        let cells = read_table_csv(&dir.join("tables"), &rec.table_id, rec.roles.len())?;
        let gold = rec
            .gold
            .into_iter()
            .enumerate()
            .filter(|(_, g)| !g.is_empty())
            .map(|(i, g)| (i, g.into_iter().collect()))
            .collect();
        let table = TableDoc {
            table_id: rec.table_id,
            cells,
            column_roles: rec.roles,
            gold,
            domain: rec.domain,
            split,
            original_headers: rec.headers,
            excluded: rec.excluded.into_iter().collect(),
        };
        table.validate(&vocabulary).map_err(|e| match e {
            CorpusError::Table { table_id, message } => {
                malformed(&ann_path, format!("{locus} (table {table_id})"), message)
            }
            other => other.into(),
        })?;
        tables.push(table);
    }
    if let Some(extra) = splits.keys().find(|id| !seen.contains(*id)) {
        return Err(malformed(&splits_path, extra, "split assigned to unknown table"));
    }
    let name = vocab_file.name.unwrap_or_else(|| {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".into())
    });
    let corpus = Corpus {
        name,
        vocabulary,
        tables,
    };
    corpus.validate()?;
    Ok(corpus)
}

fn read_table_csv(tables_dir: &Path, table_id: &str, width: usize) -> Result<Vec<Vec<String>>> {
    let path = tables_dir.join(format!("{table_id}.csv"));
    if !path.exists() {
        return Err(CorpusError::MissingFile(path).into());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(&path)
        .map_err(|e| malformed(&path, "open", e))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| malformed(&path, format!("row {}", i + 1), e))?;
        if rec.len() != width {
            return Err(CorpusError::NonRectangular {
                file: path,
                table_id: table_id.to_string(),
                row: i + 1,
                found: rec.len(),
                expected: width,
            }
            .into());
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

/// Writes `corpus` in the directory layout read by [`load_corpus`].
pub fn save_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let tables_dir = dir.join("tables");
    fs::create_dir_all(&tables_dir).map_err(|e| Error::io(&tables_dir, e))?;

    let vocab = VocabularyFile {
        name: Some(corpus.name.clone()),
        vocabulary: corpus.vocabulary.clone(),
    };
    write_json_pretty(&dir.join("vocabulary.json"), &vocab)?;

    let splits: BTreeMap<&str, Split> = corpus.tables.iter().map(|t| (t.table_id.as_str(), t.split)).collect();
    write_json_pretty(&dir.join("splits.json"), &splits)?;

    let ann_path = dir.join("annotations.jsonl");
    let mut out = Vec::new();
    for t in &corpus.tables {
        let rec = AnnotationRecord {
            table_id: t.table_id.clone(),
            domain: t.domain.clone(),
            roles: t.column_roles.clone(),
            gold: (0..t.n_columns())
                .map(|c| t.gold.get(&c).map(|g| g.iter().cloned().collect()).unwrap_or_default())
                .collect(),
            headers: t.original_headers.clone(),
            excluded: t.excluded.iter().copied().collect(),
        };
        serde_json::to_writer(&mut out, &rec).expect("annotation record serializes");
        out.push(b'\n');
    }
    fs::write(&ann_path, out).map_err(|e| Error::io(&ann_path, e))?;

    for t in &corpus.tables {
        let path = tables_dir.join(format!("{}.csv", t.table_id));
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&path)
            .map_err(|e| malformed(&path, "create", e))?;
        for row in &t.cells {
            w.write_record(row).map_err(|e| malformed(&path, "write", e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub(crate) fn write_json_pretty<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value).expect("value serializes");
    buf.push(b'\n');
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
