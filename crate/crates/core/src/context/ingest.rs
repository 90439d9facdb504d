//! Line-delimited dataset ingestion and signal taxonomies.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::render::{render_generation, render_selection};
use super::{contains_marker_literal, ContextError, TaskInstance, UserContext};

/// Task description for the movie selection dataset.
pub const SELECTION_TASK: &str =
    "Based on the user's profile and viewing history, predict which movie the user will watch next.";

/// Task description for the title generation dataset.
pub const GENERATION_TASK: &str =
    "Based on the author's previous papers, generate a personalized title for the author's new paper.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Selection,
    Generation,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Selection => "selection",
            DatasetKind::Generation => "generation",
        }
    }

    pub fn fields(&self) -> &'static [&'static str] {
        match self {
            DatasetKind::Selection => &[
                "basic_info",
                "title",
                "year",
                "genres",
                "summary",
                "rating",
                "rating_time",
            ],
            DatasetKind::Generation => &["title", "abstract", "date"],
        }
    }

    pub fn task_description(&self) -> &'static str {
        match self {
            DatasetKind::Selection => SELECTION_TASK,
            DatasetKind::Generation => GENERATION_TASK,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "selection" => Ok(DatasetKind::Selection),
            "generation" => Ok(DatasetKind::Generation),
            other => Err(format!("unknown dataset kind `{other}`")),
        }
    }
}

/// Field name → signal label map for one dataset shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalTaxonomy {
    kind: DatasetKind,
    labels: BTreeMap<String, String>,
}

fn valid_label(label: &str) -> bool {
    let mut chars = label.chars();
    chars.next().is_some_and(|c| c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl SignalTaxonomy {
    pub fn default_for(kind: DatasetKind) -> Self {
        let pairs: &[(&str, &str)] = match kind {
            DatasetKind::Selection => &[
                ("basic_info", "basic_info"),
                ("title", "title"),
                ("year", "year"),
                ("genres", "genre"),
                ("summary", "summary"),
                ("rating", "rating"),
                ("rating_time", "rating_time"),
            ],
            DatasetKind::Generation => {
                &[("title", "title"), ("abstract", "abstract"), ("date", "date")]
            }
        };
        Self {
            kind,
            labels: pairs
                .iter()
                .map(|(f, l)| (f.to_string(), l.to_string()))
                .collect(),
        }
    }

    pub fn from_map(
        kind: DatasetKind,
        labels: BTreeMap<String, String>,
    ) -> Result<Self, ContextError> {
        for (field, label) in &labels {
            if !kind.fields().contains(&field.as_str()) {
                return Err(ContextError::UnknownField(field.clone()));
            }
            if !valid_label(label) {
                return Err(ContextError::UnknownSignalLabel(label.clone()));
            }
        }
        for field in kind.fields() {
            if !labels.contains_key(*field) {
                return Err(ContextError::MissingField(field.to_string()));
            }
        }
        Ok(Self { kind, labels })
    }

    /// Loads a `{field_name: signal_label}` JSON manifest.
    pub fn from_json_file(kind: DatasetKind, path: &Path) -> Result<Self, ContextError> {
        let text = fs::read_to_string(path).map_err(|e| ContextError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let labels: BTreeMap<String, String> =
            serde_json::from_str(&text).map_err(|e| ContextError::Record {
                line: e.line(),
                message: e.to_string(),
            })?;
        Self::from_map(kind, labels)
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    /// Label for a schema field. Fields are validated at construction, so an
    /// unknown field here is a programming error.
    pub fn label(&self, field: &str) -> &str {
        self.labels
            .get(field)
            .unwrap_or_else(|| panic!("field `{field}` is not part of the {} schema", self.kind))
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.labels.values().map(String::as_str)
    }
}

/// A value that may arrive as a JSON number or a string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Scalar {
    pub fn as_text(&self) -> String {
        match self {
            Scalar::Int(i) => i.to_string(),
            Scalar::Float(f) => f.to_string(),
            Scalar::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UserRecordId {
    Int(i64),
    Text(String),
}

impl fmt::Display for UserRecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UserRecordId::Int(i) => write!(f, "{i}"),
            UserRecordId::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicInfo {
    pub age: Scalar,
    pub gender: String,
    pub occupation: String,
}

/// Genres as a list or a `|`-separated string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Genres {
    List(Vec<String>),
    Piped(String),
}

impl Genres {
    pub fn joined(&self) -> String {
        let parts: Vec<&str> = match self {
            Genres::List(v) => v.iter().map(|s| s.trim()).collect(),
            Genres::Piped(s) => s.split('|').map(str::trim).collect(),
        };
        parts
            .into_iter()
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Rating time as a unix timestamp or a `YYYY-MM-DD HH:MM:SS` string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RatingTime {
    Unix(i64),
    Text(String),
}

impl RatingTime {
    /// Renders as `YYYY-MM-DD at HH:MM:SS`.
    pub fn as_text(&self) -> String {
        match self {
            RatingTime::Unix(ts) => match chrono::DateTime::from_timestamp(*ts, 0) {
                Some(dt) => dt.format("%Y-%m-%d at %H:%M:%S").to_string(),
                None => ts.to_string(),
            },
            RatingTime::Text(s) => {
                let s = s.trim();
                if s.contains(" at ") {
                    return s.to_string();
                }
                match s.split_once([' ', 'T']) {
                    Some((date, time)) => format!("{date} at {time}"),
                    None => s.to_string(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub title: String,
    pub year: Scalar,
    pub genres: Genres,
    pub summary: String,
    pub rating: f64,
    pub rating_time: RatingTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub user_id: UserRecordId,
    pub basic_info: BasicInfo,
    pub interactions: Vec<Interaction>,
    pub candidates: Vec<String>,
    pub gold_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paper {
    pub title: String,
    pub r#abstract: String,
    pub date: Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub user_id: UserRecordId,
    pub papers: Vec<Paper>,
    pub query_abstract: String,
    #[serde(default)]
    pub gold_title: Option<String>,
}

/// An ingested dataset: contexts paired with their task instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub items: Vec<(UserContext, TaskInstance)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn record_err(line: usize, message: impl Into<String>) -> ContextError {
    ContextError::Record {
        line,
        message: message.into(),
    }
}

/// Renders one selection record. `line` is used for error reporting only.
pub fn parse_selection_record(
    rec: &SelectionRecord,
    taxonomy: &SignalTaxonomy,
    line: usize,
) -> Result<(UserContext, TaskInstance), ContextError> {
    if rec.interactions.is_empty() {
        return Err(record_err(line, ContextError::NoSentences.to_string()));
    }
    let task = TaskInstance::selection(rec.candidates.clone(), rec.gold_index)
        .map_err(|m| record_err(line, m))?;
    let sentences = render_selection(rec, taxonomy);
    build_context(rec.user_id.to_string(), sentences, SELECTION_TASK, line).map(|c| (c, task))
}

pub fn parse_generation_record(
    rec: &GenerationRecord,
    taxonomy: &SignalTaxonomy,
    line: usize,
) -> Result<(UserContext, TaskInstance), ContextError> {
    if rec.papers.is_empty() {
        return Err(record_err(line, ContextError::NoSentences.to_string()));
    }
    let gold = rec.gold_title.clone().unwrap_or_default();
    let task = TaskInstance::generation(rec.query_abstract.clone(), gold)
        .map_err(|m| record_err(line, m))?;
    let sentences = render_generation(rec, taxonomy);
    build_context(rec.user_id.to_string(), sentences, GENERATION_TASK, line).map(|c| (c, task))
}

fn build_context(
    user_id: String,
    sentences: Vec<(String, String)>,
    task: &str,
    line: usize,
) -> Result<UserContext, ContextError> {
    if sentences.iter().any(|(t, _)| contains_marker_literal(t)) {
        return Err(record_err(line, ContextError::MarkerLiteral.to_string()));
    }
    UserContext::from_sentences(user_id, sentences, task).map_err(|e| record_err(line, e.to_string()))
}

fn read_lines(path: &Path) -> Result<String, ContextError> {
    fs::read_to_string(path).map_err(|e| ContextError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn ingest_with<R, F>(path: &Path, kind: DatasetKind, mut parse: F) -> Result<Dataset, ContextError>
where
    R: for<'de> Deserialize<'de>,
    F: FnMut(&R, usize) -> Result<(UserContext, TaskInstance), ContextError>,
{
    let text = read_lines(path)?;
    let mut items = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: R = serde_json::from_str(raw).map_err(|e| record_err(line, e.to_string()))?;
        items.push(parse(&rec, line)?);
    }
    Ok(Dataset { kind, items })
}

/// Reads a line-delimited selection dataset.
pub fn ingest_selection_dataset(
    path: &Path,
    taxonomy: &SignalTaxonomy,
) -> Result<Dataset, ContextError> {
    ingest_with::<SelectionRecord, _>(path, DatasetKind::Selection, |r, line| {
        parse_selection_record(r, taxonomy, line)
    })
}

/// Reads a line-delimited generation dataset.
pub fn ingest_generation_dataset(
    path: &Path,
    taxonomy: &SignalTaxonomy,
) -> Result<Dataset, ContextError> {
    ingest_with::<GenerationRecord, _>(path, DatasetKind::Generation, |r, line| {
        parse_generation_record(r, taxonomy, line)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taxonomy_rejects_bad_labels_and_fields() {
        let mut m: BTreeMap<String, String> = DatasetKind::Generation
            .fields()
            .iter()
            .map(|f| (f.to_string(), f.to_string()))
            .collect();
        assert!(SignalTaxonomy::from_map(DatasetKind::Generation, m.clone()).is_ok());
        m.insert("date".into(), "Bad Label".into());
        assert_eq!(
            SignalTaxonomy::from_map(DatasetKind::Generation, m.clone()).unwrap_err(),
            ContextError::UnknownSignalLabel("Bad Label".into())
        );
        m.insert("date".into(), "date".into());
        m.insert("venue".into(), "venue".into());
        assert_eq!(
            SignalTaxonomy::from_map(DatasetKind::Generation, m.clone()).unwrap_err(),
            ContextError::UnknownField("venue".into())
        );
        m.remove("venue");
        m.remove("abstract");
        assert_eq!(
            SignalTaxonomy::from_map(DatasetKind::Generation, m).unwrap_err(),
            ContextError::MissingField("abstract".into())
        );
    }

    #[test]
    fn rating_time_forms() {
        assert_eq!(
            RatingTime::Text("2000-12-06 18:21:10".into()).as_text(),
            "2000-12-06 at 18:21:10"
        );
        assert_eq!(
            RatingTime::Text("2000-12-06 at 18:21:10".into()).as_text(),
            "2000-12-06 at 18:21:10"
        );
        // 2000-12-06T18:21:10Z
        assert_eq!(RatingTime::Unix(976126870).as_text(), "2000-12-06 at 18:21:10");
    }

    #[test]
    fn genres_forms() {
        assert_eq!(Genres::Piped("Drama|Sci-Fi".into()).joined(), "Drama, Sci-Fi");
        assert_eq!(
            Genres::List(vec!["Action".into(), "Crime".into()]).joined(),
            "Action, Crime"
        );
    }
}
