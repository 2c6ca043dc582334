//! Loading and validation of response and judgment records.
//!
//! Responses are stored as a dense task × model grid. Each cell keeps the
//! index of the selected option within the task's option list, or
//! [`Answer::Abstain`] when the model produced no usable option label.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Textual marker accepted in place of an option label for abstentions.
pub const ABSTAIN: &str = "ABSTAIN";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing or invalid field `{field}`")]
    Schema { line: usize, field: String },
    #[error("line {line}: {message}")]
    InvalidRecord { line: usize, message: String },
    #[error("duplicate record for task `{task}` and model `{model}`")]
    DuplicateRecord { task: String, model: String },
    #[error("incomplete grid: task `{task}` has no record for model `{model}`")]
    IncompleteGrid { task: String, model: String },
    #[error("task `{task}`: options or correct option disagree across records")]
    InconsistentTask { task: String },
    #[error("duplicate judgment for judge `{judge}`, model `{model}`, task `{task}`")]
    DuplicateJudgment {
        judge: String,
        model: String,
        task: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// Guess the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

/// A model's answer on one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Answer {
    /// Index into the task's option list.
    Option(usize),
    Abstain,
}

/// One raw response record as it appears in an input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub task_id: String,
    #[serde(rename = "model")]
    pub model_id: String,
    pub options: Vec<String>,
    #[serde(rename = "correct")]
    pub correct_option: String,
    /// `None` marks an abstention.
    #[serde(rename = "selected")]
    pub selected_option: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskMeta {
    pub id: String,
    pub options: Vec<String>,
    pub correct: usize,
}

impl TaskMeta {
    pub fn n_options(&self) -> usize {
        self.options.len()
    }
}

/// Complete task × model response grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseDataset {
    models: Vec<String>,
    tasks: Vec<TaskMeta>,
    // row-major: cells[t * n_models + m]
    cells: Vec<Answer>,
}

impl ResponseDataset {
    /// Build a dataset from records, enforcing every grid invariant.
    ///
    /// Models and tasks are indexed by first appearance.
    pub fn from_records<I>(records: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = (usize, ResponseRecord)>,
    {
        let mut models: Vec<String> = Vec::new();
        let mut model_index: HashMap<String, usize> = HashMap::new();
        let mut tasks: Vec<TaskMeta> = Vec::new();
        let mut task_index: HashMap<String, usize> = HashMap::new();
        let mut entries: HashMap<(usize, usize), Answer> = HashMap::new();

        for (line, rec) in records {
            let correct = rec
                .options
                .iter()
                .position(|o| *o == rec.correct_option)
                .ok_or_else(|| IngestError::InvalidRecord {
                    line,
                    message: format!(
                        "correct option `{}` is not among the options",
                        rec.correct_option
                    ),
                })?;
            let answer = match rec.selected_option.as_deref() {
                None => Answer::Abstain,
                Some(s) => match rec.options.iter().position(|o| o == s) {
                    Some(k) => Answer::Option(k),
                    None if s == ABSTAIN => Answer::Abstain,
                    None => {
                        return Err(IngestError::InvalidRecord {
                            line,
                            message: format!("selected option `{s}` is not among the options"),
                        })
                    }
                },
            };

            let t = match task_index.get(&rec.task_id) {
                Some(&t) => {
                    let meta = &tasks[t];
                    if meta.options != rec.options || meta.correct != correct {
                        return Err(IngestError::InconsistentTask { task: rec.task_id });
                    }
                    t
                }
                None => {
                    let t = tasks.len();
                    task_index.insert(rec.task_id.clone(), t);
                    tasks.push(TaskMeta {
                        id: rec.task_id.clone(),
                        options: rec.options.clone(),
                        correct,
                    });
                    t
                }
            };
            let m = *model_index.entry(rec.model_id.clone()).or_insert_with(|| {
                models.push(rec.model_id.clone());
                models.len() - 1
            });
            if entries.insert((t, m), answer).is_some() {
                return Err(IngestError::DuplicateRecord {
                    task: rec.task_id,
                    model: rec.model_id,
                });
            }
        }

        let n_models = models.len();
        let mut cells = Vec::with_capacity(tasks.len() * n_models);
        for (t, task) in tasks.iter().enumerate() {
            for (m, model) in models.iter().enumerate() {
                match entries.get(&(t, m)) {
                    Some(&a) => cells.push(a),
                    None => {
                        return Err(IngestError::IncompleteGrid {
                            task: task.id.clone(),
                            model: model.clone(),
                        })
                    }
                }
            }
        }
        Ok(ResponseDataset {
            models,
            tasks,
            cells,
        })
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn tasks(&self) -> &[TaskMeta] {
        &self.tasks
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn model_index(&self, id: &str) -> Option<usize> {
        self.models.iter().position(|m| m == id)
    }

    pub fn answer(&self, task: usize, model: usize) -> Answer {
        self.cells[task * self.models.len() + model]
    }

    /// Error indicator: true unless the model selected the correct option.
    pub fn failed(&self, task: usize, model: usize) -> bool {
        self.answer(task, model) != Answer::Option(self.tasks[task].correct)
    }

    /// The distractor a failing model picked; `None` when correct or abstaining.
    pub fn distractor(&self, task: usize, model: usize) -> Option<usize> {
        match self.answer(task, model) {
            Answer::Option(k) if k != self.tasks[task].correct => Some(k),
            _ => None,
        }
    }

    /// Error indicators of one model across all tasks.
    pub fn failures(&self, model: usize) -> Vec<bool> {
        (0..self.n_tasks()).map(|t| self.failed(t, model)).collect()
    }

    pub fn records(&self) -> impl Iterator<Item = ResponseRecord> + '_ {
        self.tasks.iter().enumerate().flat_map(move |(t, task)| {
            self.models
                .iter()
                .enumerate()
                .map(move |(m, model)| ResponseRecord {
                    task_id: task.id.clone(),
                    model_id: model.clone(),
                    options: task.options.clone(),
                    correct_option: task.options[task.correct].clone(),
                    selected_option: match self.answer(t, m) {
                        Answer::Option(k) => Some(task.options[k].clone()),
                        Answer::Abstain => None,
                    },
                })
        })
    }

    /// Write the dataset as JSONL, one record per line, task-major.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in self.records() {
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)
            .map_err(|e| IngestError::Io(e.into()))?;
        for rec in self.records() {
            let selected = rec.selected_option.unwrap_or_default();
            w.write_record([
                rec.task_id.as_str(),
                rec.model_id.as_str(),
                rec.correct_option.as_str(),
                selected.as_str(),
                rec.options.join("|").as_str(),
            ])
            .map_err(|e| IngestError::Io(e.into()))?;
        }
        w.flush()?;
        Ok(())
    }
}

const CSV_HEADER: [&str; 5] = ["task_id", "model", "correct", "selected", "options"];

/// Load and validate a response file.
pub fn load_responses(path: &Path, format: Format) -> Result<ResponseDataset, IngestError> {
    let file = File::open(path)?;
    match format {
        Format::Jsonl => read_responses_jsonl(BufReader::new(file)),
        Format::Csv => read_responses_csv(file),
    }
}

pub fn read_responses_jsonl<R: BufRead>(reader: R) -> Result<ResponseDataset, IngestError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push((line_no, parse_response_line(&line, line_no)?));
    }
    ResponseDataset::from_records(records)
}

fn parse_response_line(line: &str, line_no: usize) -> Result<ResponseRecord, IngestError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| IngestError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
    let obj = value.as_object().ok_or_else(|| IngestError::Parse {
        line: line_no,
        message: "expected a JSON object".into(),
    })?;
    let string_field = |name: &str| -> Result<String, IngestError> {
        obj.get(name)
            .and_then(|v| v.as_str())
            .map(str::to_owned)
            .ok_or_else(|| IngestError::Schema {
                line: line_no,
                field: name.into(),
            })
    };
    let options = obj
        .get("options")
        .and_then(|v| v.as_array())
        .and_then(|arr| {
            arr.iter()
                .map(|o| o.as_str().map(str::to_owned))
                .collect::<Option<Vec<_>>>()
        })
        .ok_or_else(|| IngestError::Schema {
            line: line_no,
            field: "options".into(),
        })?;
    let selected_option = match obj.get("selected") {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        Some(_) => {
            return Err(IngestError::Schema {
                line: line_no,
                field: "selected".into(),
            })
        }
    };
    Ok(ResponseRecord {
        task_id: string_field("task_id")?,
        model_id: string_field("model")?,
        options,
        correct_option: string_field("correct")?,
        selected_option,
    })
}

pub fn read_responses_csv<R: Read>(reader: R) -> Result<ResponseDataset, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut columns = [0usize; 5];
    for (slot, name) in columns.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| IngestError::Schema {
                line: 1,
                field: name.into(),
            })?;
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line_no = i + 2;
        let row = row.map_err(|e| IngestError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let field = |c: usize, name: &str| -> Result<&str, IngestError> {
            row.get(columns[c]).ok_or_else(|| IngestError::Schema {
                line: line_no,
                field: name.into(),
            })
        };
        let selected = field(3, "selected")?;
        records.push((
            line_no,
            ResponseRecord {
                task_id: field(0, "task_id")?.to_owned(),
                model_id: field(1, "model")?.to_owned(),
                correct_option: field(2, "correct")?.to_owned(),
                selected_option: (!selected.is_empty()).then(|| selected.to_owned()),
                options: field(4, "options")?.split('|').map(str::to_owned).collect(),
            },
        ));
    }
    ResponseDataset::from_records(records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskIssue {
    pub task_id: String,
    pub issue: String,
}

/// Summary of a dataset's shape and any invariant violations found.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n_models: usize,
    pub n_tasks: usize,
    pub options_per_task: Vec<usize>,
    pub failures_per_model: Vec<usize>,
    pub abstain_count: usize,
    pub issues: Vec<TaskIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

pub fn validate_dataset(ds: &ResponseDataset) -> ValidationReport {
    let mut issues = Vec::new();
    for task in ds.tasks() {
        if task.n_options() < 2 {
            issues.push(TaskIssue {
                task_id: task.id.clone(),
                issue: "K < 2".into(),
            });
        }
    }
    let failures_per_model = (0..ds.n_models())
        .map(|m| (0..ds.n_tasks()).filter(|&t| ds.failed(t, m)).count())
        .collect();
    let abstain_count = ds.cells.iter().filter(|&&a| a == Answer::Abstain).count();
    ValidationReport {
        n_models: ds.n_models(),
        n_tasks: ds.n_tasks(),
        options_per_task: ds.tasks().iter().map(TaskMeta::n_options).collect(),
        failures_per_model,
        abstain_count,
        issues,
    }
}

/// A judge's verdict on one model's answer to one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub task_id: String,
    #[serde(rename = "judge")]
    pub judge_id: String,
    #[serde(rename = "model")]
    pub model_id: String,
    /// 1 = judged correct.
    pub verdict: u8,
    /// 1 = actually correct.
    pub truth: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_quality: Option<u8>,
}

impl JudgmentRecord {
    pub fn endorsed(&self) -> bool {
        self.verdict == 1
    }

    pub fn correct(&self) -> bool {
        self.truth == 1
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JudgmentDataset {
    records: Vec<JudgmentRecord>,
    index: BTreeMap<(String, String, String), usize>,
}

impl JudgmentDataset {
    pub fn from_records<I>(records: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = (usize, JudgmentRecord)>,
    {
        let mut ds = JudgmentDataset::default();
        for (line, rec) in records {
            if rec.verdict > 1 {
                return Err(IngestError::InvalidRecord {
                    line,
                    message: format!("verdict must be 0 or 1, got {}", rec.verdict),
                });
            }
            if rec.truth > 1 {
                return Err(IngestError::InvalidRecord {
                    line,
                    message: format!("truth must be 0 or 1, got {}", rec.truth),
                });
            }
            if let Some(q) = rec.reasoning_quality {
                if q > 5 {
                    return Err(IngestError::InvalidRecord {
                        line,
                        message: format!("reasoning_quality must be in 0..=5, got {q}"),
                    });
                }
            }
            let key = (rec.judge_id.clone(), rec.model_id.clone(), rec.task_id.clone());
            if ds.index.contains_key(&key) {
                return Err(IngestError::DuplicateJudgment {
                    judge: key.0,
                    model: key.1,
                    task: key.2,
                });
            }
            ds.index.insert(key, ds.records.len());
            ds.records.push(rec);
        }
        Ok(ds)
    }

    pub fn records(&self) -> &[JudgmentRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn get(&self, judge: &str, model: &str, task: &str) -> Option<&JudgmentRecord> {
        self.index
            .get(&(judge.to_owned(), model.to_owned(), task.to_owned()))
            .map(|&i| &self.records[i])
    }

    /// Judge ids in order of first appearance.
    pub fn judges(&self) -> Vec<String> {
        first_appearance(self.records.iter().map(|r| &r.judge_id))
    }

    /// Answering-model ids in order of first appearance.
    pub fn models(&self) -> Vec<String> {
        first_appearance(self.records.iter().map(|r| &r.model_id))
    }

    pub fn tasks(&self) -> Vec<String> {
        first_appearance(self.records.iter().map(|r| &r.task_id))
    }

    /// Keep only the records whose task satisfies `keep`.
    pub fn filter_tasks<F: Fn(&str) -> bool>(&self, keep: F) -> JudgmentDataset {
        let kept = self
            .records
            .iter()
            .filter(|r| keep(&r.task_id))
            .cloned()
            .enumerate();
        JudgmentDataset::from_records(kept).expect("subset of a valid dataset is valid")
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn first_appearance<'a>(ids: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    ids.filter(|id| seen.insert(id.as_str()))
        .cloned()
        .collect()
}

pub fn load_judgments(path: &Path) -> Result<JudgmentDataset, IngestError> {
    read_judgments_jsonl(BufReader::new(File::open(path)?))
}

pub fn read_judgments_jsonl<R: BufRead>(reader: R) -> Result<JudgmentDataset, IngestError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| IngestError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        for field in ["task_id", "judge", "model", "verdict", "truth"] {
            if value.get(field).is_none() {
                return Err(IngestError::Schema {
                    line: line_no,
                    field: field.into(),
                });
            }
        }
        let rec: JudgmentRecord =
            serde_json::from_value(value).map_err(|e| IngestError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        records.push((line_no, rec));
    }
    JudgmentDataset::from_records(records)
}
