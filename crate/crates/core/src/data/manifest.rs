//! Dataset manifest: a line-delimited text file binding sample records to
//! tensors in a container.
//!
//! Tab-separated lines, first field is the line kind:
//!
//! ```text
//! attrfuse-manifest<TAB>v1
//! name<TAB><dataset name>
//! split<TAB><train|val|test>
//! vocab<TAB><relative path>
//! container<TAB><relative path>
//! count<TAB><N>
//! meta<TAB><key><TAB><value>                  (zero or more, display-only)
//! record<TAB><id><TAB><question type><TAB>visual=<t><TAB>question=<t><TAB>attributes=<t><TAB>captions=<t><TAB>targets=<t><TAB>knowledge:<stream>=<t>...
//! ```
//!
//! Loading validates everything eagerly (unique ids, count, referenced
//! tensors present in the container); tensor payloads stay on disk until a
//! sample is requested.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use super::container::ContainerReader;
use super::vocab::AnswerVocabulary;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MANIFEST_MAGIC: &str = "attrfuse-manifest";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Tensor names for one sample, keyed by role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordEntry {
    pub id: String,
    pub question_type: String,
    pub visual: String,
    pub question: String,
    pub attributes: String,
    pub captions: String,
    pub targets: String,
    pub knowledge: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub vocabulary_path: PathBuf,
    pub container_path: PathBuf,
    pub records: Vec<RecordEntry>,
    pub question_type_set: Vec<String>,
    /// Display-only fields (dataset statistics and provenance notes).
    pub metadata: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Serialize in the canonical line format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{MANIFEST_MAGIC}\tv1\n"));
        out.push_str(&format!("name\t{}\n", self.name));
        out.push_str(&format!("split\t{}\n", self.split.name()));
        out.push_str(&format!("vocab\t{}\n", self.vocabulary_path.display()));
        out.push_str(&format!("container\t{}\n", self.container_path.display()));
        out.push_str(&format!("count\t{}\n", self.records.len()));
        for (k, v) in &self.metadata {
            out.push_str(&format!("meta\t{k}\t{v}\n"));
        }
        for r in &self.records {
            out.push_str(&format!(
                "record\t{}\t{}\tvisual={}\tquestion={}\tattributes={}\tcaptions={}\ttargets={}",
                r.id, r.question_type, r.visual, r.question, r.attributes, r.captions, r.targets
            ));
            for (stream, tensor) in &r.knowledge {
                out.push_str(&format!("\tknowledge:{stream}={tensor}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn derive_question_types(records: &[RecordEntry]) -> Vec<String> {
    let set: BTreeSet<&str> = records.iter().map(|r| r.question_type.as_str()).collect();
    set.into_iter().map(str::to_string).collect()
}

fn parse_record(line_no: usize, fields: &[&str]) -> Result<RecordEntry> {
    if fields.len() < 3 {
        return Err(Error::Format(format!(
            "line {line_no}: record needs id and question type"
        )));
    }
    let id = fields[1].to_string();
    let question_type = fields[2].to_string();
    let mut roles: BTreeMap<&str, String> = BTreeMap::new();
    let mut knowledge = BTreeMap::new();
    for f in &fields[3..] {
        let (key, value) = f.split_once('=').ok_or_else(|| {
            Error::Format(format!("line {line_no}: expected role=tensor, got '{f}'"))
        })?;
        if let Some(stream) = key.strip_prefix("knowledge:") {
            if knowledge.insert(stream.to_string(), value.to_string()).is_some() {
                return Err(Error::Format(format!(
                    "line {line_no}: duplicate knowledge stream '{stream}'"
                )));
            }
        } else {
            if roles.insert(key, value.to_string()).is_some() {
                return Err(Error::Format(format!(
                    "line {line_no}: duplicate role '{key}'"
                )));
            }
        }
    }
    let take = |k: &str| -> Result<String> {
        roles
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Format(format!("line {line_no}: record '{id}' missing {k}=")))
    };
    let entry = RecordEntry {
        visual: take("visual")?,
        question: take("question")?,
        attributes: take("attributes")?,
        captions: take("captions")?,
        targets: take("targets")?,
        id,
        question_type,
        knowledge,
    };
    if entry.knowledge.is_empty() {
        return Err(Error::Integrity(format!(
            "sample '{}' has no knowledge stream",
            entry.id
        )));
    }
    Ok(entry)
}

/// Parse and validate a manifest, opening (and checking against) its
/// tensor container.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));

    let mut name = None;
    let mut split = None;
    let mut vocab = None;
    let mut container = None;
    let mut count = None;
    let mut metadata = BTreeMap::new();
    let mut records: Vec<RecordEntry> = Vec::new();

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            MANIFEST_MAGIC => {
                if i != 0 || fields.get(1) != Some(&"v1") {
                    return Err(Error::Format(format!(
                        "line {line_no}: bad manifest header"
                    )));
                }
            }
            "name" => name = Some(fields.get(1).unwrap_or(&"").to_string()),
            "split" => {
                let s = fields.get(1).unwrap_or(&"");
                split = Some(Split::parse(s).ok_or_else(|| {
                    Error::Format(format!("line {line_no}: unknown split '{s}'"))
                })?);
            }
            "vocab" => vocab = Some(PathBuf::from(fields.get(1).unwrap_or(&"").to_string())),
            "container" => {
                container = Some(PathBuf::from(fields.get(1).unwrap_or(&"").to_string()))
            }
            "count" => {
                let c = fields.get(1).unwrap_or(&"");
                count = Some(c.parse::<usize>().map_err(|_| {
                    Error::Format(format!("line {line_no}: bad count '{c}'"))
                })?);
            }
            "meta" => {
                if fields.len() != 3 {
                    return Err(Error::Format(format!("line {line_no}: meta needs key and value")));
                }
                metadata.insert(fields[1].to_string(), fields[2].to_string());
            }
            "record" => records.push(parse_record(line_no, &fields)?),
            other => {
                return Err(Error::Format(format!(
                    "line {line_no}: unknown line kind '{other}'"
                )))
            }
        }
    }

    if text.is_empty() || !text.starts_with(MANIFEST_MAGIC) {
        return Err(Error::Format(format!(
            "{} is not a manifest (bad magic)",
            path.display()
        )));
    }
    let name = name.ok_or_else(|| Error::Format("manifest missing name line".into()))?;
    let split = split.ok_or_else(|| Error::Format("manifest missing split line".into()))?;
    let vocab = vocab.ok_or_else(|| Error::Format("manifest missing vocab line".into()))?;
    let container =
        container.ok_or_else(|| Error::Format("manifest missing container line".into()))?;

    if let Some(c) = count {
        if c != records.len() {
            return Err(Error::Integrity(format!(
                "manifest count {c} but {} records",
                records.len()
            )));
        }
    }

    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(r.id.clone()) {
            return Err(Error::Integrity(format!("duplicate sample id '{}'", r.id)));
        }
    }

    let container_path = dir.join(&container);
    let reader = ContainerReader::open(&container_path)?;
    for r in &records {
        let mut required: Vec<&String> = vec![
            &r.visual,
            &r.question,
            &r.attributes,
            &r.captions,
            &r.targets,
        ];
        required.extend(r.knowledge.values());
        for t in required {
            if !reader.contains(t) {
                return Err(Error::Integrity(format!(
                    "sample '{}' references tensor '{t}' absent from container",
                    r.id
                )));
            }
        }
    }

    let question_type_set = derive_question_types(&records);
    Ok(DatasetManifest {
        name,
        split,
        vocabulary_path: dir.join(vocab),
        container_path,
        records,
        question_type_set,
        metadata,
    })
}

/// All tensors of one sample, materialized at the working precision.
#[derive(Debug, Clone)]
pub struct SampleTensors<T: Scalar> {
    pub id: String,
    pub question_type: String,
    /// M x d_v object features.
    pub visual: Tensor<T>,
    /// n_t x d_t question token features.
    pub question: Tensor<T>,
    /// L x d_e attribute embeddings.
    pub attributes: Tensor<T>,
    /// n_c x d_t caption token features.
    pub captions: Tensor<T>,
    /// Selected knowledge streams concatenated along the sequence axis.
    pub knowledge: Tensor<T>,
    /// |vocab| soft scores in [0, 1].
    pub targets: Tensor<T>,
}

/// A manifest plus the reader and vocabulary needed to serve samples.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub reader: ContainerReader,
    pub vocab: AnswerVocabulary,
}

impl Dataset {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = load_manifest(manifest_path)?;
        let reader = ContainerReader::open(&manifest.container_path)?;
        let vocab = AnswerVocabulary::load(&manifest.vocabulary_path)?;
        Ok(Dataset {
            manifest,
            reader,
            vocab,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    /// Load one sample, selecting and sequence-concatenating the requested
    /// knowledge streams.
    pub fn sample<T: Scalar>(&self, idx: usize, streams: &[String]) -> Result<SampleTensors<T>> {
        let r = self
            .manifest
            .records
            .get(idx)
            .ok_or_else(|| Error::Integrity(format!("sample index {idx} out of range")))?;

        let visual: Tensor<T> = self.reader.read_tensor(&r.visual)?;
        let question: Tensor<T> = self.reader.read_tensor(&r.question)?;
        let attributes: Tensor<T> = self.reader.read_tensor(&r.attributes)?;
        let captions: Tensor<T> = self.reader.read_tensor(&r.captions)?;
        let targets_raw: Tensor<T> = self.reader.read_tensor(&r.targets)?;

        if streams.is_empty() {
            return Err(Error::Config("no knowledge streams selected".into()));
        }
        let mut parts: Vec<Tensor<T>> = Vec::with_capacity(streams.len());
        for s in streams {
            let tensor_name = r.knowledge.get(s).ok_or_else(|| {
                Error::Config(format!(
                    "sample '{}' has no knowledge stream '{s}' (available: {:?})",
                    r.id,
                    r.knowledge.keys().collect::<Vec<_>>()
                ))
            })?;
            parts.push(self.reader.read_tensor(tensor_name)?);
        }
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        let knowledge = Tensor::concat_rows(&refs)?;

        let (m, _) = visual.dims2()?;
        let (l, _) = attributes.dims2()?;
        if m == 0 || l == 0 {
            return Err(Error::Integrity(format!(
                "sample '{}' needs at least one object and one attribute",
                r.id
            )));
        }
        let targets = targets_raw.reshape(vec![1, targets_raw.len()])?;
        if targets.len() != self.vocab.len() {
            return Err(Error::Integrity(format!(
                "sample '{}' targets length {} vs vocabulary {}",
                r.id,
                targets.len(),
                self.vocab.len()
            )));
        }
        if targets
            .data()
            .iter()
            .any(|&t| t < T::zero() || t > T::one())
        {
            return Err(Error::Integrity(format!(
                "sample '{}' targets outside [0, 1]",
                r.id
            )));
        }
        for (label, t) in [
            ("visual", &visual),
            ("question", &question),
            ("attributes", &attributes),
            ("captions", &captions),
            ("knowledge", &knowledge),
        ] {
            if !t.is_finite_all() {
                return Err(Error::NonFinite(format!(
                    "sample '{}' {label} features",
                    r.id
                )));
            }
        }

        Ok(SampleTensors {
            id: r.id.clone(),
            question_type: r.question_type.clone(),
            visual,
            question,
            attributes,
            captions,
            knowledge,
            targets,
        })
    }
}
