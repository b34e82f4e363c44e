//! Answer vocabulary: a bijection between answer strings and score-vector
//! indices, plus the soft-target encoder.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerVocabulary {
    answers: Vec<String>,
    index: HashMap<String, usize>,
}

impl AnswerVocabulary {
    pub fn new(answers: Vec<String>) -> Result<Self> {
        if answers.is_empty() {
            return Err(Error::Config("vocabulary must not be empty".into()));
        }
        let mut index = HashMap::with_capacity(answers.len());
        for (i, a) in answers.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::Config("empty answer string".into()));
            }
            if index.insert(a.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate answer '{a}'")));
            }
        }
        Ok(AnswerVocabulary { answers, index })
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.index.get(answer).copied()
    }

    pub fn answer_at(&self, idx: usize) -> Option<&str> {
        self.answers.get(idx).map(String::as_str)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let answers: Vec<String> = text.lines().map(str::to_string).collect();
        AnswerVocabulary::new(answers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for a in &self.answers {
            out.push_str(a);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Place (answer, score) pairs into a |vocab|-length soft-target vector.
///
/// Unlisted answers score 0. Answers missing from the vocabulary are
/// skipped and counted, never fatal — real annotation files routinely
/// contain out-of-vocabulary strings.
pub fn encode_answer_targets<T: Scalar>(
    answers: &[(String, f64)],
    vocab: &AnswerVocabulary,
) -> Result<(Tensor<T>, usize)> {
    let mut data = vec![T::zero(); vocab.len()];
    let mut skipped = 0usize;
    for (answer, score) in answers {
        if !(0.0..=1.0).contains(score) {
            return Err(Error::Domain(format!(
                "score {score} for '{answer}' outside [0, 1]"
            )));
        }
        match vocab.index_of(answer) {
            Some(i) => data[i] = T::cast(*score),
            None => skipped += 1,
        }
    }
    Ok((Tensor::new(vec![vocab.len()], data)?, skipped))
}
