//! Checkpoints: parameters in the tensor container format plus the config
//! snapshot, epoch index and vocabulary. Save → load → save is
//! byte-identical.

use std::path::Path;

use super::config::TrainConfig;
use crate::data::container::{ContainerReader, ContainerWriter};
use crate::data::AnswerVocabulary;
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::scalar::{Dtype, Scalar};

/// Parameter store at either supported precision.
pub enum AnyStore {
    F32(ParameterStore<f32>),
    F64(ParameterStore<f64>),
}

impl AnyStore {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyStore::F32(_) => Dtype::F32,
            AnyStore::F64(_) => Dtype::F64,
        }
    }
}

pub struct Checkpoint {
    pub store: AnyStore,
    pub config: TrainConfig,
    pub epoch: usize,
    pub vocab: AnswerVocabulary,
}

const PARAMS_FILE: &str = "params.tc";
const CONFIG_FILE: &str = "config.cfg";
const VOCAB_FILE: &str = "vocab.txt";
const STATE_FILE: &str = "state.cfg";

fn store_to_writer<T: Scalar>(store: &ParameterStore<T>) -> Result<ContainerWriter> {
    let mut w = ContainerWriter::new();
    for (name, value) in store.iter_values() {
        w.insert_tensor(name, value)?;
    }
    Ok(w)
}

fn store_from_reader<T: Scalar>(reader: &ContainerReader, seed: u64) -> Result<ParameterStore<T>> {
    let mut store = ParameterStore::new(seed);
    for name in reader.names() {
        store.set_value(name, reader.read_tensor(name)?);
    }
    Ok(store)
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let writer = match &self.store {
            AnyStore::F32(s) => store_to_writer(s)?,
            AnyStore::F64(s) => store_to_writer(s)?,
        };
        writer.write_to(&dir.join(PARAMS_FILE))?;
        std::fs::write(dir.join(CONFIG_FILE), self.config.canonical_string())?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        std::fs::write(
            dir.join(STATE_FILE),
            format!("epoch={}\nconfig_hash={}\n", self.epoch, self.config.hash()),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config = TrainConfig::parse_file(&dir.join(CONFIG_FILE))?;
        let vocab = AnswerVocabulary::load(&dir.join(VOCAB_FILE))?;
        let state = std::fs::read_to_string(dir.join(STATE_FILE))?;
        let mut epoch = None;
        for line in state.lines() {
            if let Some(v) = line.strip_prefix("epoch=") {
                epoch = Some(v.parse::<usize>().map_err(|_| {
                    Error::Format(format!("bad epoch value '{v}' in checkpoint"))
                })?);
            }
        }
        let epoch = epoch.ok_or_else(|| Error::Format("checkpoint missing epoch".into()))?;

        let reader = ContainerReader::open(&dir.join(PARAMS_FILE))?;
        let store = match config.precision {
            Dtype::F32 => AnyStore::F32(store_from_reader(&reader, config.seed)?),
            Dtype::F64 => AnyStore::F64(store_from_reader(&reader, config.seed)?),
        };
        Ok(Checkpoint {
            store,
            config,
            epoch,
            vocab,
        })
    }
}
