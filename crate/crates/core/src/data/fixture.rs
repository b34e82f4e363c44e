//! Synthetic fixture generator.
//!
//! Produces datasets whose correct answer is, by construction, a function
//! of exactly one feature family: a hidden linear map applied to the mean
//! attribute embedding (attribute-signal mode) or to the mean visual
//! feature (visual-signal mode). Every other feature family is drawn
//! independently of the label, so a model can only solve the held-out
//! split through the signal-carrying family. That separation is what the
//! component-toggle comparisons measure.
//!
//! Generation is bit-deterministic in the seed. The label map depends on
//! the seed alone (not the split), so train and val splits of the same
//! seed share one labeling function.

use std::path::Path;

use super::container::ContainerWriter;
use super::manifest::{DatasetManifest, RecordEntry, Split};
use super::vocab::AnswerVocabulary;
use crate::error::{Error, Result};
use crate::rng::{fnv1a64, mix, SplitMix64};
use crate::tensor::Tensor;

/// Question types cycled through the fixture, mirroring the usual
/// per-type report columns.
pub const QUESTION_TYPES: [&str; 3] = ["yes/no", "number", "other"];

const ANSWER_WORDS: [&str; 24] = [
    "yes", "no", "red", "blue", "green", "white", "black", "one", "two", "three", "four",
    "dog", "cat", "table", "kitchen", "street", "man", "woman", "left", "right", "wood",
    "plastic", "small", "large",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub n_samples: usize,
    /// Visual objects per sample (M).
    pub m_objects: usize,
    /// Attribute embeddings per sample (L).
    pub l_attributes: usize,
    pub d_v: usize,
    pub d_e: usize,
    pub d_t: usize,
    /// Question / caption / knowledge token counts.
    pub n_t: usize,
    pub n_c: usize,
    pub n_p: usize,
    pub vocab_size: usize,
    /// Knowledge stream slots to emit per sample.
    pub knowledge_streams: Vec<String>,
    /// true: label is a function of attribute embeddings only;
    /// false: label is a function of visual features only.
    pub attribute_signal: bool,
    /// Minimum top-1 vs top-2 score gap under the hidden map. The
    /// signal-carrying features are redrawn until the gap holds, which
    /// keeps labels stable under small perturbations of the feature mean.
    /// 0 disables rejection.
    pub min_margin: f64,
    pub seed: u64,
    pub split: Split,
}

impl FixtureConfig {
    /// Desk-scale defaults matching the reference training configuration.
    pub fn desk(n_samples: usize, attribute_signal: bool, seed: u64, split: Split) -> Self {
        FixtureConfig {
            n_samples,
            m_objects: 6,
            l_attributes: 8,
            d_v: 32,
            d_e: 32,
            d_t: 32,
            n_t: 6,
            n_c: 3,
            n_p: 4,
            vocab_size: 10,
            knowledge_streams: vec!["synthetic".to_string()],
            attribute_signal,
            min_margin: 1.0,
            seed,
            split,
        }
    }

    /// Tiny configuration for gradient checking: every attention site has
    /// at least two tokens so no softmax is pinned at a constant.
    pub fn grad_check(seed: u64) -> Self {
        FixtureConfig {
            n_samples: 2,
            m_objects: 2,
            l_attributes: 2,
            d_v: 8,
            d_e: 8,
            d_t: 8,
            n_t: 2,
            n_c: 2,
            n_p: 2,
            vocab_size: 4,
            knowledge_streams: vec!["synthetic".to_string()],
            attribute_signal: true,
            min_margin: 0.0,
            seed,
            split: Split::Train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n_samples,
            self.m_objects,
            self.l_attributes,
            self.d_v,
            self.d_e,
            self.d_t,
            self.n_t,
            self.n_c,
            self.n_p,
        ];
        if dims.contains(&0) {
            return Err(Error::Precondition(
                "all fixture dimensions must be at least 1".into(),
            ));
        }
        if self.vocab_size < 2 {
            return Err(Error::Precondition(
                "fixture vocabulary needs at least 2 answers".into(),
            ));
        }
        if self.knowledge_streams.is_empty() {
            return Err(Error::Precondition(
                "fixture needs at least one knowledge stream".into(),
            ));
        }
        if !self.min_margin.is_finite() || self.min_margin < 0.0 {
            return Err(Error::Precondition(format!(
                "min_margin must be finite and non-negative, got {}",
                self.min_margin
            )));
        }
        Ok(())
    }
}

/// The hidden labeling map: vocab_size x d matrix drawn from the fixture
/// seed only. Exposed so tests can re-apply it as an oracle.
pub fn hidden_label_map(seed: u64, vocab_size: usize, d: usize, visual: bool) -> Tensor<f64> {
    let label = if visual { "label-map-visual" } else { "label-map" };
    let mut rng = SplitMix64::new(mix(seed, fnv1a64(label.as_bytes())));
    let data: Vec<f64> = (0..vocab_size * d).map(|_| rng.normal()).collect();
    Tensor::new(vec![vocab_size, d], data).expect("shape consistent")
}

/// Apply the hidden map to a mean feature row: the label index.
pub fn label_for(map: &Tensor<f64>, mean_feature: &Tensor<f64>) -> usize {
    label_and_margin(map, mean_feature).0
}

/// Label index plus the top-1 vs top-2 score gap.
pub fn label_and_margin(map: &Tensor<f64>, mean_feature: &Tensor<f64>) -> (usize, f64) {
    let (vocab, d) = map.dims2().expect("rank 2");
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    let mut second_v = f64::NEG_INFINITY;
    for a in 0..vocab {
        let mut score = 0.0;
        for j in 0..d {
            score += map.at(a, j) * mean_feature.at(0, j);
        }
        if score > best_v {
            second_v = best_v;
            best_v = score;
            best = a;
        } else if score > second_v {
            second_v = score;
        }
    }
    (best, best_v - second_v)
}

/// One generated sample before serialization.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub id: String,
    pub question_type: String,
    pub visual: Tensor<f64>,
    pub question: Tensor<f64>,
    pub attributes: Tensor<f64>,
    pub captions: Tensor<f64>,
    pub knowledge: Vec<(String, Tensor<f64>)>,
    pub answer_index: usize,
}

fn normal_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> Tensor<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
    Tensor::new(vec![rows, cols], data).expect("shape consistent")
}

/// Deterministically generate the sample set for a config.
pub fn synth_samples(cfg: &FixtureConfig) -> Result<Vec<SyntheticSample>> {
    cfg.validate()?;
    let map = hidden_label_map(
        cfg.seed,
        cfg.vocab_size,
        if cfg.attribute_signal { cfg.d_e } else { cfg.d_v },
        !cfg.attribute_signal,
    );
    let stream_seed = mix(cfg.seed, fnv1a64(cfg.split.name().as_bytes()));
    let mut rng = SplitMix64::new(mix(stream_seed, fnv1a64(b"features")));

    let mut samples = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let mut visual = normal_matrix(&mut rng, cfg.m_objects, cfg.d_v);
        let question = normal_matrix(&mut rng, cfg.n_t, cfg.d_t);
        let mut attributes = normal_matrix(&mut rng, cfg.l_attributes, cfg.d_e);
        let captions = normal_matrix(&mut rng, cfg.n_c, cfg.d_t);
        let knowledge: Vec<(String, Tensor<f64>)> = cfg
            .knowledge_streams
            .iter()
            .map(|s| (s.clone(), normal_matrix(&mut rng, cfg.n_p, cfg.d_t)))
            .collect();

        // Stratified rejection: cycle the intended answer and redraw the
        // signal-carrying tensor until the hidden map produces it with the
        // required margin. Labels stay balanced and remain exactly
        // argmax(map · mean(signal features)).
        let intended = i % cfg.vocab_size;
        let mut attempts = 0usize;
        let answer_index = loop {
            let signal_mean = if cfg.attribute_signal {
                attributes.mean_rows()?
            } else {
                visual.mean_rows()?
            };
            let (label, margin) = label_and_margin(&map, &signal_mean);
            if label == intended && margin >= cfg.min_margin {
                break label;
            }
            attempts += 1;
            if attempts > 200_000 {
                return Err(Error::Precondition(format!(
                    "could not draw answer {intended} at margin {} after {attempts} attempts",
                    cfg.min_margin
                )));
            }
            if cfg.attribute_signal {
                attributes = normal_matrix(&mut rng, cfg.l_attributes, cfg.d_e);
            } else {
                visual = normal_matrix(&mut rng, cfg.m_objects, cfg.d_v);
            }
        };

        samples.push(SyntheticSample {
            id: format!("{}-{:05}", cfg.split.name(), i),
            question_type: QUESTION_TYPES[i % QUESTION_TYPES.len()].to_string(),
            visual,
            question,
            attributes,
            captions,
            knowledge,
            answer_index,
        });
    }
    Ok(samples)
}

/// Answer strings for a fixture vocabulary.
pub fn fixture_vocabulary(vocab_size: usize) -> Result<AnswerVocabulary> {
    let answers: Vec<String> = (0..vocab_size)
        .map(|i| {
            ANSWER_WORDS
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("answer_{i}"))
        })
        .collect();
    AnswerVocabulary::new(answers)
}

/// Write a fixture to `out_dir` as `<split>.manifest`, `<split>.tc` and a
/// shared `vocab.txt`. Returns the loaded-back manifest.
pub fn generate_synthetic_fixture(
    cfg: &FixtureConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let samples = synth_samples(cfg)?;
    let vocab = fixture_vocabulary(cfg.vocab_size)?;
    std::fs::create_dir_all(out_dir)?;
    vocab.save(&out_dir.join("vocab.txt"))?;

    let mut writer = ContainerWriter::new();
    let mut records = Vec::with_capacity(samples.len());
    for s in &samples {
        let base = &s.id;
        writer.insert_tensor(&format!("{base}/visual"), &s.visual)?;
        writer.insert_tensor(&format!("{base}/question"), &s.question)?;
        writer.insert_tensor(&format!("{base}/attributes"), &s.attributes)?;
        writer.insert_tensor(&format!("{base}/captions"), &s.captions)?;
        let mut targets = Tensor::<f64>::zeros(&[cfg.vocab_size]);
        targets.data_mut()[s.answer_index] = 1.0;
        writer.insert_tensor(&format!("{base}/targets"), &targets)?;
        let mut knowledge = std::collections::BTreeMap::new();
        for (stream, t) in &s.knowledge {
            let name = format!("{base}/knowledge/{stream}");
            writer.insert_tensor(&name, t)?;
            knowledge.insert(stream.clone(), name);
        }
        records.push(RecordEntry {
            id: s.id.clone(),
            question_type: s.question_type.clone(),
            visual: format!("{base}/visual"),
            question: format!("{base}/question"),
            attributes: format!("{base}/attributes"),
            captions: format!("{base}/captions"),
            targets: format!("{base}/targets"),
            knowledge,
        });
    }

    let container_name = format!("{}.tc", cfg.split.name());
    writer.write_to(&out_dir.join(&container_name))?;

    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert("source".to_string(), "synthetic".to_string());
    metadata.insert(
        "attribute_signal".to_string(),
        cfg.attribute_signal.to_string(),
    );
    metadata.insert("seed".to_string(), cfg.seed.to_string());

    let manifest = DatasetManifest {
        name: format!("synthetic-{}", if cfg.attribute_signal { "attr" } else { "vis" }),
        split: cfg.split,
        vocabulary_path: out_dir.join("vocab.txt"),
        container_path: out_dir.join(&container_name),
        records,
        question_type_set: {
            let mut t: Vec<String> = QUESTION_TYPES.iter().map(|s| s.to_string()).collect();
            t.sort();
            t
        },
        metadata,
    };
    // Relative paths inside the file keep the directory relocatable.
    let text = manifest
        .to_text()
        .replace(&format!("{}/", out_dir.display()), "");
    let manifest_path = out_dir.join(format!("{}.manifest", cfg.split.name()));
    std::fs::write(&manifest_path, text)?;

    super::manifest::load_manifest(&manifest_path)
}

/// Reference statistics of the datasets this pipeline stands in for
/// (QA pair count, image count). Display-only.
pub const DATASET_STATS: [(&str, &str, &str); 6] = [
    ("COCO-QA", "118K", "123K"),
    ("TDIUC", "1.6M", "167K"),
    ("VQA-CPv1", "370K", "205K"),
    ("VQA-CPv2", "603K", "219K"),
    ("VQAv2", "1.1M", "204K"),
    ("VQAvs", "658K", "877K"),
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::Dataset;

    #[test]
    fn identical_seeds_give_byte_identical_containers() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let cfg = FixtureConfig::desk(5, true, 7, Split::Train);
        generate_synthetic_fixture(&cfg, dir1.path()).unwrap();
        generate_synthetic_fixture(&cfg, dir2.path()).unwrap();
        let a = std::fs::read(dir1.path().join("train.tc")).unwrap();
        let b = std::fs::read(dir2.path().join("train.tc")).unwrap();
        assert_eq!(a, b);
        let ma = std::fs::read(dir1.path().join("train.manifest")).unwrap();
        let mb = std::fs::read(dir2.path().join("train.manifest")).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn different_seeds_differ() {
        let a = synth_samples(&FixtureConfig::desk(3, true, 1, Split::Train)).unwrap();
        let b = synth_samples(&FixtureConfig::desk(3, true, 2, Split::Train)).unwrap();
        assert_ne!(a[0].visual, b[0].visual);
    }

    #[test]
    fn three_record_fixture_loads_with_three_records() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = FixtureConfig::desk(3, true, 11, Split::Train);
        let manifest = generate_synthetic_fixture(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.len(), 3);
        let ds = Dataset::open(&dir.path().join("train.manifest")).unwrap();
        assert_eq!(ds.len(), 3);
        let s = ds
            .sample::<f64>(0, &["synthetic".to_string()])
            .unwrap();
        assert_eq!(s.visual.shape(), &[6, 32]);
        assert_eq!(s.attributes.shape(), &[8, 32]);
        assert_eq!(s.targets.len(), 10);
    }

    #[test]
    fn attribute_oracle_is_perfect_and_visual_oracle_is_chance() {
        // d_v == d_e so the same hidden map can score both families.
        let cfg = FixtureConfig {
            n_samples: 1000,
            ..FixtureConfig::desk(1000, true, 3, Split::Train)
        };
        let samples = synth_samples(&cfg).unwrap();
        let map = hidden_label_map(cfg.seed, cfg.vocab_size, cfg.d_e, false);

        let mut attr_hits = 0usize;
        let mut vis_hits = 0usize;
        for s in &samples {
            let attr_mean = s.attributes.mean_rows().unwrap();
            if label_for(&map, &attr_mean) == s.answer_index {
                attr_hits += 1;
            }
            let vis_mean = s.visual.mean_rows().unwrap();
            if label_for(&map, &vis_mean) == s.answer_index {
                vis_hits += 1;
            }
        }
        assert_eq!(attr_hits, cfg.n_samples);
        let vis_acc = vis_hits as f64 / cfg.n_samples as f64;
        assert!(
            vis_acc <= 1.0 / cfg.vocab_size as f64 + 0.05,
            "visual oracle accuracy {vis_acc}"
        );
    }

    #[test]
    fn train_and_val_share_the_label_map() {
        let train = FixtureConfig::desk(4, true, 9, Split::Train);
        let val = FixtureConfig {
            split: Split::Val,
            ..train.clone()
        };
        let a = synth_samples(&train).unwrap();
        let b = synth_samples(&val).unwrap();
        // Different features...
        assert_ne!(a[0].visual, b[0].visual);
        // ...but both label functions agree with the shared hidden map.
        let map = hidden_label_map(9, 10, 32, false);
        for s in a.iter().chain(b.iter()) {
            assert_eq!(
                label_for(&map, &s.attributes.mean_rows().unwrap()),
                s.answer_index
            );
        }
    }

    #[test]
    fn visual_signal_mode_labels_follow_visual_features() {
        let cfg = FixtureConfig::desk(20, false, 5, Split::Train);
        let samples = synth_samples(&cfg).unwrap();
        let map = hidden_label_map(5, 10, 32, true);
        for s in &samples {
            assert_eq!(
                label_for(&map, &s.visual.mean_rows().unwrap()),
                s.answer_index
            );
        }
    }

    #[test]
    fn degenerate_configs_rejected() {
        let mut cfg = FixtureConfig::desk(2, true, 0, Split::Train);
        cfg.vocab_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg2 = FixtureConfig::desk(2, true, 0, Split::Train);
        cfg2.m_objects = 0;
        assert!(cfg2.validate().is_err());
    }

    #[test]
    fn dataset_stats_cover_six_sources() {
        assert_eq!(DATASET_STATS.len(), 6);
        let coco = DATASET_STATS.iter().find(|(n, _, _)| *n == "COCO-QA").unwrap();
        assert_eq!(coco.1, "118K");
        assert_eq!(coco.2, "123K");
    }
}
