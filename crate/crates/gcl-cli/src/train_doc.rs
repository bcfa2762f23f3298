//! Training run configuration file: one TOML or JSON document naming
//! the network, the data source, and the loop settings.

use gcl_core::data::{
    make_white_noise, shuffle_labels, shuffle_pixels, split_examples, make_cd_bd_sets,
};
use gcl_core::experiments::{render_arena, resolve_corpus, DataConfig};
use gcl_core::stimulus::build_triples;
use gcl_core::train::TrainConfig;
use gcl_core::{AugmentationConfig, Dataset, NetConfig, StimulusTask};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainDoc {
    #[serde(default)]
    pub seed: u64,
    pub net: NetConfig,
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSection {
    /// Rendered triangle stimuli labeled for a binary task; triples are
    /// split 75/25 and the validation set is the held-out 25%.
    Stimuli {
        task: StimulusTask,
        #[serde(default)]
        triple_seed: u64,
        #[serde(default)]
        split_seed: u64,
    },
    /// A `root/<class>/*.{png,jpg}` corpus, optionally corrupted. With
    /// no root and no GCL_DATA_DIR the synthetic fallback corpus is
    /// written beside the outputs.
    Natural {
        #[serde(default)]
        root: Option<PathBuf>,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
        #[serde(default)]
        split_seed: u64,
        #[serde(default = "default_true")]
        synthetic_fallback: bool,
        #[serde(default = "default_corpus_seed")]
        corpus_seed: u64,
        #[serde(default)]
        variant: CorpusVariant,
        #[serde(default)]
        variant_seed: u64,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusVariant {
    #[default]
    Natural,
    WhiteNoise,
    ShuffledPixels,
    ShuffledLabels,
}

fn default_classes() -> usize {
    3
}
fn default_per_class() -> usize {
    150
}
fn default_train_fraction() -> f64 {
    0.75
}
fn default_true() -> bool {
    true
}
fn default_corpus_seed() -> u64 {
    7
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub early_stop_at_full_val: bool,
    /// Extra epochs to checkpoint besides the final state; 0 is the
    /// untrained initialization.
    pub checkpoint_epochs: Vec<usize>,
    /// Defaults per data source: off for stimuli, standard
    /// flip/translate/normalize for natural corpora.
    pub augmentation: Option<AugmentationConfig>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 30,
            batch_size: 32,
            lr: 0.001,
            early_stop_at_full_val: false,
            checkpoint_epochs: Vec::new(),
            augmentation: None,
        }
    }
}

impl TrainDoc {
    pub fn from_file(path: &Path) -> gcl_core::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| gcl_core::Error::io(path, e))?;
        let doc: TrainDoc = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| gcl_core::Error::FileFormat {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?,
            _ => serde_json::from_str(&text).map_err(|e| gcl_core::Error::FileFormat {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> gcl_core::Result<()> {
        if self.train.epochs == 0 {
            return Err(gcl_core::Error::Config("train.epochs must be positive".into()));
        }
        if let DataSection::Natural { train_fraction, .. } = &self.data {
            if !(*train_fraction > 0.0 && *train_fraction <= 1.0) {
                return Err(gcl_core::Error::Config(format!(
                    "data.train_fraction {train_fraction} outside (0, 1]"
                )));
            }
        }
        if let Some(aug) = &self.train.augmentation {
            aug.validate()?;
        }
        Ok(())
    }

    /// Materializes the training and validation datasets. White noise
    /// has no meaningful validation split and returns none.
    pub fn resolve_data(&self, scratch: &Path) -> gcl_core::Result<(Dataset, Option<Dataset>)> {
        match &self.data {
            DataSection::Stimuli { task, triple_seed, split_seed } => {
                let arena = render_arena();
                let triples = build_triples(*triple_seed)?;
                let (train, val, _) = make_cd_bd_sets(&arena, &triples, *task, *split_seed)?;
                Ok((train, Some(val)))
            }
            DataSection::Natural {
                root,
                classes,
                per_class,
                train_fraction,
                split_seed,
                synthetic_fallback,
                corpus_seed,
                variant,
                variant_seed,
            } => {
                let dc = DataConfig {
                    root: root.clone(),
                    classes: *classes,
                    per_class: *per_class,
                    synthetic_fallback: *synthetic_fallback,
                    corpus_seed: *corpus_seed,
                };
                if *variant == CorpusVariant::WhiteNoise {
                    let ds = make_white_noise(classes * per_class, *classes as u32, *variant_seed)?;
                    return Ok((ds, None));
                }
                let (base, _, _) = resolve_corpus(&dc, scratch)?;
                let ds = match variant {
                    CorpusVariant::Natural => base,
                    CorpusVariant::ShuffledPixels => shuffle_pixels(&base, *variant_seed)?,
                    CorpusVariant::ShuffledLabels => shuffle_labels(&base, *variant_seed)?,
                    CorpusVariant::WhiteNoise => unreachable!(),
                };
                let (train, val) = split_examples(&ds, *train_fraction, *split_seed)?;
                Ok((train, Some(val)))
            }
        }
    }

    /// Loop settings as a core TrainConfig, with the source-dependent
    /// augmentation default applied.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut tc = TrainConfig::new(self.train.epochs, self.train.lr, seed);
        tc.batch_size = self.train.batch_size;
        tc.early_stop_at_full_val = self.train.early_stop_at_full_val;
        tc.checkpoint_epochs = self.train.checkpoint_epochs.clone();
        tc.augmentation = match (&self.train.augmentation, &self.data) {
            (Some(aug), _) => *aug,
            (None, DataSection::Stimuli { .. }) => AugmentationConfig::off(),
            (None, DataSection::Natural { .. }) => AugmentationConfig::default(),
        };
        tc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_stimuli_doc_parses_with_defaults() {
        let text = r#"
            [net]
            kind = "conv"
            n_layers = 1
            n_classes = 2
            head = "single_sigmoid"
            [data]
            source = "stimuli"
            task = "CD"
        "#;
        let doc: TrainDoc = toml::from_str(text).unwrap();
        assert_eq!(doc.seed, 0);
        assert_eq!(doc.train.epochs, 30);
        let tc = doc.train_config(5);
        assert_eq!(tc.augmentation, AugmentationConfig::off());
        assert_eq!(tc.seed, 5);
    }

    #[test]
    fn natural_doc_defaults_to_standard_augmentation() {
        let text = r#"
            seed = 9
            [net]
            kind = "conv"
            n_layers = 3
            n_classes = 3
            head = "softmax"
            [data]
            source = "natural"
            variant = "shuffled_pixels"
        "#;
        let doc: TrainDoc = toml::from_str(text).unwrap();
        assert_eq!(doc.train_config(9).augmentation, AugmentationConfig::default());
        match doc.data {
            DataSection::Natural { classes, per_class, variant, .. } => {
                assert_eq!((classes, per_class), (3, 150));
                assert_eq!(variant, CorpusVariant::ShuffledPixels);
            }
            _ => panic!("expected natural data section"),
        }
    }

    #[test]
    fn bad_fields_are_rejected() {
        let text = r#"
            [net]
            kind = "conv"
            n_layers = 1
            n_classes = 2
            head = "single_sigmoid"
            [data]
            source = "stimuli"
            task = "CD"
            [train]
            epochs = 0
        "#;
        let doc: TrainDoc = toml::from_str(text).unwrap();
        assert!(doc.validate().is_err());
        let unknown = toml::from_str::<TrainDoc>("nets = 3\n");
        assert!(unknown.is_err());
    }
}
