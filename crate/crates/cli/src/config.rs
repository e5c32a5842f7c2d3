//! Run configuration: one flat `key = value` file holding the model, the
//! training protocol, the dataset and the output directory.

use std::path::{Path, PathBuf};

use dwtsep::data::{self, DatasetSplits, SynthSpec};
use dwtsep::kv::KvMap;
use dwtsep::training::TrainConfig;
use dwtsep::ModelConfig;

use crate::error::{CliError, CliResult};

pub const MANIFEST_KEY: &str = "manifest";
pub const OUTPUT_KEY: &str = "output_dir";
pub const SYNTH_KEYS: [&str; 5] = [
    "synth.num_tracks",
    "synth.duration_samples",
    "synth.sample_rate",
    "synth.seed",
    "synth.validation_tracks",
];

pub fn allowed_keys() -> Vec<&'static str> {
    let mut keys: Vec<&str> = ModelConfig::KEYS.to_vec();
    keys.extend(TrainConfig::KEYS);
    keys.extend(SYNTH_KEYS);
    keys.push(MANIFEST_KEY);
    keys.push(OUTPUT_KEY);
    keys
}

/// Reads a config file and rejects keys no command understands.
pub fn read_kv(path: &Path) -> CliResult<KvMap> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let kv = KvMap::parse(&text)?;
    kv.reject_unknown(&allowed_keys())?;
    Ok(kv)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Manifest(PathBuf),
    /// Generated tracks; the last `validation_tracks` form the validation split.
    Synth {
        spec: SynthSpec,
        validation_tracks: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetSource,
    pub output_dir: PathBuf,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Relative paths resolve against `base_dir`, normally the directory of
    /// the config file.
    pub fn from_kv(kv: &KvMap, base_dir: &Path) -> CliResult<Self> {
        kv.reject_unknown(&allowed_keys())?;
        let model = ModelConfig::from_kv(kv)?;
        let train = TrainConfig::from_kv(kv)?;
        let output_dir = resolve(base_dir, &kv.require::<String>(OUTPUT_KEY)?);

        let has_synth = SYNTH_KEYS.iter().any(|k| kv.contains(k));
        let dataset = match (kv.get(MANIFEST_KEY), has_synth) {
            (Some(_), true) => {
                return Err(CliError::usage(
                    "config sets both `manifest` and `synth.*` keys; choose one dataset",
                ))
            }
            (None, false) => {
                return Err(CliError::usage(
                    "config needs a dataset: set `manifest` or the `synth.*` keys",
                ))
            }
            (Some(m), false) => DatasetSource::Manifest(resolve(base_dir, m)),
            (None, true) => {
                let spec = SynthSpec {
                    num_tracks: kv.get_or("synth.num_tracks", 20)?,
                    duration_samples: kv.get_or("synth.duration_samples", 80_000)?,
                    sample_rate: kv.get_or("synth.sample_rate", 8000)?,
                    seed: kv.get_or("synth.seed", 0)?,
                };
                spec.validate()?;
                let validation_tracks =
                    kv.get_or("synth.validation_tracks", (spec.num_tracks / 5).max(1))?;
                if validation_tracks == 0 || validation_tracks >= spec.num_tracks {
                    return Err(CliError::usage(format!(
                        "synth.validation_tracks must lie in 1..{}, got {validation_tracks}",
                        spec.num_tracks
                    )));
                }
                DatasetSource::Synth {
                    spec,
                    validation_tracks,
                }
            }
        };
        Ok(Self {
            model,
            train,
            dataset,
            output_dir,
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let kv = read_kv(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_kv(&kv, &base)
    }

    /// Every setting with defaults filled in and paths made absolute.
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        self.model.to_kv(&mut kv);
        self.train.to_kv(&mut kv);
        let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        match &self.dataset {
            DatasetSource::Manifest(p) => kv.set(MANIFEST_KEY, abs(p).display()),
            DatasetSource::Synth {
                spec,
                validation_tracks,
            } => {
                kv.set("synth.num_tracks", spec.num_tracks);
                kv.set("synth.duration_samples", spec.duration_samples);
                kv.set("synth.sample_rate", spec.sample_rate);
                kv.set("synth.seed", spec.seed);
                kv.set("synth.validation_tracks", validation_tracks);
            }
        }
        kv.set(OUTPUT_KEY, abs(&self.output_dir).display());
        kv
    }

    pub fn load_dataset(&self) -> CliResult<DatasetSplits> {
        match &self.dataset {
            DatasetSource::Manifest(p) => Ok(data::load_manifest(p)?),
            DatasetSource::Synth {
                spec,
                validation_tracks,
            } => {
                let mut train = data::generate_synth(spec)?;
                let validation = train.split_off(train.len() - validation_tracks);
                Ok(DatasetSplits {
                    train,
                    validation,
                    test: Vec::new(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dwtsep::ResamplerKind;

    fn parse(text: &str) -> CliResult<RunConfig> {
        RunConfig::from_kv(&KvMap::parse(text).unwrap(), Path::new("/runs"))
    }

    #[test]
    fn synth_defaults_and_relative_paths() {
        let cfg = parse("output_dir = out\nsynth.seed = 4\nresampler = decimate_linear\n").unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("/runs/out"));
        assert_eq!(cfg.model.resampler, ResamplerKind::DecimateLinear);
        assert_eq!(cfg.train, TrainConfig::default());
        match cfg.dataset {
            DatasetSource::Synth {
                spec,
                validation_tracks,
            } => {
                assert_eq!((spec.num_tracks, spec.seed, validation_tracks), (20, 4, 4));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = parse("output_dir = /tmp/x\nmanifest = data/m.tsv\nbatch_size = 3\n").unwrap();
        let again = RunConfig::from_kv(&cfg.to_kv(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let err = parse("output_dir = o\nsynth.seed = 1\nlearning_rte = 1e-3\n").unwrap_err();
        assert!(err.to_string().contains("`learning_rte`"), "{err}");
        assert!(parse("synth.seed = 1\n").is_err());
        assert!(parse("output_dir = o\n").is_err());
        assert!(parse("output_dir = o\nmanifest = m\nsynth.seed = 1\n").is_err());
        assert!(
            parse("output_dir = o\nsynth.num_tracks = 3\nsynth.validation_tracks = 3\n").is_err()
        );
    }
}
