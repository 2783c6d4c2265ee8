//! Layered configuration: TOML sections named after the pipeline modules,
//! with `section.key=value` overrides applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Full,
    #[default]
    Toy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub corpus: CorpusConfig,
    pub backbones: BackbonesConfig,
    pub networks: NetworksConfig,
    pub loss: LossConfig,
    pub styles: StylesConfig,
    pub dissect: DissectConfig,
    pub trainer: TrainConfig,
    pub serve: ServeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub manifest: Option<PathBuf>,
    /// Directory of precomputed parsing masks (`<id>_<region>.png`).
    pub masks_dir: Option<PathBuf>,
    pub dilation_frac: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            masks_dir: None,
            dilation_frac: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackbonesConfig {
    pub fallback: bool,
    pub edge: Option<PathBuf>,
    pub perceptual: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub fid: Option<PathBuf>,
    pub seed: u64,
}

impl Default for BackbonesConfig {
    fn default() -> Self {
        Self {
            fallback: true,
            edge: None,
            perceptual: None,
            features: None,
            fid: None,
            seed: 0x5eed_0001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworksConfig {
    /// Defaults to 64 for the full profile and 8 for the toy profile.
    pub base_channels: Option<usize>,
    pub n_resblocks: usize,
    pub seed: u64,
}

impl Default for NetworksConfig {
    fn default() -> Self {
        Self {
            base_channels: None,
            n_resblocks: 9,
            seed: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvMode {
    #[default]
    Log,
    Lsgan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub adv: AdvMode,
    /// The quality term switches on for epochs strictly after this one.
    pub quality_start_epoch: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            adv: AdvMode::Log,
            quality_start_epoch: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StylesConfig {
    pub bins: usize,
    pub lr: f64,
    pub steps: usize,
    pub project_simplex: bool,
    pub seed: u64,
}

impl Default for StylesConfig {
    fn default() -> Self {
        Self {
            bins: 256,
            lr: 0.05,
            steps: 200,
            project_simplex: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DissectConfig {
    /// Style code fed to the generator while recording activations.
    pub style: [f64; 3],
    pub candidates: usize,
    pub iou_threshold: f64,
}

impl Default for DissectConfig {
    fn default() -> Self {
        Self {
            style: [1.0, 0.0, 0.0],
            candidates: 64,
            iou_threshold: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_style_feature: bool,
    pub no_truncation_loss: bool,
    pub single_disc_mask_channel: bool,
    pub no_quality_loss: bool,
    pub no_relaxed: bool,
    pub no_local_disc: bool,
    pub no_hed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub profile: Profile,
    /// Defaults to 512 (full) or 64 (toy).
    pub image_size: Option<usize>,
    /// Defaults to 300 (full) or 2 (toy).
    pub epochs: Option<usize>,
    pub batch: usize,
    pub steps_per_epoch: Option<usize>,
    pub lr_gan: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lr_classifier: f64,
    pub lr_metric: f64,
    pub classifier_steps: usize,
    pub metric_steps: usize,
    pub seed: u64,
    pub flip: bool,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Toy,
            image_size: None,
            epochs: None,
            batch: 1,
            steps_per_epoch: None,
            lr_gan: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            lr_classifier: 1e-4,
            lr_metric: 1e-4,
            classifier_steps: 200,
            metric_steps: 500,
            seed: 42,
            flip: true,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn image_size(&self) -> usize {
        self.image_size.unwrap_or(match self.profile {
            Profile::Full => 512,
            Profile::Toy => 64,
        })
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.profile {
            Profile::Full => 300,
            Profile::Toy => 2,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub port: u16,
    pub model_checkpoint: Option<PathBuf>,
    pub study_manifest: Option<PathBuf>,
    pub answer_log: PathBuf,
    pub seed: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            model_checkpoint: None,
            study_manifest: None,
            answer_log: PathBuf::from("answers.jsonl"),
            seed: 1,
        }
    }
}

impl Config {
    pub fn base_channels(&self) -> usize {
        self.networks
            .base_channels
            .unwrap_or(match self.trainer.profile {
                Profile::Full => 64,
                Profile::Toy => 8,
            })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::layered(Some(text), &[])
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::layered(Some(&text), overrides)
    }

    /// Parses an optional TOML document and applies `section.key=value`
    /// overrides in order. Values are read as TOML literals, falling back to
    /// plain strings.
    pub fn layered(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = match text {
            Some(t) => t
                .parse()
                .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        for ov in overrides {
            apply_override(&mut root, ov)?;
        }
        let cfg: Config = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let size = self.trainer.image_size();
        if size % 8 != 0 || size < 16 {
            return Err(Error::Config(format!(
                "trainer.image_size must be a multiple of 8 and at least 16, got {size}"
            )));
        }
        if self.trainer.profile == Profile::Toy && (size > 128 || self.trainer.epochs() > 10) {
            return Err(Error::Config(
                "toy profile requires image_size <= 128 and epochs <= 10".into(),
            ));
        }
        if self.networks.n_resblocks == 0 {
            return Err(Error::Config("networks.n_resblocks must be >= 1".into()));
        }
        if self.trainer.batch == 0 {
            return Err(Error::Config("trainer.batch must be >= 1".into()));
        }
        if self.styles.bins < 2 {
            return Err(Error::Config("styles.bins must be >= 2".into()));
        }
        if self.corpus.dilation_frac < 0.0 {
            return Err(Error::Config("corpus.dilation_frac must be >= 0".into()));
        }
        if !self.backbones.fallback
            && [
                &self.backbones.edge,
                &self.backbones.perceptual,
                &self.backbones.features,
                &self.backbones.fid,
            ]
            .iter()
            .any(|p| p.is_none())
        {
            return Err(Error::Config(
                "backbones.fallback=false requires backbones.edge, .perceptual, .features and .fid"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }
}

fn apply_override(root: &mut toml::Table, ov: &str) -> Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{ov}` is not of the form key=value")))?;
    let value = parse_literal(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_toy() {
        let cfg = Config::layered(None, &[]).unwrap();
        assert_eq!(cfg.trainer.image_size(), 64);
        assert_eq!(cfg.trainer.epochs(), 2);
        assert_eq!(cfg.base_channels(), 8);
        assert_eq!(cfg.styles.lr, 0.05);
        assert_eq!(cfg.styles.bins, 256);
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = Config::layered(
            Some("[trainer]\nbatch = 2\n"),
            &[
                "trainer.batch=4".into(),
                "loss.adv=lsgan".into(),
                "trainer.ablation.no_hed=true".into(),
                "corpus.manifest=data/x.tsv".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.trainer.batch, 4);
        assert_eq!(cfg.loss.adv, AdvMode::Lsgan);
        assert!(cfg.trainer.ablation.no_hed);
        assert_eq!(cfg.corpus.manifest, Some(PathBuf::from("data/x.tsv")));
    }

    #[test]
    fn full_profile_defaults() {
        let cfg = Config::layered(None, &["trainer.profile=\"full\"".into()]).unwrap();
        assert_eq!(cfg.trainer.image_size(), 512);
        assert_eq!(cfg.trainer.epochs(), 300);
        assert_eq!(cfg.base_channels(), 64);
    }

    #[test]
    fn toy_profile_limits() {
        let err = Config::layered(None, &["trainer.epochs=20".into()]).unwrap_err();
        assert!(err.is_validation());
        assert!(Config::layered(None, &["trainer.image_size=60".into()]).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::layered(Some("[trainer]\nbogus = 1\n"), &[]).is_err());
    }

    #[test]
    fn real_adapters_need_paths() {
        assert!(Config::layered(None, &["backbones.fallback=false".into()]).is_err());
    }
}
