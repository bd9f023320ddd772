//! `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, unknown
//! or repeated keys are errors, and [`RunConfig::to_text`] writes a canonical
//! form that parses back to an equal config.

use std::path::PathBuf;
use std::str::FromStr;

use mmnet_core::data::{FoldRule, FoldSpec, SyntheticSpec};
use mmnet_core::metrics::IouMode;
use mmnet_core::model::{ModelConfig, PropagationVariant, ReconTarget};
use mmnet_core::SgdConfig;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    /// 1-based; 0 when the problem is not tied to one line.
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub sgd: SgdConfig,
    pub batch: usize,
    pub shots: usize,
    pub iterations: u32,
    /// Write a checkpoint every this many iterations; 0 writes only the final one.
    pub checkpoint_every: u32,
    pub eval_episodes: u64,
    pub eval_mode: IouMode,
    pub fold: FoldSpec,
    pub data: SyntheticSpec,
    /// Reads episodes from a dataset written by `gen-data` instead of
    /// generating them in memory.
    pub data_root: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = SyntheticSpec::default();
        Self {
            model: ModelConfig::default(),
            sgd: SgdConfig::default(),
            batch: 4,
            shots: 1,
            iterations: 2000,
            checkpoint_every: 0,
            eval_episodes: 1000,
            eval_mode: IouMode::Accumulated,
            fold: FoldSpec {
                total_classes: data.class_count,
                fold_index: 0,
                rule: FoldRule::Contiguous,
            },
            data,
            data_root: None,
            seed: 0,
        }
    }
}

type Getter = fn(&RunConfig) -> String;
type Setter = fn(&mut RunConfig, &str) -> Result<(), String>;

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("expected a {}, got `{v}`", kind::<T>()))
}

fn kind<T>() -> &'static str {
    let name = std::any::type_name::<T>();
    if name == "bool" {
        "boolean"
    } else if name.starts_with('f') {
        "number"
    } else {
        "non-negative integer"
    }
}

fn pair(v: &str) -> Result<(f64, f64), String> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| format!("expected `low, high`, got `{v}`"))?;
    Ok((num(a.trim())?, num(b.trim())?))
}

fn choice<T: Copy>(v: &str, options: &[(&str, T)]) -> Result<T, String> {
    options
        .iter()
        .find(|(name, _)| *name == v)
        .map(|&(_, t)| t)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            format!("expected one of {}, got `{v}`", names.join(" | "))
        })
}

fn name_of<T: PartialEq>(t: T, options: &[(&'static str, T)]) -> String {
    options
        .iter()
        .find(|(_, o)| *o == t)
        .map(|(n, _)| (*n).to_string())
        .expect("every variant is listed")
}

const PROPAGATION: &[(&str, PropagationVariant)] = &[
    ("apm", PropagationVariant::Apm),
    ("global", PropagationVariant::Global),
];
const RECON: &[(&str, ReconTarget)] = &[
    ("support", ReconTarget::Support),
    ("query", ReconTarget::Query),
    ("both", ReconTarget::Both),
    ("off", ReconTarget::Off),
];
const FOLD_RULE: &[(&str, FoldRule)] = &[
    ("contiguous", FoldRule::Contiguous),
    ("coco_stride", FoldRule::CocoStride),
];
const IOU_MODE: &[(&str, IouMode)] = &[
    ("accumulated", IouMode::Accumulated),
    ("per_episode", IouMode::PerEpisode),
];

macro_rules! field {
    ($key:literal, $($path:ident).+) => {
        (
            $key,
            (|c: &RunConfig| c.$($path).+.to_string()) as Getter,
            (|c: &mut RunConfig, v: &str| {
                c.$($path).+ = num(v)?;
                Ok(())
            }) as Setter,
        )
    };
    ($key:literal, $($path:ident).+, $options:expr) => {
        (
            $key,
            (|c: &RunConfig| name_of(c.$($path).+, $options)) as Getter,
            (|c: &mut RunConfig, v: &str| {
                c.$($path).+ = choice(v, $options)?;
                Ok(())
            }) as Setter,
        )
    };
}

fn fields() -> Vec<(&'static str, Getter, Setter)> {
    vec![
        field!("seed", seed),
        field!("iterations", iterations),
        field!("batch", batch),
        field!("shots", shots),
        field!("checkpoint_every", checkpoint_every),
        field!("lr", sgd.learning_rate),
        field!("momentum", sgd.momentum),
        field!("weight_decay", sgd.weight_decay),
        field!("loss.alpha", model.loss.alpha),
        field!("loss.beta", model.loss.beta),
        field!("loss.gamma", model.loss.gamma),
        field!("memory.n", model.memory_n),
        field!("memory.bypass", model.bypass_memory),
        field!("propagation", model.propagation, PROPAGATION),
        field!("qmm", model.quality_fusion),
        field!("recon", model.recon, RECON),
        field!("decoder.width", model.decoder_width),
        field!("backbone.stride", model.backbone.stride),
        field!("backbone.stem", model.backbone.stem_channels),
        field!("backbone.level1", model.backbone.level1_channels),
        field!("backbone.level2", model.backbone.level2_channels),
        field!("backbone.level3", model.backbone.level3_channels),
        field!("backbone.level4", model.backbone.level4_channels),
        field!("backbone.dim", model.backbone.fused_dim),
        field!("backbone.frozen", model.backbone.frozen),
        field!("fold.index", fold.fold_index),
        field!("fold.rule", fold.rule, FOLD_RULE),
        field!("eval.episodes", eval_episodes),
        field!("eval.mode", eval_mode, IOU_MODE),
        field!("data.extent", data.image_extent),
        field!("data.classes", data.class_count),
        field!("data.samples_per_class", data.samples_per_class),
        field!("data.noise", data.noise),
        field!("data.texture", data.texture),
        field!("data.min_contrast", data.min_contrast),
        (
            "data.radius_range",
            |c| format!("{}, {}", c.data.radius_range.0, c.data.radius_range.1),
            |c, v| {
                c.data.radius_range = pair(v)?;
                Ok(())
            },
        ),
        (
            "data.fraction_range",
            |c| format!("{}, {}", c.data.fraction_range.0, c.data.fraction_range.1),
            |c, v| {
                c.data.fraction_range = pair(v)?;
                Ok(())
            },
        ),
        field!("data.seed", data.seed),
        (
            "data.root",
            |c| {
                c.data_root
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default()
            },
            |c, v| {
                c.data_root = (!v.is_empty()).then(|| PathBuf::from(v));
                Ok(())
            },
        ),
    ]
}

impl RunConfig {
    /// Every recognised key, in canonical order.
    pub fn keys() -> Vec<&'static str> {
        fields().into_iter().map(|(k, _, _)| k).collect()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table = fields();
        let mut cfg = Self::default();
        let mut seen: Vec<(&str, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| ConfigError { line, message };
            let content = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let (name, _, set) = table
                .iter()
                .find(|(k, _, _)| *k == key)
                .ok_or_else(|| err(format!("unknown key `{key}`")))?;
            if let Some((_, first)) = seen.iter().find(|(k, _)| k == name) {
                return Err(err(format!(
                    "duplicate key `{key}` (first set on line {first})"
                )));
            }
            seen.push((name, line));
            set(&mut cfg, value).map_err(|m| err(format!("{key}: {m}")))?;
        }
        cfg.fold.total_classes = cfg.data.class_count;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text listing every key.
    pub fn to_text(&self) -> String {
        fields()
            .iter()
            .map(|(k, get, _)| format!("{k} = {}\n", get(self)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |message: String| ConfigError { line: 0, message };
        self.model.validate().map_err(|e| err(e.to_string()))?;
        self.sgd.validate().map_err(|e| err(e.to_string()))?;
        self.data.validate().map_err(|e| err(e.to_string()))?;
        self.fold.validate().map_err(|e| err(e.to_string()))?;
        if self.fold.total_classes != self.data.class_count {
            return Err(err("fold class count differs from data.classes".into()));
        }
        if self.batch == 0 || self.shots == 0 {
            return Err(err("batch and shots must be at least 1".into()));
        }
        if self.data.image_extent % self.model.backbone.stride != 0 {
            return Err(err(
                "data.extent must be divisible by backbone.stride".into()
            ));
        }
        Ok(())
    }
}
