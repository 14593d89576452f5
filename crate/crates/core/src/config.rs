//! TOML run configuration and teacher construction.
//!
//! Every section is optional; missing keys take their defaults. Command-line
//! flags are applied on top by the caller.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dialogue::DialogueConfig;
use crate::digest::sha256_hex;
use crate::elo::BtFitConfig;
use crate::error::{Error, Result};
use crate::judge::JudgeConfig;
use crate::metrics::CutoffSet;
use crate::negatives::FilterConfig;
use crate::teacher::{CachedTeacher, HttpTeacher, MockTeacher, ResponseCache, SharedTeacher, TeacherEndpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cutoffs: CutoffSet::default().ks().to_vec(),
        }
    }
}

impl EvalConfig {
    pub fn cutoff_set(&self) -> Result<CutoffSet> {
        CutoffSet::new(self.cutoffs.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// First-stage candidates kept per query.
    pub pool_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { pool_size: 8 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub cache_dir: Option<PathBuf>,
    pub mock_teacher: bool,
    pub teacher: TeacherEndpoint,
    pub judge: JudgeConfig,
    pub elo: BtFitConfig,
    pub filter: FilterConfig,
    pub dialogue: DialogueConfig,
    pub eval: EvalConfig,
    pub pipeline: PipelineConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Invalid(m) => Error::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        self.judge.validate()?;
        self.elo.validate()?;
        self.dialogue.validate()?;
        self.eval.cutoff_set()?;
        if !(0.0..=1.0).contains(&self.filter.easy_rate) || !(self.filter.delta >= 0.0) {
            return Err(Error::invalid("filter.easy_rate must be in [0, 1] and filter.delta >= 0"));
        }
        if self.pipeline.pool_size < 2 {
            return Err(Error::invalid("pipeline.pool_size must be >= 2"));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

/// Hash of any serializable config section, for manifests.
pub fn config_hash<T: Serialize>(section: &T) -> String {
    sha256_hex(serde_json::to_string(section).expect("config serializes").as_bytes())
}

/// Teachers for one run: the voting panel and the single teacher used for
/// distillation, instructions and distractors.
pub struct Teachers {
    pub panel: Vec<SharedTeacher>,
    pub writer: SharedTeacher,
}

impl Teachers {
    pub fn panel_refs(&self) -> Vec<&dyn crate::teacher::Teacher> {
        self.panel.iter().map(|t| t.as_ref() as &dyn crate::teacher::Teacher).collect()
    }
}

fn wrap(t: SharedTeacher, cache: &Option<ResponseCache>) -> SharedTeacher {
    match cache {
        Some(c) => Arc::new(CachedTeacher::new(t, c.clone())),
        None => t,
    }
}

pub fn build_teachers(config: &Config) -> Result<Teachers> {
    let cache = config.cache_dir.as_ref().map(ResponseCache::open).transpose()?;
    let names: Vec<String> = if config.judge.panel.is_empty() {
        vec![config.teacher.model_name.clone()]
    } else {
        config.judge.panel.clone()
    };
    let seed = config.seed();
    if config.mock_teacher {
        let panel = names
            .iter()
            .map(|n| wrap(Arc::new(MockTeacher::new(format!("mock:{n}"), seed)), &cache))
            .collect();
        let writer = wrap(Arc::new(MockTeacher::new("mock:writer", seed)), &cache);
        return Ok(Teachers { panel, writer });
    }
    let mut panel = Vec::new();
    for n in &names {
        let endpoint = TeacherEndpoint {
            model_name: n.clone(),
            temperature: config.judge.vote_temperature,
            ..config.teacher.clone()
        };
        panel.push(wrap(Arc::new(HttpTeacher::new(endpoint)?), &cache));
    }
    let writer = wrap(Arc::new(HttpTeacher::new(config.teacher.clone())?), &cache);
    Ok(Teachers { panel, writer })
}
