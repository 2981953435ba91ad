//! Run configuration: flat `section.key = value` text with `include` lines,
//! resolved into typed settings plus a list of field-level diagnostics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use scoregen::dpo::DpoConfig;
use scoregen::model::{ModelConfig, TrainConfig};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub reason: String,
}

impl Diagnostic {
    pub fn new(field: &str, reason: impl Into<String>) -> Self {
        Diagnostic {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
    Dpo,
    Generate,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Dpo => "dpo",
            Stage::Generate => "generate",
            Stage::Eval => "eval",
        }
    }

    pub fn is_training(self) -> bool {
        matches!(self, Stage::Pretrain | Stage::Finetune)
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "pretrain" => Stage::Pretrain,
            "finetune" => Stage::Finetune,
            "dpo" => Stage::Dpo,
            "generate" => Stage::Generate,
            "eval" => Stage::Eval,
            _ => return Err("expected pretrain, finetune, dpo, generate or eval".into()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    Baseline,
    /// Precomputed features keyed by piece id.
    Table(PathBuf),
}

/// A key's raw value and the directory its relative paths resolve against.
#[derive(Clone, Debug)]
struct Entry {
    value: String,
    base: PathBuf,
}

/// Raw keys in override order: files (with includes), then `--set`, then env.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

const PATH_ENV: [(&str, &str); 4] = [
    ("paths.manifest", "SCOREGEN_MANIFEST"),
    ("paths.output", "SCOREGEN_OUTPUT"),
    ("paths.checkpoint", "SCOREGEN_CHECKPOINT"),
    ("paths.generations", "SCOREGEN_GENERATIONS"),
];

impl RawConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut raw = RawConfig::default();
        raw.read_file(path, &mut HashSet::new())?;
        Ok(raw)
    }

    fn read_file(&mut self, path: &Path, seen: &mut HashSet<PathBuf>) -> Result<(), CliError> {
        let canon = fs::canonicalize(path).map_err(crate::error::io_err(path))?;
        if !seen.insert(canon.clone()) {
            return Err(CliError::config("include", format!("{} is included twice", path.display())));
        }
        let text = fs::read_to_string(&canon).map_err(crate::error::io_err(path))?;
        let base = canon.parent().map(Path::to_path_buf).unwrap_or_default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::config(&format!("{}:{}", path.display(), i + 1), "expected key = value")
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k == "include" {
                self.read_file(&base.join(v), seen)?;
            } else {
                self.set_entry(k, v, &base);
            }
        }
        Ok(())
    }

    fn set_entry(&mut self, key: &str, value: &str, base: &Path) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                base: base.to_path_buf(),
            },
        );
    }

    /// `key=value` overrides; relative paths resolve against the working directory.
    pub fn apply_sets(&mut self, sets: &[String]) -> Result<(), CliError> {
        let cwd = std::env::current_dir().unwrap_or_default();
        for s in sets {
            let (k, v) = s.split_once('=').ok_or_else(|| CliError::config("--set", format!("expected key=value, got {s:?}")))?;
            self.set_entry(k.trim(), v.trim(), &cwd);
        }
        Ok(())
    }

    pub fn apply_env(&mut self) {
        let cwd = std::env::current_dir().unwrap_or_default();
        for (key, var) in PATH_ENV {
            if let Ok(v) = std::env::var(var) {
                if !v.is_empty() {
                    self.set_entry(key, &v, &cwd);
                }
            }
        }
    }

    pub fn set_default(&mut self, key: &str, value: &str) {
        if !self.entries.contains_key(key) {
            self.set_entry(key, value, Path::new("."));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub stage: Stage,
    pub manifest: Option<PathBuf>,
    pub output: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub generations: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Body budget for training segments, in bytes; 0 means the context size.
    pub segment_chars: usize,
    /// Also carries the sampling settings used by `generate` and `eval`.
    pub dpo: DpoConfig,
    pub generate_count: usize,
    pub min_prompt_count: usize,
    pub features: FeatureSource,
    pub seed: u64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stage: Stage::Finetune,
            manifest: None,
            output: PathBuf::from("out"),
            checkpoint: None,
            generations: None,
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            segment_chars: 0,
            dpo: DpoConfig::desk(),
            generate_count: 10,
            min_prompt_count: 10,
            features: FeatureSource::Baseline,
            seed: 0,
            workers: 1,
        }
    }
}

fn parse_into<T: FromStr>(slot: &mut T, key: &str, value: &str, diags: &mut Vec<Diagnostic>) {
    match value.parse() {
        Ok(v) => *slot = v,
        Err(_) => diags.push(Diagnostic::new(key, format!("cannot parse {value:?}"))),
    }
}

fn resolve(e: &Entry) -> PathBuf {
    let p = PathBuf::from(&e.value);
    if p.is_absolute() {
        p
    } else {
        e.base.join(p)
    }
}

impl RunConfig {
    /// Typed view of the raw keys; unknown keys and unparseable values are
    /// reported, not fatal, so every problem surfaces at once.
    pub fn from_raw(raw: &RawConfig) -> (RunConfig, Vec<Diagnostic>) {
        let mut c = RunConfig::default();
        let mut d = Vec::new();
        for (key, e) in &raw.entries {
            let v = e.value.as_str();
            let d = &mut d;
            match key.as_str() {
                "stage" => match v.parse() {
                    Ok(s) => c.stage = s,
                    Err(r) => d.push(Diagnostic::new(key, r)),
                },
                "seed" => parse_into(&mut c.seed, key, v, d),
                "workers" => parse_into(&mut c.workers, key, v, d),
                "features" => {
                    if v == "baseline" {
                        c.features = FeatureSource::Baseline;
                    } else if let Some(p) = v.strip_prefix("table:") {
                        c.features = FeatureSource::Table(resolve(&Entry {
                            value: p.to_string(),
                            base: e.base.clone(),
                        }));
                    } else {
                        d.push(Diagnostic::new(key, "expected baseline or table:<path>"));
                    }
                }
                "paths.manifest" => c.manifest = Some(resolve(e)),
                "paths.output" => c.output = resolve(e),
                "paths.checkpoint" => c.checkpoint = Some(resolve(e)),
                "paths.generations" => c.generations = Some(resolve(e)),
                "model.patch_layers" => parse_into(&mut c.model.patch_layers, key, v, d),
                "model.char_layers" => parse_into(&mut c.model.char_layers, key, v, d),
                "model.hidden" => parse_into(&mut c.model.hidden, key, v, d),
                "model.heads" => parse_into(&mut c.model.heads, key, v, d),
                "model.context_patches" => parse_into(&mut c.model.context_patches, key, v, d),
                "model.patch_size" => parse_into(&mut c.model.patch_size, key, v, d),
                "train.steps" => parse_into(&mut c.train.steps, key, v, d),
                "train.batch_size" => parse_into(&mut c.train.batch_size, key, v, d),
                "train.lr" => parse_into(&mut c.train.lr, key, v, d),
                "train.warmup_steps" => parse_into(&mut c.train.warmup_steps, key, v, d),
                "train.segment_chars" => parse_into(&mut c.segment_chars, key, v, d),
                "dpo.beta" => parse_into(&mut c.dpo.beta, key, v, d),
                "dpo.lambda" => parse_into(&mut c.dpo.lambda, key, v, d),
                "dpo.iterations" => parse_into(&mut c.dpo.iterations, key, v, d),
                "dpo.steps" => parse_into(&mut c.dpo.steps, key, v, d),
                "dpo.lr" => parse_into(&mut c.dpo.lr, key, v, d),
                "dpo.generations_per_prompt" => parse_into(&mut c.dpo.generations_per_prompt, key, v, d),
                "dpo.select_fraction" => parse_into(&mut c.dpo.select_fraction, key, v, d),
                "dpo.batch_pairs" => parse_into(&mut c.dpo.batch_pairs, key, v, d),
                "dpo.pairs_per_pool" => parse_into(&mut c.dpo.pairs_per_pool, key, v, d),
                "dpo.plagiarism_ngram" => parse_into(&mut c.dpo.plagiarism.ngram, key, v, d),
                "dpo.plagiarism_threshold" => parse_into(&mut c.dpo.plagiarism.threshold, key, v, d),
                "sampling.temperature" => parse_into(&mut c.dpo.sampling.temperature, key, v, d),
                "sampling.top_p" => parse_into(&mut c.dpo.sampling.top_p, key, v, d),
                "sampling.max_new_patches" => parse_into(&mut c.dpo.sampling.max_new_patches, key, v, d),
                "sampling.continuation_threshold" => {
                    parse_into(&mut c.dpo.sampling.continuation_threshold, key, v, d)
                }
                "generate.count" => parse_into(&mut c.generate_count, key, v, d),
                "eval.min_prompt_count" => parse_into(&mut c.min_prompt_count, key, v, d),
                _ => d.push(Diagnostic::new(key, "unknown key")),
            }
        }
        c.model.seed = c.seed;
        c.train.seed = c.seed;
        c.train.workers = c.workers;
        c.dpo.seed = c.seed;
        c.dpo.workers = c.workers;
        c.dpo.sampling.seed = c.seed;
        (c, d)
    }

    /// Semantic checks and path existence; empty iff the stage can start.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut d = Vec::new();
        if let Err(e) = self.model.validate() {
            d.push(Diagnostic::new("model", e.to_string()));
        }
        if let Err(scoregen::dpo::DpoError::BadConfig { field, reason }) = self.dpo.validate() {
            d.push(Diagnostic::new(&format!("dpo.{field}"), reason));
        }
        if self.workers == 0 {
            d.push(Diagnostic::new("workers", "must be positive"));
        }
        let s = &self.dpo.sampling;
        if !(s.temperature >= 0.0 && s.temperature.is_finite()) {
            d.push(Diagnostic::new("sampling.temperature", "must be non-negative"));
        }
        if !(s.top_p > 0.0 && s.top_p <= 1.0) {
            d.push(Diagnostic::new("sampling.top_p", "must lie in (0, 1]"));
        }
        if !(s.continuation_threshold > 0.0 && s.continuation_threshold <= 1.0) {
            d.push(Diagnostic::new("sampling.continuation_threshold", "must lie in (0, 1]"));
        }
        if s.max_new_patches == 0 {
            d.push(Diagnostic::new("sampling.max_new_patches", "must be positive"));
        }
        if self.stage.is_training() {
            if self.train.steps == 0 {
                d.push(Diagnostic::new("train.steps", "must be positive"));
            }
            if self.train.batch_size == 0 {
                d.push(Diagnostic::new("train.batch_size", "must be positive"));
            }
            if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
                d.push(Diagnostic::new("train.lr", "must be positive"));
            }
        }
        if self.stage == Stage::Generate && self.generate_count == 0 {
            d.push(Diagnostic::new("generate.count", "must be positive"));
        }
        match &self.manifest {
            Some(p) if !p.is_file() => d.push(Diagnostic::new("paths.manifest", format!("{} does not exist", p.display()))),
            None => d.push(Diagnostic::new("paths.manifest", "required")),
            _ => {}
        }
        let needs_ckpt = !matches!(self.stage, Stage::Pretrain);
        match &self.checkpoint {
            Some(p) if !p.is_file() => {
                d.push(Diagnostic::new("paths.checkpoint", format!("{} does not exist", p.display())))
            }
            None if needs_ckpt => d.push(Diagnostic::new("paths.checkpoint", "required for this stage")),
            _ => {}
        }
        if let Some(p) = &self.generations {
            if !p.is_dir() {
                d.push(Diagnostic::new("paths.generations", format!("{} is not a directory", p.display())));
            }
        }
        if let FeatureSource::Table(p) = &self.features {
            if self.stage == Stage::Dpo {
                d.push(Diagnostic::new("features", "dpo scores fresh generations and needs the baseline extractor"));
            } else if !p.is_file() {
                d.push(Diagnostic::new("features", format!("{} does not exist", p.display())));
            }
        }
        d
    }

    /// Every setting, one `key = value` line each, in a fixed order.
    pub fn to_text(&self) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map_or(String::new(), |p| p.display().to_string());
        let features = match &self.features {
            FeatureSource::Baseline => "baseline".to_string(),
            FeatureSource::Table(t) => format!("table:{}", t.display()),
        };
        let m = &self.model;
        let t = &self.train;
        let g = &self.dpo;
        let s = &g.sampling;
        let lines: Vec<(&str, String)> = vec![
            ("stage", self.stage.name().into()),
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("features", features),
            ("paths.manifest", p(&self.manifest)),
            ("paths.output", self.output.display().to_string()),
            ("paths.checkpoint", p(&self.checkpoint)),
            ("paths.generations", p(&self.generations)),
            ("model.patch_layers", m.patch_layers.to_string()),
            ("model.char_layers", m.char_layers.to_string()),
            ("model.hidden", m.hidden.to_string()),
            ("model.heads", m.heads.to_string()),
            ("model.context_patches", m.context_patches.to_string()),
            ("model.patch_size", m.patch_size.to_string()),
            ("train.steps", t.steps.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr", format!("{:?}", t.lr)),
            ("train.warmup_steps", t.warmup_steps.to_string()),
            ("train.segment_chars", self.segment_chars.to_string()),
            ("dpo.beta", format!("{:?}", g.beta)),
            ("dpo.lambda", format!("{:?}", g.lambda)),
            ("dpo.iterations", g.iterations.to_string()),
            ("dpo.steps", g.steps.to_string()),
            ("dpo.lr", format!("{:?}", g.lr)),
            ("dpo.generations_per_prompt", g.generations_per_prompt.to_string()),
            ("dpo.select_fraction", format!("{:?}", g.select_fraction)),
            ("dpo.batch_pairs", g.batch_pairs.to_string()),
            ("dpo.pairs_per_pool", g.pairs_per_pool.to_string()),
            ("dpo.plagiarism_ngram", g.plagiarism.ngram.to_string()),
            ("dpo.plagiarism_threshold", format!("{:?}", g.plagiarism.threshold)),
            ("sampling.temperature", format!("{:?}", s.temperature)),
            ("sampling.top_p", format!("{:?}", s.top_p)),
            ("sampling.max_new_patches", s.max_new_patches.to_string()),
            ("sampling.continuation_threshold", format!("{:?}", s.continuation_threshold)),
            ("generate.count", self.generate_count.to_string()),
            ("eval.min_prompt_count", self.min_prompt_count.to_string()),
        ];
        lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Loads, overrides and types a config file; `stage` fills in a missing
/// `stage` key and must agree with an explicit one.
pub fn load_run_config(path: &Path, sets: &[String], stage: Option<&[Stage]>) -> Result<(RunConfig, Vec<Diagnostic>), CliError> {
    let mut raw = RawConfig::load(path)?;
    raw.apply_sets(sets)?;
    raw.apply_env();
    if let Some(allowed) = stage {
        raw.set_default("stage", allowed[0].name());
    }
    let (cfg, mut diags) = RunConfig::from_raw(&raw);
    if let Some(allowed) = stage {
        if !allowed.contains(&cfg.stage) {
            let names: Vec<&str> = allowed.iter().map(|s| s.name()).collect();
            diags.push(Diagnostic::new("stage", format!("this command runs {}", names.join(" or "))));
        }
    } else if raw.get("stage").is_none() {
        diags.push(Diagnostic::new("stage", "required"));
    }
    Ok((cfg, diags))
}
