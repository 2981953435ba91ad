//! Semantic features of a sheet and the cosine score against a prompt's mean
//! ground-truth feature.

mod features;

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::abc::AbcError;
use crate::preprocess::Prompt;

pub use features::{BaselineExtractor, BASELINE_DIM};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("cannot extract features: {0}")]
    Parse(#[from] AbcError),
    #[error("no ground-truth features")]
    EmptyGroundTruth,
    #[error("zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("feature file line {line}: {reason}")]
    FeatureFile { line: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticFeature(pub Vec<f64>);

impl SemanticFeature {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Anything that maps sheet text to a fixed-size feature vector.
pub trait FeatureExtractor: Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn extract(&self, sheet_text: &str) -> Result<SemanticFeature, EvalError>;
}

/// Features looked up by piece id, e.g. exported by an external model.
pub struct TableExtractor {
    pub table: FeatureTable,
    index: HashMap<String, usize>,
}

impl TableExtractor {
    pub fn new(table: FeatureTable) -> Self {
        let index = table.rows.iter().enumerate().map(|(i, (id, _))| (id.clone(), i)).collect();
        TableExtractor { table, index }
    }

    pub fn get(&self, id: &str) -> Option<&SemanticFeature> {
        self.index.get(id).map(|&i| &self.table.rows[i].1)
    }
}

/// Component-wise mean, left unnormalised.
pub fn prompt_mean(features: &[SemanticFeature]) -> Result<SemanticFeature, EvalError> {
    let first = features.first().ok_or(EvalError::EmptyGroundTruth)?;
    let mut sum = vec![0.0; first.dim()];
    for f in features {
        if f.dim() != sum.len() {
            return Err(EvalError::DimensionMismatch(f.dim(), sum.len()));
        }
        sum.iter_mut().zip(&f.0).for_each(|(s, v)| *s += v);
    }
    let n = features.len() as f64;
    Ok(SemanticFeature(sum.into_iter().map(|s| s / n).collect()))
}

/// Cosine similarity.
pub fn clamp2_score(z: &SemanticFeature, mean: &SemanticFeature) -> Result<f64, EvalError> {
    if z.dim() != mean.dim() {
        return Err(EvalError::DimensionMismatch(z.dim(), mean.dim()));
    }
    let (a, b) = (z.norm(), mean.norm());
    if a == 0.0 || b == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    let dot: f64 = z.0.iter().zip(&mean.0).map(|(x, y)| x * y).sum();
    Ok((dot / (a * b)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptProfile {
    pub prompt: Prompt,
    pub mean_feature: SemanticFeature,
    pub ground_truth_count: usize,
}

/// Profiles for prompts with strictly more than `min_count` pieces, in order
/// of first appearance.
pub fn build_prompt_set(
    labelled: &[(Prompt, SemanticFeature)],
    min_count: usize,
) -> Result<Vec<PromptProfile>, EvalError> {
    let mut order: Vec<&Prompt> = Vec::new();
    let mut groups: HashMap<&Prompt, Vec<SemanticFeature>> = HashMap::new();
    for (p, f) in labelled {
        let g = groups.entry(p).or_default();
        if g.is_empty() {
            order.push(p);
        }
        g.push(f.clone());
    }
    let mut out = Vec::new();
    for p in order {
        let g = &groups[p];
        if g.len() > min_count {
            out.push(PromptProfile {
                prompt: p.clone(),
                mean_feature: prompt_mean(g)?,
                ground_truth_count: g.len(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPiece {
    pub id: String,
    pub prompt: Prompt,
    pub text: String,
    /// `None` when the piece could not be parsed.
    pub feature: Option<SemanticFeature>,
    pub score: f64,
}

/// Score of an unparseable piece: the floor of the cosine range.
pub const UNPARSEABLE_SCORE: f64 = -1.0;

pub fn score_piece(
    extractor: &dyn FeatureExtractor,
    id: &str,
    text: &str,
    profile: &PromptProfile,
) -> Result<ScoredPiece, EvalError> {
    let (feature, score) = match extractor.extract(text) {
        Ok(f) => match clamp2_score(&f, &profile.mean_feature) {
            Ok(s) => (Some(f), s),
            Err(EvalError::ZeroVector) => (Some(f), UNPARSEABLE_SCORE),
            Err(e) => return Err(e),
        },
        Err(EvalError::Parse(_)) => (None, UNPARSEABLE_SCORE),
        Err(e) => return Err(e),
    };
    Ok(ScoredPiece {
        id: id.to_string(),
        prompt: profile.prompt.clone(),
        text: text.to_string(),
        feature,
        score,
    })
}

/// Per-piece feature records under a `name`/`dim` header.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub name: String,
    pub dim: usize,
    pub rows: Vec<(String, SemanticFeature)>,
}

impl FeatureTable {
    /// `#features name=<name> dim=<F>`, then one `id F v1 .. vF` line per
    /// piece, whitespace separated. Ids must not contain whitespace.
    pub fn to_text(&self) -> String {
        let mut out = format!("#features name={} dim={}\n", self.name, self.dim);
        for (id, f) in &self.rows {
            let _ = write!(out, "{id} {}", f.dim());
            for v in &f.0 {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, reason: &str| EvalError::FeatureFile {
            line,
            reason: reason.to_string(),
        };
        let (_, head) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let rest = head.strip_prefix("#features ").ok_or_else(|| bad(1, "missing #features header"))?;
        let mut name = None;
        let mut dim = None;
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("name", v)) => name = Some(v.to_string()),
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                _ => return Err(bad(1, "bad header field")),
            }
        }
        let name = name.ok_or_else(|| bad(1, "missing name"))?;
        let dim = dim.ok_or_else(|| bad(1, "missing or bad dim"))?;
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let id = it.next().unwrap().to_string();
            let f: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(i + 1, "missing dimension"))?;
            if f != dim {
                return Err(bad(i + 1, "dimension differs from header"));
            }
            let vals = it
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad(i + 1, "bad value"))?;
            if vals.len() != dim || vals.iter().any(|v| !v.is_finite()) {
                return Err(bad(i + 1, "wrong number of finite values"));
            }
            rows.push((id, SemanticFeature(vals)));
        }
        Ok(FeatureTable { name, dim, rows })
    }
}
