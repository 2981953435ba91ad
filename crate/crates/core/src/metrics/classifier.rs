use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MetricsError;
use crate::evaluator::SemanticFeature;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop once the relative loss change falls below this.
    pub tolerance: f64,
    pub l2: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            learning_rate: 0.5,
            max_epochs: 5000,
            tolerance: 1e-6,
            l2: 1e-4,
        }
    }
}

/// Multinomial logistic regression.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub labels: Vec<String>,
    pub dim: usize,
    /// `[classes, dim]`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    /// A one-class model that always predicts `label`.
    pub fn constant(label: &str, dim: usize) -> Self {
        LinearClassifier {
            labels: vec![label.to_string()],
            dim,
            weights: vec![0.0; dim],
            bias: vec![0.0],
        }
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.labels.len())
            .map(|c| self.bias[c] + self.weights[c * self.dim..(c + 1) * self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Class index with the highest score; ties go to the lowest index.
    pub fn predict_index(&self, x: &SemanticFeature) -> Result<usize, MetricsError> {
        if x.dim() != self.dim {
            return Err(MetricsError::DimensionMismatch(x.dim(), self.dim));
        }
        let s = self.scores(&x.0);
        let mut best = 0;
        for (i, &v) in s.iter().enumerate() {
            if v > s[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn predict(&self, x: &SemanticFeature) -> Result<&str, MetricsError> {
        Ok(&self.labels[self.predict_index(x)?])
    }
}

/// Full-batch gradient descent on the mean cross-entropy, from zero weights.
/// Needs two or more classes with at least five examples each.
pub fn train_label_classifier(
    features: &[SemanticFeature],
    labels: &[String],
    cfg: &ClassifierConfig,
) -> Result<LinearClassifier, MetricsError> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(MetricsError::DegenerateLabels("features and labels differ in count".into()));
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(MetricsError::DegenerateLabels("fewer than two classes".into()));
    }
    for c in &classes {
        let n = labels.iter().filter(|l| *l == c).count();
        if n < 5 {
            return Err(MetricsError::DegenerateLabels(format!("class {c} has {n} examples")));
        }
    }
    let dim = features[0].dim();
    if let Some(f) = features.iter().find(|f| f.dim() != dim) {
        return Err(MetricsError::DimensionMismatch(f.dim(), dim));
    }
    let k = classes.len();
    let y: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    let mut clf = LinearClassifier {
        labels: classes,
        dim,
        weights: vec![0.0; k * dim],
        bias: vec![0.0; k],
    };
    let n = features.len() as f64;
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.max_epochs {
        let mut gw = vec![0.0; k * dim];
        let mut gb = vec![0.0; k];
        let mut loss = 0.0;
        for (x, &t) in features.iter().zip(&y) {
            let mut s = clf.scores(&x.0);
            let lse = crate::model::softmax_in_place(&mut s);
            loss += lse - clf.scores(&x.0)[t];
            s[t] -= 1.0;
            for c in 0..k {
                gb[c] += s[c] / n;
                for (g, v) in gw[c * dim..(c + 1) * dim].iter_mut().zip(&x.0) {
                    *g += s[c] * v / n;
                }
            }
        }
        loss /= n;
        loss += 0.5 * cfg.l2 * clf.weights.iter().map(|w| w * w).sum::<f64>();
        for (w, g) in clf.weights.iter_mut().zip(&gw) {
            *w -= cfg.learning_rate * (g + cfg.l2 * *w);
        }
        for (b, g) in clf.bias.iter_mut().zip(&gb) {
            *b -= cfg.learning_rate * g;
        }
        if (prev - loss).abs() <= cfg.tolerance * prev.abs().max(1e-12) {
            break;
        }
        prev = loss;
    }
    Ok(clf)
}

/// Fraction of pieces whose predicted label equals their prompt label.
pub fn label_accuracy(
    clf: &LinearClassifier,
    features: &[SemanticFeature],
    labels: &[String],
) -> Result<f64, MetricsError> {
    if features.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut hits = 0;
    for (f, l) in features.iter().zip(labels) {
        if clf.predict(f)? == l {
            hits += 1;
        }
    }
    Ok(hits as f64 / features.len() as f64)
}

/// Per-class shuffled split; returns (train, test) indices.
pub fn stratified_split(labels: &[String], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<&String> = labels.iter().collect();
    classes.sort();
    classes.dedup();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| &labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(v: &[f64]) -> SemanticFeature {
        SemanticFeature(v.to_vec())
    }

    #[test]
    fn separable_classes() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..10 {
            let e = i as f64 * 0.01;
            xs.push(f(&[1.0 + e, 0.0]));
            ys.push("a".to_string());
            xs.push(f(&[0.0, 1.0 - e]));
            ys.push("b".to_string());
        }
        let clf = train_label_classifier(&xs, &ys, &ClassifierConfig::default()).unwrap();
        assert_eq!(label_accuracy(&clf, &xs, &ys).unwrap(), 1.0);
        assert!(matches!(label_accuracy(&clf, &[], &[]), Err(MetricsError::EmptyInput)));
        assert!(matches!(
            label_accuracy(&clf, &[f(&[1.0])], &ys[..1]),
            Err(MetricsError::DimensionMismatch(1, 2))
        ));
    }

    #[test]
    fn ties_pick_lowest_index() {
        let clf = LinearClassifier {
            labels: vec!["a".into(), "b".into()],
            dim: 1,
            weights: vec![0.0, 0.0],
            bias: vec![0.0, 0.0],
        };
        assert_eq!(clf.predict(&f(&[3.0])).unwrap(), "a");
    }

    #[test]
    fn degenerate_labels() {
        let xs = vec![f(&[1.0]); 6];
        let ys = vec!["a".to_string(); 6];
        assert!(matches!(
            train_label_classifier(&xs, &ys, &ClassifierConfig::default()),
            Err(MetricsError::DegenerateLabels(_))
        ));
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<String> = (0..50).map(|i| if i < 30 { "a".into() } else { "b".into() }).collect();
        let (train, test) = stratified_split(&labels, 0.2, 1);
        assert_eq!(test.len(), 10);
        assert_eq!(test.iter().filter(|&&i| i < 30).count(), 6);
        assert_eq!(train.len() + test.len(), 50);
        assert_eq!(stratified_split(&labels, 0.2, 1), (train, test));
    }
}
