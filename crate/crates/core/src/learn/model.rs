use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, LearnError, Labels};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression,
    KNearest,
    MlpRegressor,
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "logreg" | "logisticregression" | "logistic" => Some(ModelKind::LogisticRegression),
            "knn" | "knearest" => Some(ModelKind::KNearest),
            "mlp" | "mlpregressor" => Some(ModelKind::MlpRegressor),
            _ => None,
        }
    }

    fn allowed(self) -> &'static [(&'static str, f64)] {
        match self {
            ModelKind::LogisticRegression => &[
                ("learning_rate", 1.0),
                ("epochs", 1000.0),
                ("l2", 1e-4),
                ("tol", 1e-10),
            ],
            ModelKind::KNearest => &[("k", 5.0)],
            ModelKind::MlpRegressor => &[
                ("hidden", 16.0),
                ("learning_rate", 0.5),
                ("epochs", 1000.0),
                ("l2", 1e-4),
                ("tol", 1e-10),
            ],
        }
    }
}

pub type Hyperparameters = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub params: Hyperparameters,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        ModelSpec {
            kind,
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    /// Value of `key` or its default for this kind.
    pub fn param(&self, key: &str) -> f64 {
        self.params.get(key).copied().unwrap_or_else(|| {
            self.kind
                .allowed()
                .iter()
                .find(|(k, _)| *k == key)
                .map_or(f64::NAN, |(_, v)| *v)
        })
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let allowed = self.kind.allowed();
        for (k, v) in &self.params {
            if !allowed.iter().any(|(a, _)| a == k) {
                return Err(LearnError::BadHyperparameter(format!("{k} is not a {:?} parameter", self.kind)));
            }
            if !v.is_finite() {
                return Err(LearnError::BadHyperparameter(format!("{k} = {v}")));
            }
        }
        let positive = |k: &str| -> Result<(), LearnError> {
            if self.param(k) > 0.0 {
                Ok(())
            } else {
                Err(LearnError::BadHyperparameter(format!("{k} must be > 0")))
            }
        };
        let integral = |k: &str| -> Result<(), LearnError> {
            let v = self.param(k);
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(())
            } else {
                Err(LearnError::BadHyperparameter(format!("{k} must be an integer >= 1")))
            }
        };
        match self.kind {
            ModelKind::KNearest => integral("k"),
            ModelKind::LogisticRegression | ModelKind::MlpRegressor => {
                positive("learning_rate")?;
                integral("epochs")?;
                if self.param("l2") < 0.0 || self.param("tol") < 0.0 {
                    return Err(LearnError::BadHyperparameter("l2 and tol must be >= 0".into()));
                }
                if self.kind == ModelKind::MlpRegressor {
                    integral("hidden")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    fn fit(rows: &[Vec<f64>], d: usize) -> Self {
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardization { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ModelParams {
    Logistic {
        weights: Vec<f64>,
        bias: f64,
    },
    KNearest {
        k: usize,
        exemplars: Vec<Vec<f64>>,
        labels: Vec<usize>,
    },
    Mlp {
        w1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
        y_mean: f64,
        y_std: f64,
        clamp_unit: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub feature_dim: usize,
    pub feature_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
    pub standardization: Standardization,
    pub params: ModelParams,
    /// Training loss after each accepted step.
    #[serde(default)]
    pub loss_history: Vec<f64>,
    pub n_train: usize,
    #[serde(default)]
    pub train_sessions: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub score: f64,
    pub class: Option<usize>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl TrainedModel {
    pub fn predict(&self, x: &[f64], threshold: Option<f64>) -> Result<Prediction, LearnError> {
        if x.len() != self.feature_dim {
            return Err(LearnError::ShapeMismatch {
                expected: self.feature_dim,
                actual: x.len(),
            });
        }
        if let Some(col) = x.iter().position(|v| !v.is_finite()) {
            return Err(LearnError::BadFeature { row: 0, col });
        }
        let z = self.standardization.apply(x);
        let score = match &self.params {
            ModelParams::Logistic { weights, bias } => sigmoid(dot(weights, &z) + bias),
            ModelParams::KNearest { k, exemplars, labels } => knn_score(*k, exemplars, labels, &z),
            ModelParams::Mlp {
                w1,
                b1,
                w2,
                b2,
                y_mean,
                y_std,
                clamp_unit,
            } => {
                let out = mlp_forward(w1, b1, w2, *b2, &z).0 * y_std + y_mean;
                if *clamp_unit {
                    out.clamp(0.0, 1.0)
                } else {
                    out
                }
            }
        };
        Ok(Prediction {
            score,
            class: threshold.map(|t| usize::from(score >= t)),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, LearnError> {
        let m: TrainedModel = serde_json::from_str(text)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(LearnError::UnsupportedVersion(m.format_version));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LearnError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LearnError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn knn_score(k: usize, exemplars: &[Vec<f64>], labels: &[usize], z: &[f64]) -> f64 {
    let mut d: Vec<(f64, usize)> = exemplars
        .iter()
        .enumerate()
        .map(|(i, e)| (e.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = k.min(d.len()).max(1);
    let votes = d[..k].iter().filter(|(_, i)| labels[*i] == 1).count();
    votes as f64 / k as f64
}

fn mlp_forward(w1: &[Vec<f64>], b1: &[f64], w2: &[f64], b2: f64, z: &[f64]) -> (f64, Vec<f64>) {
    let h: Vec<f64> = w1
        .iter()
        .zip(b1)
        .map(|(w, b)| (dot(w, z) + b).tanh())
        .collect();
    (dot(w2, &h) + b2, h)
}

/// Step-size-controlled gradient descent over a flat parameter vector. A step
/// is accepted only if it does not increase the loss, so the recorded history
/// is non-increasing.
fn descend(
    theta: &mut [f64],
    lr0: f64,
    epochs: usize,
    tol: f64,
    mut loss_grad: impl FnMut(&[f64], bool) -> (f64, Vec<f64>),
) -> Vec<f64> {
    let (mut loss, mut grad) = loss_grad(theta, true);
    let mut history = vec![loss];
    let mut lr = lr0;
    let mut trial = vec![0.0; theta.len()];
    for _ in 0..epochs {
        let mut accepted = None;
        for _ in 0..40 {
            for ((t, th), g) in trial.iter_mut().zip(theta.iter()).zip(&grad) {
                *t = th - lr * g;
            }
            let (l, _) = loss_grad(&trial, false);
            if l.is_finite() && l <= loss {
                accepted = Some(l);
                break;
            }
            lr *= 0.5;
        }
        let Some(new_loss) = accepted else { break };
        theta.copy_from_slice(&trial);
        let improvement = loss - new_loss;
        let (l, g) = loss_grad(theta, true);
        loss = l;
        grad = g;
        history.push(loss);
        if improvement <= tol * loss.abs().max(1.0) {
            break;
        }
        lr = (lr * 1.25).min(lr0 * 64.0);
    }
    history
}

fn binary_ids(ds: &Dataset, kind: &'static str) -> Result<(Vec<String>, Vec<usize>), LearnError> {
    let Labels::Categorical { classes, ids } = &ds.labels else {
        return Err(LearnError::NotCategorical(kind));
    };
    let present: BTreeSet<usize> = ids.iter().copied().collect();
    if present.len() < 2 {
        return Err(LearnError::DegenerateLabels(format!(
            "{} class(es) present, need 2",
            present.len()
        )));
    }
    if classes.len() != 2 {
        return Err(LearnError::DegenerateLabels(format!(
            "{kind} is binary, got {} classes",
            classes.len()
        )));
    }
    Ok((classes.clone(), ids.clone()))
}

pub fn train(ds: &Dataset, spec: &ModelSpec) -> Result<TrainedModel, LearnError> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(LearnError::InsufficientData { needed: 1, got: 0 });
    }
    ds.check()?;
    let d = ds.dim();
    let standardization = Standardization::fit(&ds.features, d);
    let xs: Vec<Vec<f64>> = ds.features.iter().map(|r| standardization.apply(r)).collect();
    let n = xs.len() as f64;
    let lr = spec.param("learning_rate");
    let epochs = spec.param("epochs") as usize;
    let l2 = spec.param("l2");
    let tol = spec.param("tol");

    let (classes, params, loss_history) = match spec.kind {
        ModelKind::LogisticRegression => {
            let (classes, ids) = binary_ids(ds, "logistic regression")?;
            let ys: Vec<f64> = ids.iter().map(|&i| i as f64).collect();
            let mut theta = vec![0.0; d + 1];
            let history = descend(&mut theta, lr, epochs, tol, |th, want_grad| {
                let (w, b) = th.split_at(d);
                let mut loss = 0.0;
                let mut g = if want_grad { vec![0.0; d + 1] } else { Vec::new() };
                for (x, y) in xs.iter().zip(&ys) {
                    let z = dot(w, x) + b[0];
                    loss += softplus(z) - y * z;
                    if want_grad {
                        let r = sigmoid(z) - y;
                        for (gj, xj) in g.iter_mut().zip(x) {
                            *gj += r * xj;
                        }
                        g[d] += r;
                    }
                }
                loss = loss / n + 0.5 * l2 * dot(w, w);
                if want_grad {
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj /= n;
                        if j < d {
                            *gj += l2 * w[j];
                        }
                    }
                }
                (loss, g)
            });
            let bias = theta[d];
            theta.truncate(d);
            (Some(classes), ModelParams::Logistic { weights: theta, bias }, history)
        }
        ModelKind::KNearest => {
            let (classes, ids) = binary_ids(ds, "k-nearest")?;
            (
                Some(classes),
                ModelParams::KNearest {
                    k: spec.param("k") as usize,
                    exemplars: xs.clone(),
                    labels: ids,
                },
                Vec::new(),
            )
        }
        ModelKind::MlpRegressor => {
            let classes = ds.labels.classes().map(<[String]>::to_vec);
            if let Some(c) = &classes {
                if c.len() != 2 {
                    return Err(LearnError::DegenerateLabels(format!(
                        "regressing class ids needs 2 classes, got {}",
                        c.len()
                    )));
                }
            }
            let raw_y: Vec<f64> = (0..ds.len()).map(|r| ds.labels.target(r)).collect();
            let y_mean = crate::stats::mean(&raw_y);
            let y_sd = (raw_y.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n).sqrt();
            if y_sd <= 0.0 {
                return Err(LearnError::DegenerateLabels("all targets are equal".into()));
            }
            let ys: Vec<f64> = raw_y.iter().map(|y| (y - y_mean) / y_sd).collect();
            let h = spec.param("hidden") as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let a1 = (6.0 / (d + h) as f64).sqrt();
            let a2 = (6.0 / (h + 1) as f64).sqrt();
            let mut theta = Vec::with_capacity(h * d + 2 * h + 1);
            for _ in 0..h * d {
                theta.push(rng.gen_range(-a1..a1));
            }
            theta.extend(std::iter::repeat_n(0.0, h));
            for _ in 0..h {
                theta.push(rng.gen_range(-a2..a2));
            }
            theta.push(0.0);
            let unpack = |th: &[f64]| -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64) {
                let w1 = th[..h * d].chunks(d.max(1)).map(<[f64]>::to_vec).collect();
                let b1 = th[h * d..h * d + h].to_vec();
                let w2 = th[h * d + h..h * d + 2 * h].to_vec();
                (w1, b1, w2, th[h * d + 2 * h])
            };
            let history = descend(&mut theta, lr, epochs, tol, |th, want_grad| {
                let (w1, b1, w2, b2) = unpack(th);
                let mut loss = 0.0;
                let mut g = if want_grad { vec![0.0; th.len()] } else { Vec::new() };
                for (x, y) in xs.iter().zip(&ys) {
                    let (out, hid) = mlp_forward(&w1, &b1, &w2, b2, x);
                    let r = out - y;
                    loss += 0.5 * r * r;
                    if want_grad {
                        for j in 0..h {
                            g[h * d + h + j] += r * hid[j];
                            let dh = r * w2[j] * (1.0 - hid[j] * hid[j]);
                            g[h * d + j] += dh;
                            for (gk, xk) in g[j * d..(j + 1) * d].iter_mut().zip(x) {
                                *gk += dh * xk;
                            }
                        }
                        g[h * d + 2 * h] += r;
                    }
                }
                let reg = |th: &[f64]| -> f64 {
                    th[..h * d].iter().map(|v| v * v).sum::<f64>()
                        + th[h * d + h..h * d + 2 * h].iter().map(|v| v * v).sum::<f64>()
                };
                loss = loss / n + 0.5 * l2 * reg(th);
                if want_grad {
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi /= n;
                        let weight = i < h * d || (h * d + h..h * d + 2 * h).contains(&i);
                        if weight {
                            *gi += l2 * th[i];
                        }
                    }
                }
                (loss, g)
            });
            let (w1, b1, w2, b2) = unpack(&theta);
            let clamp_unit = classes.is_some();
            (
                classes,
                ModelParams::Mlp {
                    w1,
                    b1,
                    w2,
                    b2,
                    y_mean,
                    y_std: y_sd,
                    clamp_unit,
                },
                history,
            )
        }
    };

    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        spec: spec.clone(),
        feature_dim: d,
        feature_names: ds.feature_names.clone(),
        classes,
        standardization,
        params,
        loss_history,
        n_train: ds.len(),
        train_sessions: ds
            .sessions
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{split, validate, validate_regression, SplitMode};
    use rand_distr::{Distribution, StandardNormal};

    /// Two Gaussian blobs in `d` dimensions whose centres are `margin` apart
    /// along every axis.
    fn blobs(n_per: usize, d: usize, margin: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Vec::new();
        let mut ids = Vec::new();
        for c in 0..2 {
            for _ in 0..n_per {
                f.push(
                    (0..d)
                        .map(|_| c as f64 * margin + { let z: f64 = StandardNormal.sample(&mut rng); z })
                        .collect(),
                );
                ids.push(c);
            }
        }
        Dataset::categorical(f, vec!["relaxed".into(), "focused".into()], ids).unwrap()
    }

    fn centroid(ds: &Dataset, class: usize) -> Vec<f64> {
        let rows: Vec<&Vec<f64>> = ds
            .features
            .iter()
            .enumerate()
            .filter(|(r, _)| ds.labels.target(*r) == class as f64)
            .map(|(_, f)| f)
            .collect();
        (0..ds.dim())
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
            .collect()
    }

    #[test]
    fn separable_blobs_are_perfect() {
        let ds = blobs(100, 80, 5.0, 1);
        let (tr, ho) = split(&ds, 0.8, 7, SplitMode::Stratified).unwrap();
        // nearest-centroid rule as an independent check that the blobs separate
        let (c0, c1) = (centroid(&tr, 0), centroid(&tr, 1));
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        for (r, x) in ho.features.iter().enumerate() {
            let guess = usize::from(dist(x, &c1) < dist(x, &c0));
            assert_eq!(guess as f64, ho.labels.target(r));
        }
        for kind in [ModelKind::LogisticRegression, ModelKind::KNearest, ModelKind::MlpRegressor] {
            let m = train(&tr, &ModelSpec::new(kind, 7)).unwrap();
            let rep = validate(&m, &ho, 0.5).unwrap();
            assert_eq!(rep.accuracy, 1.0, "{kind:?}");
            assert_eq!(rep.n_train + rep.n_val, 200);
            assert!(m.predict(&c0, Some(0.5)).unwrap().score < 0.5);
        }
    }

    #[test]
    fn loss_never_increases() {
        let ds = blobs(60, 10, 0.8, 2);
        for kind in [ModelKind::LogisticRegression, ModelKind::MlpRegressor] {
            let m = train(&ds, &ModelSpec::new(kind, 3)).unwrap();
            assert!(m.loss_history.len() > 5);
            assert!(m.loss_history.windows(2).all(|w| w[1] <= w[0]), "{kind:?}");
            assert!(m.loss_history.last() < m.loss_history.first());
        }
    }

    #[test]
    fn deterministic_parameters() {
        let ds = blobs(40, 6, 1.0, 4);
        for kind in [ModelKind::LogisticRegression, ModelKind::MlpRegressor] {
            let a = train(&ds, &ModelSpec::new(kind, 11)).unwrap();
            let b = train(&ds, &ModelSpec::new(kind, 11)).unwrap();
            assert_eq!(a.to_json(), b.to_json());
        }
    }

    #[test]
    fn affine_feature_transform_leaves_predictions() {
        let ds = blobs(50, 4, 1.0, 5);
        let (tr, ho) = split(&ds, 0.8, 1, SplitMode::Stratified).unwrap();
        let warp = |d: &Dataset| {
            let mut d = d.clone();
            for r in &mut d.features {
                r[2] = 250.0 * r[2] - 4e3;
            }
            d
        };
        let m = train(&tr, &ModelSpec::new(ModelKind::LogisticRegression, 0)).unwrap();
        let mw = train(&warp(&tr), &ModelSpec::new(ModelKind::LogisticRegression, 0)).unwrap();
        for (x, xw) in ho.features.iter().zip(&warp(&ho).features) {
            let a = m.predict(x, None).unwrap().score;
            let b = mw.predict(xw, None).unwrap().score;
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn training_errors() {
        let one = Dataset::categorical(vec![vec![1.0]; 6], vec!["a".into(), "b".into()], vec![0; 6]).unwrap();
        assert!(matches!(
            train(&one, &ModelSpec::new(ModelKind::LogisticRegression, 0)),
            Err(LearnError::DegenerateLabels(_))
        ));
        let ds = blobs(5, 2, 1.0, 0);
        assert!(matches!(
            train(&ds, &ModelSpec::new(ModelKind::KNearest, 0).with("k", 0.0)),
            Err(LearnError::BadHyperparameter(_))
        ));
        assert!(matches!(
            train(&ds, &ModelSpec::new(ModelKind::KNearest, 0).with("depth", 3.0)),
            Err(LearnError::BadHyperparameter(_))
        ));
        let mut bad = ds.clone();
        bad.features[3][1] = f64::NAN;
        assert!(matches!(
            train(&bad, &ModelSpec::new(ModelKind::LogisticRegression, 0)),
            Err(LearnError::BadFeature { row: 3, col: 1 })
        ));
    }

    #[test]
    fn predict_threshold_and_shape() {
        let ds = blobs(20, 3, 4.0, 8);
        let m = train(&ds, &ModelSpec::new(ModelKind::LogisticRegression, 0)).unwrap();
        assert!(matches!(m.predict(&[0.0, 0.0], None), Err(LearnError::ShapeMismatch { expected: 3, actual: 2 })));
        let p = m.predict(&centroid(&ds, 1), Some(0.5)).unwrap();
        assert!(p.score > 0.5 && p.class == Some(1));
        let mut c = m.clone();
        c.params = ModelParams::Logistic { weights: vec![0.0; 3], bias: 0.0 };
        assert_eq!(c.predict(&[1.0, 2.0, 3.0], Some(0.5)).unwrap(), Prediction { score: 0.5, class: Some(1) });
        let rep = validate(&c, &ds, 0.5).unwrap();
        assert_eq!(rep.accuracy, 0.5);
        assert!(rep.t_stat.is_none());
    }

    #[test]
    fn json_round_trip() {
        let ds = blobs(10, 3, 2.0, 8);
        for kind in [ModelKind::LogisticRegression, ModelKind::KNearest, ModelKind::MlpRegressor] {
            let m = train(&ds, &ModelSpec::new(kind, 1)).unwrap();
            let back = TrainedModel::from_json(&m.to_json()).unwrap();
            assert_eq!(back, m);
        }
        let text = train(&ds, &ModelSpec::new(ModelKind::KNearest, 0)).unwrap().to_json();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["format_version"] = serde_json::Value::from(9);
        assert!(matches!(TrainedModel::from_json(&v.to_string()), Err(LearnError::UnsupportedVersion(9))));
    }

    #[test]
    fn mlp_fits_continuous_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f = Vec::new();
        let mut y = Vec::new();
        for _ in 0..200 {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            f.push(vec![a, b]);
            y.push(5.5 + 3.0 * a - 2.0 * b * b);
        }
        let ds = Dataset::new(
            f,
            Labels::Continuous { values: y },
            vec!["a".into(), "b".into()],
            vec![String::new(); 200],
        )
        .unwrap();
        let (tr, ho) = split(&ds, 0.8, 0, SplitMode::Random).unwrap();
        let m = train(&tr, &ModelSpec::new(ModelKind::MlpRegressor, 0)).unwrap();
        let rep = validate_regression(&m, &ho).unwrap();
        assert!(rep.r2 > 0.95, "{rep:?}");
        assert!(matches!(
            train(&ds, &ModelSpec::new(ModelKind::LogisticRegression, 0)),
            Err(LearnError::NotCategorical(_))
        ));
    }
}
