//! Linear softmax probe: multinomial logistic regression trained by
//! full-batch gradient descent with step halving.

use rayon::prelude::*;

use crate::data::{argmax_lowest, EmbeddingSet, EmotionLabel, Level};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    /// Stop when the gradient's infinity norm drops below this.
    pub grad_tol: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            l2: 1e-4,
            max_epochs: 500,
            grad_tol: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeMeta {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Objective value after each accepted step; entry 0 is at initialization.
    pub loss_history: Vec<f64>,
}

/// C x D weights and C biases; row `c` scores class id `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe<T> {
    classes: usize,
    dim: usize,
    weights: Vec<T>,
    bias: Vec<T>,
    meta: Option<ProbeMeta>,
}

impl<T: Scalar> LinearProbe<T> {
    pub fn new(classes: usize, dim: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::Shape("probe needs C >= 1 and D >= 1".into()));
        }
        if weights.len() != classes * dim || bias.len() != classes {
            return Err(Error::Shape(format!(
                "probe parameters do not match C = {classes}, D = {dim}"
            )));
        }
        if let Some(pos) = weights.iter().chain(&bias).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / dim, col: pos % dim });
        }
        Ok(Self { classes, dim, weights, bias, meta: None })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn meta(&self) -> Option<&ProbeMeta> {
        self.meta.as_ref()
    }

    pub fn logits<S: Scalar>(&self, x: &[S]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let w = &self.weights[c * self.dim..(c + 1) * self.dim];
                self.bias[c].widen() + crate::scalar::dot(w, x)
            })
            .collect()
    }

    pub fn predict_row<S: Scalar>(&self, x: &[S]) -> (EmotionLabel, Vec<f64>) {
        let p = softmax(&self.logits(x));
        (EmotionLabel(argmax_lowest(&p) as u8), p)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Flattened training problem in 64-bit.
#[derive(Debug, Clone)]
pub struct Objective {
    pub classes: usize,
    pub dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    pub l2: f64,
}

impl Objective {
    /// Parameter vector layout: W (C x D row-major) followed by b (C).
    pub fn n_params(&self) -> usize {
        self.classes * (self.dim + 1)
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        self.eval(params, false).0
    }

    /// Mean cross-entropy plus l2 * ||W||^2, and its gradient.
    pub fn loss_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        self.eval(params, true)
    }

    fn eval(&self, params: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let (c, d) = (self.classes, self.dim);
        let (w, b) = params.split_at(c * d);
        let n = self.y.len() as f64;
        let mut grad = if want_grad { vec![0.0; params.len()] } else { Vec::new() };
        let mut loss = 0.0;
        let mut logits = vec![0.0; c];
        for (x, &y) in self.x.chunks_exact(d).zip(&self.y) {
            for k in 0..c {
                logits[k] = b[k] + w[k * d..(k + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
            }
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
            loss += lse - logits[y];
            if want_grad {
                for k in 0..c {
                    let r = (logits[k] - lse).exp() - if k == y { 1.0 } else { 0.0 };
                    for (g, v) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *g += r * v;
                    }
                    grad[c * d + k] += r;
                }
            }
        }
        loss /= n;
        loss += self.l2 * w.iter().map(|v| v * v).sum::<f64>();
        if want_grad {
            grad.iter_mut().for_each(|g| *g /= n);
            for (g, wv) in grad[..c * d].iter_mut().zip(w) {
                *g += 2.0 * self.l2 * wv;
            }
        }
        (loss, grad)
    }
}

pub fn probe_train<T: Scalar>(train: &EmbeddingSet<T>, cfg: &ProbeConfig) -> Result<LinearProbe<T>> {
    if train.level() != Level::Utterance {
        return Err(Error::Precondition("probe training needs utterance-level embeddings".into()));
    }
    let by_class = train.indices_by_class();
    let missing: Vec<String> = by_class
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_empty())
        .map(|(c, _)| train.taxonomy().names()[c].clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::ClassCoverage(missing));
    }
    if cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 || cfg.l2 < 0.0 {
        return Err(Error::Config("probe needs a positive learning rate and non-negative l2".into()));
    }
    let obj = Objective {
        classes: train.n_classes(),
        dim: train.dim(),
        x: train.vectors().iter().map(|v| v.widen()).collect(),
        y: train.labels().iter().map(|l| l.index()).collect(),
        l2: cfg.l2,
    };
    let (params, meta) = gradient_descent(&obj, cfg);
    let cd = obj.classes * obj.dim;
    let mut probe = LinearProbe::new(
        obj.classes,
        obj.dim,
        params[..cd].iter().map(|&v| T::narrow(v)).collect(),
        params[cd..].iter().map(|&v| T::narrow(v)).collect(),
    )?;
    probe.meta = Some(meta);
    Ok(probe)
}

fn gradient_descent(obj: &Objective, cfg: &ProbeConfig) -> (Vec<f64>, ProbeMeta) {
    let mut params = vec![0.0; obj.n_params()];
    let mut step = cfg.learning_rate;
    let (mut loss, mut grad) = obj.loss_and_grad(&params);
    let mut history = vec![loss];
    let mut epochs = 0;
    'outer: while epochs < cfg.max_epochs {
        if grad.iter().all(|g| g.abs() < cfg.grad_tol) {
            break;
        }
        loop {
            let cand: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - step * g).collect();
            let cand_loss = obj.loss(&cand);
            if cand_loss <= loss {
                params = cand;
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                break 'outer;
            }
        }
        epochs += 1;
        let (l, g) = obj.loss_and_grad(&params);
        loss = l;
        grad = g;
        history.push(loss);
    }
    (
        params,
        ProbeMeta {
            seed: cfg.seed,
            epochs,
            learning_rate: cfg.learning_rate,
            l2: cfg.l2,
            loss_history: history,
        },
    )
}

/// Hard labels (lowest-id tie-break) and softmax rows for every utterance row.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub hard: Vec<EmotionLabel>,
    pub soft: Vec<Vec<f64>>,
}

pub fn probe_predict<T: Scalar, S: Scalar>(probe: &LinearProbe<T>, set: &EmbeddingSet<S>) -> Result<Prediction> {
    if set.dim() != probe.dim {
        return Err(Error::Shape(format!(
            "embeddings have dimension {}, probe expects {}",
            set.dim(),
            probe.dim
        )));
    }
    let (hard, soft) = set.vectors().par_chunks(set.dim()).map(|x| probe.predict_row(x)).unzip();
    Ok(Prediction { hard, soft })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Taxonomy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_objective(seed: u64) -> (Objective, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obj = Objective {
            classes: 3,
            dim: 4,
            x: (0..20).map(|_| rng.random_range(-2.0..2.0)).collect(),
            y: vec![0, 1, 2, 1, 0],
            l2: 0.1,
        };
        let p = (0..obj.n_params()).map(|_| rng.random_range(-0.5..0.5)).collect();
        (obj, p)
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..3 {
            let (obj, p) = toy_objective(seed);
            let (_, g) = obj.loss_and_grad(&p);
            let h = 1e-5;
            for i in 0..p.len() {
                let mut plus = p.clone();
                let mut minus = p.clone();
                plus[i] += h;
                minus[i] -= h;
                let fd = (obj.loss(&plus) - obj.loss(&minus)) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
                assert!(rel < 1e-5 || (fd - g[i]).abs() < 1e-10, "param {i}: fd {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn zero_probe_is_uniform_and_picks_class_zero() {
        let probe = LinearProbe::<f32>::new(4, 3, vec![0.0; 12], vec![0.0; 4]).unwrap();
        let (label, p) = probe.predict_row(&[1.0f32, -2.0, 3.0]);
        assert_eq!(label, EmotionLabel(0));
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn saturated_logits() {
        let p = softmax(&[10.0, -10.0, -10.0, -10.0]);
        assert!((p[0] - 1.0).abs() < 1e-8);
        for v in &p[1..] {
            assert!(v.abs() < 1e-8);
        }
        let shifted = softmax(&[13.5, -6.5, -6.5, -6.5]);
        for (a, b) in p.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_inputs_learn_the_prior() {
        let labels: Vec<EmotionLabel> = [0u8, 0, 0, 1, 2, 2, 3, 3].iter().map(|&c| EmotionLabel(c)).collect();
        let x = [1.0f64, 1.0].repeat(labels.len());
        let set = EmbeddingSet::from_rows(2, x, &labels, Taxonomy::canonical()).unwrap();
        let cfg = ProbeConfig { l2: 0.1, max_epochs: 5000, ..ProbeConfig::default() };
        let probe = probe_train(&set, &cfg).unwrap();
        let wnorm: f64 = probe.weights().iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(wnorm < 1e-3, "{wnorm}");
        let (_, p) = probe.predict_row(&[1.0f64, 1.0]);
        let prior = [3.0 / 8.0, 1.0 / 8.0, 2.0 / 8.0, 2.0 / 8.0];
        for (a, b) in p.iter().zip(prior) {
            assert!((a - b).abs() < 1e-3, "{p:?}");
        }
    }

    #[test]
    fn missing_class_is_reported() {
        let labels = [EmotionLabel(0), EmotionLabel(1)];
        let set = EmbeddingSet::from_rows(1, vec![0.0f32, 1.0], &labels, Taxonomy::canonical()).unwrap();
        match probe_train(&set, &ProbeConfig::default()) {
            Err(Error::ClassCoverage(names)) => assert_eq!(names, vec!["neutral", "sad"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn loss_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<EmotionLabel> = (0..80).map(|i| EmotionLabel((i % 4) as u8)).collect();
        let x: Vec<f32> = (0..80 * 5).map(|i| rng.random_range(-1.0..1.0) + ((i / 5) % 4 == i % 5) as u8 as f32).collect();
        let set = EmbeddingSet::from_rows(5, x, &labels, Taxonomy::canonical()).unwrap();
        let probe = probe_train(&set, &ProbeConfig::default()).unwrap();
        let h = &probe.meta().unwrap().loss_history;
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
        assert!(h.last().unwrap() < &h[0]);
    }
}
