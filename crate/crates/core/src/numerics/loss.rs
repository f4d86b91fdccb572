use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, dot, norm};
use crate::scalar::Scalar;

/// Multiplier applied to the power-iteration estimate of the softmax curvature.
pub const SOFTMAX_LIPSCHITZ_INFLATION: f64 = 1.05;

const POWER_ITERATIONS: usize = 500;

type Predictor<'a, T> = Box<dyn Fn(&[T]) -> usize + 'a>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKindTag {
    Quadratic,
    SoftmaxRegression,
    TinyMlp,
}

/// Row-major sample matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples<T> {
    pub features: Vec<T>,
    pub labels: Vec<usize>,
    pub dim: usize,
}

impl<T: Scalar> Samples<T> {
    pub fn new(features: Vec<T>, labels: Vec<usize>, dim: usize) -> Result<Self> {
        check_dim(labels.len() * dim, features.len())?;
        Ok(Self {
            features,
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossKind<T> {
    /// `f(x) = 1/2 * sum_j h_j (x_j - a_j)^2`. The default curvature is all
    /// ones; negative entries make the function nonconvex.
    Quadratic { center: Vec<T>, curvature: Vec<T> },
    /// Mean multinomial cross-entropy of a linear model, parameters stored as
    /// a `classes x dim` row-major weight matrix.
    Softmax { samples: Samples<T>, classes: usize },
    /// One tanh hidden layer followed by softmax cross-entropy. Parameters are
    /// `[W1 (hidden x dim), b1, W2 (classes x hidden), b2]`.
    TinyMlp {
        samples: Samples<T>,
        hidden: usize,
        classes: usize,
    },
}

/// A user's smooth local loss `f_i` together with a bound on the Lipschitz
/// constant of its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossModel<T> {
    kind: LossKind<T>,
    lipschitz: T,
    certified: bool,
}

impl<T: Scalar> LossModel<T> {
    /// Identity-curvature quadratic `1/2 ||x - a||^2`, with `L = 1`.
    pub fn quadratic(center: Vec<T>) -> Self {
        let curvature = vec![T::one(); center.len()];
        Self {
            kind: LossKind::Quadratic { center, curvature },
            lipschitz: T::one(),
            certified: true,
        }
    }

    /// Diagonal quadratic with arbitrary-sign curvature; `L = max_j |h_j|`.
    pub fn diagonal_quadratic(center: Vec<T>, curvature: Vec<T>) -> Result<Self> {
        check_dim(center.len(), curvature.len())?;
        let lipschitz = curvature.iter().fold(T::zero(), |m, h| m.max(h.abs()));
        if !(lipschitz > T::zero()) {
            return Err(Error::Precondition(
                "quadratic curvature must not vanish identically".into(),
            ));
        }
        Ok(Self {
            kind: LossKind::Quadratic { center, curvature },
            lipschitz,
            certified: true,
        })
    }

    pub fn softmax(samples: Samples<T>, classes: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyData);
        }
        if classes < 2 {
            return Err(Error::Precondition(
                "softmax needs at least two classes".into(),
            ));
        }
        if let Some(&bad) = samples.labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Precondition(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let lipschitz = softmax_lipschitz(&samples)?;
        Ok(Self {
            kind: LossKind::Softmax { samples, classes },
            lipschitz,
            certified: true,
        })
    }

    /// Tiny MLP with a caller-supplied gradient Lipschitz constant. The
    /// constant is not verified, so certificates computed with it are not
    /// trustworthy.
    pub fn tiny_mlp(
        samples: Samples<T>,
        hidden: usize,
        classes: usize,
        lipschitz: T,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyData);
        }
        if !(lipschitz > T::zero()) {
            return Err(Error::Precondition(
                "lipschitz constant must be positive".into(),
            ));
        }
        Ok(Self {
            kind: LossKind::TinyMlp {
                samples,
                hidden,
                classes,
            },
            lipschitz,
            certified: false,
        })
    }

    /// Builds a model from parts with an explicit Lipschitz bound, skipping
    /// data checks. An empty sample set gives the constant-zero loss.
    pub fn from_parts(kind: LossKind<T>, lipschitz: T) -> Result<Self> {
        if !(lipschitz > T::zero()) {
            return Err(Error::Precondition(
                "lipschitz constant must be positive".into(),
            ));
        }
        Ok(Self {
            kind,
            lipschitz,
            certified: false,
        })
    }

    pub fn kind(&self) -> &LossKind<T> {
        &self.kind
    }

    pub fn tag(&self) -> LossKindTag {
        match self.kind {
            LossKind::Quadratic { .. } => LossKindTag::Quadratic,
            LossKind::Softmax { .. } => LossKindTag::SoftmaxRegression,
            LossKind::TinyMlp { .. } => LossKindTag::TinyMlp,
        }
    }

    /// Whether `lipschitz()` is a verified bound (false for tiny-mlp).
    pub fn lipschitz_certified(&self) -> bool {
        self.certified
    }

    pub fn lipschitz(&self) -> T {
        self.lipschitz
    }

    pub fn params_dim(&self) -> usize {
        match &self.kind {
            LossKind::Quadratic { center, .. } => center.len(),
            LossKind::Softmax { samples, classes } => classes * samples.dim,
            LossKind::TinyMlp {
                samples,
                hidden,
                classes,
            } => hidden * samples.dim + hidden + classes * hidden + classes,
        }
    }

    /// Number of samples SGD iterates over; the quadratic has none and is
    /// treated as a single full-batch term.
    pub fn sample_count(&self) -> usize {
        match &self.kind {
            LossKind::Quadratic { .. } => 0,
            LossKind::Softmax { samples, .. } | LossKind::TinyMlp { samples, .. } => samples.len(),
        }
    }

    pub fn loss(&self, params: &[T]) -> Result<T> {
        check_dim(self.params_dim(), params.len())?;
        Ok(match &self.kind {
            LossKind::Quadratic { center, curvature } => {
                let half = T::lit(0.5);
                params
                    .iter()
                    .zip(center)
                    .zip(curvature)
                    .fold(T::zero(), |acc, ((&x, &a), &h)| {
                        acc + half * h * (x - a) * (x - a)
                    })
            }
            LossKind::Softmax { samples, classes } => mean_over(samples.len(), |i| {
                softmax_sample_loss(params, samples.row(i), samples.labels[i], *classes)
            }),
            LossKind::TinyMlp {
                samples,
                hidden,
                classes,
            } => mean_over(samples.len(), |i| {
                MlpShape::new(samples.dim, *hidden, *classes).sample_loss(
                    params,
                    samples.row(i),
                    samples.labels[i],
                )
            }),
        })
    }

    pub fn grad(&self, params: &[T]) -> Result<Vec<T>> {
        check_dim(self.params_dim(), params.len())?;
        Ok(match &self.kind {
            LossKind::Quadratic { center, curvature } => params
                .iter()
                .zip(center)
                .zip(curvature)
                .map(|((&x, &a), &h)| h * (x - a))
                .collect(),
            _ => {
                let all: Vec<usize> = (0..self.sample_count()).collect();
                self.batch_grad(params, &all)
            }
        })
    }

    /// Mean gradient over the given sample indices. For the quadratic the
    /// indices are ignored and the full gradient is returned.
    pub fn batch_grad(&self, params: &[T], batch: &[usize]) -> Vec<T> {
        let mut g = vec![T::zero(); params.len()];
        match &self.kind {
            LossKind::Quadratic { center, curvature } => {
                for (((gj, &x), &a), &h) in g.iter_mut().zip(params).zip(center).zip(curvature) {
                    *gj = h * (x - a);
                }
            }
            LossKind::Softmax { samples, classes } => {
                for &i in batch {
                    softmax_sample_grad(
                        params,
                        samples.row(i),
                        samples.labels[i],
                        *classes,
                        &mut g,
                    );
                }
                scale_by_count(&mut g, batch.len());
            }
            LossKind::TinyMlp {
                samples,
                hidden,
                classes,
            } => {
                let shape = MlpShape::new(samples.dim, *hidden, *classes);
                for &i in batch {
                    shape.sample_grad(params, samples.row(i), samples.labels[i], &mut g);
                }
                scale_by_count(&mut g, batch.len());
            }
        }
        g
    }

    /// Fraction of samples whose arg-max prediction matches the label.
    pub fn accuracy(&self, params: &[T]) -> Option<f64> {
        let (samples, predict): (&Samples<T>, Predictor<'_, T>) = match &self.kind {
            LossKind::Quadratic { .. } => return None,
            LossKind::Softmax { samples, classes } => (
                samples,
                Box::new(move |row| argmax(&logits(params, row, *classes))),
            ),
            LossKind::TinyMlp {
                samples,
                hidden,
                classes,
            } => {
                let shape = MlpShape::new(samples.dim, *hidden, *classes);
                (
                    samples,
                    Box::new(move |row| argmax(&shape.forward(params, row).1)),
                )
            }
        };
        if samples.is_empty() {
            return None;
        }
        let hits = (0..samples.len())
            .filter(|&i| predict(samples.row(i)) == samples.labels[i])
            .count();
        Some(hits as f64 / samples.len() as f64)
    }

    /// `prox_{eta f}(y)` in closed form, when one exists (quadratic kind).
    pub fn closed_form_prox(&self, y: &[T], eta: T) -> Option<Vec<T>> {
        match &self.kind {
            LossKind::Quadratic { center, curvature } => Some(
                y.iter()
                    .zip(center)
                    .zip(curvature)
                    .map(|((&yj, &a), &h)| (yj + eta * h * a) / (T::one() + eta * h))
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Minimizer of the loss when it is available in closed form.
    pub fn minimizer(&self) -> Option<Vec<T>> {
        match &self.kind {
            LossKind::Quadratic { center, curvature }
                if curvature.iter().all(|&h| h > T::zero()) =>
            {
                Some(center.clone())
            }
            _ => None,
        }
    }
}

/// Recomputes the Lipschitz bound the way the constructor does.
pub fn lipschitz_bound<T: Scalar>(model: &LossModel<T>) -> Result<T> {
    match model.kind() {
        LossKind::Quadratic { curvature, .. } => {
            Ok(curvature.iter().fold(T::zero(), |m, h| m.max(h.abs())))
        }
        LossKind::Softmax { samples, .. } => softmax_lipschitz(samples),
        LossKind::TinyMlp { samples, .. } => {
            if samples.is_empty() {
                Err(Error::EmptyData)
            } else {
                Ok(model.lipschitz())
            }
        }
    }
}

/// `1/2 * lambda_max(X^T X / m)` by power iteration, inflated by
/// [`SOFTMAX_LIPSCHITZ_INFLATION`]. The softmax Jacobian
/// `diag(s) - s s^T` has spectral norm at most 1/2.
fn softmax_lipschitz<T: Scalar>(samples: &Samples<T>) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::EmptyData);
    }
    let m = samples.len() as f64;
    let d = samples.dim;
    let rows: Vec<Vec<f64>> = (0..samples.len())
        .map(|i| samples.row(i).iter().map(|v| v.as_f64()).collect())
        .collect();
    let gram = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for r in &rows {
            let s: f64 = r.iter().zip(v).map(|(a, b)| a * b).sum();
            for (o, &a) in out.iter_mut().zip(r) {
                *o += s * a / m;
            }
        }
        out
    };
    let mut rng = crate::rng::stream(0x4c49_5053, &[]);
    let mut v: Vec<f64> = (0..d).map(|_| 1.0 + 0.1 * rng.random::<f64>()).collect();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let nv = norm(&v);
        if nv == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let w = gram(&v);
        let next = dot(&v, &w);
        v = w;
        if (next - lambda).abs() <= 1e-14 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    Ok(T::lit(0.5 * SOFTMAX_LIPSCHITZ_INFLATION * lambda))
}

fn mean_over<T: Scalar>(m: usize, f: impl Fn(usize) -> T) -> T {
    if m == 0 {
        return T::zero();
    }
    (0..m).map(f).sum::<T>() / T::from_usize(m).unwrap()
}

fn scale_by_count<T: Scalar>(g: &mut [T], count: usize) {
    if count > 0 {
        let c = T::from_usize(count).unwrap();
        g.iter_mut().for_each(|x| *x = *x / c);
    }
}

fn logits<T: Scalar>(w: &[T], x: &[T], classes: usize) -> Vec<T> {
    let d = x.len();
    (0..classes)
        .map(|c| dot(&w[c * d..(c + 1) * d], x))
        .collect()
}

fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let m = z.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

fn softmax_in_place<T: Scalar>(z: &mut [T]) {
    let lse = log_sum_exp(z);
    z.iter_mut().for_each(|v| *v = (*v - lse).exp());
}

fn argmax<T: Scalar>(z: &[T]) -> usize {
    z.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

fn softmax_sample_loss<T: Scalar>(w: &[T], x: &[T], y: usize, classes: usize) -> T {
    let z = logits(w, x, classes);
    log_sum_exp(&z) - z[y]
}

fn softmax_sample_grad<T: Scalar>(w: &[T], x: &[T], y: usize, classes: usize, g: &mut [T]) {
    let d = x.len();
    let mut s = logits(w, x, classes);
    softmax_in_place(&mut s);
    s[y] = s[y] - T::one();
    for (c, &sc) in s.iter().enumerate() {
        for (gj, &xj) in g[c * d..(c + 1) * d].iter_mut().zip(x) {
            *gj = *gj + sc * xj;
        }
    }
}

#[derive(Clone, Copy)]
struct MlpShape {
    dim: usize,
    hidden: usize,
    classes: usize,
}

impl MlpShape {
    fn new(dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            dim,
            hidden,
            classes,
        }
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.dim;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.classes * self.hidden;
        (w1, b1, w2)
    }

    /// Returns hidden activations and output logits.
    fn forward<T: Scalar>(&self, p: &[T], x: &[T]) -> (Vec<T>, Vec<T>) {
        let (o_b1, o_w2, o_b2) = self.offsets();
        let h: Vec<T> = (0..self.hidden)
            .map(|j| (dot(&p[j * self.dim..(j + 1) * self.dim], x) + p[o_b1 + j]).tanh())
            .collect();
        let z: Vec<T> = (0..self.classes)
            .map(|c| {
                dot(&p[o_w2 + c * self.hidden..o_w2 + (c + 1) * self.hidden], &h) + p[o_b2 + c]
            })
            .collect();
        (h, z)
    }

    fn sample_loss<T: Scalar>(&self, p: &[T], x: &[T], y: usize) -> T {
        let (_, z) = self.forward(p, x);
        log_sum_exp(&z) - z[y]
    }

    fn sample_grad<T: Scalar>(&self, p: &[T], x: &[T], y: usize, g: &mut [T]) {
        let (o_b1, o_w2, o_b2) = self.offsets();
        let (h, mut dz) = self.forward(p, x);
        softmax_in_place(&mut dz);
        dz[y] = dz[y] - T::one();
        let mut dh = vec![T::zero(); self.hidden];
        for c in 0..self.classes {
            let row = o_w2 + c * self.hidden;
            for j in 0..self.hidden {
                g[row + j] = g[row + j] + dz[c] * h[j];
                dh[j] = dh[j] + dz[c] * p[row + j];
            }
            g[o_b2 + c] = g[o_b2 + c] + dz[c];
        }
        for j in 0..self.hidden {
            let da = dh[j] * (T::one() - h[j] * h[j]);
            for (k, &xk) in x.iter().enumerate() {
                g[j * self.dim + k] = g[j * self.dim + k] + da * xk;
            }
            g[o_b1 + j] = g[o_b1 + j] + da;
        }
    }
}
