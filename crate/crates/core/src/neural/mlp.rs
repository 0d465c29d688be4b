//! Three-layer perceptron with hand-derived gradients:
//! `linear -> SELU -> linear -> tanh -> dropout -> linear`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, NdFloat};
use num_traits::FromPrimitive;
use rand::Rng as _;
use rand_distr::{Distribution, Uniform};

use crate::rng::Rng;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

pub trait Float: NdFloat + FromPrimitive {}
impl<T: NdFloat + FromPrimitive> Float for T {}

fn c<F: Float>(v: f64) -> F {
    F::from_f64(v).unwrap()
}

pub fn selu<F: Float>(x: F) -> F {
    if x > F::zero() {
        c::<F>(SELU_LAMBDA) * x
    } else {
        c::<F>(SELU_LAMBDA * SELU_ALPHA) * (x.exp() - F::one())
    }
}

pub fn selu_grad<F: Float>(x: F) -> F {
    if x > F::zero() {
        c::<F>(SELU_LAMBDA)
    } else {
        c::<F>(SELU_LAMBDA * SELU_ALPHA) * x.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
    pub w3: Array2<F>,
    pub b3: Array1<F>,
    /// Drop probability applied to the second hidden layer during training.
    pub dropout: f64,
}

/// Gradients, laid out exactly like the parameters.
pub type MlpGrads<F> = Mlp<F>;

pub struct ForwardCache<F> {
    pub x: Array2<F>,
    pub z1: Array2<F>,
    pub a1: Array2<F>,
    pub z2: Array2<F>,
    pub a2: Array2<F>,
    /// Inverted-dropout scale per unit (0 or 1/(1-p)); `None` in eval mode.
    pub mask: Option<Array2<F>>,
    pub out: Array2<F>,
}

fn linear_init<F: Float>(rows: usize, cols: usize, r: &mut Rng) -> (Array2<F>, Array1<F>) {
    // torch.nn.Linear default: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    let bound = 1.0 / (cols as f64).sqrt();
    let u = Uniform::new_inclusive(-bound, bound).unwrap();
    let w = Array2::from_shape_simple_fn((rows, cols), || c(u.sample(r)));
    let b = Array1::from_shape_simple_fn(rows, || c(u.sample(r)));
    (w, b)
}

impl<F: Float> Mlp<F> {
    pub fn new(d_in: usize, h1: usize, h2: usize, d_out: usize, dropout: f64, r: &mut Rng) -> Self {
        let (w1, b1) = linear_init(h1, d_in, r);
        let (w2, b2) = linear_init(h2, h1, r);
        let (w3, b3) = linear_init(d_out, h2, r);
        Self {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            dropout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
            w3: Array2::zeros(self.w3.raw_dim()),
            b3: Array1::zeros(self.b3.raw_dim()),
            dropout: self.dropout,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> (usize, usize) {
        (self.w1.nrows(), self.w2.nrows())
    }

    pub fn d_out(&self) -> usize {
        self.w3.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter tensors in a fixed order: w1, b1, w2, b2, w3, b3.
    pub fn tensors(&self) -> [&[F]; 6] {
        [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
            self.w3.as_slice().unwrap(),
            self.b3.as_slice().unwrap(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [F]; 6] {
        [
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
            self.w3.as_slice_mut().unwrap(),
            self.b3.as_slice_mut().unwrap(),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Forward pass over a batch (rows are examples). Dropout is applied only
    /// when a generator is supplied.
    pub fn forward(&self, x: ArrayView2<F>, dropout_rng: Option<&mut Rng>) -> ForwardCache<F> {
        let mut z1 = x.dot(&self.w1.t());
        z1 += &self.b1;
        let a1 = z1.mapv(selu);
        let mut z2 = a1.dot(&self.w2.t());
        z2 += &self.b2;
        let mut a2 = z2.mapv(|v| v.tanh());
        let mask = match dropout_rng {
            Some(r) if self.dropout > 0.0 => {
                let keep = c::<F>(1.0 / (1.0 - self.dropout));
                let m = Array2::from_shape_simple_fn(a2.raw_dim(), || {
                    if r.random::<f64>() < self.dropout {
                        F::zero()
                    } else {
                        keep
                    }
                });
                a2 *= &m;
                Some(m)
            }
            _ => None,
        };
        let mut out = a2.dot(&self.w3.t());
        out += &self.b3;
        ForwardCache {
            x: x.to_owned(),
            z1,
            a1,
            z2,
            a2,
            mask,
            out,
        }
    }

    pub fn predict(&self, x: ArrayView2<F>) -> Array2<F> {
        self.forward(x, None).out
    }

    /// Backpropagates `d_out` (gradient of the loss w.r.t. the output logits)
    /// and returns parameter gradients plus the gradient w.r.t. the input.
    pub fn backward(&self, cache: &ForwardCache<F>, d_out: ArrayView2<F>) -> (MlpGrads<F>, Array2<F>) {
        let w3 = d_out.t().dot(&cache.a2);
        let b3 = d_out.sum_axis(Axis(0));
        let mut d_a2 = d_out.dot(&self.w3);
        if let Some(m) = &cache.mask {
            d_a2 *= m;
        }
        // a2 holds the post-dropout activations; recover tanh' from z2.
        let d_z2 = &d_a2
            * &cache.z2.mapv(|z| {
                let t = z.tanh();
                F::one() - t * t
            });
        let w2 = d_z2.t().dot(&cache.a1);
        let b2 = d_z2.sum_axis(Axis(0));
        let d_a1 = d_z2.dot(&self.w2);
        let d_z1 = &d_a1 * &cache.z1.mapv(selu_grad);
        let w1 = d_z1.t().dot(&cache.x);
        let b1 = d_z1.sum_axis(Axis(0));
        let d_x = d_z1.dot(&self.w1);
        (
            Mlp {
                w1,
                b1,
                w2,
                b2,
                w3,
                b3,
                dropout: self.dropout,
            },
            d_x,
        )
    }

    pub fn cast<G: Float>(&self) -> Mlp<G> {
        let f = |v: &F| c::<G>(v.to_f64().unwrap());
        Mlp {
            w1: self.w1.map(f),
            b1: self.b1.map(f),
            w2: self.w2.map(f),
            b2: self.b2.map(f),
            w3: self.w3.map(f),
            b3: self.b3.map(f),
            dropout: self.dropout,
        }
    }
}

/// Mean binary cross-entropy on logits, and its gradient w.r.t. the logits.
pub fn bce_with_logits<F: Float>(logits: ArrayView2<F>, labels: &[F]) -> (F, Array2<F>) {
    let n = c::<F>(labels.len() as f64);
    let mut loss = F::zero();
    let mut grad = Array2::zeros(logits.raw_dim());
    for (i, &y) in labels.iter().enumerate() {
        let z = logits[[i, 0]];
        // softplus(z) - y z, computed stably
        loss += z.max(F::zero()) - z * y + (F::one() + (-z.abs()).exp()).ln();
        grad[[i, 0]] = (sigmoid(z) - y) / n;
    }
    (loss / n, grad)
}

/// Mean softmax cross-entropy against class indices, and its gradient.
pub fn softmax_cross_entropy<F: Float>(logits: ArrayView2<F>, labels: &[usize]) -> (F, Array2<F>) {
    let n = c::<F>(labels.len() as f64);
    let mut probs = softmax_rows(logits);
    let mut loss = F::zero();
    for (i, &y) in labels.iter().enumerate() {
        loss -= probs[[i, y]].max(c(1e-30)).ln();
        probs[[i, y]] -= F::one();
    }
    probs.mapv_inplace(|v| v / n);
    (loss / n, probs)
}

pub fn softmax_rows<F: Float>(logits: ArrayView2<F>) -> Array2<F> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

pub fn sigmoid<F: Float>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Flattened view of gradients for optimizers and checks.
pub fn flat<F: Float>(m: &Mlp<F>) -> Vec<F> {
    m.tensors().iter().flat_map(|t| t.iter().copied()).collect()
}

/// Slices `x` rows `[from, to)`.
pub fn rows<F: Float>(x: &Array2<F>, from: usize, to: usize) -> ArrayView2<'_, F> {
    x.slice(s![from..to, ..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn loss_of(m: &Mlp<f64>, x: &Array2<f64>, y: &[f64]) -> f64 {
        bce_with_logits(m.predict(x.view()).view(), y).0
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut r = rng::seeded(11);
        for trial in 0..5 {
            let mut m: Mlp<f64> = Mlp::new(8, 8, 8, 1, 0.0, &mut r);
            let x = Array2::from_shape_simple_fn((6, 8), || r.random::<f64>() * 2.0 - 1.0);
            let y: Vec<f64> = (0..6).map(|i| ((i + trial) % 2) as f64).collect();
            let cache = m.forward(x.view(), None);
            let (_, d_out) = bce_with_logits(cache.out.view(), &y);
            let (g, _) = m.backward(&cache, d_out.view());
            let analytic = flat(&g);
            let eps = 1e-6;
            let mut k = 0;
            for t in 0..6 {
                let len = m.tensors()[t].len();
                for j in 0..len {
                    let orig = m.tensors()[t][j];
                    m.tensors_mut()[t][j] = orig + eps;
                    let up = loss_of(&m, &x, &y);
                    m.tensors_mut()[t][j] = orig - eps;
                    let down = loss_of(&m, &x, &y);
                    m.tensors_mut()[t][j] = orig;
                    let numeric = (up - down) / (2.0 * eps);
                    let a = analytic[k];
                    let denom = a.abs().max(numeric.abs()).max(1e-8);
                    assert!(
                        (a - numeric).abs() / denom < 1e-4 || (a - numeric).abs() < 1e-9,
                        "param {t}/{j}: {a} vs {numeric}"
                    );
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn input_gradient_matches_differences() {
        let mut r = rng::seeded(3);
        let m: Mlp<f64> = Mlp::new(5, 7, 6, 3, 0.0, &mut r);
        let mut x = Array2::from_shape_simple_fn((4, 5), || r.random::<f64>() - 0.5);
        let labels = [0usize, 2, 1, 2];
        let cache = m.forward(x.view(), None);
        let (_, d_out) = softmax_cross_entropy(cache.out.view(), &labels);
        let (_, dx) = m.backward(&cache, d_out.view());
        let eps = 1e-6;
        for i in 0..4 {
            for j in 0..5 {
                let orig = x[[i, j]];
                x[[i, j]] = orig + eps;
                let up = softmax_cross_entropy(m.predict(x.view()).view(), &labels).0;
                x[[i, j]] = orig - eps;
                let down = softmax_cross_entropy(m.predict(x.view()).view(), &labels).0;
                x[[i, j]] = orig;
                let numeric = (up - down) / (2.0 * eps);
                assert!((dx[[i, j]] - numeric).abs() <= 1e-4 * numeric.abs().max(dx[[i, j]].abs()).max(1e-6));
            }
        }
    }

    #[test]
    fn dropout_only_in_training() {
        let mut r = rng::seeded(1);
        let m: Mlp<f32> = Mlp::new(4, 16, 16, 1, 0.5, &mut r);
        let x = Array2::from_elem((3, 4), 0.3f32);
        assert_eq!(m.predict(x.view()), m.predict(x.view()));
        let cache = m.forward(x.view(), Some(&mut r));
        let mask = cache.mask.unwrap();
        assert!(mask.iter().any(|&v| v == 0.0));
        assert!(mask.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn selu_values() {
        assert_eq!(selu(1.0f64), SELU_LAMBDA);
        assert!((selu(-1.0f64) - SELU_LAMBDA * SELU_ALPHA * ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax_rows(Array2::<f64>::zeros((1, 3)).view());
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}
