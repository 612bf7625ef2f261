use crate::error::Result;
use crate::numerics::{
    affine, affine_backward, relu, relu_backward, softmax_cross_entropy, softmax_rows, Matrix, Real, Rng,
};

pub const DISCRIMINATOR_WIDTH: usize = 256;

/// Two-layer ReLU classifier used by the adversarial algorithms.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T: Real = f32> {
    /// `[w1, b1, w2, b2]`.
    tensors: Vec<Matrix<T>>,
}

pub struct DiscriminatorCache<T: Real> {
    x: Matrix<T>,
    pre: Matrix<T>,
    hidden: Matrix<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(rng: &mut Rng, input_dim: usize, hidden: usize, outputs: usize) -> Self {
        let mut layer = |fan_in: usize, fan_out: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| T::from_f64(rng.uniform_range(-bound, bound)))
                .collect();
            (
                Matrix::from_vec(fan_in, fan_out, w).expect("sized"),
                Matrix::zeros(1, fan_out),
            )
        };
        let (w1, b1) = layer(input_dim, hidden);
        let (w2, b2) = layer(hidden, outputs);
        Self {
            tensors: vec![w1, b1, w2, b2],
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        self.tensors.iter().collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        self.tensors.iter_mut().collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().map(|&v| Real::to_f64(v)))
            .collect()
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = T::from_f64(*it.next().expect("flat length"));
            }
        }
    }

    fn zero_grads(&self) -> Vec<Matrix<T>> {
        self.tensors
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, DiscriminatorCache<T>)> {
        let pre = affine(x, &self.tensors[0], &self.tensors[1])?;
        let hidden = relu(&pre);
        let logits = affine(&hidden, &self.tensors[2], &self.tensors[3])?;
        Ok((
            logits,
            DiscriminatorCache {
                x: x.clone(),
                pre,
                hidden,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` and returns `d loss / d x`.
    fn backward(&self, cache: &DiscriminatorCache<T>, d_logits: &Matrix<T>, grads: &mut [Matrix<T>]) -> Result<Matrix<T>> {
        let (dh, dw2, db2) = affine_backward(&cache.hidden, &self.tensors[2], d_logits)?;
        let dz = relu_backward(&cache.pre, &dh)?;
        let (dx, dw1, db1) = affine_backward(&cache.x, &self.tensors[0], &dz)?;
        grads[0].add_scaled(&dw1, T::one())?;
        grads[1].add_scaled(&db1, T::one())?;
        grads[2].add_scaled(&dw2, T::one())?;
        grads[3].add_scaled(&db2, T::one())?;
        Ok(dx)
    }

    /// Mean cross-entropy and its gradient with respect to the input.
    pub fn input_gradient(&self, x: &Matrix<T>, labels: &[u32]) -> Result<(T, Matrix<T>)> {
        let (logits, cache) = self.forward(x)?;
        let (loss, d_logits) = softmax_cross_entropy(&logits, labels)?;
        let mut scratch = self.zero_grads();
        let dx = self.backward(&cache, &d_logits, &mut scratch)?;
        Ok((loss, dx))
    }

    /// Training objective `mean CE + gp_weight * R` and its parameter gradients, where `R`
    /// is the batch mean of the squared input-gradient norm of the sum-reduced CE.
    pub fn loss_and_grads(&self, x: &Matrix<T>, labels: &[u32], gp_weight: T) -> Result<(T, T, Vec<Matrix<T>>)> {
        let b = T::from_f64(x.rows() as f64);
        let (logits, cache) = self.forward(x)?;
        let (ce, d_logits) = softmax_cross_entropy(&logits, labels)?;
        let mut grads = self.zero_grads();
        self.backward(&cache, &d_logits, &mut grads)?;

        // G = P - Y is d(sum CE)/d logits, so B * d_logits.
        let g = d_logits.scale(b);
        let (w1, w2) = (&self.tensors[0], &self.tensors[2]);
        let mask = cache.pre.map(|v| if v > T::zero() { T::one() } else { T::zero() });
        let a = g.matmul_nt(w2)?.hadamard(&mask)?;
        let gx = a.matmul_nt(w1)?;
        let penalty = gx.data().iter().map(|&v| v * v).sum::<T>() / b;
        if gp_weight != T::zero() {
            let e = gx.scale(T::from_f64(2.0) / b);
            let mut pg = self.zero_grads();
            pg[0].add_scaled(&e.matmul_tn(&a)?, T::one())?;
            let q = e.matmul(w1)?.hadamard(&mask)?;
            pg[2].add_scaled(&q.matmul_tn(&g)?, T::one())?;
            let u = q.matmul(w2)?;
            let p = softmax_rows(&logits);
            let mut r = u.clone();
            for i in 0..r.rows() {
                let dot: T = p.row(i).iter().zip(u.row(i)).map(|(&pv, &uv)| pv * uv).sum();
                for (rv, &pv) in r.row_mut(i).iter_mut().zip(p.row(i)) {
                    *rv = pv * (*rv - dot);
                }
            }
            self.backward(&cache, &r, &mut pg)?;
            for (gr, p) in grads.iter_mut().zip(&pg) {
                gr.add_scaled(p, gp_weight)?;
            }
        }
        Ok((ce + gp_weight * penalty, penalty, grads))
    }
}
