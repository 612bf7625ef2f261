//! The learner: a four-layer ReLU featurizer followed by a linear classifier.
//!
//! Layer widths are `D_in -> 512 -> 256 -> 512 -> 1024` for the featurizer and
//! `1024 -> C` for the classifier. ReLU sits between featurizer layers only; the
//! last featurizer layer is linear unless `trailing_relu` is switched on.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{
    affine, affine_backward, relu, relu_backward, softmax_cross_entropy, Matrix, Real, Rng,
};

/// Output widths of the four featurizer layers.
pub const FEATURIZER_WIDTHS: [usize; 4] = [512, 256, 512, 1024];
/// Width of the learned feature vector consumed by the classifier.
pub const FEATURE_DIM: usize = 1024;
pub const DEFAULT_INPUT_DIM: usize = 1024;

const FEATURIZER_LAYERS: usize = 4;
const NUM_LAYERS: usize = FEATURIZER_LAYERS + 1;

const CHECKPOINT_MAGIC: &[u8; 4] = b"MBLP";
const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerParams<T: Real = f32> {
    input_dim: usize,
    num_classes: usize,
    trailing_relu: bool,
    /// `[w0, b0, w1, b1, ..., w4, b4]`; weights are `in x out`, biases `1 x out`.
    tensors: Vec<Matrix<T>>,
}

/// Activations saved by [`LearnerParams::featurize`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T: Real = f32> {
    inputs: Vec<Matrix<T>>,
    pre: Vec<Matrix<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows()
    }

    /// Pre-activation output of featurizer layer `layer`.
    pub fn pre_activation(&self, layer: usize) -> &Matrix<T> {
        &self.pre[layer]
    }
}

/// Kaiming-uniform initialization with zero biases, deterministic in `seed`.
pub fn init_learner(seed: u64, input_dim: usize, num_classes: usize) -> Result<LearnerParams<f32>> {
    LearnerParams::init(&mut Rng::derive("learner-init", seed), input_dim, num_classes)
}

impl<T: Real> LearnerParams<T> {
    /// Weights are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, i.e. Kaiming-uniform
    /// with negative slope `sqrt(5)` (the usual linear-layer convention); biases start at 0.
    pub fn init(rng: &mut Rng, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::Config(
                "learner needs input_dim >= 1 and num_classes >= 1".into(),
            ));
        }
        let dims = layer_dims(input_dim, num_classes);
        let mut tensors = Vec::with_capacity(2 * NUM_LAYERS);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| T::from_f64(rng.uniform_range(-bound, bound)))
                .collect();
            tensors.push(Matrix::from_vec(fan_in, fan_out, data)?);
            tensors.push(Matrix::zeros(1, fan_out));
        }
        Ok(Self {
            input_dim,
            num_classes,
            trailing_relu: false,
            tensors,
        })
    }

    pub fn with_trailing_relu(mut self, on: bool) -> Self {
        self.trailing_relu = on;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn trailing_relu(&self) -> bool {
        self.trailing_relu
    }

    /// `[D_in, 512, 256, 512, 1024, C]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        layer_dims(self.input_dim, self.num_classes)
    }

    pub fn num_layers(&self) -> usize {
        NUM_LAYERS
    }

    pub fn weight(&self, layer: usize) -> &Matrix<T> {
        &self.tensors[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Matrix<T> {
        &self.tensors[2 * layer + 1]
    }

    pub fn classifier_weight(&self) -> &Matrix<T> {
        self.weight(FEATURIZER_LAYERS)
    }

    pub fn tensors(&self) -> &[Matrix<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        self.tensors.iter_mut().collect()
    }

    pub fn tensor_refs(&self) -> Vec<&Matrix<T>> {
        self.tensors.iter().collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Matrix::zeros(t.rows(), t.cols()))
                .collect(),
            ..*self
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    pub fn same_structure(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.same_shape(b))
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, alpha: T) -> Result<()> {
        if !self.same_structure(other) {
            return Err(Error::Dimension("learner structures differ".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_scaled(b, alpha)?;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if !self.same_structure(other) {
            return Err(Error::Dimension("learner structures differ".into()));
        }
        let mut m = T::zero();
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            m = m.max(a.max_abs_diff(b)?);
        }
        Ok(m)
    }

    /// All parameters in tensor order, widened to `f64`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().map(|&v| Real::to_f64(v)))
            .collect()
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_parameters()
            )));
        }
        let mut it = flat.iter();
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = T::from_f64(*it.next().expect("length checked"));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> LearnerParams<U> {
        LearnerParams {
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            trailing_relu: self.trailing_relu,
            tensors: self.tensors.iter().map(Matrix::cast).collect(),
        }
    }

    /// Runs the featurizer and keeps what the backward pass needs.
    pub fn featurize(&self, x: &Matrix<T>) -> Result<(Matrix<T>, ForwardCache<T>)> {
        if x.cols() != self.input_dim {
            return Err(Error::Dimension(format!(
                "learner expects {} input columns, got {}",
                self.input_dim,
                x.cols()
            )));
        }
        let mut inputs = Vec::with_capacity(FEATURIZER_LAYERS);
        let mut pre = Vec::with_capacity(FEATURIZER_LAYERS);
        let mut h = x.clone();
        for l in 0..FEATURIZER_LAYERS {
            let z = affine(&h, self.weight(l), self.bias(l))?;
            let last = l + 1 == FEATURIZER_LAYERS;
            let next = if !last || self.trailing_relu {
                relu(&z)
            } else {
                z.clone()
            };
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Ok((h.checked("featurize")?, ForwardCache { inputs, pre }))
    }

    pub fn classify(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        affine(features, self.classifier_weight(), self.bias(FEATURIZER_LAYERS))?
            .checked("classify")
    }

    pub fn logits(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let (f, _) = self.featurize(x)?;
        self.classify(&f)
    }

    /// Accumulates classifier gradients into `grads` and returns `d loss / d features`.
    pub fn classifier_backward(
        &self,
        features: &Matrix<T>,
        d_logits: &Matrix<T>,
        grads: &mut Self,
    ) -> Result<Matrix<T>> {
        let (dx, dw, db) = affine_backward(features, self.classifier_weight(), d_logits)?;
        let l = FEATURIZER_LAYERS;
        grads.tensors[2 * l].add_scaled(&dw, T::one())?;
        grads.tensors[2 * l + 1].add_scaled(&db, T::one())?;
        Ok(dx)
    }

    /// Accumulates featurizer gradients into `grads` given `d loss / d features`.
    pub fn featurizer_backward(
        &self,
        cache: &ForwardCache<T>,
        d_features: &Matrix<T>,
        grads: &mut Self,
    ) -> Result<()> {
        let mut d = if self.trailing_relu {
            relu_backward(&cache.pre[FEATURIZER_LAYERS - 1], d_features)?
        } else {
            d_features.clone()
        };
        for l in (0..FEATURIZER_LAYERS).rev() {
            let input = &cache.inputs[l];
            if l == 0 {
                let dw = input.matmul_tn(&d)?;
                grads.tensors[0].add_scaled(&dw, T::one())?;
                grads.tensors[1].add_scaled(&d.column_sums(), T::one())?;
            } else {
                let (dx, dw, db) = affine_backward(input, self.weight(l), &d)?;
                grads.tensors[2 * l].add_scaled(&dw, T::one())?;
                grads.tensors[2 * l + 1].add_scaled(&db, T::one())?;
                d = relu_backward(&cache.pre[l - 1], &dx)?;
            }
        }
        Ok(())
    }

    /// Mean cross-entropy of the full learner with gradients for every tensor.
    pub fn forward_loss_backward(&self, x: &Matrix<T>, labels: &[u32]) -> Result<(T, Self, Matrix<T>)> {
        let (features, cache) = self.featurize(x)?;
        let logits = self.classify(&features)?;
        let (loss, d_logits) = softmax_cross_entropy(&logits, labels)?;
        let mut grads = self.zeros_like();
        let d_features = self.classifier_backward(&features, &d_logits, &mut grads)?;
        self.featurizer_backward(&cache, &d_features, &mut grads)?;
        if !grads.is_finite() {
            return Err(Error::NumericOverflow("forward_loss_backward".into()));
        }
        Ok((loss, grads, logits))
    }

    /// Arg-max class per row; ties go to the lowest class index.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<u32>> {
        Ok(argmax_rows(&self.logits(x)?))
    }
}

/// Arg-max per row, lowest index on ties.
pub fn argmax_rows<T: Real>(logits: &Matrix<T>) -> Vec<u32> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect()
}

fn layer_dims(input_dim: usize, num_classes: usize) -> Vec<usize> {
    let mut d = vec![input_dim];
    d.extend_from_slice(&FEATURIZER_WIDTHS);
    d.push(num_classes);
    d
}

/// Convex combination of learners with identical structure.
pub fn average_params<T: Real>(params: &[&LearnerParams<T>], weights: &[f64]) -> Result<LearnerParams<T>> {
    let first = params
        .first()
        .ok_or_else(|| Error::Config("average of zero learners".into()))?;
    if params.len() != weights.len() {
        return Err(Error::Config(format!(
            "{} learners but {} weights",
            params.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-6 || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Config(format!(
            "averaging weights must be nonnegative and sum to 1 (sum = {total})"
        )));
    }
    let mut out = first.zeros_like();
    for (p, &w) in params.iter().zip(weights) {
        if !out.same_structure(p) {
            return Err(Error::Dimension("cannot average learners of different shapes".into()));
        }
        if w == 0.0 {
            continue;
        }
        out.add_scaled(p, T::from_f64(w))?;
    }
    Ok(out)
}

impl LearnerParams<f32> {
    /// Little-endian `MBLP` container: magic, `u16` version, `u32` layer count, then per
    /// layer `u32` rows, `u32` cols, the row-major weights and the bias.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(NUM_LAYERS as u32).to_le_bytes())?;
        for l in 0..NUM_LAYERS {
            let wt = self.weight(l);
            w.write_all(&(wt.rows() as u32).to_le_bytes())?;
            w.write_all(&(wt.cols() as u32).to_le_bytes())?;
            for v in wt.data().iter().chain(self.bias(l).data()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let bad = |d: &str| Error::format("MBLP checkpoint", d);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u16(&mut r).map_err(|_| bad("truncated header"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let layers = read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
        if layers != NUM_LAYERS {
            return Err(bad(&format!("expected {NUM_LAYERS} layers, found {layers}")));
        }
        let mut tensors = Vec::with_capacity(2 * layers);
        for _ in 0..layers {
            let rows = read_u32(&mut r).map_err(|_| bad("truncated layer header"))? as usize;
            let cols = read_u32(&mut r).map_err(|_| bad("truncated layer header"))? as usize;
            let w = read_f32s(&mut r, rows * cols).map_err(|_| bad("truncated weights"))?;
            let b = read_f32s(&mut r, cols).map_err(|_| bad("truncated bias"))?;
            tensors.push(Matrix::from_vec(rows, cols, w)?);
            tensors.push(Matrix::from_vec(1, cols, b)?);
        }
        let input_dim = tensors[0].rows();
        let num_classes = tensors[2 * NUM_LAYERS - 2].cols();
        let expected = layer_dims(input_dim, num_classes);
        for (l, w) in expected.windows(2).enumerate() {
            tensors[2 * l].ensure_shape(w[0], w[1], "checkpoint layer")?;
        }
        Ok(Self {
            input_dim,
            num_classes,
            trailing_relu: false,
            tensors,
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_checkpoint(BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(BufReader::new(f))
    }
}

fn read_u16<R: Read>(r: &mut R) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, relative_error};

    #[test]
    fn default_layer_shapes() {
        let p = init_learner(0, 1024, 20).unwrap();
        assert_eq!(p.layer_dims(), vec![1024, 512, 256, 512, 1024, 20]);
        assert_eq!(p.classifier_weight().shape(), (1024, 20));
        let p = init_learner(0, 1024, 23).unwrap();
        assert_eq!(p.classifier_weight().shape(), (1024, 23));
        assert!(init_learner(0, 0, 3).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_learner(4, 16, 5).unwrap(), init_learner(4, 16, 5).unwrap());
        assert_ne!(init_learner(4, 16, 5).unwrap(), init_learner(5, 16, 5).unwrap());
    }

    #[test]
    fn zero_input_with_zero_bias_gives_zero_features() {
        let p = init_learner(1, 8, 3).unwrap();
        let (f, _) = p.featurize(&Matrix::zeros(2, 8)).unwrap();
        assert_eq!(f.cols(), FEATURE_DIM);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_rows_are_independent() {
        let p = init_learner(2, 8, 3).unwrap();
        let mut rng = Rng::new(0);
        let row: Vec<f32> = (0..8).map(|_| rng.normal() as f32).collect();
        let one = Matrix::from_rows(&[row.clone()]).unwrap();
        let two = Matrix::from_rows(&[row.clone(), row]).unwrap();
        let (f1, _) = p.featurize(&one).unwrap();
        let (f2, _) = p.featurize(&two).unwrap();
        assert_eq!(f1.row(0), f2.row(0));
        assert_eq!(f2.row(0), f2.row(1));
    }

    #[test]
    fn trailing_relu_flag_controls_sign() {
        let mut rng = Rng::new(1);
        let x = Matrix::from_vec(6, 8, (0..48).map(|_| rng.normal() as f32).collect()).unwrap();
        let p = init_learner(3, 8, 3).unwrap();
        let (f, _) = p.featurize(&x).unwrap();
        assert!(f.data().iter().any(|&v| v < 0.0));
        let (f, _) = p.clone().with_trailing_relu(true).featurize(&x).unwrap();
        assert!(f.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let p = init_learner(0, 8, 3).unwrap();
        assert!(matches!(
            p.featurize(&Matrix::zeros(1, 7)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(7);
        let p = LearnerParams::<f64>::init(&mut rng, 6, 4).unwrap();
        let x = Matrix::from_vec(3, 6, (0..18).map(|_| rng.normal()).collect()).unwrap();
        let labels = [0, 3, 1];
        let (_, grads, _) = p.forward_loss_backward(&x, &labels).unwrap();
        let flat = p.to_flat();
        // Check a strided subset of coordinates to keep the test quick.
        let picks: Vec<usize> = (0..flat.len()).step_by(4999).collect();
        let mut probe = p.clone();
        let mut full = flat.clone();
        let fd = finite_difference_gradient(
            |sub| {
                for (k, &i) in picks.iter().enumerate() {
                    full[i] = sub[k];
                }
                probe.set_from_flat(&full).unwrap();
                probe.forward_loss_backward(&x, &labels).unwrap().0
            },
            &picks.iter().map(|&i| flat[i]).collect::<Vec<_>>(),
            1e-5,
        )
        .unwrap();
        let g = grads.to_flat();
        let analytic: Vec<f64> = picks.iter().map(|&i| g[i]).collect();
        assert!(relative_error(&analytic, &fd) < 1e-5);
    }

    #[test]
    fn initial_loss_is_near_log_c() {
        let mut rng = Rng::new(9);
        let p = init_learner(9, 32, 10).unwrap();
        let x = Matrix::from_vec(64, 32, (0..64 * 32).map(|_| rng.normal() as f32).collect()).unwrap();
        let labels: Vec<u32> = (0..64).map(|_| rng.below(10) as u32).collect();
        let (loss, _, _) = p.forward_loss_backward(&x, &labels).unwrap();
        let ln_c = 10f32.ln();
        assert!((loss - ln_c).abs() < 0.1 * ln_c, "{loss}");
    }

    #[test]
    fn averaging() {
        let p = init_learner(1, 4, 2).unwrap();
        assert_eq!(average_params(&[&p, &p], &[0.5, 0.5]).unwrap(), p);
        let q = init_learner(2, 4, 2).unwrap();
        assert_eq!(average_params(&[&p, &q], &[1.0, 0.0]).unwrap(), p);
        let mut neg = p.zeros_like();
        neg.add_scaled(&p, -1.0).unwrap();
        let z = average_params(&[&p, &neg], &[0.5, 0.5]).unwrap();
        assert!(z.to_flat().iter().all(|&v| v == 0.0));
        assert!(average_params(&[&p, &q], &[0.7, 0.7]).is_err());
        let other = init_learner(1, 5, 2).unwrap();
        assert!(average_params(&[&p, &other], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn argmax_tie_break_and_shift_invariance() {
        let logits = Matrix::<f32>::from_rows(&[[0.0, 2.0, 1.0, 2.0], [5.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(argmax_rows(&logits), vec![1, 0]);
        let shifted = logits.map(|v| v + 3.5);
        assert_eq!(argmax_rows(&shifted), vec![1, 0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = init_learner(3, 12, 7).unwrap();
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MBLP");
        let q = LearnerParams::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        buf.truncate(buf.len() - 3);
        assert!(LearnerParams::read_checkpoint(buf.as_slice()).is_err());
    }
}
