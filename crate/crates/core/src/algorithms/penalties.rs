//! Penalty terms with closed-form gradients.

use super::discriminator::Discriminator;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, Matrix, OptimizerState, Real, Rng};

/// IRM penalty `g^2` with `g = (1/B) sum_i <p_i - y_i, l_i>`, the derivative of the
/// batch cross-entropy with respect to a scalar logit multiplier at 1.
///
/// `dg/dl_i = (1/B) [(p_i - y_i) + p_i * l_i - p_i (p_i . l_i)]` (softmax Jacobian applied to
/// `l_i`), so the returned gradient is `2 g dg/dl`.
pub fn irm_penalty<T: Real>(logits: &Matrix<T>, labels: &[u32]) -> Result<(T, Matrix<T>)> {
    crate::numerics::check_labels(labels, logits.cols())?;
    if labels.len() != logits.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    let inv_b = T::one() / T::from_f64(logits.rows() as f64);
    let p = softmax_rows(logits);
    let mut g = T::zero();
    let mut dg = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let (pi, li, y) = (p.row(i), logits.row(i), labels[i] as usize);
        let pl: T = pi.iter().zip(li).map(|(&a, &b)| a * b).sum();
        g += pl - li[y];
        for (c, d) in dg.row_mut(i).iter_mut().enumerate() {
            let onehot = if c == y { T::one() } else { T::zero() };
            *d = (pi[c] - onehot + pi[c] * li[c] - pi[c] * pl) * inv_b;
        }
    }
    g = g * inv_b;
    dg.scale_in_place(T::from_f64(2.0) * g);
    Ok((g * g, dg.checked("irm_penalty")?))
}

/// Mean over environments of the mean per-column population variance of features.
pub fn ib_penalty<T: Real>(features: &[&Matrix<T>]) -> Result<(T, Vec<Matrix<T>>)> {
    if features.is_empty() {
        return Err(Error::Config("ib_penalty needs at least one environment".into()));
    }
    let n_env = T::from_f64(features.len() as f64);
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(features.len());
    for f in features {
        if f.rows() < 2 {
            return Err(Error::Config("ib_penalty needs at least two rows per environment".into()));
        }
        let (b, d) = (T::from_f64(f.rows() as f64), T::from_f64(f.cols() as f64));
        let means = f.column_means();
        let mut centered = (*f).clone();
        for r in 0..f.rows() {
            for (v, &m) in centered.row_mut(r).iter_mut().zip(means.data()) {
                *v -= m;
            }
        }
        let var_sum: T = centered.data().iter().map(|&v| v * v).sum::<T>() / b;
        total += var_sum / d;
        centered.scale_in_place(T::from_f64(2.0) / (b * d * n_env));
        grads.push(centered);
    }
    Ok((total / n_env, grads))
}

/// An interpolated batch and the two label sets it is scored against.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch {
    pub x: Matrix<f32>,
    pub labels_a: Vec<u32>,
    pub labels_b: Vec<u32>,
    pub lambda: f64,
}

/// `x = lambda * x_a + (1 - lambda) * x_b` with `lambda ~ Beta(alpha, alpha)`.
pub fn mixup_batch(rng: &mut Rng, a: &Batch, b: &Batch, alpha: f64) -> Result<MixedBatch> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("mixup alpha must be positive, got {alpha}")));
    }
    let lambda = rng.beta(alpha, alpha)?;
    mix_with(a, b, lambda)
}

pub(crate) fn mix_with(a: &Batch, b: &Batch, lambda: f64) -> Result<MixedBatch> {
    if !a.x.same_shape(&b.x) {
        return Err(Error::Dimension("mixup batches differ in shape".into()));
    }
    let l = lambda as f32;
    let mut x = a.x.scale(l);
    x.add_scaled(&b.x, 1.0 - l)?;
    Ok(MixedBatch {
        x,
        labels_a: a.labels.clone(),
        labels_b: b.labels.clone(),
        lambda,
    })
}

/// OGM modulation: `k_m = 1 - tanh(alpha (rho_m - 1))` when `rho_m > 1`, else 1, where
/// `rho_m` is modality `m`'s score over the mean of the other modalities' scores.
pub fn ogm_coefficients(scores: &[f64], alpha: f64) -> Vec<f64> {
    let k = scores.len();
    if k < 2 || scores.iter().all(|&s| s == 0.0) {
        return vec![1.0; k];
    }
    let total: f64 = scores.iter().sum();
    scores
        .iter()
        .map(|&s| {
            let others = (total - s) / (k - 1) as f64;
            let rho = if others > 0.0 { s / others } else { f64::INFINITY };
            if rho > 1.0 {
                // 1 - tanh(x) = 2 / (1 + e^{2x}), exact where tanh would round to 1.
                let x = alpha * (rho - 1.0);
                (2.0 / (1.0 + (2.0 * x).exp())).max(f64::MIN_POSITIVE)
            } else {
                1.0
            }
        })
        .collect()
}

/// Mean over classes and modality pairs of the squared distance between class centroids.
/// A class missing from either modality's batch contributes no term.
pub fn modality_gap<T: Real>(features: &[&Matrix<T>], labels: &[&[u32]]) -> Result<(T, Vec<Matrix<T>>)> {
    let k = features.len();
    if k < 2 {
        return Err(Error::Config("modality_gap needs at least two modalities".into()));
    }
    if labels.len() != k {
        return Err(Error::Dimension("one label vector per modality required".into()));
    }
    let dim = features[0].cols();
    let classes = labels.iter().flat_map(|l| l.iter()).max().map_or(0, |&m| m as usize + 1);
    // centroids[m][c] and counts[m][c]
    let mut centroids = vec![vec![vec![T::zero(); dim]; classes]; k];
    let mut counts = vec![vec![0usize; classes]; k];
    for m in 0..k {
        if features[m].cols() != dim || features[m].rows() != labels[m].len() {
            return Err(Error::Dimension("modality_gap inputs disagree in shape".into()));
        }
        for (r, &y) in labels[m].iter().enumerate() {
            counts[m][y as usize] += 1;
            for (c, &v) in centroids[m][y as usize].iter_mut().zip(features[m].row(r)) {
                *c += v;
            }
        }
        for c in 0..classes {
            if counts[m][c] > 0 {
                let n = T::from_f64(counts[m][c] as f64);
                centroids[m][c].iter_mut().for_each(|v| *v = *v / n);
            }
        }
    }
    let mut terms = 0usize;
    let mut gap = T::zero();
    // d gap / d centroid, scaled by the term count at the end.
    let mut d_cent = vec![vec![vec![T::zero(); dim]; classes]; k];
    for c in 0..classes {
        for m in 0..k {
            for m2 in m + 1..k {
                if counts[m][c] == 0 || counts[m2][c] == 0 {
                    continue;
                }
                terms += 1;
                for j in 0..dim {
                    let diff = centroids[m][c][j] - centroids[m2][c][j];
                    gap += diff * diff;
                    let two = T::from_f64(2.0) * diff;
                    d_cent[m][c][j] += two;
                    d_cent[m2][c][j] -= two;
                }
            }
        }
    }
    let mut grads: Vec<Matrix<T>> = features.iter().map(|f| Matrix::zeros(f.rows(), dim)).collect();
    if terms == 0 {
        return Ok((T::zero(), grads));
    }
    let t = T::from_f64(terms as f64);
    for m in 0..k {
        for (r, &y) in labels[m].iter().enumerate() {
            let n = T::from_f64(counts[m][y as usize] as f64);
            for (g, &d) in grads[m].row_mut(r).iter_mut().zip(&d_cent[m][y as usize]) {
                *g = d / (n * t);
            }
        }
    }
    Ok((gap / t, grads))
}

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^{-1/5}`, using the sample standard deviation
/// and linearly interpolated quartiles. Zero when all values coincide.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        let pos = q * (n - 1) as f64;
        let (lo, frac) = (pos.floor() as usize, pos.fract());
        let hi = (lo + 1).min(n - 1);
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    };
    let iqr = quantile(0.75) - quantile(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (n as f64).powf(-0.2)
}

pub const MIN_BANDWIDTH: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantileRisk {
    pub value: f64,
    pub bandwidth: f64,
    /// `d value / d risk_k` with the bandwidth held fixed; sums to 1.
    pub weights: Vec<f64>,
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm_erfc(-x / std::f64::consts::SQRT_2)
}

/// Complementary error function (Numerical Recipes `erfcc`, relative error < 1.2e-7).
fn libm_erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98
                                + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Smallest `r` with `KDE-CDF(r) >= q` for a Gaussian KDE over `risks`, found by bisection
/// on `[min - 3h, max + 3h]` (clamped there for extreme `q`).
pub fn quantile_risk(risks: &[f64], q: f64) -> Result<QuantileRisk> {
    if risks.is_empty() || !(q > 0.0 && q < 1.0) || risks.iter().any(|r| !r.is_finite()) {
        return Err(Error::Config(format!(
            "quantile_risk needs finite risks and q in (0, 1), got q = {q}"
        )));
    }
    let n = risks.len() as f64;
    let lo_r = risks.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_r = risks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo_r == hi_r {
        return Ok(QuantileRisk {
            value: lo_r,
            bandwidth: MIN_BANDWIDTH,
            weights: vec![1.0 / n; risks.len()],
        });
    }
    let h = silverman_bandwidth(risks).max(MIN_BANDWIDTH);
    let cdf = |r: f64| risks.iter().map(|&x| normal_cdf((r - x) / h)).sum::<f64>() / n;
    let (mut lo, mut hi) = (lo_r - 3.0 * h, hi_r + 3.0 * h);
    let value = if cdf(hi) < q {
        hi
    } else if cdf(lo) >= q {
        lo
    } else {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) >= q {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
                break;
            }
        }
        hi
    };
    let dens: Vec<f64> = risks
        .iter()
        .map(|&x| (-0.5 * ((value - x) / h).powi(2)).exp())
        .collect();
    let total: f64 = dens.iter().sum();
    let weights = if total > 0.0 {
        dens.iter().map(|d| d / total).collect()
    } else {
        // Clamped far in a tail: all mass goes to the nearest risk.
        let nearest = if value >= hi_r { hi_r } else { lo_r };
        let hits = risks.iter().filter(|&&r| r == nearest).count() as f64;
        risks.iter().map(|&r| if r == nearest { 1.0 / hits } else { 0.0 }).collect()
    };
    Ok(QuantileRisk {
        value,
        bandwidth: h,
        weights,
    })
}

/// Flipped conditional bottleneck: for every anchor with a same-label, same-domain
/// partner, the mean log-probability of its same-domain partners under a softmax over
/// cosine similarity / `temperature` restricted to same-label samples. Minimizing it
/// makes the domain unidentifiable within each class. Returns the loss and its gradient.
pub fn cond_cad_loss<T: Real>(
    features: &Matrix<T>,
    labels: &[u32],
    domains: &[usize],
    temperature: T,
) -> Result<(T, Matrix<T>)> {
    let n = features.rows();
    if labels.len() != n || domains.len() != n {
        return Err(Error::Dimension("cond_cad_loss inputs disagree in length".into()));
    }
    if !(temperature > T::zero()) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let floor = T::from_f64(1e-12);
    let mut z = features.clone();
    let mut norms = Vec::with_capacity(n);
    for r in 0..n {
        let row = z.row_mut(r);
        let nr = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(floor);
        row.iter_mut().for_each(|v| *v = *v / nr);
        norms.push(nr);
    }
    let inv_t = T::one() / temperature;
    let sim = z.matmul_nt(&z)?.scale(inv_t);
    let mut d_sim = Matrix::zeros(n, n);
    let mut loss = T::zero();
    let valid: Vec<usize> = (0..n)
        .filter(|&i| (0..n).any(|j| j != i && labels[j] == labels[i] && domains[j] == domains[i]))
        .collect();
    if valid.is_empty() {
        return Ok((T::zero(), Matrix::zeros(n, features.cols())));
    }
    let inv_v = T::one() / T::from_f64(valid.len() as f64);
    for &i in &valid {
        let group: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        let same: Vec<usize> = group.iter().copied().filter(|&j| domains[j] == domains[i]).collect();
        let max = group.iter().map(|&j| sim.get(i, j)).fold(T::neg_infinity(), T::max);
        let lse = group.iter().map(|&j| (sim.get(i, j) - max).exp()).sum::<T>().ln() + max;
        let inv_s = T::one() / T::from_f64(same.len() as f64);
        loss += same.iter().map(|&j| sim.get(i, j) - lse).sum::<T>() * inv_s * inv_v;
        for &j in &group {
            let q = (sim.get(i, j) - lse).exp();
            let hit = if domains[j] == domains[i] { inv_s } else { T::zero() };
            d_sim.set(i, j, (hit - q) * inv_v);
        }
    }
    // sim = Z Z^T / t, so dZ = (dS + dS^T) Z / t, then through the row normalization.
    let sym = d_sim.add(&d_sim.transpose())?;
    let dz = sym.matmul(&z)?.scale(inv_t);
    let mut grad = dz.clone();
    for r in 0..n {
        let zr = z.row(r);
        let dot: T = zr.iter().zip(dz.row(r)).map(|(&a, &b)| a * b).sum();
        for (g, &zv) in grad.row_mut(r).iter_mut().zip(zr) {
            *g = (*g - zv * dot) / norms[r];
        }
    }
    Ok((loss, grad))
}

/// Elementwise mean of per-modality features.
pub fn fuse_concat<T: Real>(features: &[&Matrix<T>]) -> Result<Matrix<T>> {
    let first = features
        .first()
        .ok_or_else(|| Error::Config("fusion of zero modalities".into()))?;
    let mut out = (*first).clone();
    for f in &features[1..] {
        out.add_scaled(f, T::one())?;
    }
    out.scale_in_place(T::one() / T::from_f64(features.len() as f64));
    Ok(out)
}

pub const STYLE_STD_FLOOR: f64 = 1e-6;

/// Per-row mean and population standard deviation (floored), plus whether the floor hit.
pub fn style_stats<T: Real>(x: &Matrix<T>) -> (Vec<T>, Vec<T>, Vec<bool>) {
    let d = T::from_f64(x.cols() as f64);
    let floor = T::from_f64(STYLE_STD_FLOOR);
    let mut means = Vec::with_capacity(x.rows());
    let mut stds = Vec::with_capacity(x.rows());
    let mut clamped = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d;
        let sd = var.sqrt();
        means.push(mean);
        stds.push(sd.max(floor));
        clamped.push(sd < floor);
    }
    (means, stds, clamped)
}

/// Style- and content-randomized views of a feature batch with their backward passes.
///
/// With partner `j = perm[i]` and weight `u_i`, the style view of row `i` keeps its own
/// normalized content and takes the interpolated statistics
/// `mean' = u mean_i + (1 - u) mean_j`, `std' = u std_i + (1 - u) std_j`; the content view
/// takes row `j`'s normalized content (treated as a constant) with row `i`'s statistics.
#[derive(Clone, Debug)]
pub struct StyleRandomized<T: Real = f32> {
    pub style: Matrix<T>,
    pub content: Matrix<T>,
    pub perm: Vec<usize>,
    pub u: Vec<T>,
    normalized: Matrix<T>,
    stds: Vec<T>,
    clamped: Vec<bool>,
}

impl<T: Real> StyleRandomized<T> {
    pub fn new(x: &Matrix<T>, perm: Vec<usize>, u: Vec<T>) -> Result<Self> {
        let b = x.rows();
        if perm.len() != b || u.len() != b || perm.iter().any(|&j| j >= b) {
            return Err(Error::Dimension("style permutation/weights do not match the batch".into()));
        }
        let (means, stds, clamped) = style_stats(x);
        let mut normalized = x.clone();
        for r in 0..b {
            normalized
                .row_mut(r)
                .iter_mut()
                .for_each(|v| *v = (*v - means[r]) / stds[r]);
        }
        let mut style = normalized.clone();
        let mut content = Matrix::zeros(b, x.cols());
        for i in 0..b {
            let j = perm[i];
            let one = T::one();
            let m = u[i] * means[i] + (one - u[i]) * means[j];
            let s = u[i] * stds[i] + (one - u[i]) * stds[j];
            style.row_mut(i).iter_mut().for_each(|v| *v = *v * s + m);
            for (c, &nv) in content.row_mut(i).iter_mut().zip(normalized.row(j)) {
                *c = nv * stds[i] + means[i];
            }
        }
        Ok(Self {
            style,
            content,
            perm,
            u,
            normalized,
            stds,
            clamped,
        })
    }

    /// Adds `d mean_r` and `d std_r` contributions, then the normalization backward.
    fn stats_backward(&self, d_norm: Option<&Matrix<T>>, d_mean: &[T], d_std: &[T]) -> Matrix<T> {
        let (b, dim) = (self.normalized.rows(), self.normalized.cols());
        let inv_d = T::one() / T::from_f64(dim as f64);
        let mut dx = Matrix::zeros(b, dim);
        for r in 0..b {
            let xh = self.normalized.row(r);
            let s = self.stds[r];
            // x_hat = (x - mean) / std with both statistics depending on x.
            let (mean_g, mean_gx) = match d_norm {
                Some(g) => {
                    let g = g.row(r);
                    (
                        g.iter().copied().sum::<T>() * inv_d,
                        g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * inv_d,
                    )
                }
                None => (T::zero(), T::zero()),
            };
            let std_live = if self.clamped[r] { T::zero() } else { T::one() };
            for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                let gn = d_norm.map_or(T::zero(), |g| g.get(r, c));
                let through_norm = (gn - mean_g - std_live * xh[c] * mean_gx) / s;
                *o = through_norm + d_mean[r] * inv_d + std_live * d_std[r] * xh[c] * inv_d;
            }
        }
        dx
    }

    /// Gradient with respect to the input given `d loss / d style`.
    pub fn style_backward(&self, d_style: &Matrix<T>) -> Matrix<T> {
        let b = self.style.rows();
        let one = T::one();
        let mut d_norm = d_style.clone();
        let mut d_mean = vec![T::zero(); b];
        let mut d_std = vec![T::zero(); b];
        for i in 0..b {
            let j = self.perm[i];
            let u = self.u[i];
            let s_new = u * self.stds[i] + (one - u) * self.stds[j];
            let g = d_style.row(i);
            let dm: T = g.iter().copied().sum();
            let ds: T = g.iter().zip(self.normalized.row(i)).map(|(&a, &b)| a * b).sum();
            d_mean[i] += u * dm;
            d_mean[j] += (one - u) * dm;
            d_std[i] += u * ds;
            d_std[j] += (one - u) * ds;
            d_norm.row_mut(i).iter_mut().for_each(|v| *v = *v * s_new);
        }
        self.stats_backward(Some(&d_norm), &d_mean, &d_std)
    }

    /// Gradient with respect to the input given `d loss / d content`; the partner's
    /// normalized content is treated as a constant.
    pub fn content_backward(&self, d_content: &Matrix<T>) -> Matrix<T> {
        let b = self.content.rows();
        let mut d_mean = vec![T::zero(); b];
        let mut d_std = vec![T::zero(); b];
        for i in 0..b {
            let g = d_content.row(i);
            d_mean[i] = g.iter().copied().sum();
            d_std[i] = g
                .iter()
                .zip(self.normalized.row(self.perm[i]))
                .map(|(&a, &b)| a * b)
                .sum();
        }
        self.stats_backward(None, &d_mean, &d_std)
    }
}

/// Draws a random partner permutation and weights `u ~ U(0, 1)`.
pub fn style_randomize<T: Real>(features: &Matrix<T>, rng: &mut Rng) -> Result<StyleRandomized<T>> {
    if features.rows() < 2 {
        return Err(Error::Config("style randomization needs at least two rows".into()));
    }
    let perm = rng.permutation(features.rows());
    let u = (0..features.rows()).map(|_| T::from_f64(rng.uniform())).collect();
    StyleRandomized::new(features, perm, u)
}

/// Result of one adversarial round: the discriminator's updated loss, and the learner-side
/// loss with its gradient for each feature block.
#[derive(Clone, Debug)]
pub struct AdversarialOutcome {
    pub discriminator_loss: f64,
    pub gradient_penalty: f64,
    pub learner_loss: f64,
    pub d_features: Vec<Matrix<f32>>,
}

fn one_hot_concat(features: &Matrix<f32>, labels: &[u32], classes: usize) -> Result<Matrix<f32>> {
    let mut onehot = Matrix::zeros(features.rows(), classes);
    for (r, &y) in labels.iter().enumerate() {
        onehot.set(r, y as usize, 1.0);
    }
    features.hstack(&onehot)
}

/// Class-conditional domain adversary: the discriminator learns the source modality of
/// `[feature, onehot(label)]` for `d_steps` steps (with gradient penalty), then the learner
/// receives the gradient of `-lambda * discriminator loss` with respect to its features.
#[allow(clippy::too_many_arguments)]
pub fn conditional_domain_adversarial(
    features: &[&Matrix<f32>],
    labels: &[&[u32]],
    num_classes: usize,
    disc: &mut Discriminator<f32>,
    disc_opt: &mut OptimizerState<f32>,
    lambda: f64,
    grad_penalty: f64,
    d_steps: usize,
) -> Result<AdversarialOutcome> {
    if features.len() < 2 {
        return Err(Error::Config(
            "conditional domain adversary needs at least two modalities".into(),
        ));
    }
    let blocks = features
        .iter()
        .zip(labels)
        .map(|(f, l)| one_hot_concat(f, l, num_classes))
        .collect::<Result<Vec<_>>>()?;
    let input = Matrix::vstack(&blocks.iter().collect::<Vec<_>>())?;
    let domains: Vec<u32> = features
        .iter()
        .enumerate()
        .flat_map(|(k, f)| std::iter::repeat_n(k as u32, f.rows()))
        .collect();
    let (mut d_loss, mut gp) = (0.0, 0.0);
    for _ in 0..d_steps {
        let (loss, pen, grads) = disc.loss_and_grads(&input, &domains, grad_penalty as f32)?;
        (d_loss, gp) = (loss as f64, pen as f64);
        disc_opt.step(&mut disc.tensors_mut(), &grads.iter().collect::<Vec<_>>(), d_loss)?;
    }
    let (adv_loss, dx) = disc.input_gradient(&input, &domains)?;
    let feat_dim = features[0].cols();
    let mut d_features = Vec::with_capacity(features.len());
    let mut start = 0;
    for f in features {
        let mut g = dx.row_slice(start, start + f.rows()).col_slice(0, feat_dim);
        g.scale_in_place(-(lambda as f32));
        d_features.push(g);
        start += f.rows();
    }
    Ok(AdversarialOutcome {
        discriminator_loss: d_loss,
        gradient_penalty: gp,
        learner_loss: -lambda * adv_loss as f64,
        d_features,
    })
}

/// Uniformity adversary: the discriminator separates `tanh(features)` (class 0) from
/// `U[-1, 1]` samples (class 1); the learner receives `lambda` times the non-saturating
/// generator loss `CE(D(tanh f), 1)`.
pub fn uniformity_loss(
    features: &Matrix<f32>,
    disc: &mut Discriminator<f32>,
    disc_opt: &mut OptimizerState<f32>,
    lambda: f64,
    rng: &mut Rng,
) -> Result<AdversarialOutcome> {
    let squashed = features.map(f32::tanh);
    let uniform = Matrix::from_vec(
        features.rows(),
        features.cols(),
        (0..features.rows() * features.cols())
            .map(|_| rng.uniform_range(-1.0, 1.0) as f32)
            .collect(),
    )?;
    let input = Matrix::vstack(&[&squashed, &uniform])?;
    let labels: Vec<u32> = (0..2 * features.rows())
        .map(|i| u32::from(i >= features.rows()))
        .collect();
    let (d_loss, _, grads) = disc.loss_and_grads(&input, &labels, 0.0)?;
    disc_opt.step(&mut disc.tensors_mut(), &grads.iter().collect::<Vec<_>>(), d_loss as f64)?;
    let real = vec![1u32; features.rows()];
    let (gen_loss, d_squashed) = disc.input_gradient(&squashed, &real)?;
    let mut d_features = d_squashed;
    for (g, &t) in d_features.data_mut().iter_mut().zip(squashed.data()) {
        *g *= (1.0 - t * t) * lambda as f32;
    }
    Ok(AdversarialOutcome {
        discriminator_loss: d_loss as f64,
        gradient_penalty: 0.0,
        learner_loss: lambda * gen_loss as f64,
        d_features: vec![d_features],
    })
}
