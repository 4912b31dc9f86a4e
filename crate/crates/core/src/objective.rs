//! Contrastive and classification losses with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::{gemm, Mat};

/// Clipping applied to predictions before taking logarithms in [`bce`].
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        ensure!(tau.is_finite() && tau > 0.0, InvalidArgument, "temperature must be positive, got {tau}");
        Ok(Self(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;
    fn try_from(tau: f64) -> Result<Self> {
        Self::new(tau)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity scaled by `1 / tau`.
pub fn cosine_sim_temp(u: &[f64], v: &[f64], tau: Temperature) -> Result<f64> {
    ensure!(u.len() == v.len(), Shape, "vectors differ in length ({} vs {})", u.len(), v.len());
    let (nu, nv) = (norm(u), norm(v));
    ensure!(nu > 0.0 && nv > 0.0, Numeric, "cosine similarity of a zero-norm vector");
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nv) / tau.get())
}

/// Which augmented view of a pair is the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    First,
    Second,
}

/// `2n` embeddings, rows `[view1(0..n), view2(0..n)]`; row `i` pairs with `i + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    data: Vec<f64>,
    n: usize,
    dim: usize,
}

impl EmbeddingBatch {
    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        ensure!(dim > 0, InvalidArgument, "embedding dimension must be positive");
        ensure!(
            !data.is_empty() && data.len() % (2 * dim) == 0,
            Shape,
            "{} values do not form an even number of {dim}-dim rows",
            data.len()
        );
        let batch = Self { n: data.len() / (2 * dim), data, dim };
        for a in 0..2 * batch.n {
            let r = batch.row(a);
            ensure!(r.iter().all(|v| v.is_finite()), Numeric, "embedding {a} is not finite");
            ensure!(norm(r) > 0.0, Numeric, "embedding {a} has zero norm");
        }
        Ok(batch)
    }

    pub fn from_views(view1: &[Vec<f64>], view2: &[Vec<f64>]) -> Result<Self> {
        ensure!(view1.len() == view2.len(), Shape, "views differ in size");
        let dim = view1.first().map_or(0, Vec::len);
        ensure!(
            view1.iter().chain(view2).all(|r| r.len() == dim),
            Shape,
            "embeddings differ in dimension"
        );
        Self::from_flat(view1.iter().chain(view2).flatten().copied().collect(), dim)
    }

    /// Number of positive pairs.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.dim..(a + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn partner(&self, a: usize) -> usize {
        if a < self.n {
            a + self.n
        } else {
            a - self.n
        }
    }

    fn anchor(&self, i: usize, view: View) -> Result<usize> {
        ensure!(i < self.n, InvalidArgument, "pair index {i} out of range for n = {}", self.n);
        Ok(match view {
            View::First => i,
            View::Second => i + self.n,
        })
    }

    /// Unit-normalized rows and their norms.
    fn normalized(&self) -> (Vec<f64>, Vec<f64>) {
        let mut z = self.data.clone();
        let norms: Vec<f64> = z
            .chunks_exact_mut(self.dim)
            .map(|r| {
                let nr = norm(r);
                r.iter_mut().for_each(|v| *v /= nr);
                nr
            })
            .collect();
        (z, norms)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Loss of one anchor against every other row of the batch except itself.
pub fn ntxent_asym(batch: &EmbeddingBatch, i: usize, anchor: View, tau: Temperature) -> Result<f64> {
    let a = batch.anchor(i, anchor)?;
    let za = batch.row(a);
    let sims = (0..2 * batch.n)
        .filter(|&k| k != a)
        .map(|k| cosine_sim_temp(za, batch.row(k), tau))
        .collect::<Result<Vec<f64>>>()?;
    let positive = cosine_sim_temp(za, batch.row(batch.partner(a)), tau)?;
    Ok(log_sum_exp(sims.iter().copied()) - positive)
}

/// Average of the two asymmetric losses of pair `i`.
pub fn ntxent_pair(batch: &EmbeddingBatch, i: usize, tau: Temperature) -> Result<f64> {
    Ok(0.5 * (ntxent_asym(batch, i, View::First, tau)? + ntxent_asym(batch, i, View::Second, tau)?))
}

/// Similarity matrix `S = Z Z^T / tau` of the normalized rows.
fn similarity(z: &[f64], rows: usize, dim: usize, tau: f64) -> Vec<f64> {
    let mut s = vec![0.0; rows * rows];
    gemm(Mat::new(z, rows, dim), Mat::t(z, rows, dim), 0.0, &mut s);
    s.iter_mut().for_each(|v| *v /= tau);
    s
}

/// Mean pair loss over the batch.
pub fn ntxent_batch(batch: &EmbeddingBatch, tau: Temperature) -> f64 {
    ntxent_batch_with_grad(batch, tau).0
}

/// Mean pair loss and its gradient with respect to every (unnormalized) embedding,
/// laid out like [`EmbeddingBatch::data`].
pub fn ntxent_batch_with_grad(batch: &EmbeddingBatch, tau: Temperature) -> (f64, Vec<f64>) {
    let (rows, dim, t) = (2 * batch.n, batch.dim, tau.get());
    let (z, norms) = batch.normalized();
    let s = similarity(&z, rows, dim, t);

    // coefficient matrix G = dL/dS
    let mut g = vec![0.0; rows * rows];
    let mut total = 0.0;
    let scale = 1.0 / rows as f64;
    for a in 0..rows {
        let srow = &s[a * rows..(a + 1) * rows];
        let p = batch.partner(a);
        let others = (0..rows).filter(|&k| k != a).map(|k| srow[k]);
        let lse = log_sum_exp(others);
        total += lse - srow[p];
        let grow = &mut g[a * rows..(a + 1) * rows];
        for k in (0..rows).filter(|&k| k != a) {
            grow[k] = scale * (srow[k] - lse).exp();
        }
        grow[p] -= scale;
    }

    // dL/dz_hat = (G + G^T) Z / tau
    let mut sym = g.clone();
    for a in 0..rows {
        for k in 0..rows {
            sym[a * rows + k] += g[k * rows + a];
        }
    }
    let mut dz_hat = vec![0.0; rows * dim];
    gemm(Mat::new(&sym, rows, rows), Mat::new(&z, rows, dim), 0.0, &mut dz_hat);

    let mut grad = vec![0.0; rows * dim];
    for a in 0..rows {
        let zh = &z[a * dim..(a + 1) * dim];
        let gh = &dz_hat[a * dim..(a + 1) * dim];
        let proj: f64 = zh.iter().zip(gh).map(|(x, y)| x * y).sum();
        for j in 0..dim {
            grad[a * dim + j] = (gh[j] - zh[j] * proj) / (t * norms[a]);
        }
    }
    (total * scale, grad)
}

fn check_label(y: f64) -> Result<()> {
    ensure!(y == 0.0 || y == 1.0, InvalidArgument, "label must be 0 or 1, got {y}");
    Ok(())
}

/// Binary cross-entropy with predictions clipped to `[eps, 1 - eps]`.
pub fn bce(y_hat: f64, y: f64) -> Result<f64> {
    check_label(y)?;
    let p = y_hat.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    Ok(-y * p.ln() - (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`bce`] with respect to `y_hat`.
pub fn bce_grad(y_hat: f64, y: f64) -> Result<f64> {
    check_label(y)?;
    let p = y_hat.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    Ok(-y / p + (1.0 - y) / (1.0 - p))
}
