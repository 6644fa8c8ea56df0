//! Toy objectives `F(w) = (1/M) Σ f_i(w)` with one `f_i` per client.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{domain, seeded, stream_seed};
use crate::stats::sq_dist;

pub trait Model: Send + Sync {
    fn dim(&self) -> usize;
    fn num_clients(&self) -> usize;
    /// `f_i(w)`.
    fn client_loss(&self, client: usize, w: &[f64]) -> f64;
    /// `∇f_i(w)`.
    fn client_grad(&self, client: usize, w: &[f64]) -> Vec<f64>;
    /// Smoothness constant of `F`, if known.
    fn smoothness(&self) -> Option<f64>;
    /// A lower bound on `inf F`; exact when available.
    fn loss_lower_bound(&self) -> f64;
    fn initial_point(&self) -> Vec<f64>;

    fn loss(&self, w: &[f64]) -> f64 {
        let m = self.num_clients();
        (0..m).map(|i| self.client_loss(i, w)).sum::<f64>() / m as f64
    }

    fn full_grad(&self, w: &[f64]) -> Vec<f64> {
        let m = self.num_clients();
        let mut g = vec![0.0; self.dim()];
        for i in 0..m {
            for (a, b) in g.iter_mut().zip(self.client_grad(i, w)) {
                *a += b;
            }
        }
        g.iter_mut().for_each(|v| *v /= m as f64);
        g
    }
}

/// `f_i(w) = ‖w - c_i‖² / 2`; `F` is 1-smooth with minimizer `mean(c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticModel {
    centers: Vec<Vec<f64>>,
    mean: Vec<f64>,
    init: Vec<f64>,
}

impl QuadraticModel {
    pub fn new(centers: Vec<Vec<f64>>, init: Vec<f64>) -> Result<Self> {
        let d = init.len();
        if centers.is_empty() || d == 0 {
            return Err(invalid(
                "quadratic model needs at least one center and a positive dimension",
            ));
        }
        if centers.iter().any(|c| c.len() != d) {
            return Err(invalid("every center must match the dimension of the initial point"));
        }
        let m = centers.len() as f64;
        let mean = (0..d).map(|j| centers.iter().map(|c| c[j]).sum::<f64>() / m).collect();
        Ok(Self { centers, mean, init })
    }

    /// Centers `μ + 0.2 z_i / √d` around `μ = 0.5 · 1 / √d`, starting at 0.
    pub fn synthetic(dim: usize, clients: usize, seed: u64) -> Result<Self> {
        if dim == 0 || clients == 0 {
            return Err(invalid("dimension and client count must be positive"));
        }
        let mut rng = seeded(stream_seed(seed, domain::INPUTS, 0));
        let scale = 1.0 / (dim as f64).sqrt();
        let centers = (0..clients)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        0.5 * scale + 0.2 * scale * z
                    })
                    .collect()
            })
            .collect();
        Self::new(centers, vec![0.0; dim])
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.mean
    }
}

impl Model for QuadraticModel {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn num_clients(&self) -> usize {
        self.centers.len()
    }

    fn client_loss(&self, client: usize, w: &[f64]) -> f64 {
        0.5 * sq_dist(w, &self.centers[client])
    }

    fn client_grad(&self, client: usize, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&self.centers[client]).map(|(a, c)| a - c).collect()
    }

    fn smoothness(&self) -> Option<f64> {
        Some(1.0)
    }

    fn loss_lower_bound(&self) -> f64 {
        self.loss(&self.mean)
    }

    fn initial_point(&self) -> Vec<f64> {
        self.init.clone()
    }

    fn loss(&self, w: &[f64]) -> f64 {
        let spread = self.centers.iter().map(|c| sq_dist(c, &self.mean)).sum::<f64>() / self.centers.len() as f64;
        0.5 * (sq_dist(w, &self.mean) + spread)
    }

    fn full_grad(&self, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&self.mean).map(|(a, c)| a - c).collect()
    }
}

/// `f_i(w) = log(1 + exp(-y_i a_i·w)) + λ/2 ‖w‖²`, one labelled point per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    l2: f64,
    smoothness: f64,
}

impl LogisticModel {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>, l2: f64) -> Result<Self> {
        let d = features.first().map(Vec::len).unwrap_or(0);
        if d == 0 || features.len() != labels.len() {
            return Err(invalid("logistic model needs matching, nonempty features and labels"));
        }
        if features.iter().any(|a| a.len() != d) {
            return Err(invalid("all feature vectors must share one dimension"));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(invalid("labels must be +1 or -1"));
        }
        if !(l2.is_finite() && l2 >= 0.0) {
            return Err(invalid("l2 penalty must be nonnegative"));
        }
        // λ_max((1/M) Σ a aᵀ) / 4 ≤ mean ‖a‖² / 4.
        let mean_sq = features
            .iter()
            .map(|a| a.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / features.len() as f64;
        Ok(Self {
            features,
            labels,
            l2,
            smoothness: mean_sq / 4.0 + l2,
        })
    }

    /// Two Gaussian blobs at `±μ`, `μ = 0.6 · 1 / √d`, spread `0.3 / √d` per coordinate.
    pub fn synthetic(dim: usize, clients: usize, seed: u64) -> Result<Self> {
        if dim == 0 || clients == 0 {
            return Err(invalid("dimension and client count must be positive"));
        }
        let mut rng = seeded(stream_seed(seed, domain::INPUTS, 1));
        let scale = 1.0 / (dim as f64).sqrt();
        let mut features = Vec::with_capacity(clients);
        let mut labels = Vec::with_capacity(clients);
        for i in 0..clients {
            let y = if i % 2 == 0 { 1.0 } else { -1.0 };
            features.push(
                (0..dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        y * 0.6 * scale + 0.3 * scale * z
                    })
                    .collect(),
            );
            labels.push(y);
        }
        Self::new(features, labels, 0.01)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Model for LogisticModel {
    fn dim(&self) -> usize {
        self.features[0].len()
    }

    fn num_clients(&self) -> usize {
        self.features.len()
    }

    fn client_loss(&self, client: usize, w: &[f64]) -> f64 {
        let margin = self.labels[client] * dot(&self.features[client], w);
        softplus(-margin) + 0.5 * self.l2 * dot(w, w)
    }

    fn client_grad(&self, client: usize, w: &[f64]) -> Vec<f64> {
        let y = self.labels[client];
        let coef = -y * sigmoid(-y * dot(&self.features[client], w));
        self.features[client]
            .iter()
            .zip(w)
            .map(|(a, wj)| coef * a + self.l2 * wj)
            .collect()
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.smoothness)
    }

    fn loss_lower_bound(&self) -> f64 {
        0.0
    }

    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Quadratic,
    Logistic,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "quadratic" => Ok(Self::Quadratic),
            "logistic" => Ok(Self::Logistic),
            other => Err(format!("unknown model {other:?} (expected quadratic or logistic)")),
        }
    }
}

/// Which synthetic model to build and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dim: usize,
    pub clients: usize,
    pub data_seed: u64,
}

impl ModelSpec {
    pub fn build(&self) -> Result<Box<dyn Model>> {
        Ok(match self.kind {
            ModelKind::Quadratic => Box::new(QuadraticModel::synthetic(self.dim, self.clients, self.data_seed)?),
            ModelKind::Logistic => Box::new(LogisticModel::synthetic(self.dim, self.clients, self.data_seed)?),
        })
    }
}

/// Largest relative deviation between the analytic gradient of `F` and
/// central differences, `max_j |fd_j - g_j| / max(1, ‖g‖∞)`.
pub fn gradient_oracle_check(model: &dyn Model, w: &[f64]) -> Result<f64> {
    if w.len() != model.dim() {
        return Err(invalid(format!("expected dimension {}, got {}", model.dim(), w.len())));
    }
    let g = model.full_grad(w);
    let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut probe = w.to_vec();
    let mut worst = 0.0f64;
    for j in 0..w.len() {
        let h = 1e-5 * w[j].abs().max(1.0);
        probe[j] = w[j] + h;
        let up = model.loss(&probe);
        probe[j] = w[j] - h;
        let down = model.loss(&probe);
        probe[j] = w[j];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - g[j]).abs() / scale);
    }
    Ok(worst)
}
