use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, Role};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Additive smoothing applied to every histogram bucket before the KL terms.
pub const HISTOGRAM_EPS: f64 = 1e-6;

/// Maps texts to fixed-size feature rows.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[Vec<String>]) -> Result<Array2<f64>>;
}

impl<T: Scalar> Embedder for EncoderParams<T> {
    /// Suffix-role encodings.
    fn embed(&self, texts: &[Vec<String>]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((texts.len(), self.d_out()));
        for (mut row, t) in out.axis_iter_mut(Axis(0)).zip(texts) {
            let v = self.encode(t, Role::Suffix)?;
            row.assign(&v.0.mapv(|x| x.as_f64()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MauveConfig {
    /// `None` picks `max(2, n / 10)` over the pooled sample count.
    pub n_clusters: Option<usize>,
    pub c: f64,
    /// Number of interior mixing weights `j / (grid_size + 1)`.
    pub grid_size: usize,
    pub kmeans_iterations: usize,
    pub seed: u64,
}

impl Default for MauveConfig {
    fn default() -> Self {
        MauveConfig {
            n_clusters: None,
            c: 5.0,
            grid_size: 100,
            kmeans_iterations: 25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MauveResult {
    pub score: f64,
    /// Sorted by x, endpoints included.
    pub curve: Vec<(f64, f64)>,
    pub human_histogram: Vec<f64>,
    pub model_histogram: Vec<f64>,
}

fn sq_dist<T: Scalar>(a: ndarray::ArrayView1<T>, b: ndarray::ArrayView1<T>) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// k-means++ seeding: each further row is drawn with probability proportional to its squared
/// distance from the nearest row already chosen. Once every remaining row coincides with a
/// chosen one, the rest are drawn uniformly from the unchosen rows.
fn plus_plus_init<T: Scalar>(data: ArrayView2<T>, k: usize, seed: u64) -> Vec<usize> {
    let n = data.nrows();
    let mut r = rng::seeded(seed);
    let mut picks = vec![rng::below(&mut r, n)];
    let mut d2: Vec<f64> = data
        .axis_iter(Axis(0))
        .map(|row| sq_dist(row, data.row(picks[0])).as_f64())
        .collect();
    while picks.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng::unit(&mut r) * total;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    chosen = Some(i);
                    u -= d;
                    if u < 0.0 {
                        break;
                    }
                }
            }
            chosen.expect("positive total")
        } else {
            let rest: Vec<usize> = (0..n).filter(|i| !picks.contains(i)).collect();
            rest[rng::below(&mut r, rest.len())]
        };
        picks.push(next);
        for (i, row) in data.axis_iter(Axis(0)).enumerate() {
            d2[i] = d2[i].min(sq_dist(row, data.row(next)).as_f64());
        }
        d2[next] = 0.0;
    }
    picks
}

/// Lloyd's algorithm on the rows of `data` with k-means++ seeding; points go to the nearest
/// centroid (lowest index on ties); a centroid that loses all its points stays put.
/// Returns the assignment of every row.
pub fn kmeans<T: Scalar>(
    data: ArrayView2<T>,
    k: usize,
    iterations: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = data.nrows();
    if k == 0 || k > n {
        return Err(Error::invalid(
            "n_clusters",
            format!("must be in 1..={n}, got {k}"),
        ));
    }
    let picks = plus_plus_init(data, k, seed);
    let mut centroids = data.select(Axis(0), &picks);
    let mut assign = vec![0usize; n];
    let nearest = |row: ndarray::ArrayView1<T>, centroids: &Array2<T>| {
        let mut best = (0, T::infinity());
        for (j, c) in centroids.axis_iter(Axis(0)).enumerate() {
            let d = sq_dist(row, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    };
    for it in 0..=iterations {
        let mut changed = false;
        for (i, row) in data.axis_iter(Axis(0)).enumerate() {
            let j = nearest(row, &centroids);
            changed |= assign[i] != j;
            assign[i] = j;
        }
        if it == iterations || (it > 0 && !changed) {
            break;
        }
        let mut sums = Array2::<T>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (row, &j) in data.axis_iter(Axis(0)).zip(&assign) {
            let mut s = sums.row_mut(j);
            s += &row;
            counts[j] += 1;
        }
        for (j, &cnt) in counts.iter().enumerate() {
            if cnt > 0 {
                let mean: Array1<T> = sums.row(j).mapv(|x| x / T::of(cnt as f64));
                centroids.row_mut(j).assign(&mean);
            }
        }
    }
    Ok(assign)
}

/// `(count_j + eps) / (n + k * eps)`.
pub fn smoothed_histogram(assignments: &[usize], k: usize) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    for &a in assignments {
        counts[a] += 1;
    }
    let denom = assignments.len() as f64 + k as f64 * HISTOGRAM_EPS;
    counts
        .iter()
        .map(|&c| (c as f64 + HISTOGRAM_EPS) / denom)
        .collect()
}

fn kl(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(&x, _)| x > 0.0)
        .map(|(&x, &y)| x * (x / y).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Points `(exp(-c KL(Q||R)), exp(-c KL(P||R)))` for `R = Q + lambda (P - Q)` at
/// `lambda = j / (grid_size + 1)`, plus `(0, 1)` and `(1, 0)`, sorted by x ascending then
/// y descending.
pub fn divergence_curve(p: &[f64], q: &[f64], c: f64, grid_size: usize) -> Vec<(f64, f64)> {
    let mut pts = vec![(0.0, 1.0), (1.0, 0.0)];
    for j in 1..=grid_size {
        let lambda = j as f64 / (grid_size + 1) as f64;
        let r: Vec<f64> = p
            .iter()
            .zip(q)
            .map(|(&pi, &qi)| qi + lambda * (pi - qi))
            .collect();
        pts.push(((-c * kl(q, &r)).exp(), (-c * kl(p, &r)).exp()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts
}

fn trapezoid(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Area under the divergence curve between quantized embeddings of both corpora.
pub fn mauve_style(
    human: &[Vec<String>],
    model: &[Vec<String>],
    embedder: &dyn Embedder,
    cfg: &MauveConfig,
) -> Result<MauveResult> {
    if human.is_empty() || model.is_empty() {
        return Err(Error::invalid("texts", "both corpora must be non-empty"));
    }
    if cfg.c.is_nan() || cfg.c <= 0.0 {
        return Err(Error::invalid("c", "must be > 0"));
    }
    let total = human.len() + model.len();
    let k = cfg.n_clusters.unwrap_or((total / 10).max(2));
    if k < 2 {
        return Err(Error::invalid("n_clusters", "must be >= 2"));
    }
    if k > total {
        return Err(Error::invalid(
            "n_clusters",
            format!("{k} exceeds the {total} pooled samples"),
        ));
    }
    let h = embedder.embed(human)?;
    let m = embedder.embed(model)?;
    if h.ncols() != m.ncols() {
        return Err(Error::DimensionMismatch {
            left: h.ncols(),
            right: m.ncols(),
        });
    }
    let data = ndarray::concatenate(Axis(0), &[h.view(), m.view()]).expect("equal widths");
    let assign = kmeans(data.view(), k, cfg.kmeans_iterations, cfg.seed)?;
    let p = smoothed_histogram(&assign[..human.len()], k);
    let q = smoothed_histogram(&assign[human.len()..], k);
    let curve = divergence_curve(&p, &q, cfg.c, cfg.grid_size);
    Ok(MauveResult {
        score: trapezoid(&curve),
        curve,
        human_histogram: p,
        model_histogram: q,
    })
}
