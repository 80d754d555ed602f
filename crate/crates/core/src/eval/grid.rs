use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::decode::{rankgen_search, DecodeConfig};
use crate::error::{Error, Result};
use crate::lm::Generator;
use crate::sampling::SamplingStrategy;
use crate::scorers::Scorer;

/// One decoding configuration. `rerank_length: None` means rerank only once, at `max_length`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPoint {
    pub rerank_length: Option<usize>,
    pub beam_size: usize,
    pub samples_per_beam: usize,
}

impl GridPoint {
    pub fn total_samples(&self) -> usize {
        self.beam_size * self.samples_per_beam
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rerank_length {
            Some(l) => write!(f, "L={l}")?,
            None => write!(f, "L=max")?,
        }
        write!(f, " B={} N={}", self.beam_size, self.samples_per_beam)
    }
}

/// `L ∈ {5, 10, 20, 50, max}` crossed with the (beam, samples-per-beam) pairs
/// (1,1) (1,5) (1,10) (2,5) (1,20) (2,10) (4,5) (1,40) (2,20).
pub fn standard_grid() -> Vec<GridPoint> {
    const BN: [(usize, usize); 9] = [
        (1, 1),
        (1, 5),
        (1, 10),
        (2, 5),
        (1, 20),
        (2, 10),
        (4, 5),
        (1, 40),
        (2, 20),
    ];
    [Some(5), Some(10), Some(20), Some(50), None]
        .into_iter()
        .flat_map(|l| {
            BN.iter().map(move |&(b, n)| GridPoint {
                rerank_length: l,
                beam_size: b,
                samples_per_beam: n,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub point: GridPoint,
    pub metric: f64,
    pub seconds_per_generation: f64,
}

/// Decodes every prefix under every grid point and reports the metric over the top beams
/// together with the mean wall-clock seconds per prefix. Decoding runs on a single
/// worker thread so timings are comparable.
/// Metric over `(prefixes, top continuations)` reported per grid row.
pub type GridMetric<'a> = dyn Fn(&[Vec<String>], &[Vec<String>]) -> Result<f64> + Sync + 'a;

#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    prefixes: &[Vec<String>],
    generator: &dyn Generator,
    scorer: &dyn Scorer,
    grid: &[GridPoint],
    max_length: usize,
    strategy: &SamplingStrategy,
    seed: u64,
    metric: &GridMetric<'_>,
) -> Result<Vec<GridRow>> {
    if grid.is_empty() {
        return Err(Error::invalid(
            "grid",
            "must contain at least one configuration",
        ));
    }
    if prefixes.is_empty() {
        return Err(Error::invalid("prefixes", "empty set"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::invalid("threads", e.to_string()))?;
    grid.iter()
        .map(|&point| {
            let cfg = DecodeConfig {
                rerank_length: point.rerank_length.unwrap_or(max_length).min(max_length),
                beam_size: point.beam_size,
                samples_per_beam: point.samples_per_beam,
                max_length,
                strategy: *strategy,
                seed,
            };
            let (outputs, seconds) = pool.install(|| {
                let start = Instant::now();
                let out = prefixes
                    .iter()
                    .map(|p| {
                        Ok(rankgen_search(p, generator, scorer, &cfg)?
                            .swap_remove(0)
                            .tokens)
                    })
                    .collect::<Result<Vec<_>>>();
                (out, start.elapsed().as_secs_f64())
            });
            let outputs = outputs?;
            Ok(GridRow {
                point,
                metric: metric(prefixes, &outputs)?,
                seconds_per_generation: seconds / prefixes.len() as f64,
            })
        })
        .collect()
}

pub fn write_grid_csv(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut s =
        String::from("rerank_length,beam_size,samples_per_beam,metric,seconds_per_generation\n");
    for r in rows {
        let l = r
            .point
            .rerank_length
            .map_or("max".to_string(), |l| l.to_string());
        s.push_str(&format!(
            "{l},{},{},{},{}\n",
            r.point.beam_size, r.point.samples_per_beam, r.metric, r.seconds_per_generation
        ));
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(s.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub name: String,
    pub iterations: usize,
    pub total_seconds: f64,
    pub per_second: f64,
}

/// Runs `op` `iterations` times on the current thread and reports throughput.
pub fn benchmark(
    name: &str,
    iterations: usize,
    mut op: impl FnMut() -> Result<()>,
) -> Result<BenchResult> {
    if iterations == 0 {
        return Err(Error::invalid("iterations", "must be >= 1"));
    }
    let start = Instant::now();
    for _ in 0..iterations {
        op()?;
    }
    let total = start.elapsed().as_secs_f64();
    Ok(BenchResult {
        name: name.to_string(),
        iterations,
        total_seconds: total,
        per_second: iterations as f64 / total.max(f64::MIN_POSITIVE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_shape() {
        let g = standard_grid();
        assert_eq!(g.len(), 45);
        for n in [1, 5, 10, 20, 40] {
            assert!(g.contains(&GridPoint {
                rerank_length: None,
                beam_size: 1,
                samples_per_beam: n
            }));
        }
        assert_eq!(g[0].to_string(), "L=5 B=1 N=1");
    }
}
