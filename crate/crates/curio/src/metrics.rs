//! Evaluation suite: optimal assignment between noun and category sets,
//! soft coverage and diversity scores built on it, and the windowed
//! surprisal metric for navigation episodes.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("non-finite profit entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("episode too short: {0} steps, need at least {1}")]
    EpisodeTooShort(usize, usize),
    #[error("malformed similarity table: {0}")]
    MalformedTable(String),
}

/// Area thresholds for the thresholded coverage variant.
pub const AREA_THRESHOLDS: [f64; 4] = [0.01, 0.03, 0.05, 0.10];

/// Steps per surprisal evaluation window.
pub const SURPRISAL_WINDOW: usize = 20;

/// Maximum-profit one-to-one assignment of `min(m, n)` pairs.
///
/// Rectangular inputs are padded with zero-profit dummies to a square
/// matrix and solved by the Hungarian method (shortest augmenting paths
/// with potentials). Returns the `(row, col)` pairs and the total profit.
pub fn hungarian_max(profit: &[Vec<f64>]) -> Result<(Vec<(usize, usize)>, f64), MetricsError> {
    let m = profit.len();
    let n = profit.first().map_or(0, |r| r.len());
    if m == 0 || n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    for (i, row) in profit.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(MetricsError::NonFinite(i, j));
            }
        }
    }
    let s = m.max(n);
    // minimize negated profit over the padded square matrix
    let cost = |i: usize, j: usize| -> f64 {
        if i < m && j < n {
            -profit[i][j]
        } else {
            0.0
        }
    };
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; s + 1];
    let mut v = vec![0.0f64; s + 1];
    let mut col_row = vec![0usize; s + 1]; // col -> assigned row (1-based)
    let mut way = vec![0usize; s + 1];
    for i in 1..=s {
        col_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; s + 1];
        let mut used = vec![false; s + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=s {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=s {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for j in 1..=s {
        let i = col_row[j];
        if i >= 1 && i - 1 < m && j - 1 < n {
            pairs.push((i - 1, j - 1));
        }
    }
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| profit[i][j]).sum();
    Ok((pairs, total))
}

/// Token embeddings with clamped-cosine similarity.
///
/// Vectors are 16-dimensional and generated deterministically from the
/// token string and a seed; identical strings have similarity 1 by
/// definition, all similarities lie in [0, 1].
#[derive(Clone, Debug)]
pub struct SimilarityTable {
    seed: u64,
    dim: usize,
    loaded: std::collections::BTreeMap<String, Vec<f64>>,
}

pub const EMBED_DIM: usize = 16;

impl SimilarityTable {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: EMBED_DIM,
            loaded: Default::default(),
        }
    }

    pub fn embedding(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.loaded.get(token) {
            return v.clone();
        }
        let mut h = DefaultHasher::new();
        token.hash(&mut h);
        self.seed.hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1.0;
        }
        let (ea, eb) = (self.embedding(a), self.embedding(b));
        let dot: f64 = ea.iter().zip(&eb).map(|(x, y)| x * y).sum();
        let na: f64 = ea.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = eb.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (dot / (na * nb)).clamp(0.0, 1.0)
    }

    /// One token per line: `token\tv0 v1 ... v15`.
    pub fn save(&self, tokens: &[&str]) -> String {
        let mut out = String::new();
        for t in tokens {
            let e = self.embedding(t);
            let vals: Vec<String> = e.iter().map(|v| format!("{v:.17e}")).collect();
            out.push_str(&format!("{t}\t{}\n", vals.join(" ")));
        }
        out
    }

    pub fn load(seed: u64, text: &str) -> Result<Self, MetricsError> {
        let mut table = Self::new(seed);
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (token, rest) = line.split_once('\t').ok_or_else(|| {
                MetricsError::MalformedTable(format!("line {}: missing tab", lineno + 1))
            })?;
            let vals: Result<Vec<f64>, _> =
                rest.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| {
                MetricsError::MalformedTable(format!("line {}: {e}", lineno + 1))
            })?;
            if vals.len() != EMBED_DIM {
                return Err(MetricsError::MalformedTable(format!(
                    "line {}: {} values, expected {EMBED_DIM}",
                    lineno + 1,
                    vals.len()
                )));
            }
            table.loaded.insert(token.to_string(), vals);
        }
        Ok(table)
    }
}

/// Soft intersection: the maximum-assignment similarity mass between two
/// token multisets. `I(empty, _) = 0`.
pub fn intersection_score(
    nouns: &[String],
    categories: &[String],
    table: &SimilarityTable,
) -> Result<f64, MetricsError> {
    if nouns.is_empty() || categories.is_empty() {
        return Ok(0.0);
    }
    let profit: Vec<Vec<f64>> = nouns
        .iter()
        .map(|n| categories.iter().map(|c| table.similarity(n, c)).collect())
        .collect();
    Ok(hungarian_max(&profit)?.1)
}

/// Soft coverage: `I(nouns, categories) / #categories`. A scene with no
/// qualifying categories is vacuously covered (score 1).
pub fn coverage(
    nouns: &[String],
    categories: &[String],
    table: &SimilarityTable,
) -> Result<f64, MetricsError> {
    if categories.is_empty() {
        return Ok(1.0);
    }
    Ok(intersection_score(nouns, categories, table)? / categories.len() as f64)
}

/// Soft Jaccard distance between the noun sets of two consecutive
/// captions. Two empty sets have diversity 0.
pub fn diversity(
    nouns_a: &[String],
    nouns_b: &[String],
    table: &SimilarityTable,
) -> Result<f64, MetricsError> {
    if nouns_a.is_empty() && nouns_b.is_empty() {
        return Ok(0.0);
    }
    let i = intersection_score(nouns_a, nouns_b, table)?;
    let union = nouns_a.len() as f64 + nouns_b.len() as f64 - i;
    Ok(1.0 - i / union)
}

/// Navigation metric: per episode, sum raw surprisal over consecutive
/// 20-step windows, average the window sums, then average over episodes.
pub fn surprisal_metric(episodes: &[Vec<f64>]) -> Result<f64, MetricsError> {
    if episodes.is_empty() {
        return Ok(0.0);
    }
    let mut per_episode = Vec::with_capacity(episodes.len());
    for ep in episodes {
        if ep.len() < SURPRISAL_WINDOW {
            return Err(MetricsError::EpisodeTooShort(ep.len(), SURPRISAL_WINDOW));
        }
        let windows = ep.len() / SURPRISAL_WINDOW;
        let mut acc = 0.0;
        for w in 0..windows {
            acc += ep[w * SURPRISAL_WINDOW..(w + 1) * SURPRISAL_WINDOW]
                .iter()
                .sum::<f64>();
        }
        per_episode.push(acc / windows as f64);
    }
    Ok(per_episode.iter().sum::<f64>() / per_episode.len() as f64)
}

/// One policy-and-threshold cell of the evaluation report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsCell {
    pub policy: String,
    pub threshold: f64,
    pub loquacity: f64,
    /// Coverage at the four area thresholds of [`AREA_THRESHOLDS`].
    pub cov: [f64; 4],
    /// Mean diversity over consecutive caption pairs.
    pub div: f64,
    /// Windowed surprisal metric over the evaluated episodes.
    pub surprisal: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub cells: Vec<MetricsCell>,
}

impl MetricsReport {
    /// Human-readable table: policy x threshold rows, coverage columns by
    /// area threshold, then diversity and loquacity.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}\n",
            "policy", "threshold", "loquacity", "cov>1%", "cov>3%", "cov>5%", "cov>10%", "div", "surprisal"
        ));
        for c in &self.cells {
            out.push_str(&format!(
                "{:<10} {:>9.3} {:>9.2} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>10.4}\n",
                c.policy, c.threshold, c.loquacity, c.cov[0], c.cov[1], c.cov[2], c.cov[3], c.div, c.surprisal
            ));
        }
        out
    }

    /// Machine-readable variant: one tagged record per line.
    pub fn lines(&self) -> String {
        let mut out = String::new();
        for c in &self.cells {
            out.push_str(&format!(
                "CELL policy={} threshold={} loquacity={} cov1={} cov3={} cov5={} cov10={} div={} surprisal={}\n",
                c.policy, c.threshold, c.loquacity, c.cov[0], c.cov[1], c.cov[2], c.cov[3], c.div, c.surprisal
            ));
        }
        out
    }
}

/// Exhaustive-permutation oracle for small matrices (test support).
///
/// Candidate totals are summed over chosen entries in ascending row order
/// of the original matrix — the same canonical order [`hungarian_max`]
/// uses — so agreement on the optimal assignment is bit-exact rather than
/// merely close.
pub fn brute_force_max(profit: &[Vec<f64>]) -> f64 {
    let m = profit.len();
    let n = profit.first().map_or(0, |r| r.len());
    if m == 0 || n == 0 {
        return 0.0;
    }
    // enumerate assignments of the smaller side to distinct indices of the
    // larger; `transposed` maps choices back to original coordinates
    fn rec(
        profit: &[Vec<f64>],
        transposed: bool,
        row: usize,
        choice: &mut Vec<usize>,
        used: &mut [bool],
        best: &mut f64,
    ) {
        let rows = if transposed {
            profit.first().map_or(0, |r| r.len())
        } else {
            profit.len()
        };
        if row == rows {
            let mut pairs: Vec<(usize, usize)> = choice
                .iter()
                .enumerate()
                .map(|(r, &c)| if transposed { (c, r) } else { (r, c) })
                .collect();
            pairs.sort_unstable();
            let total: f64 = pairs.iter().map(|&(i, j)| profit[i][j]).sum();
            if total > *best {
                *best = total;
            }
            return;
        }
        for j in 0..used.len() {
            if used[j] {
                continue;
            }
            used[j] = true;
            choice.push(j);
            rec(profit, transposed, row + 1, choice, used, best);
            choice.pop();
            used[j] = false;
        }
    }
    let transposed = m > n;
    let (small, large) = if transposed { (n, m) } else { (m, n) };
    let mut used = vec![false; large];
    let mut choice = Vec::with_capacity(small);
    let mut best = f64::NEG_INFINITY;
    rec(profit, transposed, 0, &mut choice, &mut used, &mut best);
    best
}
