//! Zipf, Heaps and Benford fits over a [`WordCountTable`].
//!
//! All straight-line fits are ordinary least squares in log10-log10 space;
//! goodness of fit is the coefficient of determination `1 - SS_res/SS_tot`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{WordCountTable, WordEntry};

pub const DEFAULT_HEAPS_ITERATIONS: usize = 100;
pub const BENFORD_DIGITS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_square: f64,
    pub n_points: usize,
}

/// Ordinary least squares of `y` on `x`.
pub fn ols_fit(points: &[(f64, f64)]) -> Result<FitResult> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "line fit needs at least 3 points, got {n}"
        )));
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::Degenerate("x values have zero variance".into()));
    }
    if syy == 0.0 {
        return Err(Error::Degenerate("y values have zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points
        .iter()
        .map(|&(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    Ok(FitResult {
        slope,
        intercept,
        r_square: 1.0 - ss_res / syy,
        n_points: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfResult {
    /// Negated slope of log10(count) against log10(rank).
    pub alpha: f64,
    pub fit: FitResult,
    /// Nonzero counts, most frequent first.
    pub ranked_counts: Vec<u64>,
}

fn nonzero_words(table: &WordCountTable, law: &str) -> Result<Vec<WordEntry>> {
    let words = table.nonzero();
    if words.len() < 3 {
        return Err(Error::Degenerate(format!(
            "{law} needs at least 3 kernels with nonzero count, got {}",
            words.len()
        )));
    }
    Ok(words)
}

/// Rank-frequency fit over kernels with a nonzero count. Ties in count keep
/// (layer, kernel) order.
pub fn zipf_analysis(table: &WordCountTable) -> Result<ZipfResult> {
    let mut words = nonzero_words(table, "zipf")?;
    // stable: equal counts stay in (layer, kernel) order
    words.sort_by_key(|w| std::cmp::Reverse(w.count));
    let ranked_counts: Vec<u64> = words.iter().map(|w| w.count).collect();
    let points: Vec<(f64, f64)> = ranked_counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (((i + 1) as f64).log10(), (c as f64).log10()))
        .collect();
    let fit = ols_fit(&points)?;
    Ok(ZipfResult {
        alpha: -fit.slope,
        fit,
        ranked_counts,
    })
}

/// One point of a vocabulary-growth curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeapsPoint {
    /// Cumulative token count.
    pub tokens: u64,
    /// Distinct word types seen so far.
    pub types: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeapsResult {
    /// `10^intercept` of the best shuffle.
    pub k: f64,
    /// Slope of the best shuffle.
    pub beta: f64,
    pub fit: FitResult,
    /// Sub-seed of the shuffle with the highest R².
    pub best_seed: u64,
    pub best_iteration: usize,
    pub iterations: usize,
    pub r_square_mean: f64,
    pub r_square_std: f64,
    /// Growth curve of the best shuffle.
    #[serde(skip)]
    pub curve: Vec<HeapsPoint>,
}

/// Shuffle seed for iteration `i`: a splitmix64 step away from `seed`.
pub fn heaps_sub_seed(seed: u64, i: usize) -> u64 {
    let mut z = seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn shuffled(counts: &[u64], sub_seed: u64) -> Vec<u64> {
    let mut order = counts.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed));
    order
}

/// Vocabulary growth when kernels appear in `order`: each kernel contributes
/// all of its tokens at once and exactly one new type.
pub fn heaps_curve(order: &[u64]) -> Vec<HeapsPoint> {
    order
        .iter()
        .scan(0u64, |tokens, &c| {
            *tokens += c;
            Some(*tokens)
        })
        .enumerate()
        .map(|(j, tokens)| HeapsPoint {
            tokens,
            types: j as u64 + 1,
        })
        .collect()
}

fn fit_curve(curve: &[HeapsPoint]) -> Result<FitResult> {
    let points: Vec<(f64, f64)> = curve
        .iter()
        .map(|p| ((p.tokens as f64).log10(), (p.types as f64).log10()))
        .collect();
    ols_fit(&points)
}

/// Best-of-`iterations` Heaps fit over random kernel orders.
///
/// Iteration `i` shuffles the nonzero-count kernels with
/// [`heaps_sub_seed`]`(seed, i)`. The reported fit is the iteration with the
/// highest R² (ties go to the lowest sub-seed); mean and standard deviation
/// of R² over all iterations are reported alongside.
pub fn heaps_analysis(table: &WordCountTable, iterations: usize, seed: u64) -> Result<HeapsResult> {
    if iterations == 0 {
        return Err(Error::Argument("heaps needs at least one iteration".into()));
    }
    let counts: Vec<u64> = nonzero_words(table, "heaps")?
        .iter()
        .map(|w| w.count)
        .collect();

    let trials: Vec<(usize, u64, FitResult)> = (0..iterations)
        .into_par_iter()
        .map(|i| {
            let sub = heaps_sub_seed(seed, i);
            fit_curve(&heaps_curve(&shuffled(&counts, sub))).map(|fit| (i, sub, fit))
        })
        .collect::<Result<_>>()?;

    let &(best_iteration, best_seed, fit) = trials
        .iter()
        .max_by(|a, b| {
            a.2.r_square
                .total_cmp(&b.2.r_square)
                .then_with(|| b.1.cmp(&a.1))
        })
        .expect("at least one iteration");

    let n = trials.len() as f64;
    let mean = trials.iter().map(|t| t.2.r_square).sum::<f64>() / n;
    let var = trials
        .iter()
        .map(|t| (t.2.r_square - mean).powi(2))
        .sum::<f64>()
        / n;

    Ok(HeapsResult {
        k: 10f64.powf(fit.intercept),
        beta: fit.slope,
        fit,
        best_seed,
        best_iteration,
        iterations,
        r_square_mean: mean,
        r_square_std: var.sqrt(),
        curve: heaps_curve(&shuffled(&counts, best_seed)),
    })
}

/// Benford probability of leading digit `d`: `log10(1 + 1/d)`.
pub fn benford_expected(d: u32) -> Result<f64> {
    if !(1..=9).contains(&d) {
        return Err(Error::Argument(format!("Benford digit {d} not in 1..=9")));
    }
    Ok((1.0 + 1.0 / f64::from(d)).log10())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenfordResult {
    /// Normalized top-nine layer totals, largest first.
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
    pub r_square: f64,
    /// Word total of every layer, in layer order.
    pub layer_totals: Vec<u64>,
    /// 1-based layers that fill positions 1..=9.
    pub top_layers: Vec<usize>,
}

/// Positional Benford comparison over per-layer word totals: the nine
/// largest totals, normalized to sum to one, are matched to digits 1..=9 and
/// scored against the fixed Benford curve.
pub fn benford_analysis(table: &WordCountTable) -> Result<BenfordResult> {
    let layer_totals = table.layer_totals();
    let positive = layer_totals.iter().filter(|&&t| t > 0).count();
    if positive < BENFORD_DIGITS {
        return Err(Error::Degenerate(format!(
            "benford needs at least {BENFORD_DIGITS} layers with words, got {positive}"
        )));
    }
    let mut ranked: Vec<(usize, u64)> = layer_totals
        .iter()
        .enumerate()
        .map(|(l, &t)| (l + 1, t))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(BENFORD_DIGITS);

    let sum: u64 = ranked.iter().map(|r| r.1).sum();
    let observed: Vec<f64> = ranked.iter().map(|r| r.1 as f64 / sum as f64).collect();
    let expected: Vec<f64> = (1..=BENFORD_DIGITS as u32)
        .map(|d| benford_expected(d).expect("digit in range"))
        .collect();

    let mean = observed.iter().sum::<f64>() / BENFORD_DIGITS as f64;
    let ss_tot: f64 = observed.iter().map(|p| (p - mean).powi(2)).sum();
    if ss_tot < 1e-24 {
        return Err(Error::Degenerate(
            "top nine layer totals are all equal".into(),
        ));
    }
    let ss_res: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(p, e)| (p - e).powi(2))
        .sum();

    Ok(BenfordResult {
        observed,
        expected,
        r_square: 1.0 - ss_res / ss_tot,
        layer_totals,
        top_layers: ranked.iter().map(|r| r.0).collect(),
    })
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or the inputs are shorter than two.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}
