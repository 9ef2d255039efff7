//! Gaussian-copula synthesizer and validity/structure diagnostics.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Cell, ColumnKind, ColumnSchema, Encoding, RawDataset, TabularDataset};
use crate::error::{Error, Result};

const EIGEN_FLOOR: f64 = 1e-6;
const ROW_BLOCK: usize = 1024;
const MAX_RESAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Marginal {
    /// Sorted observations; the inverse CDF interpolates between order statistics.
    Continuous { sorted: Vec<f64>, integral: bool },
    /// Categories with cumulative upper bounds of their probability intervals.
    Categorical { categories: Vec<String>, cumulative: Vec<f64> },
}

impl Marginal {
    fn fit(values: &[&Cell], kind: ColumnKind) -> Self {
        match kind {
            ColumnKind::Continuous => {
                let mut sorted: Vec<f64> = values
                    .iter()
                    .map(|c| match c {
                        Cell::Num(v) => *v,
                        other => other.render().parse().unwrap_or(0.0),
                    })
                    .collect();
                sorted.sort_by(f64::total_cmp);
                let integral = sorted.iter().all(|v| v.fract() == 0.0);
                Marginal::Continuous { sorted, integral }
            }
            _ => {
                let mut counts: BTreeMap<String, usize> = BTreeMap::new();
                for c in values {
                    *counts.entry(c.render()).or_default() += 1;
                }
                let n = values.len() as f64;
                let mut acc = 0.0;
                let mut categories = Vec::new();
                let mut cumulative = Vec::new();
                for (cat, k) in counts {
                    acc += k as f64 / n;
                    categories.push(cat);
                    cumulative.push(acc);
                }
                if let Some(last) = cumulative.last_mut() {
                    *last = 1.0;
                }
                Marginal::Categorical { categories, cumulative }
            }
        }
    }

    fn inverse(&self, u: f64, kind: ColumnKind) -> Cell {
        match self {
            Marginal::Continuous { sorted, integral } => {
                let n = sorted.len();
                let pos = u.clamp(0.0, 1.0) * (n - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                let v = sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]);
                let v = if *integral { v.round() } else { v };
                match kind {
                    ColumnKind::Continuous => Cell::Num(v),
                    _ => Cell::Cat(v.to_string()),
                }
            }
            Marginal::Categorical { categories, cumulative } => {
                let k = cumulative.partition_point(|&c| c <= u).min(categories.len() - 1);
                match kind {
                    ColumnKind::Continuous => categories[k].parse().map(Cell::Num).unwrap_or(Cell::Missing),
                    _ => Cell::Cat(categories[k].clone()),
                }
            }
        }
    }

    /// Uniform scores in (0, 1) for every value of the column.
    fn scores(&self, values: &[&Cell], rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Marginal::Continuous { .. } => {
                let v: Vec<f64> = values
                    .iter()
                    .map(|c| match c {
                        Cell::Num(v) => *v,
                        other => other.render().parse().unwrap_or(0.0),
                    })
                    .collect();
                average_ranks(&v)
                    .into_iter()
                    .map(|r| r / (v.len() as f64 + 1.0))
                    .collect()
            }
            Marginal::Categorical { categories, cumulative } => values
                .iter()
                .map(|c| {
                    let k = categories.binary_search(&c.render()).unwrap_or(0);
                    let lo = if k == 0 { 0.0 } else { cumulative[k - 1] };
                    let u = lo + rng.random::<f64>() * (cumulative[k] - lo);
                    u.clamp(1e-9, 1.0 - 1e-9)
                })
                .collect(),
        }
    }
}

/// 1-based ranks, ties receive their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    crate::data::pearson(&average_ranks(a), &average_ranks(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaModel {
    pub schema: Vec<ColumnSchema>,
    pub encoding: Encoding,
    pub marginals: Vec<Marginal>,
    /// Row-major normal-score correlation after PSD repair.
    pub correlation: Vec<Vec<f64>>,
    /// Digests of the training rows, used to reject copies.
    training_rows: BTreeSet<String>,
}

fn normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn row_digest(row: &[Cell]) -> String {
    let mut h = Sha256::new();
    for c in row {
        h.update(c.render().as_bytes());
        h.update([0x1f]);
    }
    hex::encode(&h.finalize()[..12])
}

/// Eigenvalue clipping at `EIGEN_FLOOR`, then rescaling to unit diagonal.
pub fn repair_correlation(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let d = rebuilt.diagonal().map(|v| 1.0 / v.sqrt());
    let mut out = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| rebuilt[(i, j)] * d[i] * d[j]);
    for i in 0..m.nrows() {
        out[(i, i)] = 1.0;
        for j in 0..i {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

impl CopulaModel {
    /// Fits marginals and the normal-score correlation on the decoded rows of `ds`.
    pub fn fit(ds: &TabularDataset) -> Result<Self> {
        if ds.len() < 2 {
            return Err(Error::EmptyDataset);
        }
        let raw = ds.encoding.decode(ds);
        Self::fit_raw(&raw, &ds.encoding)
    }

    pub fn fit_raw(raw: &RawDataset, encoding: &Encoding) -> Result<Self> {
        let rows: Vec<&Vec<Cell>> = raw.rows.iter().filter(|r| !r.iter().any(Cell::is_missing)).collect();
        if rows.len() < 2 {
            return Err(Error::EmptyDataset);
        }
        let n = rows.len();
        let d = raw.schema.len();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let std_normal = normal();
        let mut marginals = Vec::with_capacity(d);
        let mut z = DMatrix::<f64>::zeros(n, d);
        for (j, col) in raw.schema.iter().enumerate() {
            let values: Vec<&Cell> = rows.iter().map(|r| &r[j]).collect();
            let m = Marginal::fit(&values, col.kind);
            for (i, u) in m.scores(&values, &mut rng).into_iter().enumerate() {
                z[(i, j)] = std_normal.inverse_cdf(u);
            }
            marginals.push(m);
        }
        let mut corr = DMatrix::<f64>::identity(d, d);
        let means: Vec<f64> = (0..d).map(|j| z.column(j).mean()).collect();
        let sds: Vec<f64> = (0..d)
            .map(|j| (z.column(j).iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / n as f64).sqrt())
            .collect();
        for a in 0..d {
            for b in 0..a {
                let r = if sds[a] > 1e-12 && sds[b] > 1e-12 {
                    let cov = z
                        .column(a)
                        .iter()
                        .zip(z.column(b).iter())
                        .map(|(x, y)| (x - means[a]) * (y - means[b]))
                        .sum::<f64>()
                        / n as f64;
                    (cov / (sds[a] * sds[b])).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                corr[(a, b)] = r;
                corr[(b, a)] = r;
            }
        }
        let repaired = repair_correlation(&corr);
        Ok(Self {
            schema: raw.schema.clone(),
            encoding: encoding.clone(),
            marginals,
            correlation: (0..d).map(|i| repaired.row(i).iter().copied().collect()).collect(),
            training_rows: rows.iter().map(|r| row_digest(r)).collect(),
        })
    }

    fn cholesky(&self) -> DMatrix<f64> {
        let d = self.schema.len();
        let m = DMatrix::from_fn(d, d, |i, j| self.correlation[i][j]);
        match m.clone().cholesky() {
            Some(c) => c.l(),
            None => repair_correlation(&m).cholesky().map(|c| c.l()).unwrap_or_else(|| DMatrix::identity(d, d)),
        }
    }

    fn draw_row(&self, l: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Vec<Cell> {
        let d = self.schema.len();
        let eps = nalgebra::DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = l * eps;
        let std_normal = normal();
        (0..d)
            .map(|j| self.marginals[j].inverse(std_normal.cdf(z[j]), self.schema[j].kind))
            .collect()
    }

    /// Raw synthetic rows; rows identical to a training row are redrawn.
    pub fn sample_raw(&self, n: usize, seed: u64) -> Result<RawDataset> {
        if n == 0 {
            return Err(Error::Config("sample size must be at least 1".into()));
        }
        let l = self.cholesky();
        let blocks: Vec<Vec<Vec<Cell>>> = (0..n.div_ceil(ROW_BLOCK))
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64 + 1);
                let len = ROW_BLOCK.min(n - b * ROW_BLOCK);
                (0..len)
                    .map(|_| {
                        let mut row = self.draw_row(&l, &mut rng);
                        let mut tries = 0;
                        while tries < MAX_RESAMPLES && self.training_rows.contains(&row_digest(&row)) {
                            row = self.draw_row(&l, &mut rng);
                            tries += 1;
                        }
                        row
                    })
                    .collect()
            })
            .collect();
        let rows: Vec<Vec<Cell>> = blocks.into_iter().flatten().collect();
        let copies = rows.iter().filter(|r| self.training_rows.contains(&row_digest(r))).count();
        if copies > 0 {
            log::warn!("{copies} synthetic rows still equal a training row after resampling");
        }
        Ok(RawDataset {
            schema: self.schema.clone(),
            rows,
            parse_failures: Vec::new(),
        })
    }

    /// Encoded synthetic dataset with `n` rows, encoded with the training encoding.
    pub fn sample(&self, n: usize, seed: u64) -> Result<TabularDataset> {
        self.encoding.transform(&self.sample_raw(n, seed)?)
    }

    pub fn is_training_row(&self, row: &[Cell]) -> bool {
        self.training_rows.contains(&row_digest(row))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticScore {
    pub data_validity: f64,
    pub data_structure: f64,
    pub real_positive_rate: Option<f64>,
    pub synth_positive_rate: Option<f64>,
}

/// Validity checks per column: type, completeness, and range (continuous) or
/// category membership (categorical). Structure is the fraction of column
/// positions whose names match.
pub fn diagnostics_raw(real: &RawDataset, synth: &RawDataset) -> Result<DiagnosticScore> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let width = real.schema.len().max(synth.schema.len());
    let same_pos = real
        .schema
        .iter()
        .zip(&synth.schema)
        .filter(|(a, b)| a.name == b.name)
        .count();
    let data_structure = same_pos as f64 / width as f64;

    let mut passed = 0usize;
    let mut total = 0usize;
    for (j, col) in real.schema.iter().enumerate() {
        total += 3;
        let Some(sj) = synth.column_index(&col.name) else { continue };
        let synth_col = synth.rows.iter().map(|r| &r[sj]);
        let real_col = real.rows.iter().map(|r| &r[j]).filter(|c| !c.is_missing());
        let complete = synth_col.clone().all(|c| !c.is_missing());
        passed += usize::from(complete);
        match col.kind {
            ColumnKind::Continuous => {
                let typed = synth_col.clone().all(|c| matches!(c, Cell::Num(_) | Cell::Missing));
                let (lo, hi) = real_col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| match c {
                    Cell::Num(v) => (lo.min(*v), hi.max(*v)),
                    _ => (lo, hi),
                });
                let in_range = synth_col.clone().all(|c| match c {
                    Cell::Num(v) => *v >= lo && *v <= hi,
                    _ => true,
                });
                passed += usize::from(typed) + usize::from(in_range);
            }
            _ => {
                let typed = synth_col.clone().all(|c| matches!(c, Cell::Cat(_) | Cell::Missing));
                let cats: HashSet<String> = real_col.map(Cell::render).collect();
                let known = synth_col.clone().all(|c| c.is_missing() || cats.contains(&c.render()));
                passed += usize::from(typed) + usize::from(known);
            }
        }
    }
    Ok(DiagnosticScore {
        data_validity: passed as f64 / total as f64,
        data_structure,
        real_positive_rate: None,
        synth_positive_rate: None,
    })
}

pub fn diagnostics(real: &TabularDataset, synth: &TabularDataset) -> Result<DiagnosticScore> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut score = diagnostics_raw(&real.encoding.decode(real), &synth.encoding.decode(synth))?;
    score.real_positive_rate = Some(real.positive_rate());
    score.synth_positive_rate = Some(synth.positive_rate());
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testing::{toy_dataset, toy_raw, toy_spec};
    use crate::data::{preprocess, ColumnRole, Criterion, PreprocessSpec, Scalar, SensitiveSpec};

    fn numeric_raw(cols: &[&str], rows: Vec<Vec<f64>>) -> RawDataset {
        let mut schema: Vec<ColumnSchema> = cols
            .iter()
            .map(|c| ColumnSchema::new(*c, ColumnKind::Continuous, ColumnRole::Feature))
            .collect();
        schema[0].role = ColumnRole::Sensitive;
        schema.push(ColumnSchema::new("y", ColumnKind::Binary, ColumnRole::Target));
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let mut cells: Vec<Cell> = r.into_iter().map(Cell::Num).collect();
                cells.push(Cell::Cat((i % 2).to_string()));
                cells
            })
            .collect();
        RawDataset { schema, rows, parse_failures: Vec::new() }
    }

    fn numeric_ds(cols: &[&str], rows: Vec<Vec<f64>>) -> TabularDataset {
        let spec = PreprocessSpec {
            target_positive: Criterion::Eq(Scalar::Num(1.0)),
            sensitive: vec![SensitiveSpec::new(cols[0], Criterion::Lt(0.0))],
        };
        preprocess(&numeric_raw(cols, rows), &spec).unwrap()
    }

    fn gaussian_rows(n: usize, rho: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let c: f64 = rng.sample(StandardNormal);
                let s = (1.0 - rho * rho).sqrt();
                vec![a, rho * a + s * b, rho * a + s * c]
            })
            .collect()
    }

    fn column(ds: &RawDataset, j: usize) -> Vec<f64> {
        ds.rows.iter().map(|r| if let Cell::Num(v) = r[j] { v } else { f64::NAN }).collect()
    }

    #[test]
    fn independent_columns_have_small_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = (0..10_000).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let ds = numeric_ds(&["a", "b"], rows);
        let m = CopulaModel::fit(&ds).unwrap();
        assert!(m.correlation[0][1].abs() <= 0.05);
    }

    #[test]
    fn duplicated_column_is_perfectly_correlated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = (0..500)
            .map(|_| {
                let v = rng.random::<f64>();
                vec![v, v]
            })
            .collect();
        let m = CopulaModel::fit(&numeric_ds(&["a", "b"], rows)).unwrap();
        assert!((m.correlation[0][1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_column_reproduced() {
        let rows = (0..50).map(|i| vec![f64::from(i), 7.0]).collect();
        let m = CopulaModel::fit(&numeric_ds(&["a", "c"], rows)).unwrap();
        let s = m.sample_raw(200, 3).unwrap();
        assert!(column(&s, 1).iter().all(|&v| v == 7.0));
    }

    #[test]
    fn correlation_is_valid() {
        let m = CopulaModel::fit(&toy_dataset(400, 0)).unwrap();
        let d = m.correlation.len();
        let mat = DMatrix::from_fn(d, d, |i, j| m.correlation[i][j]);
        for i in 0..d {
            assert!((mat[(i, i)] - 1.0).abs() < 1e-12);
            for j in 0..d {
                assert!((mat[(i, j)] - mat[(j, i)]).abs() < 1e-12);
            }
        }
        assert!(SymmetricEigen::new(mat).eigenvalues.min() > 0.0);
    }

    #[test]
    fn repair_fixes_indefinite_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        assert!(SymmetricEigen::new(m.clone()).eigenvalues.min() < 0.0);
        let r = repair_correlation(&m);
        assert!(SymmetricEigen::new(r.clone()).eigenvalues.min() > 0.0);
        assert!((0..3).all(|i| (r[(i, i)] - 1.0).abs() < 1e-12));
    }

    #[test]
    fn sample_sizes_and_determinism() {
        let ds = toy_dataset(300, 1);
        let m = CopulaModel::fit(&ds).unwrap();
        assert!(m.sample(0, 0).is_err());
        let one = m.sample(1, 0).unwrap();
        assert_eq!(one.len(), 1);
        let a = m.sample(2_500, 4).unwrap();
        let b = m.sample(2_500, 4).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.target, b.target);
        assert_ne!(m.sample(2_500, 5).unwrap().x, a.x);
    }

    #[test]
    fn no_training_row_copies() {
        let ds = toy_dataset(300, 2);
        let m = CopulaModel::fit(&ds).unwrap();
        let s = m.sample_raw(3_000, 0).unwrap();
        assert!(s.rows.iter().all(|r| !m.is_training_row(r)));
    }

    #[test]
    fn diagnostics_are_perfect_for_copula_output() {
        for seed in 0..3 {
            let ds = toy_dataset(400, seed);
            let m = CopulaModel::fit(&ds).unwrap();
            let s = m.sample(ds.len(), seed).unwrap();
            let d = diagnostics(&ds, &s).unwrap();
            assert_eq!(d.data_validity, 1.0);
            assert_eq!(d.data_structure, 1.0);
        }
    }

    #[test]
    fn diagnostics_detect_defects() {
        let real = toy_raw(200, 0);
        let mut bad = toy_raw(200, 1);
        bad.rows[5][0] = Cell::Num(1e6);
        assert!(diagnostics_raw(&real, &bad).unwrap().data_validity < 1.0);

        let mut unseen = toy_raw(200, 1);
        unseen.rows[3][1] = Cell::Cat("astronaut".into());
        assert!(diagnostics_raw(&real, &unseen).unwrap().data_validity < 1.0);

        let mut permuted = toy_raw(200, 1);
        permuted.schema.swap(3, 4);
        for r in permuted.rows.iter_mut() {
            r.swap(3, 4);
        }
        let d = diagnostics_raw(&real, &permuted).unwrap();
        assert!(d.data_structure < 1.0);
    }

    #[test]
    fn continuous_means_match() {
        let ds = toy_dataset(4_000, 3);
        let real = ds.encoding.decode(&ds);
        let m = CopulaModel::fit(&ds).unwrap();
        let s = m.sample_raw(20_000, 1).unwrap();
        for (j, col) in real.schema.iter().enumerate() {
            if col.kind != ColumnKind::Continuous {
                continue;
            }
            let r = column(&real, j);
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let v = column(&s, j);
            let smean = v.iter().sum::<f64>() / v.len() as f64;
            // standard error of the difference of two independent means
            let se = sd * (1.0 / n + 1.0 / v.len() as f64).sqrt();
            assert!((smean - mean).abs() <= 3.0 * se, "{}: {smean} vs {mean}", col.name);
        }
    }

    #[test]
    fn category_frequencies_match() {
        let ds = toy_dataset(2_000, 4);
        let m = CopulaModel::fit(&ds).unwrap();
        let s = m.sample_raw(50_000, 2).unwrap();
        for (j, marginal) in m.marginals.iter().enumerate() {
            let Marginal::Categorical { categories, cumulative } = marginal else { continue };
            let mut prev = 0.0;
            for (cat, &c) in categories.iter().zip(cumulative) {
                let expected = c - prev;
                prev = c;
                let got = s.rows.iter().filter(|r| r[j].render() == *cat).count() as f64 / 50_000.0;
                assert!((got - expected).abs() <= 0.03, "{cat}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn rank_correlation_fidelity() {
        let rows = gaussian_rows(20_000, 0.7, 5);
        let ds = numeric_ds(&["a", "b", "c"], rows);
        let real = ds.encoding.decode(&ds);
        let m = CopulaModel::fit(&ds).unwrap();
        let s = m.sample_raw(20_000, 6).unwrap();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let want = spearman(&column(&real, a), &column(&real, b)).unwrap();
            let got = spearman(&column(&s, a), &column(&s, b)).unwrap();
            assert!((want - got).abs() <= 0.05, "({a},{b}): {got} vs {want}");
        }
    }

    #[test]
    fn toy_spec_round_trip() {
        let ds = toy_dataset(500, 9);
        let s = CopulaModel::fit(&ds).unwrap().sample(500, 0).unwrap();
        assert_eq!(s.sensitive.len(), toy_spec().sensitive.len());
        assert_eq!(s.n_features(), ds.n_features());
    }
}
