//! Sample-set selection, surrogate training and relative RMS error.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nnet::{rows_to_array, train_minibatch, LossKind, MlpModel, NnetError, Scaler, Schedule, TrainConfig};

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("only {valid} samples satisfy the feature bounds, {needed} requested")]
    TooFewSamples { valid: usize, needed: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("bound width is zero")]
    ZeroWidth,
    #[error(transparent)]
    Network(#[from] NnetError),
    #[error("dataset: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub const OUTPUT_NAMES: [&str; 5] = ["cd", "x1", "mw1", "mwl", "mwa"];

/// Admissible ranges of drag and the four features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureBounds {
    pub cd: (f64, f64),
    pub x1: (f64, f64),
    pub mw1: (f64, f64),
    pub mwl: (f64, f64),
    pub mwa: (f64, f64),
}

impl Default for FeatureBounds {
    fn default() -> Self {
        Self { cd: (0.009, 0.013), x1: (0.2, 0.8), mw1: (1.0, 1.2), mwl: (1.0, 1.3), mwa: (0.9, 1.1) }
    }
}

impl FeatureBounds {
    /// Bounds in output order `[cd, x1, mw1, mwl, mwa]`.
    pub fn as_array(&self) -> [(f64, f64); 5] {
        [self.cd, self.x1, self.mw1, self.mwl, self.mwa]
    }

    /// Bounds of the four state components.
    pub fn state_bounds(&self) -> [(f64, f64); 4] {
        [self.x1, self.mw1, self.mwl, self.mwa]
    }

    pub fn contains(&self, outputs: &[f64; 5]) -> bool {
        outputs.iter().zip(self.as_array()).all(|(v, (lo, hi))| *v >= lo && *v <= hi)
    }

    pub fn state_contains(&self, state: &[f64; 4]) -> bool {
        state.iter().zip(self.state_bounds()).all(|(v, (lo, hi))| *v >= lo && *v <= hi)
    }
}

/// One airfoil with its drag and features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub cst14: [f64; 14],
    /// `[cd, x1, mw1, mwl, mwa]`.
    pub outputs: [f64; 5],
}

impl SampleRecord {
    pub fn new(cst14: [f64; 14], outputs: [f64; 5]) -> Result<Self, SurrogateError> {
        if !cst14.iter().chain(&outputs).all(|v| v.is_finite()) {
            return Err(SurrogateError::Invalid("non-finite value".into()));
        }
        if outputs[0] <= 0.0 {
            return Err(SurrogateError::Invalid(format!("drag {} must be positive", outputs[0])));
        }
        Ok(Self { cst14, outputs })
    }

    pub fn cd(&self) -> f64 {
        self.outputs[0]
    }
}

fn distance(a: &[f64; 14], b: &[f64; 14]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nearest live neighbour of `i`, ignoring `skip`; ties go to the lower index.
fn nearest(points: &[[f64; 14]], alive: &[bool], i: usize, skip: Option<usize>) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for j in 0..points.len() {
        if j == i || !alive[j] || Some(j) == skip {
            continue;
        }
        let d = distance(&points[i], &points[j]);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Thin a pool by repeatedly dropping one member of the closest pair.
///
/// Records outside the feature bounds go first. Within the closest pair the
/// member with the smaller distance to its next-nearest neighbour is
/// dropped; on a tie the lower index survives. A snapshot is taken each
/// time the set size reaches one of `keep_counts`. Each returned set lists
/// surviving pool indices in ascending order, one set per entry of
/// `keep_counts` in the order given.
pub fn select_samples(
    pool: &[SampleRecord],
    keep_counts: &[usize],
    bounds: &FeatureBounds,
) -> Result<Vec<Vec<usize>>, SurrogateError> {
    let largest = keep_counts.iter().copied().max().unwrap_or(0);
    let smallest = keep_counts.iter().copied().min().unwrap_or(0);
    let valid: Vec<usize> = (0..pool.len()).filter(|&i| bounds.contains(&pool[i].outputs)).collect();
    if valid.len() < largest {
        return Err(SurrogateError::TooFewSamples { valid: valid.len(), needed: largest });
    }
    let points: Vec<[f64; 14]> = valid.iter().map(|&i| pool[i].cst14).collect();
    let n = points.len();
    let mut alive = vec![true; n];
    let mut live = n;
    let mut nn: Vec<(usize, f64)> = (0..n).map(|i| nearest(&points, &alive, i, None)).collect();
    let mut snapshots: Vec<(usize, Vec<usize>)> = Vec::new();
    let snapshot = |alive: &[bool]| -> Vec<usize> { (0..n).filter(|&i| alive[i]).map(|i| valid[i]).collect() };
    if keep_counts.contains(&live) {
        snapshots.push((live, snapshot(&alive)));
    }
    while live > smallest.max(1) {
        // Closest pair: smallest nearest-neighbour distance, lowest index first.
        let mut i = usize::MAX;
        for k in 0..n {
            if alive[k] && (i == usize::MAX || nn[k].1 < nn[i].1) {
                i = k;
            }
        }
        let j = nn[i].0;
        if j == usize::MAX {
            break;
        }
        let (lo, hi) = (i.min(j), i.max(j));
        let d_lo = nearest(&points, &alive, lo, Some(hi)).1;
        let d_hi = nearest(&points, &alive, hi, Some(lo)).1;
        let victim = if d_lo < d_hi { lo } else { hi };
        alive[victim] = false;
        live -= 1;
        for k in 0..n {
            if alive[k] && nn[k].0 == victim {
                nn[k] = nearest(&points, &alive, k, None);
            }
        }
        if keep_counts.contains(&live) {
            snapshots.push((live, snapshot(&alive)));
        }
    }
    Ok(keep_counts
        .iter()
        .map(|k| snapshots.iter().find(|s| s.0 == *k).map(|s| s.1.clone()).unwrap_or_default())
        .collect())
}

/// Relative root-mean-square error: RMS of `truth - predicted` divided by
/// the bound width.
pub fn rsme(predicted: &[f64], truth: &[f64], bounds: (f64, f64)) -> Result<f64, SurrogateError> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(SurrogateError::Invalid("rsme needs equal, nonempty lengths".into()));
    }
    let w = bounds.1 - bounds.0;
    if w == 0.0 {
        return Err(SurrogateError::ZeroWidth);
    }
    let ss: f64 = predicted.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok((ss / predicted.len() as f64).sqrt() / w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub seed: u64,
    /// Minibatches between error reports.
    pub report_every: usize,
}

impl SurrogateConfig {
    /// Three hidden layers of 1024, minibatch 128, 1000 epochs.
    pub fn paper() -> Self {
        Self {
            hidden: vec![1024; 3],
            batch_size: 128,
            schedule: vec![(200, 0.01), (200, 1e-3), (400, 1e-4), (400, 1e-5)],
            seed: 0,
            report_every: 100,
        }
    }

    pub fn desk() -> Self {
        Self {
            hidden: vec![128; 3],
            batch_size: 128,
            schedule: vec![(40, 1e-3), (40, 3e-4), (40, 1e-4)],
            seed: 0,
            report_every: 100,
        }
    }
}

/// Per-output relative errors on the training and test sets after
/// `minibatches` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub minibatches: usize,
    pub train: [f64; 5],
    pub test: [f64; 5],
}

/// Per-output relative errors of `model` on `records`.
pub fn evaluate_surrogate(model: &MlpModel, records: &[SampleRecord], bounds: &FeatureBounds) -> Result<[f64; 5], SurrogateError> {
    let inputs: Vec<[f64; 14]> = records.iter().map(|r| r.cst14).collect();
    let pred = model.forward(&rows_to_array(&inputs), true)?;
    let mut out = [0.0; 5];
    for (k, b) in bounds.as_array().into_iter().enumerate() {
        let p: Vec<f64> = pred.column(k).to_vec();
        let t: Vec<f64> = records.iter().map(|r| r.outputs[k]).collect();
        out[k] = rsme(&p, &t, b)?;
    }
    Ok(out)
}

/// Input scaler spanning the training coefficients, padded by 5% of range.
fn coefficient_scaler(records: &[SampleRecord]) -> Result<Scaler, NnetError> {
    let mut lo = [f64::INFINITY; 14];
    let mut hi = [f64::NEG_INFINITY; 14];
    for r in records {
        for k in 0..14 {
            lo[k] = lo[k].min(r.cst14[k]);
            hi[k] = hi[k].max(r.cst14[k]);
        }
    }
    let pad = |k: usize| (0.05 * (hi[k] - lo[k])).max(1e-6);
    Scaler::new((0..14).map(|k| lo[k] - pad(k)).collect(), (0..14).map(|k| hi[k] + pad(k)).collect())
}

/// Train a 14-input, 5-output network. Outputs are scaled by the feature
/// bounds; an error report is recorded every `report_every` minibatches.
pub fn train_surrogate(
    train: &[SampleRecord],
    test: &[SampleRecord],
    config: &SurrogateConfig,
    bounds: &FeatureBounds,
) -> Result<(MlpModel, Vec<ErrorReport>), SurrogateError> {
    if train.is_empty() || test.is_empty() {
        return Err(SurrogateError::Invalid("training and test sets must be nonempty".into()));
    }
    let mut sizes = vec![14];
    sizes.extend(&config.hidden);
    sizes.push(5);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MlpModel::new(&sizes, &mut rng)?.with_scalers(
        Some(coefficient_scaler(train)?),
        Some(Scaler::from_bounds(&bounds.as_array())?),
    )?;
    let x = rows_to_array(&train.iter().map(|r| r.cst14).collect::<Vec<_>>());
    let y = rows_to_array(&train.iter().map(|r| r.outputs).collect::<Vec<_>>());
    let tc = TrainConfig {
        batch_size: config.batch_size,
        schedule: config.schedule.clone(),
        loss: LossKind::MeanSquared,
        seed: config.seed.wrapping_add(1),
        checkpoint_every: config.report_every,
    };
    let mut history = Vec::new();
    let mut failure = None;
    train_minibatch(&mut model, &x, &y, &tc, |k, m| {
        if failure.is_some() {
            return;
        }
        match (evaluate_surrogate(m, train, bounds), evaluate_surrogate(m, test, bounds)) {
            (Ok(tr), Ok(te)) => history.push(ErrorReport { minibatches: k, train: tr, test: te }),
            (Err(e), _) | (_, Err(e)) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((model, history))
}

/// Surrogate prediction `[cd, x1, mw1, mwl, mwa]` for one airfoil.
pub fn predict(model: &MlpModel, cst14: &[f64; 14]) -> Result<[f64; 5], SurrogateError> {
    let v = model.predict(cst14, true)?;
    let mut out = [0.0; 5];
    out.copy_from_slice(&v);
    Ok(out)
}

pub fn dataset_header() -> Vec<String> {
    let mut h: Vec<String> = (0..7).map(|i| format!("c_u{i}")).collect();
    h.extend((0..7).map(|i| format!("c_l{i}")));
    h.extend(OUTPUT_NAMES.iter().map(|s| s.to_string()));
    h
}

/// Dataset CSV with `#`-prefixed comment lines ahead of the header.
pub fn write_dataset<W: Write>(mut out: W, records: &[SampleRecord], comments: &[String]) -> Result<(), SurrogateError> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(dataset_header())?;
    for r in records {
        w.write_record(r.cst14.iter().chain(&r.outputs).map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// A parsed dataset row with its feature-bounds flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetRow {
    pub record: SampleRecord,
    pub in_bounds: bool,
}

pub fn read_dataset<R: Read>(input: R, bounds: &FeatureBounds) -> Result<Vec<DatasetRow>, SurrogateError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != dataset_header() {
        return Err(SurrogateError::Invalid(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let vals: Vec<f64> = row
            .iter()
            .map(|v| v.trim().parse::<f64>().map_err(|e| SurrogateError::Invalid(format!("row {}: {v}: {e}", n + 1))))
            .collect::<Result<_, _>>()?;
        let mut cst = [0.0; 14];
        let mut outputs = [0.0; 5];
        cst.copy_from_slice(&vals[..14]);
        outputs.copy_from_slice(&vals[14..19]);
        let record = SampleRecord::new(cst, outputs).map_err(|e| SurrogateError::Invalid(format!("row {}: {e}", n + 1)))?;
        out.push(DatasetRow { record, in_bounds: bounds.contains(&record.outputs) });
    }
    Ok(out)
}

/// Deterministic split of records into training and test parts.
pub fn split_records(records: &[SampleRecord], test_fraction: f64, seed: u64) -> (Vec<SampleRecord>, Vec<SampleRecord>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((records.len() as f64) * test_fraction).round() as usize;
    let test = idx[..n_test].iter().map(|&i| records[i]).collect();
    let train = idx[n_test..].iter().map(|&i| records[i]).collect();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    const GOOD: [f64; 5] = [0.010, 0.5, 1.1, 1.1, 1.0];

    fn rec(c: &[f64]) -> SampleRecord {
        let mut cst = [0.0; 14];
        cst[..c.len()].copy_from_slice(c);
        SampleRecord::new(cst, GOOD).unwrap()
    }

    /// Minimum pairwise distance of a subset.
    fn spread(pool: &[SampleRecord], set: &[usize]) -> f64 {
        let mut m = f64::INFINITY;
        for a in 0..set.len() {
            for b in a + 1..set.len() {
                m = m.min(distance(&pool[set[a]].cst14, &pool[set[b]].cst14));
            }
        }
        m
    }

    #[test]
    fn duplicate_loses_one_member() {
        let mut pool: Vec<SampleRecord> = (0..9).map(|i| rec(&[i as f64, (i * i) as f64 * 0.1])).collect();
        pool.push(pool[4]);
        let sets = select_samples(&pool, &[9], &FeatureBounds::default()).unwrap();
        assert_eq!(sets[0].len(), 9);
        assert_eq!(sets[0].iter().filter(|&&i| i == 4 || i == 9).count(), 1);
    }

    #[test]
    fn out_of_bounds_records_go_first() {
        let mut pool: Vec<SampleRecord> = (0..6).map(|i| rec(&[i as f64])).collect();
        pool[2].outputs[0] = 0.02;
        let sets = select_samples(&pool, &[5], &FeatureBounds::default()).unwrap();
        assert_eq!(sets[0], vec![0, 1, 3, 4, 5]);
    }

    #[test]
    fn too_few_valid_samples_is_an_error() {
        let pool: Vec<SampleRecord> = (0..3).map(|i| rec(&[i as f64])).collect();
        assert!(matches!(
            select_samples(&pool, &[5], &FeatureBounds::default()),
            Err(SurrogateError::TooFewSamples { valid: 3, needed: 5 })
        ));
    }

    #[test]
    fn collinear_selection_matches_exhaustive_best() {
        let pool: Vec<SampleRecord> = (0..8).map(|i| rec(&[i as f64, 0.5 * i as f64])).collect();
        let set = select_samples(&pool, &[5], &FeatureBounds::default()).unwrap().remove(0);
        assert_eq!(set.len(), 5);
        let mut best: f64 = 0.0;
        for mask in 0u32..256 {
            if mask.count_ones() == 5 {
                let s: Vec<usize> = (0..8).filter(|i| mask & (1 << i) != 0).collect();
                best = best.max(spread(&pool, &s));
            }
        }
        assert!(spread(&pool, &set) >= best - 1e-12);
    }

    #[test]
    fn nested_snapshots() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let pool: Vec<SampleRecord> =
            (0..40).map(|_| rec(&(0..14).map(|_| r.random_range(0.0..1.0)).collect::<Vec<_>>())).collect();
        let sets = select_samples(&pool, &[30, 10], &FeatureBounds::default()).unwrap();
        assert_eq!(sets[0].len(), 30);
        assert_eq!(sets[1].len(), 10);
        assert!(sets[1].iter().all(|i| sets[0].contains(i)));
        assert_eq!(sets, select_samples(&pool, &[30, 10], &FeatureBounds::default()).unwrap());
    }

    /// Plain closest-pair greedy without neighbour caching.
    fn naive_select(pool: &[SampleRecord], keep: usize) -> Vec<usize> {
        let mut live: Vec<usize> = (0..pool.len()).collect();
        let d = |a: usize, b: usize| distance(&pool[a].cst14, &pool[b].cst14);
        while live.len() > keep {
            let mut best = (f64::INFINITY, 0, 0);
            for (p, &a) in live.iter().enumerate() {
                for &b in &live[p + 1..] {
                    if d(a, b) < best.0 {
                        best = (d(a, b), a, b);
                    }
                }
            }
            let (_, a, b) = best;
            let other = |x: usize, y: usize| live.iter().filter(|&&k| k != x && k != y).map(|&k| d(x, k)).fold(f64::INFINITY, f64::min);
            let victim = if other(a, b) < other(b, a) { a } else { b };
            live.retain(|&k| k != victim);
        }
        live
    }

    #[test]
    fn incremental_selection_matches_naive_greedy() {
        for seed in 0..5 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let pool: Vec<SampleRecord> =
                (0..30).map(|_| rec(&(0..14).map(|_| r.random_range(0.0..1.0)).collect::<Vec<_>>())).collect();
            let got = select_samples(&pool, &[12], &FeatureBounds::default()).unwrap().remove(0);
            assert_eq!(got, naive_select(&pool, 12));
        }
    }

    #[test]
    fn rsme_cases() {
        let b = FeatureBounds::default().cd;
        assert_eq!(rsme(&[0.01, 0.011], &[0.01, 0.011], b).unwrap(), 0.0);
        let r = rsme(&[0.010, 0.012], &[0.009, 0.013], b).unwrap();
        assert!((r - 0.25).abs() < 1e-12);
        let e = rsme(&[1.3, 2.3, 0.3], &[1.0, 2.0, 0.0], (0.0, 2.0)).unwrap();
        assert!((e - 0.15).abs() < 1e-12);
        assert!(matches!(rsme(&[1.0], &[1.0], (1.0, 1.0)), Err(SurrogateError::ZeroWidth)));
    }

    #[test]
    fn exact_linear_target_is_learned() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let bounds = FeatureBounds::default();
        let recs: Vec<SampleRecord> = (0..400)
            .map(|_| {
                let c: [f64; 14] = std::array::from_fn(|_| r.random_range(0.0..1.0));
                let s = c[0] + 0.5 * c[3] - 0.25 * c[9];
                let outputs = std::array::from_fn(|k| {
                    let (lo, hi) = bounds.as_array()[k];
                    lo + (hi - lo) * (0.2 + 0.4 * s / 1.5 + 0.05 * k as f64)
                });
                SampleRecord::new(c, outputs).unwrap()
            })
            .collect();
        let (train, test) = split_records(&recs, 0.2, 1);
        let cfg = SurrogateConfig {
            hidden: vec![],
            batch_size: 32,
            schedule: vec![(300, 0.01), (200, 1e-3)],
            seed: 3,
            report_every: 100,
        };
        let (_, hist) = train_surrogate(&train, &test, &cfg, &bounds).unwrap();
        assert!(hist.last().unwrap().test.iter().all(|&e| e < 1e-3), "{:?}", hist.last());
        // 320 rows in batches of 32 over 500 epochs.
        assert_eq!(hist.len(), 10 * 500 / 100);
    }

    #[test]
    fn dataset_round_trip() {
        let recs = vec![rec(&[0.1, 0.2]), SampleRecord::new([0.3; 14], [0.02, 0.5, 1.1, 1.1, 1.0]).unwrap()];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &recs, &["config_hash=abc".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# config_hash=abc\nc_u0,"));
        let rows = read_dataset(&buf[..], &FeatureBounds::default()).unwrap();
        assert_eq!(rows.iter().map(|r| r.record).collect::<Vec<_>>(), recs);
        assert_eq!(rows.iter().map(|r| r.in_bounds).collect::<Vec<_>>(), vec![true, false]);
    }

    proptest! {
        #[test]
        fn rsme_ignores_order(v in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..20), k in 0usize..20) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.iter().cloned().unzip();
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.rotate_left(k % p.len());
            let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let tt: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
            let a = rsme(&p, &t, (0.0, 1.0)).unwrap();
            let b = rsme(&pp, &tt, (0.0, 1.0)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn survivors_are_valid_subset(seed in 0u64..50) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let pool: Vec<SampleRecord> = (0..20).map(|_| {
                let c: [f64; 14] = std::array::from_fn(|_| r.random_range(0.0..1.0));
                let mut o = GOOD;
                if r.random_bool(0.2) { o[2] = 1.5; }
                SampleRecord::new(c, o).unwrap()
            }).collect();
            let b = FeatureBounds::default();
            let valid = pool.iter().filter(|p| b.contains(&p.outputs)).count();
            prop_assume!(valid >= 8);
            let set = select_samples(&pool, &[8], &b).unwrap().remove(0);
            prop_assert_eq!(set.len(), 8);
            prop_assert!(set.iter().all(|&i| i < pool.len() && b.contains(&pool[i].outputs)));
        }
    }
}
