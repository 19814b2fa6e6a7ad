use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::synthetic::{generate, planted_predictions, ramp, SyntheticConfig};
use crate::data::{Dataset, DEFAULT_SUPER_CAP};
use crate::error::{FairError, Result};
use crate::group::{probe_metric_direct, Form, ProbeKind};
use crate::hfm::{hfm_approx, hfm_max, hfm_prev, HfmConfig, HfmVersion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    /// Value counts of the benchmarked (super) attribute.
    pub value_counts: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub probes: Vec<ProbeKind>,
    pub forms: Vec<Form>,
    pub hfm: bool,
    /// HFM rows are produced only up to this n.
    pub hfm_max_n: usize,
    pub approx_budget: usize,
    /// When false every cell runs once for its term count and the time
    /// columns stay empty, which keeps the output deterministic.
    pub record_times: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![2000, 4000],
            value_counts: vec![2, 6, 12, 36],
            repetitions: 5,
            seed: 0,
            probes: vec![ProbeKind::Dp],
            forms: vec![Form::Binarised, Form::Ext, Form::Alt, Form::ExtAvg, Form::AltAvg],
            hfm: true,
            hfm_max_n: 4000,
            approx_budget: 64,
            record_times: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub metric: String,
    pub form: String,
    pub fingerprint: String,
    pub n: usize,
    pub value_counts: usize,
    pub repetitions: usize,
    pub median_ns: Option<u64>,
    pub min_ns: Option<u64>,
    /// Terms (group metrics) or distance evaluations (HFM) per run.
    pub terms: u64,
    pub baseline: String,
    /// median / baseline median
    pub ratio: Option<f64>,
}

/// Splits `v` into two factors when possible, so the benchmark attribute is
/// a genuine super attribute of two smaller ones.
pub fn factor_value_count(v: usize) -> Vec<usize> {
    let mut best = None;
    let mut f = 2;
    while f * f <= v {
        if v % f == 0 {
            best = Some(f);
        }
        f += 1;
    }
    match best {
        Some(f) => vec![f, v / f],
        None => vec![v],
    }
}

/// Synthetic data whose last attribute has `v` values, and planted
/// predictions with rates ramping across its groups.
pub fn bench_dataset(n: usize, v: usize, seed: u64) -> Result<(Dataset, usize, Vec<u8>)> {
    if v < 2 {
        return Err(FairError::invalid("value counts must be at least 2"));
    }
    let factors = factor_value_count(v);
    let cfg = SyntheticConfig {
        n,
        n_features: 4,
        attribute_sizes: factors.clone(),
        label_rates: None,
        label_noise: 0.05,
        seed,
    };
    let mut ds = generate(&cfg)?;
    let mut attr = 0;
    if factors.len() > 1 {
        let (with, idx) = ds.with_super_attribute(&[0, 1], DEFAULT_SUPER_CAP)?;
        ds = with;
        attr = idx;
    }
    let yhat = planted_predictions(&ds.partition(attr), &ramp(v, 0.7, 0.3), seed)?;
    Ok((ds, attr, yhat))
}

type Timed<T> = (Option<u64>, Option<u64>, T);

fn measure<T>(reps: usize, record: bool, mut f: impl FnMut() -> Result<T>) -> Result<Timed<T>> {
    let mut last = f()?; // warm-up, not timed
    if !record {
        return Ok((None, None, last));
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        last = f()?;
        times.push(start.elapsed().as_nanos() as u64);
    }
    times.sort_unstable();
    let median = if reps % 2 == 1 {
        times[reps / 2]
    } else {
        (times[reps / 2 - 1] + times[reps / 2]) / 2
    };
    Ok((Some(median), Some(times[0]), last))
}

/// Median-of-repetitions wall times over the configured grid, on one worker
/// thread.
pub fn timing_bench(cfg: &BenchConfig) -> Result<Vec<TimingRecord>> {
    if cfg.record_times && cfg.repetitions < 5 {
        return Err(FairError::invalid("timing needs at least 5 repetitions"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| FairError::invalid(format!("cannot build benchmark thread pool: {e}")))?;
    pool.install(|| run_grid(cfg))
}

fn run_grid(cfg: &BenchConfig) -> Result<Vec<TimingRecord>> {
    let reps = cfg.repetitions;
    let mut out = Vec::new();
    for &n in &cfg.sizes {
        for &v in &cfg.value_counts {
            let (ds, attr, yhat) = bench_dataset(n, v, cfg.seed)?;
            let fingerprint = ds.fingerprint();
            let partition = ds.partition(attr);
            let start = out.len();
            let record = |metric: String, form: &str, median, min, terms, baseline: String| TimingRecord {
                metric,
                form: form.to_string(),
                fingerprint: fingerprint.clone(),
                n,
                value_counts: v,
                repetitions: if cfg.record_times { reps } else { 0 },
                median_ns: median,
                min_ns: min,
                terms,
                baseline,
                ratio: None,
            };
            for &probe in &cfg.probes {
                for &form in &cfg.forms {
                    if form == Form::Orig && v != 2 {
                        continue;
                    }
                    let (median, min, m) =
                        measure(reps, cfg.record_times, || probe_metric_direct(probe, &yhat, &ds.labels, &partition, form))?;
                    let baseline = if form == Form::Binarised {
                        String::new()
                    } else {
                        format!("{}.binarised", probe.prefix())
                    };
                    out.push(record(
                        probe.prefix().to_string(),
                        form.as_str(),
                        median,
                        min,
                        m.terms as u64,
                        baseline,
                    ));
                }
            }
            if cfg.hfm && n <= cfg.hfm_max_n {
                let hcfg = HfmConfig::default();
                let binary = if v == 2 { ds.clone() } else { ds.with_binarised_attribute(attr) };
                let (median, min, r) = measure(reps, cfg.record_times, || hfm_prev(&binary, &yhat, attr, &hcfg))?;
                out.push(record("hfm".into(), "prev", median, min, r.distance_evaluations, String::new()));
                let (median, min, r) = measure(reps, cfg.record_times, || hfm_max(&ds, &yhat, &[attr], &hcfg))?;
                out.push(record("hfm".into(), "max", median, min, r.distance_evaluations, "hfm.prev".into()));
                let (median, min, r) = measure(reps, cfg.record_times, || {
                    hfm_approx(&ds, &yhat, &[attr], HfmVersion::Max, cfg.approx_budget, cfg.seed, &hcfg)
                })?;
                out.push(record("hfm".into(), "approx", median, min, r.distance_evaluations, "hfm.max".into()));
            }
            fill_ratios(&mut out[start..]);
        }
    }
    Ok(out)
}

fn fill_ratios(block: &mut [TimingRecord]) {
    let medians: Vec<(String, Option<u64>)> = block
        .iter()
        .map(|r| (format!("{}.{}", r.metric, r.form), r.median_ns))
        .collect();
    for r in block.iter_mut() {
        let base = medians.iter().find(|(k, _)| *k == r.baseline).and_then(|(_, m)| *m);
        if let (Some(m), Some(b)) = (r.median_ns, base) {
            r.ratio = Some(m as f64 / b.max(1) as f64);
        }
    }
}

impl TimingRecord {
    pub const HEADER: [&'static str; 11] = [
        "metric",
        "form",
        "fingerprint",
        "n",
        "value_counts",
        "repetitions",
        "median_ns",
        "min_ns",
        "terms",
        "baseline",
        "ratio",
    ];

    pub fn write_csv<W: std::io::Write>(records: &[TimingRecord], w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::HEADER)?;
        for r in records {
            out.write_record([
                r.metric.clone(),
                r.form.clone(),
                r.fingerprint.clone(),
                r.n.to_string(),
                r.value_counts.to_string(),
                r.repetitions.to_string(),
                r.median_ns.map(|x| x.to_string()).unwrap_or_default(),
                r.min_ns.map(|x| x.to_string()).unwrap_or_default(),
                r.terms.to_string(),
                r.baseline.clone(),
                r.ratio.map(|x| x.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush().map_err(|e| FairError::io("<csv output>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors() {
        assert_eq!(factor_value_count(2), vec![2]);
        assert_eq!(factor_value_count(6), vec![2, 3]);
        assert_eq!(factor_value_count(12), vec![3, 4]);
        assert_eq!(factor_value_count(36), vec![6, 6]);
        assert_eq!(factor_value_count(5), vec![5]);
    }

    #[test]
    fn small_grid_has_expected_rows_and_terms() {
        let cfg = BenchConfig {
            sizes: vec![300],
            value_counts: vec![5],
            hfm_max_n: 300,
            approx_budget: 8,
            ..Default::default()
        };
        let recs = timing_bench(&cfg).unwrap();
        assert_eq!(recs.len(), 5 + 3);
        let alt = recs.iter().find(|r| r.form == "alt").unwrap();
        assert_eq!(alt.terms, 10);
        let bin = recs.iter().find(|r| r.form == "binarised").unwrap();
        assert_eq!(bin.terms, 1);
        assert!(recs.iter().all(|r| r.median_ns.unwrap() >= r.min_ns.unwrap()));
        assert!(alt.ratio.is_some());
        let prev = recs.iter().find(|r| r.form == "prev").unwrap();
        let max = recs.iter().find(|r| r.form == "max").unwrap();
        assert!(max.terms > prev.terms);
    }

    #[test]
    fn unrecorded_times_leave_columns_empty() {
        let cfg = BenchConfig {
            sizes: vec![200],
            value_counts: vec![6],
            hfm: false,
            record_times: false,
            repetitions: 1,
            ..Default::default()
        };
        let recs = timing_bench(&cfg).unwrap();
        assert!(recs.iter().all(|r| r.median_ns.is_none() && r.ratio.is_none()));
        let alt = recs.iter().find(|r| r.form == "alt").unwrap();
        assert_eq!(alt.terms, 15);
    }
}
