//! Brute-force reference implementations used by the integration tests.
//!
//! Everything here works from raw row slices with one pass per quantity and
//! shares no code with the library, so agreement is a meaningful check.

#![allow(dead_code)]

use fairlens_core::data::{FeatureMatrix, SensitiveAttributeSpec};
use fairlens_core::Dataset;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PROBES: [&str; 5] = ["dp", "eopp", "peq", "ppar", "npv"];
pub const FORMS: [&str; 6] = ["orig", "binarised", "ext", "alt", "ext_avg", "alt_avg"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// (condition holds, event holds) for one row.
fn probe_row(probe: &str, p: u8, l: u8) -> (bool, bool) {
    match probe {
        "dp" => (true, p == 1),
        "eopp" => (l == 1, p == 1),
        "peq" => (l == 0, p == 1),
        "ppar" => (p == 1, l == 1),
        "npv" => (p == 0, l == 0),
        _ => panic!("unknown probe {probe}"),
    }
}

/// Event frequency among rows selected by `keep` that meet the condition.
pub fn rate_where(probe: &str, yhat: &[u8], y: &[u8], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let mut cond = 0u64;
    let mut ev = 0u64;
    for r in 0..y.len() {
        if !keep(r) {
            continue;
        }
        let (c, e) = probe_row(probe, yhat[r], y[r]);
        if c {
            cond += 1;
            if e {
                ev += 1;
            }
        }
    }
    (cond > 0).then(|| ev as f64 / cond as f64)
}

/// Form value, or None where the library must refuse.
pub fn form_value(probe: &str, form: &str, yhat: &[u8], y: &[u8], codes: &[u32], k: usize, privileged: u32) -> Option<f64> {
    let group_rate = |j: u32| rate_where(probe, yhat, y, |r| codes[r] == j);
    match form {
        "orig" | "binarised" => {
            if form == "orig" && k != 2 {
                return None;
            }
            let rp = group_rate(privileged)?;
            let ro = rate_where(probe, yhat, y, |r| codes[r] != privileged)?;
            Some((ro - rp).abs())
        }
        "ext" | "ext_avg" => {
            let overall = rate_where(probe, yhat, y, |_| true)?;
            let devs: Vec<f64> = (0..k as u32).filter_map(group_rate).map(|r| (r - overall).abs()).collect();
            if devs.len() < 2 {
                return None;
            }
            Some(if form == "ext" {
                devs.iter().copied().fold(0.0, f64::max)
            } else {
                devs.iter().sum::<f64>() / devs.len() as f64
            })
        }
        "alt" | "alt_avg" => {
            let rates: Vec<f64> = (0..k as u32).filter_map(group_rate).collect();
            if rates.len() < 2 {
                return None;
            }
            let mut gaps = Vec::new();
            for a in 0..rates.len() {
                for b in a + 1..rates.len() {
                    gaps.push((rates[a] - rates[b]).abs());
                }
            }
            Some(if form == "alt" {
                gaps.iter().copied().fold(0.0, f64::max)
            } else {
                gaps.iter().sum::<f64>() / gaps.len() as f64
            })
        }
        _ => panic!("unknown form {form}"),
    }
}

pub fn eo_value(form: &str, yhat: &[u8], y: &[u8], codes: &[u32], k: usize, privileged: u32) -> Option<f64> {
    let t = form_value("eopp", form, yhat, y, codes, k, privileged);
    let f = form_value("peq", form, yhat, y, codes, k, privileged);
    match (t, f) {
        (Some(a), Some(b)) => Some(0.5 * (a + b)),
        (Some(a), None) | (None, Some(a)) => Some(a),
        (None, None) => None,
    }
}

pub fn di_value(yhat: &[u8], codes: &[u32], privileged: u32) -> Option<f64> {
    let all = vec![0u8; yhat.len()];
    let rp = rate_where("dp", yhat, &all, |r| codes[r] == privileged)?;
    let ro = rate_where("dp", yhat, &all, |r| codes[r] != privileged)?;
    (rp > 0.0).then(|| ro / rp)
}

pub fn gamma_value(yhat: &[u8], y: &[u8], codes: &[u32], k: usize) -> Option<f64> {
    let n = y.len() as f64;
    let overall = rate_where("peq", yhat, y, |_| true)?;
    let mut best = 0.0f64;
    for j in 0..k as u32 {
        let neg = (0..y.len()).filter(|&r| codes[r] == j && y[r] == 0).count();
        if let Some(fpr) = rate_where("peq", yhat, y, |r| codes[r] == j) {
            best = best.max(neg as f64 / n * (overall - fpr).abs());
        }
    }
    Some(best)
}

pub fn worst_group_error(yhat: &[u8], y: &[u8], codes: &[u32], k: usize) -> f64 {
    (0..k as u32)
        .filter_map(|j| {
            let rows: Vec<usize> = (0..y.len()).filter(|&r| codes[r] == j).collect();
            (!rows.is_empty()).then(|| rows.iter().filter(|&&r| yhat[r] != y[r]).count() as f64 / rows.len() as f64)
        })
        .fold(0.0, f64::max)
}

pub fn bgl_value(losses: &[f64], codes: &[u32], k: usize) -> f64 {
    (0..k as u32)
        .filter_map(|j| {
            let v: Vec<f64> = (0..losses.len()).filter(|&r| codes[r] == j).map(|r| losses[r]).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .fold(0.0, f64::max)
}

/// Worst stratum of the ext-form DP gap, over strata where it is defined.
pub fn csp_value(yhat: &[u8], codes: &[u32], k: usize, privileged: u32, strata: &[u32]) -> Option<f64> {
    let mut levels: Vec<u32> = strata.to_vec();
    levels.sort_unstable();
    levels.dedup();
    let mut best: Option<f64> = None;
    for s in levels {
        let rows: Vec<usize> = (0..yhat.len()).filter(|&r| strata[r] == s).collect();
        let p: Vec<u8> = rows.iter().map(|&r| yhat[r]).collect();
        let c: Vec<u32> = rows.iter().map(|&r| codes[r]).collect();
        let zeros = vec![0u8; rows.len()];
        if let Some(v) = form_value("dp", "ext", &p, &zeros, &c, k, privileged) {
            best = Some(best.map_or(v, |b| b.max(v)));
        }
    }
    best
}

pub fn edf_value(yhat: &[u8], codes: &[u32], k: usize, kappa: f64) -> Option<f64> {
    let mut eps = 0.0f64;
    for outcome in [0u8, 1] {
        let mut logs = Vec::new();
        for j in 0..k as u32 {
            let total = codes.iter().filter(|&&c| c == j).count();
            if total == 0 {
                continue;
            }
            let hits = (0..yhat.len()).filter(|&r| codes[r] == j && yhat[r] == outcome).count();
            let p = (hits as f64 + kappa) / (total as f64 + 2.0 * kappa);
            if p <= 0.0 {
                return None;
            }
            logs.push(p.ln());
        }
        if logs.len() < 2 {
            return None;
        }
        for a in &logs {
            for b in &logs {
                eps = eps.max(a - b);
            }
        }
    }
    Some(eps)
}

/// Min-max ratio; `kind` is dpr, eoppr, cspr or gbr_int.
pub fn ratio_value(kind: &str, yhat: &[u8], y: &[u8], codes: &[u32], k: usize, mask: Option<&[bool]>) -> Option<f64> {
    let mut q = Vec::new();
    for j in 0..k as u32 {
        let in_group = |r: usize| codes[r] == j;
        let v = match kind {
            "dpr" => rate_where("dp", yhat, y, in_group),
            "eoppr" => rate_where("eopp", yhat, y, in_group),
            "cspr" => {
                let m = mask?;
                rate_where("dp", yhat, y, |r| in_group(r) && m[r])
            }
            "gbr_int" => {
                let rows: Vec<usize> = (0..y.len()).filter(|&r| in_group(r)).collect();
                let pos_pred = rows.iter().filter(|&&r| yhat[r] == 1).count();
                let pos_label = rows.iter().filter(|&&r| y[r] == 1).count();
                (pos_label > 0).then(|| pos_pred as f64 / pos_label as f64)
            }
            _ => panic!("unknown ratio {kind}"),
        };
        q.extend(v);
    }
    if q.len() < 2 {
        return None;
    }
    let hi = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
    (hi > 0.0).then(|| lo / hi)
}

pub fn idi_value(yhat: &[u8], codes: &[u32], k: usize) -> Option<f64> {
    let zeros = vec![0u8; yhat.len()];
    let rates: Vec<f64> = (0..k as u32)
        .filter_map(|j| rate_where("dp", yhat, &zeros, |r| codes[r] == j))
        .collect();
    if rates.len() < 2 || rates.iter().any(|&r| r == 0.0) {
        return None;
    }
    let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
    Some(lo / hi)
}

pub fn multiacc_value(scores: &[f64], y: &[u8], codes: &[u32], k: usize) -> f64 {
    let n = y.len() as f64;
    (0..k as u32)
        .map(|j| {
            let s: f64 = (0..y.len()).filter(|&r| codes[r] == j).map(|r| scores[r] - y[r] as f64).sum();
            s.abs() / n
        })
        .fold(0.0, f64::max)
}

pub fn calibration_gap(scores: &[f64], y: &[u8], codes: &[u32], k: usize, bins: usize) -> f64 {
    let bin_of = |s: f64| ((s * bins as f64).floor() as usize).min(bins - 1);
    let mut gap = 0.0f64;
    for b in 0..bins {
        let rates: Vec<f64> = (0..k as u32)
            .filter_map(|j| {
                let rows: Vec<usize> = (0..y.len()).filter(|&r| codes[r] == j && bin_of(scores[r]) == b).collect();
                (!rows.is_empty()).then(|| rows.iter().filter(|&&r| y[r] == 1).count() as f64 / rows.len() as f64)
            })
            .collect();
        if rates.len() >= 2 {
            let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
            gap = gap.max(hi - lo);
        }
    }
    gap
}

pub fn gei_value(yhat: &[u8], y: &[u8], alpha: f64) -> f64 {
    let b: Vec<f64> = yhat.iter().zip(y).map(|(&p, &l)| p as f64 - l as f64 + 1.0).collect();
    gei_of(&b, alpha)
}

pub fn gei_of(b: &[f64], alpha: f64) -> f64 {
    let n = b.len() as f64;
    let mu = b.iter().sum::<f64>() / n;
    b.iter().map(|&x| (x / mu).powf(alpha) - 1.0).sum::<f64>() / (n * alpha * (alpha - 1.0))
}

pub fn theil_of(b: &[f64]) -> f64 {
    let n = b.len() as f64;
    let mu = b.iter().sum::<f64>() / n;
    b.iter()
        .map(|&x| if x == 0.0 { 0.0 } else { x / mu * (x / mu).ln() })
        .sum::<f64>()
        / n
}

/// Two-pass Pearson correlation.
pub fn pearson_two_pass(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Points of the augmented space: features followed by `w * outcome`.
pub fn augmented(ds: &Dataset, outcome: &[u8], w: f64) -> Vec<Vec<f64>> {
    (0..ds.n_rows())
        .map(|r| {
            let mut p = ds.features.row(r).to_vec();
            p.push(w * outcome[r] as f64);
            p
        })
        .collect()
}

/// Per row, distance to the nearest row of another group.
fn nearest_other(points: &[Vec<f64>], codes: &[u32]) -> Vec<Option<f64>> {
    (0..points.len())
        .map(|i| {
            (0..points.len())
                .filter(|&r| codes[r] != codes[i])
                .map(|r| dist(&points[i], &points[r]))
                .reduce(f64::min)
        })
        .collect()
}

/// O(n²) reference for the max and avg aggregates over one or more
/// attributes: returns (g_y, g_f) for the requested version.
pub fn hfm_brute(ds: &Dataset, yhat: &[u8], attributes: &[usize], version: &str) -> (f64, f64) {
    let py = augmented(ds, &ds.labels, 1.0);
    let pf = augmented(ds, yhat, 1.0);
    let mut g = (0.0f64, 0.0f64);
    for &a in attributes {
        let codes = &ds.sensitive[a];
        let ny = nearest_other(&py, codes);
        let nf = nearest_other(&pf, codes);
        match version {
            "max" | "prev" => {
                g.0 = g.0.max(ny.iter().flatten().copied().fold(0.0, f64::max));
                g.1 = g.1.max(nf.iter().flatten().copied().fold(0.0, f64::max));
            }
            "avg" => {
                let n = ds.n_rows() as f64;
                g.0 += ny.iter().flatten().sum::<f64>() / n;
                g.1 += nf.iter().flatten().sum::<f64>() / n;
            }
            _ => panic!("unknown version {version}"),
        }
    }
    if version == "avg" {
        g.0 /= attributes.len() as f64;
        g.1 /= attributes.len() as f64;
    }
    g
}

/// Symmetric max-min distance written out directly.
pub fn hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let directed = |s: &[Vec<f64>], t: &[Vec<f64>]| {
        s.iter()
            .map(|p| t.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Random dataset with up to `max_attrs` attributes of up to `max_values`
/// values each. Every value code is in range but may be unobserved.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, max_attrs: usize, max_values: usize) -> Dataset {
    let n_feat = rng.gen_range(1..=3);
    let data: Vec<f64> = (0..n * n_feat).map(|_| rng.gen::<f64>()).collect();
    let n_attr = rng.gen_range(1..=max_attrs);
    let mut attributes = Vec::new();
    let mut sensitive = Vec::new();
    for i in 0..n_attr {
        let k = rng.gen_range(2..=max_values);
        let privileged = rng.gen_range(0..k as u32);
        attributes.push(SensitiveAttributeSpec::numbered(format!("a{i}"), k, privileged));
        // skewed draws so some groups end up empty or tiny
        let weights: Vec<f64> = (0..k).map(|_| rng.gen::<f64>().powi(3)).collect();
        let total: f64 = weights.iter().sum();
        sensitive.push(
            (0..n)
                .map(|_| {
                    let mut u = rng.gen::<f64>() * total;
                    for (j, w) in weights.iter().enumerate() {
                        if u < *w {
                            return j as u32;
                        }
                        u -= w;
                    }
                    (k - 1) as u32
                })
                .collect(),
        );
    }
    let labels = (0..n).map(|_| u8::from(rng.gen::<f64>() < 0.5)).collect();
    Dataset::new(
        FeatureMatrix::new(n, n_feat, data),
        (0..n_feat).map(|j| format!("x{j}")).collect(),
        attributes,
        sensitive,
        labels,
    )
    .expect("random dataset is well formed")
}

/// Hard predictions with a per-row positive rate drawn once per call.
pub fn random_predictions(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let p = rng.gen::<f64>();
    (0..n).map(|_| u8::from(rng.gen::<f64>() < p)).collect()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Library against reference on every attribute of `ds` (plus the super
/// attribute when there are several). Returns the number of comparisons and
/// a description of each disagreement.
pub fn compare_all(ds: &Dataset, yhat: &[u8], scores: &[f64], strata: &[u32], tol: f64) -> (usize, Vec<String>) {
    use fairlens_core::group::{
        bounded_group_loss, conditional_statistical_parity, disparate_impact, disparate_treatment, equalized_odds,
        gamma_subgroup_fairness, minimax_gap, probe_metric, probe_metric_direct, EmptyCellPolicy,
    };
    use fairlens_core::intersectional::{
        calibration_by_group, empirical_differential_fairness, intersectional_disparate_impact, minmax_ratio,
        multiaccuracy_check, RatioKind,
    };
    use fairlens_core::{Form, ProbeKind};

    let mut checked = 0usize;
    let mut bad = Vec::new();
    let mut check = |what: String, lib: Option<f64>, oracle: Option<f64>| {
        checked += 1;
        let ok = match (lib, oracle) {
            (Some(a), Some(b)) => (a - b).abs() <= tol,
            (None, None) => true,
            _ => false,
        };
        if !ok {
            bad.push(format!("{what}: library {lib:?}, reference {oracle:?}"));
        }
    };

    let mut scopes: Vec<(Dataset, usize)> = (0..ds.n_attributes()).map(|a| (ds.clone(), a)).collect();
    if ds.n_attributes() > 1 {
        let all: Vec<usize> = (0..ds.n_attributes()).collect();
        if let Ok((with, idx)) = ds.with_super_attribute(&all, fairlens_core::data::DEFAULT_SUPER_CAP) {
            scopes.push((with, idx));
        }
    }
    let y = &ds.labels;
    let losses: Vec<f64> = y.iter().zip(scores).map(|(&l, &s)| (l as f64 - s).abs()).collect();
    let mask: Vec<bool> = strata.iter().map(|&s| s == 0).collect();
    for (scope, a) in &scopes {
        let part = scope.partition(*a);
        let codes = &scope.sensitive[*a];
        let k = scope.attributes[*a].n_values();
        let pv = part.privileged;
        let tag = |m: &str| format!("{m} on {}", scope.attributes[*a].name);
        for probe in ProbeKind::ALL {
            for form_name in FORMS {
                let form = Form::parse(form_name).unwrap();
                let oracle = form_value(probe.prefix(), form_name, yhat, y, codes, k, pv);
                let lib = probe_metric(probe, yhat, y, &part, form, EmptyCellPolicy::Skip).ok().map(|m| m.value);
                check(tag(&format!("{}.{form_name}", probe.prefix())), lib, oracle);
                let direct = probe_metric_direct(probe, yhat, y, &part, form).ok().map(|m| m.value);
                check(tag(&format!("{}.{form_name} direct", probe.prefix())), direct, oracle);
            }
        }
        for form_name in FORMS {
            let form = Form::parse(form_name).unwrap();
            let lib = equalized_odds(yhat, y, &part, form, EmptyCellPolicy::Skip).ok().map(|m| m.value);
            check(tag(&format!("eo.{form_name}")), lib, eo_value(form_name, yhat, y, codes, k, pv));
        }
        check(
            tag("di"),
            disparate_impact(yhat, &part, 0.8).ok().map(|d| d.ratio),
            di_value(yhat, codes, pv),
        );
        check(
            tag("dt"),
            disparate_treatment(yhat, y, &part, EmptyCellPolicy::Skip).ok().map(|m| m.value),
            form_value("dp", "ext", yhat, &vec![0; y.len()], codes, k, pv),
        );
        check(
            tag("gammasf"),
            gamma_subgroup_fairness(yhat, y, &part).ok().map(|g| g.max),
            gamma_value(yhat, y, codes, k),
        );
        check(
            tag("minimax"),
            minimax_gap(&[yhat.to_vec()], y, &part).ok().map(|r| r[0].max_error),
            Some(worst_group_error(yhat, y, codes, k)),
        );
        check(
            tag("bgl"),
            bounded_group_loss(&losses, &part, 0.3).ok().map(|b| b.max_loss),
            Some(bgl_value(&losses, codes, k)),
        );
        check(
            tag("csp"),
            conditional_statistical_parity(yhat, &part, strata).ok().map(|c| c.value),
            csp_value(yhat, codes, k, pv, strata),
        );
        for kappa in [0.0, 0.5] {
            check(
                tag(&format!("edf kappa={kappa}")),
                empirical_differential_fairness(yhat, &part, kappa).ok().map(|e| e.epsilon),
                edf_value(yhat, codes, k, kappa),
            );
        }
        for kind in RatioKind::ALL {
            let m = (kind == RatioKind::Cspr).then_some(mask.as_slice());
            check(
                tag(kind.as_str()),
                minmax_ratio(kind, yhat, y, &part, m).ok().map(|r| r.value),
                ratio_value(kind.as_str(), yhat, y, codes, k, m),
            );
        }
        check(
            tag("idi"),
            intersectional_disparate_impact(yhat, &part).ok().map(|r| r.value),
            idi_value(yhat, codes, k),
        );
        check(
            tag("multiacc"),
            multiaccuracy_check(scores, y, &part, 0.05).ok().map(|r| r.max_residual),
            Some(multiacc_value(scores, y, codes, k)),
        );
        check(
            tag("calibration"),
            calibration_by_group(scores, y, &part, 10).ok().map(|r| r.max_gap),
            Some(calibration_gap(scores, y, codes, k, 10)),
        );
    }
    let b: Vec<f64> = yhat.iter().zip(y).map(|(&p, &l)| p as f64 - l as f64 + 1.0).collect();
    let mu = b.iter().sum::<f64>();
    for alpha in [0.5, 2.0, 3.0] {
        check(
            format!("gei({alpha})"),
            fairlens_core::individual::general_entropy_index(yhat, y, alpha).ok(),
            (mu > 0.0).then(|| gei_of(&b, alpha)),
        );
    }
    check(
        "theil".into(),
        fairlens_core::individual::theil_index(yhat, y).ok(),
        (mu > 0.0).then(|| theil_of(&b)),
    );
    (checked, bad)
}
