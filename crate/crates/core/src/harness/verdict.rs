//! Acceptance verdicts as pure functions of recorded measurements.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentKind, Thresholds};

/// Named measurement vectors of one run.
pub type Measurements = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    #[serde(with = "super::record::lossless")]
    pub value: f64,
    #[serde(with = "super::record::lossless")]
    pub threshold: f64,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, pass: bool, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), pass, value, threshold, detail: detail.into() }
    }

    fn missing(name: &str, key: &str) -> Self {
        Self::new(name, false, f64::NAN, f64::NAN, format!("measurement `{key}` missing"))
    }
}

fn get<'a>(m: &'a Measurements, key: &str) -> Option<&'a [f64]> {
    m.get(key).map(Vec::as_slice).filter(|v| !v.is_empty())
}

macro_rules! need {
    ($m:expr, $name:expr, $key:expr) => {
        match get($m, &$key) {
            Some(v) => v,
            None => return Verdict::missing($name, &$key),
        }
    };
}

/// Worst `v[k+1] / v[k]` step; monotone decrease within `slack` means `≤ 1 + slack`.
fn worst_step(v: &[f64]) -> f64 {
    v.windows(2)
        .map(|w| {
            if w[1] <= w[0] {
                if w[0] > 0.0 {
                    w[1] / w[0]
                } else {
                    0.0
                }
            } else if w[0] > 0.0 {
                w[1] / w[0]
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// Observed order between consecutive refinements; both errors at the
/// rounding floor count as converged.
pub fn observed_orders(ns: &[f64], errors: &[f64]) -> Vec<f64> {
    const ROUNDING_FLOOR: f64 = 1e-12;
    ns.windows(2)
        .zip(errors.windows(2))
        .map(|(n, e)| {
            if e[0] <= ROUNDING_FLOOR && e[1] <= ROUNDING_FLOOR {
                f64::INFINITY
            } else {
                (e[0] / e[1]).ln() / (n[1] / n[0]).ln()
            }
        })
        .collect()
}

fn convergence_order(m: &Measurements, th: &Thresholds) -> Vec<Verdict> {
    let name = "convergence_order";
    let ns = match get(m, "n") {
        Some(v) => v,
        None => return vec![Verdict::missing(name, "n")],
    };
    let mut worst = f64::INFINITY;
    let mut detail = Vec::new();
    for (key, errs) in m.iter().filter(|(k, _)| k.starts_with("residual.")) {
        if errs.len() != ns.len() {
            return vec![Verdict::missing(name, key)];
        }
        let orders = observed_orders(ns, errs);
        let lo = orders.iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.min(lo);
        detail.push(format!("{}: {:?}", &key["residual.".len()..], orders));
    }
    if detail.is_empty() {
        return vec![Verdict::missing(name, "residual.*")];
    }
    vec![Verdict::new(name, worst >= th.min_order, worst, th.min_order, detail.join("; "))]
}

fn fixed_point(m: &Measurements, th: &Thresholds) -> Vec<Verdict> {
    let change = match get(m, "sup_change") {
        Some(v) => {
            Verdict::new("fixed_point", v[0] <= th.fixed_point_tol, v[0], th.fixed_point_tol, "sup |g(T) - g(0)|")
        }
        None => Verdict::missing("fixed_point", "sup_change"),
    };
    let repeat = match get(m, "csv_identical") {
        Some(v) => Verdict::new("determinism", v[0] == 1.0, v[0], 1.0, "repeat run reproduces the CSV bytes"),
        None => Verdict::missing("determinism", "csv_identical"),
    };
    vec![change, repeat]
}

fn bilipschitz(m: &Measurements, th: &Thresholds) -> Verdict {
    let name = "bilipschitz";
    let u = need!(m, name, "upsilon");
    let worst = u.iter().copied().fold(0.0, f64::max);
    Verdict::new(name, worst <= th.upsilon_max, worst, th.upsilon_max, "max over scales of sup_t max(λmax, 1/λmin)/Λ0")
}

fn smoothing_rates(m: &Measurements, th: &Thresholds) -> Verdict {
    let name = "smoothing_rates";
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for key in ["c1", "c2"] {
        let c = need!(m, name, key);
        if c.iter().any(|v| !v.is_finite()) {
            return Verdict::new(name, false, f64::INFINITY, th.smoothing_spread, format!("{key} not finite"));
        }
        let med = median(c);
        let dev = c.iter().map(|v| if med > 0.0 { (v - med).abs() / med } else { (v - med).abs() }).fold(0.0, f64::max);
        worst = worst.max(dev);
        detail.push(format!("{key} = {c:?}"));
    }
    Verdict::new(name, worst <= th.smoothing_spread, worst, th.smoothing_spread, detail.join("; "))
}

fn smooth_control(m: &Measurements, th: &Thresholds) -> Verdict {
    let name = "smooth_control";
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for key in ["control.ratio1", "control.ratio2"] {
        let r = need!(m, name, key);
        // ascending in t: shrinking t must shrink the ratio
        monotone &= r.windows(2).all(|w| w[0] <= w[1]);
        let last = r[r.len() - 1];
        let drop = if last > 0.0 { r[0] / last } else { 0.0 };
        worst = worst.max(drop);
    }
    Verdict::new(
        name,
        monotone && worst <= th.control_drop,
        worst,
        th.control_drop,
        format!("ratio at the earliest sample over the latest; monotone = {monotone}"),
    )
}

fn w1n_growth(m: &Measurements, th: &Thresholds) -> Verdict {
    let name = "w1n_growth";
    let outer = need!(m, name, "w1n.outer0");
    let mut worst = f64::NEG_INFINITY;
    let mut fits = Vec::new();
    for (i, &e0) in outer.iter().enumerate() {
        let t = need!(m, name, format!("w1n.t.{i}"));
        let e = need!(m, name, format!("w1n.inner.{i}"));
        let t_max = t.iter().copied().fold(0.0, f64::max);
        let l_hat = t
            .iter()
            .zip(e)
            .filter(|(&ti, _)| ti > 0.0 && ti <= th.w1n_fit_fraction * t_max)
            .map(|(&ti, &ei)| (ei - e0) / ti)
            .fold(0.0, f64::max);
        let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        let excess = t.iter().zip(e).map(|(&ti, &ei)| ei - (e0 + l_hat * ti)).fold(f64::NEG_INFINITY, f64::max);
        let rel = if range > 0.0 {
            excess / range
        } else if excess > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(rel);
        fits.push(format!("L = {l_hat:.4e}"));
    }
    Verdict::new(
        name,
        worst <= th.w1n_slack,
        worst,
        th.w1n_slack,
        format!("excess over E_B'(0) + L t in units of the sample range; {}", fits.join(", ")),
    )
}

fn time_lipschitz(m: &Measurements, th: &Thresholds) -> Verdict {
    let name = "time_lipschitz";
    let l = need!(m, name, "lip2");
    let hi = l.iter().copied().fold(0.0, f64::max);
    let lo = l.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = if hi == 0.0 {
        1.0
    } else if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    };
    Verdict::new(
        name,
        hi.is_finite() && spread <= th.lipschitz_spread,
        spread,
        th.lipschitz_spread,
        format!("L2 per scale = {l:?}"),
    )
}

fn initial_continuity(m: &Measurements, th: &Thresholds) -> Verdict {
    let name = "initial_continuity";
    let d = need!(m, name, "diag.d");
    let base = need!(m, name, "diag.mollify_d");
    let monotone = d.windows(2).all(|w| w[1] <= w[0]);
    let last = d[d.len() - 1];
    let bound = th.continuity_factor * base[base.len() - 1];
    Verdict::new(
        name,
        monotone && last <= bound,
        last,
        bound,
        format!("d along the diagonal = {d:?}; monotone = {monotone}"),
    )
}

fn uniqueness(m: &Measurements, th: &Thresholds) -> Vec<Verdict> {
    let name = "uniqueness";
    let d = match get(m, "d") {
        Some(v) => v,
        None => return vec![Verdict::missing(name, "d")],
    };
    let step = worst_step(d);
    let last = d[d.len() - 1];
    vec![
        Verdict::new(
            "uniqueness_monotone",
            step <= 1.0 + th.uniqueness_slack,
            step,
            1.0 + th.uniqueness_slack,
            format!("d(sigma) = {d:?}"),
        ),
        Verdict::new("uniqueness_limit", last <= th.uniqueness_tol, last, th.uniqueness_tol, "d at the finest scale"),
    ]
}

fn scalar_persistence(m: &Measurements, th: &Thresholds) -> Vec<Verdict> {
    let name = "scalar_persistence";
    let kappa = match get(m, "kappa") {
        Some(v) => v,
        None => return vec![Verdict::missing(name, "kappa")],
    };
    let min_r = match get(m, "min_r") {
        Some(v) if v.len() == kappa.len() => v,
        _ => return vec![Verdict::missing(name, "min_r")],
    };
    let tol: Vec<f64> = kappa.iter().zip(min_r).map(|(k, r)| (k - r).max(0.0)).collect();
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for w in tol.windows(2) {
        if w[1] <= th.tol_floor {
            continue;
        }
        let ratio = if w[0] > 0.0 { w[1] / w[0] } else { f64::INFINITY };
        worst = worst.max(ratio);
        pass &= ratio <= th.tol_ratio;
    }
    vec![Verdict::new(name, pass, worst, th.tol_ratio, format!("tol per refinement = {tol:?}"))]
}

fn torus_rigidity(m: &Measurements, th: &Thresholds) -> Vec<Verdict> {
    let mut out = Vec::new();
    for (name, key) in [("rigidity_curvature", "sup_rm"), ("rigidity_distance", "l2_to_avg")] {
        out.push(match get(m, key) {
            Some(v) => {
                let step = worst_step(v);
                Verdict::new(
                    name,
                    step <= 1.0 + th.rigidity_slack,
                    step,
                    1.0 + th.rigidity_slack,
                    format!("{key} = {v:?}"),
                )
            }
            None => Verdict::missing(name, key),
        });
    }
    out
}

fn longtime_flat(m: &Measurements, th: &Thresholds) -> Vec<Verdict> {
    let (t, d1, dev) = match (get(m, "t"), get(m, "sup_d1"), get(m, "sup_dev_mean")) {
        (Some(a), Some(b), Some(c)) if a.len() == b.len() && b.len() == c.len() => (a, b, c),
        _ => return vec![Verdict::missing("longtime_decay", "t/sup_d1/sup_dev_mean")],
    };
    let first = d1[0];
    let last = d1[d1.len() - 1];
    let factor = if last > 0.0 { first / last } else { f64::INFINITY };
    let start = ((th.transient * t.len() as f64).ceil() as usize).min(t.len() - 1);
    let rate = decay_rate(&t[start..], &d1[start..]);
    let monotone = dev[start..].windows(2).all(|w| w[1] <= w[0]);
    let worst = dev[start..].windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    vec![
        Verdict::new(
            "longtime_decay",
            first == 0.0 || factor >= th.decay_factor,
            factor,
            th.decay_factor,
            format!("sup|dg| decay factor; fitted exponential rate {rate:.4}"),
        ),
        Verdict::new(
            "longtime_monotone",
            monotone,
            worst.max(0.0),
            0.0,
            format!("largest increase of sup|g - avg g| after sample {start}"),
        ),
    ]
}

/// Least-squares slope of `−ln v` against `t`; zero samples are skipped.
pub fn decay_rate(t: &[f64], v: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = t.iter().zip(v).filter(|(_, &y)| y > 0.0).map(|(&x, &y)| (x, y.ln())).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx > 0.0 {
        -sxy / sxx
    } else {
        0.0
    }
}

fn diffeo_consistency(m: &Measurements, th: &Thresholds) -> Vec<Verdict> {
    let name = "diffeo_consistency";
    let r = match get(m, "residual") {
        Some(v) if v.len() >= 2 => v,
        _ => return vec![Verdict::missing(name, "residual")],
    };
    let step = worst_step(r);
    vec![Verdict::new(name, step <= th.diffeo_ratio, step, th.diffeo_ratio, format!("residual per refinement = {r:?}"))]
}

/// All verdicts of an experiment kind, in a fixed order.
pub fn evaluate(kind: ExperimentKind, m: &Measurements, th: &Thresholds) -> Vec<Verdict> {
    use ExperimentKind::*;
    match kind {
        ConvergenceOrder => convergence_order(m, th),
        FixedPoint => fixed_point(m, th),
        Smoothing => vec![bilipschitz(m, th), smoothing_rates(m, th), smooth_control(m, th)],
        W1nGrowth => vec![w1n_growth(m, th)],
        TimeLipschitz => vec![time_lipschitz(m, th)],
        InitialContinuity => vec![initial_continuity(m, th)],
        RoughFamily => vec![
            bilipschitz(m, th),
            smoothing_rates(m, th),
            smooth_control(m, th),
            w1n_growth(m, th),
            time_lipschitz(m, th),
            initial_continuity(m, th),
        ],
        SingularPointDemo => vec![bilipschitz(m, th)],
        Uniqueness => uniqueness(m, th),
        ScalarPersistence => scalar_persistence(m, th),
        TorusRigidity => torus_rigidity(m, th),
        LongtimeFlat => longtime_flat(m, th),
        DiffeoConsistency => diffeo_consistency(m, th),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meas(pairs: &[(&str, Vec<f64>)]) -> Measurements {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn second_order_residuals_pass_and_first_order_fail() {
        let th = Thresholds::default();
        let good = meas(&[("n", vec![16.0, 32.0, 64.0]), ("residual.a", vec![4e-2, 1e-2, 2.5e-3])]);
        assert!(evaluate(ExperimentKind::ConvergenceOrder, &good, &th)[0].pass);
        let bad = meas(&[("n", vec![16.0, 32.0, 64.0]), ("residual.a", vec![4e-2, 2e-2, 1e-2])]);
        assert!(!evaluate(ExperimentKind::ConvergenceOrder, &bad, &th)[0].pass);
    }

    #[test]
    fn zero_residuals_count_as_converged() {
        let o = observed_orders(&[16.0, 32.0], &[0.0, 0.0]);
        assert_eq!(o[0], f64::INFINITY);
    }

    #[test]
    fn uniqueness_needs_decrease_and_small_limit() {
        let th = Thresholds::default();
        let ok = meas(&[("d", vec![1e-2, 3e-3, 5e-4])]);
        assert!(evaluate(ExperimentKind::Uniqueness, &ok, &th).iter().all(|v| v.pass));
        let flat = meas(&[("d", vec![0.2, 0.2, 0.2])]);
        let v = evaluate(ExperimentKind::Uniqueness, &flat, &th);
        assert!(v[0].pass && !v[1].pass);
    }

    #[test]
    fn identical_ladders_give_zero_distance_and_pass() {
        let th = Thresholds::default();
        let zero = meas(&[("d", vec![0.0, 0.0, 0.0])]);
        assert!(evaluate(ExperimentKind::Uniqueness, &zero, &th).iter().all(|v| v.pass));
    }

    #[test]
    fn tolerance_halving_rule() {
        let th = Thresholds::default();
        let halving = meas(&[("kappa", vec![-0.1, -0.1]), ("min_r", vec![-0.104, -0.102])]);
        assert!(evaluate(ExperimentKind::ScalarPersistence, &halving, &th)[0].pass);
        let stuck = meas(&[("kappa", vec![-0.1, -0.1]), ("min_r", vec![-0.104, -0.103])]);
        assert!(!evaluate(ExperimentKind::ScalarPersistence, &stuck, &th)[0].pass);
        let exact = meas(&[("kappa", vec![0.0, 0.0]), ("min_r", vec![1e-9, 1e-9])]);
        assert!(evaluate(ExperimentKind::ScalarPersistence, &exact, &th)[0].pass);
    }

    #[test]
    fn spread_around_median() {
        let th = Thresholds::default();
        let m = meas(&[("c1", vec![1.0, 1.1, 0.95]), ("c2", vec![2.0, 2.0, 2.3])]);
        assert!(smoothing_rates(&m, &th).pass);
        let m = meas(&[("c1", vec![1.0, 1.5, 0.95]), ("c2", vec![2.0, 2.0, 2.0])]);
        assert!(!smoothing_rates(&m, &th).pass);
    }

    #[test]
    fn w1n_fit_extrapolates() {
        let th = Thresholds::default();
        let t = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let linear: Vec<f64> = t.iter().map(|x| 1.0 + 0.5 * x).collect();
        let m = meas(&[("w1n.outer0", vec![1.0]), ("w1n.t.0", t.clone()), ("w1n.inner.0", linear)]);
        assert!(w1n_growth(&m, &th).pass);
        let jump = vec![1.0, 1.5, 2.0, 2.5, 9.0];
        let m = meas(&[("w1n.outer0", vec![1.0]), ("w1n.t.0", t), ("w1n.inner.0", jump)]);
        assert!(!w1n_growth(&m, &th).pass);
    }

    #[test]
    fn decay_rate_of_exponential() {
        let t: Vec<f64> = (0..10).map(|k| k as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|x| (-3.0 * x).exp()).collect();
        assert!((decay_rate(&t, &v) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_measurement_fails_by_name() {
        let v = evaluate(ExperimentKind::TorusRigidity, &Measurements::new(), &Thresholds::default());
        assert!(v.iter().all(|x| !x.pass && x.detail.contains("missing")));
    }
}
