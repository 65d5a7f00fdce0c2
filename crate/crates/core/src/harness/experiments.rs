//! Experiment pipelines: build data, evolve, and collect measurements.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::background::{BackgroundGeometry, HypothesisPolicy};
use crate::error::{Error, Result};
use crate::estimators::{
    self, gradient_norm, lp_distance, measure, spatial_average, sup_riemann, w1n_distance, DiagnosticsConfig,
    DiagnosticsRecorder, DiagnosticsSeries,
};
use crate::flow::{self, evolve, interpolate_cubic, DeTurckRecorder, FlowState, Observer};
use crate::lattice::{load_snapshot, pairwise_sum, BallStencil, Lattice, MAX_DIM};
use crate::oracle;
use crate::rough_init::{self, MollifierSpec, RoughKind, RoughSpec, WarpMode};
use crate::small::{self, Mat};
use crate::tensor_calc::{self, MetricField};

use super::config::{sample_times, ExperimentConfig, ExperimentKind, Spacing};
use super::record::{table, Outcome};

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn background(cfg: &ExperimentConfig, lat: Lattice) -> Result<BackgroundGeometry> {
    BackgroundGeometry::from_spec(&cfg.background, lat, cfg.step.stencil_order, HypothesisPolicy::Strict)
}

/// Rough data from the file if one is configured, otherwise from `spec`.
fn initial(cfg: &ExperimentConfig, lat: Lattice, spec: &RoughSpec) -> Result<MetricField> {
    match &cfg.rough_file {
        Some(path) => {
            let f = load_snapshot(path)?;
            if f.lattice() != &lat {
                return Err(cfg_err(format!("{} does not live on the configured lattice", path.display())));
            }
            MetricField::checked(f)
        }
        None => rough_init::generate(lat, spec),
    }
}

fn diagnostics(cfg: &ExperimentConfig) -> DiagnosticsConfig {
    DiagnosticsConfig {
        radii: cfg.radii.clone(),
        stride: cfg.stride,
        order: cfg.diag_order,
        curvature: true,
        riemann: false,
        reference: None,
        lp_exponent: 2.0,
    }
}

struct Member {
    series: DiagnosticsSeries,
    /// `(t, g)` at `t = 0` and every sample time, when requested.
    snaps: Vec<(f64, MetricField)>,
    last: FlowState,
}

/// Evolves one member, measuring at `t = 0` and at every sample time.
fn run_member(
    cfg: &ExperimentConfig,
    g0: MetricField,
    bg: &BackgroundGeometry,
    t_end: f64,
    times: &[f64],
    diag: &DiagnosticsConfig,
    keep: bool,
) -> Result<Member> {
    let mut state = FlowState::new(g0)?;
    let mut rec = DiagnosticsRecorder::new(diag.clone());
    rec.observe(&state, bg)?;
    let mut snaps = Vec::new();
    if keep {
        snaps.push((0.0, state.g.clone()));
    }
    {
        let mut keeper = |s: &FlowState, _: &BackgroundGeometry| -> Result<()> {
            if keep {
                snaps.push((s.t, s.g.clone()));
            }
            Ok(())
        };
        evolve(&mut state, &cfg.step, bg, t_end, times, &mut [&mut rec, &mut keeper])?;
    }
    Ok(Member { series: rec.series, snaps, last: state })
}

fn nearest_node(lat: &Lattice, fractions: &[f64; MAX_DIM]) -> usize {
    let n = lat.n_per_axis();
    let coords: Vec<usize> =
        (0..lat.dim()).map(|a| ((fractions[a] * n as f64).round() as i64).rem_euclid(n as i64) as usize).collect();
    lat.index(&coords)
}

/// `∫_B |∇̃g|^n` over a ball stencil.
fn ball_energy(
    g: &MetricField,
    bg: &BackgroundGeometry,
    cfg: &ExperimentConfig,
    ball: &BallStencil,
    center: usize,
) -> Result<f64> {
    let lat = *g.lattice();
    let n = lat.dim() as f64;
    let norm = gradient_norm(g.field(), bg, cfg.diag_order)?;
    let vals: Vec<f64> =
        ball.offsets().iter().map(|o| norm.get(lat.translated(center, &o[..lat.dim()]), 0).powf(n)).collect();
    Ok(pairwise_sum(&vals) * lat.cell_volume())
}

fn merged_times(base: &[f64], extra: &[f64], t_end: f64) -> Vec<f64> {
    let mut t: Vec<f64> = base.iter().chain(extra).copied().filter(|&s| s > 0.0 && s <= t_end).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    use ExperimentKind::*;
    match cfg.experiment {
        ConvergenceOrder => convergence_order(cfg),
        FixedPoint => fixed_point(cfg),
        Smoothing | W1nGrowth | TimeLipschitz | InitialContinuity | RoughFamily | SingularPointDemo => ladder(cfg),
        Uniqueness => uniqueness(cfg),
        ScalarPersistence => scalar_persistence(cfg),
        TorusRigidity => torus_rigidity(cfg),
        LongtimeFlat => longtime_flat(cfg),
        DiffeoConsistency => diffeo_consistency(cfg),
    }
}

fn convergence_order(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let mut names = Vec::new();
    for &n in &cfg.refine {
        let res = oracle::form_residuals(cfg.lattice_with(n)?, cfg.step.stencil_order)?;
        names = res.iter().map(|r| r.0).collect();
        let mut row = vec![n as f64];
        for (name, e) in res {
            out.measurements.entry(format!("residual.{name}")).or_default().push(e);
            row.push(e);
        }
        rows.push(row);
    }
    out.measurements.insert("n".into(), cfg.refine.iter().map(|&n| n as f64).collect());
    let mut header = vec!["n"];
    header.extend(names);
    out.tables.push(("refinement".into(), table(&header, &rows)));
    Ok(out)
}

fn fixed_point(cfg: &ExperimentConfig) -> Result<Outcome> {
    let lat = cfg.lattice()?;
    let bg = background(cfg, lat)?;
    let diag = diagnostics(cfg);
    let every = (cfg.steps / 10).max(1);
    let once = || -> Result<(MetricField, DiagnosticsSeries)> {
        let mut state = FlowState::new(bg.h().clone())?;
        let mut series = DiagnosticsSeries::new(diag.radii.clone());
        for k in 1..=cfg.steps {
            state = flow::step(&state, &cfg.step, &bg)?;
            if k % every == 0 || k == cfg.steps {
                series.push(measure(&state, &bg, &diag)?)?;
            }
        }
        Ok((state.g, series))
    };
    let (g1, s1) = once()?;
    let (_, s2) = once()?;
    let change = g1.field().axpy(-1.0, bg.h().field())?.max_abs();
    let mut out = Outcome::default();
    out.measurements.insert("sup_change".into(), vec![change]);
    out.measurements.insert("steps".into(), vec![cfg.steps as f64]);
    out.measurements.insert("csv_identical".into(), vec![f64::from(u8::from(s1.to_csv() == s2.to_csv()))]);
    out.series.push(("fixed_point".into(), s1));
    if cfg.snapshots {
        out.snapshots.push(("final".into(), g1.into_field()));
    }
    Ok(out)
}

/// Smooth control: both smoothing ratios of analytic data vanish as `t → 0`.
fn smooth_control(cfg: &ExperimentConfig, lat: Lattice, bg: &BackgroundGeometry, out: &mut Outcome) -> Result<()> {
    let amp = cfg.control_amplitude;
    let spec = RoughSpec {
        amplitude: Some(amp),
        lambda0: cfg.rough.lambda0.max((2.0 * amp.abs()).exp() * (1.0 + 1e-9)),
        warp: WarpMode::WarpedProduct,
        ..RoughSpec::new(RoughKind::SmoothWarp)
    };
    let g0 = rough_init::generate(lat, &spec)?;
    let t_min = cfg.control_t_end * 0.25f64.powi(cfg.control_samples as i32 - 1);
    let times = sample_times(t_min, cfg.control_t_end, cfg.control_samples, Spacing::Geometric)?;
    let diag = DiagnosticsConfig { radii: Vec::new(), curvature: false, ..diagnostics(cfg) };
    let m = run_member(cfg, g0, bg, cfg.control_t_end, &times, &diag, false)?;
    let recs: Vec<_> = m.series.records.iter().filter(|r| r.t > 0.0).collect();
    out.measurements.insert("control.t".into(), recs.iter().map(|r| r.t).collect());
    out.measurements.insert("control.ratio1".into(), recs.iter().map(|r| r.ratio1).collect());
    out.measurements.insert("control.ratio2".into(), recs.iter().map(|r| r.ratio2).collect());
    out.series.push(("control".into(), m.series));
    Ok(())
}

/// Mollification ladder on one rough datum; feeds every ladder verdict.
fn ladder(cfg: &ExperimentConfig) -> Result<Outcome> {
    if cfg.experiment == ExperimentKind::SingularPointDemo && cfg.rough.kind != RoughKind::PointSingularDemo {
        return Err(cfg_err("singular_point_demo needs rough.kind = point_singular_demo"));
    }
    let lat = cfg.lattice()?;
    let bg = background(cfg, lat)?;
    let rough = initial(cfg, lat, &cfg.rough)?;
    let diag = diagnostics(cfg);
    let center = nearest_node(&lat, &cfg.rough.center);
    let inner = BallStencil::new(&lat, cfg.w1n_radius)?;
    let outer = BallStencil::new(&lat, cfg.w1n_outer_radius)?;
    let h = bg.h();
    let lambda0 = cfg.rough.lambda0;
    let mut out = Outcome::default();
    let m = &mut out.measurements;
    m.insert("sigma".into(), cfg.sigmas.clone());
    m.insert("lambda0".into(), vec![lambda0]);
    let mut rows = Vec::new();
    for (i, &sigma) in cfg.sigmas.iter().enumerate() {
        let g0 = rough_init::mollify(&rough, &MollifierSpec { sigma, kernel: cfg.kernel })?;
        let t_diag = 0.25 * sigma * sigma;
        let times = merged_times(&cfg.observe_times, &[t_diag], cfg.t_end);
        let mollify_d = w1n_distance(&g0, &rough, &bg, cfg.diag_order, None)?.combined;
        let outer0 = ball_energy(&g0, &bg, cfg, &outer, center)?;
        let member = run_member(cfg, g0, &bg, cfg.t_end, &times, &diag, true)?;

        let upsilon = member
            .series
            .records
            .iter()
            .filter(|r| r.t > 0.0)
            .map(|r| r.lambda_max.max(1.0 / r.lambda_min) / lambda0)
            .fold(0.0, f64::max);
        let curves = estimators::smoothing_ratios(&member.series)?;
        let mut w_t = Vec::new();
        let mut w_e = Vec::new();
        for (t, g) in &member.snaps {
            w_t.push(*t);
            w_e.push(ball_energy(g, &bg, cfg, &inner, center)?);
        }
        let mut lip2: f64 = 0.0;
        for (a, (t, gt)) in member.snaps.iter().enumerate() {
            for (s, gs) in &member.snaps[..a] {
                let d = lp_distance(gt, gs, 2.0, h, None)?;
                lip2 = lip2.max(d * d / (t - s));
            }
        }
        let at_diag = member
            .snaps
            .iter()
            .find(|(t, _)| *t == t_diag)
            .map(|(_, g)| g)
            .ok_or_else(|| cfg_err(format!("diagonal time {t_diag} lies beyond t_end")))?;
        let d = w1n_distance(at_diag, &rough, &bg, cfg.diag_order, None)?.combined;

        m.entry("upsilon".into()).or_default().push(upsilon);
        m.entry("c1".into()).or_default().push(curves.c1());
        m.entry("c2".into()).or_default().push(curves.c2());
        m.entry("w1n.outer0".into()).or_default().push(outer0);
        m.insert(format!("w1n.t.{i}"), w_t);
        m.insert(format!("w1n.inner.{i}"), w_e);
        m.entry("lip2".into()).or_default().push(lip2);
        m.entry("diag.t".into()).or_default().push(t_diag);
        m.entry("diag.d".into()).or_default().push(d);
        m.entry("diag.mollify_d".into()).or_default().push(mollify_d);
        rows.push(vec![sigma, upsilon, curves.c1(), curves.c2(), outer0, lip2, t_diag, d, mollify_d]);
        out.series.push((format!("sigma{i}"), member.series));
        if cfg.snapshots {
            out.snapshots.push((format!("sigma{i}_final"), member.last.g.into_field()));
        }
    }
    out.tables.push((
        "ladder".into(),
        table(&["sigma", "upsilon", "c1", "c2", "outer_energy0", "lip2", "t_diag", "w1n_diag", "w1n_mollify"], &rows),
    ));
    if matches!(cfg.experiment, ExperimentKind::Smoothing | ExperimentKind::RoughFamily) {
        smooth_control(cfg, lat, &bg, &mut out)?;
    }
    Ok(out)
}

fn uniqueness(cfg: &ExperimentConfig) -> Result<Outcome> {
    let lat = cfg.lattice()?;
    let bg = background(cfg, lat)?;
    let a = initial(cfg, lat, &cfg.rough)?;
    let b = if cfg.compare == cfg.rough { a.clone() } else { rough_init::generate(lat, &cfg.compare)? };
    let diag = DiagnosticsConfig { radii: Vec::new(), ..diagnostics(cfg) };
    let mut out = Outcome::default();
    let mut d = Vec::new();
    for (i, &sigma) in cfg.sigmas.iter().enumerate() {
        let ga = rough_init::mollify(&a, &MollifierSpec { sigma, kernel: cfg.kernel })?;
        let gb = rough_init::mollify(&b, &MollifierSpec { sigma, kernel: cfg.compare_kernel })?;
        let ma = run_member(cfg, ga, &bg, cfg.t_end, &cfg.observe_times, &diag, false)?;
        let mb = run_member(cfg, gb, &bg, cfg.t_end, &cfg.observe_times, &diag, false)?;
        d.push(lp_distance(&ma.last.g, &mb.last.g, 2.0, bg.h(), None)?);
        out.series.push((format!("sigma{i}_a"), ma.series));
        out.series.push((format!("sigma{i}_b"), mb.series));
    }
    let rows: Vec<Vec<f64>> = cfg.sigmas.iter().zip(&d).map(|(s, v)| vec![*s, *v]).collect();
    out.tables.push(("uniqueness".into(), table(&["sigma", "l2_distance"], &rows)));
    out.measurements.insert("sigma".into(), cfg.sigmas.clone());
    out.measurements.insert("t_star".into(), vec![cfg.t_end]);
    out.measurements.insert("d".into(), d);
    Ok(out)
}

fn scalar_persistence(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let diag = DiagnosticsConfig { radii: Vec::new(), ..diagnostics(cfg) };
    let mut rows = Vec::new();
    for &n in &cfg.refine {
        let lat = cfg.lattice_with(n)?;
        let bg = background(cfg, lat)?;
        let g0 = initial(cfg, lat, &cfg.rough)?;
        let kappa = match cfg.kappa {
            Some(k) => k,
            None => estimators::scalar_floor(&g0, cfg.diag_order)?.0,
        };
        let member = run_member(cfg, g0, &bg, cfg.t_end, &cfg.observe_times, &diag, false)?;
        let min_r = member.series.records.iter().filter_map(|r| r.scalar_min).fold(f64::INFINITY, f64::min);
        let dt = member.last.last_dt;
        out.measurements.entry("n".into()).or_default().push(n as f64);
        out.measurements.entry("kappa".into()).or_default().push(kappa);
        out.measurements.entry("min_r".into()).or_default().push(min_r);
        out.measurements.entry("dt".into()).or_default().push(dt);
        rows.push(vec![n as f64, lat.spacing(), dt, kappa, min_r, (kappa - min_r).max(0.0)]);
        out.series.push((format!("n{n}"), member.series));
    }
    out.tables.push(("refinement".into(), table(&["n", "dx", "dt", "kappa", "min_r", "tol"], &rows)));
    Ok(out)
}

/// Warped member with scalar floor `−1/i` (times `rigidity.scale` in amplitude).
fn rigidity_member(cfg: &ExperimentConfig, lat: Lattice, i: u32) -> Result<(f64, MetricField)> {
    let kappa = -1.0 / i as f64;
    let k = 2.0 * PI * cfg.rough.frequency as f64 / lat.period();
    let amp = cfg.rigidity_scale * (-kappa) / (2.0 * k * k);
    let spec = RoughSpec {
        amplitude: Some(amp),
        frequency: cfg.rough.frequency,
        lambda0: cfg.rough.lambda0.max((2.0 * amp.abs()).exp() * (1.0 + 1e-9)),
        warp: WarpMode::WarpedProduct,
        ..RoughSpec::new(RoughKind::SmoothWarp)
    };
    Ok((kappa, rough_init::generate(lat, &spec)?))
}

fn torus_rigidity(cfg: &ExperimentConfig) -> Result<Outcome> {
    let lat = cfg.lattice()?;
    let bg = background(cfg, lat)?;
    let diag = DiagnosticsConfig { radii: Vec::new(), riemann: true, ..diagnostics(cfg) };
    let mut members = Vec::new();
    // every member is validated before any evolution starts
    for &i in &cfg.ladder {
        let (kappa, g) = rigidity_member(cfg, lat, i)?;
        let (floor, _) = estimators::scalar_floor(&g, cfg.diag_order)?;
        if floor < kappa * (1.0 + 1e-3) {
            return Err(cfg_err(format!("member i = {i} has min R = {floor:.6} below its floor {kappa:.6}")));
        }
        members.push((i, kappa, floor, g));
    }
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    for (i, kappa, floor, g) in members {
        let m = run_member(cfg, g, &bg, cfg.t_end, &cfg.observe_times, &diag, false)?;
        let gt = &m.last.g;
        let rm = sup_riemann(gt, cfg.diag_order)?;
        let l2 = lp_distance(gt, &spatial_average(gt), 2.0, bg.h(), None)?;
        for (key, v) in
            [("ladder", i as f64), ("kappa", kappa), ("initial_min_r", floor), ("sup_rm", rm), ("l2_to_avg", l2)]
        {
            out.measurements.entry(key.into()).or_default().push(v);
        }
        rows.push(vec![i as f64, kappa, floor, rm, l2]);
        out.series.push((format!("member{i}"), m.series));
    }
    out.tables.push(("rigidity".into(), table(&["i", "kappa", "initial_min_r", "sup_rm", "l2_to_avg"], &rows)));
    Ok(out)
}

fn longtime_flat(cfg: &ExperimentConfig) -> Result<Outcome> {
    let lat = cfg.lattice()?;
    let bg = background(cfg, lat)?;
    if !bg.is_flat() {
        return Err(cfg_err("longtime_flat needs a flat background"));
    }
    let g0 = initial(cfg, lat, &cfg.rough)?;
    let diag = DiagnosticsConfig { radii: Vec::new(), curvature: false, ..diagnostics(cfg) };
    let m = run_member(cfg, g0, &bg, cfg.t_end, &cfg.observe_times, &diag, false)?;
    let mut out = Outcome::default();
    let r = &m.series.records;
    out.measurements.insert("t".into(), r.iter().map(|x| x.t).collect());
    out.measurements.insert("sup_d1".into(), r.iter().map(|x| x.sup_d1).collect());
    out.measurements.insert("sup_dev_mean".into(), r.iter().map(|x| x.sup_dev_mean).collect());
    out.series.push(("longtime".into(), m.series));
    if cfg.snapshots {
        out.snapshots.push(("final".into(), m.last.g.into_field()));
    }
    Ok(out)
}

/// `|A|_G` for symmetric `A`.
fn norm_in(a: &Mat, g: &Mat, dim: usize) -> f64 {
    let (gi, _) = small::inverse(g, dim);
    let b = small::mul(&small::mul(&gi, a, dim), &gi, dim);
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += b[i][j] * a[i][j];
        }
    }
    s.max(0.0).sqrt()
}

fn pull_back(field: &crate::lattice::Field, x: &[f64; MAX_DIM], j: &Mat, dim: usize) -> Mat {
    let mut packed = [0.0; 6];
    interpolate_cubic(field, x, &mut packed[..crate::lattice::sym_count(dim)]);
    let m = small::unpack_sym(&packed, dim);
    small::mul(&small::mul(&small::transpose(j), &m, dim), j, dim)
}

fn diffeo_consistency(cfg: &ExperimentConfig) -> Result<Outcome> {
    let base_n = cfg.refine[0] as f64;
    let base_count = cfg.observe_times.len().max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<[f64; MAX_DIM]> = (0..cfg.diffeo_seeds)
        .map(|_| {
            let mut p = [0.0; MAX_DIM];
            for v in p.iter_mut().take(cfg.dim) {
                *v = rng.gen_range(0.0..cfg.period);
            }
            p
        })
        .collect();
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    for &n in &cfg.refine {
        let lat = cfg.lattice_with(n)?;
        let dim = lat.dim();
        let bg = background(cfg, lat)?;
        let g0 = initial(cfg, lat, &cfg.rough)?;
        // sample spacing shrinks like dx² so the time differences keep pace
        let scale = (n as f64 / base_n).powi(2);
        let count = (base_count as f64 * scale).round() as usize;
        let times = sample_times(cfg.t_end / count as f64, cfg.t_end, count, Spacing::Linear)?;
        let order = cfg.step.stencil_order;
        let mut w_rec = DeTurckRecorder { order: Some(order), snapshots: Vec::new() };
        let mut fields: Vec<(f64, crate::lattice::Field, crate::lattice::Field)> = Vec::new();
        let mut state = FlowState::new(g0)?;
        let mut keep = |s: &FlowState, _: &BackgroundGeometry| -> Result<()> {
            fields.push((s.t, s.g.field().clone(), tensor_calc::ricci(&s.g, order)?));
            Ok(())
        };
        w_rec.observe(&state, &bg)?;
        keep.observe(&state, &bg)?;
        evolve(&mut state, &cfg.step, &bg, cfg.t_end, &times, &mut [&mut w_rec, &mut keep])?;
        let trace = flow::integrate_diffeo(&w_rec.snapshots, &seeds, cfg.diffeo_gauge, cfg.diffeo_substeps)?;
        let mut worst: f64 = 0.0;
        for s in 0..seeds.len() {
            for k in 1..fields.len() - 1 {
                let at = |q: usize| pull_back(&fields[q].1, &trace.positions[q][s], &trace.jacobians[q][s], dim);
                let (gm, gp, gk) = (at(k - 1), at(k + 1), at(k));
                let ric = pull_back(&fields[k].2, &trace.positions[k][s], &trace.jacobians[k][s], dim);
                let dt = fields[k + 1].0 - fields[k - 1].0;
                let mut res = small::ZERO;
                for a in 0..dim {
                    for b in 0..dim {
                        res[a][b] = (gp[a][b] - gm[a][b]) / dt + 2.0 * ric[a][b];
                    }
                }
                worst = worst.max(norm_in(&res, &gk, dim));
            }
        }
        let drift = trace
            .jacobians
            .last()
            .map(|js| js.iter().map(|j| (small::det(j, dim) - 1.0).abs()).fold(0.0, f64::max))
            .unwrap_or(0.0);
        out.measurements.entry("n".into()).or_default().push(n as f64);
        out.measurements.entry("samples".into()).or_default().push(count as f64);
        out.measurements.entry("residual".into()).or_default().push(worst);
        out.measurements.entry("jacobian_drift".into()).or_default().push(drift);
        rows.push(vec![n as f64, count as f64, worst, drift]);
    }
    out.tables.push(("refinement".into(), table(&["n", "samples", "residual", "jacobian_drift"], &rows)));
    Ok(out)
}
