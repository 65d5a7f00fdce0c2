//! Diagnostic quantities measured along a run.
//!
//! Norms follow the convention of [`crate::tensor_calc`]: every slot of a
//! tensor is contracted with the background metric `h`. On a flat background
//! this is the Euclidean norm of all (unpacked) components.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::background::BackgroundGeometry;
use crate::error::{Error, Result};
use crate::flow::{FlowState, Observer};
use crate::lattice::{pairwise_sum, sym_count, sym_index, BallStencil, Field, Lattice, Layout, StencilOrder};
use crate::small::{self, Mat};
use crate::tensor_calc::{self, unpack_gamma, MetricField, Variance};

/// `∇̃_a g_ij` as `Rank3Sym` in `[a][ij]` order.
pub fn covariant_gradient(g: &Field, bg: &BackgroundGeometry, order: StencilOrder) -> Result<Field> {
    let lat = *g.lattice();
    if bg.lattice() != &lat {
        return Err(Error::LatticeMismatch);
    }
    let dim = lat.dim();
    let sc = sym_count(dim);
    let mut out = Field::zeros(lat, Layout::Rank3Sym);
    for node in lat.nodes() {
        let gm = small::unpack_sym(g.at(node), dim);
        let gt = if bg.is_flat() { None } else { Some(unpack_gamma(bg.christoffel().at(node), dim)) };
        let dst = out.at_mut(node);
        for a in 0..dim {
            for s in 0..sc {
                let mut v = g.d1(node, s, a, order);
                if let Some(gt) = &gt {
                    let (i, j) = crate::lattice::sym_pair(s, dim);
                    for m in 0..dim {
                        v -= gt[m][a][i] * gm[m][j] + gt[m][a][j] * gm[i][m];
                    }
                }
                dst[a * sc + s] = v;
            }
        }
    }
    Ok(out)
}

/// `|∇̃ g|_h` at every node.
pub fn gradient_norm(g: &Field, bg: &BackgroundGeometry, order: StencilOrder) -> Result<Field> {
    let d = covariant_gradient(g, bg, order)?;
    tensor_calc::tensor_norm_h(&d, &[Variance::Lower; 3], bg.h())
}

/// `|∂∂ g|_h` at every node (coordinate second derivatives).
pub fn hessian_norm(g: &Field, bg: &BackgroundGeometry, order: StencilOrder) -> Result<Field> {
    let lat = *g.lattice();
    let dim = lat.dim();
    let sc = sym_count(dim);
    let mut hess = Field::zeros(lat, Layout::Rank4Sym);
    for node in lat.nodes() {
        let dst = hess.at_mut(node);
        for p in 0..dim {
            for q in 0..dim {
                for s in 0..sc {
                    dst[(p * dim + q) * sc + s] = g.d2(node, s, p, q, order);
                }
            }
        }
    }
    tensor_calc::tensor_norm_h(&hess, &[Variance::Lower; 4], bg.h())
}

/// Sup over strided centres of `r · (⨍_{B(x,r)} f^p)^{1/p}` for a precomputed norm field.
pub fn concentration_of_norm(norm: &Field, radius: f64, stride: usize, p: f64) -> Result<f64> {
    let lat = *norm.lattice();
    let ball = BallStencil::new(&lat, radius)?;
    let stride = stride.max(1);
    let powered = norm.map(|v| v.abs().powf(p));
    let mut sup: f64 = 0.0;
    for node in lat.nodes() {
        if lat.coords(node)[..lat.dim()].iter().any(|c| c % stride != 0) {
            continue;
        }
        sup = sup.max(ball.mean(&powered, node));
    }
    Ok(radius * sup.powf(1.0 / p))
}

/// Scale-invariant gradient concentration `sup_x (r^n ⨍_{B(x,r)} |∇̃g|^n)^{1/n}`.
pub fn concentration(
    g: &MetricField,
    bg: &BackgroundGeometry,
    radius: f64,
    stride: usize,
    order: StencilOrder,
) -> Result<f64> {
    let norm = gradient_norm(g.field(), bg, order)?;
    concentration_of_norm(&norm, radius, stride, g.dim() as f64)
}

fn difference(g1: &MetricField, g2: &MetricField) -> Result<Field> {
    g1.field().check_same_lattice(g2.field())?;
    g1.field().axpy(-1.0, g2.field())
}

/// Optional restriction of an integral to a ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: usize,
    pub radius: f64,
}

fn ball_values(f: &Field, ball: Option<Ball>) -> Result<Vec<f64>> {
    match ball {
        None => Ok(f.data().to_vec()),
        Some(b) => {
            let lat = f.lattice();
            let st = BallStencil::new(lat, b.radius)?;
            Ok(st.offsets().iter().map(|o| f.get(lat.translated(b.center, &o[..lat.dim()]), 0)).collect())
        }
    }
}

/// Normalized `(⨍ |g1 − g2|_h^p)^{1/p}`.
pub fn lp_distance(g1: &MetricField, g2: &MetricField, p: f64, h: &MetricField, ball: Option<Ball>) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    let diff = difference(g1, g2)?;
    let norm = tensor_calc::tensor_norm_h(&diff, &[Variance::Lower; 2], h)?;
    let vals: Vec<f64> = ball_values(&norm, ball)?.into_iter().map(|v| v.powf(p)).collect();
    Ok((pairwise_sum(&vals) / vals.len() as f64).powf(1.0 / p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W1nDistance {
    /// `(∫ |∇̃(g1 − g2)|^n)^{1/n}`
    pub gradient: f64,
    /// `(∫ |g1 − g2|^n)^{1/n}`
    pub lebesgue: f64,
    pub combined: f64,
}

pub fn w1n_distance(
    g1: &MetricField,
    g2: &MetricField,
    bg: &BackgroundGeometry,
    order: StencilOrder,
    ball: Option<Ball>,
) -> Result<W1nDistance> {
    let diff = difference(g1, g2)?;
    let lat = *diff.lattice();
    let n = lat.dim() as f64;
    let dv = lat.cell_volume();
    // ∇̃ is linear in g only for flat backgrounds; use plain differences of the difference
    let grad = {
        let d = if bg.is_flat() {
            gradient_norm(&diff, bg, order)?
        } else {
            let a = covariant_gradient(g1.field(), bg, order)?;
            let b = covariant_gradient(g2.field(), bg, order)?;
            tensor_calc::tensor_norm_h(&a.axpy(-1.0, &b)?, &[Variance::Lower; 3], bg.h())?
        };
        let vals: Vec<f64> = ball_values(&d, ball)?.into_iter().map(|v| v.powf(n)).collect();
        (pairwise_sum(&vals) * dv).powf(1.0 / n)
    };
    let leb = {
        let norm = tensor_calc::tensor_norm_h(&diff, &[Variance::Lower; 2], bg.h())?;
        let vals: Vec<f64> = ball_values(&norm, ball)?.into_iter().map(|v| v.powf(n)).collect();
        (pairwise_sum(&vals) * dv).powf(1.0 / n)
    };
    Ok(W1nDistance { gradient: grad, lebesgue: leb, combined: grad + leb })
}

/// Minimum of the scalar curvature and where it is attained.
pub fn scalar_floor(g: &MetricField, order: StencilOrder) -> Result<(f64, usize)> {
    let r = tensor_calc::scalar_curv(g, order)?;
    Ok(r.data().iter().enumerate().fold((f64::INFINITY, 0), |(m, a), (i, &v)| if v < m { (v, i) } else { (m, a) }))
}

/// `(⨍ φ^{2n/(n−2)})^{(n−2)/n} / ⨍ |∂φ|²` over a ball; 0 for `φ ≡ 0`.
pub fn sobolev_check(phi: &Field, center: usize, radius: f64, order: StencilOrder) -> Result<f64> {
    let lat = *phi.lattice();
    let n = lat.dim() as f64;
    if lat.dim() < 3 {
        return Err(Error::InvalidArgument("Sobolev exponent needs dimension >= 3".into()));
    }
    if phi.layout() != Layout::Scalar {
        return Err(Error::LayoutMismatch("sobolev_check needs a scalar profile".into()));
    }
    let q = 2.0 * n / (n - 2.0);
    let grad = crate::lattice::gradient(phi, order)?;
    let mut grad_sq = Field::zeros(lat, Layout::Scalar);
    for node in lat.nodes() {
        grad_sq.at_mut(node)[0] = grad.at(node).iter().map(|v| v * v).sum();
    }
    let ball = Some(Ball { center, radius });
    let pv: Vec<f64> = ball_values(phi, ball)?.into_iter().map(|v| v.abs().powf(q)).collect();
    let gv = ball_values(&grad_sq, ball)?;
    let lhs = (pairwise_sum(&pv) / pv.len() as f64).powf((n - 2.0) / n);
    let rhs = pairwise_sum(&gv) / gv.len() as f64;
    if rhs == 0.0 {
        return Ok(0.0);
    }
    Ok(lhs / rhs)
}

/// Constant metric equal to the spatial average of `g`.
pub fn spatial_average(g: &MetricField) -> MetricField {
    let lat = *g.lattice();
    let sc = sym_count(lat.dim());
    let mut mean = vec![0.0; sc];
    for (s, m) in mean.iter_mut().enumerate() {
        let vals: Vec<f64> = lat.nodes().map(|n| g.field().get(n, s)).collect();
        *m = pairwise_sum(&vals) / vals.len() as f64;
    }
    let f = Field::from_fn(lat, Layout::Sym2, |_, out| out.copy_from_slice(&mean));
    MetricField::new(f).expect("Sym2 layout")
}

/// Sup-norm distance, nodewise max of `|g1 − g2|_h`.
pub fn sup_distance(g1: &MetricField, g2: &MetricField, h: &MetricField) -> Result<f64> {
    let diff = difference(g1, g2)?;
    Ok(tensor_calc::tensor_norm_h(&diff, &[Variance::Lower; 2], h)?.max_abs())
}

/// `sup |Rm(g)|` with all slots contracted by `g` itself.
pub fn sup_riemann(g: &MetricField, order: StencilOrder) -> Result<f64> {
    let rm = tensor_calc::riemann(g, order)?;
    Ok(tensor_calc::tensor_norm_h(&rm, &[Variance::Upper, Variance::Lower, Variance::Lower, Variance::Lower], g)?
        .max_abs())
}

/// What a [`DiagnosticsRecorder`] measures.
#[derive(Debug, Clone)]
pub struct DiagnosticsConfig {
    pub radii: Vec<f64>,
    pub stride: usize,
    pub order: StencilOrder,
    pub curvature: bool,
    pub riemann: bool,
    pub reference: Option<MetricField>,
    pub lp_exponent: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            radii: Vec::new(),
            stride: 1,
            order: StencilOrder::Second,
            curvature: true,
            riemann: false,
            reference: None,
            lp_exponent: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub t: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub concentration: Vec<f64>,
    pub sup_d1: f64,
    pub sup_d2: f64,
    pub ratio1: f64,
    pub ratio2: f64,
    pub scalar_min: Option<f64>,
    pub scalar_max: Option<f64>,
    pub grad_energy: f64,
    pub sup_dev_mean: f64,
    pub sup_rm: Option<f64>,
    pub lp_to_ref: Option<f64>,
    pub w1n_to_ref: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSeries {
    pub radii: Vec<f64>,
    pub records: Vec<DiagnosticRecord>,
}

/// Measures every configured diagnostic on one state.
pub fn measure(state: &FlowState, bg: &BackgroundGeometry, cfg: &DiagnosticsConfig) -> Result<DiagnosticRecord> {
    let g = &state.g;
    let n = g.dim() as f64;
    let lat = *g.lattice();
    let bl = tensor_calc::bilipschitz(g, bg.h())?;
    let d1 = gradient_norm(g.field(), bg, cfg.order)?;
    let d2 = hessian_norm(g.field(), bg, cfg.order)?;
    let concentration =
        cfg.radii.iter().map(|&r| concentration_of_norm(&d1, r, cfg.stride, n)).collect::<Result<Vec<_>>>()?;
    let sup_d1 = d1.max_abs();
    let sup_d2 = d2.max_abs();
    let (scalar_min, scalar_max) = if cfg.curvature {
        let r = tensor_calc::scalar_curv(g, cfg.order)?;
        let (lo, hi) = r.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        (Some(lo), Some(hi))
    } else {
        (None, None)
    };
    let energy_vals: Vec<f64> = d1.data().iter().map(|v| v.powf(n)).collect();
    let grad_energy = pairwise_sum(&energy_vals) * lat.cell_volume();
    let sup_dev_mean = sup_distance(g, &spatial_average(g), bg.h())?;
    let sup_rm = if cfg.riemann { Some(sup_riemann(g, cfg.order)?) } else { None };
    let (lp_to_ref, w1n_to_ref) = match &cfg.reference {
        Some(r) => (
            Some(lp_distance(g, r, cfg.lp_exponent, bg.h(), None)?),
            Some(w1n_distance(g, r, bg, cfg.order, None)?.combined),
        ),
        None => (None, None),
    };
    Ok(DiagnosticRecord {
        t: state.t,
        lambda_min: bl.lambda_min,
        lambda_max: bl.lambda_max,
        concentration,
        sup_d1,
        sup_d2,
        ratio1: state.t.sqrt() * sup_d1,
        ratio2: state.t * sup_d2,
        scalar_min,
        scalar_max,
        grad_energy,
        sup_dev_mean,
        sup_rm,
        lp_to_ref,
        w1n_to_ref,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "skipped".to_string(), |x| x.to_string())
}

impl DiagnosticsSeries {
    pub fn new(radii: Vec<f64>) -> Self {
        Self { radii, records: Vec::new() }
    }

    pub fn push(&mut self, rec: DiagnosticRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if !(rec.t > last.t) {
                return Err(Error::InvalidArgument(format!("sample time {} does not follow {}", rec.t, last.t)));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from("t,lambda_min,lambda_max");
        for r in &self.radii {
            let _ = write!(h, ",conc_r{r}");
        }
        h.push_str(
            ",sup_d1,sup_d2,ratio1,ratio2,scalar_min,scalar_max,grad_energy,sup_dev_mean,sup_rm,lp_to_ref,w1n_to_ref",
        );
        h
    }

    /// Fixed-order CSV, values in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{},{}", r.t, r.lambda_min, r.lambda_max);
            for c in &r.concentration {
                let _ = write!(out, ",{c}");
            }
            let _ = writeln!(
                out,
                ",{},{},{},{},{},{},{},{},{},{},{}",
                r.sup_d1,
                r.sup_d2,
                r.ratio1,
                r.ratio2,
                opt(r.scalar_min),
                opt(r.scalar_max),
                r.grad_energy,
                r.sup_dev_mean,
                opt(r.sup_rm),
                opt(r.lp_to_ref),
                opt(r.w1n_to_ref)
            );
        }
        out
    }
}

/// Observer that appends a [`DiagnosticRecord`] at every sample time.
#[derive(Debug, Clone)]
pub struct DiagnosticsRecorder {
    pub config: DiagnosticsConfig,
    pub series: DiagnosticsSeries,
}

impl DiagnosticsRecorder {
    pub fn new(config: DiagnosticsConfig) -> Self {
        let series = DiagnosticsSeries::new(config.radii.clone());
        Self { config, series }
    }
}

impl Observer for DiagnosticsRecorder {
    fn observe(&mut self, state: &FlowState, bg: &BackgroundGeometry) -> Result<()> {
        let rec = measure(state, bg, &self.config)?;
        self.series.push(rec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingCurves {
    pub times: Vec<f64>,
    pub ratio1: Vec<f64>,
    pub ratio2: Vec<f64>,
    /// Running maxima; the last entries are the empirical constants.
    pub running_max1: Vec<f64>,
    pub running_max2: Vec<f64>,
}

impl SmoothingCurves {
    pub fn c1(&self) -> f64 {
        self.running_max1.last().copied().unwrap_or(0.0)
    }

    pub fn c2(&self) -> f64 {
        self.running_max2.last().copied().unwrap_or(0.0)
    }
}

/// `t^{k/2} sup |∂^k g|` for `k = 1, 2` and their running maxima.
pub fn smoothing_ratios(series: &DiagnosticsSeries) -> Result<SmoothingCurves> {
    if series.records.is_empty() {
        return Err(Error::InvalidArgument("empty diagnostics series".into()));
    }
    let running = |v: &[f64]| {
        v.iter()
            .scan(0.0_f64, |m, &x| {
                *m = m.max(x);
                Some(*m)
            })
            .collect::<Vec<_>>()
    };
    let ratio1: Vec<f64> = series.records.iter().map(|r| r.ratio1).collect();
    let ratio2: Vec<f64> = series.records.iter().map(|r| r.ratio2).collect();
    Ok(SmoothingCurves {
        times: series.times(),
        running_max1: running(&ratio1),
        running_max2: running(&ratio2),
        ratio1,
        ratio2,
    })
}

/// Nodewise matrix at a node of a `Sym2` field.
pub fn node_matrix(f: &Field, node: usize) -> Mat {
    small::unpack_sym(f.at(node), f.lattice().dim())
}

/// Component `(i, j)` of a `Sym2` field as a scalar field.
pub fn component_field(f: &Field, i: usize, j: usize) -> Field {
    let lat: Lattice = *f.lattice();
    let s = sym_index(i, j, lat.dim());
    Field::from_vec(lat, Layout::Scalar, lat.nodes().map(|n| f.get(n, s)).collect()).expect("scalar size")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::make_flat;
    use std::f64::consts::PI;

    fn warp(lat: Lattice, a: f64) -> MetricField {
        let k = 2.0 * PI / lat.period();
        let f = Field::from_fn(lat, Layout::Sym2, |x, out| {
            let mut m = small::identity(lat.dim());
            m[1][1] = (2.0 * a * (k * x[0]).sin()).exp();
            small::pack_sym(&m, lat.dim(), out);
        });
        MetricField::checked(f).unwrap()
    }

    #[test]
    fn concentration_constant_and_linear() {
        let lat = Lattice::new(3, 16, 1.0).unwrap();
        let bg = make_flat(lat);
        let id = MetricField::identity(lat);
        assert_eq!(concentration(&id, &bg, 0.25, 1, StencilOrder::Second).unwrap(), 0.0);
        let c1 = concentration(&warp(lat, 0.02), &bg, 0.25, 1, StencilOrder::Second).unwrap();
        let c2 = concentration(&warp(lat, 0.01), &bg, 0.25, 1, StencilOrder::Second).unwrap();
        assert!((c2 / c1 - 0.5).abs() < 0.05, "{}", c2 / c1);
        let shifted = MetricField::checked(warp(lat, 0.02).field().translate(&[3, 1, 0])).unwrap();
        let c3 = concentration(&shifted, &bg, 0.25, 1, StencilOrder::Second).unwrap();
        assert!((c3 - c1).abs() <= 1e-14 * c1);
    }

    #[test]
    fn lp_distance_properties() {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let h = MetricField::identity(lat);
        let g = warp(lat, 0.1);
        assert_eq!(lp_distance(&g, &g, 2.0, &h, None).unwrap(), 0.0);
        let c = 0.3;
        let shifted = MetricField::new(g.field().axpy(c, h.field()).unwrap()).unwrap();
        let d = lp_distance(&shifted, &g, 2.0, &h, None).unwrap();
        assert!((d - c * 3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn w1n_constant_shift_has_no_gradient_part() {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let bg = make_flat(lat);
        let g = warp(lat, 0.1);
        let shifted = MetricField::new(g.field().axpy(0.2, bg.h().field()).unwrap()).unwrap();
        let d = w1n_distance(&shifted, &g, &bg, StencilOrder::Second, None).unwrap();
        assert!(d.gradient < 1e-13);
        assert!(d.lebesgue > 0.0);
        let z = w1n_distance(&g, &g, &bg, StencilOrder::Second, None).unwrap();
        assert_eq!(z.combined, 0.0);
    }

    #[test]
    fn sobolev_zero_and_homogeneity() {
        let lat = Lattice::new(3, 16, 1.0).unwrap();
        let zero = Field::zeros(lat, Layout::Scalar);
        assert_eq!(sobolev_check(&zero, 0, 0.4, StencilOrder::Second).unwrap(), 0.0);
        let c = [0.5, 0.5, 0.5];
        let bump = Field::scalar_from_fn(lat, |x| {
            let r = lat.torus_distance(x, &c);
            if r < 0.3 {
                (1.0 - (r / 0.3).powi(2)).powi(3)
            } else {
                0.0
            }
        });
        let center = lat.index(&[8, 8, 8]);
        let a = sobolev_check(&bump, center, 0.4, StencilOrder::Second).unwrap();
        let b = sobolev_check(&bump.map(|v| 7.0 * v), center, 0.4, StencilOrder::Second).unwrap();
        assert!(a > 0.0 && (a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn series_rejects_non_increasing_times() {
        let lat = Lattice::new(2, 8, 1.0).unwrap();
        let bg = make_flat(lat);
        let mut state = FlowState::new(MetricField::identity(lat)).unwrap();
        state.t = 0.1;
        let cfg = DiagnosticsConfig { radii: vec![0.25], ..Default::default() };
        let rec = measure(&state, &bg, &cfg).unwrap();
        let mut s = DiagnosticsSeries::new(vec![0.25]);
        s.push(rec.clone()).unwrap();
        assert!(s.push(rec).is_err());
        let csv = s.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().next().unwrap().starts_with("t,lambda_min,lambda_max,conc_r0.25"));
    }
}
