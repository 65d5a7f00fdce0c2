use std::f64::consts::PI;

use proptest::prelude::*;

use hflow::background::{make_flat, warped_metric, BackgroundGeometry, HypothesisPolicy};
use hflow::estimators::{self, concentration, gradient_norm, lp_distance, w1n_distance};
use hflow::flow::{self, hflow_rhs, hflow_rhs_general, parabolic_rescale, FlowState, StepPolicy};
use hflow::lattice::{global_integral, partial, Field, Lattice, Layout, StencilOrder};
use hflow::rough_init::{self, kernel_weights, KernelKind, MollifierSpec, RoughKind, RoughSpec};
use hflow::small;
use hflow::tensor_calc::{self, bilipschitz, MetricField};

/// `δ + Σ c_m cos(2π k_m·x + φ_m) A_m` with small symmetric `A_m`.
fn smooth_metric(lat: Lattice, coeffs: &[f64]) -> MetricField {
    let dim = lat.dim();
    let f = Field::from_fn(lat, Layout::Sym2, |x, out| {
        let mut m = small::identity(dim);
        for (q, c) in coeffs.chunks(3).enumerate() {
            let k = [1.0 + (q % 2) as f64, (q % 3) as f64, 1.0];
            let arg: f64 = (0..dim).map(|a| k[a] * x[a]).sum::<f64>() * 2.0 * PI + c[1] * 3.0;
            let (i, j) = (q % dim, (q + 1) % dim);
            m[i][j] += 0.5 * c[0] * arg.cos();
            m[j][i] += 0.5 * c[0] * arg.cos();
            m[i][i] += c[2] * arg.sin();
        }
        small::pack_sym(&m, dim, out);
    });
    MetricField::checked(f).expect("small perturbation stays SPD")
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.1..0.1f64, 9)
}

fn offset() -> impl Strategy<Value = [isize; 3]> {
    [-5isize..6, -5isize..6, -5isize..6]
}

fn translated(g: &MetricField, off: &[isize]) -> MetricField {
    MetricField::checked(g.field().translate(off)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn derivatives_commute_with_translation(c in coeffs(), off in offset()) {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let g = smooth_metric(lat, &c);
        for order in [StencilOrder::Second, StencilOrder::Fourth] {
            for axis in 0..3 {
                let a = partial(&g.field().translate(&off), axis, order).unwrap();
                let b = partial(g.field(), axis, order).unwrap().translate(&off);
                prop_assert_eq!(a.data(), b.data());
            }
        }
    }

    #[test]
    fn rhs_and_step_commute_with_translation(c in coeffs(), off in offset()) {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let bg = make_flat(lat);
        let g = smooth_metric(lat, &c);
        let a = hflow_rhs(&translated(&g, &off), &bg, StencilOrder::Fourth).unwrap();
        let b = hflow_rhs(&g, &bg, StencilOrder::Fourth).unwrap().translate(&off);
        prop_assert_eq!(a.data(), b.data());

        let policy = StepPolicy { cfl_safety: 0.5, ..StepPolicy::default() };
        let s1 = flow::step(&FlowState::new(translated(&g, &off)).unwrap(), &policy, &bg).unwrap();
        let s2 = flow::step(&FlowState::new(g).unwrap(), &policy, &bg).unwrap();
        prop_assert_eq!(s1.g.field(), &s2.g.field().translate(&off));
    }

    #[test]
    fn step_output_is_symmetric_and_deterministic(c in coeffs()) {
        let lat = Lattice::new(2, 12, 1.0).unwrap();
        let bg = make_flat(lat);
        let state = FlowState::new(smooth_metric(lat, &c)).unwrap();
        let policy = StepPolicy::default();
        let a = flow::step(&state, &policy, &bg).unwrap();
        let b = flow::step(&state, &policy, &bg).unwrap();
        prop_assert_eq!(a.g.field().data(), b.g.field().data());
        // packed storage makes symmetry structural; the matrices must also be SPD
        for node in lat.nodes() {
            let m = a.g.matrix(node);
            prop_assert!((m[0][1] - m[1][0]).abs() <= 1e-13);
            prop_assert!(small::cholesky(&m, 2).is_some());
        }
    }

    #[test]
    fn flat_fast_path_matches_general_path(c in coeffs()) {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let bg = make_flat(lat);
        let g = smooth_metric(lat, &c);
        let a = hflow_rhs(&g, &bg, StencilOrder::Fourth).unwrap();
        let b = hflow_rhs_general(&g, &bg, StencilOrder::Fourth).unwrap();
        prop_assert!(a.axpy(-1.0, &b).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn bilipschitz_bounds_hold_as_quadratic_forms(c in coeffs(), v in prop::collection::vec(-1.0..1.0f64, 3)) {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let g = smooth_metric(lat, &c);
        let h = MetricField::checked(warped_metric(lat, 0, 0.2, 1).unwrap().into_field()).unwrap();
        let rep = bilipschitz(&g, &h).unwrap();
        for node in lat.nodes() {
            let (gm, hm) = (g.matrix(node), h.matrix(node));
            let q = |m: &small::Mat| -> f64 {
                (0..3).map(|i| (0..3).map(|j| m[i][j] * v[i] * v[j]).sum::<f64>()).sum()
            };
            let (gv, hv) = (q(&gm), q(&hm));
            prop_assert!(gv >= rep.lambda_min * hv - 1e-12 * hv.max(1.0));
            prop_assert!(gv <= rep.lambda_max * hv + 1e-12 * hv.max(1.0));
        }
    }

    #[test]
    fn constant_metrics_have_no_curvature(a in 0.5..2.0f64, b in -0.3..0.3f64, d in 0.5..2.0f64) {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let m = [[a, b, 0.0], [b, d, 0.1], [0.0, 0.1, 1.0]];
        let g = MetricField::checked(MetricField::constant(lat, &m).into_field()).unwrap();
        let rm = tensor_calc::riemann(&g, StencilOrder::Fourth).unwrap();
        prop_assert!(rm.max_abs() <= 1e-10);
    }

    #[test]
    fn scalar_curvature_translates_and_rescales(c in coeffs(), off in offset(), lambda in 0.3..3.0f64) {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let g = smooth_metric(lat, &c);
        let r = tensor_calc::scalar_curv(&g, StencilOrder::Fourth).unwrap();
        let rt = tensor_calc::scalar_curv(&translated(&g, &off), StencilOrder::Fourth).unwrap();
        prop_assert_eq!(&rt, &r.translate(&off));

        let scaled = parabolic_rescale(&FlowState::new(g).unwrap(), lambda).unwrap();
        let rs = tensor_calc::scalar_curv(&scaled.g, StencilOrder::Fourth).unwrap();
        let scale = r.max_abs().max(1e-300);
        for (x, y) in r.data().iter().zip(rs.data()) {
            prop_assert!((x / (lambda * lambda) - y).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn ricci_asymmetry_is_truncation_error(c in coeffs()) {
        let asym = |n: usize| {
            let lat = Lattice::new(3, n, 1.0).unwrap();
            let full = tensor_calc::ricci_full(&smooth_metric(lat, &c), StencilOrder::Fourth).unwrap();
            let mut worst = 0.0f64;
            for node in lat.nodes() {
                let v = full.at(node);
                for i in 0..3 {
                    for j in 0..3 {
                        worst = worst.max((v[i * 3 + j] - v[j * 3 + i]).abs());
                    }
                }
            }
            worst
        };
        let (coarse, fine) = (asym(16), asym(32));
        prop_assert!(fine <= 1e-12 || fine * 8.0 <= coarse, "{} -> {}", coarse, fine);
    }

    #[test]
    fn kernels_are_normalized_and_symmetric(s in 0.5..6.0f64, gaussian in any::<bool>()) {
        let lat = Lattice::new(2, 32, 1.0).unwrap();
        let kernel = if gaussian { KernelKind::Gaussian } else { KernelKind::Box };
        let w = kernel_weights(&lat, &MollifierSpec { sigma: s * lat.spacing(), kernel }).unwrap();
        let total: f64 = w.iter().map(|p| p.1).sum();
        prop_assert!((total - 1.0).abs() <= 1e-13);
        for &(o, v) in &w {
            prop_assert!(v > 0.0);
            let mirror = w.iter().find(|p| p.0 == -o).map(|p| p.1);
            // on even lattices the Nyquist offset has no mirror
            if o.unsigned_abs() * 2 != lat.n_per_axis() {
                prop_assert_eq!(mirror, Some(v));
            }
        }
    }

    #[test]
    fn mollify_commutes_with_translation(c in coeffs(), off in offset(), s in 0.5..3.0f64) {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let g = smooth_metric(lat, &c);
        let spec = MollifierSpec { sigma: s * lat.spacing(), kernel: KernelKind::Gaussian };
        let a = rough_init::mollify(&translated(&g, &off), &spec).unwrap();
        let b = rough_init::mollify(&g, &spec).unwrap();
        prop_assert_eq!(a.field(), &b.field().translate(&off));
    }

    #[test]
    fn distances_are_metrics(c1 in coeffs(), c2 in coeffs(), c3 in coeffs()) {
        let lat = Lattice::new(2, 12, 1.0).unwrap();
        let bg = make_flat(lat);
        let (a, b, c) = (smooth_metric(lat, &c1), smooth_metric(lat, &c2), smooth_metric(lat, &c3));
        let h = bg.h();
        let lp = |x: &MetricField, y: &MetricField| lp_distance(x, y, 2.0, h, None).unwrap();
        let w1 = |x: &MetricField, y: &MetricField| w1n_distance(x, y, &bg, StencilOrder::Fourth, None).unwrap().combined;
        prop_assert_eq!(lp(&a, &a), 0.0);
        prop_assert_eq!(w1(&a, &a), 0.0);
        prop_assert!((lp(&a, &b) - lp(&b, &a)).abs() <= 1e-15);
        prop_assert!((w1(&a, &b) - w1(&b, &a)).abs() <= 1e-14);
        prop_assert!(lp(&a, &c) <= lp(&a, &b) + lp(&b, &c) + 1e-14);
        prop_assert!(w1(&a, &c) <= w1(&a, &b) + w1(&b, &c) + 1e-14);
    }

    #[test]
    fn find_scale_grows_with_epsilon(amp in 0.02..0.3f64, e1 in 0.01..1.0f64, e2 in 0.01..1.0f64) {
        let lat = Lattice::new(2, 32, 1.0).unwrap();
        let bg = make_flat(lat);
        let spec = RoughSpec { amplitude: Some(amp), ..RoughSpec::new(RoughKind::SmoothWarp) };
        let g = rough_init::generate(lat, &spec).unwrap();
        let radii = rough_init::radius_ladder(&lat, 0.5);
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let r_lo = rough_init::find_scale(&g, &bg, lo, &radii, 1, StencilOrder::Fourth).unwrap();
        let r_hi = rough_init::find_scale(&g, &bg, hi, &radii, 1, StencilOrder::Fourth).unwrap();
        prop_assert!(r_lo.unwrap_or(0.0) <= r_hi.unwrap_or(0.0));
    }

    #[test]
    fn concentration_is_scale_invariant(c in coeffs(), lambda in 0.25..4.0f64) {
        let lat = Lattice::new(2, 16, 1.0).unwrap();
        let bg = make_flat(lat);
        let g = smooth_metric(lat, &c);
        let scaled = parabolic_rescale(&FlowState::new(g.clone()).unwrap(), lambda).unwrap();
        let bg2 = make_flat(*scaled.g.lattice());
        let a = concentration(&g, &bg, 0.25, 1, StencilOrder::Fourth).unwrap();
        let b = concentration(&scaled.g, &bg2, 0.25 * lambda, 1, StencilOrder::Fourth).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
    }

    #[test]
    fn generated_metrics_respect_lambda0(
        lambda0 in 1.2..4.0f64,
        beta in 1.0..8.0f64,
        seed in 0u64..1000,
        which in 0usize..4,
    ) {
        let lat = Lattice::new(3, 12, 1.0).unwrap();
        let kind = [RoughKind::LoglogSpike, RoughKind::FourierMultiscale, RoughKind::PointSingularDemo, RoughKind::SmoothWarp][which];
        let spec = RoughSpec { lambda0, beta, seed, ..RoughSpec::new(kind) };
        match rough_init::generate(lat, &spec) {
            Ok(g) => {
                let rep = bilipschitz(&g, &MetricField::identity(lat)).unwrap();
                prop_assert!(rep.lambda() <= lambda0 + 1e-12);
            }
            // only the fixed-amplitude smooth warp may refuse a tight bound
            Err(e) => prop_assert!(kind == RoughKind::SmoothWarp, "{}", e),
        }
    }

    #[test]
    fn global_integral_is_reproducible(c in coeffs()) {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let f = estimators::component_field(smooth_metric(lat, &c).field(), 0, 1);
        let a = global_integral(&f).unwrap();
        let b = global_integral(&f).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn stencils_converge_at_their_order() {
    let err = |n: usize, order: StencilOrder| {
        let lat = Lattice::new(2, n, 1.0).unwrap();
        let f = Field::scalar_from_fn(lat, |x| (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos());
        let d = partial(&f, 0, order).unwrap();
        let exact = Field::scalar_from_fn(lat, |x| 2.0 * PI * (2.0 * PI * x[0]).cos() * (4.0 * PI * x[1]).cos());
        d.axpy(-1.0, &exact).unwrap().max_abs()
    };
    assert!(err(16, StencilOrder::Second) / err(32, StencilOrder::Second) >= 3.8);
    assert!(err(16, StencilOrder::Fourth) / err(32, StencilOrder::Fourth) >= 14.0);
}

#[test]
fn loglog_gradient_energy_is_stable_under_refinement() {
    let energy = |n: usize| {
        let lat = Lattice::new(3, n, 1.0).unwrap();
        let spec = RoughSpec { lambda0: 1.5, ..RoughSpec::new(RoughKind::LoglogSpike) };
        let g = rough_init::generate(lat, &spec).unwrap();
        let norm = gradient_norm(g.field(), &make_flat(lat), StencilOrder::Fourth).unwrap();
        global_integral(&norm.map(|v| v.powi(3))).unwrap()
    };
    let e: Vec<f64> = [32, 64, 128].into_iter().map(energy).collect();
    for w in e.windows(2) {
        assert!(w[0].is_finite() && w[1].is_finite());
        assert!((w[1] - w[0]).abs() <= 0.1 * w[0], "{e:?}");
    }
}

#[test]
fn background_precompute_matches_recomputation() {
    let lat = Lattice::new(3, 8, 1.0).unwrap();
    let h = warped_metric(lat, 1, 0.01, 1).unwrap();
    let bg = BackgroundGeometry::from_metric(h.clone(), StencilOrder::Fourth, HypothesisPolicy::Strict).unwrap();
    let gamma = tensor_calc::christoffel(&h, StencilOrder::Fourth).unwrap();
    let rm = tensor_calc::riemann(&h, StencilOrder::Fourth).unwrap();
    assert!(bg.christoffel().axpy(-1.0, &gamma).unwrap().max_abs() <= 1e-12);
    assert!(bg.riemann().axpy(-1.0, &rm).unwrap().max_abs() <= 1e-12);
}
