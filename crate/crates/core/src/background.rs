//! The fixed reference metric `h` of the flow, with its connection and
//! curvature precomputed once.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{load_snapshot, Field, Lattice, Layout, StencilOrder};
use crate::small;
use crate::tensor_calc::{self, MetricField, Variance};

/// How a background is chosen in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackgroundSpec {
    Flat,
    /// `h_{aa} = exp(2 A sin(2π f x^w / L))` with `w = (a + 1) mod dim`, all
    /// other components Euclidean.
    Warped {
        axis: usize,
        amplitude: f64,
        frequency: u32,
    },
    File {
        path: PathBuf,
    },
}

/// What to do when `sup |Rm(h)| > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypothesisPolicy {
    Strict,
    Warn,
}

#[derive(Debug, Clone)]
pub struct BackgroundGeometry {
    h: MetricField,
    christoffel: Field,
    christoffel_gradient: Field,
    riemann: Field,
    is_flat: bool,
    sup_rm: f64,
}

impl BackgroundGeometry {
    pub fn flat(lattice: Lattice) -> Self {
        let mut h = MetricField::identity(lattice);
        h.validate().expect("identity is SPD");
        Self {
            h,
            christoffel: Field::zeros(lattice, Layout::Rank3Sym),
            christoffel_gradient: Field::zeros(lattice, Layout::Rank4Sym),
            riemann: Field::zeros(lattice, Layout::Full(4)),
            is_flat: true,
            sup_rm: 0.0,
        }
    }

    /// Precomputes `Γ̃`, `∂Γ̃` and `R̃` of a smooth sampled metric.
    pub fn from_metric(h: MetricField, order: StencilOrder, policy: HypothesisPolicy) -> Result<Self> {
        let mut h = h;
        if !h.spd_checked() {
            h.validate()?;
        }
        let lat = *h.lattice();
        let first = h.field().at(0).to_vec();
        let constant = lat.nodes().all(|n| h.field().at(n) == first.as_slice());
        if constant {
            return Ok(Self {
                christoffel: Field::zeros(lat, Layout::Rank3Sym),
                christoffel_gradient: Field::zeros(lat, Layout::Rank4Sym),
                riemann: Field::zeros(lat, Layout::Full(4)),
                h,
                is_flat: true,
                sup_rm: 0.0,
            });
        }
        let christoffel = tensor_calc::christoffel(&h, order)?;
        let christoffel_gradient = crate::lattice::gradient(&christoffel, order)?;
        let riemann = tensor_calc::riemann(&h, order)?;
        let norm = tensor_calc::tensor_norm_h(
            &riemann,
            &[Variance::Upper, Variance::Lower, Variance::Lower, Variance::Lower],
            &h,
        )?;
        let sup_rm = norm.max_abs();
        if sup_rm > 1.0 {
            match policy {
                HypothesisPolicy::Strict => return Err(Error::HypothesisViolation { sup_rm }),
                HypothesisPolicy::Warn => {
                    log::warn!("background curvature bound violated: sup|Rm| = {sup_rm:.4}")
                }
            }
        }
        Ok(Self { h, christoffel, christoffel_gradient, riemann, is_flat: false, sup_rm })
    }

    pub fn from_spec(
        spec: &BackgroundSpec,
        lattice: Lattice,
        order: StencilOrder,
        policy: HypothesisPolicy,
    ) -> Result<Self> {
        match spec {
            BackgroundSpec::Flat => Ok(Self::flat(lattice)),
            BackgroundSpec::Warped { axis, amplitude, frequency } => {
                let h = warped_metric(lattice, *axis, *amplitude, *frequency)?;
                Self::from_metric(h, order, policy)
            }
            BackgroundSpec::File { path } => {
                let f = load_snapshot(path)?;
                if f.lattice() != &lattice {
                    return Err(Error::LatticeMismatch);
                }
                Self::from_metric(MetricField::checked(f)?, order, policy)
            }
        }
    }

    pub fn h(&self) -> &MetricField {
        &self.h
    }

    pub fn lattice(&self) -> &Lattice {
        self.h.lattice()
    }

    pub fn is_flat(&self) -> bool {
        self.is_flat
    }

    pub fn sup_rm(&self) -> f64 {
        self.sup_rm
    }

    pub fn satisfies_curvature_bound(&self) -> bool {
        self.sup_rm <= 1.0
    }

    /// `Γ̃^k_{pq}`, `Rank3Sym`.
    pub fn christoffel(&self) -> &Field {
        &self.christoffel
    }

    /// `∂_a Γ̃^k_{pq}` as `Rank4Sym` in `[a][k][pq]` order.
    pub fn christoffel_gradient(&self) -> &Field {
        &self.christoffel_gradient
    }

    /// `R̃^l_{ijk}`, `Full(4)`.
    pub fn riemann(&self) -> &Field {
        &self.riemann
    }
}

pub fn make_flat(lattice: Lattice) -> BackgroundGeometry {
    BackgroundGeometry::flat(lattice)
}

pub fn make_from_metric(h: MetricField, order: StencilOrder) -> Result<BackgroundGeometry> {
    BackgroundGeometry::from_metric(h, order, HypothesisPolicy::Strict)
}

/// Warped product metric with one exponentially rescaled direction.
pub fn warped_metric(lattice: Lattice, axis: usize, amplitude: f64, frequency: u32) -> Result<MetricField> {
    lattice.check_axis(axis)?;
    let dim = lattice.dim();
    let w = (axis + 1) % dim;
    let k = 2.0 * std::f64::consts::PI * frequency as f64 / lattice.period();
    let f = Field::from_fn(lattice, Layout::Sym2, |x, out| {
        let mut m = small::identity(dim);
        m[axis][axis] = (2.0 * amplitude * (k * x[w]).sin()).exp();
        small::pack_sym(&m, dim, out);
    });
    MetricField::checked(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn flat_background_is_trivial() {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let bg = make_flat(lat);
        assert!(bg.is_flat());
        let r = tensor_calc::bilipschitz(bg.h(), &MetricField::identity(lat)).unwrap();
        assert_eq!((r.lambda_min, r.lambda_max), (1.0, 1.0));
        let s = tensor_calc::scalar_curv(bg.h(), StencilOrder::Second).unwrap();
        assert_eq!(s.max_abs(), 0.0);
    }

    #[test]
    fn constant_metric_is_flat_equivalent() {
        let lat = Lattice::new(3, 8, 1.0).unwrap();
        let h = MetricField::constant(lat, &[[2.0, 0.1, 0.0], [0.1, 1.0, 0.0], [0.0, 0.0, 3.0]]);
        let bg = make_from_metric(h, StencilOrder::Fourth).unwrap();
        assert!(bg.is_flat());
        assert_eq!(bg.sup_rm(), 0.0);
    }

    // |Rm| of dx² + e^{2u(x)}dy² + dz² is 2|K| with K = -(u'' + u'²)
    fn warped_sup_rm(a: f64, f: u32) -> f64 {
        let k = 2.0 * PI * f as f64;
        (0..100_000)
            .map(|i| {
                let x = i as f64 / 100_000.0;
                let du = a * k * (k * x).cos();
                let ddu = -a * k * k * (k * x).sin();
                2.0 * (ddu + du * du).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn mildly_warped_background_accepted() {
        let lat = Lattice::new(3, 32, 1.0).unwrap();
        let h = warped_metric(lat, 1, 0.01, 1).unwrap();
        let bg = make_from_metric(h, StencilOrder::Fourth).unwrap();
        let oracle = warped_sup_rm(0.01, 1);
        assert!(!bg.is_flat());
        assert!(bg.sup_rm() <= 1.0);
        assert!((bg.sup_rm() - oracle).abs() < 1e-3 * oracle, "{} vs {oracle}", bg.sup_rm());
    }

    #[test]
    fn strongly_warped_background_rejected() {
        let lat = Lattice::new(3, 32, 1.0).unwrap();
        let h = warped_metric(lat, 1, 0.1, 1).unwrap();
        assert!(warped_sup_rm(0.1, 1) > 1.0);
        assert!(matches!(make_from_metric(h.clone(), StencilOrder::Fourth), Err(Error::HypothesisViolation { .. })));
        let bg = BackgroundGeometry::from_metric(h, StencilOrder::Fourth, HypothesisPolicy::Warn).unwrap();
        assert!(!bg.satisfies_curvature_bound());
    }

    #[test]
    fn precomputed_connection_matches_recomputation() {
        let lat = Lattice::new(3, 16, 1.0).unwrap();
        let h = warped_metric(lat, 0, 0.01, 1).unwrap();
        let bg = make_from_metric(h.clone(), StencilOrder::Fourth).unwrap();
        let gamma = tensor_calc::christoffel(&h, StencilOrder::Fourth).unwrap();
        let diff = bg.christoffel().axpy(-1.0, &gamma).unwrap().max_abs();
        assert!(diff <= 1e-12);
    }
}
