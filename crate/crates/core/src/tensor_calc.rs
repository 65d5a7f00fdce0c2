//! Riemannian operations on lattice metric fields.
//!
//! Christoffel symbols come from first differences of `g`; curvature comes
//! from first differences of the Christoffel field at the same stencil
//! order. Index conventions:
//!
//! * `Γ^k_{pq}` is stored as [`Layout::Rank3Sym`] with `k` leading.
//! * `R^l_{ijk} = ∂_iΓ^l_{jk} − ∂_jΓ^l_{ik} + Γ^l_{ip}Γ^p_{jk} − Γ^l_{jp}Γ^p_{ik}`
//!   is stored as `Full(4)` in the order `[l][i][j][k]`.
//! * `Ric_{jk} = R^i_{ijk}` and `R = g^{jk} Ric_{jk}`.
//!
//! Norms contract every slot with the background metric `h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{sym_count, sym_index, Field, Lattice, Layout, StencilOrder};
use crate::small::{self, Mat};

/// Determinant below which a node matrix counts as degenerate.
pub const DET_FLOOR: f64 = 1e-12;

/// Christoffel symbols at one node, `[k][p][q]`.
pub type Gamma = [[[f64; 3]; 3]; 3];

/// A symmetric 2-tensor field used as a Riemannian metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    field: Field,
    inverse: Option<Field>,
    spd_checked: bool,
}

impl MetricField {
    /// Wraps a `Sym2` field without checking positivity.
    pub fn new(field: Field) -> Result<Self> {
        if field.layout() != Layout::Sym2 {
            return Err(Error::LayoutMismatch(format!("metric needs Sym2 layout, got {:?}", field.layout())));
        }
        Ok(Self { field, inverse: None, spd_checked: false })
    }

    /// Wraps and verifies positive definiteness, caching the inverse.
    pub fn checked(field: Field) -> Result<Self> {
        let mut m = Self::new(field)?;
        m.validate()?;
        Ok(m)
    }

    pub fn identity(lattice: Lattice) -> Self {
        Self::constant(lattice, &small::identity(lattice.dim()))
    }

    pub fn constant(lattice: Lattice, m: &Mat) -> Self {
        let dim = lattice.dim();
        let field = Field::from_fn(lattice, Layout::Sym2, |_, out| small::pack_sym(m, dim, out));
        Self { field, inverse: None, spd_checked: false }
    }

    /// Checks SPD at every node and caches `g^{-1}`.
    pub fn validate(&mut self) -> Result<()> {
        let inv = inverse_field(&self.field)?;
        let dim = self.dim();
        for node in self.field.lattice().nodes() {
            let m = self.matrix(node);
            if small::cholesky(&m, dim).is_none() {
                return Err(Error::SingularMetric { node, det: small::det(&m, dim) });
            }
        }
        self.inverse = Some(inv);
        self.spd_checked = true;
        Ok(())
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn into_field(self) -> Field {
        self.field
    }

    pub fn lattice(&self) -> &Lattice {
        self.field.lattice()
    }

    pub fn dim(&self) -> usize {
        self.field.lattice().dim()
    }

    pub fn spd_checked(&self) -> bool {
        self.spd_checked
    }

    pub fn cached_inverse(&self) -> Option<&Field> {
        self.inverse.as_ref()
    }

    #[inline]
    pub fn matrix(&self, node: usize) -> Mat {
        small::unpack_sym(self.field.at(node), self.dim())
    }

    /// `g^{-1}` at a node, from the cache when present.
    #[inline]
    pub fn inverse_matrix(&self, node: usize) -> Result<Mat> {
        match &self.inverse {
            Some(inv) => Ok(small::unpack_sym(inv.at(node), self.dim())),
            None => node_inverse(&self.matrix(node), self.dim(), node),
        }
    }
}

#[inline]
pub(crate) fn node_inverse(m: &Mat, dim: usize, node: usize) -> Result<Mat> {
    let (inv, det) = small::inverse(m, dim);
    if !(det > DET_FLOOR) || !det.is_finite() {
        return Err(Error::SingularMetric { node, det });
    }
    Ok(inv)
}

fn inverse_field(g: &Field) -> Result<Field> {
    let lat = *g.lattice();
    let dim = lat.dim();
    let mut out = Field::zeros(lat, Layout::Sym2);
    for node in lat.nodes() {
        let inv = node_inverse(&small::unpack_sym(g.at(node), dim), dim, node)?;
        small::pack_sym(&inv, dim, out.at_mut(node));
    }
    Ok(out)
}

/// Nodewise inverse `g^{ij}`.
pub fn inverse(g: &MetricField) -> Result<MetricField> {
    let inv = match &g.inverse {
        Some(f) => f.clone(),
        None => inverse_field(&g.field)?,
    };
    Ok(MetricField { field: inv, inverse: Some(g.field.clone()), spd_checked: g.spd_checked })
}

/// `∂_a g_{ij}` at a node as `[a][i][j]`.
#[inline]
pub(crate) fn metric_gradient_at(g: &Field, node: usize, order: StencilOrder) -> [Mat; 3] {
    let dim = g.lattice().dim();
    let mut d = [small::ZERO; 3];
    for (a, da) in d.iter_mut().enumerate().take(dim) {
        for i in 0..dim {
            for j in i..dim {
                let v = g.d1(node, sym_index(i, j, dim), a, order);
                da[i][j] = v;
                da[j][i] = v;
            }
        }
    }
    d
}

/// `Γ^k_{pq} = ½ g^{kl}(∂_p g_{ql} + ∂_q g_{pl} − ∂_l g_{pq})` from a precomputed gradient.
#[inline]
pub(crate) fn christoffel_from(dg: &[Mat; 3], ginv: &Mat, dim: usize) -> Gamma {
    let mut first = [[[0.0; 3]; 3]; 3];
    for l in 0..dim {
        for p in 0..dim {
            for q in p..dim {
                let v = 0.5 * (dg[p][q][l] + dg[q][p][l] - dg[l][p][q]);
                first[l][p][q] = v;
                first[l][q][p] = v;
            }
        }
    }
    let mut gamma = [[[0.0; 3]; 3]; 3];
    for k in 0..dim {
        for p in 0..dim {
            for q in p..dim {
                let v: f64 = (0..dim).map(|l| ginv[k][l] * first[l][p][q]).sum();
                gamma[k][p][q] = v;
                gamma[k][q][p] = v;
            }
        }
    }
    gamma
}

pub(crate) fn pack_gamma(gamma: &Gamma, dim: usize, out: &mut [f64]) {
    let sc = sym_count(dim);
    for k in 0..dim {
        for p in 0..dim {
            for q in p..dim {
                out[k * sc + sym_index(p, q, dim)] = gamma[k][p][q];
            }
        }
    }
}

pub(crate) fn unpack_gamma(packed: &[f64], dim: usize) -> Gamma {
    let sc = sym_count(dim);
    let mut gamma = [[[0.0; 3]; 3]; 3];
    for k in 0..dim {
        for p in 0..dim {
            for q in 0..dim {
                gamma[k][p][q] = packed[k * sc + sym_index(p, q, dim)];
            }
        }
    }
    gamma
}

/// Christoffel symbols of the second kind.
pub fn christoffel(g: &MetricField, order: StencilOrder) -> Result<Field> {
    let lat = *g.lattice();
    let dim = lat.dim();
    let mut out = Field::zeros(lat, Layout::Rank3Sym);
    for node in lat.nodes() {
        let ginv = g.inverse_matrix(node)?;
        let dg = metric_gradient_at(g.field(), node, order);
        let gamma = christoffel_from(&dg, &ginv, dim);
        pack_gamma(&gamma, dim, out.at_mut(node));
    }
    Ok(out)
}

/// `∂_i Γ^l_{jk}` at a node as `[i][l][j][k]`.
fn christoffel_gradient_at(gamma: &Field, node: usize, order: StencilOrder) -> [Gamma; 3] {
    let dim = gamma.lattice().dim();
    let sc = sym_count(dim);
    let mut d = [[[[0.0; 3]; 3]; 3]; 3];
    for (i, di) in d.iter_mut().enumerate().take(dim) {
        for l in 0..dim {
            for j in 0..dim {
                for k in j..dim {
                    let v = gamma.d1(node, l * sc + sym_index(j, k, dim), i, order);
                    di[l][j][k] = v;
                    di[l][k][j] = v;
                }
            }
        }
    }
    d
}

/// `R^l_{ijk}` at a node as `[l][i][j][k]`.
pub(crate) fn riemann_at(gamma_field: &Field, node: usize, order: StencilOrder) -> [[[[f64; 3]; 3]; 3]; 3] {
    let dim = gamma_field.lattice().dim();
    let gm = unpack_gamma(gamma_field.at(node), dim);
    let dgm = christoffel_gradient_at(gamma_field, node, order);
    let mut r = [[[[0.0; 3]; 3]; 3]; 3];
    for l in 0..dim {
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    let mut v = dgm[i][l][j][k] - dgm[j][l][i][k];
                    for p in 0..dim {
                        v += gm[l][i][p] * gm[p][j][k] - gm[l][j][p] * gm[p][i][k];
                    }
                    r[l][i][j][k] = v;
                }
            }
        }
    }
    r
}

/// `Ric_{jk} = R^i_{ijk}` at a node, unsymmetrized.
pub(crate) fn ricci_at(gamma_field: &Field, node: usize, order: StencilOrder) -> Mat {
    let dim = gamma_field.lattice().dim();
    let sc = sym_count(dim);
    let gm = unpack_gamma(gamma_field.at(node), dim);
    // ∂_i Γ^i_{jk} and ∂_j Γ^i_{ik}
    let mut ric = small::ZERO;
    for j in 0..dim {
        for k in 0..dim {
            let mut v = 0.0;
            for i in 0..dim {
                v += gamma_field.d1(node, i * sc + sym_index(j, k, dim), i, order);
                v -= gamma_field.d1(node, i * sc + sym_index(i, k, dim), j, order);
                for p in 0..dim {
                    v += gm[i][i][p] * gm[p][j][k] - gm[i][j][p] * gm[p][i][k];
                }
            }
            ric[j][k] = v;
        }
    }
    ric
}

/// Full Riemann tensor `R^l_{ijk}`.
pub fn riemann(g: &MetricField, order: StencilOrder) -> Result<Field> {
    let gamma = christoffel(g, order)?;
    let lat = *g.lattice();
    let dim = lat.dim();
    let mut out = Field::zeros(lat, Layout::Full(4));
    for node in lat.nodes() {
        let r = riemann_at(&gamma, node, order);
        let dst = out.at_mut(node);
        for l in 0..dim {
            for i in 0..dim {
                for j in 0..dim {
                    for k in 0..dim {
                        dst[((l * dim + i) * dim + j) * dim + k] = r[l][i][j][k];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Ricci tensor without symmetrization, as `Full(2)`.
pub fn ricci_full(g: &MetricField, order: StencilOrder) -> Result<Field> {
    let gamma = christoffel(g, order)?;
    let lat = *g.lattice();
    let dim = lat.dim();
    let mut out = Field::zeros(lat, Layout::Full(2));
    for node in lat.nodes() {
        let ric = ricci_at(&gamma, node, order);
        let dst = out.at_mut(node);
        for j in 0..dim {
            for k in 0..dim {
                dst[j * dim + k] = ric[j][k];
            }
        }
    }
    Ok(out)
}

/// Ricci tensor stored as a symmetric field (symmetric part of `R^i_{ijk}`).
pub fn ricci(g: &MetricField, order: StencilOrder) -> Result<Field> {
    let gamma = christoffel(g, order)?;
    ricci_from_gamma(&gamma, order)
}

pub(crate) fn ricci_from_gamma(gamma: &Field, order: StencilOrder) -> Result<Field> {
    let lat = *gamma.lattice();
    let dim = lat.dim();
    let mut out = Field::zeros(lat, Layout::Sym2);
    for node in lat.nodes() {
        let ric = ricci_at(gamma, node, order);
        let dst = out.at_mut(node);
        for j in 0..dim {
            for k in j..dim {
                dst[sym_index(j, k, dim)] = 0.5 * (ric[j][k] + ric[k][j]);
            }
        }
    }
    Ok(out)
}

/// Scalar curvature `g^{jk} Ric_{jk}`.
pub fn scalar_curv(g: &MetricField, order: StencilOrder) -> Result<Field> {
    let ric = ricci(g, order)?;
    let lat = *g.lattice();
    let dim = lat.dim();
    let mut out = Field::zeros(lat, Layout::Scalar);
    for node in lat.nodes() {
        let ginv = g.inverse_matrix(node)?;
        let r = small::unpack_sym(ric.at(node), dim);
        let mut s = 0.0;
        for j in 0..dim {
            for k in 0..dim {
                s += ginv[j][k] * r[j][k];
            }
        }
        out.at_mut(node)[0] = s;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiLipschitzReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub argmin: usize,
    pub argmax: usize,
}

impl BiLipschitzReport {
    /// Smallest `Λ` with `Λ^{-1} h ≤ g ≤ Λ h`.
    pub fn lambda(&self) -> f64 {
        self.lambda_max.max(1.0 / self.lambda_min)
    }
}

/// Extreme generalized eigenvalues of `(g, h)` over all nodes.
pub fn bilipschitz(g: &MetricField, h: &MetricField) -> Result<BiLipschitzReport> {
    g.field().check_same_lattice(h.field())?;
    let dim = g.dim();
    let mut rep = BiLipschitzReport { lambda_min: f64::INFINITY, lambda_max: f64::NEG_INFINITY, argmin: 0, argmax: 0 };
    for node in g.lattice().nodes() {
        let hm = h.matrix(node);
        let e = small::generalized_eigenvalues(&g.matrix(node), &hm, dim)
            .ok_or(Error::SingularMetric { node, det: small::det(&hm, dim) })?;
        if !e[0].is_finite() || !e[dim - 1].is_finite() {
            return Err(Error::SingularMetric { node, det: f64::NAN });
        }
        if e[0] < rep.lambda_min {
            rep.lambda_min = e[0];
            rep.argmin = node;
        }
        if e[dim - 1] > rep.lambda_max {
            rep.lambda_max = e[dim - 1];
            rep.argmax = node;
        }
    }
    Ok(rep)
}

/// Position of a tensor slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variance {
    Upper,
    Lower,
}

/// Applies a matrix to one slot of a full tensor stored in `[i0][i1]...` order.
fn contract_slot(t: &[f64], rank: usize, dim: usize, slot: usize, m: &Mat) -> Vec<f64> {
    let inner = dim.pow((rank - 1 - slot) as u32);
    let outer = t.len() / (inner * dim);
    let mut out = vec![0.0; t.len()];
    for o in 0..outer {
        for a in 0..dim {
            for i in 0..inner {
                let mut v = 0.0;
                for b in 0..dim {
                    v += m[a][b] * t[(o * dim + b) * inner + i];
                }
                out[(o * dim + a) * inner + i] = v;
            }
        }
    }
    out
}

/// Pointwise norm of `t` with every slot contracted by `h` or `h^{-1}`.
pub fn tensor_norm_h(t: &Field, variance: &[Variance], h: &MetricField) -> Result<Field> {
    t.check_same_lattice(h.field())?;
    let rank = t.layout().rank();
    if variance.len() != rank {
        return Err(Error::InvalidArgument(format!("variance has {} slots, tensor rank is {rank}", variance.len())));
    }
    let lat = *t.lattice();
    let dim = lat.dim();
    let full_len = dim.pow(rank as u32);
    let eye = small::identity(dim);
    let mut out = Field::zeros(lat, Layout::Scalar);
    let mut idx = vec![0usize; rank];
    let mut full = vec![0.0; full_len];
    for node in lat.nodes() {
        for (flat, slot) in full.iter_mut().enumerate() {
            let mut r = flat;
            for s in (0..rank).rev() {
                idx[s] = r % dim;
                r /= dim;
            }
            *slot = t.component(node, &idx);
        }
        let hm = h.matrix(node);
        let sq = if hm == eye {
            full.iter().map(|v| v * v).sum::<f64>()
        } else {
            let hinv = h.inverse_matrix(node)?;
            // all slots covariant, then a fully raised copy
            let mut low = full.clone();
            for (s, v) in variance.iter().enumerate() {
                if *v == Variance::Upper {
                    low = contract_slot(&low, rank, dim, s, &hm);
                }
            }
            let mut up = low.clone();
            for s in 0..rank {
                up = contract_slot(&up, rank, dim, s, &hinv);
            }
            low.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        out.at_mut(node)[0] = sq.max(0.0).sqrt();
    }
    Ok(out)
}

/// `h^{ij} g_{ij}`.
pub fn trace_h_g(g: &MetricField, h: &MetricField) -> Result<Field> {
    trace_with(h, g)
}

/// `g^{ij} h_{ij}`.
pub fn trace_g_h(g: &MetricField, h: &MetricField) -> Result<Field> {
    trace_with(g, h)
}

fn trace_with(inv_of: &MetricField, other: &MetricField) -> Result<Field> {
    inv_of.field().check_same_lattice(other.field())?;
    let lat = *inv_of.lattice();
    let dim = lat.dim();
    let mut out = Field::zeros(lat, Layout::Scalar);
    for node in lat.nodes() {
        let inv = inv_of.inverse_matrix(node)?;
        let m = other.matrix(node);
        let mut s = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                s += inv[i][j] * m[i][j];
            }
        }
        out.at_mut(node)[0] = s;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn lat3(n: usize) -> Lattice {
        Lattice::new(3, n, 1.0).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, dim: usize) -> Mat {
        let mut a = small::ZERO;
        for row in a.iter_mut().take(dim) {
            for v in row.iter_mut().take(dim) {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let mut m = small::mul(&a, &small::transpose(&a), dim);
        for (i, row) in m.iter_mut().enumerate().take(dim) {
            row[i] += 0.5;
        }
        m
    }

    fn random_spd_field(lat: Lattice, seed: u64) -> MetricField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = lat.dim();
        let f = Field::from_fn(lat, Layout::Sym2, |_, out| small::pack_sym(&random_spd(&mut rng, dim), dim, out));
        MetricField::checked(f).unwrap()
    }

    /// `diag(e^{2u(x0)}, 1, 1)`.
    fn profile_metric(lat: Lattice, a: f64) -> MetricField {
        let k = 2.0 * PI / lat.period();
        let f = Field::from_fn(lat, Layout::Sym2, |x, out| {
            let mut m = small::identity(3);
            m[0][0] = (2.0 * a * (k * x[0]).sin()).exp();
            small::pack_sym(&m, 3, out);
        });
        MetricField::checked(f).unwrap()
    }

    #[test]
    fn inverse_identity_scaling_and_random() {
        let lat = lat3(8);
        let id = MetricField::identity(lat);
        assert_eq!(inverse(&id).unwrap().field(), id.field());
        let c = MetricField::constant(lat, &[[4.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 4.0]]);
        let ci = inverse(&c).unwrap();
        assert!(ci.field().data().iter().all(|&v| v == 0.25 || v == 0.0));

        let g = random_spd_field(lat, 7);
        let gi = inverse(&g).unwrap();
        for node in lat.nodes() {
            let p = small::mul(&g.matrix(node), &gi.matrix(node), 3);
            for i in 0..3 {
                for j in 0..3 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((p[i][j] - e).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn singular_metric_is_reported() {
        let lat = lat3(8);
        let g = MetricField::new(Field::zeros(lat, Layout::Sym2)).unwrap();
        assert!(matches!(inverse(&g), Err(Error::SingularMetric { node: 0, .. })));
    }

    #[test]
    fn constant_metric_has_no_connection_or_curvature() {
        let lat = lat3(8);
        let g = MetricField::checked(
            MetricField::constant(lat, &[[2.0, 0.3, 0.1], [0.3, 1.0, 0.0], [0.1, 0.0, 1.4]]).into_field(),
        )
        .unwrap();
        for order in [StencilOrder::Second, StencilOrder::Fourth] {
            assert_eq!(christoffel(&g, order).unwrap().max_abs(), 0.0);
            assert!(riemann(&g, order).unwrap().max_abs() <= 1e-10);
            assert!(scalar_curv(&g, order).unwrap().max_abs() <= 1e-10);
        }
    }

    #[test]
    fn profile_metric_christoffel() {
        let lat = lat3(32);
        let a = 0.1;
        let k = 2.0 * PI;
        let g = profile_metric(lat, a);
        let gamma = christoffel(&g, StencilOrder::Fourth).unwrap();
        let mut err: f64 = 0.0;
        for node in lat.nodes() {
            let x = lat.position(node)[0];
            let du = a * k * (k * x).cos();
            let v = gamma.at(node);
            err = err.max((v[0] - du).abs());
            err = err.max(v[1..].iter().fold(0.0, |m, c| m.max(c.abs())));
        }
        assert!(err < 1e-4, "err {err}");
    }

    #[test]
    fn flat_in_disguise_has_zero_scalar_curvature() {
        let lat = lat3(32);
        let g = profile_metric(lat, 0.1);
        let r = scalar_curv(&g, StencilOrder::Fourth).unwrap();
        assert!(r.max_abs() < 1e-3, "{}", r.max_abs());
    }

    #[test]
    fn ricci_is_nearly_symmetric() {
        let lat = lat3(16);
        let k = 2.0 * PI;
        let f = Field::from_fn(lat, Layout::Sym2, |x, out| {
            let m = [
                [1.0 + 0.1 * (k * x[1]).sin(), 0.05 * (k * x[2]).cos(), 0.0],
                [0.05 * (k * x[2]).cos(), 1.0, 0.02 * (k * x[0]).sin()],
                [0.0, 0.02 * (k * x[0]).sin(), 1.0 + 0.1 * (k * (x[0] + x[1])).cos()],
            ];
            small::pack_sym(&m, 3, out);
        });
        let g = MetricField::checked(f).unwrap();
        let ric = ricci_full(&g, StencilOrder::Fourth).unwrap();
        let scale = ric.max_abs();
        for node in lat.nodes() {
            let v = ric.at(node);
            for j in 0..3 {
                for k in 0..3 {
                    // discrete ∂_j Γ^i_{ik} is not an exact Hessian, so symmetry holds to truncation error
                    assert!((v[j * 3 + k] - v[k * 3 + j]).abs() <= 1e-2 * scale);
                }
            }
        }
    }

    #[test]
    fn bilipschitz_simple_cases() {
        let lat = lat3(8);
        let id = MetricField::identity(lat);
        let r = bilipschitz(&id, &id).unwrap();
        assert_eq!((r.lambda_min, r.lambda_max), (1.0, 1.0));
        let d = MetricField::constant(lat, &[[2.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 1.0]]);
        let r = bilipschitz(&d, &id).unwrap();
        assert_eq!((r.lambda_min, r.lambda_max), (0.5, 2.0));
    }

    #[test]
    fn bilipschitz_bounds_quadratic_form() {
        let lat = lat3(8);
        let g = random_spd_field(lat, 11);
        let h = random_spd_field(lat, 12);
        let rep = bilipschitz(&g, &h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for node in lat.nodes() {
            let (gm, hm) = (g.matrix(node), h.matrix(node));
            for _ in 0..4 {
                let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let q = |m: &Mat| -> f64 { (0..3).map(|i| (0..3).map(|j| v[i] * m[i][j] * v[j]).sum::<f64>()).sum() };
                let (qg, qh) = (q(&gm), q(&hm));
                assert!(qg >= rep.lambda_min * qh * (1.0 - 1e-12));
                assert!(qg <= rep.lambda_max * qh * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn norms_and_traces() {
        let lat = lat3(8);
        let id = MetricField::identity(lat);
        let zero = Field::zeros(lat, Layout::Rank3Sym);
        let n = tensor_norm_h(&zero, &[Variance::Lower; 3], &id).unwrap();
        assert_eq!(n.max_abs(), 0.0);
        let e0 = Field::from_fn(lat, Layout::Vector, |_, out| out[0] = 1.0);
        let n = tensor_norm_h(&e0, &[Variance::Upper], &id).unwrap();
        assert!(n.data().iter().all(|&v| v == 1.0));

        let c = MetricField::constant(lat, &[[3.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 3.0]]);
        assert!(trace_h_g(&id, &id).unwrap().data().iter().all(|&v| v == 3.0));
        assert!(trace_h_g(&c, &id).unwrap().data().iter().all(|&v| (v - 9.0).abs() < 1e-15));
        assert!(trace_g_h(&c, &id).unwrap().data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn norm_under_nonflat_h_matches_orthonormal_frame() {
        // h = diag(4, 1, 1): the covector e^0 has h-norm 1/2, the vector e_0 has h-norm 2
        let lat = lat3(8);
        let h = MetricField::constant(lat, &[[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let e0 = Field::from_fn(lat, Layout::Vector, |_, out| out[0] = 1.0);
        let lower = tensor_norm_h(&e0, &[Variance::Lower], &h).unwrap();
        let upper = tensor_norm_h(&e0, &[Variance::Upper], &h).unwrap();
        assert!((lower.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((upper.get(0, 0) - 2.0).abs() < 1e-15);
    }
}
