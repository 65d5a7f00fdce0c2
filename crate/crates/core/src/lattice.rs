//! Periodic cubical lattice, tensor-valued fields sampled on it, and the
//! finite-difference, ball-average and integration primitives everything
//! else is built from.
//!
//! Nodes are numbered row-major with axis 0 slowest. Field values are stored
//! node-major, component-minor.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum supported dimension.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    dim: usize,
    n: usize,
    period: f64,
    spacing: f64,
    strides: [usize; MAX_DIM],
}

impl Lattice {
    pub fn new(dim: usize, n_per_axis: usize, period: f64) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidLattice(format!("dimension {dim} not in 2..=3")));
        }
        if n_per_axis < 8 {
            return Err(Error::InvalidLattice(format!("need at least 8 points per axis, got {n_per_axis}")));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::InvalidLattice(format!("period must be positive, got {period}")));
        }
        let spacing = period / n_per_axis as f64;
        // store the period that the spacing actually reproduces
        let period = spacing * n_per_axis as f64;
        let mut strides = [0; MAX_DIM];
        for (a, s) in strides.iter_mut().enumerate().take(dim) {
            *s = n_per_axis.pow((dim - 1 - a) as u32);
        }
        Ok(Self { dim, n: n_per_axis, period, spacing, strides })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_per_axis(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn node_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.period.powi(self.dim as i32)
    }

    /// Same node layout, every length multiplied by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        Self::new(self.dim, self.n, self.period * lambda)
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.dim {
            Err(Error::AxisOutOfRange { axis, dim: self.dim })
        } else {
            Ok(())
        }
    }

    #[inline]
    pub fn coord(&self, node: usize, axis: usize) -> usize {
        (node / self.stride(axis)) % self.n
    }

    pub fn coords(&self, node: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        for (a, slot) in c.iter_mut().enumerate().take(self.dim) {
            *slot = self.coord(node, a);
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().take(self.dim).fold(0, |acc, &c| acc * self.n + (c % self.n))
    }

    /// Neighbour `offset` steps along `axis`, with periodic wraparound.
    #[inline]
    pub fn shifted(&self, node: usize, axis: usize, offset: isize) -> usize {
        let stride = self.stride(axis);
        let c = (node / stride) % self.n;
        let c2 = (c as isize + offset).rem_euclid(self.n as isize) as usize;
        node + c2 * stride - c * stride
    }

    /// Node shifted by a full offset vector.
    pub fn translated(&self, node: usize, offset: &[isize]) -> usize {
        offset
            .iter()
            .enumerate()
            .take(self.dim)
            .fold(node, |acc, (a, &o)| if o == 0 { acc } else { self.shifted(acc, a, o) })
    }

    pub fn position(&self, node: usize) -> [f64; MAX_DIM] {
        let c = self.coords(node);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = c[a] as f64 * self.spacing;
        }
        x
    }

    /// Signed shortest periodic displacement `b - a` along one axis.
    pub fn wrap_delta(&self, delta: f64) -> f64 {
        let l = self.period;
        delta - l * (delta / l).round()
    }

    pub fn torus_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        (0..self.dim).map(|k| self.wrap_delta(b[k] - a[k]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn nodes(&self) -> std::ops::Range<usize> {
        0..self.node_count()
    }
}

/// Index symmetry of the components stored per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    Scalar,
    Vector,
    /// Symmetric 2-tensor, `dim(dim+1)/2` components.
    Sym2,
    /// Rank 3, symmetric in the last two indices (Christoffel symbols, `∂g`).
    Rank3Sym,
    /// Rank 4, symmetric in the last two indices (`∂Γ`, `∂∂g`).
    Rank4Sym,
    /// Rank r with no symmetry, `dim^r` components.
    Full(u8),
}

pub fn sym_count(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Packed position of `(i, j)` in a symmetric 2-tensor.
#[inline]
pub fn sym_index(i: usize, j: usize, dim: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i + 1) / 2 + j
}

/// Inverse of [`sym_index`].
pub fn sym_pair(s: usize, dim: usize) -> (usize, usize) {
    let mut s = s;
    for i in 0..dim {
        let row = dim - i;
        if s < row {
            return (i, i + s);
        }
        s -= row;
    }
    panic!("symmetric component index out of range")
}

impl Layout {
    pub fn rank(&self) -> usize {
        match self {
            Layout::Scalar => 0,
            Layout::Vector => 1,
            Layout::Sym2 => 2,
            Layout::Rank3Sym => 3,
            Layout::Rank4Sym => 4,
            Layout::Full(r) => *r as usize,
        }
    }

    pub fn component_count(&self, dim: usize) -> usize {
        match self {
            Layout::Scalar => 1,
            Layout::Vector => dim,
            Layout::Sym2 => sym_count(dim),
            Layout::Rank3Sym => dim * sym_count(dim),
            Layout::Rank4Sym => dim * dim * sym_count(dim),
            Layout::Full(r) => dim.pow(*r as u32),
        }
    }

    /// Layout of the gradient: one new leading covariant index.
    pub fn gradient(&self) -> Result<Layout> {
        Ok(match self {
            Layout::Scalar => Layout::Vector,
            Layout::Vector => Layout::Full(2),
            Layout::Sym2 => Layout::Rank3Sym,
            Layout::Rank3Sym => Layout::Rank4Sym,
            Layout::Full(r) => Layout::Full(r + 1),
            Layout::Rank4Sym => return Err(Error::LayoutMismatch("no gradient layout above Rank4Sym".into())),
        })
    }

    /// Recovers the layout from a snapshot header.
    pub fn from_header(dim: usize, rank: usize, ncomp: usize) -> Result<Layout> {
        let candidates: &[Layout] = match rank {
            0 => &[Layout::Scalar],
            1 => &[Layout::Vector],
            2 => &[Layout::Sym2, Layout::Full(2)],
            3 => &[Layout::Rank3Sym, Layout::Full(3)],
            4 => &[Layout::Rank4Sym, Layout::Full(4)],
            _ => &[],
        };
        candidates
            .iter()
            .copied()
            .chain((rank > 4 && rank < 16).then_some(Layout::Full(rank as u8)))
            .find(|l| l.component_count(dim) == ncomp)
            .ok_or_else(|| Error::Snapshot(format!("no layout with rank {rank} and {ncomp} components")))
    }

    /// Storage offset of a full multi-index.
    pub fn offset(&self, dim: usize, idx: &[usize]) -> usize {
        match self {
            Layout::Scalar => 0,
            Layout::Vector => idx[0],
            Layout::Sym2 => sym_index(idx[0], idx[1], dim),
            Layout::Rank3Sym => idx[0] * sym_count(dim) + sym_index(idx[1], idx[2], dim),
            Layout::Rank4Sym => (idx[0] * dim + idx[1]) * sym_count(dim) + sym_index(idx[2], idx[3], dim),
            Layout::Full(_) => idx.iter().fold(0, |acc, &i| acc * dim + i),
        }
    }
}

/// Finite-difference accuracy order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StencilOrder {
    Second,
    Fourth,
}

// Symmetric half-stencils `(k, w)`: first derivatives use `w (f(+k) − f(−k))`,
// second derivatives `w ((f(+k) − f(0)) + (f(−k) − f(0)))`, so constants cancel exactly.
const D1_SECOND: [(isize, f64); 1] = [(1, 0.5)];
const D1_FOURTH: [(isize, f64); 2] = [(1, 8.0 / 12.0), (2, -1.0 / 12.0)];
const D2_SECOND: [(isize, f64); 1] = [(1, 1.0)];
const D2_FOURTH: [(isize, f64); 2] = [(1, 16.0 / 12.0), (2, -1.0 / 12.0)];

impl StencilOrder {
    pub fn from_int(order: u32) -> Result<Self> {
        match order {
            2 => Ok(StencilOrder::Second),
            4 => Ok(StencilOrder::Fourth),
            o => Err(Error::InvalidArgument(format!("stencil order must be 2 or 4, got {o}"))),
        }
    }

    pub fn as_int(&self) -> u32 {
        match self {
            StencilOrder::Second => 2,
            StencilOrder::Fourth => 4,
        }
    }

    pub fn first(&self) -> &'static [(isize, f64)] {
        match self {
            StencilOrder::Second => &D1_SECOND,
            StencilOrder::Fourth => &D1_FOURTH,
        }
    }

    pub fn second(&self) -> &'static [(isize, f64)] {
        match self {
            StencilOrder::Second => &D2_SECOND,
            StencilOrder::Fourth => &D2_FOURTH,
        }
    }
}

/// Tensor field sampled at lattice nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    lattice: Lattice,
    layout: Layout,
    ncomp: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(lattice: Lattice, layout: Layout) -> Self {
        let ncomp = layout.component_count(lattice.dim());
        Self { lattice, layout, ncomp, data: vec![0.0; ncomp * lattice.node_count()] }
    }

    pub fn from_vec(lattice: Lattice, layout: Layout, data: Vec<f64>) -> Result<Self> {
        let ncomp = layout.component_count(lattice.dim());
        if data.len() != ncomp * lattice.node_count() {
            return Err(Error::LayoutMismatch(format!(
                "expected {} values, got {}",
                ncomp * lattice.node_count(),
                data.len()
            )));
        }
        Ok(Self { lattice, layout, ncomp, data })
    }

    /// Fills every node from a closure of the node position.
    pub fn from_fn(lattice: Lattice, layout: Layout, mut f: impl FnMut(&[f64; MAX_DIM], &mut [f64])) -> Self {
        let mut out = Self::zeros(lattice, layout);
        let ncomp = out.ncomp;
        for node in lattice.nodes() {
            let x = lattice.position(node);
            f(&x, &mut out.data[node * ncomp..(node + 1) * ncomp]);
        }
        out
    }

    pub fn scalar_from_fn(lattice: Lattice, mut f: impl FnMut(&[f64; MAX_DIM]) -> f64) -> Self {
        Self::from_fn(lattice, Layout::Scalar, |x, out| out[0] = f(x))
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, node: usize) -> &[f64] {
        &self.data[node * self.ncomp..(node + 1) * self.ncomp]
    }

    #[inline]
    pub fn at_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.data[node * self.ncomp..(node + 1) * self.ncomp]
    }

    #[inline]
    pub fn get(&self, node: usize, comp: usize) -> f64 {
        self.data[node * self.ncomp + comp]
    }

    /// Value addressed by a full multi-index, resolving stored symmetries.
    pub fn component(&self, node: usize, idx: &[usize]) -> f64 {
        self.get(node, self.layout.offset(self.lattice.dim(), idx))
    }

    pub fn check_same_lattice(&self, other: &Field) -> Result<()> {
        if self.lattice != other.lattice {
            Err(Error::LatticeMismatch)
        } else {
            Ok(())
        }
    }

    /// First derivative of one component at one node.
    #[inline]
    pub fn d1(&self, node: usize, comp: usize, axis: usize, order: StencilOrder) -> f64 {
        let lat = &self.lattice;
        let mut acc = 0.0;
        for &(o, w) in order.first() {
            acc += w * (self.get(lat.shifted(node, axis, o), comp) - self.get(lat.shifted(node, axis, -o), comp));
        }
        acc / lat.spacing
    }

    /// Second derivative of one component: direct stencil on the diagonal,
    /// composed first differences off it.
    #[inline]
    pub fn d2(&self, node: usize, comp: usize, a: usize, b: usize, order: StencilOrder) -> f64 {
        let lat = &self.lattice;
        let h = lat.spacing;
        if a == b {
            let f0 = self.get(node, comp);
            let mut acc = 0.0;
            for &(o, w) in order.second() {
                acc += w
                    * ((self.get(lat.shifted(node, a, o), comp) - f0)
                        + (self.get(lat.shifted(node, a, -o), comp) - f0));
            }
            acc / (h * h)
        } else {
            let inner = |n: usize| {
                let mut acc = 0.0;
                for &(o, w) in order.first() {
                    acc += w * (self.get(lat.shifted(n, b, o), comp) - self.get(lat.shifted(n, b, -o), comp));
                }
                acc
            };
            let mut acc = 0.0;
            for &(o, w) in order.first() {
                acc += w * (inner(lat.shifted(node, a, o)) - inner(lat.shifted(node, a, -o)));
            }
            acc / (h * h)
        }
    }

    /// Shifts every value by `offset` nodes: result(x + offset) = self(x).
    pub fn translate(&self, offset: &[isize]) -> Field {
        let mut out = Field::zeros(self.lattice, self.layout);
        for node in self.lattice.nodes() {
            let dst = self.lattice.translated(node, offset);
            out.at_mut(dst).copy_from_slice(self.at(node));
        }
        out
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Field {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Pointwise `self + scale * other`.
    pub fn axpy(&self, scale: f64, other: &Field) -> Result<Field> {
        self.check_same_lattice(other)?;
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch("axpy on different layouts".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + scale * b).collect();
        Ok(Field { lattice: self.lattice, layout: self.layout, ncomp: self.ncomp, data })
    }

    /// Reinterprets the field on another lattice with identical node layout.
    pub fn with_lattice(&self, lattice: Lattice) -> Result<Field> {
        if lattice.dim() != self.lattice.dim() || lattice.n_per_axis() != self.lattice.n_per_axis() {
            return Err(Error::LatticeMismatch);
        }
        Ok(Field { lattice, layout: self.layout, ncomp: self.ncomp, data: self.data.clone() })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Derivative of every component along `axis`; the layout is unchanged.
pub fn partial(field: &Field, axis: usize, order: StencilOrder) -> Result<Field> {
    field.lattice.check_axis(axis)?;
    let mut out = Field::zeros(field.lattice, field.layout);
    for node in field.lattice.nodes() {
        for c in 0..field.ncomp {
            out.data[node * field.ncomp + c] = field.d1(node, c, axis, order);
        }
    }
    Ok(out)
}

/// Mixed or pure second derivative of every component.
pub fn second_partial(field: &Field, a: usize, b: usize, order: StencilOrder) -> Result<Field> {
    field.lattice.check_axis(a)?;
    field.lattice.check_axis(b)?;
    let mut out = Field::zeros(field.lattice, field.layout);
    for node in field.lattice.nodes() {
        for c in 0..field.ncomp {
            out.data[node * field.ncomp + c] = field.d2(node, c, a, b, order);
        }
    }
    Ok(out)
}

/// Full gradient with the derivative index leading.
pub fn gradient(field: &Field, order: StencilOrder) -> Result<Field> {
    let layout = field.layout.gradient()?;
    let lat = field.lattice;
    let mut out = Field::zeros(lat, layout);
    let nc = field.ncomp;
    for node in lat.nodes() {
        let dst = out.at_mut(node);
        for a in 0..lat.dim() {
            for c in 0..nc {
                dst[a * nc + c] = field.d1(node, c, a, order);
            }
        }
    }
    Ok(out)
}

/// Deterministic pairwise (tree) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// `∫ f dvol` over the torus.
pub fn global_integral(field: &Field) -> Result<f64> {
    if field.layout != Layout::Scalar {
        return Err(Error::LayoutMismatch("global_integral needs a scalar field".into()));
    }
    Ok(pairwise_sum(&field.data) * field.lattice.cell_volume())
}

/// Node offsets within a torus ball, each residue counted once.
#[derive(Debug, Clone)]
pub struct BallStencil {
    radius: f64,
    offsets: Vec<[isize; MAX_DIM]>,
}

impl BallStencil {
    pub fn new(lattice: &Lattice, radius: f64) -> Result<Self> {
        let limit = lattice.period() / 2.0;
        if !(radius > 0.0) || radius > limit * (1.0 + 1e-12) {
            return Err(Error::RadiusTooLarge { radius, limit });
        }
        let n = lattice.n_per_axis() as isize;
        let dim = lattice.dim();
        // compare in node units so that uniformly rescaled lattices agree exactly
        let r_nodes = radius / lattice.spacing();
        let r2 = r_nodes * r_nodes * (1.0 + 1e-12);
        let reach = r_nodes.floor() as isize;
        let lo = -(n / 2);
        let hi = lo + n - 1;
        let range = |r: isize| (-r).max(lo)..=r.min(hi);
        let mut offsets = Vec::new();
        let zr = if dim == 3 { range(reach) } else { 0..=0 };
        for i in range(reach) {
            for j in range(reach) {
                for k in zr.clone() {
                    let d2 = (i * i + j * j + k * k) as f64;
                    if d2 <= r2 {
                        offsets.push([i, j, k]);
                    }
                }
            }
        }
        Ok(Self { radius, offsets })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[[isize; MAX_DIM]] {
        &self.offsets
    }

    /// Plain average of component 0 over the ball around `center`.
    pub fn mean(&self, field: &Field, center: usize) -> f64 {
        let lat = field.lattice();
        let mut acc = 0.0;
        for off in &self.offsets {
            acc += field.get(lat.translated(center, &off[..lat.dim()]), 0);
        }
        acc / self.offsets.len() as f64
    }

    /// Normalized discrete `(⨍ |f|^p)^{1/p}` over the ball around `center`.
    pub fn mean_p(&self, field: &Field, center: usize, p: f64) -> f64 {
        let lat = field.lattice();
        let mut acc = 0.0;
        for off in &self.offsets {
            let node = lat.translated(center, &off[..lat.dim()]);
            acc += field.get(node, 0).abs().powf(p);
        }
        (acc / self.offsets.len() as f64).powf(1.0 / p)
    }
}

/// Normalized L^p average of a scalar field over the torus ball of `radius`.
pub fn ball_mean_p(field: &Field, center: usize, radius: f64, p: f64) -> Result<f64> {
    if field.layout != Layout::Scalar {
        return Err(Error::LayoutMismatch("ball_mean_p needs a scalar field".into()));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("exponent p must be >= 1, got {p}")));
    }
    Ok(BallStencil::new(field.lattice(), radius)?.mean_p(field, center, p))
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"HFLD";
const SNAPSHOT_VERSION: u32 = 1;

/// Writes a field snapshot: magic, version, dim, n, period, rank, ncomp,
/// then little-endian f64 values node-major, component-minor.
pub fn write_snapshot<W: Write>(field: &Field, mut w: W) -> Result<()> {
    let lat = field.lattice();
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(lat.dim() as u32).to_le_bytes())?;
    w.write_all(&(lat.n_per_axis() as u32).to_le_bytes())?;
    w.write_all(&lat.period().to_le_bytes())?;
    w.write_all(&(field.layout().rank() as u32).to_le_bytes())?;
    w.write_all(&(field.ncomp() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(field.data.len() * 8);
    for v in &field.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Field> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let mut u = [0u8; 4];
    let mut read_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut u)?;
        Ok(u32::from_le_bytes(u))
    };
    let version = read_u32(&mut r)?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let dim = read_u32(&mut r)? as usize;
    let n = read_u32(&mut r)? as usize;
    let mut p = [0u8; 8];
    r.read_exact(&mut p)?;
    let period = f64::from_le_bytes(p);
    let rank = read_u32(&mut r)? as usize;
    let ncomp = read_u32(&mut r)? as usize;
    let lattice = Lattice::new(dim, n, period)?;
    if lattice.period().to_bits() != period.to_bits() {
        return Err(Error::Snapshot("period not representable on lattice".into()));
    }
    let layout = Layout::from_header(dim, rank, ncomp)?;
    let count = ncomp * lattice.node_count();
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    Field::from_vec(lattice, layout, data)
}

pub fn save_snapshot(field: &Field, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_snapshot(field, std::io::BufWriter::new(f))
}

pub fn load_snapshot(path: &std::path::Path) -> Result<Field> {
    let f = std::fs::File::open(path)?;
    read_snapshot(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn lat(dim: usize, n: usize) -> Lattice {
        Lattice::new(dim, n, 1.0).unwrap()
    }

    #[test]
    fn lattice_rejects_bad_shapes() {
        assert!(Lattice::new(1, 16, 1.0).is_err());
        assert!(Lattice::new(3, 4, 1.0).is_err());
        assert!(Lattice::new(2, 16, -1.0).is_err());
        let l = Lattice::new(3, 24, 0.7).unwrap();
        assert_eq!(l.spacing() * 24.0, l.period());
    }

    #[test]
    fn sym_index_roundtrip() {
        for dim in 2..=3 {
            for s in 0..sym_count(dim) {
                let (i, j) = sym_pair(s, dim);
                assert_eq!(sym_index(i, j, dim), s);
                assert_eq!(sym_index(j, i, dim), s);
            }
        }
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let l = lat(3, 8);
        let f = Field::scalar_from_fn(l, |_| 3.25);
        for order in [StencilOrder::Second, StencilOrder::Fourth] {
            assert_eq!(partial(&f, 1, order).unwrap().max_abs(), 0.0);
            assert_eq!(second_partial(&f, 0, 2, order).unwrap().max_abs(), 0.0);
            assert_eq!(second_partial(&f, 2, 2, order).unwrap().max_abs(), 0.0);
        }
        assert!(matches!(partial(&f, 3, StencilOrder::Second), Err(Error::AxisOutOfRange { .. })));
    }

    #[test]
    fn sine_first_derivative_within_taylor_bound() {
        let l = lat(2, 64);
        let k = 2.0 * PI / l.period();
        let f = Field::scalar_from_fn(l, |x| (k * x[0]).sin());
        let d = partial(&f, 0, StencilOrder::Second).unwrap();
        let err = l.nodes().map(|n| (d.get(n, 0) - k * (k * l.position(n)[0]).cos()).abs()).fold(0.0, f64::max);
        let bound = k.powi(3) * l.spacing().powi(2) / 6.0 * 1.01;
        assert!(err <= bound, "err {err} bound {bound}");
    }

    #[test]
    fn hat_function_slope_at_smooth_points() {
        let l = lat(2, 32);
        let f = Field::scalar_from_fn(l, |x| {
            let s = x[0];
            if s < 0.5 {
                s
            } else {
                1.0 - s
            }
        });
        let d = partial(&f, 0, StencilOrder::Second).unwrap();
        let node = l.index(&[5, 3]);
        assert!((d.get(node, 0) - 1.0).abs() < 1e-12);
        let node = l.index(&[24, 3]);
        assert!((d.get(node, 0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_partials_commute() {
        let l = lat(2, 32);
        let k = 2.0 * PI;
        let f = Field::scalar_from_fn(l, |x| (k * x[0]).sin() * (k * x[1]).sin());
        for order in [StencilOrder::Second, StencilOrder::Fourth] {
            let a = second_partial(&f, 0, 1, order).unwrap();
            let b = second_partial(&f, 1, 0, order).unwrap();
            let scale = a.max_abs();
            for n in l.nodes() {
                assert!((a.get(n, 0) - b.get(n, 0)).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn second_derivative_converges() {
        let k = 2.0 * PI;
        let err = |n: usize| {
            let l = lat(2, n);
            let f = Field::scalar_from_fn(l, |x| (k * x[1]).sin());
            let d = second_partial(&f, 1, 1, StencilOrder::Second).unwrap();
            l.nodes().map(|m| (d.get(m, 0) + k * k * (k * l.position(m)[1]).sin()).abs()).fold(0.0, f64::max)
        };
        assert!(err(32) / err(64) > 3.8);
    }

    #[test]
    fn ball_mean_of_constant_and_half_indicator() {
        let l = lat(3, 16);
        let c = Field::scalar_from_fn(l, |_| -2.0);
        assert!((ball_mean_p(&c, 7, 0.3, 3.0).unwrap() - 2.0).abs() < 1e-14);
        assert!(matches!(ball_mean_p(&c, 0, 0.6, 1.0), Err(Error::RadiusTooLarge { .. })));

        // indicator of the half x0 < L/2, ball centred on the interface
        let half = Field::scalar_from_fn(l, |x| if x[0] < 0.5 - 1e-9 { 1.0 } else { 0.0 });
        let center = l.index(&[8, 4, 4]);
        let ball = BallStencil::new(&l, 0.25).unwrap();
        let m = ball.mean_p(&half, center, 1.0);
        // brute-force node count
        let inside: Vec<_> = ball.offsets().to_vec();
        let ones = inside.iter().filter(|o| (8 + o[0]) < 8).count();
        assert!((m - ones as f64 / inside.len() as f64).abs() < 1e-14);
        let shell = inside.iter().filter(|o| o[0] == 0).count() as f64 / inside.len() as f64;
        assert!((m - 0.5).abs() <= shell);
    }

    #[test]
    fn global_integral_values() {
        let l = Lattice::new(3, 16, 2.0).unwrap();
        let one = Field::scalar_from_fn(l, |_| 1.0);
        assert!((global_integral(&one).unwrap() - 8.0).abs() < 1e-12);
        let k = 2.0 * PI / 2.0;
        let s = Field::scalar_from_fn(l, |x| (k * x[0]).sin());
        assert!(global_integral(&s).unwrap().abs() <= 1e-12 * 8.0);
        let s2 = s.map(|v| v * v);
        assert!((global_integral(&s2).unwrap() / 4.0 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn snapshot_roundtrip_is_bit_exact() {
        let l = Lattice::new(3, 8, 0.3).unwrap();
        let f = Field::from_fn(l, Layout::Rank3Sym, |x, out| {
            for (c, v) in out.iter_mut().enumerate() {
                *v = (x[0] * 13.0 + c as f64).sin() / 3.0;
            }
        });
        let mut buf = Vec::new();
        write_snapshot(&f, &mut buf).unwrap();
        let g = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(g.layout(), Layout::Rank3Sym);
        assert!(f.data().iter().zip(g.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(read_snapshot(&buf[..20]).is_err());
    }
}
