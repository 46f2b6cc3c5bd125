//! Equispaced tensor interpolation, particle/expansion conversions and the
//! M2M/L2L transfers between a cell and its sons.
//!
//! Flat node index: `i0 + L*i1 + L^2*i2`. Stacked multi-column data store the
//! element `(flat f, column j)` at `f * ncols + j`.

use std::ops::{AddAssign, Mul};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};
use crate::geometry::{CellFrame, Point3};
use crate::C64;

/// Equispaced nodes `k / (L - 1)` of `[0, 1]` in every dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpGrid {
    order: usize,
    nodes: Vec<f64>,
    // 1 / prod_{j != k} (t_k - t_j)
    weights: Vec<f64>,
}

impl InterpGrid {
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(FmmError::InvalidParameter(format!("interpolation order must be at least 2, got {order}")));
        }
        let h = 1.0 / (order - 1) as f64;
        let nodes: Vec<f64> = (0..order).map(|k| k as f64 * h).collect();
        let weights = (0..order)
            .map(|k| {
                let p: f64 = (0..order).filter(|&j| j != k).map(|j| nodes[k] - nodes[j]).product();
                1.0 / p
            })
            .collect();
        Ok(Self { order, nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.order - 1) as f64
    }

    pub fn nodes_1d(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of tensor nodes, `L^3`.
    pub fn len(&self) -> usize {
        self.order * self.order * self.order
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let l = self.order;
        [flat % l, (flat / l) % l, flat / (l * l)]
    }

    pub fn flat_index(&self, idx: [usize; 3]) -> usize {
        let l = self.order;
        idx[0] + l * idx[1] + l * l * idx[2]
    }

    /// Node in reference coordinates.
    pub fn node(&self, flat: usize) -> Point3 {
        let [a, b, c] = self.multi_index(flat);
        Point3::new(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    pub fn node_in(&self, frame: &CellFrame, flat: usize) -> Point3 {
        frame.from_reference(self.node(flat))
    }

    /// All 1D cardinal functions at `x`.
    pub fn basis_1d(&self, x: f64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate().take(self.order) {
            let mut p = self.weights[k];
            for (j, &t) in self.nodes.iter().enumerate() {
                if j != k {
                    p *= x - t;
                }
            }
            *o = p;
        }
    }

    /// Tensor-product cardinal functions at a reference point.
    pub fn basis(&self, x: Point3) -> Vec<f64> {
        let l = self.order;
        let mut b = vec![0.0; 3 * l];
        for a in 0..3 {
            self.basis_1d(x[a], &mut b[a * l..(a + 1) * l]);
        }
        let mut out = Vec::with_capacity(self.len());
        for i2 in 0..l {
            for i1 in 0..l {
                let w = b[l + i1] * b[2 * l + i2];
                for i0 in 0..l {
                    out.push(b[i0] * w);
                }
            }
        }
        out
    }
}

/// 1D Lagrange cardinal polynomial `k` on `L` equispaced nodes of `[0, 1]`.
pub fn lagrange_basis(order: usize, k: usize, x: f64) -> Result<f64> {
    if order < 2 || k >= order {
        return Err(FmmError::InvalidParameter(format!("basis index {k} invalid for order {order}")));
    }
    let h = 1.0 / (order - 1) as f64;
    let tk = k as f64 * h;
    Ok((0..order)
        .filter(|&j| j != k)
        .map(|j| (x - j as f64 * h) / (tk - j as f64 * h))
        .product())
}

/// Plane-wave factor attached to a high-frequency expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Modulation {
    None,
    Plane { kappa: f64, direction: Point3 },
}

impl Modulation {
    pub fn for_regime(high_frequency: bool, kappa: f64, direction: Option<Point3>) -> Result<Self> {
        if !high_frequency {
            return Ok(Modulation::None);
        }
        let direction = direction.ok_or(FmmError::MissingDirection)?;
        Ok(Modulation::Plane { kappa, direction })
    }

    fn wave(&self) -> Option<(f64, Point3)> {
        match *self {
            Modulation::None => None,
            Modulation::Plane { kappa, direction } => Some((kappa, direction)),
        }
    }
}

/// Multipole expansion of the particles of one cell, accumulated into `out`.
///
/// `M[r] += sum_y exp(i k <y_r - y, u>) S_r(y) q(y)`.
pub fn p2m(
    grid: &InterpGrid,
    frame: &CellFrame,
    modulation: Modulation,
    points: &[Point3],
    charges: &[C64],
    out: &mut [C64],
) -> Result<()> {
    check_len(points.len(), charges.len())?;
    check_len(grid.len(), out.len())?;
    let l = grid.order;
    let wave = modulation.wave();
    let mut acc = vec![C64::new(0.0, 0.0); grid.len()];
    let mut b = vec![0.0; 3 * l];
    for (p, &q) in points.iter().zip(charges) {
        let r = frame.to_reference(*p);
        for a in 0..3 {
            grid.basis_1d(r[a], &mut b[a * l..(a + 1) * l]);
        }
        let w = match wave {
            None => q,
            Some((kappa, u)) => q * C64::cis(-kappa * frame.beta * r.dot(u)),
        };
        let mut f = 0;
        for i2 in 0..l {
            for i1 in 0..l {
                let c = w * (b[l + i1] * b[2 * l + i2]);
                for &bx in &b[..l] {
                    acc[f] += c * bx;
                    f += 1;
                }
            }
        }
    }
    match wave {
        None => out.iter_mut().zip(&acc).for_each(|(o, a)| *o += a),
        Some((kappa, u)) => {
            let ph = node_phases(grid, kappa * frame.beta, u, Point3::ORIGIN, 1.0);
            for ((o, a), p) in out.iter_mut().zip(&acc).zip(&ph) {
                *o += a * p;
            }
        }
    }
    Ok(())
}

/// Evaluates a local expansion at particles, adding into `potentials`.
///
/// `p(x) += sum_h exp(i k <x - x_h, u>) S_h(x) L[h]`.
pub fn l2p(
    grid: &InterpGrid,
    frame: &CellFrame,
    modulation: Modulation,
    local: &[C64],
    points: &[Point3],
    potentials: &mut [C64],
) -> Result<()> {
    check_len(points.len(), potentials.len())?;
    check_len(grid.len(), local.len())?;
    let l = grid.order;
    let wave = modulation.wave();
    let twisted: Vec<C64> = match wave {
        None => local.to_vec(),
        Some((kappa, u)) => {
            let ph = node_phases(grid, kappa * frame.beta, u, Point3::ORIGIN, 1.0);
            local.iter().zip(&ph).map(|(v, p)| v * p.conj()).collect()
        }
    };
    let mut b = vec![0.0; 3 * l];
    for (p, out) in points.iter().zip(potentials.iter_mut()) {
        let r = frame.to_reference(*p);
        for a in 0..3 {
            grid.basis_1d(r[a], &mut b[a * l..(a + 1) * l]);
        }
        let mut s = C64::new(0.0, 0.0);
        let mut f = 0;
        for i2 in 0..l {
            for i1 in 0..l {
                let mut row = C64::new(0.0, 0.0);
                for &bx in &b[..l] {
                    row += twisted[f] * bx;
                    f += 1;
                }
                s += row * (b[l + i1] * b[2 * l + i2]);
            }
        }
        *out += match wave {
            None => s,
            Some((kappa, u)) => s * C64::cis(kappa * frame.beta * r.dot(u)),
        };
    }
    Ok(())
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(FmmError::LengthMismatch { expected, got });
    }
    Ok(())
}

/// `exp(i s <offset + scale * node_f, u>)` for every node `f`.
fn node_phases(grid: &InterpGrid, s: f64, u: Point3, offset: Point3, scale: f64) -> Vec<C64> {
    let l = grid.order;
    let mut axis = vec![C64::new(0.0, 0.0); 3 * l];
    for a in 0..3 {
        for k in 0..l {
            axis[a * l + k] = C64::cis(s * (offset[a] + scale * grid.nodes[k]) * u[a]);
        }
    }
    let mut out = Vec::with_capacity(grid.len());
    for i2 in 0..l {
        for i1 in 0..l {
            let w = axis[l + i1] * axis[2 * l + i2];
            for i0 in 0..l {
                out.push(axis[i0] * w);
            }
        }
    }
    out
}

/// How the M2M/L2L tensor products are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// One complex column at a time.
    #[serde(rename = "t")]
    Tensor,
    /// All directional expansions of a cell stacked as columns.
    #[serde(rename = "t+s")]
    Stacked,
    /// Stacked with real and imaginary parts split into real columns.
    #[serde(rename = "t+s+r")]
    StackedReal,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Tensor, Strategy::Stacked, Strategy::StackedReal];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Tensor => "t",
            Strategy::Stacked => "t+s",
            Strategy::StackedReal => "t+s+r",
        }
    }
}

impl FromStr for Strategy {
    type Err = FmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t" => Ok(Strategy::Tensor),
            "t+s" => Ok(Strategy::Stacked),
            "t+s+r" => Ok(Strategy::StackedReal),
            other => Err(FmmError::UnknownStrategy(other.to_string())),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

trait Scalar: Copy + AddAssign + Mul<f64, Output = Self> {
    const ZERO: Self;
}

impl Scalar for f64 {
    const ZERO: f64 = 0.0;
}

impl Scalar for C64 {
    const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
}

/// One pass of `out[.., o, ..] = sum_i m[o][i] * inp[.., i, ..]` along `axis`.
fn axis_pass<T: Scalar>(l: usize, ncols: usize, axis: usize, m: &[f64], inp: &[T], out: &mut [T]) {
    let inner = l.pow(axis as u32) * ncols;
    let outer = l.pow(2 - axis as u32);
    out.fill(T::ZERO);
    for blk in 0..outer {
        let base = blk * l * inner;
        for o in 0..l {
            let dst = &mut out[base + o * inner..base + (o + 1) * inner];
            for i in 0..l {
                let c = m[o * l + i];
                let src = &inp[base + i * inner..base + (i + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += *s * c;
                }
            }
        }
    }
}

/// Applies `m[2] (x) m[1] (x) m[0]` to `ncols` stacked columns in place.
fn tensor_apply<T: Scalar>(l: usize, ncols: usize, m: [&[f64]; 3], data: &mut Vec<T>, scratch: &mut Vec<T>) {
    scratch.resize(data.len(), T::ZERO);
    for (axis, ma) in m.iter().enumerate() {
        axis_pass(l, ncols, axis, ma, data, scratch);
        std::mem::swap(data, scratch);
    }
}

/// Son/father transfer operators for one interpolation order.
#[derive(Debug, Clone)]
pub struct Translator {
    grid: InterpGrid,
    kappa: f64,
    strategy: Strategy,
    // [b][q * L + l] = S_l((b + q h) / 2), son node q in father coordinates
    down: [Vec<f64>; 2],
    // transpose of `down`
    up: [Vec<f64>; 2],
}

impl Translator {
    pub fn new(grid: InterpGrid, kappa: f64, strategy: Strategy) -> Self {
        let l = grid.order;
        let h = grid.spacing();
        let mut down = [vec![0.0; l * l], vec![0.0; l * l]];
        let mut up = [vec![0.0; l * l], vec![0.0; l * l]];
        let mut row = vec![0.0; l];
        for b in 0..2 {
            for q in 0..l {
                grid.basis_1d((b as f64 + q as f64 * h) / 2.0, &mut row);
                for (k, &v) in row.iter().enumerate() {
                    down[b][q * l + k] = v;
                    up[b][k * l + q] = v;
                }
            }
        }
        Self { grid, kappa, strategy, down, up }
    }

    pub fn grid(&self) -> &InterpGrid {
        &self.grid
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// The 1D son-to-father factor for octant bit `b`: entry `[l][q] = S_l(son node q)`.
    pub fn m2m_factor(&self, b: usize) -> &[f64] {
        &self.up[b]
    }

    fn factors(&self, octant: usize, upward: bool) -> [&[f64]; 3] {
        let t = if upward { &self.up } else { &self.down };
        [&t[octant & 1], &t[(octant >> 1) & 1], &t[(octant >> 2) & 1]]
    }

    // (father phases, son phases) for direction `dir`
    fn phases(&self, beta_father: f64, octant: usize, dir: Option<Point3>) -> Option<(Vec<C64>, Vec<C64>)> {
        let u = dir?;
        if self.kappa == 0.0 {
            return None;
        }
        let s = self.kappa * beta_father;
        let b = Point3::new((octant & 1) as f64, ((octant >> 1) & 1) as f64, ((octant >> 2) & 1) as f64);
        Some((
            node_phases(&self.grid, s, u, Point3::ORIGIN, 1.0),
            node_phases(&self.grid, s, u, b * 0.5, 0.5),
        ))
    }

    /// Adds the contribution of one son to the father expansions.
    ///
    /// `father_dirs[j]` is the direction of father slot `j` (`None` in low
    /// frequency) and `son_cols[j]` the son expansion feeding it. `father`
    /// holds the slots back to back. Returns the flop count.
    pub fn m2m(
        &self,
        beta_father: f64,
        father_dirs: &[Option<Point3>],
        octant: usize,
        son_cols: &[&[C64]],
        father: &mut [C64],
    ) -> Result<u64> {
        let n = self.grid.len();
        let nc = father_dirs.len();
        check_len(nc, son_cols.len())?;
        check_len(nc * n, father.len())?;
        for c in son_cols {
            check_len(n, c.len())?;
        }
        let phases: Vec<_> = father_dirs.iter().map(|d| self.phases(beta_father, octant, *d)).collect();
        let m = self.factors(octant, true);
        let l = self.grid.order;
        let twist = |j: usize, r: usize| -> C64 {
            match &phases[j] {
                None => son_cols[j][r],
                Some((_, ps)) => son_cols[j][r] * ps[r].conj(),
            }
        };
        let finish = |j: usize, f: usize, v: C64, father: &mut [C64]| match &phases[j] {
            None => father[j * n + f] += v,
            Some((pf, _)) => father[j * n + f] += v * pf[f],
        };
        let n_phased = phases.iter().filter(|p| p.is_some()).count() as u64;
        let flops = 2 * 6 * n_phased * n as u64
            + 3 * 4 * (l * l * l * l) as u64 * nc as u64;
        match self.strategy {
            Strategy::Tensor => {
                let mut col = vec![C64::ZERO; n];
                let mut scratch = Vec::new();
                for j in 0..nc {
                    for (r, c) in col.iter_mut().enumerate() {
                        *c = twist(j, r);
                    }
                    tensor_apply(l, 1, m, &mut col, &mut scratch);
                    for (f, &v) in col.iter().enumerate() {
                        finish(j, f, v, father);
                    }
                }
            }
            Strategy::Stacked => {
                let mut data = vec![C64::ZERO; n * nc];
                for r in 0..n {
                    for j in 0..nc {
                        data[r * nc + j] = twist(j, r);
                    }
                }
                tensor_apply(l, nc, m, &mut data, &mut Vec::new());
                for f in 0..n {
                    for j in 0..nc {
                        finish(j, f, data[f * nc + j], father);
                    }
                }
            }
            Strategy::StackedReal => {
                let w = 2 * nc;
                let mut data = vec![0.0; n * w];
                for r in 0..n {
                    for j in 0..nc {
                        let v = twist(j, r);
                        data[r * w + j] = v.re;
                        data[r * w + nc + j] = v.im;
                    }
                }
                tensor_apply(l, w, m, &mut data, &mut Vec::new());
                for f in 0..n {
                    for j in 0..nc {
                        finish(j, f, C64::new(data[f * w + j], data[f * w + nc + j]), father);
                    }
                }
            }
        }
        Ok(flops)
    }

    /// Transfers father local expansions to one son.
    ///
    /// Writes one son-sized expansion per father slot into `out` (slots back
    /// to back, overwritten); the caller adds slot `j` into the son expansion
    /// for the father direction of `father_dirs[j]`. Returns the flop count.
    pub fn l2l(
        &self,
        beta_father: f64,
        father_dirs: &[Option<Point3>],
        father: &[C64],
        octant: usize,
        out: &mut [C64],
    ) -> Result<u64> {
        let n = self.grid.len();
        let nc = father_dirs.len();
        check_len(nc * n, father.len())?;
        check_len(nc * n, out.len())?;
        let phases: Vec<_> = father_dirs.iter().map(|d| self.phases(beta_father, octant, *d)).collect();
        let m = self.factors(octant, false);
        let l = self.grid.order;
        let twist = |j: usize, f: usize| -> C64 {
            match &phases[j] {
                None => father[j * n + f],
                Some((pf, _)) => father[j * n + f] * pf[f].conj(),
            }
        };
        let finish = |j: usize, q: usize, v: C64| -> C64 {
            match &phases[j] {
                None => v,
                Some((_, ps)) => v * ps[q],
            }
        };
        let n_phased = phases.iter().filter(|p| p.is_some()).count() as u64;
        let flops = 2 * 6 * n_phased * n as u64 + 3 * 4 * (l * l * l * l) as u64 * nc as u64;
        match self.strategy {
            Strategy::Tensor => {
                let mut col = vec![C64::ZERO; n];
                let mut scratch = Vec::new();
                for j in 0..nc {
                    for (f, c) in col.iter_mut().enumerate() {
                        *c = twist(j, f);
                    }
                    tensor_apply(l, 1, m, &mut col, &mut scratch);
                    for (q, &v) in col.iter().enumerate() {
                        out[j * n + q] = finish(j, q, v);
                    }
                }
            }
            Strategy::Stacked => {
                let mut data = vec![C64::ZERO; n * nc];
                for f in 0..n {
                    for j in 0..nc {
                        data[f * nc + j] = twist(j, f);
                    }
                }
                tensor_apply(l, nc, m, &mut data, &mut Vec::new());
                for q in 0..n {
                    for j in 0..nc {
                        out[j * n + q] = finish(j, q, data[q * nc + j]);
                    }
                }
            }
            Strategy::StackedReal => {
                let w = 2 * nc;
                let mut data = vec![0.0; n * w];
                for f in 0..n {
                    for j in 0..nc {
                        let v = twist(j, f);
                        data[f * w + j] = v.re;
                        data[f * w + nc + j] = v.im;
                    }
                }
                tensor_apply(l, w, m, &mut data, &mut Vec::new());
                for q in 0..n {
                    for j in 0..nc {
                        out[j * n + q] = finish(j, q, C64::new(data[q * w + j], data[q * w + nc + j]));
                    }
                }
            }
        }
        Ok(flops)
    }
}

/// Dense M2M matrix (`L^3 x L^3`, row-major, father rows) of one son.
pub fn dense_m2m(grid: &InterpGrid, kappa: f64, father: &CellFrame, octant: usize, dir: Option<Point3>) -> Vec<C64> {
    let n = grid.len();
    let son = CellFrame {
        alpha: father.alpha
            + Point3::new((octant & 1) as f64, ((octant >> 1) & 1) as f64, ((octant >> 2) & 1) as f64)
                * (father.beta / 2.0),
        beta: father.beta / 2.0,
    };
    let mut out = vec![C64::ZERO; n * n];
    for r in 0..n {
        let y = grid.node_in(&son, r);
        let s = grid.basis(father.to_reference(y));
        for l in 0..n {
            let x = grid.node_in(father, l);
            let ph = match dir {
                Some(u) => C64::cis(kappa * (x - y).dot(u)),
                None => C64::new(1.0, 0.0),
            };
            out[l * n + r] = ph * s[l];
        }
    }
    out
}
