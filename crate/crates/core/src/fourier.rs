//! Circulant embedding of the M2L operator, Fourier-domain symbols and the
//! signed-permutation symmetries shared between translations.
//!
//! The nodal grid of `L^3` points is zero-padded into a periodic grid of
//! `P^3` points with `P = 2L - 1`. Forward and backward transforms are scaled
//! by `P^{-3/2}` so that they are adjoint to each other.

use std::collections::HashMap;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::directions::DirId;
use crate::error::{FmmError, Result};
use crate::kernel::HelmholtzKernel;
use crate::C64;

/// FFT plans and scratch for one interpolation order.
pub struct FourierWorkspace {
    order: usize,
    p: usize,
    forward: Arc<dyn Fft<f64>>,
    backward: Arc<dyn Fft<f64>>,
    buf: Vec<C64>,
    tmp: Vec<C64>,
    fft_scratch: Vec<C64>,
}

impl std::fmt::Debug for FourierWorkspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierWorkspace").field("order", &self.order).field("p", &self.p).finish()
    }
}

impl FourierWorkspace {
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(FmmError::InvalidParameter(format!("interpolation order must be at least 2, got {order}")));
        }
        let p = 2 * order - 1;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(p);
        let backward = planner.plan_fft_inverse(p);
        let ns = forward.get_inplace_scratch_len().max(backward.get_inplace_scratch_len());
        Ok(Self {
            order,
            p,
            forward,
            backward,
            buf: vec![C64::new(0.0, 0.0); p * p * p],
            tmp: vec![C64::new(0.0, 0.0); p * p * p],
            fft_scratch: vec![C64::new(0.0, 0.0); ns],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Points per axis of the periodic grid.
    pub fn extent(&self) -> usize {
        self.p
    }

    /// `P^3`.
    pub fn len(&self) -> usize {
        self.p * self.p * self.p
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodal_len(&self) -> usize {
        self.order * self.order * self.order
    }

    /// Unnormalized 3D DFT in place: exponent `-2 pi i k m / P` when `forward`, `+` otherwise.
    pub fn dft3(&mut self, data: &mut [C64], forward: bool) {
        let p = self.p;
        debug_assert_eq!(data.len(), p * p * p);
        let plan = if forward { &self.forward } else { &self.backward };
        for _ in 0..3 {
            plan.process_with_scratch(data, &mut self.fft_scratch);
            // new[y + P z + P^2 x] = old[x + P y + P^2 z]
            for z in 0..p {
                for y in 0..p {
                    let src = &data[p * y + p * p * z..][..p];
                    for (x, v) in src.iter().enumerate() {
                        self.tmp[y + p * z + p * p * x] = *v;
                    }
                }
            }
            data.copy_from_slice(&self.tmp);
        }
    }

    /// Zero-pads a nodal expansion and transforms it.
    pub fn m2f(&mut self, nodal: &[C64], out: &mut [C64]) -> Result<()> {
        check_len(self.nodal_len(), nodal.len())?;
        check_len(self.len(), out.len())?;
        let (l, p) = (self.order, self.p);
        out.fill(C64::new(0.0, 0.0));
        let s = (self.len() as f64).powf(-0.5);
        for i2 in 0..l {
            for i1 in 0..l {
                for i0 in 0..l {
                    out[i0 + p * i1 + p * p * i2] = nodal[i0 + l * i1 + l * l * i2] * s;
                }
            }
        }
        self.dft3(out, true);
        Ok(())
    }

    /// Inverse transform followed by restriction to the nodal grid, added into `out`.
    pub fn f2l(&mut self, fourier: &[C64], out: &mut [C64]) -> Result<()> {
        check_len(self.len(), fourier.len())?;
        check_len(self.nodal_len(), out.len())?;
        let (l, p) = (self.order, self.p);
        let mut buf = std::mem::take(&mut self.buf);
        buf.copy_from_slice(fourier);
        self.dft3(&mut buf, false);
        let s = (self.len() as f64).powf(-0.5);
        for i2 in 0..l {
            for i1 in 0..l {
                for i0 in 0..l {
                    out[i0 + l * i1 + l * l * i2] += buf[i0 + p * i1 + p * p * i2] * s;
                }
            }
        }
        self.buf = buf;
        Ok(())
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(FmmError::LengthMismatch { expected, got });
    }
    Ok(())
}

const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Signed permutation `(R v)_a = s_a v_{perm[a]}`; id `perm_index * 8 + sign_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rotation {
    pub perm: [usize; 3],
    pub signs: [i64; 3],
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation { perm: [0, 1, 2], signs: [1, 1, 1] };

    pub fn from_id(id: usize) -> Result<Self> {
        if id >= 48 {
            return Err(FmmError::UnknownRotation(id));
        }
        let perm = PERMS[id / 8];
        let b = id % 8;
        let signs = [0, 1, 2].map(|a| if (b >> a) & 1 == 1 { -1 } else { 1 });
        Ok(Self { perm, signs })
    }

    pub fn id(&self) -> usize {
        let pi = PERMS.iter().position(|p| *p == self.perm).expect("valid permutation");
        let b: usize = (0..3).filter(|&a| self.signs[a] < 0).map(|a| 1 << a).sum();
        pi * 8 + b
    }

    pub fn apply(&self, v: [i64; 3]) -> [i64; 3] {
        [0, 1, 2].map(|a| self.signs[a] * v[self.perm[a]])
    }

    pub fn inverse(&self) -> Self {
        let mut perm = [0; 3];
        let mut signs = [1; 3];
        for a in 0..3 {
            perm[self.perm[a]] = a;
            signs[self.perm[a]] = self.signs[a];
        }
        Self { perm, signs }
    }

    /// `self * other`, i.e. `other` applied first.
    pub fn compose(&self, other: &Rotation) -> Self {
        let mut perm = [0; 3];
        let mut signs = [1; 3];
        for a in 0..3 {
            perm[a] = other.perm[self.perm[a]];
            signs[a] = self.signs[a] * other.signs[self.perm[a]];
        }
        Self { perm, signs }
    }
}

/// Canonical form of a translation: sorted absolute values, non-increasing.
///
/// Returns `(canonical, rotation id)` with `translation = R canonical`.
pub fn canonicalize_translation(t: [i64; 3]) -> Result<([i64; 3], usize)> {
    if t == [0, 0, 0] {
        return Err(FmmError::ZeroTranslation);
    }
    let mut order = [0usize, 1, 2];
    // stable: equal magnitudes keep axis order
    order.sort_by(|&a, &b| t[b].abs().cmp(&t[a].abs()));
    let canonical = order.map(|a| t[a].abs());
    let mut perm = [0; 3];
    for (k, &a) in order.iter().enumerate() {
        perm[a] = k;
    }
    let signs = t.map(|v| if v < 0 { -1 } else { 1 });
    let r = Rotation { perm, signs };
    debug_assert_eq!(r.apply(canonical), t);
    Ok((canonical, r.id()))
}

/// The 48 rotations with their induced index maps on the periodic grid.
#[derive(Debug, Clone)]
pub struct SymmetryTable {
    p: usize,
    rotations: Vec<Rotation>,
    // maps[id][k] = flat((R^{-1} k) mod P)
    maps: Vec<Vec<u32>>,
}

impl SymmetryTable {
    pub fn new(extent: usize) -> Self {
        let p = extent;
        let rotations: Vec<Rotation> = (0..48).map(|i| Rotation::from_id(i).expect("id < 48")).collect();
        let maps = rotations
            .iter()
            .map(|r| {
                let inv = r.inverse();
                let mut m = Vec::with_capacity(p * p * p);
                for k2 in 0..p {
                    for k1 in 0..p {
                        for k0 in 0..p {
                            let w = inv.apply([k0 as i64, k1 as i64, k2 as i64]);
                            let w = w.map(|c| c.rem_euclid(p as i64) as usize);
                            m.push((w[0] + p * w[1] + p * p * w[2]) as u32);
                        }
                    }
                }
                m
            })
            .collect();
        Self { p, rotations, maps }
    }

    pub fn extent(&self) -> usize {
        self.p
    }

    pub fn rotation(&self, id: usize) -> Result<&Rotation> {
        self.rotations.get(id).ok_or(FmmError::UnknownRotation(id))
    }

    pub fn index_map(&self, id: usize) -> Result<&[u32]> {
        self.maps.get(id).map(Vec::as_slice).ok_or(FmmError::UnknownRotation(id))
    }
}

/// Fourier-domain diagonal of the M2L operator for one level and translation.
#[derive(Debug, Clone, PartialEq)]
pub struct M2lSymbol {
    pub level: u32,
    pub translation: [i64; 3],
    pub diagonal: Vec<C64>,
}

/// Builds the symbol of translation `t` (in cell units) between cells of side `side`.
///
/// The circulant first column holds `G(side * (t + m h))` at `m mod P` for
/// `m` in `[-(L-1), L-1]^3`; the symbol is its unnormalized DFT.
pub fn precompute_symbol(
    level: u32,
    translation: [i64; 3],
    side: f64,
    kernel: &HelmholtzKernel,
    ws: &mut FourierWorkspace,
) -> Result<M2lSymbol> {
    let (l, p) = (ws.order as i64, ws.p);
    let h = 1.0 / (l - 1) as f64;
    let mut col = vec![C64::new(0.0, 0.0); ws.len()];
    for m2 in -(l - 1)..l {
        for m1 in -(l - 1)..l {
            for m0 in -(l - 1)..l {
                let d = [m0, m1, m2];
                let v: [f64; 3] = [0, 1, 2].map(|a| side * (translation[a] as f64 + d[a] as f64 * h));
                let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if r <= 1e-12 * side {
                    return Err(FmmError::SingularStencil(translation));
                }
                let idx = d.map(|c| c.rem_euclid(p as i64) as usize);
                col[idx[0] + p * idx[1] + p * p * idx[2]] = kernel.eval_r(r);
            }
        }
    }
    ws.dft3(&mut col, true);
    Ok(M2lSymbol { level, translation, diagonal: col })
}

/// Symbol of `R t` from the symbol of `t`, by permuting entries.
pub fn permute_symbol(symbol: &M2lSymbol, rotation_id: usize, table: &SymmetryTable) -> Result<M2lSymbol> {
    let map = table.index_map(rotation_id)?;
    check_len(map.len(), symbol.diagonal.len())?;
    let r = table.rotation(rotation_id)?;
    Ok(M2lSymbol {
        level: symbol.level,
        translation: r.apply(symbol.translation),
        diagonal: map.iter().map(|&k| symbol.diagonal[k as usize]).collect(),
    })
}

/// `acc += diagonal * source`.
pub fn m2l_hadamard(acc: &mut [C64], source: &[C64], diagonal: &[C64]) -> Result<()> {
    check_len(acc.len(), source.len())?;
    check_len(acc.len(), diagonal.len())?;
    for ((a, s), d) in acc.iter_mut().zip(source).zip(diagonal) {
        *a += d * s;
    }
    Ok(())
}

/// `acc[k] += diagonal[map[k]] * source[k]`: Hadamard product with a rotated symbol.
pub fn m2l_hadamard_mapped(acc: &mut [C64], source: &[C64], diagonal: &[C64], map: &[u32]) -> Result<()> {
    check_len(acc.len(), source.len())?;
    check_len(acc.len(), map.len())?;
    check_len(acc.len(), diagonal.len())?;
    for ((a, s), &k) in acc.iter_mut().zip(source).zip(map) {
        *a += diagonal[k as usize] * s;
    }
    Ok(())
}

/// How to apply the M2L of one `(level, translation)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct M2lEntry {
    pub symbol: usize,
    pub rotation: u8,
    pub direction: Option<DirId>,
}

/// Symbols keyed by `(level, canonical translation)` and per-translation entries.
#[derive(Debug)]
pub struct SymbolCache {
    pub symbols: Vec<M2lSymbol>,
    index: HashMap<(u32, [i64; 3]), usize>,
    entries: HashMap<(u32, [i64; 3]), M2lEntry>,
    pub table: SymmetryTable,
}

impl SymbolCache {
    pub fn new(order: usize) -> Self {
        Self {
            symbols: Vec::new(),
            index: HashMap::new(),
            entries: HashMap::new(),
            table: SymmetryTable::new(2 * order - 1),
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn symbols_at(&self, level: u32) -> usize {
        self.symbols.iter().filter(|s| s.level == level).count()
    }

    /// Ensures the entry for `translation` exists, computing the canonical symbol if needed.
    pub fn ensure(
        &mut self,
        level: u32,
        translation: [i64; 3],
        side: f64,
        direction: Option<DirId>,
        kernel: &HelmholtzKernel,
        ws: &mut FourierWorkspace,
    ) -> Result<M2lEntry> {
        if let Some(e) = self.entries.get(&(level, translation)) {
            return Ok(*e);
        }
        let (canonical, rot) = canonicalize_translation(translation)?;
        let symbol = match self.index.get(&(level, canonical)) {
            Some(&i) => i,
            None => {
                let s = precompute_symbol(level, canonical, side, kernel, ws)?;
                self.symbols.push(s);
                self.index.insert((level, canonical), self.symbols.len() - 1);
                self.symbols.len() - 1
            }
        };
        let e = M2lEntry { symbol, rotation: rot as u8, direction };
        self.entries.insert((level, translation), e);
        Ok(e)
    }

    pub fn entry(&self, level: u32, translation: [i64; 3]) -> Result<M2lEntry> {
        self.entries
            .get(&(level, translation))
            .copied()
            .ok_or(FmmError::MissingSymbol { level, translation })
    }

    /// `acc += D_t * source` for the entry of translation `t`.
    pub fn apply(&self, entry: &M2lEntry, acc: &mut [C64], source: &[C64]) -> Result<()> {
        let d = &self.symbols[entry.symbol].diagonal;
        if entry.rotation == 0 {
            m2l_hadamard(acc, source, d)
        } else {
            m2l_hadamard_mapped(acc, source, d, self.table.index_map(entry.rotation as usize)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CellFrame, Point3};
    use crate::interp::InterpGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn rand_c(rng: &mut impl Rng, n: usize) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    fn rel(a: &[C64], b: &[C64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
        num / den
    }

    // dense G(x_h, y_r) between two same-size cells, applied to v
    fn dense_m2l(l: usize, t: [i64; 3], side: f64, k: &HelmholtzKernel, v: &[C64]) -> Vec<C64> {
        let g = InterpGrid::new(l).unwrap();
        let s = CellFrame { alpha: Point3::new(0.3, -0.2, 0.1), beta: side };
        let tf = CellFrame { alpha: s.alpha + Point3::new(t[0] as f64, t[1] as f64, t[2] as f64) * side, beta: side };
        (0..g.len())
            .map(|h| {
                let x = g.node_in(&tf, h);
                (0..g.len()).map(|r| k.eval(x, g.node_in(&s, r)) * v[r]).sum()
            })
            .collect()
    }

    fn fft_m2l(ws: &mut FourierWorkspace, d: &[C64], v: &[C64]) -> Vec<C64> {
        let mut f = vec![C64::new(0.0, 0.0); ws.len()];
        ws.m2f(v, &mut f).unwrap();
        let mut acc = vec![C64::new(0.0, 0.0); ws.len()];
        m2l_hadamard(&mut acc, &f, d).unwrap();
        let mut out = vec![C64::new(0.0, 0.0); ws.nodal_len()];
        ws.f2l(&acc, &mut out).unwrap();
        out
    }

    #[test]
    fn dft_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ws = FourierWorkspace::new(2).unwrap();
        let p = ws.extent();
        let x = rand_c(&mut rng, ws.len());
        let mut y = x.clone();
        ws.dft3(&mut y, true);
        for k in 0..ws.len() {
            let kk = [k % p, (k / p) % p, k / (p * p)];
            let mut s = C64::new(0.0, 0.0);
            for (m, v) in x.iter().enumerate() {
                let mm = [m % p, (m / p) % p, m / (p * p)];
                let ph: usize = (0..3).map(|a| kk[a] * mm[a]).sum();
                s += v * C64::cis(-2.0 * std::f64::consts::PI * ph as f64 / p as f64);
            }
            assert!((s - y[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip_parseval_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for l in 2..7 {
            let mut ws = FourierWorkspace::new(l).unwrap();
            let v = rand_c(&mut rng, ws.nodal_len());
            let mut f = vec![C64::new(0.0, 0.0); ws.len()];
            ws.m2f(&v, &mut f).unwrap();
            let mut back = vec![C64::new(0.0, 0.0); ws.nodal_len()];
            ws.f2l(&f, &mut back).unwrap();
            assert!(rel(&back, &v) < 1e-13);
            // unitary scaling keeps the 2-norm
            let nf: f64 = f.iter().map(|c| c.norm_sqr()).sum();
            let nv: f64 = v.iter().map(|c| c.norm_sqr()).sum();
            assert!((nf / nv - 1.0).abs() < 1e-13);
            // <F chi u, w> = <u, chi^T F* w>
            let w = rand_c(&mut rng, ws.len());
            let mut fw = vec![C64::new(0.0, 0.0); ws.nodal_len()];
            ws.f2l(&w, &mut fw).unwrap();
            let lhs: C64 = f.iter().zip(&w).map(|(a, b)| a * b.conj()).sum();
            let rhs: C64 = v.iter().zip(&fw).map(|(a, b)| a * b.conj()).sum();
            assert!((lhs - rhs).norm() < 1e-12 * lhs.norm().max(1.0));

            let zero = vec![C64::new(0.0, 0.0); ws.nodal_len()];
            ws.m2f(&zero, &mut f).unwrap();
            assert!(f.iter().all(|c| c.norm() == 0.0));
        }
    }

    #[test]
    fn delta_expansion_reproduces_dense_column() {
        let k = HelmholtzKernel::new(0.0).unwrap();
        let mut ws = FourierWorkspace::new(2).unwrap();
        let s = precompute_symbol(0, [2, 0, 0], 1.0, &k, &mut ws).unwrap();
        for j in 0..8 {
            let mut v = vec![C64::new(0.0, 0.0); 8];
            v[j] = C64::new(1.0, 0.0);
            let got = fft_m2l(&mut ws, &s.diagonal, &v);
            let e = dense_m2l(2, [2, 0, 0], 1.0, &k, &v);
            assert!(rel(&got, &e) < 1e-13);
        }
    }

    #[test]
    fn fft_path_matches_dense_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = HelmholtzKernel::new(16.0).unwrap();
        let mut ws = FourierWorkspace::new(4).unwrap();
        for t in [[3, 1, 0], [-2, 2, 1], [0, 0, -3], [2, -3, 3]] {
            let s = precompute_symbol(2, t, 0.25, &k, &mut ws).unwrap();
            let v = rand_c(&mut rng, 64);
            assert!(rel(&fft_m2l(&mut ws, &s.diagonal, &v), &dense_m2l(4, t, 0.25, &k, &v)) < 1e-12);
        }
    }

    #[test]
    fn opposite_translation_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = HelmholtzKernel::new(5.0).unwrap();
        let mut ws = FourierWorkspace::new(3).unwrap();
        let a = precompute_symbol(1, [2, 1, 0], 0.5, &k, &mut ws).unwrap();
        let b = precompute_symbol(1, [-2, -1, 0], 0.5, &k, &mut ws).unwrap();
        let u = rand_c(&mut rng, 27);
        let w = rand_c(&mut rng, 27);
        // <A u, w~> = <u, B w~> with a bilinear pairing
        let au = fft_m2l(&mut ws, &a.diagonal, &u);
        let bw = fft_m2l(&mut ws, &b.diagonal, &w);
        let l: C64 = au.iter().zip(&w).map(|(x, y)| x * y).sum();
        let r: C64 = u.iter().zip(&bw).map(|(x, y)| x * y).sum();
        assert!((l - r).norm() < 1e-13 * l.norm());
    }

    #[test]
    fn singular_stencil_is_rejected() {
        let k = HelmholtzKernel::new(0.0).unwrap();
        let mut ws = FourierWorkspace::new(3).unwrap();
        assert_eq!(precompute_symbol(0, [1, 0, 0], 1.0, &k, &mut ws), Err(FmmError::SingularStencil([1, 0, 0])));
    }

    #[test]
    fn canonical_examples() {
        assert_eq!(canonicalize_translation([-2, 1, 0]).unwrap().0, [2, 1, 0]);
        assert_eq!(canonicalize_translation([0, -3, 2]).unwrap().0, [3, 2, 0]);
        assert_eq!(canonicalize_translation([0, 0, 0]), Err(FmmError::ZeroTranslation));
        assert_eq!(canonicalize_translation([3, 2, 1]).unwrap(), ([3, 2, 1], 0));
    }

    #[test]
    fn strict_mac_translations_give_sixteen_classes() {
        let mut classes = HashSet::new();
        let mut count = 0;
        for x in -3i64..=3 {
            for y in -3i64..=3 {
                for z in -3i64..=3 {
                    if x.abs().max(y.abs()).max(z.abs()) < 2 {
                        continue;
                    }
                    count += 1;
                    let (c, r) = canonicalize_translation([x, y, z]).unwrap();
                    assert_eq!(Rotation::from_id(r).unwrap().apply(c), [x, y, z]);
                    assert_eq!(canonicalize_translation(c).unwrap().0, c);
                    classes.insert(c);
                }
            }
        }
        assert_eq!(count, 316);
        assert_eq!(classes.len(), 16);
    }

    #[test]
    fn rotations_form_a_group() {
        let all: Vec<Rotation> = (0..48).map(|i| Rotation::from_id(i).unwrap()).collect();
        assert_eq!(all[0], Rotation::IDENTITY);
        assert!(Rotation::from_id(48).is_err());
        for (i, a) in all.iter().enumerate() {
            assert_eq!(a.id(), i);
            assert_eq!(a.compose(&a.inverse()), Rotation::IDENTITY);
            for b in &all {
                let c = a.compose(b);
                assert!(all.contains(&c));
                let v = [3, -1, 2];
                assert_eq!(c.apply(v), a.apply(b.apply(v)));
            }
        }
    }

    #[test]
    fn index_maps_are_a_representation() {
        let t = SymmetryTable::new(5);
        let n = 125;
        for a in 0..48 {
            let m = t.index_map(a).unwrap();
            let mut seen = vec![false; n];
            m.iter().for_each(|&k| seen[k as usize] = true);
            assert!(seen.iter().all(|&s| s));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = M2lSymbol { level: 0, translation: [3, 2, 0], diagonal: rand_c(&mut rng, n) };
        for _ in 0..100 {
            let (a, b) = (rng.gen_range(0..48), rng.gen_range(0..48));
            let ab = t.rotation(a).unwrap().compose(t.rotation(b).unwrap()).id();
            let two = permute_symbol(&permute_symbol(&d, b, &t).unwrap(), a, &t).unwrap();
            let one = permute_symbol(&d, ab, &t).unwrap();
            assert_eq!(two, one);
        }
        assert_eq!(permute_symbol(&d, 0, &t).unwrap(), d);
        let inv = t.rotation(17).unwrap().inverse().id();
        assert_eq!(permute_symbol(&permute_symbol(&d, 17, &t).unwrap(), inv, &t).unwrap(), d);
        assert!(matches!(permute_symbol(&d, 99, &t), Err(FmmError::UnknownRotation(99))));
    }

    #[test]
    fn permuted_symbol_matches_direct_precompute() {
        let k = HelmholtzKernel::new(7.0).unwrap();
        let mut ws = FourierWorkspace::new(4).unwrap();
        let t = SymmetryTable::new(ws.extent());
        let base = precompute_symbol(3, [2, 1, 0], 0.125, &k, &mut ws).unwrap();
        let (_, rot) = canonicalize_translation([-2, 1, 0]).unwrap();
        let p = permute_symbol(&base, rot, &t).unwrap();
        assert_eq!(p.translation, [-2, 1, 0]);
        let d = precompute_symbol(3, [-2, 1, 0], 0.125, &k, &mut ws).unwrap();
        let err = p.diagonal.iter().zip(&d.diagonal).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let mag = d.diagonal.iter().map(|a| a.norm()).fold(0.0, f64::max);
        assert!(err < 1e-13 * mag);
    }

    #[test]
    fn hadamard_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let src = rand_c(&mut rng, 27);
        let mut acc = rand_c(&mut rng, 27);
        let before = acc.clone();
        m2l_hadamard(&mut acc, &src, &[C64::new(1.0, 0.0); 27]).unwrap();
        for k in 0..27 {
            assert_eq!(acc[k], before[k] + src[k]);
        }
        let mut acc2 = before.clone();
        m2l_hadamard(&mut acc2, &[C64::new(0.0, 0.0); 27], &src).unwrap();
        assert_eq!(acc2, before);
        assert!(m2l_hadamard(&mut acc2, &src[..3], &src).is_err());
    }

    #[test]
    fn cache_shares_symbols_across_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let k = HelmholtzKernel::new(4.0).unwrap();
        let mut ws = FourierWorkspace::new(3).unwrap();
        let mut cache = SymbolCache::new(3);
        for t in [[2, 1, 0], [-2, 1, 0], [0, 1, -2], [1, 2, 0]] {
            cache.ensure(2, t, 0.25, None, &k, &mut ws).unwrap();
        }
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.n_entries(), 4);
        assert!(matches!(cache.entry(2, [3, 0, 0]), Err(FmmError::MissingSymbol { .. })));
        let e = cache.entry(2, [0, 1, -2]).unwrap();
        let v = rand_c(&mut rng, 27);
        let mut f = vec![C64::new(0.0, 0.0); ws.len()];
        ws.m2f(&v, &mut f).unwrap();
        let mut acc = vec![C64::new(0.0, 0.0); ws.len()];
        cache.apply(&e, &mut acc, &f).unwrap();
        let mut out = vec![C64::new(0.0, 0.0); 27];
        ws.f2l(&acc, &mut out).unwrap();
        assert!(rel(&out, &dense_m2l(3, [0, 1, -2], 0.25, &k, &v)) < 1e-12);
    }
}
