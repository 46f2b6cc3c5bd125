//! Points, cubic boxes, Morton keys and the mapping between tree cells and
//! the reference unit box `[0,1]^3`.

use std::ops::{Add, Index, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};

/// Deepest level a [`MortonKey`] can encode (3 bits per level plus a
/// placeholder bit must fit in 128 bits).
pub const MAX_DEPTH: u32 = 42;

/// Relative inflation applied to the enclosing cube so that boundary
/// particles sit strictly inside.
pub const ROOT_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Point3) -> f64 {
        (self - other).norm()
    }

    /// Unit vector along `self`; `None` for the zero vector.
    pub fn normalized(self) -> Option<Point3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Index<usize> for Point3 {
    type Output = f64;

    fn index(&self, axis: usize) -> &f64 {
        match axis {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("axis {axis} out of range for Point3"),
        }
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Axis-aligned cube given by its center and half side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub center: Point3,
    pub half_width: f64,
}

impl BoundingBox {
    pub fn new(center: Point3, half_width: f64) -> Result<Self> {
        if !center.is_finite() || !half_width.is_finite() || half_width <= 0.0 {
            return Err(FmmError::InvalidParameter(format!(
                "bounding box needs a finite center and positive half width, got {half_width}"
            )));
        }
        Ok(Self { center, half_width })
    }

    /// Smallest cube centered on the centroid of all points, inflated by
    /// [`ROOT_MARGIN`]. Coincident point clouds get a unit-side cube.
    pub fn enclosing<'a, I>(points: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Point3>,
        I::IntoIter: Clone,
    {
        let iter = points.into_iter();
        let mut sum = Point3::ORIGIN;
        let mut count = 0usize;
        for (index, p) in iter.clone().enumerate() {
            if !p.is_finite() {
                return Err(FmmError::NonFinite { index });
            }
            sum = sum + *p;
            count += 1;
        }
        if count == 0 {
            return Err(FmmError::EmptyInput("no particles"));
        }
        let center = sum * (1.0 / count as f64);
        let extent = iter
            .map(|p| {
                let d = *p - center;
                d.x.abs().max(d.y.abs()).max(d.z.abs())
            })
            .fold(0.0f64, f64::max);
        let half_width = if extent > 0.0 {
            extent * (1.0 + ROOT_MARGIN)
        } else {
            0.5
        };
        Self::new(center, half_width)
    }

    pub fn side(&self) -> f64 {
        2.0 * self.half_width
    }

    pub fn lower(&self) -> Point3 {
        self.center - Point3::new(self.half_width, self.half_width, self.half_width)
    }

    /// Closed-box membership test.
    pub fn contains(&self, p: Point3) -> bool {
        let d = p - self.center;
        d.x.abs() <= self.half_width && d.y.abs() <= self.half_width && d.z.abs() <= self.half_width
    }

    /// Integer cell coordinates of `p` at `depth`, clamped so that points on
    /// the upper faces land in the last cell.
    pub fn cell_coords(&self, p: Point3, depth: u32) -> [u64; 3] {
        let n = (1u64 << depth) as f64;
        let lo = self.lower();
        let side = self.side();
        let max = (1u64 << depth) - 1;
        let mut out = [0u64; 3];
        for (a, slot) in out.iter_mut().enumerate() {
            let t = ((p[a] - lo[a]) / side * n).floor();
            *slot = if t <= 0.0 { 0 } else { (t as u64).min(max) };
        }
        out
    }
}

/// Affine map `alpha + beta * [0,1]^3` identifying a cell with the reference box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellFrame {
    pub alpha: Point3,
    pub beta: f64,
}

impl CellFrame {
    pub fn to_reference(&self, p: Point3) -> Point3 {
        (p - self.alpha) * (1.0 / self.beta)
    }

    pub fn from_reference(&self, r: Point3) -> Point3 {
        self.alpha + r * self.beta
    }

    pub fn center(&self) -> Point3 {
        self.from_reference(Point3::new(0.5, 0.5, 0.5))
    }
}

/// Morton key with a leading placeholder bit: `1 << 3*depth | interleave(x,y,z)`.
///
/// The x bit of every level occupies the lowest position of its triple, so
/// the octant of a son is `x | y << 1 | z << 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MortonKey(u128);

impl MortonKey {
    pub const ROOT: MortonKey = MortonKey(1);

    pub fn raw(self) -> u128 {
        self.0
    }

    pub fn depth(self) -> u32 {
        (127 - self.0.leading_zeros()) / 3
    }

    /// Interleaved code without the placeholder bit.
    pub fn interleaved(self) -> u128 {
        self.0 ^ (1u128 << (3 * self.depth()))
    }

    pub fn coords(self) -> [u64; 3] {
        let code = self.interleaved();
        let lo = code as u64 & ((1u64 << 63) - 1);
        let hi = (code >> 63) as u64;
        let mut out = [0u64; 3];
        for (a, slot) in out.iter_mut().enumerate() {
            *slot = compact3(lo >> a) | (compact3(hi >> a) << 21);
        }
        out
    }

    pub fn parent(self) -> Option<MortonKey> {
        (self.depth() > 0).then_some(MortonKey(self.0 >> 3))
    }

    pub fn child(self, octant: u8) -> MortonKey {
        debug_assert!(octant < 8);
        MortonKey((self.0 << 3) | octant as u128)
    }

    /// Position of this cell inside its father.
    pub fn octant(self) -> u8 {
        (self.0 & 7) as u8
    }
}

/// Spreads the low 21 bits of `x` so that bit `i` moves to bit `3i`.
fn spread3(x: u64) -> u64 {
    let mut x = x & 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

fn compact3(x: u64) -> u64 {
    let mut x = x & 0x1249_2492_4924_9249;
    x = (x ^ (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x ^ (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x ^ (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x ^ (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x ^ (x >> 32)) & 0x1f_ffff;
    x
}

fn interleave(coords: [u64; 3]) -> u128 {
    let mask21 = (1u64 << 21) - 1;
    let lo = spread3(coords[0] & mask21)
        | spread3(coords[1] & mask21) << 1
        | spread3(coords[2] & mask21) << 2;
    let hi = spread3(coords[0] >> 21)
        | spread3(coords[1] >> 21) << 1
        | spread3(coords[2] >> 21) << 2;
    lo as u128 | (hi as u128) << 63
}

pub fn morton_encode(coords: [u64; 3], depth: u32) -> Result<MortonKey> {
    if depth > MAX_DEPTH {
        return Err(FmmError::DepthTooLarge { depth, max: MAX_DEPTH });
    }
    if let Some(&coord) = coords.iter().find(|&&c| c >> depth != 0) {
        return Err(FmmError::CoordinateOutOfRange { coord, depth });
    }
    Ok(MortonKey((1u128 << (3 * depth)) | interleave(coords)))
}

/// Stable permutation ordering `points` by their Morton key at `depth`.
pub fn sort_particles_morton(root: &BoundingBox, points: &[Point3], depth: u32) -> Result<Vec<usize>> {
    if depth > MAX_DEPTH {
        return Err(FmmError::DepthTooLarge { depth, max: MAX_DEPTH });
    }
    let mut keys = Vec::with_capacity(points.len());
    for (index, &p) in points.iter().enumerate() {
        if !p.is_finite() {
            return Err(FmmError::NonFinite { index });
        }
        if !root.contains(p) {
            return Err(FmmError::PointOutsideBox { index });
        }
        keys.push(interleave(root.cell_coords(p, depth)));
    }
    let mut perm: Vec<usize> = (0..points.len()).collect();
    perm.sort_by_key(|&i| keys[i]);
    Ok(perm)
}

pub fn cell_frame(root: &BoundingBox, key: MortonKey) -> CellFrame {
    let depth = key.depth();
    let beta = root.side() / (1u64 << depth) as f64;
    let c = key.coords();
    let lo = root.lower();
    CellFrame {
        alpha: Point3::new(
            lo.x + c[0] as f64 * beta,
            lo.y + c[1] as f64 * beta,
            lo.z + c[2] as f64 * beta,
        ),
        beta,
    }
}
