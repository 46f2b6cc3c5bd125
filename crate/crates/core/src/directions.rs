//! Nested direction sets built by recursive subdivision of the cube faces.
//!
//! Refinement `e` splits each of the six faces into `2^e x 2^e` sub-faces and
//! projects their centers on the unit sphere, giving `6 * 4^e` directions.
//! The father of a sub-face is the sub-face of refinement `e - 1` containing it.

use crate::error::{FmmError, Result};
use crate::geometry::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DirId {
    pub refinement: u32,
    pub index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub unit: Point3,
    pub id: DirId,
}

#[derive(Debug, Clone)]
pub struct DirectionTree {
    levels: Vec<Vec<Point3>>,
}

// index layout inside a refinement: face * 4^e + i * 2^e + j
fn face_point(face: usize, u: f64, v: f64) -> Point3 {
    let axis = face / 2;
    let sign = if face.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut c = [0.0; 3];
    c[axis] = sign;
    c[(axis + 1) % 3] = u;
    c[(axis + 2) % 3] = v;
    Point3::from_array(c)
}

impl DirectionTree {
    /// Generates refinements `0..=max_refinement`.
    pub fn generate(max_refinement: u32) -> Self {
        let levels = (0..=max_refinement)
            .map(|e| {
                let n = 1usize << e;
                let mut dirs = Vec::with_capacity(6 * n * n);
                for face in 0..6 {
                    for i in 0..n {
                        for j in 0..n {
                            let u = (2 * i + 1) as f64 / n as f64 - 1.0;
                            let v = (2 * j + 1) as f64 / n as f64 - 1.0;
                            dirs.push(face_point(face, u, v).normalized().expect("face center is nonzero"));
                        }
                    }
                }
                dirs
            })
            .collect();
        Self { levels }
    }

    pub fn n_refinements(&self) -> usize {
        self.levels.len()
    }

    pub fn len_at(&self, refinement: u32) -> usize {
        self.levels.get(refinement as usize).map_or(0, Vec::len)
    }

    pub fn directions(&self, refinement: u32) -> Result<&[Point3]> {
        self.levels
            .get(refinement as usize)
            .map(Vec::as_slice)
            .ok_or(FmmError::DirectionLevelOutOfRange { level: refinement as usize, available: self.levels.len() })
    }

    pub fn get(&self, id: DirId) -> Result<Direction> {
        let dirs = self.directions(id.refinement)?;
        let unit = *dirs.get(id.index as usize).ok_or_else(|| {
            FmmError::InvalidParameter(format!("direction index {} out of range", id.index))
        })?;
        Ok(Direction { unit, id })
    }

    /// Closest direction of a refinement to `v`, smallest index on ties.
    pub fn nearest(&self, refinement: u32, v: Point3) -> Result<Direction> {
        let dirs = self.directions(refinement)?;
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, u) in dirs.iter().enumerate() {
            let d = (*u - v).norm();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        Ok(Direction { unit: dirs[best], id: DirId { refinement, index: best as u32 } })
    }

    pub fn father(&self, id: DirId) -> Result<Direction> {
        let fid = father_id(id)?;
        self.get(fid)
    }

    pub fn sons(&self, id: DirId) -> Result<Vec<Direction>> {
        let e = id.refinement + 1;
        let n = 1u32 << e;
        let face = id.index / (n * n / 4);
        let rem = id.index % (n * n / 4);
        let (i, j) = (rem / (n / 2), rem % (n / 2));
        let mut out = Vec::with_capacity(4);
        for di in 0..2 {
            for dj in 0..2 {
                let index = face * n * n + (2 * i + di) * n + 2 * j + dj;
                out.push(self.get(DirId { refinement: e, index })?);
            }
        }
        Ok(out)
    }
}

pub fn father_id(id: DirId) -> Result<DirId> {
    if id.refinement == 0 {
        return Err(FmmError::NoFatherDirection);
    }
    let n = 1u32 << id.refinement;
    let face = id.index / (n * n);
    let rem = id.index % (n * n);
    let (i, j) = (rem / n, rem % n);
    let m = n / 2;
    Ok(DirId { refinement: id.refinement - 1, index: face * m * m + (i / 2) * m + j / 2 })
}
