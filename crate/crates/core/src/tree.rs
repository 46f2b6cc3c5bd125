//! Ncrit-based octree over Morton-sorted particles.
//!
//! Cells are stored breadth-first, so the sons of a cell are contiguous and
//! every cell appears after its father. Each cell owns the contiguous range
//! of sorted particles that fall inside it.

use std::ops::Range;

use num_complex::Complex64;

use crate::error::{FmmError, Result};
use crate::geometry::{cell_frame, morton_encode, BoundingBox, CellFrame, MortonKey, Point3, MAX_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub ncrit: usize,
    /// Safety cap on the depth; cells reaching it become leaves whatever
    /// their particle count.
    pub hard_depth_cap: u32,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { ncrit: 64, hard_depth_cap: 30 }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ncrit == 0 {
            return Err(FmmError::InvalidParameter("ncrit must be at least 1".into()));
        }
        if self.hard_depth_cap == 0 || self.hard_depth_cap > MAX_DEPTH {
            return Err(FmmError::InvalidParameter(format!(
                "hard depth cap must lie in 1..={MAX_DEPTH}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub key: MortonKey,
    pub level: u32,
    /// Integer coordinates of the cell among the `2^level` cells per axis.
    pub coords: [i64; 3],
    pub particle_range: Range<usize>,
    /// Index of the first son; sons occupy `first_son..first_son + n_sons`.
    pub first_son: usize,
    pub n_sons: usize,
    pub parent: Option<usize>,
    /// Half-diagonal of the cell cube.
    pub radius: f64,
    pub frame: CellFrame,
}

impl Cell {
    pub fn is_leaf(&self) -> bool {
        self.n_sons == 0
    }

    pub fn sons(&self) -> Range<usize> {
        self.first_son..self.first_son + self.n_sons
    }

    pub fn n_particles(&self) -> usize {
        self.particle_range.len()
    }

    pub fn octant(&self) -> u8 {
        self.key.octant()
    }

    pub fn center(&self) -> Point3 {
        self.frame.center()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    pub root: BoundingBox,
    pub cells: Vec<Cell>,
    /// Cell indices grouped by level.
    pub levels: Vec<Vec<usize>>,
    pub config: TreeConfig,
}

impl ClusterTree {
    pub fn depth(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    pub fn n_leaves(&self) -> usize {
        self.cells.iter().filter(|c| c.is_leaf()).count()
    }

    pub fn leaves(&self) -> impl Iterator<Item = (usize, &Cell)> {
        self.cells.iter().enumerate().filter(|(_, c)| c.is_leaf())
    }
}

/// Morton-sorted particles in structure-of-arrays layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub positions: Vec<Point3>,
    pub charges: Vec<Complex64>,
    pub potentials: Vec<Complex64>,
    /// `original_index[i]` is the input index of sorted particle `i`.
    pub original_index: Vec<usize>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Potentials reordered back to the caller's particle order.
    pub fn potentials_in_input_order(&self) -> Vec<Complex64> {
        accumulate_potentials(&self.potentials, &self.original_index)
    }
}

/// Scatters sorted values back through `original_index`.
pub fn accumulate_potentials(sorted: &[Complex64], original_index: &[usize]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); sorted.len()];
    for (value, &orig) in sorted.iter().zip(original_index) {
        out[orig] = *value;
    }
    out
}

/// Half-diagonal of a cell at `level` in a root box of side `root_side`.
pub fn radius_at(root_side: f64, level: u32) -> f64 {
    3f64.sqrt() * root_side / 2f64.powi(level as i32 + 1)
}

pub fn level_radius(tree: &ClusterTree, level: u32) -> f64 {
    radius_at(tree.root.side(), level)
}

/// Builds the tree in the smallest enclosing cube of `points`.
pub fn build_tree(points: &[Point3], charges: &[Complex64], config: &TreeConfig) -> Result<(ClusterTree, ParticleSet)> {
    if points.is_empty() {
        return Err(FmmError::EmptyInput("no particles"));
    }
    let root = BoundingBox::enclosing(points)?;
    build_tree_in(root, points, charges, config)
}

/// Builds the tree in a caller-supplied root cube, which lets a target and a
/// source tree share the same cell geometry.
pub fn build_tree_in(
    root: BoundingBox,
    points: &[Point3],
    charges: &[Complex64],
    config: &TreeConfig,
) -> Result<(ClusterTree, ParticleSet)> {
    config.validate()?;
    if points.is_empty() {
        return Err(FmmError::EmptyInput("no particles"));
    }
    if charges.len() != points.len() {
        return Err(FmmError::LengthMismatch { expected: points.len(), got: charges.len() });
    }
    let cap = config.hard_depth_cap;
    let mut keys = Vec::with_capacity(points.len());
    for (index, &p) in points.iter().enumerate() {
        if !p.is_finite() {
            return Err(FmmError::NonFinite { index });
        }
        if !root.contains(p) {
            return Err(FmmError::PointOutsideBox { index });
        }
        keys.push(morton_encode(root.cell_coords(p, cap), cap)?.interleaved());
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by_key(|&i| keys[i]);
    let sorted_keys: Vec<u128> = order.iter().map(|&i| keys[i]).collect();

    let make_cell = |key: MortonKey, range: Range<usize>, parent: Option<usize>| {
        let level = key.depth();
        let c = key.coords();
        Cell {
            key,
            level,
            coords: [c[0] as i64, c[1] as i64, c[2] as i64],
            particle_range: range,
            first_son: 0,
            n_sons: 0,
            parent,
            radius: radius_at(root.side(), level),
            frame: cell_frame(&root, key),
        }
    };

    let mut cells = vec![make_cell(MortonKey::ROOT, 0..points.len(), None)];
    let mut next = 0;
    while next < cells.len() {
        let (level, range, key) = {
            let c = &cells[next];
            (c.level, c.particle_range.clone(), c.key)
        };
        if range.len() > config.ncrit && level < cap {
            let shift = 3 * (cap - level - 1);
            let octant_of = |i: usize| ((sorted_keys[i] >> shift) & 7) as u8;
            let first_son = cells.len();
            let mut start = range.start;
            while start < range.end {
                let oct = octant_of(start);
                let end = start + sorted_keys[start..range.end].partition_point(|&k| ((k >> shift) & 7) as u8 == oct);
                cells.push(make_cell(key.child(oct), start..end, Some(next)));
                start = end;
            }
            cells[next].first_son = first_son;
            cells[next].n_sons = cells.len() - first_son;
        }
        next += 1;
    }

    let depth = cells.iter().map(|c| c.level).max().unwrap_or(0);
    let mut levels = vec![Vec::new(); depth as usize + 1];
    for (i, c) in cells.iter().enumerate() {
        levels[c.level as usize].push(i);
    }

    // Final particle order: Morton order at the deepest realized level, ties
    // kept in input order. Cell ranges are unchanged by this re-sort.
    let drop = 3 * (cap - depth);
    let mut perm: Vec<usize> = (0..points.len()).collect();
    perm.sort_by_key(|&i| keys[i] >> drop);

    let particles = ParticleSet {
        positions: perm.iter().map(|&i| points[i]).collect(),
        charges: perm.iter().map(|&i| charges[i]).collect(),
        potentials: vec![Complex64::new(0.0, 0.0); points.len()],
        original_index: perm,
    };
    let tree = ClusterTree { root, cells, levels, config: *config };
    Ok((tree, particles))
}
