//! Admissibility criteria, the dual tree traversal and the blank passes that
//! prepare directions and Fourier symbols ahead of the numeric traversal.

use std::time::{Duration, Instant};

use crate::directions::{father_id, DirId, DirectionTree};
use crate::error::{FmmError, Result};
use crate::fourier::{FourierWorkspace, SymbolCache};
use crate::geometry::Point3;
use crate::kernel::HelmholtzKernel;
use crate::tree::{radius_at, ClusterTree};

/// Default `kappa * w` above which a cell is treated as high-frequency.
pub const DEFAULT_HF_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacParams {
    pub eta: f64,
    pub kappa: f64,
    pub hf_threshold: f64,
}

impl MacParams {
    pub fn new(eta: f64, kappa: f64) -> Result<Self> {
        let p = Self { eta, kappa, hf_threshold: DEFAULT_HF_THRESHOLD };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(FmmError::InvalidParameter(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(FmmError::InvalidParameter(format!("wavenumber must be non-negative, got {}", self.kappa)));
        }
        if !(self.hf_threshold.is_finite() && self.hf_threshold > 0.0) {
            return Err(FmmError::InvalidParameter("frequency threshold must be positive".into()));
        }
        Ok(())
    }

    pub fn is_high_frequency(&self, radius: f64) -> bool {
        self.kappa > 0.0 && self.kappa * radius >= self.hf_threshold
    }
}

/// `coords(t) - coords(s)` for two cells of the same level.
pub fn translation(t: [i64; 3], s: [i64; 3]) -> [i64; 3] {
    [t[0] - s[0], t[1] - s[1], t[2] - s[2]]
}

/// Minimum distance between two closed same-level cubes of side `side`.
pub fn cube_distance(side: f64, tau: [i64; 3]) -> f64 {
    let g: f64 = tau.iter().map(|&c| ((c.abs() - 1).max(0) as f64).powi(2)).sum();
    side * g.sqrt()
}

/// True iff the cubes are at least one side apart.
pub fn strict_mac(tau: [i64; 3]) -> bool {
    tau.iter().any(|c| c.abs() >= 2)
}

/// `max(kappa w^2, 2 w) / dist <= eta`, false for touching cells.
pub fn directional_mac_value(kappa: f64, w: f64, dist: f64, eta: f64) -> bool {
    dist > 0.0 && (kappa * w * w).max(2.0 * w) / dist <= eta
}

pub fn directional_mac(tau: [i64; 3], side: f64, params: &MacParams) -> bool {
    let w = 3f64.sqrt() * side / 2.0;
    directional_mac_value(params.kappa, w, cube_distance(side, tau), params.eta)
}

/// Per-level frequency regime and direction refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyPlan {
    pub root_side: f64,
    /// Deepest level whose cells are high-frequency, if any.
    pub deepest_hf: Option<u32>,
}

impl FrequencyPlan {
    pub fn new(root_side: f64, params: &MacParams) -> Self {
        let mut deepest = None;
        for level in 0..64 {
            if params.is_high_frequency(radius_at(root_side, level)) {
                deepest = Some(level);
            } else {
                break;
            }
        }
        Self { root_side, deepest_hf: deepest }
    }

    pub fn is_high_frequency(&self, level: u32) -> bool {
        self.deepest_hf.is_some_and(|d| level <= d)
    }

    /// Direction refinement used at a high-frequency level.
    pub fn refinement(&self, level: u32) -> Option<u32> {
        self.deepest_hf.filter(|&d| level <= d).map(|d| d - level)
    }

    /// Finest refinement that a level able to hold far interactions needs.
    pub fn max_refinement(&self) -> u32 {
        self.deepest_hf.map_or(0, |d| d.saturating_sub(2))
    }

    pub fn side(&self, level: u32) -> f64 {
        self.root_side / 2f64.powi(level as i32)
    }

    pub fn admissible(&self, level: u32, tau: [i64; 3], params: &MacParams) -> bool {
        if self.is_high_frequency(level) {
            directional_mac(tau, self.side(level), params)
        } else {
            strict_mac(tau)
        }
    }
}

/// Callbacks of the dual tree traversal.
pub trait DttVisitor {
    fn m2l(&mut self, target: usize, source: usize, level: u32, tau: [i64; 3]) -> Result<()>;
    fn p2p(&mut self, target: usize, source: usize) -> Result<()>;
}

#[derive(Debug, Clone, Copy)]
pub struct DttContext<'a> {
    pub targets: &'a ClusterTree,
    pub sources: &'a ClusterTree,
    pub params: &'a MacParams,
    pub plan: &'a FrequencyPlan,
}

/// Simultaneous descent of both trees from the pair `(t, s)`.
pub fn dtt<V: DttVisitor>(ctx: &DttContext<'_>, t: usize, s: usize, visitor: &mut V) -> Result<()> {
    let tc = &ctx.targets.cells[t];
    let sc = &ctx.sources.cells[s];
    debug_assert_eq!(tc.level, sc.level);
    let tau = translation(tc.coords, sc.coords);
    if ctx.plan.admissible(tc.level, tau, ctx.params) {
        return visitor.m2l(t, s, tc.level, tau);
    }
    if tc.is_leaf() || sc.is_leaf() {
        return visitor.p2p(t, s);
    }
    for ts in tc.sons() {
        for ss in sc.sons() {
            dtt(ctx, ts, ss, visitor)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    M2l,
    P2p,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InteractionEvent {
    pub kind: EventKind,
    pub target: usize,
    pub source: usize,
    pub direction: Option<DirId>,
}

/// Materializes the traversal as a list of events.
#[derive(Debug, Default)]
pub struct EventRecorder<'a> {
    pub events: Vec<InteractionEvent>,
    cache: Option<&'a SymbolCache>,
}

impl<'a> EventRecorder<'a> {
    pub fn new() -> Self {
        Self { events: Vec::new(), cache: None }
    }

    /// Records directions from the entries of a prepared cache.
    pub fn with_cache(cache: &'a SymbolCache) -> Self {
        Self { events: Vec::new(), cache: Some(cache) }
    }
}

impl DttVisitor for EventRecorder<'_> {
    fn m2l(&mut self, target: usize, source: usize, level: u32, tau: [i64; 3]) -> Result<()> {
        let direction = match self.cache {
            Some(c) => c.entry(level, tau)?.direction,
            None => None,
        };
        self.events.push(InteractionEvent { kind: EventKind::M2l, target, source, direction });
        Ok(())
    }

    fn p2p(&mut self, target: usize, source: usize) -> Result<()> {
        self.events.push(InteractionEvent { kind: EventKind::P2p, target, source, direction: None });
        Ok(())
    }
}

/// Direction marks per cell, as indices at the cell's refinement.
pub type Marks = Vec<Vec<u32>>;

/// Traversal visitor that marks directions and fills the symbol cache.
pub struct BlankVisitor<'a> {
    pub plan: &'a FrequencyPlan,
    pub directions: &'a DirectionTree,
    pub kernel: &'a HelmholtzKernel,
    pub workspace: &'a mut FourierWorkspace,
    pub cache: &'a mut SymbolCache,
    pub target_marks: &'a mut Marks,
    pub source_marks: &'a mut Marks,
    /// Time spent building symbols.
    pub precompute_time: Duration,
}

impl DttVisitor for BlankVisitor<'_> {
    fn m2l(&mut self, target: usize, source: usize, level: u32, tau: [i64; 3]) -> Result<()> {
        let entry = match self.cache.entry(level, tau) {
            Ok(e) => e,
            Err(_) => {
                let direction = match self.plan.refinement(level) {
                    Some(e) => {
                        let v = Point3::new(tau[0] as f64, tau[1] as f64, tau[2] as f64);
                        let v = v.normalized().ok_or(FmmError::ZeroTranslation)?;
                        Some(self.directions.nearest(e, v)?.id)
                    }
                    None => None,
                };
                let side = self.plan.side(level);
                let t0 = Instant::now();
                let e = self.cache.ensure(level, tau, side, direction, self.kernel, self.workspace)?;
                self.precompute_time += t0.elapsed();
                e
            }
        };
        if let Some(d) = entry.direction {
            self.target_marks[target].push(d.index);
            self.source_marks[source].push(d.index);
        }
        Ok(())
    }

    fn p2p(&mut self, _target: usize, _source: usize) -> Result<()> {
        Ok(())
    }
}

/// Runs the blank traversal from the root pair.
pub fn blank_dtt(ctx: &DttContext<'_>, visitor: &mut BlankVisitor<'_>) -> Result<()> {
    dtt(ctx, 0, 0, visitor)
}

/// Propagates marks to sons as father directions, breadth-first, and leaves
/// every mark list sorted and deduplicated.
pub fn blank_downward_pass(tree: &ClusterTree, plan: &FrequencyPlan, marks: &mut Marks) -> Result<()> {
    for level in &tree.levels {
        for &c in level {
            let mut m = std::mem::take(&mut marks[c]);
            m.sort_unstable();
            m.dedup();
            let cell = &tree.cells[c];
            if !m.is_empty() {
                if let Some(e) = plan.refinement(cell.level + 1) {
                    for son in cell.sons() {
                        for &u in &m {
                            let f = father_id(DirId { refinement: e + 1, index: u })?;
                            marks[son].push(f.index);
                        }
                    }
                }
            }
            marks[c] = m;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_tree, build_tree_in, TreeConfig};
    use crate::C64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen())).collect()
    }

    #[test]
    fn strict_mac_examples() {
        assert!(strict_mac([2, 0, 0]));
        assert!(!strict_mac([1, 1, 1]));
        assert!(!strict_mac([0, 0, 0]));
        assert!((cube_distance(1.0, [2, 0, 0]) - 1.0).abs() < 1e-15);
        assert_eq!(cube_distance(1.0, [1, -1, 0]), 0.0);
        // diagonal (2, 2, 0): gap one side on two axes
        assert!((cube_distance(0.5, [2, 2, 0]) - 0.5 * 2f64.sqrt()).abs() < 1e-15);
        assert!(strict_mac([2, 2, 0]));
    }

    #[test]
    fn strict_mac_is_monotone() {
        let all: Vec<[i64; 3]> = (-4..=4)
            .flat_map(|x| (-4..=4).flat_map(move |y| (-4..=4).map(move |z| [x, y, z])))
            .collect();
        let center = |t: [i64; 3]| ((t[0] * t[0] + t[1] * t[1] + t[2] * t[2]) as f64).sqrt();
        for a in &all {
            if strict_mac(*a) {
                for b in &all {
                    if center(*b) > center(*a) {
                        assert!(strict_mac(*b), "{a:?} {b:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn directional_mac_examples() {
        assert!(directional_mac_value(1.0, 2.0, 8.0, 1.0));
        assert!(!directional_mac_value(1.0, 2.0, 3.0, 1.0));
        assert!(!directional_mac_value(1.0, 2.0, 0.0, 1.0));
        for kappa in [0.1, 1.0, 10.0] {
            let p = MacParams::new(1.0, kappa).unwrap();
            for tau in [[2, 0, 0], [3, 1, 0], [5, 5, 5], [9, 0, 1]] {
                let side = 0.25;
                let w = 3f64.sqrt() / 2.0 * side;
                let g: f64 = tau.iter().map(|&c: &i64| ((c.abs() - 1).max(0) as f64).powi(2)).sum();
                let dist = side * g.sqrt();
                let expected = (kappa * w * w).max(2.0 * w) / dist <= 1.0;
                assert_eq!(directional_mac(tau, side, &p), expected);
            }
        }
        assert!(MacParams::new(0.0, 1.0).is_err());
        assert!(MacParams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn frequency_plan_levels() {
        // kappa w >= 2 at levels 0 and 1 only: w1 = sqrt(3)/4
        let p = MacParams::new(1.0, 5.0).unwrap();
        let plan = FrequencyPlan::new(1.0, &p);
        assert_eq!(plan.deepest_hf, Some(1));
        assert_eq!(plan.refinement(0), Some(1));
        assert_eq!(plan.refinement(2), None);
        let lf = FrequencyPlan::new(1.0, &MacParams::new(1.0, 0.0).unwrap());
        assert_eq!(lf.deepest_hf, None);
        assert!(!lf.is_high_frequency(0));
    }

    fn corner_points() -> Vec<Point3> {
        vec![
            Point3::new(0.05, 0.05, 0.05),
            Point3::new(0.06, 0.06, 0.06),
            Point3::new(0.95, 0.95, 0.95),
            Point3::new(0.94, 0.94, 0.94),
        ]
    }

    #[test]
    fn separated_cells_give_one_m2l() {
        let pts = corner_points();
        let (tree, _) = build_tree(&pts, &[C64::new(1.0, 0.0); 4], &TreeConfig { ncrit: 1, hard_depth_cap: 20 }).unwrap();
        let p = MacParams::new(1.0, 0.0).unwrap();
        let plan = FrequencyPlan::new(tree.root.side(), &p);
        let ctx = DttContext { targets: &tree, sources: &tree, params: &p, plan: &plan };
        let a = tree.levels[2].iter().copied().find(|&c| tree.cells[c].coords == [0, 0, 0]).unwrap();
        let b = tree.levels[2].iter().copied().find(|&c| tree.cells[c].coords == [3, 3, 3]).unwrap();
        let mut rec = EventRecorder::new();
        dtt(&ctx, a, b, &mut rec).unwrap();
        assert_eq!(rec.events, vec![InteractionEvent { kind: EventKind::M2l, target: a, source: b, direction: None }]);
    }

    #[test]
    fn adjacent_leaves_give_one_p2p() {
        let pts = vec![Point3::new(0.1, 0.1, 0.1), Point3::new(0.9, 0.1, 0.1)];
        let (tree, _) = build_tree(&pts, &[C64::new(1.0, 0.0); 2], &TreeConfig { ncrit: 1, hard_depth_cap: 20 }).unwrap();
        let p = MacParams::new(1.0, 0.0).unwrap();
        let plan = FrequencyPlan::new(tree.root.side(), &p);
        let ctx = DttContext { targets: &tree, sources: &tree, params: &p, plan: &plan };
        let (a, b) = (tree.cells[0].first_son, tree.cells[0].first_son + 1);
        assert!(tree.cells[a].is_leaf() && tree.cells[b].is_leaf());
        let mut rec = EventRecorder::new();
        dtt(&ctx, a, b, &mut rec).unwrap();
        assert_eq!(rec.events.len(), 1);
        assert_eq!(rec.events[0].kind, EventKind::P2p);
    }

    pub(crate) fn coverage(ctx: &DttContext<'_>, events: &[InteractionEvent]) -> Vec<u8> {
        let nt = ctx.targets.cells[0].n_particles();
        let ns = ctx.sources.cells[0].n_particles();
        let mut seen = vec![0u8; nt * ns];
        for e in events {
            let tr = ctx.targets.cells[e.target].particle_range.clone();
            let sr = ctx.sources.cells[e.source].particle_range.clone();
            for i in tr {
                for j in sr.clone() {
                    seen[i * ns + j] += 1;
                }
            }
        }
        seen
    }

    #[test]
    fn events_partition_all_pairs() {
        for (kappa, ncrit) in [(0.0, 16), (60.0, 8)] {
            let pts = cloud(1000, 21);
            let (tree, _) = build_tree(&pts, &vec![C64::new(1.0, 0.0); 1000], &TreeConfig { ncrit, hard_depth_cap: 20 }).unwrap();
            let p = MacParams::new(1.0, kappa).unwrap();
            let plan = FrequencyPlan::new(tree.root.side(), &p);
            let ctx = DttContext { targets: &tree, sources: &tree, params: &p, plan: &plan };
            let mut rec = EventRecorder::new();
            dtt(&ctx, 0, 0, &mut rec).unwrap();
            assert!(rec.events.iter().any(|e| e.kind == EventKind::M2l));
            assert!(coverage(&ctx, &rec.events).iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn distinct_trees_partition_all_pairs() {
        let tp = cloud(300, 1);
        let sp: Vec<Point3> = cloud(500, 2).into_iter().map(|p| p * 0.5).collect();
        let all: Vec<Point3> = tp.iter().chain(&sp).copied().collect();
        let root = crate::geometry::BoundingBox::enclosing(&all).unwrap();
        let cfg = TreeConfig { ncrit: 10, hard_depth_cap: 20 };
        let (tt, _) = build_tree_in(root, &tp, &vec![C64::new(0.0, 0.0); 300], &cfg).unwrap();
        let (st, _) = build_tree_in(root, &sp, &vec![C64::new(1.0, 0.0); 500], &cfg).unwrap();
        let p = MacParams::new(1.0, 0.0).unwrap();
        let plan = FrequencyPlan::new(root.side(), &p);
        let ctx = DttContext { targets: &tt, sources: &st, params: &p, plan: &plan };
        let mut rec = EventRecorder::new();
        dtt(&ctx, 0, 0, &mut rec).unwrap();
        assert!(coverage(&ctx, &rec.events).iter().all(|&c| c == 1));
    }

    fn unit_box() -> crate::geometry::BoundingBox {
        crate::geometry::BoundingBox::new(Point3::new(0.5, 0.5, 0.5), 0.5).unwrap()
    }

    fn blank_run(tree: &ClusterTree, kappa: f64) -> (FrequencyPlan, SymbolCache, Marks, Marks) {
        let p = MacParams::new(1.0, kappa).unwrap();
        let plan = FrequencyPlan::new(tree.root.side(), &p);
        let dirs = DirectionTree::generate(plan.max_refinement());
        let kernel = HelmholtzKernel::new(kappa).unwrap();
        let mut ws = FourierWorkspace::new(3).unwrap();
        let mut cache = SymbolCache::new(3);
        let mut tm = vec![Vec::new(); tree.cells.len()];
        let mut sm = vec![Vec::new(); tree.cells.len()];
        let ctx = DttContext { targets: tree, sources: tree, params: &p, plan: &plan };
        let mut v = BlankVisitor {
            plan: &plan,
            directions: &dirs,
            kernel: &kernel,
            workspace: &mut ws,
            cache: &mut cache,
            target_marks: &mut tm,
            source_marks: &mut sm,
            precompute_time: Duration::ZERO,
        };
        blank_dtt(&ctx, &mut v).unwrap();
        (plan, cache, tm, sm)
    }

    #[test]
    fn low_frequency_blank_pass_has_no_marks() {
        let pts = cloud(2000, 3);
        let (tree, _) = build_tree(&pts, &vec![C64::new(1.0, 0.0); 2000], &TreeConfig { ncrit: 16, hard_depth_cap: 20 }).unwrap();
        let (_, cache, tm, sm) = blank_run(&tree, 0.0);
        assert!(tm.iter().chain(&sm).all(|m| m.is_empty()));
        for level in 0..=tree.depth() {
            assert!(cache.symbols_at(level) <= 16);
        }
        assert!(!cache.is_empty());
        // every traversal entry is present after the blank pass
        let p = MacParams::new(1.0, 0.0).unwrap();
        let plan = FrequencyPlan::new(tree.root.side(), &p);
        let ctx = DttContext { targets: &tree, sources: &tree, params: &p, plan: &plan };
        let mut rec = EventRecorder::with_cache(&cache);
        dtt(&ctx, 0, 0, &mut rec).unwrap();
    }

    #[test]
    fn aligned_cells_are_marked_along_the_axis() {
        // deepest high-frequency level is 2 and (3, 0, 0) is admissible there
        let kappa = 2.1 / (3f64.sqrt() / 8.0);
        let p = MacParams::new(1.0, kappa).unwrap();
        let pts = vec![Point3::new(0.1, 0.4, 0.4), Point3::new(0.9, 0.4, 0.4), Point3::new(0.11, 0.41, 0.41), Point3::new(0.91, 0.41, 0.41)];
        let (tree, _) = build_tree_in(unit_box(), &pts, &[C64::new(1.0, 0.0); 4], &TreeConfig { ncrit: 1, hard_depth_cap: 20 }).unwrap();
        let plan = FrequencyPlan::new(tree.root.side(), &p);
        assert_eq!(plan.deepest_hf, Some(2));
        let (_, _, tm, sm) = blank_run(&tree, kappa);
        let find = |c: [i64; 3]| tree.levels[2].iter().copied().find(|&i| tree.cells[i].coords == c).unwrap();
        let (a, b) = (find([0, 1, 1]), find([3, 1, 1]));
        // b - a = +3 e1: b's local and a's multipole carry +e1 (index 0), the reverse pair -e1 (index 1)
        assert!(tm[b].contains(&0) && sm[a].contains(&0));
        assert!(tm[a].contains(&1) && sm[b].contains(&1));
    }

    #[test]
    fn downward_pass_pushes_father_directions() {
        // HF down to level 3, one mark on a level-1 cell with descendants at levels 2 and 3
        let kappa = 2.5 / (3f64.sqrt() / 16.0);
        let p = MacParams::new(1.0, kappa).unwrap();
        let pts = vec![Point3::new(0.01, 0.01, 0.01), Point3::new(0.02, 0.02, 0.02), Point3::new(0.99, 0.99, 0.99)];
        let (tree, _) = build_tree_in(unit_box(), &pts, &[C64::new(1.0, 0.0); 3], &TreeConfig { ncrit: 1, hard_depth_cap: 20 }).unwrap();
        let plan = FrequencyPlan::new(tree.root.side(), &p);
        assert_eq!(plan.deepest_hf, Some(3));
        let mut marks: Marks = vec![Vec::new(); tree.cells.len()];
        blank_downward_pass(&tree, &plan, &mut marks).unwrap();
        assert!(marks.iter().all(|m| m.is_empty()));

        let c1 = tree.levels[1].iter().copied().find(|&c| tree.cells[c].coords == [0, 0, 0]).unwrap();
        // refinement 2 at level 1
        let u = 37;
        marks[c1] = vec![u, u];
        blank_downward_pass(&tree, &plan, &mut marks).unwrap();
        assert_eq!(marks[c1], vec![u]);
        let f1 = father_id(DirId { refinement: 2, index: u }).unwrap();
        let f2 = father_id(f1).unwrap();
        for s in tree.cells[c1].sons() {
            assert_eq!(marks[s], vec![f1.index]);
            for g in tree.cells[s].sons() {
                assert_eq!(marks[g], vec![f2.index]);
            }
        }
        assert!(tree.cells[c1].sons().any(|s| !tree.cells[s].is_leaf()));
    }
}
