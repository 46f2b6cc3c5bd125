//! The evaluation pipeline: trees, blank passes, upward pass, traversal and
//! downward pass.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::directions::{father_id, DirId, DirectionTree};
use crate::error::{FmmError, Result};
use crate::fourier::{FourierWorkspace, SymbolCache};
use crate::geometry::{BoundingBox, Point3};
use crate::interp::{l2p, p2m, InterpGrid, Modulation, Strategy, Translator};
use crate::kernel::{p2p_accumulate, HelmholtzKernel};
use crate::traversal::{
    blank_downward_pass, dtt, BlankVisitor, DttContext, DttVisitor, FrequencyPlan, MacParams, Marks,
    DEFAULT_HF_THRESHOLD,
};
use crate::tree::{build_tree_in, ClusterTree, ParticleSet, TreeConfig};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmmConfig {
    /// Interpolation nodes per axis.
    pub order: usize,
    pub ncrit: usize,
    pub eta: f64,
    pub kappa: f64,
    pub strategy: Strategy,
    pub hard_depth_cap: u32,
    pub hf_threshold: f64,
}

impl Default for FmmConfig {
    fn default() -> Self {
        Self {
            order: 5,
            ncrit: 64,
            eta: 1.0,
            kappa: 0.0,
            strategy: Strategy::StackedReal,
            hard_depth_cap: 30,
            hf_threshold: DEFAULT_HF_THRESHOLD,
        }
    }
}

impl FmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 2 {
            return Err(FmmError::InvalidParameter(format!("order must be at least 2, got {}", self.order)));
        }
        self.tree_config().validate()?;
        self.mac_params().validate()
    }

    pub fn tree_config(&self) -> TreeConfig {
        TreeConfig { ncrit: self.ncrit, hard_depth_cap: self.hard_depth_cap }
    }

    pub fn mac_params(&self) -> MacParams {
        MacParams { eta: self.eta, kappa: self.kappa, hf_threshold: self.hf_threshold }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub tree: f64,
    pub blank: f64,
    pub precompute: f64,
    pub upward: f64,
    pub m2l_p2p: f64,
    pub downward: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub cells: usize,
    pub leaves: usize,
    pub depth: u32,
    pub symbols: usize,
    /// Stored expansions, one per (cell, direction) slot.
    pub effective_expansions: usize,
    pub directional_expansions: usize,
    /// Directional expansions needed if every high-frequency cell held all directions.
    pub directional_capacity: usize,
    pub p2p_pairs: u64,
    pub p2p_events: u64,
    pub m2l_events: u64,
    pub translation_flops: u64,
}

#[derive(Debug, Clone)]
pub struct FmmOutput {
    /// Potentials in the caller's target order.
    pub potentials: Vec<C64>,
    pub counts: Counts,
    pub timings: Timings,
}

/// Slot table of one tree: cell `c` owns slots `offsets[c]..offsets[c + 1]`.
#[derive(Debug, Clone)]
struct Layout {
    offsets: Vec<usize>,
    // direction index at the cell's refinement, None for low frequency
    dirs: Vec<Option<u32>>,
}

impl Layout {
    fn new(tree: &ClusterTree, plan: &FrequencyPlan, marks: &Marks) -> Self {
        let mut offsets = Vec::with_capacity(tree.cells.len() + 1);
        let mut dirs = Vec::new();
        for (c, cell) in tree.cells.iter().enumerate() {
            offsets.push(dirs.len());
            if cell.level < 2 {
                continue;
            }
            if plan.is_high_frequency(cell.level) {
                dirs.extend(marks[c].iter().map(|&u| Some(u)));
            } else {
                dirs.push(None);
            }
        }
        offsets.push(dirs.len());
        Self { offsets, dirs }
    }

    fn len(&self) -> usize {
        self.dirs.len()
    }

    fn slots(&self, c: usize) -> std::ops::Range<usize> {
        self.offsets[c]..self.offsets[c + 1]
    }

    fn find(&self, c: usize, dir: Option<u32>) -> Result<usize> {
        let r = self.slots(c);
        let found = match dir {
            None => (r.len() == 1 && self.dirs[r.start].is_none()).then_some(r.start),
            Some(u) => self.dirs[r.clone()].binary_search(&Some(u)).ok().map(|k| r.start + k),
        };
        found.ok_or(FmmError::MissingExpansion { cell: c, direction: dir })
    }
}

struct Setup {
    grid: InterpGrid,
    translator: Translator,
    plan: FrequencyPlan,
    dirs: DirectionTree,
    kernel: HelmholtzKernel,
}

impl Setup {
    fn unit(&self, level: u32, dir: Option<u32>) -> Result<Option<Point3>> {
        match dir {
            None => Ok(None),
            Some(index) => {
                let refinement = self.plan.refinement(level).ok_or(FmmError::MissingDirection)?;
                Ok(Some(self.dirs.get(DirId { refinement, index })?.unit))
            }
        }
    }

    fn modulation(&self, level: u32, dir: Option<u32>) -> Result<Modulation> {
        Modulation::for_regime(dir.is_some(), self.kernel.kappa, self.unit(level, dir)?)
    }

    // slot of the son expansion feeding father direction `dir`
    fn son_dir(&self, son_level: u32, dir: Option<u32>) -> Result<Option<u32>> {
        match (self.plan.refinement(son_level), dir) {
            (Some(e), Some(u)) => Ok(Some(father_id(DirId { refinement: e + 1, index: u })?.index)),
            _ => Ok(None),
        }
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Evaluates `p(x) = sum_y G(x, y) q(y)` at every target.
///
/// Passing the same slice for targets and sources builds a single tree.
pub fn run_fmm(targets: &[Point3], sources: &[Point3], charges: &[C64], config: &FmmConfig) -> Result<FmmOutput> {
    let start = Instant::now();
    config.validate()?;
    if targets.is_empty() {
        return Err(FmmError::EmptyInput("no targets"));
    }
    if sources.is_empty() {
        return Err(FmmError::EmptyInput("no sources"));
    }
    if charges.len() != sources.len() {
        return Err(FmmError::LengthMismatch { expected: sources.len(), got: charges.len() });
    }
    let shared = std::ptr::eq(targets, sources);
    let mut timings = Timings::default();

    let t0 = Instant::now();
    let root = if shared {
        BoundingBox::enclosing(sources)?
    } else {
        BoundingBox::enclosing(targets.iter().chain(sources))?
    };
    let tcfg = config.tree_config();
    let (stree, sparts) = build_tree_in(root, sources, charges, &tcfg)?;
    let target_side = if shared {
        None
    } else {
        Some(build_tree_in(root, targets, &vec![C64::new(0.0, 0.0); targets.len()], &tcfg)?)
    };
    let (ttree, tparts): (&ClusterTree, &ParticleSet) = match &target_side {
        Some((t, p)) => (t, p),
        None => (&stree, &sparts),
    };
    timings.tree = secs(t0.elapsed());

    let t0 = Instant::now();
    let params = config.mac_params();
    let plan = FrequencyPlan::new(root.side(), &params);
    let grid = InterpGrid::new(config.order)?;
    let setup = Setup {
        translator: Translator::new(grid.clone(), config.kappa, config.strategy),
        grid,
        dirs: DirectionTree::generate(plan.max_refinement()),
        plan,
        kernel: HelmholtzKernel::for_domain(config.kappa, root.side())?,
    };
    let mut ws = FourierWorkspace::new(config.order)?;
    let mut cache = SymbolCache::new(config.order);
    let mut tmarks: Marks = vec![Vec::new(); ttree.cells.len()];
    let mut smarks: Marks = vec![Vec::new(); stree.cells.len()];
    let ctx = DttContext { targets: ttree, sources: &stree, params: &params, plan: &setup.plan };
    let mut blank = BlankVisitor {
        plan: &setup.plan,
        directions: &setup.dirs,
        kernel: &setup.kernel,
        workspace: &mut ws,
        cache: &mut cache,
        target_marks: &mut tmarks,
        source_marks: &mut smarks,
        precompute_time: Duration::ZERO,
    };
    dtt(&ctx, 0, 0, &mut blank)?;
    let precompute = blank.precompute_time;
    let (tlayout, slayout) = if shared {
        for (s, t) in smarks.iter_mut().zip(tmarks.iter_mut()) {
            s.append(t);
        }
        blank_downward_pass(&stree, &setup.plan, &mut smarks)?;
        let l = Layout::new(&stree, &setup.plan, &smarks);
        (l.clone(), l)
    } else {
        blank_downward_pass(&stree, &setup.plan, &mut smarks)?;
        blank_downward_pass(ttree, &setup.plan, &mut tmarks)?;
        (Layout::new(ttree, &setup.plan, &tmarks), Layout::new(&stree, &setup.plan, &smarks))
    };
    timings.precompute = secs(precompute);
    timings.blank = secs(t0.elapsed()) - timings.precompute;

    let n = setup.grid.len();
    let nf = ws.len();
    let mut counts = Counts {
        symbols: cache.len(),
        cells: stree.cells.len() + if shared { 0 } else { ttree.cells.len() },
        leaves: stree.n_leaves() + if shared { 0 } else { ttree.n_leaves() },
        depth: stree.depth().max(ttree.depth()),
        ..Counts::default()
    };
    for (tree, layout) in [(&stree, &slayout)].into_iter().chain((!shared).then_some((ttree, &tlayout))) {
        counts.effective_expansions += layout.len();
        counts.directional_expansions += layout.dirs.iter().filter(|d| d.is_some()).count();
        for cell in &tree.cells {
            if let (true, Some(e)) = (cell.level >= 2, setup.plan.refinement(cell.level)) {
                counts.directional_capacity += 6 * 4usize.pow(e);
            }
        }
    }

    // upward pass
    let t0 = Instant::now();
    let mut multipole = vec![C64::new(0.0, 0.0); slayout.len() * n];
    let mut multipole_f = vec![C64::new(0.0, 0.0); slayout.len() * nf];
    for level in stree.levels.iter().skip(2).rev() {
        for &c in level {
            let cell = &stree.cells[c];
            let slots = slayout.slots(c);
            if slots.is_empty() {
                continue;
            }
            let (head, tail) = multipole.split_at_mut(slots.end * n);
            let own = &mut head[slots.start * n..];
            if cell.is_leaf() {
                let r = cell.particle_range.clone();
                for (k, slot) in slots.clone().enumerate() {
                    let m = setup.modulation(cell.level, slayout.dirs[slot])?;
                    p2m(&setup.grid, &cell.frame, m, &sparts.positions[r.clone()], &sparts.charges[r.clone()], &mut own[k * n..(k + 1) * n])?;
                }
            } else {
                let fdirs: Vec<Option<Point3>> =
                    slots.clone().map(|s| setup.unit(cell.level, slayout.dirs[s])).collect::<Result<_>>()?;
                for son in cell.sons() {
                    let sc = &stree.cells[son];
                    let mut cols: Vec<&[C64]> = Vec::with_capacity(slots.len());
                    for s in slots.clone() {
                        let k = slayout.find(son, setup.son_dir(sc.level, slayout.dirs[s])?)?;
                        let off = (k - slots.end) * n;
                        cols.push(&tail[off..off + n]);
                    }
                    counts.translation_flops +=
                        setup.translator.m2m(cell.frame.beta, &fdirs, sc.octant() as usize, &cols, own)?;
                }
            }
            for (k, slot) in slots.enumerate() {
                ws.m2f(&own[k * n..(k + 1) * n], &mut multipole_f[slot * nf..(slot + 1) * nf])?;
            }
        }
    }
    timings.upward = secs(t0.elapsed());

    // far field in the Fourier domain, near field directly
    let t0 = Instant::now();
    let mut local_f = vec![C64::new(0.0, 0.0); tlayout.len() * nf];
    let mut pot = vec![C64::new(0.0, 0.0); tparts.len()];
    {
        let mut v = NumericVisitor {
            ttree,
            stree: &stree,
            tparts,
            sparts: &sparts,
            tlayout: &tlayout,
            slayout: &slayout,
            cache: &cache,
            kernel: &setup.kernel,
            nf,
            multipole_f: &multipole_f,
            local_f: &mut local_f,
            pot: &mut pot,
            counts: &mut counts,
        };
        dtt(&ctx, 0, 0, &mut v)?;
    }
    drop(multipole_f);
    timings.m2l_p2p = secs(t0.elapsed());

    // downward pass
    let t0 = Instant::now();
    let mut local = vec![C64::new(0.0, 0.0); tlayout.len() * n];
    let mut scratch = Vec::new();
    for level in ttree.levels.iter().skip(2) {
        for &c in level {
            let cell = &ttree.cells[c];
            let slots = tlayout.slots(c);
            if slots.is_empty() {
                continue;
            }
            let (head, tail) = local.split_at_mut(slots.end * n);
            let own = &mut head[slots.start * n..];
            for (k, slot) in slots.clone().enumerate() {
                ws.f2l(&local_f[slot * nf..(slot + 1) * nf], &mut own[k * n..(k + 1) * n])?;
            }
            if cell.is_leaf() {
                let r = cell.particle_range.clone();
                for (k, slot) in slots.clone().enumerate() {
                    let m = setup.modulation(cell.level, tlayout.dirs[slot])?;
                    l2p(&setup.grid, &cell.frame, m, &own[k * n..(k + 1) * n], &tparts.positions[r.clone()], &mut pot[r.clone()])?;
                }
            } else {
                let fdirs: Vec<Option<Point3>> =
                    slots.clone().map(|s| setup.unit(cell.level, tlayout.dirs[s])).collect::<Result<_>>()?;
                scratch.resize(slots.len() * n, C64::new(0.0, 0.0));
                for son in cell.sons() {
                    let sc = &ttree.cells[son];
                    counts.translation_flops +=
                        setup.translator.l2l(cell.frame.beta, &fdirs, own, sc.octant() as usize, &mut scratch)?;
                    for (j, s) in slots.clone().enumerate() {
                        let k = tlayout.find(son, setup.son_dir(sc.level, tlayout.dirs[s])?)?;
                        let off = (k - slots.end) * n;
                        for (d, v) in tail[off..off + n].iter_mut().zip(&scratch[j * n..(j + 1) * n]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
    timings.downward = secs(t0.elapsed());

    let potentials = crate::tree::accumulate_potentials(&pot, &tparts.original_index);
    timings.total = secs(start.elapsed());
    Ok(FmmOutput { potentials, counts, timings })
}

struct NumericVisitor<'a> {
    ttree: &'a ClusterTree,
    stree: &'a ClusterTree,
    tparts: &'a ParticleSet,
    sparts: &'a ParticleSet,
    tlayout: &'a Layout,
    slayout: &'a Layout,
    cache: &'a SymbolCache,
    kernel: &'a HelmholtzKernel,
    nf: usize,
    multipole_f: &'a [C64],
    local_f: &'a mut [C64],
    pot: &'a mut [C64],
    counts: &'a mut Counts,
}

impl DttVisitor for NumericVisitor<'_> {
    fn m2l(&mut self, target: usize, source: usize, level: u32, tau: [i64; 3]) -> Result<()> {
        let entry = self.cache.entry(level, tau)?;
        let dir = entry.direction.map(|d| d.index);
        let ts = self.tlayout.find(target, dir)?;
        let ss = self.slayout.find(source, dir)?;
        let nf = self.nf;
        self.cache.apply(
            &entry,
            &mut self.local_f[ts * nf..(ts + 1) * nf],
            &self.multipole_f[ss * nf..(ss + 1) * nf],
        )?;
        self.counts.m2l_events += 1;
        Ok(())
    }

    fn p2p(&mut self, target: usize, source: usize) -> Result<()> {
        let tr = self.ttree.cells[target].particle_range.clone();
        let sr = self.stree.cells[source].particle_range.clone();
        self.counts.p2p_pairs += (tr.len() * sr.len()) as u64;
        self.counts.p2p_events += 1;
        p2p_accumulate(
            self.kernel,
            &self.tparts.positions[tr.clone()],
            &self.sparts.positions[sr.clone()],
            &self.sparts.charges[sr],
            &mut self.pot[tr],
        );
        Ok(())
    }
}
