//! Particle distributions, experiment configuration and result records.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FmmError, Result};
use crate::fmm::{run_fmm, Counts, FmmConfig, FmmOutput, Timings};
use crate::geometry::{BoundingBox, Point3};
use crate::interp::Strategy;
use crate::kernel::{direct_sum, relative_errors, ErrorReport, HelmholtzKernel};
use crate::C64;

/// Leaf sizes tried by the automatic tuning.
pub const NCRIT_SWEEP: [usize; 4] = [32, 64, 128, 256];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionKind {
    UniformCube,
    Sphere,
    RefinedCube,
    Ellipse,
}

impl DistributionKind {
    pub const ALL: [DistributionKind; 4] =
        [DistributionKind::UniformCube, DistributionKind::Sphere, DistributionKind::RefinedCube, DistributionKind::Ellipse];

    pub fn as_str(&self) -> &'static str {
        match self {
            DistributionKind::UniformCube => "uniform-cube",
            DistributionKind::Sphere => "sphere",
            DistributionKind::RefinedCube => "refined-cube",
            DistributionKind::Ellipse => "ellipse",
        }
    }
}

impl FromStr for DistributionKind {
    type Err = FmmError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| FmmError::UnknownDistribution(s.to_string()))
    }
}

impl fmt::Display for DistributionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// 1 - (1 - |u|)^3 with the sign of u: dense near +-1
fn edge_warp(u: f64) -> f64 {
    u.signum() * (1.0 - (1.0 - u.abs()).powi(3))
}

/// Particles of a distribution, deterministic in `seed`.
///
/// * uniform cube: i.i.d. in `[0, 1]^3`;
/// * sphere: Fibonacci lattice on the unit sphere, randomly rotated about z;
/// * refined cube: faces of `[-1/2, 1/2]^3`, face coordinates warped toward the edges;
/// * ellipse: ellipsoid with semi-axes `(1, 1/4, 1/4)`, polar angle warped toward the poles.
pub fn generate_distribution(kind: DistributionKind, n: usize, seed: u64) -> Result<Vec<Point3>> {
    if n == 0 {
        return Err(FmmError::EmptyInput("distribution with zero particles"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = match kind {
        DistributionKind::UniformCube => (0..n).map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen())).collect(),
        DistributionKind::Sphere => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let phi0: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            (0..n)
                .map(|i| {
                    let z = 1.0 - (2 * i + 1) as f64 / n as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let (s, c) = (phi0 + i as f64 * golden).sin_cos();
                    Point3::new(r * c, r * s, z)
                })
                .collect()
        }
        DistributionKind::RefinedCube => (0..n)
            .map(|_| {
                let face = rng.gen_range(0..6usize);
                let u = edge_warp(rng.gen_range(-1.0..=1.0));
                let v = edge_warp(rng.gen_range(-1.0..=1.0));
                let mut c = [0.0; 3];
                let axis = face / 2;
                c[axis] = if face % 2 == 0 { 0.5 } else { -0.5 };
                c[(axis + 1) % 3] = 0.5 * u;
                c[(axis + 2) % 3] = 0.5 * v;
                Point3::from_array(c)
            })
            .collect(),
        DistributionKind::Ellipse => (0..n)
            .map(|_| {
                let ct = edge_warp(rng.gen_range(-1.0..=1.0));
                let st = (1.0 - ct * ct).max(0.0).sqrt();
                let (s, c) = rng.gen_range(0.0..std::f64::consts::TAU).sin_cos();
                Point3::new(ct, 0.25 * st * c, 0.25 * st * s)
            })
            .collect(),
    };
    Ok(pts)
}

/// Charges uniform in `[0, 1] + i [0, 1]`, on a stream independent of the positions.
pub fn generate_charges(n: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..n).map(|_| C64::new(rng.gen(), rng.gen())).collect()
}

/// Parses lines `x y z re_q im_q`; blank lines and `#` comments are skipped.
pub fn parse_particles(text: &str) -> Result<(Vec<Point3>, Vec<C64>)> {
    let mut pts = Vec::new();
    let mut q = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| FmmError::Parse(format!("line {}: {e}", lineno + 1)))?;
        if vals.len() != 5 {
            return Err(FmmError::Parse(format!("line {}: expected 5 values, found {}", lineno + 1, vals.len())));
        }
        pts.push(Point3::new(vals[0], vals[1], vals[2]));
        q.push(C64::new(vals[3], vals[4]));
    }
    if pts.is_empty() {
        return Err(FmmError::EmptyInput("particle file has no particles"));
    }
    Ok((pts, q))
}

pub fn read_particles(path: &Path) -> Result<(Vec<Point3>, Vec<C64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| FmmError::Io(format!("{}: {e}", path.display())))?;
    parse_particles(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoTag {
    #[serde(rename = "auto")]
    Auto,
}

/// Fixed leaf size or the automatic sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NcritSetting {
    Fixed(usize),
    Auto(AutoTag),
}

impl NcritSetting {
    pub const AUTO: NcritSetting = NcritSetting::Auto(AutoTag::Auto);
}

impl FromStr for NcritSetting {
    type Err = FmmError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Self::AUTO);
        }
        s.parse::<usize>()
            .map(NcritSetting::Fixed)
            .map_err(|_| FmmError::Parse(format!("ncrit must be an integer or `auto`, got `{s}`")))
    }
}

impl fmt::Display for NcritSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NcritSetting::Fixed(n) => write!(f, "{n}"),
            NcritSetting::Auto(_) => f.write_str("auto"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub distribution: DistributionKind,
    pub n: usize,
    pub kappa_d: f64,
    pub order: usize,
    pub ncrit: NcritSetting,
    pub eta: f64,
    pub strategy: Strategy,
    pub check_error: usize,
    pub seed: u64,
    /// Particle file used instead of the generator.
    pub input: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            distribution: DistributionKind::UniformCube,
            n: 10_000,
            kappa_d: 0.0,
            order: 5,
            ncrit: NcritSetting::Fixed(64),
            eta: 1.0,
            strategy: Strategy::StackedReal,
            check_error: 0,
            seed: 0,
            input: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON configuration; absent fields take their defaults.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FmmError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| FmmError::Parse(format!("{}: {e}", path.display())))
    }
}

/// Configuration echo with the values derived at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    #[serde(flatten)]
    pub requested: ExperimentConfig,
    pub particles: usize,
    pub kappa: f64,
    pub box_side: f64,
    pub ncrit_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ConfigEcho,
    pub timings: Timings,
    pub counts: Counts,
    pub errors: Option<ErrorReport>,
    /// SHA-256 of the potentials, real and imaginary parts as little-endian bytes.
    pub potentials_digest: String,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| FmmError::Io(e.to_string()))
    }
}

pub fn potentials_digest(potentials: &[C64]) -> String {
    let mut h = Sha256::new();
    for p in potentials {
        h.update(p.re.to_le_bytes());
        h.update(p.im.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Particles of an experiment: the input file if set, else the generator.
pub fn load_particles(cfg: &ExperimentConfig) -> Result<(Vec<Point3>, Vec<C64>)> {
    match &cfg.input {
        Some(path) => read_particles(path),
        None => {
            let pts = generate_distribution(cfg.distribution, cfg.n, cfg.seed)?;
            let q = generate_charges(cfg.n, cfg.seed);
            Ok((pts, q))
        }
    }
}

/// Runs one experiment; returns the record and the potentials in input order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunRecord, Vec<C64>)> {
    let (pts, q) = load_particles(cfg)?;
    let side = BoundingBox::enclosing(&pts)?.side();
    let kappa = cfg.kappa_d / side;
    let base = FmmConfig { order: cfg.order, eta: cfg.eta, kappa, strategy: cfg.strategy, ..FmmConfig::default() };
    let (ncrit, out) = match cfg.ncrit {
        NcritSetting::Fixed(ncrit) => (ncrit, run_fmm(&pts, &pts, &q, &FmmConfig { ncrit, ..base })?),
        NcritSetting::Auto(_) => {
            let mut best: Option<(usize, FmmOutput)> = None;
            for ncrit in NCRIT_SWEEP {
                let out = run_fmm(&pts, &pts, &q, &FmmConfig { ncrit, ..base })?;
                if best.as_ref().is_none_or(|(_, b)| out.timings.total < b.timings.total) {
                    best = Some((ncrit, out));
                }
            }
            best.expect("sweep is non-empty")
        }
    };
    let errors = if cfg.check_error > 0 {
        let m = cfg.check_error.min(pts.len());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2);
        let mut idx = sample(&mut rng, pts.len(), m).into_vec();
        idx.sort_unstable();
        let targets: Vec<Point3> = idx.iter().map(|&i| pts[i]).collect();
        let kernel = HelmholtzKernel::for_domain(kappa, side)?;
        let exact = direct_sum(&kernel, &targets, &pts, &q)?;
        let approx: Vec<C64> = idx.iter().map(|&i| out.potentials[i]).collect();
        Some(relative_errors(&exact, &approx)?)
    } else {
        None
    };
    let record = RunRecord {
        config: ConfigEcho { requested: cfg.clone(), particles: pts.len(), kappa, box_side: side, ncrit_used: ncrit },
        timings: out.timings,
        counts: out.counts,
        errors,
        potentials_digest: potentials_digest(&out.potentials),
    };
    Ok((record, out.potentials))
}

/// Flat CSV row of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub distribution: String,
    pub n: usize,
    pub kappa_d: f64,
    pub kappa: f64,
    pub order: usize,
    pub ncrit: usize,
    pub eta: f64,
    pub strategy: String,
    pub seed: u64,
    pub time_tree: f64,
    pub time_blank: f64,
    pub time_precompute: f64,
    pub time_upward: f64,
    pub time_m2l_p2p: f64,
    pub time_downward: f64,
    pub time_total: f64,
    pub cells: usize,
    pub leaves: usize,
    pub symbols: usize,
    pub effective_expansions: usize,
    pub p2p_pairs: u64,
    pub m2l_events: u64,
    pub error_linf: Option<f64>,
    pub error_l1: Option<f64>,
    pub error_l2: Option<f64>,
    pub potentials_digest: String,
}

impl From<&RunRecord> for CsvRow {
    fn from(r: &RunRecord) -> Self {
        let c = &r.config;
        Self {
            distribution: match &c.requested.input {
                Some(p) => p.display().to_string(),
                None => c.requested.distribution.to_string(),
            },
            n: c.particles,
            kappa_d: c.requested.kappa_d,
            kappa: c.kappa,
            order: c.requested.order,
            ncrit: c.ncrit_used,
            eta: c.requested.eta,
            strategy: c.requested.strategy.to_string(),
            seed: c.requested.seed,
            time_tree: r.timings.tree,
            time_blank: r.timings.blank,
            time_precompute: r.timings.precompute,
            time_upward: r.timings.upward,
            time_m2l_p2p: r.timings.m2l_p2p,
            time_downward: r.timings.downward,
            time_total: r.timings.total,
            cells: r.counts.cells,
            leaves: r.counts.leaves,
            symbols: r.counts.symbols,
            effective_expansions: r.counts.effective_expansions,
            p2p_pairs: r.counts.p2p_pairs,
            m2l_events: r.counts.m2l_events,
            error_linf: r.errors.map(|e| e.rel_linf),
            error_l1: r.errors.map(|e| e.rel_l1),
            error_l2: r.errors.map(|e| e.rel_l2),
            potentials_digest: r.potentials_digest.clone(),
        }
    }
}

/// Appends a row, writing the header first when the file is new or empty.
pub fn append_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let io = |e: std::io::Error| FmmError::Io(format!("{}: {e}", path.display()));
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(CsvRow::from(record)).map_err(|e| FmmError::Io(e.to_string()))?;
    w.flush().map_err(io)
}
