//! Direct position estimation.
//!
//! For a hypothesis `p = (x, y, z, b)` every BS contributes the energy of the
//! least-squares channel estimate in an `L`-tap window that starts at the
//! hypothesized delay `τ_m(p) = (‖p − p_m‖/c + b)·f_s`:
//!
//! ```text
//! O_m(τ) = ‖F_L(τ)^H D_m^H Y_m‖²,   O(p) = Σ_m O_m(τ_m(p))
//! ```
//!
//! With unit-modulus pilots and orthonormal DFT columns the normalizer
//! `(F^H D^H D F)^{-1}` is the identity, so `ĥ_l(τ) = g(τ + l)` where `g` is the
//! band-limited interpolation of `IDFT(conj(d) ⊙ Y)`. Delays wrap modulo `N`
//! because the CP makes the observed symbol a circular shift.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::ReceivedSignal;
use crate::config::DpeConfig;
use crate::dft;
use crate::error::{Error, Result};
use crate::scenario::{BaseStation, PositionHypothesis};
use crate::waveform::{ofdm_demodulate, OfdmConfig};
use crate::SPEED_OF_LIGHT;

/// Number of window taps needed to cover `max_excess_delay_s` plus `margin`.
pub fn taps_for_excess_delay(max_excess_delay_s: f64, sample_rate_hz: f64, margin: usize) -> usize {
    ((max_excess_delay_s * sample_rate_hz - 1e-9).ceil().max(0.0) as usize + margin).max(1)
}

/// `conj(d_k)·Y_k` on all subcarriers.
pub fn despread(y_freq: &[Complex64], pilots: &[Complex64]) -> Result<Vec<Complex64>> {
    if y_freq.len() != pilots.len() {
        return Err(Error::Dimension {
            expected: pilots.len(),
            got: y_freq.len(),
        });
    }
    Ok(y_freq.iter().zip(pilots).map(|(y, d)| d.conj() * y).collect())
}

/// Least-squares tap estimates `ĥ_l = g(τ + l)`, `l < n_taps`, by direct summation.
pub fn project_taps(z: &[Complex64], delay_samples: f64, n_taps: usize) -> Result<Vec<Complex64>> {
    let n = z.len();
    if n_taps == 0 || n_taps > n {
        return Err(Error::Dimension {
            expected: n,
            got: n_taps,
        });
    }
    if !delay_samples.is_finite() {
        return Err(Error::Domain(format!("delay {delay_samples} is not finite")));
    }
    // z_k e^{j2πkτ/N}, then one twiddle-table pass per tap
    let mut rotated = vec![Complex64::new(0.0, 0.0); n];
    let cycles = delay_samples.rem_euclid(n as f64) / n as f64;
    for (k, (r, zk)) in rotated.iter_mut().zip(z).enumerate() {
        let phase = 2.0 * std::f64::consts::PI * ((k as f64 * cycles).fract());
        *r = zk * Complex64::from_polar(1.0, phase);
    }
    let twiddle: Vec<Complex64> = (0..n)
        .map(|i| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * i as f64 / n as f64))
        .collect();
    let norm = 1.0 / (n as f64).sqrt();
    Ok((0..n_taps)
        .map(|l| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, r) in rotated.iter().enumerate() {
                acc += r * twiddle[(k * l) % n];
            }
            acc * norm
        })
        .collect())
}

/// Single-BS objective evaluated exactly.
pub fn objective_single_bs(z: &[Complex64], delay_samples: f64, n_taps: usize) -> Result<f64> {
    Ok(project_taps(z, delay_samples, n_taps)?.iter().map(|h| h.norm_sqr()).sum())
}

/// Single-BS objective tabulated on a `1/P`-sample lattice.
///
/// `|g|²` comes from one zero-padded IFFT of length `N·P`; the `L`-tap window
/// sums follow from a stride-`P` sliding sum, and off-lattice delays use cubic
/// Lagrange interpolation.
#[derive(Debug, Clone)]
pub struct LatticeObjective {
    n: usize,
    oversample: usize,
    n_taps: usize,
    window: Vec<f64>,
}

impl LatticeObjective {
    pub fn new(z: &[Complex64], n_taps: usize, oversample: usize) -> Result<Self> {
        let n = z.len();
        if n_taps == 0 || n_taps > n {
            return Err(Error::Dimension {
                expected: n,
                got: n_taps,
            });
        }
        if oversample == 0 {
            return Err(Error::config("dpe.oversample", "must be at least 1"));
        }
        let len = n * oversample;
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        buf[..n].copy_from_slice(z);
        dft::inverse(&mut buf);
        let inv_n = 1.0 / n as f64;
        let power: Vec<f64> = buf.iter().map(|v| v.norm_sqr() * inv_n).collect();

        let mut window = vec![0.0; len];
        for r in 0..oversample {
            let at = |j: usize| power[r + (j % n) * oversample];
            let mut acc: f64 = (0..n_taps).map(at).sum();
            for j in 0..n {
                window[r + j * oversample] = acc;
                acc += at(j + n_taps) - at(j);
            }
        }
        Ok(LatticeObjective {
            n,
            oversample,
            n_taps,
            window,
        })
    }

    pub fn n_taps(&self) -> usize {
        self.n_taps
    }

    /// `O(τ)` for a delay in samples.
    pub fn value(&self, delay_samples: f64) -> f64 {
        let len = self.window.len() as f64;
        let t = (delay_samples * self.oversample as f64).rem_euclid(len);
        let i = t.floor();
        let u = t - i;
        let i = i as isize;
        let w = |d: isize| self.window[(i + d).rem_euclid(self.window.len() as isize) as usize];
        let c_m1 = -u * (u - 1.0) * (u - 2.0) / 6.0;
        let c_0 = (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0;
        let c_1 = -(u + 1.0) * u * (u - 2.0) / 2.0;
        let c_2 = (u + 1.0) * u * (u - 1.0) / 6.0;
        c_m1 * w(-1) + c_0 * w(0) + c_1 * w(1) + c_2 * w(2)
    }

    /// Total received energy; the largest value `O` can take.
    pub fn energy(&self) -> f64 {
        // every lattice residue sums |g|² over the full circle when L = N
        (0..self.n).map(|j| self.window_at_tap(j)).sum::<f64>() / self.n_taps as f64
    }

    fn window_at_tap(&self, j: usize) -> f64 {
        self.window[j * self.oversample]
    }

    /// Largest value `value` takes between lattice points `j` and `j + 1`.
    fn interval_max(&self, j: usize) -> f64 {
        let len = self.window.len();
        let w = |d: usize| self.window[(j + len + d - 1) % len];
        let (a, b, c, d) = (w(0), w(1), w(2), w(3));
        // the interpolating cubic through u = -1, 0, 1, 2
        let c1 = -a / 3.0 - b / 2.0 + c - d / 6.0;
        let c2 = (a - 2.0 * b + c) / 2.0;
        let c3 = (-a + 3.0 * b - 3.0 * c + d) / 6.0;
        let p = |u: f64| b + u * (c1 + u * (c2 + u * c3));
        let mut best = b.max(c);
        let mut try_root = |u: f64| {
            if u > 0.0 && u < 1.0 {
                best = best.max(p(u));
            }
        };
        if c3.abs() > 1e-300 {
            let disc = c2 * c2 - 3.0 * c3 * c1;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                try_root((-c2 + sq) / (3.0 * c3));
                try_root((-c2 - sq) / (3.0 * c3));
            }
        } else if c2.abs() > 1e-300 {
            try_root(-c1 / (2.0 * c2));
        }
        best
    }

    /// Upper envelope of `O` over delays within `radius_samples` of each
    /// lattice point, exact with respect to the interpolation in `value`.
    pub fn pooled(&self, radius_samples: f64) -> PooledObjective {
        let len = self.window.len();
        let peaks: Vec<f64> = (0..len).map(|j| self.interval_max(j)).collect();
        // one extra lattice step covers the rounding in `PooledObjective::value`
        let r = ((radius_samples * self.oversample as f64).ceil() as usize + 1).min(len / 2);
        let mut table = vec![0.0; len];
        let mut deque: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
        // sliding maximum over the circular sequence, window [i − r, i + r]
        for e in 0..len + 2 * r {
            let v = peaks[(e + len - r) % len];
            while deque.back().is_some_and(|&b| peaks[(b + len - r) % len] <= v) {
                deque.pop_back();
            }
            deque.push_back(e);
            if e >= 2 * r {
                let start = e - 2 * r;
                while deque.front().is_some_and(|&f| f < start) {
                    deque.pop_front();
                }
                table[start] = peaks[(deque[0] + len - r) % len];
            }
        }
        PooledObjective {
            oversample: self.oversample,
            table,
        }
    }
}

/// Max-pooled lattice objective, an upper bound of `O` over a delay interval.
#[derive(Debug, Clone)]
pub struct PooledObjective {
    oversample: usize,
    table: Vec<f64>,
}

impl PooledObjective {
    pub fn value(&self, delay_samples: f64) -> f64 {
        let len = self.table.len() as f64;
        let i = (delay_samples * self.oversample as f64).round().rem_euclid(len) as usize;
        self.table[i % self.table.len()]
    }
}

/// One BS's contribution to the DPE objective.
#[derive(Debug, Clone)]
pub struct DpeLink {
    pub bs: BaseStation,
    pub objective: LatticeObjective,
    sample_rate_hz: f64,
}

impl DpeLink {
    /// Demodulate `signal`, strip the pilots and tabulate the objective.
    pub fn new(
        bs: BaseStation,
        pilots: &[Complex64],
        signal: &ReceivedSignal,
        cfg: &OfdmConfig,
        n_taps: usize,
        oversample: usize,
    ) -> Result<Self> {
        let y = ofdm_demodulate(&signal.samples, cfg)?;
        let z = despread(&y, pilots)?;
        Ok(DpeLink {
            bs,
            objective: LatticeObjective::new(&z, n_taps, oversample)?,
            sample_rate_hz: cfg.sample_rate_hz(),
        })
    }

    pub fn delay_samples(&self, p: &PositionHypothesis) -> f64 {
        p.delay_to(&self.bs) * self.sample_rate_hz
    }

    pub fn value(&self, p: &PositionHypothesis) -> f64 {
        self.objective.value(self.delay_samples(p))
    }
}

/// Sum of per-BS objectives at `p`.
pub fn objective(links: &[DpeLink], p: &PositionHypothesis) -> f64 {
    links.iter().map(|l| l.value(p)).sum()
}

/// Centered grid axis with an odd node count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub center: f64,
    pub step: f64,
    pub count: usize,
}

impl Axis {
    /// Fewest nodes at `center + i·step` that cover `±half_extent`; a single
    /// node if the axis is disabled (`half_extent` zero).
    pub fn new(center: f64, half_extent: f64, step: f64) -> Result<Self> {
        if !(half_extent >= 0.0 && half_extent.is_finite()) {
            return Err(Error::Domain(format!("bad axis extent {half_extent}")));
        }
        if half_extent == 0.0 {
            return Ok(Axis { center, step: 0.0, count: 1 });
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Domain(format!("bad axis step {step}")));
        }
        let half = (half_extent / step - 1e-9).ceil() as usize;
        Ok(Axis {
            center,
            step,
            count: 2 * half + 1,
        })
    }

    pub fn coord(&self, i: usize) -> f64 {
        let half = (self.count / 2) as f64;
        self.center + (i as f64 - half) * self.step
    }

    pub fn half_extent(&self) -> f64 {
        (self.count / 2) as f64 * self.step
    }

    pub fn is_edge(&self, i: usize) -> bool {
        self.count > 1 && (i == 0 || i + 1 == self.count)
    }
}

/// Rectangular `(x, y, z, b)` candidate grid.
///
/// Node `(ix, iy, iz, ib)` has linear index `((ib·nz + iz)·ny + iy)·nx + ix`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateGrid {
    pub x: Axis,
    pub y: Axis,
    pub z: Axis,
    /// Clock bias axis, seconds.
    pub bias: Axis,
}

impl CandidateGrid {
    pub fn len(&self) -> usize {
        self.x.count * self.y.count * self.z.count * self.bias.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self, idx: usize) -> [usize; 4] {
        let ix = idx % self.x.count;
        let r = idx / self.x.count;
        let iy = r % self.y.count;
        let r = r / self.y.count;
        let iz = r % self.z.count;
        let ib = r / self.z.count;
        [ix, iy, iz, ib]
    }

    pub fn node(&self, idx: usize) -> PositionHypothesis {
        let [ix, iy, iz, ib] = self.indices(idx);
        PositionHypothesis::new(self.x.coord(ix), self.y.coord(iy), self.z.coord(iz), self.bias.coord(ib))
    }

    pub fn center(&self) -> PositionHypothesis {
        PositionHypothesis::new(self.x.center, self.y.center, self.z.center, self.bias.center)
    }

    /// Largest change of any BS delay, in samples, between a node and the
    /// points of its cell.
    pub fn delay_radius_samples(&self, sample_rate_hz: f64) -> f64 {
        let spatial = (self.x.step.powi(2) + self.y.step.powi(2) + self.z.step.powi(2)).sqrt() / 2.0;
        (spatial / SPEED_OF_LIGHT + self.bias.step / 2.0) * sample_rate_hz
    }

    /// Partition of the cell around `at` into `k` sub-cells per searched
    /// axis, `k` being the smallest odd integer not below `shrink`.
    pub fn subdivided(&self, at: &PositionHypothesis, shrink: f64) -> Self {
        let k = (shrink.ceil() as usize) | 1;
        let r = |a: &Axis, c: f64| Axis {
            center: c,
            step: a.step / shrink,
            count: if a.count > 1 { k } else { 1 },
        };
        CandidateGrid {
            x: r(&self.x, at.x),
            y: r(&self.y, at.y),
            z: r(&self.z, at.z),
            bias: r(&self.bias, at.clock_bias_s),
        }
    }

    /// Same node counts, extents and steps divided by `shrink`, centered on `at`.
    pub fn refined(&self, at: &PositionHypothesis, shrink: f64) -> Self {
        let r = |a: &Axis, c: f64| Axis {
            center: c,
            step: a.step / shrink,
            count: a.count,
        };
        CandidateGrid {
            x: r(&self.x, at.x),
            y: r(&self.y, at.y),
            z: r(&self.z, at.z),
            bias: r(&self.bias, at.clock_bias_s),
        }
    }
}

/// Objective values over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlogram {
    pub grid: CandidateGrid,
    pub values: Vec<f64>,
}

impl Correlogram {
    /// Largest value; ties go to the lowest linear index.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &v) in self.values.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }

    pub fn best(&self) -> (PositionHypothesis, f64) {
        let (i, v) = self.argmax();
        (self.grid.node(i), v)
    }
}

fn evaluate_grid(grid: &CandidateGrid, f: impl Fn(&PositionHypothesis) -> f64 + Sync) -> Correlogram {
    let values = (0..grid.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| f(&grid.node(i)))
        .collect();
    Correlogram { grid: *grid, values }
}

/// Evaluate the summed objective on every node of `grid`.
pub fn build_correlogram(links: &[DpeLink], grid: &CandidateGrid) -> Result<Correlogram> {
    if links.is_empty() {
        return Err(Error::config("experiment.n_bs", "no links to evaluate"));
    }
    Ok(evaluate_grid(grid, |p| objective(links, p)))
}

/// Grid search settings in SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSettings {
    pub stages: usize,
    pub shrink: f64,
    pub half_extent_m: f64,
    pub resolution_m: f64,
    pub z_half_extent_m: f64,
    pub bias_half_range_s: f64,
    pub bias_step_s: f64,
    /// Branch and bound on the cell-wise upper envelope.
    pub coarse_pooling: bool,
}

impl SearchSettings {
    pub fn from_config(cfg: &DpeConfig) -> Result<Self> {
        if cfg.stages == 0 {
            return Err(Error::config("dpe.stages", "need at least one stage"));
        }
        if !(cfg.shrink > 1.0) {
            return Err(Error::config("dpe.shrink", "must exceed 1"));
        }
        if !(cfg.extent_m > 0.0) {
            return Err(Error::config("dpe.extent_m", "must be positive"));
        }
        if !(cfg.resolution_m > 0.0 && cfg.resolution_m <= cfg.extent_m) {
            return Err(Error::config("dpe.resolution_m", "must be positive and no larger than the extent"));
        }
        let bias_step_s = match cfg.bias_step_ns {
            Some(s) if s > 0.0 => s * 1e-9,
            Some(_) => return Err(Error::config("dpe.bias_step_ns", "must be positive")),
            None => cfg.resolution_m / SPEED_OF_LIGHT,
        };
        Ok(SearchSettings {
            stages: cfg.stages,
            shrink: cfg.shrink,
            half_extent_m: cfg.extent_m / 2.0,
            resolution_m: cfg.resolution_m,
            z_half_extent_m: if cfg.z_axis { cfg.z_extent_m / 2.0 } else { 0.0 },
            bias_half_range_s: if cfg.bias_axis { cfg.bias_range_ns * 1e-9 } else { 0.0 },
            bias_step_s,
            coarse_pooling: cfg.coarse_pooling,
        })
    }

    pub fn final_resolution_m(&self) -> f64 {
        self.resolution_m / self.shrink.powi(self.stages as i32 - 1)
    }

    /// First-stage grid around `center`.
    ///
    /// Short axes get a finer step so they hold at least `2·shrink + 1`
    /// nodes; otherwise a refined grid would not cover its parent cell.
    pub fn initial_grid(&self, center: &PositionHypothesis) -> Result<CandidateGrid> {
        let step = |half: f64, nominal: f64| {
            if half > 0.0 {
                nominal.min(half / self.shrink.ceil())
            } else {
                nominal
            }
        };
        Ok(CandidateGrid {
            x: Axis::new(center.x, self.half_extent_m, step(self.half_extent_m, self.resolution_m))?,
            y: Axis::new(center.y, self.half_extent_m, step(self.half_extent_m, self.resolution_m))?,
            z: Axis::new(center.z, self.z_half_extent_m, step(self.z_half_extent_m, self.resolution_m))?,
            bias: Axis::new(
                center.clock_bias_s,
                self.bias_half_range_s,
                step(self.bias_half_range_s, self.bias_step_s),
            )?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    /// Grid searched at this stage.
    pub grid: CandidateGrid,
    /// Node of `grid` on the way to the estimate.
    pub selected: PositionHypothesis,
    /// Stage score at `selected`: the pooled envelope on coarse stages,
    /// the objective itself otherwise.
    pub score: f64,
    /// Best exact objective found up to this stage, and where.
    pub best: PositionHypothesis,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpeEstimate {
    pub position: PositionHypothesis,
    pub objective: f64,
    pub stages: Vec<StageResult>,
    /// The first-stage selection sat on the edge of the bias range.
    pub bias_at_edge: bool,
    /// The first-stage selection sat on the edge of the spatial grid.
    pub position_at_edge: bool,
    /// Cells subdivided by the branch-and-bound search.
    pub expansions: usize,
    /// The search hit its expansion budget before closing the gap.
    pub truncated: bool,
}

/// Cap on subdivided cells per search.
pub const MAX_EXPANSIONS: usize = 20_000;

/// Coarse-to-fine grid search starting around `center`.
///
/// With `coarse_pooling` off, every stage is exact: take the argmax, then
/// re-center a grid with the same node counts and steps divided by `shrink`
/// on it (the argmax is a node of the new grid, so values never decrease).
///
/// With it on, the stages become the levels of a best-first branch and bound.
/// A cell's bound is the sum over links of the objective's maximum within
/// the delay interval the cell can produce; the cell with the highest bound
/// is split into sub-cells `shrink` times finer, and the search ends when a
/// last-level node scores at least every open bound. This finds the same
/// node an exhaustive final-resolution search would, up to lattice rounding
/// of the bound, which matters because windows longer than the channel give
/// near-equal aliases whose scores differ by parts in 1e5.
pub fn estimate_position(
    links: &[DpeLink],
    settings: &SearchSettings,
    center: &PositionHypothesis,
) -> Result<DpeEstimate> {
    if links.is_empty() {
        return Err(Error::config("experiment.n_bs", "no links to evaluate"));
    }
    let grid = settings.initial_grid(center)?;
    if settings.coarse_pooling && settings.stages > 1 {
        branch_and_bound(links, settings, grid)
    } else {
        stagewise(links, settings, grid)
    }
}

fn edge_flags(grid: &CandidateGrid, idx: usize) -> (bool, bool) {
    let [ix, iy, _, ib] = grid.indices(idx);
    (grid.bias.is_edge(ib), grid.x.is_edge(ix) || grid.y.is_edge(iy))
}

fn stagewise(links: &[DpeLink], settings: &SearchSettings, mut grid: CandidateGrid) -> Result<DpeEstimate> {
    let mut stages: Vec<StageResult> = Vec::with_capacity(settings.stages);
    let mut flags = (false, false);
    for s in 0..settings.stages {
        let c = build_correlogram(links, &grid)?;
        let (idx, value) = c.argmax();
        let selected = grid.node(idx);
        if s == 0 {
            flags = edge_flags(&grid, idx);
        }
        stages.push(StageResult {
            grid,
            selected,
            score: value,
            best: selected,
            value,
        });
        grid = grid.refined(&selected, settings.shrink);
    }
    let last = stages.last().expect("at least one stage");
    Ok(DpeEstimate {
        position: last.best,
        objective: last.value,
        bias_at_edge: flags.0,
        position_at_edge: flags.1,
        expansions: 0,
        truncated: false,
        stages,
    })
}

/// Open cell of the branch and bound, ordered by bound then creation.
#[derive(Debug, Clone, Copy)]
struct Open {
    bound: f64,
    id: usize,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // max-heap: higher bound first, then the earlier cell
        self.bound.total_cmp(&other.bound).then(other.id.cmp(&self.id))
    }
}

#[derive(Debug, Clone)]
struct CellRecord {
    /// Grid the cell is a node of, and its index there.
    grid: usize,
    index: usize,
    level: usize,
    bound: f64,
    parent: Option<usize>,
}

fn branch_and_bound(links: &[DpeLink], settings: &SearchSettings, root: CandidateGrid) -> Result<DpeEstimate> {
    let fs = links[0].sample_rate_hz;
    let last = settings.stages - 1;
    // grids[g]: the root, then one sub-grid per expanded cell
    let mut grids: Vec<CandidateGrid> = vec![root];
    let mut level_grid = root;
    let mut tables: Vec<Vec<PooledObjective>> = Vec::with_capacity(last);
    for _ in 0..last {
        let r = level_grid.delay_radius_samples(fs);
        tables.push(links.iter().map(|l| l.objective.pooled(r)).collect());
        level_grid = level_grid.subdivided(&level_grid.node(0), settings.shrink);
    }
    let bound = |level: usize, p: &PositionHypothesis| -> f64 {
        if level == last {
            objective(links, p)
        } else {
            links
                .iter()
                .zip(&tables[level])
                .map(|(l, o)| o.value(l.delay_samples(p)))
                .sum()
        }
    };

    let root_values = evaluate_grid(&root, |p| bound(0, p)).values;
    let mut cells: Vec<CellRecord> = Vec::with_capacity(root_values.len());
    let mut heap = std::collections::BinaryHeap::with_capacity(root_values.len());
    for (index, &b) in root_values.iter().enumerate() {
        cells.push(CellRecord { grid: 0, index, level: 0, bound: b, parent: None });
        heap.push(Open { bound: b, id: index });
    }

    let mut incumbent: (Option<usize>, f64) = (None, f64::NEG_INFINITY);
    let mut exact_at: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
    let mut expansions = 0;
    let mut truncated = false;
    let mut found: Option<usize> = None;
    while let Some(open) = heap.pop() {
        if open.bound < incumbent.1 {
            break;
        }
        let cell = cells[open.id].clone();
        if cell.level == last {
            // every open bound is at most this value
            found = Some(open.id);
            if open.bound > incumbent.1 {
                incumbent = (Some(open.id), open.bound);
            }
            break;
        }
        if expansions == MAX_EXPANSIONS {
            truncated = true;
            break;
        }
        expansions += 1;
        let p = grids[cell.grid].node(cell.index);
        let v = objective(links, &p);
        exact_at.insert(open.id, v);
        if v > incumbent.1 {
            incumbent = (Some(open.id), v);
        }
        let sub = grids[cell.grid].subdivided(&p, settings.shrink);
        grids.push(sub);
        let g = grids.len() - 1;
        for index in 0..sub.len() {
            let b = bound(cell.level + 1, &sub.node(index));
            if b >= incumbent.1 {
                cells.push(CellRecord { grid: g, index, level: cell.level + 1, bound: b, parent: Some(open.id) });
                heap.push(Open { bound: b, id: cells.len() - 1 });
            }
        }
    }
    let best_id = incumbent.0.ok_or_else(|| Error::Domain("search closed without evaluating a node".into()))?;
    let node_of = |id: usize| grids[cells[id].grid].node(cells[id].index);

    // path from the root grid to the reported node
    let tip = found.unwrap_or(best_id);
    let mut path = vec![tip];
    while let Some(parent) = cells[*path.last().unwrap()].parent {
        path.push(parent);
    }
    path.reverse();
    let mut stages = Vec::with_capacity(path.len());
    let mut best = (node_of(path[0]), f64::NEG_INFINITY);
    for (k, &id) in path.iter().enumerate() {
        let p = node_of(id);
        let v = exact_at.get(&id).copied().unwrap_or_else(|| objective(links, &p));
        if v > best.1 {
            best = (p, v);
        }
        if k + 1 == path.len() && incumbent.1 > best.1 {
            best = (node_of(best_id), incumbent.1);
        }
        stages.push(StageResult {
            grid: grids[cells[id].grid],
            selected: p,
            score: cells[id].bound,
            best: best.0,
            value: best.1,
        });
    }
    let (bias_at_edge, position_at_edge) = edge_flags(&root, cells[path[0]].index);
    Ok(DpeEstimate {
        position: best.0,
        objective: best.1,
        bias_at_edge,
        position_at_edge,
        expansions,
        truncated,
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{add_awgn, apply_channel, realize_channel, ChannelRealization, scale_delays, ProfileName, TdlProfile};
    use crate::waveform::{generate_prs, ofdm_modulate, partial_dft_basis, ComplexMatrix};

    fn cfg(n: usize) -> OfdmConfig {
        OfdmConfig::new(n, 30e3, n / 8, 3e9).unwrap()
    }

    fn received(bs_id: u32, c: &OfdmConfig, chan: &ChannelRealization, delay_s: f64) -> (Vec<Complex64>, ReceivedSignal) {
        let w = generate_prs(bs_id, c, 7).unwrap();
        let tx = ofdm_modulate(&w.pilots, c).unwrap();
        let rx = apply_channel(bs_id, &tx, chan, c, delay_s, 0.0).unwrap();
        (w.pilots, rx)
    }

    fn z_of(pilots: &[Complex64], rx: &ReceivedSignal, c: &OfdmConfig) -> Vec<Complex64> {
        despread(&ofdm_demodulate(&rx.samples, c).unwrap(), pilots).unwrap()
    }

    #[test]
    fn normalizer_is_identity() {
        let c = cfg(64);
        let w = generate_prs(3, &c, 1).unwrap();
        let f = partial_dft_basis(&c, 4).unwrap();
        let mut a = ComplexMatrix::zeros(64, 4);
        for k in 0..64 {
            for l in 0..4 {
                a.set(k, l, w.pilots[k] * f.get(k, l));
            }
        }
        let g = a.adjoint_mul(&a).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g.get(i, j) - Complex64::new(want, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn projection_matches_explicit_least_squares() {
        let c = cfg(64);
        let chan = ChannelRealization::fixed(
            vec![0.0, 1.3 / c.sample_rate_hz()],
            vec![Complex64::new(1.0, 0.2), Complex64::new(-0.3, 0.5)],
            true,
        )
        .unwrap();
        let (pilots, rx) = received(0, &c, &chan, 5.0 / c.sample_rate_hz());
        let y = ofdm_demodulate(&rx.samples, &c).unwrap();
        let z = despread(&y, &pilots).unwrap();
        let f = partial_dft_basis(&c, 6).unwrap();
        // F^H D^H Y with the basis shifted to start at 5 samples
        let tau = 5.0;
        let h = project_taps(&z, tau, 6).unwrap();
        for l in 0..6 {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..64 {
                let shift = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 * tau / 64.0);
                acc += (pilots[k] * f.get(k, l) * shift).conj() * y[k];
            }
            assert!((acc - h[l]).norm() < 1e-10);
        }
    }

    #[test]
    fn noiseless_energy_capture() {
        let c = cfg(256);
        let chan = ChannelRealization::fixed(
            vec![0.0, 2.0 / c.sample_rate_hz(), 5.0 / c.sample_rate_hz()],
            vec![Complex64::new(0.8, 0.0), Complex64::new(0.0, 0.5), Complex64::new(-0.3, 0.1)],
            true,
        )
        .unwrap();
        let (pilots, rx) = received(1, &c, &chan, 9.0 / c.sample_rate_hz());
        let z = z_of(&pilots, &rx, &c);
        let total = dft::energy(&rx.samples);
        let o = objective_single_bs(&z, 9.0, 6).unwrap();
        assert!((o - total).abs() < 1e-8 * total);
        assert!(objective_single_bs(&z, 9.0, 5).unwrap() < 0.99 * total);
    }

    #[test]
    fn additive_over_base_stations() {
        let c = cfg(256);
        let bss = [
            BaseStation { id: 0, position: [0.0, 0.0, 10.0] },
            BaseStation { id: 1, position: [300.0, 0.0, 10.0] },
            BaseStation { id: 2, position: [0.0, 300.0, 10.0] },
        ];
        let ue = PositionHypothesis::new(120.0, 80.0, 2.0, 0.0);
        let chan = ChannelRealization::fixed(vec![0.0], vec![Complex64::new(1.0, 0.0)], true).unwrap();
        let links: Vec<DpeLink> = bss
            .iter()
            .map(|bs| {
                let (p, rx) = received(bs.id, &c, &chan, ue.delay_to(bs));
                DpeLink::new(*bs, &p, &rx, &c, 3, 16).unwrap()
            })
            .collect();
        let h = PositionHypothesis::new(110.0, 95.0, 2.0, 3e-9);
        let sum: f64 = links.iter().map(|l| l.value(&h)).sum();
        assert!((objective(&links, &h) - sum).abs() < 1e-9 * sum.abs().max(1.0));
        let a = objective(&links[..1], &h) + objective(&links[1..], &h);
        assert!((objective(&links, &h) - a).abs() < 1e-9 * sum.abs().max(1.0));
    }

    #[test]
    fn lattice_agrees_with_exact() {
        let c = cfg(512);
        let profile = TdlProfile::builtin(ProfileName::C);
        let chan = realize_channel(&profile, 30e-9, 4).unwrap();
        let (pilots, rx) = received(2, &c, &chan, 20.3 / c.sample_rate_hz());
        let rx = add_awgn(&rx, 5.0, 8).unwrap();
        let z = z_of(&pilots, &rx, &c);
        let lat = LatticeObjective::new(&z, 12, 32).unwrap();
        let peak = (0..512).map(|t| lat.value(t as f64)).fold(0.0, f64::max);
        let mut t = 10.0;
        while t < 40.0 {
            let exact = objective_single_bs(&z, t, 12).unwrap();
            assert!((lat.value(t) - exact).abs() < 1e-3 * peak, "{t}: {} vs {exact}", lat.value(t));
            t += 0.173;
        }
        // on lattice points the table is exact
        let exact = objective_single_bs(&z, 21.0, 12).unwrap();
        assert!((lat.value(21.0) - exact).abs() < 1e-9 * peak);
        // wrap-around
        assert!((lat.value(21.0 - 512.0) - lat.value(21.0)).abs() < 1e-9 * peak);
        assert!((lat.energy() - dft::energy(&rx.samples)).abs() < 1e-8 * peak);
    }

    #[test]
    fn scale_invariant_argmax() {
        let c = cfg(256);
        let chan = ChannelRealization::fixed(vec![0.0], vec![Complex64::new(1.0, 0.0)], true).unwrap();
        let (pilots, rx) = received(0, &c, &chan, 30.4 / c.sample_rate_hz());
        let rx = add_awgn(&rx, 0.0, 3).unwrap();
        let z = z_of(&pilots, &rx, &c);
        let zs: Vec<_> = z.iter().map(|v| v * 3.7).collect();
        let a = LatticeObjective::new(&z, 4, 8).unwrap();
        let b = LatticeObjective::new(&zs, 4, 8).unwrap();
        let argmax = |o: &LatticeObjective| {
            (0..2048).map(|i| (i, o.value(i as f64 / 8.0))).fold((0, f64::MIN), |m, x| if x.1 > m.1 { x } else { m }).0
        };
        assert_eq!(argmax(&a), argmax(&b));
        assert!((b.value(30.0) - 3.7f64.powi(2) * a.value(30.0)).abs() < 1e-9 * b.value(30.0));
    }

    #[test]
    fn axis_and_grid_indexing() {
        let a = Axis::new(5.0, 50.0, 2.0).unwrap();
        assert_eq!(a.count, 51);
        assert_eq!(a.coord(25), 5.0);
        assert_eq!(a.coord(0), -45.0);
        assert!(a.is_edge(50) && !a.is_edge(3));
        let off = Axis::new(2.0, 0.0, 1.0).unwrap();
        assert_eq!((off.count, off.coord(0)), (1, 2.0));
        let g = CandidateGrid {
            x: Axis::new(0.0, 2.0, 1.0).unwrap(),
            y: Axis::new(0.0, 1.0, 1.0).unwrap(),
            z: off,
            bias: Axis::new(0.0, 2e-9, 1e-9).unwrap(),
        };
        assert_eq!(g.len(), 5 * 3 * 5);
        for i in 0..g.len() {
            let [ix, iy, iz, ib] = g.indices(i);
            assert_eq!(((ib * 1 + iz) * 3 + iy) * 5 + ix, i);
        }
        let center = g.len() / 2;
        assert_eq!(g.node(center), g.center());
        let r = g.refined(&g.node(7), 5.0);
        assert_eq!(r.len(), g.len());
        assert_eq!(r.node(r.len() / 2), g.node(7));
    }

    #[test]
    fn argmax_ties_go_low() {
        let g = CandidateGrid {
            x: Axis::new(0.0, 1.0, 1.0).unwrap(),
            y: Axis::new(0.0, 0.0, 1.0).unwrap(),
            z: Axis::new(0.0, 0.0, 1.0).unwrap(),
            bias: Axis::new(0.0, 0.0, 1.0).unwrap(),
        };
        let c = Correlogram { grid: g, values: vec![1.0, 3.0, 3.0] };
        assert_eq!(c.argmax(), (1, 3.0));
    }

    #[test]
    fn auto_window_length() {
        let fs = 122.88e6;
        assert_eq!(taps_for_excess_delay(0.0, fs, 2), 2);
        assert_eq!(taps_for_excess_delay(2.0 / fs, fs, 1), 3);
        let excess = |p: ProfileName| *scale_delays(&TdlProfile::builtin(p), 65e-9).unwrap().last().unwrap();
        assert_eq!(taps_for_excess_delay(excess(ProfileName::C), fs, 2), 72);
        assert_eq!(taps_for_excess_delay(excess(ProfileName::D), fs, 2), 103);
    }

    #[test]
    fn settings_validation() {
        let mut d = DpeConfig::default();
        let s = SearchSettings::from_config(&d).unwrap();
        assert!((s.final_resolution_m() - 0.016).abs() < 1e-12);
        let g = s.initial_grid(&PositionHypothesis::default()).unwrap();
        assert_eq!((g.x.count, g.y.count, g.z.count, g.bias.count), (51, 51, 1, 11));
        d.stages = 0;
        assert!(SearchSettings::from_config(&d).is_err());
        d.stages = 2;
        d.shrink = 1.0;
        assert!(SearchSettings::from_config(&d).is_err());
    }

    #[test]
    fn pooled_envelope_bounds_the_objective() {
        let c = cfg(256);
        let chan = realize_channel(&TdlProfile::builtin(ProfileName::C), 40e-9, 2).unwrap();
        let (pilots, rx) = received(0, &c, &chan.snapped(c.sample_rate_hz()), 12.0 / c.sample_rate_hz());
        let rx = add_awgn(&rx, 10.0, 1).unwrap();
        let lat = LatticeObjective::new(&z_of(&pilots, &rx, &c), 8, 16).unwrap();
        let r = 0.7;
        let pooled = lat.pooled(r);
        // the envelope holds for the interpolant itself, overshoot included
        let slack = 1e-9 * lat.energy();
        let mut t = 0.0;
        while t < 40.0 {
            let mut d = -r;
            while d <= r {
                assert!(pooled.value(t) >= lat.value(t + d) - slack, "{t} {d}");
                d += 0.01;
            }
            t += 0.37;
        }
        // zero radius still covers the nearest lattice point
        let tight = lat.pooled(0.0);
        assert!(tight.value(3.0) >= lat.value(3.0));
    }

    fn layout(n: usize, radius: f64) -> Vec<BaseStation> {
        (0..n)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64 + 0.3;
                BaseStation { id: i as u32, position: [radius * a.cos(), radius * a.sin(), 10.0] }
            })
            .collect()
    }

    fn links_for(
        bss: &[BaseStation],
        ue: &PositionHypothesis,
        c: &OfdmConfig,
        chan: &ChannelRealization,
        snr_db: f64,
        n_taps: usize,
    ) -> Vec<DpeLink> {
        bss.iter()
            .map(|bs| {
                let w = generate_prs(bs.id, c, 5).unwrap();
                let tx = ofdm_modulate(&w.pilots, c).unwrap();
                let rx = apply_channel(bs.id, &tx, chan, c, ue.range_to(bs) / SPEED_OF_LIGHT, ue.clock_bias_s).unwrap();
                let rx = add_awgn(&rx, snr_db, 100 + bs.id as u64).unwrap().whitened();
                DpeLink::new(*bs, &w.pilots, &rx, c, n_taps, 16).unwrap()
            })
            .collect()
    }

    fn settings(stages: usize, bias: bool, pooling: bool) -> SearchSettings {
        SearchSettings::from_config(&DpeConfig {
            stages,
            extent_m: 40.0,
            bias_axis: bias,
            bias_range_ns: 12.0,
            coarse_pooling: pooling,
            ..DpeConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn stage_values_never_decrease() {
        let c = cfg(1024);
        let bss = layout(5, 150.0);
        let ue = PositionHypothesis::new(12.0, -7.0, 2.0, 4e-9);
        let chan = realize_channel(&TdlProfile::builtin(ProfileName::C), 65e-9, 9).unwrap();
        let links = links_for(&bss, &ue, &c, &chan, 0.0, 12);
        for pooling in [false, true] {
            let est = estimate_position(&links, &settings(3, true, pooling), &PositionHypothesis::new(5.0, 3.0, 2.0, 0.0)).unwrap();
            for w in est.stages.windows(2) {
                assert!(w[1].value >= w[0].value - 1e-9);
            }
            if !pooling {
                // plain search: the value is the stage argmax itself
                for st in &est.stages {
                    assert_eq!(st.score, st.value);
                }
            }
            assert_eq!(est.objective, est.stages.last().unwrap().value);
            assert!((objective(&links, &est.position) - est.objective).abs() < 1e-9 * est.objective);
        }
    }

    #[test]
    fn branch_and_bound_matches_exhaustive_search() {
        let c = cfg(1024);
        let bss = layout(4, 140.0);
        let ue = PositionHypothesis::new(3.3, -2.1, 2.0, 1.5e-9);
        let chan = realize_channel(&TdlProfile::builtin(ProfileName::C), 65e-9, 4)
            .unwrap()
            .snapped(c.sample_rate_hz());
        let links = links_for(&bss, &ue, &c, &chan, 5.0, 14);
        let s = settings(2, true, true);
        let center = PositionHypothesis::new(0.0, 0.0, 2.0, 0.0);
        let est = estimate_position(&links, &s, &center).unwrap();
        assert!(!est.truncated);
        // every final-level node: the subdivision of every first-level node
        let root = s.initial_grid(&center).unwrap();
        let mut best = f64::NEG_INFINITY;
        for i in 0..root.len() {
            let sub = root.subdivided(&root.node(i), s.shrink);
            for j in 0..sub.len() {
                best = best.max(objective(&links, &sub.node(j)));
            }
        }
        assert!(est.objective >= best - 1e-9 * best.abs(), "{} < {}", est.objective, best);
        assert!(est.expansions < root.len());
    }

    fn single_tap() -> ChannelRealization {
        ChannelRealization::fixed(vec![0.0], vec![Complex64::new(1.0, 0.0)], true).unwrap()
    }

    #[test]
    fn common_bias_is_recovered() {
        let c = cfg(1024);
        let bss = layout(5, 150.0);
        let ue = PositionHypothesis::new(8.0, 5.0, 2.0, -6e-9);
        let links = links_for(&bss, &ue, &c, &single_tap(), 30.0, 1);
        let s = settings(3, true, true);
        let est = estimate_position(&links, &s, &PositionHypothesis::new(0.0, 0.0, 2.0, 0.0)).unwrap();
        let last = est.stages.last().unwrap().grid;
        assert!((est.position.clock_bias_s - ue.clock_bias_s).abs() <= last.bias.step, "{:?}", est.position);
        assert!(est.position.horizontal_error(&ue) < 2.0 * s.final_resolution_m());
        assert!(!est.bias_at_edge);
    }

    #[test]
    fn zero_bias_with_and_without_bias_axis() {
        let c = cfg(1024);
        let bss = layout(5, 150.0);
        let ue = PositionHypothesis::new(-11.0, 14.0, 2.0, 0.0);
        let links = links_for(&bss, &ue, &c, &single_tap(), f64::INFINITY, 1);
        let start = PositionHypothesis::new(0.0, 0.0, 2.0, 0.0);
        let off = estimate_position(&links, &settings(3, false, false), &start).unwrap();
        let on = estimate_position(&links, &settings(3, true, false), &start).unwrap();
        assert_eq!(on.position.clock_bias_s, 0.0);
        assert!(on.position.horizontal_error(&off.position) < 1e-9);
    }

    #[test]
    fn ignored_bias_error_is_geometrically_bounded() {
        // 3 BSs around the UE, 5 ns of clock bias, bias axis off
        let c = cfg(1024);
        let bss = layout(3, 120.0);
        let beta = 5e-9;
        let ue = PositionHypothesis::new(6.0, -4.0, 2.0, beta);
        let links = links_for(&bss, &ue, &c, &single_tap(), f64::INFINITY, 1);
        let s = settings(3, false, true);
        let est = estimate_position(&links, &s, &PositionHypothesis::new(0.0, 0.0, 2.0, 0.0)).unwrap();
        // brute force over a dense 2D grid with the bias fixed at zero
        let mut best = (f64::MIN, PositionHypothesis::default());
        for ix in -150..=150 {
            for iy in -150..=150 {
                let p = PositionHypothesis::new(ue.x + ix as f64 * 0.02, ue.y + iy as f64 * 0.02, 2.0, 0.0);
                let v = objective(&links, &p);
                if v > best.0 {
                    best = (v, p);
                }
            }
        }
        let bound = SPEED_OF_LIGHT * beta;
        assert!(best.1.horizontal_error(&ue) <= bound, "{:?}", best.1);
        assert!(est.position.horizontal_error(&ue) <= bound + s.final_resolution_m() * 2f64.sqrt());
        // some final node lies within half a cell of the peak, so the estimate
        // must score at least the worst point of that neighbourhood
        let h = s.final_resolution_m() / 2.0;
        let floor = [(-h, -h), (-h, h), (h, -h), (h, h), (-h, 0.0), (h, 0.0), (0.0, -h), (0.0, h)]
            .iter()
            .map(|&(dx, dy)| objective(&links, &PositionHypothesis::new(best.1.x + dx, best.1.y + dy, 2.0, 0.0)))
            .fold(f64::INFINITY, f64::min);
        assert!(est.objective >= floor, "{} < {}", est.objective, floor);
    }

    #[test]
    fn noiseless_los_within_quantization() {
        let c = OfdmConfig::default();
        let bss = layout(6, 180.0);
        let ue = PositionHypothesis::new(-23.4, 9.1, 2.0, 0.0);
        let links = links_for(&bss, &ue, &c, &single_tap(), f64::INFINITY, 1);
        let s = SearchSettings::from_config(&DpeConfig {
            resolution_m: 6.25,
            stages: 3,
            bias_axis: false,
            ..DpeConfig::default()
        })
        .unwrap();
        assert!((s.final_resolution_m() - 0.25).abs() < 1e-12);
        let est = estimate_position(&links, &s, &PositionHypothesis::new(0.0, 0.0, 2.0, 0.0)).unwrap();
        assert!(est.position.horizontal_error(&ue) <= 0.25 * 2f64.sqrt());
    }

    #[test]
    fn one_bs_gives_a_range_ridge() {
        let c = cfg(1024);
        let bs = BaseStation { id: 0, position: [0.0, 0.0, 10.0] };
        let ue = PositionHypothesis::new(100.0, 0.0, 2.0, 0.0);
        let links = links_for(&[bs], &ue, &c, &single_tap(), f64::INFINITY, 1);
        let peak = objective(&links, &ue);
        for deg in [30.0f64, 90.0, 200.0] {
            let a = deg.to_radians();
            let p = PositionHypothesis::new(100.0 * a.cos(), 100.0 * a.sin(), 2.0, 0.0);
            assert!((objective(&links, &p) - peak).abs() < 1e-6 * peak);
        }
        let off = PositionHypothesis::new(130.0, 0.0, 2.0, 0.0);
        assert!(objective(&links, &off) < 1e-3 * peak);
    }

    #[test]
    fn nlos_objective_peaks_at_the_first_arrival() {
        // strongest tap one sample after the first
        let c = OfdmConfig::default();
        let fs = c.sample_rate_hz();
        let chan = ChannelRealization::fixed(
            vec![0.0, 1.0 / fs, 2.0 / fs],
            vec![Complex64::new(0.7079, 0.0), Complex64::new(1.0, 0.0), Complex64::new(0.8913, 0.0)],
            false,
        )
        .unwrap();
        let (pilots, rx) = received(0, &c, &chan, 40.0 / fs);
        let lat = LatticeObjective::new(&z_of(&pilots, &rx, &c), 3, 32).unwrap();
        let (mut best_t, mut best) = (0.0, f64::MIN);
        let mut t = 30.0;
        while t < 50.0 {
            if lat.value(t) > best {
                best = lat.value(t);
                best_t = t;
            }
            t += 1.0 / 64.0;
        }
        assert!((40.0..=41.0).contains(&best_t), "{best_t}");
        assert!((best_t - 40.0).abs() < 1e-9);
    }

    #[test]
    fn multipath_energy_is_aggregated() {
        // sample-spaced NLoS channel whose strongest tap is not the first
        let c = cfg(1024);
        let fs = c.sample_rate_hz();
        let chan = realize_channel(&TdlProfile::builtin(ProfileName::C), 65e-9, 3).unwrap().snapped(fs);
        let n_taps = taps_for_excess_delay(chan.max_excess_delay_s(), fs, 2);
        let (pilots, rx) = received(4, &c, &chan, 50.0 / fs);
        let z = z_of(&pilots, &rx, &c);
        let total = dft::energy(&rx.samples);
        assert!((objective_single_bs(&z, 50.0, n_taps).unwrap() - total).abs() < 1e-8 * total);
        // a single-tap receiver keeps only the first path
        let share = chan.tap_gains[0].norm_sqr() / chan.total_power();
        let single = objective_single_bs(&z, 50.0, 1).unwrap() / total;
        assert!((single - share).abs() < 1e-8);
        assert!(share < 0.7);
    }

    #[test]
    fn three_tap_channel_lands_within_one_cell() {
        let c = OfdmConfig::default();
        let bss = layout(8, 200.0);
        let ue = PositionHypothesis::new(17.3, -21.9, 2.0, 0.0);
        let chan = ChannelRealization::fixed(
            vec![0.0, 1.0 / c.sample_rate_hz(), 2.0 / c.sample_rate_hz()],
            vec![Complex64::new(0.7079, 0.0), Complex64::new(1.0, 0.0), Complex64::new(0.8913, 0.0)],
            false,
        )
        .unwrap();
        let links = links_for(&bss, &ue, &c, &chan, f64::INFINITY, 3);
        let s = settings(3, false, true);
        let est = estimate_position(&links, &s, &PositionHypothesis::new(30.0, -10.0, 2.0, 0.0)).unwrap();
        let cell = s.final_resolution_m();
        assert!((est.position.x - ue.x).abs() <= cell && (est.position.y - ue.y).abs() <= cell, "{:?}", est.position);
    }
}
