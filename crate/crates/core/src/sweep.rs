//! Δ sweeps of the optimized Bell values, their CSV persistence, the
//! nonlocality / entanglement-depth classification and grid-local feature
//! detection.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bell::{CorrelationTensor, Objective};
use crate::error::SweepError;
use crate::itebd::{ground_state, ground_state_from, ConvergenceReport, EvolutionSchedule, Phase, XxzCoupling};
use crate::mps::{averaged_reduced_density_matrix, CheckpointMeta, MpsCheckpoint, MpsState};
use crate::optimize::{
    default_restarts, optimize_both_planes_tensor, OptimizerSettings, PlaneConstraint, PlaneResults, TIE_TOL,
};

/// Exact CSV header row.
pub const CSV_HEADER: &str = "delta,n,objective,value_xy,value_xz,value_full,value_best,winning_plane,\
violation_order_m,depth_lower_bound,converged,frame_angles";
/// Significant digits of every float written to CSV.
pub const SIGNIFICANT_DIGITS: usize = 12;
/// Largest block size a sweep accepts.
pub const MAX_SWEEP_N: usize = 12;
pub const DEFAULT_N_LIST: [usize; 4] = [2, 4, 6, 8];
pub const DEFAULT_BOND_DIM: usize = 16;
/// Three-point extrema must beat both neighbours by more than this, so that
/// optimizer noise on flat stretches is not reported as structure.
pub const FEATURE_TOL: f64 = 1e-9;

/// Δ from 0 to 3 in steps of 0.05, refined to steps of 0.01 on [0.8, 1.2].
pub fn default_delta_grid() -> Vec<f64> {
    let hundredths: BTreeSet<u32> = (0..=300).step_by(5).chain(80..=120).collect();
    hundredths.into_iter().map(|h| f64::from(h) / 100.0).collect()
}

/// `min, min + step, …` up to `max` (inclusive within a small slack).
pub fn uniform_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>, SweepError> {
    if !(min.is_finite() && max.is_finite() && step.is_finite()) || step <= 0.0 || max < min {
        return Err(SweepError::InvalidConfig(format!("cannot build a grid from {min} to {max} step {step}")));
    }
    let count = ((max - min) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| snap(min + k as f64 * step)).collect())
}

fn snap(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub delta_grid: Vec<f64>,
    pub n_list: Vec<usize>,
    pub objectives: Vec<Objective>,
    #[serde(rename = "D")]
    pub bond_dim: usize,
    /// `None` selects [`default_restarts`] per block size.
    pub restarts: Option<usize>,
    pub seed: u64,
    /// Start each ground state from the previous Δ in the same phase. Off by
    /// default: a warm-started state keeps the anisotropy of its
    /// predecessor long after the energy has converged, which breaks the
    /// xy/xz degeneracy at the isotropic point.
    pub warm_start: bool,
    pub output_path: Option<PathBuf>,
    pub schedule: EvolutionSchedule,
    /// Converged states are written here, one checkpoint per Δ.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            delta_grid: default_delta_grid(),
            n_list: DEFAULT_N_LIST.to_vec(),
            objectives: Objective::ALL.to_vec(),
            bond_dim: DEFAULT_BOND_DIM,
            restarts: None,
            seed: 0,
            warm_start: false,
            output_path: None,
            schedule: EvolutionSchedule::default(),
            checkpoint_dir: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |msg: String| Err(SweepError::InvalidConfig(msg));
        if self.delta_grid.is_empty() {
            return bad("delta_grid is empty".into());
        }
        if let Some(x) = self.delta_grid.iter().find(|x| !x.is_finite()) {
            return bad(format!("delta_grid contains {x}"));
        }
        if let Some(w) = self.delta_grid.windows(2).find(|w| w[1] <= w[0]) {
            return bad(format!("delta_grid is not strictly increasing at {} → {}", w[0], w[1]));
        }
        if self.n_list.is_empty() {
            return bad("n_list is empty".into());
        }
        if let Some(n) = self.n_list.iter().find(|&&n| !(2..=MAX_SWEEP_N).contains(&n)) {
            return bad(format!("block size {n} outside 2..={MAX_SWEEP_N}"));
        }
        if self.n_list.iter().collect::<BTreeSet<_>>().len() != self.n_list.len() {
            return bad("n_list has duplicates".into());
        }
        if self.objectives.is_empty() {
            return bad("objectives is empty".into());
        }
        if self.objectives.iter().enumerate().any(|(i, o)| self.objectives[..i].contains(o)) {
            return bad("objectives has duplicates".into());
        }
        if self.bond_dim == 0 {
            return bad("D must be at least 1".into());
        }
        if self.restarts == Some(0) {
            return bad("restarts must be at least 1".into());
        }
        EvolutionSchedule::new(self.schedule.stages().to_vec())
            .map_err(|e| SweepError::InvalidConfig(format!("schedule: {e}")))?;
        Ok(())
    }

    /// Odd block sizes: accepted, but outside the even sizes the analysis is
    /// built around.
    pub fn nonstandard_n(&self) -> Vec<usize> {
        self.n_list.iter().copied().filter(|n| n % 2 == 1).collect()
    }

    pub fn restarts_for(&self, n: usize) -> usize {
        self.restarts.unwrap_or_else(|| default_restarts(n))
    }

    /// Comment lines (without the leading `#`) describing the resolved
    /// configuration. Output locations are left out so that identical
    /// configurations produce identical files wherever they are written.
    pub fn metadata_lines(&self) -> Vec<String> {
        let list = |xs: Vec<String>| format!("[{}]", xs.join(", "));
        let settings = OptimizerSettings::default();
        let schedule = self
            .schedule
            .stages()
            .iter()
            .map(|s| format!("tau={} max_steps={} energy_tol={}", s.tau, s.max_steps, s.energy_tolerance))
            .collect::<Vec<_>>()
            .join("; ");
        vec![
            format!("xxzbell-core {}", env!("CARGO_PKG_VERSION")),
            "rdm_offset = average".into(),
            format!("delta_grid = {}", list(self.delta_grid.iter().map(|&d| format_sig(d)).collect())),
            format!("n_list = {}", list(self.n_list.iter().map(|n| n.to_string()).collect())),
            format!("objectives = {}", list(self.objectives.iter().map(|o| o.to_string()).collect())),
            format!("D = {}", self.bond_dim),
            match self.restarts {
                Some(r) => format!("restarts = {r}"),
                None => format!(
                    "restarts = {}",
                    list(self.n_list.iter().map(|&n| format!("{n}:{}", default_restarts(n))).collect())
                ),
            },
            format!("seed = {}", self.seed),
            format!("warm_start = {}", self.warm_start),
            format!("schedule = {schedule}"),
            format!(
                "optimizer = max_iterations={} diameter_tol={} initial_step={} polish_sweeps={} newton_iterations={}",
                settings.max_iterations,
                settings.diameter_tol,
                settings.initial_step,
                settings.polish_sweeps,
                settings.newton_iterations
            ),
        ]
    }
}

/// One optimized (Δ, n, objective) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub delta: f64,
    pub n: usize,
    pub objective: Objective,
    pub value_xy: f64,
    pub value_xz: f64,
    /// Full-sphere optimum, present for `n ≤ 4`.
    pub value_full: Option<f64>,
    pub value_best: f64,
    /// The better of the two planes (ties go to `xy`).
    pub winning_plane: PlaneConstraint,
    pub violation_order_m: usize,
    pub depth_lower_bound: usize,
    /// Ground state and every optimizer run converged.
    pub converged: bool,
    /// `(θ, φ)` of the frame attaining `value_best`, ordered
    /// `a_1, a'_1, a_2, a'_2, …`; empty for failed points.
    pub frame_angles: Vec<(f64, f64)>,
}

impl SweepRecord {
    /// Record from optimizer results. Floats are rounded to the CSV
    /// precision so that a record equals its CSV round trip.
    pub fn from_results(delta: f64, n: usize, objective: Objective, results: &PlaneResults, converged: bool) -> Self {
        let value_xy = round_sig(results.xy.value);
        let value_xz = round_sig(results.xz.value);
        let value_full = results.full.as_ref().map(|f| round_sig(f.value));
        let plane = results.best();
        let best = match &results.full {
            Some(full) if full.value > plane.value + TIE_TOL => full,
            _ => plane,
        };
        let value_best = value_full.map_or(value_xy.max(value_xz), |f| f.max(value_xy).max(value_xz));
        Self {
            delta,
            n,
            objective,
            value_xy,
            value_xz,
            value_full,
            value_best,
            winning_plane: plane.constraint,
            violation_order_m: violation_order(objective, n, value_best),
            depth_lower_bound: depth_lower_bound(objective, n, value_best),
            converged: converged && results.converged(),
            frame_angles: best.frame.angles().into_iter().map(|(t, p)| (round_sig(t), round_sig(p))).collect(),
        }
    }

    /// Placeholder row for a point whose ground state or optimization failed.
    pub fn failed(delta: f64, n: usize, objective: Objective) -> Self {
        Self {
            delta,
            n,
            objective,
            value_xy: f64::NAN,
            value_xz: f64::NAN,
            value_full: (n <= crate::optimize::FULL_CONSTRAINT_MAX_N).then_some(f64::NAN),
            value_best: f64::NAN,
            winning_plane: PlaneConstraint::Xy,
            violation_order_m: 0,
            depth_lower_bound: 1,
            converged: false,
            frame_angles: Vec::new(),
        }
    }
}

/// Local-realistic bound `2^{(m−1)/2}` of the m-order inequalities.
pub fn threshold(m: usize) -> f64 {
    assert!(m >= 1, "inequality order starts at 1");
    let k = (m - 1) / 2;
    let base = 2f64.powi(k as i32);
    if (m - 1).is_multiple_of(2) {
        base
    } else {
        base * std::f64::consts::SQRT_2
    }
}

/// Inequality orders probed by an objective: odd `m` for Mermin, even `m`
/// for Svetlichny, at most `n − 1`.
pub fn inequality_orders(objective: Objective, n: usize) -> impl Iterator<Item = usize> {
    let start = match objective {
        Objective::Mermin => 1,
        Objective::Svetlichny => 2,
    };
    (start..n).step_by(2)
}

/// Largest order `m` of the objective's parity with `value > 2^{(m−1)/2}`,
/// or 0.
pub fn violation_order(objective: Objective, n: usize, value: f64) -> usize {
    inequality_orders(objective, n).filter(|&m| value > threshold(m)).max().unwrap_or(0)
}

/// Lower bound on the entanglement depth. A state whose entanglement
/// involves at most `m` parties has `M_n ≤ 2^{(m−1)/2}`; since `M'_n` is
/// `M_n` evaluated at the swapped frame, it also obeys
/// `M_{n+} = (M_n + M'_n)/√2 ≤ 2^{m/2}`. The bound is one more than the
/// largest `m` whose inequality is violated, capped at `n`.
pub fn depth_lower_bound(objective: Objective, n: usize, value: f64) -> usize {
    let bound = |m: usize| match objective {
        Objective::Mermin => threshold(m),
        Objective::Svetlichny => threshold(m + 1),
    };
    (1..=n).filter(|&m| value > bound(m)).max().map_or(1, |m| (m + 1).min(n))
}

/// Labels certified by a record's value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HierarchyLabels {
    pub m: usize,
    /// `"(n,n−m)-type nonlocality"` or `"no violation"`.
    pub nonlocality: String,
    pub depth_lower_bound: usize,
    /// `"entanglement depth ≥ k"`.
    pub depth: String,
}

/// Recomputes the hierarchy labels from `value_best`.
pub fn classify_hierarchy(record: &SweepRecord) -> HierarchyLabels {
    let m = violation_order(record.objective, record.n, record.value_best);
    let depth = depth_lower_bound(record.objective, record.n, record.value_best);
    HierarchyLabels {
        m,
        nonlocality: if m == 0 {
            "no violation".into()
        } else {
            format!("({},{})-type nonlocality", record.n, record.n - m)
        },
        depth_lower_bound: depth,
        depth: format!("entanglement depth ≥ {depth}"),
    }
}

/// Progress of a running sweep, reported once per grid point.
#[derive(Debug)]
pub struct PointProgress<'a> {
    pub index: usize,
    pub total: usize,
    pub delta: f64,
    /// `None` if the ground-state search failed outright.
    pub report: Option<&'a ConvergenceReport>,
    pub records: &'a [SweepRecord],
}

pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepRecord>, SweepError> {
    run_sweep_with_progress(config, |_| {})
}

/// Runs the sweep in grid order. With `warm_start`, each ground state starts
/// from the previous one when both lie in the same phase. Failures at a point
/// become `converged = false` rows; only configuration and checkpoint I/O
/// errors abort.
pub fn run_sweep_with_progress(
    config: &SweepConfig,
    mut progress: impl FnMut(&PointProgress<'_>),
) -> Result<Vec<SweepRecord>, SweepError> {
    config.validate()?;
    if let Some(dir) = &config.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let settings = OptimizerSettings::default();
    let total = config.delta_grid.len();
    let mut records = Vec::with_capacity(total * config.n_list.len() * config.objectives.len());
    let mut previous: Option<(Phase, MpsState)> = None;
    for (index, &delta) in config.delta_grid.iter().enumerate() {
        let coupling = XxzCoupling::new(delta);
        let phase = coupling.phase();
        let warm = previous.take().filter(|(p, _)| config.warm_start && *p == phase).map(|(_, s)| s);
        let outcome = match warm {
            Some(state) => ground_state_from(state, coupling, config.bond_dim, &config.schedule, config.seed),
            None => ground_state(coupling, config.bond_dim, &config.schedule, config.seed),
        };
        let start = records.len();
        let report = match outcome {
            Ok((state, report)) => {
                if let Some(dir) = &config.checkpoint_dir {
                    let meta = CheckpointMeta {
                        delta,
                        seed: config.seed,
                        converged: report.converged,
                        final_energy_per_site: report.final_energy_per_site,
                        truncation_error_max: report.truncation_error_max,
                        steps_taken: report.steps_taken.iter().map(|&s| s as u64).collect(),
                    };
                    MpsCheckpoint { state: state.clone(), meta }.save(dir.join(checkpoint_name(delta)))?;
                }
                for &n in &config.n_list {
                    let tensor = averaged_reduced_density_matrix(&state, n)
                        .map_err(SweepError::from)
                        .and_then(|rho| Ok(CorrelationTensor::from_rdm(&rho)?));
                    for &objective in &config.objectives {
                        let record = tensor
                            .as_ref()
                            .ok()
                            .and_then(|t| {
                                optimize_both_planes_tensor(
                                    objective,
                                    t,
                                    config.restarts_for(n),
                                    config.seed,
                                    &settings,
                                )
                                .ok()
                            })
                            .map_or_else(
                                || SweepRecord::failed(delta, n, objective),
                                |res| SweepRecord::from_results(delta, n, objective, &res, report.converged),
                            );
                        records.push(record);
                    }
                }
                previous = Some((phase, state));
                Some(report)
            }
            Err(_) => {
                for &n in &config.n_list {
                    for &objective in &config.objectives {
                        records.push(SweepRecord::failed(delta, n, objective));
                    }
                }
                None
            }
        };
        progress(&PointProgress { index, total, delta, report: report.as_ref(), records: &records[start..] });
    }
    Ok(records)
}

/// File name of the checkpoint written for `delta`.
pub fn checkpoint_name(delta: f64) -> String {
    format!("delta_{delta:.6}.mps")
}

/// A three-point extremum of `value_best` at `delta`, bracketed by its grid
/// neighbours.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalExtremum {
    pub delta: f64,
    pub delta_low: f64,
    pub delta_high: f64,
    pub n: usize,
    pub objective: Objective,
    pub value: f64,
}

/// A change of `winning_plane` between adjacent grid points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaneCrossing {
    pub delta_low: f64,
    pub delta_high: f64,
    pub n: usize,
    pub objective: Objective,
    pub from: PlaneConstraint,
    pub to: PlaneConstraint,
}

/// A flip of the order-`m` threshold comparison between adjacent grid
/// points; `rising` when the violation appears with increasing Δ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationOnset {
    pub delta_low: f64,
    pub delta_high: f64,
    pub n: usize,
    pub objective: Objective,
    pub m: usize,
    pub rising: bool,
}

pub trait Bracketed {
    fn bracket(&self) -> (f64, f64);

    fn brackets(&self, delta: f64) -> bool {
        let (lo, hi) = self.bracket();
        lo <= delta && delta <= hi
    }

    fn width(&self) -> f64 {
        let (lo, hi) = self.bracket();
        hi - lo
    }
}

impl Bracketed for LocalExtremum {
    fn bracket(&self) -> (f64, f64) {
        (self.delta_low, self.delta_high)
    }
}

impl Bracketed for PlaneCrossing {
    fn bracket(&self) -> (f64, f64) {
        (self.delta_low, self.delta_high)
    }
}

impl Bracketed for ViolationOnset {
    fn bracket(&self) -> (f64, f64) {
        (self.delta_low, self.delta_high)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FeatureReport {
    pub local_minima: Vec<LocalExtremum>,
    pub local_maxima: Vec<LocalExtremum>,
    pub plane_crossings: Vec<PlaneCrossing>,
    pub violation_onsets: Vec<ViolationOnset>,
}

impl FeatureReport {
    pub fn minima(&self, n: usize, objective: Objective) -> impl Iterator<Item = &LocalExtremum> {
        self.local_minima.iter().filter(move |f| f.n == n && f.objective == objective)
    }

    pub fn maxima(&self, n: usize, objective: Objective) -> impl Iterator<Item = &LocalExtremum> {
        self.local_maxima.iter().filter(move |f| f.n == n && f.objective == objective)
    }

    pub fn crossings(&self, n: usize, objective: Objective) -> impl Iterator<Item = &PlaneCrossing> {
        self.plane_crossings.iter().filter(move |f| f.n == n && f.objective == objective)
    }

    pub fn onsets(&self, n: usize, objective: Objective) -> impl Iterator<Item = &ViolationOnset> {
        self.violation_onsets.iter().filter(move |f| f.n == n && f.objective == objective)
    }
}

/// Grid-local features of every `(n, objective)` curve in `records`.
pub fn detect_features(records: &[SweepRecord]) -> Result<FeatureReport, SweepError> {
    let mut keys: Vec<(usize, Objective)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.n, r.objective)) {
            keys.push((r.n, r.objective));
        }
    }
    if keys.is_empty() {
        return Err(SweepError::InsufficientGrid(0));
    }
    let mut report = FeatureReport::default();
    for (n, objective) in keys {
        let mut curve: Vec<&SweepRecord> = records.iter().filter(|r| r.n == n && r.objective == objective).collect();
        curve.sort_by(|a, b| a.delta.total_cmp(&b.delta));
        if curve.len() < 3 {
            return Err(SweepError::InsufficientGrid(curve.len()));
        }
        if let Some(w) = curve.windows(2).find(|w| w[1].delta <= w[0].delta) {
            return Err(SweepError::InvalidRecords(format!(
                "n={n} {objective}: Δ={} appears more than once",
                w[0].delta
            )));
        }
        for w in curve.windows(3) {
            let (l, c, r) = (w[0], w[1], w[2]);
            if !(l.value_best.is_finite() && c.value_best.is_finite() && r.value_best.is_finite()) {
                continue;
            }
            let feature = LocalExtremum {
                delta: c.delta,
                delta_low: l.delta,
                delta_high: r.delta,
                n,
                objective,
                value: c.value_best,
            };
            if c.value_best + FEATURE_TOL < l.value_best && c.value_best + FEATURE_TOL < r.value_best {
                report.local_minima.push(feature);
            } else if c.value_best - FEATURE_TOL > l.value_best && c.value_best - FEATURE_TOL > r.value_best {
                report.local_maxima.push(feature);
            }
        }
        for w in curve.windows(2) {
            let (l, r) = (w[0], w[1]);
            if !(l.value_best.is_finite() && r.value_best.is_finite()) {
                continue;
            }
            if l.winning_plane != r.winning_plane {
                report.plane_crossings.push(PlaneCrossing {
                    delta_low: l.delta,
                    delta_high: r.delta,
                    n,
                    objective,
                    from: l.winning_plane,
                    to: r.winning_plane,
                });
            }
            for m in inequality_orders(objective, n) {
                let (before, after) = (l.value_best > threshold(m), r.value_best > threshold(m));
                if before != after {
                    report.violation_onsets.push(ViolationOnset {
                        delta_low: l.delta,
                        delta_high: r.delta,
                        n,
                        objective,
                        m,
                        rising: after,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// `x` with [`SIGNIFICANT_DIGITS`] significant digits, in plain decimal
/// notation for moderate exponents and scientific notation otherwise.
pub fn format_sig(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if (-5..SIGNIFICANT_DIGITS as i32).contains(&exp) {
        if exp >= 0 {
            let split = exp as usize + 1;
            out.push_str(&digits[..split]);
            out.push('.');
            out.push_str(&digits[split..]);
        } else {
            out.push_str("0.");
            out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
            out.push_str(&digits);
        }
        let trimmed = out.trim_end_matches('0').trim_end_matches('.').len();
        out.truncate(trimmed);
    } else {
        out.push_str(&digits[..1]);
        let frac = digits[1..].trim_end_matches('0');
        if !frac.is_empty() {
            out.push('.');
            out.push_str(frac);
        }
        let _ = write!(out, "e{exp}");
    }
    out
}

/// `x` rounded to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    format_sig(x).parse().unwrap_or(x)
}

fn format_angles(angles: &[(f64, f64)]) -> String {
    angles.iter().map(|&(t, p)| format!("({};{})", format_sig(t), format_sig(p))).collect::<Vec<_>>().join(";")
}

/// CSV text: `#` metadata lines, the header, one row per record.
pub fn records_to_csv(records: &[SweepRecord], metadata: &[String]) -> String {
    let mut out = String::new();
    for line in metadata {
        let _ = writeln!(out, "# {line}");
    }
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let rows =
        std::iter::once(CSV_HEADER.split(',').map(String::from).collect::<Vec<_>>()).chain(records.iter().map(|r| {
            vec![
                format_sig(r.delta),
                r.n.to_string(),
                r.objective.to_string(),
                format_sig(r.value_xy),
                format_sig(r.value_xz),
                r.value_full.map(format_sig).unwrap_or_default(),
                format_sig(r.value_best),
                r.winning_plane.as_str().to_string(),
                r.violation_order_m.to_string(),
                r.depth_lower_bound.to_string(),
                r.converged.to_string(),
                format_angles(&r.frame_angles),
            ]
        }));
    for row in rows {
        writer.write_record(&row).expect("writing to memory cannot fail");
    }
    let bytes = writer.into_inner().expect("writing to memory cannot fail");
    out.push_str(std::str::from_utf8(&bytes).expect("fields are UTF-8"));
    out
}

pub fn write_csv(records: &[SweepRecord], path: impl AsRef<Path>) -> Result<(), SweepError> {
    write_csv_with_metadata(records, &[], path)
}

/// Writes records with the resolved configuration as comment metadata.
pub fn write_csv_for_config(
    records: &[SweepRecord],
    config: &SweepConfig,
    path: impl AsRef<Path>,
) -> Result<(), SweepError> {
    write_csv_with_metadata(records, &config.metadata_lines(), path)
}

pub fn write_csv_with_metadata(
    records: &[SweepRecord],
    metadata: &[String],
    path: impl AsRef<Path>,
) -> Result<(), SweepError> {
    fs::write(path, records_to_csv(records, metadata))?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRecord>, SweepError> {
    parse_csv(&fs::read_to_string(path)?)
}

/// Parses CSV text as written by [`records_to_csv`]; `#` lines are skipped.
pub fn parse_csv(text: &str) -> Result<Vec<SweepRecord>, SweepError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let line_of = |pos: Option<&csv::Position>| pos.map_or(0, |p| p.line() as usize);
    let header = reader.headers().map_err(|e| malformed(line_of(e.position()), e.to_string()))?.clone();
    if header.is_empty() {
        return Err(malformed(0, "missing header".into()));
    }
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(malformed(line_of(header.position()), "unexpected header".into()));
    }
    reader
        .records()
        .map(|row| {
            let row = row.map_err(|e| malformed(line_of(e.position()), e.to_string()))?;
            parse_row(&row).map_err(|message| malformed(line_of(row.position()), message))
        })
        .collect()
}

fn malformed(line: usize, message: String) -> SweepError {
    SweepError::MalformedCsv { line, message }
}

fn parse_row(cells: &csv::StringRecord) -> Result<SweepRecord, String> {
    fn num<T: FromStr>(cell: &str, name: &str) -> Result<T, String> {
        cell.parse().map_err(|_| format!("{name}: cannot parse '{cell}'"))
    }
    let n: usize = num(&cells[1], "n")?;
    let objective = Objective::from_str(&cells[2]).map_err(|e| format!("objective: {e}"))?;
    let value_full = if cells[5].is_empty() { None } else { Some(num(&cells[5], "value_full")?) };
    let winning_plane = match PlaneConstraint::from_str(&cells[7]) {
        Ok(p @ (PlaneConstraint::Xy | PlaneConstraint::Xz)) => p,
        _ => return Err(format!("winning_plane: '{}' is not xy or xz", &cells[7])),
    };
    let frame_angles = parse_angles(&cells[11])?;
    if !frame_angles.is_empty() && frame_angles.len() != 2 * n {
        return Err(format!("frame_angles: {} pairs for n = {n}", frame_angles.len()));
    }
    Ok(SweepRecord {
        delta: num(&cells[0], "delta")?,
        n,
        objective,
        value_xy: num(&cells[3], "value_xy")?,
        value_xz: num(&cells[4], "value_xz")?,
        value_full,
        value_best: num(&cells[6], "value_best")?,
        winning_plane,
        violation_order_m: num(&cells[8], "violation_order_m")?,
        depth_lower_bound: num(&cells[9], "depth_lower_bound")?,
        converged: num(&cells[10], "converged")?,
        frame_angles,
    })
}

fn parse_angles(cell: &str) -> Result<Vec<(f64, f64)>, String> {
    if cell.is_empty() {
        return Ok(Vec::new());
    }
    let parts: Vec<&str> = cell.split(';').collect();
    if !parts.len().is_multiple_of(2) {
        return Err("frame_angles: odd number of angles".into());
    }
    parts
        .chunks(2)
        .map(|pair| {
            let theta = pair[0].strip_prefix('(');
            let phi = pair[1].strip_suffix(')');
            match (theta.map(str::parse::<f64>), phi.map(str::parse::<f64>)) {
                (Some(Ok(t)), Some(Ok(p))) => Ok((t, p)),
                _ => Err(format!("frame_angles: malformed pair '{};{}'", pair[0], pair[1])),
            }
        })
        .collect()
}
