//! Joint MMSE receiver and relay power allocation.
//!
//! Each outer iteration computes the Wiener receiver for the current gains
//! and then re-solves the gains of every relay group with the receiver held
//! fixed. Within one gain update the normalisers `F_i` are treated as
//! constants, which makes the cost an exact quadratic in each `a_i`:
//! `a^H phi a - 2 Re(a^H z) + const`.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hadamard, hermitian_evd, hermitian_part, solve_linear, solve_linear_vec, CMatrix, CVector};
use crate::network::{
    compute_stats, destination_moments, mse, stats_with_normalizers, ChannelSet, GainState, PowerConstraint,
    SecondOrderStats, Topology,
};

/// QR sweep cap per eigenvalue used by the designs.
pub const DEFAULT_QR_SWEEPS: usize = 30;

/// Eigenvalues of `phi_i` below this fraction of the largest are treated as zero.
pub const RANK_TRUNCATION: f64 = 1e-9;

/// How the outer iteration moves from one gain iterate to the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepControl {
    /// Take the closed-form update as is.
    #[default]
    Direct,
    /// Backtrack along the update (re-projected onto the constraint) until the
    /// true MSE does not increase; keep the old gains if no step helps.
    Monotone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmseOptions {
    /// Maximum number of outer iterations (at least one).
    pub iterations: usize,
    /// Stop early once the largest gain change falls below this value.
    pub tolerance: Option<f64>,
    pub qr_sweeps: usize,
    pub step: StepControl,
}

impl Default for MmseOptions {
    fn default() -> Self {
        Self { iterations: 2, tolerance: None, qr_sweeps: DEFAULT_QR_SWEEPS, step: StepControl::Direct }
    }
}

/// Lagrange multipliers, shaped like the constraint that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Multipliers {
    Global(f64),
    Local(Vec<f64>),
    Individual(Vec<Vec<f64>>),
}

impl Multipliers {
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            Multipliers::Global(l) => vec![*l],
            Multipliers::Local(l) => l.clone(),
            Multipliers::Individual(l) => l.iter().flatten().copied().collect(),
        }
    }
}

/// Quadratic-model coefficients `phi_i`, `z_i` for every relay group.
#[derive(Debug, Clone)]
pub struct PhiZ {
    pub phi: Vec<CMatrix>,
    pub z: Vec<CVector>,
}

#[derive(Debug, Clone)]
pub struct MmseDesignResult {
    /// `N_m x N_0` receive filter, optimal for the returned gains.
    pub receiver: CMatrix,
    pub gains: GainState,
    pub multipliers: Multipliers,
    /// MSE after each outer iteration (receiver re-optimised for the new gains).
    pub mse_trace: Vec<f64>,
    /// Normalisers at the returned gains.
    pub normalizers: Vec<DVector<f64>>,
}

impl MmseDesignResult {
    pub fn mse(&self) -> f64 {
        *self.mse_trace.last().expect("at least one iteration")
    }
}

/// `W = E(dd^H)^{-1} E(ds^H)`.
pub fn wiener_receiver(
    topology: &Topology,
    channels: &ChannelSet,
    gains: &GainState,
    stats: &SecondOrderStats,
) -> Result<CMatrix> {
    let (rdd, rds) = destination_moments(topology, channels, gains, stats);
    solve_linear(&rdd, &rds).map_err(|e| e.at_step("wiener receiver"))
}

/// Wiener receiver and its MSE at the given gains.
pub fn optimal_mse(topology: &Topology, channels: &ChannelSet, gains: &GainState) -> Result<(CMatrix, f64)> {
    let stats = compute_stats(topology, channels, gains)?;
    let w = wiener_receiver(topology, channels, gains, &stats)?;
    let (rdd, rds) = destination_moments(topology, channels, gains, &stats);
    Ok((w.clone(), mse(topology, &w, &rdd, &rds)))
}

/// Back-propagation matrices `B_1..B_{m-1}` (`N_i x N_{m-1}`), with
/// `B_{m-1} = I` and `B_i = H_{i,i+1}^H F_{i+1} A_{i+1}^* B_{i+1}`.
pub fn build_b_matrices(
    topology: &Topology,
    channels: &ChannelSet,
    gains: &GainState,
    stats: &SecondOrderStats,
) -> Vec<CMatrix> {
    let groups = topology.relay_groups();
    let last = topology.nodes(groups);
    let mut out = vec![CMatrix::identity(last, last)];
    for i in (1..groups).rev() {
        let mut scaled = out.last().expect("non-empty").clone();
        let f = stats.normalizer(i + 1);
        let a = gains.group(i + 1);
        for (j, mut row) in scaled.row_iter_mut().enumerate() {
            row *= a[j].conj() * f[j];
        }
        out.push(channels.incoming(i + 1).adjoint() * scaled);
    }
    out.reverse();
    out
}

fn phi_z_from(b: &CMatrix, h_d: &CMatrix, w: &CMatrix, stats: &SecondOrderStats, i: usize) -> (CMatrix, CVector) {
    let g = b * h_d.adjoint() * w;
    let phi = hadamard(&(&g * g.adjoint()), &stats.ryy(i).conjugate()).expect("shapes agree");
    let z = hadamard(&g, &stats.rys(i).conjugate()).expect("shapes agree").column_sum();
    (hermitian_part(&phi), z)
}

/// `phi_i = (G G^H) o E(y_i y_i^H)^*` and `z_i = (G o E(y_i s^H)^*) u` with
/// `G = B_i H_d^H W`, for every group.
pub fn build_phi_z(
    topology: &Topology,
    channels: &ChannelSet,
    gains: &GainState,
    stats: &SecondOrderStats,
    w: &CMatrix,
) -> PhiZ {
    let b = build_b_matrices(topology, channels, gains, stats);
    let (phi, z) = (1..=topology.relay_groups())
        .map(|i| phi_z_from(&b[i - 1], &channels.h_d, w, stats, i))
        .unzip();
    PhiZ { phi, z }
}

/// `phi_i`, `z_i` for a single group.
pub fn build_phi_z_group(
    topology: &Topology,
    channels: &ChannelSet,
    gains: &GainState,
    stats: &SecondOrderStats,
    w: &CMatrix,
    i: usize,
) -> (CMatrix, CVector) {
    let b = build_b_matrices(topology, channels, gains, stats);
    phi_z_from(&b[i - 1], &channels.h_d, w, stats, i)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SecularTerm {
    alpha: f64,
    nodes: f64,
    weight: f64,
}

/// Budget equation `g(lambda) = sum N (alpha + N lambda)^{-2} C`, one term
/// per eigenpair of each contributing `phi_i`.
#[derive(Debug, Clone, Default)]
pub struct SecularEquation {
    terms: Vec<SecularTerm>,
}

impl SecularEquation {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the eigen-terms of one group; `nodes` is `N_{i+1}`.
    pub fn add_group(&mut self, phi: &CMatrix, z: &CVector, nodes: usize, qr_sweeps: usize) -> Result<()> {
        let evd = hermitian_evd(phi, qr_sweeps)?;
        let top = evd.values.first().copied().unwrap_or(0.0).max(0.0);
        for (k, &value) in evd.values.iter().enumerate() {
            let alpha = if value < RANK_TRUNCATION * top { 0.0 } else { value };
            let weight = evd.vectors.column(k).dotc(z).norm_sqr();
            self.terms.push(SecularTerm { alpha, nodes: nodes as f64, weight });
        }
        Ok(())
    }

    /// Adds one explicit term (mainly for tests).
    pub fn add_term(&mut self, alpha: f64, nodes: usize, weight: f64) {
        self.terms.push(SecularTerm { alpha, nodes: nodes as f64, weight });
    }

    pub fn value(&self, lambda: f64) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.weight > 0.0)
            .map(|t| t.nodes * t.weight / (t.alpha + t.nodes * lambda).powi(2))
            .sum()
    }

    /// Left end of the interval on which `g` is finite and strictly decreasing.
    pub fn lower_bound(&self) -> Option<f64> {
        self.terms
            .iter()
            .filter(|t| t.weight > 0.0)
            .map(|t| -t.alpha / t.nodes)
            .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))))
    }

    /// The unique root of `g(lambda) = budget` right of the poles, by
    /// bisection until the bracket cannot shrink further.
    pub fn solve(&self, budget: f64) -> Result<f64> {
        let lo0 = self
            .lower_bound()
            .ok_or_else(|| Error::Infeasible("no signal reaches the destinations (all z_i vanish)".into()))?;
        let mut step = lo0.abs().max(1.0);
        let mut hi = lo0 + step;
        let mut doublings = 0;
        while self.value(hi) > budget {
            step *= 2.0;
            hi = lo0 + step;
            doublings += 1;
            if doublings > 2000 || !hi.is_finite() {
                return Err(Error::Infeasible(format!("budget {budget} cannot be bracketed")));
            }
        }
        let mut lo = lo0;
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.value(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let g_lo = self.value(lo);
        if lo > lo0 && g_lo.is_finite() && (g_lo - budget).abs() < (self.value(hi) - budget).abs() {
            Ok(lo)
        } else {
            Ok(hi)
        }
    }
}

/// Common multiplier for the global budget.
pub fn solve_lambda_global(phi_z: &PhiZ, topology: &Topology, budget: f64, qr_sweeps: usize) -> Result<f64> {
    let mut eq = SecularEquation::new();
    for i in 1..=topology.relay_groups() {
        eq.add_group(&phi_z.phi[i - 1], &phi_z.z[i - 1], topology.nodes(i + 1), qr_sweeps)?;
    }
    eq.solve(budget)
}

/// Multiplier for one group's local budget; `nodes` is `N_{i+1}`.
pub fn solve_lambda_local(phi: &CMatrix, z: &CVector, nodes: usize, budget: f64, qr_sweeps: usize) -> Result<f64> {
    let mut eq = SecularEquation::new();
    eq.add_group(phi, z, nodes, qr_sweeps)?;
    eq.solve(budget)
}

/// `a = (phi + N lambda I)^{-1} z`.
pub fn allocate_local(phi: &CMatrix, z: &CVector, nodes: usize, lambda: f64) -> Result<CVector> {
    let n = phi.nrows();
    let shift = Complex64::new(nodes as f64 * lambda, 0.0);
    let system = phi + CMatrix::from_diagonal_element(n, n, shift);
    solve_linear_vec(&system, z).map_err(|e| e.at_step("power allocation"))
}

/// Applies [`allocate_local`] to every group with a shared multiplier.
pub fn allocate_global(phi_z: &PhiZ, lambda: f64, topology: &Topology) -> Result<GainState> {
    let gains = (1..=topology.relay_groups())
        .map(|i| allocate_local(&phi_z.phi[i - 1], &phi_z.z[i - 1], topology.nodes(i + 1), lambda))
        .collect::<Result<Vec<_>>>()?;
    Ok(GainState::new(gains))
}

/// Per-node updates under individual budgets, sweeping `j` in ascending
/// order and using the freshest values of the other coefficients. Each
/// coefficient keeps the phase of its residual `r_j` and takes the modulus
/// its budget allows. Returns the new vector and the multipliers.
pub fn allocate_individual(
    phi: &CMatrix,
    z: &CVector,
    nodes: usize,
    budgets: &[f64],
    current: &CVector,
) -> Result<(CVector, Vec<f64>)> {
    let n_next = nodes as f64;
    let mut a = current.clone();
    let mut lambdas = Vec::with_capacity(a.len());
    for j in 0..a.len() {
        let mut r = z[j];
        for l in (0..a.len()).filter(|&l| l != j) {
            r -= phi[(j, l)] * a[l];
        }
        let mag = r.norm();
        if mag == 0.0 || !mag.is_finite() {
            return Err(Error::Infeasible(format!("coefficient {j} has no defined phase (zero residual)")));
        }
        a[j] = r * ((budgets[j] / n_next).sqrt() / mag);
        lambdas.push((mag * (n_next / budgets[j]).sqrt() - phi[(j, j)].re) / n_next);
    }
    Ok((a, lambdas))
}

/// Starting point of the iteration: equal real gains meeting the budget.
pub fn initial_gains(topology: &Topology, constraint: &PowerConstraint) -> GainState {
    let groups = topology.relay_groups();
    match constraint {
        PowerConstraint::Global(p) => {
            let links: usize = (1..=groups).map(|i| topology.nodes(i) * topology.nodes(i + 1)).sum();
            GainState::uniform(topology, &vec![(p / links as f64).sqrt(); groups])
        }
        PowerConstraint::Local(p) => {
            let v: Vec<f64> = (1..=groups)
                .map(|i| (p[i - 1] / (topology.nodes(i) * topology.nodes(i + 1)) as f64).sqrt())
                .collect();
            GainState::uniform(topology, &v)
        }
        PowerConstraint::Individual(p) => GainState::new(
            (1..=groups)
                .map(|i| {
                    let n_next = topology.nodes(i + 1) as f64;
                    CVector::from_iterator(p[i - 1].len(), p[i - 1].iter().map(|b| Complex64::new((b / n_next).sqrt(), 0.0)))
                })
                .collect(),
        ),
    }
}

/// Rescales gains onto the constraint surface (used by the backtracking step).
pub fn project_onto(topology: &Topology, constraint: &PowerConstraint, gains: &GainState) -> GainState {
    let mut out = gains.clone();
    match constraint {
        PowerConstraint::Global(p) => {
            let total = gains.total_power(topology);
            if total > 0.0 {
                let s = (p / total).sqrt();
                out.gains.iter_mut().for_each(|a| *a *= Complex64::new(s, 0.0));
            }
        }
        PowerConstraint::Local(p) => {
            for i in 1..=topology.relay_groups() {
                let power = gains.group_power(topology, i);
                if power > 0.0 {
                    *out.group_mut(i) *= Complex64::new((p[i - 1] / power).sqrt(), 0.0);
                }
            }
        }
        PowerConstraint::Individual(p) => {
            for i in 1..=topology.relay_groups() {
                let n_next = topology.nodes(i + 1) as f64;
                for (a, b) in out.group_mut(i).iter_mut().zip(&p[i - 1]) {
                    let mag = (b / n_next).sqrt();
                    *a = if a.norm() > 0.0 { *a * (mag / a.norm()) } else { Complex64::new(mag, 0.0) };
                }
            }
        }
    }
    out
}

/// MSE plus multiplier penalties, with the normalisers held at `normalizers`.
pub fn lagrangian(
    topology: &Topology,
    channels: &ChannelSet,
    gains: &GainState,
    w: &CMatrix,
    normalizers: &[DVector<f64>],
    constraint: &PowerConstraint,
    multipliers: &Multipliers,
) -> Result<f64> {
    let stats = stats_with_normalizers(topology, channels, gains, normalizers)?;
    let (rdd, rds) = destination_moments(topology, channels, gains, &stats);
    let cost = mse(topology, w, &rdd, &rds);
    let penalty = match (constraint, multipliers) {
        (PowerConstraint::Global(p), Multipliers::Global(l)) => l * (gains.total_power(topology) - p),
        (PowerConstraint::Local(p), Multipliers::Local(l)) => (1..=topology.relay_groups())
            .map(|i| l[i - 1] * (gains.group_power(topology, i) - p[i - 1]))
            .sum(),
        (PowerConstraint::Individual(p), Multipliers::Individual(l)) => (1..=topology.relay_groups())
            .map(|i| {
                let n_next = topology.nodes(i + 1) as f64;
                gains
                    .group(i)
                    .iter()
                    .zip(&p[i - 1])
                    .zip(&l[i - 1])
                    .map(|((a, b), l)| l * (n_next * a.norm_sqr() - b))
                    .sum::<f64>()
            })
            .sum(),
        _ => return Err(Error::InvalidArgument("multipliers do not match the constraint type".into())),
    };
    Ok(cost + penalty)
}

/// One pass of gain updates with the receiver `w` held fixed.
fn sweep(
    topology: &Topology,
    channels: &ChannelSet,
    constraint: &PowerConstraint,
    gains: &GainState,
    w: &CMatrix,
    qr_sweeps: usize,
) -> Result<(GainState, Multipliers)> {
    match constraint {
        PowerConstraint::Global(p) => {
            let stats = compute_stats(topology, channels, gains)?;
            let phi_z = build_phi_z(topology, channels, gains, &stats, w);
            let lambda = solve_lambda_global(&phi_z, topology, *p, qr_sweeps)?;
            Ok((allocate_global(&phi_z, lambda, topology)?, Multipliers::Global(lambda)))
        }
        PowerConstraint::Local(p) => {
            let mut next = gains.clone();
            let mut lambdas = Vec::with_capacity(p.len());
            for i in 1..=topology.relay_groups() {
                let stats = compute_stats(topology, channels, &next)?;
                let (phi, z) = build_phi_z_group(topology, channels, &next, &stats, w, i);
                let n_next = topology.nodes(i + 1);
                let lambda = solve_lambda_local(&phi, &z, n_next, p[i - 1], qr_sweeps)?;
                *next.group_mut(i) = allocate_local(&phi, &z, n_next, lambda)?;
                lambdas.push(lambda);
            }
            Ok((next, Multipliers::Local(lambdas)))
        }
        PowerConstraint::Individual(p) => {
            let mut next = gains.clone();
            let mut lambdas = Vec::with_capacity(p.len());
            for i in 1..=topology.relay_groups() {
                let stats = compute_stats(topology, channels, &next)?;
                let (phi, z) = build_phi_z_group(topology, channels, &next, &stats, w, i);
                let (a, l) = allocate_individual(&phi, &z, topology.nodes(i + 1), &p[i - 1], next.group(i))?;
                *next.group_mut(i) = a;
                lambdas.push(l);
            }
            Ok((next, Multipliers::Individual(lambdas)))
        }
    }
}

fn max_change(a: &GainState, b: &GainState) -> f64 {
    a.gains.iter().zip(&b.gains).map(|(x, y)| (x - y).camax()).fold(0.0, f64::max)
}

/// Alternating receiver / power-allocation design for one channel draw.
pub fn run_mmse(
    topology: &Topology,
    channels: &ChannelSet,
    constraint: &PowerConstraint,
    options: &MmseOptions,
) -> Result<MmseDesignResult> {
    if options.iterations == 0 {
        return Err(Error::InvalidArgument("at least one iteration is required".into()));
    }
    channels.validate(topology)?;
    constraint.validate(topology)?;
    let mut gains = initial_gains(topology, constraint);
    let (mut w, mut cost) = optimal_mse(topology, channels, &gains)?;
    let mut trace = Vec::with_capacity(options.iterations);
    let mut multipliers = None;
    for _ in 0..options.iterations {
        let (mut next, mut mult) = sweep(topology, channels, constraint, &gains, &w, options.qr_sweeps)?;
        let (mut next_w, mut next_cost) = optimal_mse(topology, channels, &next)?;
        if options.step == StepControl::Monotone && next_cost > cost {
            let mut t = 0.5;
            let mut accepted = false;
            for _ in 0..40 {
                let blend = GainState::new(
                    gains.gains.iter().zip(&next.gains).map(|(a, b)| a + (b - a) * Complex64::new(t, 0.0)).collect(),
                );
                let trial = project_onto(topology, constraint, &blend);
                if let Ok((tw, tc)) = optimal_mse(topology, channels, &trial) {
                    if tc <= cost {
                        (next, next_w, next_cost, accepted) = (trial, tw, tc, true);
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                log::debug!("monotone step control: no descent step found, keeping the current gains");
                (next, next_w, next_cost) = (gains.clone(), w.clone(), cost);
                mult = multipliers.clone().unwrap_or(mult);
            }
        }
        let change = max_change(&gains, &next);
        gains = next;
        w = next_w;
        cost = next_cost;
        trace.push(cost);
        multipliers = Some(mult);
        if options.tolerance.is_some_and(|tol| change <= tol) {
            break;
        }
    }
    let stats = compute_stats(topology, channels, &gains)?;
    Ok(MmseDesignResult {
        receiver: w,
        gains,
        multipliers: multipliers.expect("at least one iteration ran"),
        mse_trace: trace,
        normalizers: stats.normalizers,
    })
}
