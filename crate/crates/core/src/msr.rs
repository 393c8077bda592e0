//! Joint maximum sum-rate receiver and relay power allocation (single
//! source, per-group budgets).
//!
//! The destinations see `d = C_{0,m-1} s + sum_i C_{i,m-1} v_i + v_d`, so the
//! SNR after a receive vector `w` is a generalized Rayleigh quotient in `w`.
//! With `w` fixed the same quotient can be rewritten as a Rayleigh quotient
//! in each group's gains `a_i`, and both are maximised by dominant
//! eigenvectors.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, hermitian_evd, hermitian_part, normalize_phase, power_method, solve_linear, CMatrix, CVector};
use crate::mmse::DEFAULT_QR_SWEEPS;
use crate::network::{compute_stats, ChannelSet, GainState, PowerConstraint, SecondOrderStats, Topology};

/// Eigen-solver used for both the receiver and the gain updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenSolver {
    /// Householder + shifted QR on a Hermitian congruence.
    #[default]
    Qr,
    /// Power iteration on the non-Hermitian product directly.
    Power,
}

impl std::fmt::Display for EigenSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EigenSolver::Qr => "qr",
            EigenSolver::Power => "power",
        })
    }
}

impl std::str::FromStr for EigenSolver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qr" => Ok(Self::Qr),
            "power" => Ok(Self::Power),
            other => Err(Error::InvalidArgument(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsrOptions {
    pub iterations: usize,
    pub solver: EigenSolver,
    /// QR sweep cap per eigenvalue.
    pub qr_sweeps: usize,
    /// Power-method iteration cap.
    pub power_iterations: usize,
    /// Seed of the power-method start vectors.
    pub seed: u64,
    /// Stop early once the largest gain change falls below this value.
    pub tolerance: Option<f64>,
}

impl Default for MsrOptions {
    fn default() -> Self {
        Self {
            iterations: 2,
            solver: EigenSolver::Qr,
            qr_sweeps: DEFAULT_QR_SWEEPS,
            power_iterations: 500,
            seed: 0,
            tolerance: None,
        }
    }
}

/// Hop factors `B_0..B_{m-1}` and the destination signal/noise matrices.
#[derive(Debug, Clone)]
pub struct CascadeMatrices {
    /// `B_0 = H_s`, `B_i = H_{i,i+1} A_i F_i` (with `H_{m-1,m} = H_d`).
    pub factors: Vec<CMatrix>,
    /// `C_{0,m-1} C_{0,m-1}^H`.
    pub phi: CMatrix,
    /// `sum_{i=1}^{m} C_{i,m-1} C_{i,m-1}^H` (the `i = m` term is `I`).
    pub z: CMatrix,
}

impl CascadeMatrices {
    /// `C_{i,j} = B_j ... B_i` for `i <= j`, identity of size `N_{j+1}` otherwise.
    pub fn product(&self, i: usize, j: usize) -> CMatrix {
        if i > j {
            let n = self.factors[j].nrows();
            return CMatrix::identity(n, n);
        }
        let mut out = self.factors[i].clone();
        for k in i + 1..=j {
            out = &self.factors[k] * out;
        }
        out
    }

    fn hops(&self) -> usize {
        self.factors.len()
    }

    /// `sum_{k=from}^{to} C_{k,j} C_{k,j}^H`.
    fn gram_sum(&self, from: usize, to: usize, j: usize) -> CMatrix {
        let n = self.factors[j].nrows();
        let mut acc = CMatrix::zeros(n, n);
        for k in from..=to {
            let c = self.product(k, j);
            acc += &c * c.adjoint();
        }
        acc
    }
}

/// Per-group matrices of the gain-side quotient.
#[derive(Debug, Clone)]
pub struct GroupMatrices {
    pub signal: CMatrix,
    pub interference: CMatrix,
    /// Noise covariance seen beyond group `i`, `T_i`.
    pub downstream: CMatrix,
    /// `P_i + (N_{i+1} / P_{T,i}) I`.
    pub denominator: CMatrix,
    /// Receive vector scaled so that `w_i^H T_i w_i = 1`.
    pub scaled_receiver: CVector,
}

#[derive(Debug, Clone)]
pub struct MsrDesignResult {
    /// Unit-norm receive vector of length `N_m`.
    pub receiver: CVector,
    pub gains: GainState,
    /// Sum rate after each outer iteration (receiver re-optimised).
    pub sr_trace: Vec<f64>,
    pub solver: EigenSolver,
}

impl MsrDesignResult {
    pub fn sum_rate(&self) -> f64 {
        *self.sr_trace.last().expect("at least one iteration")
    }
}

pub fn build_cascade(
    topology: &Topology,
    channels: &ChannelSet,
    gains: &GainState,
    stats: &SecondOrderStats,
) -> Result<CascadeMatrices> {
    if topology.sources() != 1 {
        return Err(Error::Unsupported(format!(
            "sum-rate design needs a single source, got {}",
            topology.sources()
        )));
    }
    let m = topology.hops();
    let mut factors = vec![channels.h_s.clone()];
    for i in 1..m {
        let scale = gains.group(i).component_mul(&stats.normalizer(i).map(|f| Complex64::new(f, 0.0)));
        factors.push(channels.incoming(i + 1) * CMatrix::from_diagonal(&scale));
    }
    let mut cascade = CascadeMatrices { factors, phi: CMatrix::zeros(0, 0), z: CMatrix::zeros(0, 0) };
    let c0 = cascade.product(0, m - 1);
    cascade.phi = hermitian_part(&(&c0 * c0.adjoint()));
    cascade.z = hermitian_part(&cascade.gram_sum(1, m, m - 1));
    Ok(cascade)
}

fn quotient(phi: &CMatrix, z: &CMatrix, w: &CVector) -> Result<f64> {
    let den = w.dotc(&(z * w)).re;
    if !(den > 0.0) {
        return Err(Error::Degenerate("receive vector has zero noise energy".into()));
    }
    Ok(w.dotc(&(phi * w)).re / den)
}

/// `(w^H phi w) / (w^H Z w)`.
pub fn rayleigh_quotient(cascade: &CascadeMatrices, w: &CVector) -> Result<f64> {
    quotient(&cascade.phi, &cascade.z, w)
}

/// `(1/m) log2(1 + snr * quotient)` in bps/Hz.
pub fn sum_rate(cascade: &CascadeMatrices, w: &CVector, topology: &Topology) -> Result<f64> {
    if w.iter().all(|x| *x == Complex64::new(0.0, 0.0)) {
        return Err(Error::InvalidArgument("receive vector is zero".into()));
    }
    let q = rayleigh_quotient(cascade, w)?.max(0.0);
    Ok((1.0 + topology.snr() * q).log2() / topology.hops() as f64)
}

/// Dominant eigenvector of `den^{-1} num` for Hermitian `num` and positive
/// definite `den`.
pub fn dominant_generalized(
    num: &CMatrix,
    den: &CMatrix,
    solver: EigenSolver,
    options: &MsrOptions,
) -> Result<CVector> {
    let mut v = match solver {
        EigenSolver::Qr => {
            let l = cholesky_lower(den).map_err(|e| e.at_step("generalized eigenproblem"))?;
            let left = l
                .solve_lower_triangular(num)
                .ok_or(Error::Singular { step: "generalized eigenproblem", condition: f64::INFINITY })?;
            let congruent = l
                .solve_lower_triangular(&left.adjoint())
                .ok_or(Error::Singular { step: "generalized eigenproblem", condition: f64::INFINITY })?;
            let evd = hermitian_evd(&hermitian_part(&congruent), options.qr_sweeps)?;
            let top = evd.vectors.column(0).into_owned();
            l.adjoint()
                .solve_upper_triangular(&top)
                .ok_or(Error::Singular { step: "generalized eigenproblem", condition: f64::INFINITY })?
        }
        EigenSolver::Power => {
            let product = solve_linear(den, num).map_err(|e| e.at_step("generalized eigenproblem"))?;
            power_method(&product, options.power_iterations, options.seed)?.vector
        }
    };
    let norm = v.norm();
    if !(norm > 0.0) {
        return Err(Error::Degenerate("dominant eigenvector vanished".into()));
    }
    v /= Complex64::new(norm, 0.0);
    normalize_phase(&mut v);
    Ok(v)
}

/// Unit-norm receiver maximising the destination quotient.
pub fn solve_receiver(cascade: &CascadeMatrices, solver: EigenSolver, options: &MsrOptions) -> Result<CVector> {
    dominant_generalized(&cascade.phi, &cascade.z, solver, options).map_err(|e| e.at_step("receiver"))
}

/// Gain-side quotient matrices of group `i` for the receiver `w`.
pub fn build_group_matrices(
    topology: &Topology,
    channels: &ChannelSet,
    stats: &SecondOrderStats,
    cascade: &CascadeMatrices,
    w: &CVector,
    i: usize,
    budget: f64,
) -> Result<GroupMatrices> {
    let m = cascade.hops();
    let downstream = cascade.gram_sum(i + 1, m, m - 1);
    let energy = w.dotc(&(&downstream * w)).re;
    if !(energy > 0.0) {
        return Err(Error::Degenerate(format!("receiver has no downstream noise energy at group {i}")));
    }
    let wi = w / Complex64::new(energy.sqrt(), 0.0);
    let f = stats.normalizer(i).map(|f| Complex64::new(f, 0.0));
    // r = w_i^H C_{i+1,m-1} H_{i,i+1} F_i as a column of length N_i
    let r = (cascade.product(i + 1, m - 1) * channels.incoming(i + 1)).adjoint() * &wi;
    let r = r.conjugate().component_mul(&f);
    let d = CMatrix::from_diagonal(&r);
    let sandwich = |core: &CMatrix| hermitian_part(&(d.adjoint() * core.conjugate() * &d));
    let c0 = cascade.product(0, i - 1);
    let signal = sandwich(&(&c0 * c0.adjoint()));
    let interference = sandwich(&cascade.gram_sum(1, i, i - 1));
    let n = topology.nodes(i);
    let denominator = &interference + CMatrix::from_diagonal_element(n, n, Complex64::new(topology.nodes(i + 1) as f64 / budget, 0.0));
    Ok(GroupMatrices { signal, interference, downstream, denominator, scaled_receiver: wi })
}

/// Dominant gain vector of group `i`, rescaled to `N_{i+1} a^H a = budget`.
pub fn solve_gains(
    group: &GroupMatrices,
    solver: EigenSolver,
    budget: f64,
    next_nodes: usize,
    options: &MsrOptions,
) -> Result<CVector> {
    if group.signal.iter().all(|x| x.norm() == 0.0) {
        return Err(Error::Degenerate("no signal reaches the destinations through this group".into()));
    }
    let a = dominant_generalized(&group.signal, &group.denominator, solver, options).map_err(|e| e.at_step("gain update"))?;
    let scale = (budget / (next_nodes as f64 * a.norm_squared())).sqrt();
    Ok(a * Complex64::new(scale, 0.0))
}

/// Receiver and sum rate for fixed gains.
pub fn evaluate(
    topology: &Topology,
    channels: &ChannelSet,
    gains: &GainState,
    options: &MsrOptions,
) -> Result<(CVector, f64)> {
    let stats = compute_stats(topology, channels, gains)?;
    let cascade = build_cascade(topology, channels, gains, &stats)?;
    let w = solve_receiver(&cascade, options.solver, options)?;
    let sr = sum_rate(&cascade, &w, topology)?;
    Ok((w, sr))
}

/// Equal gains `sqrt(P_{T,i} / (N_i N_{i+1}))` per group.
pub fn equal_gains(topology: &Topology, budgets: &[f64]) -> GainState {
    let v: Vec<f64> = (1..=topology.relay_groups())
        .map(|i| (budgets[i - 1] / (topology.nodes(i) * topology.nodes(i + 1)) as f64).sqrt())
        .collect();
    GainState::uniform(topology, &v)
}

/// Alternating receiver / gain design for one channel draw.
pub fn run_msr(topology: &Topology, channels: &ChannelSet, budgets: &[f64], options: &MsrOptions) -> Result<MsrDesignResult> {
    if options.iterations == 0 {
        return Err(Error::InvalidArgument("at least one iteration is required".into()));
    }
    channels.validate(topology)?;
    PowerConstraint::Local(budgets.to_vec()).validate(topology)?;
    let mut gains = equal_gains(topology, budgets);
    let (mut w, _) = evaluate(topology, channels, &gains, options)?;
    let mut trace = Vec::with_capacity(options.iterations);
    for _ in 0..options.iterations {
        let previous = gains.clone();
        for i in 1..=topology.relay_groups() {
            let stats = compute_stats(topology, channels, &gains)?;
            let cascade = build_cascade(topology, channels, &gains, &stats)?;
            let group = build_group_matrices(topology, channels, &stats, &cascade, &w, i, budgets[i - 1])?;
            *gains.group_mut(i) = solve_gains(&group, options.solver, budgets[i - 1], topology.nodes(i + 1), options)?;
        }
        let (next_w, sr) = evaluate(topology, channels, &gains, options)?;
        w = next_w;
        trace.push(sr);
        let change = gains
            .gains
            .iter()
            .zip(&previous.gains)
            .map(|(a, b)| (a - b).camax())
            .fold(0.0, f64::max);
        if options.tolerance.is_some_and(|tol| change <= tol) {
            break;
        }
    }
    Ok(MsrDesignResult { receiver: w, gains, sr_trace: trace, solver: options.solver })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::draw_channels;
    use approx::assert_relative_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn setup(nodes: Vec<usize>, seed: u64) -> (Topology, ChannelSet, GainState, SecondOrderStats, CascadeMatrices) {
        let t = Topology::new(nodes, 1.0, 0.1).unwrap();
        let ch = draw_channels(&t, seed);
        let budgets = vec![2.0; t.relay_groups()];
        let g = equal_gains(&t, &budgets);
        let s = compute_stats(&t, &ch, &g).unwrap();
        let cas = build_cascade(&t, &ch, &g, &s).unwrap();
        (t, ch, g, s, cas)
    }

    #[test]
    fn two_hop_cascade_is_two_factors() {
        let (_, ch, g, s, cas) = setup(vec![1, 3, 2], 1);
        let b1 = &ch.h_d * CMatrix::from_diagonal(g.group(1)) * s.normalizer_matrix(1);
        assert!((cas.product(0, 1) - &b1 * &ch.h_s).norm() < 1e-13);
        let z = &b1 * b1.adjoint() + CMatrix::identity(2, 2);
        assert!((&cas.z - z).norm() < 1e-13);
    }

    #[test]
    fn multiple_sources_unsupported() {
        let t = Topology::new(vec![2, 2, 2], 1.0, 1.0).unwrap();
        let ch = draw_channels(&t, 0);
        let g = equal_gains(&t, &[1.0]);
        let s = compute_stats(&t, &ch, &g).unwrap();
        assert!(matches!(build_cascade(&t, &ch, &g, &s), Err(Error::Unsupported(_))));
    }

    #[test]
    fn zero_gains_collapse_to_destination_noise() {
        let t = Topology::new(vec![1, 3, 3, 2], 1.0, 0.1).unwrap();
        let ch = draw_channels(&t, 3);
        let g = GainState::zeros(&t);
        let s = compute_stats(&t, &ch, &g).unwrap();
        let cas = build_cascade(&t, &ch, &g, &s).unwrap();
        assert_eq!(cas.phi.norm(), 0.0);
        assert!((&cas.z - CMatrix::identity(2, 2)).norm() < 1e-15);
        let w = CVector::from_vec(vec![c(1.0), c(0.5)]);
        assert_eq!(sum_rate(&cas, &w, &t).unwrap(), 0.0);
    }

    #[test]
    fn scalar_sum_rate_by_hand() {
        let t = Topology::new(vec![1, 1, 1], 1.0, 1.0).unwrap();
        let cas = CascadeMatrices {
            factors: vec![],
            phi: CMatrix::from_element(1, 1, c(1.0)),
            z: CMatrix::from_element(1, 1, c(1.0)),
        };
        let w = CVector::from_element(1, c(1.0));
        assert_relative_eq!(sum_rate(&cas, &w, &t).unwrap(), 0.5, max_relative = 1e-15);
        assert!(sum_rate(&cas, &CVector::zeros(1), &t).is_err());
    }

    #[test]
    fn sum_rate_is_scale_invariant() {
        let (t, _, _, _, cas) = setup(vec![1, 4, 4, 2], 7);
        let w = CVector::from_vec(vec![Complex64::new(0.3, 0.2), Complex64::new(-1.0, 0.4)]);
        let base = sum_rate(&cas, &w, &t).unwrap();
        for k in [c(2.0), Complex64::new(0.0, -3.0), Complex64::new(1e-3, 5e2)] {
            assert_relative_eq!(sum_rate(&cas, &(&w * k), &t).unwrap(), base, max_relative = 1e-12);
        }
    }

    #[test]
    fn identity_noise_gives_dominant_eigenvector() {
        let phi = CMatrix::from_diagonal(&CVector::from_vec(vec![c(1.0), c(4.0), c(2.0)]));
        let cas = CascadeMatrices { factors: vec![], phi, z: CMatrix::identity(3, 3) };
        for solver in [EigenSolver::Qr, EigenSolver::Power] {
            let w = solve_receiver(&cas, solver, &MsrOptions::default()).unwrap();
            assert!((w[1].norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_one_signal_gives_whitened_direction() {
        let q = CVector::from_vec(vec![Complex64::new(1.0, 1.0), c(-0.5), Complex64::new(0.0, 2.0)]);
        let z = CMatrix::from_row_slice(3, 3, &[c(2.0), c(0.3), c(0.0), c(0.3), c(1.5), c(0.2), c(0.0), c(0.2), c(1.0)]);
        let cas = CascadeMatrices { factors: vec![], phi: &q * q.adjoint(), z: z.clone() };
        let expect = solve_linear(&z, &CMatrix::from_column_slice(3, 1, q.as_slice())).unwrap().column(0).into_owned();
        for solver in [EigenSolver::Qr, EigenSolver::Power] {
            let w = solve_receiver(&cas, solver, &MsrOptions::default()).unwrap();
            let overlap = w.dotc(&expect).norm() / expect.norm();
            assert_relative_eq!(overlap, 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn gain_quotient_matches_receiver_quotient() {
        for nodes in [vec![1, 3, 2], vec![1, 4, 4, 2], vec![1, 2, 3, 2, 2]] {
            let (t, ch, g, s, cas) = setup(nodes, 21);
            let w = solve_receiver(&cas, EigenSolver::Qr, &MsrOptions::default()).unwrap();
            let q = rayleigh_quotient(&cas, &w).unwrap();
            for i in 1..=t.relay_groups() {
                let gm = build_group_matrices(&t, &ch, &s, &cas, &w, i, 2.0).unwrap();
                assert_relative_eq!(gm.scaled_receiver.dotc(&(&gm.downstream * &gm.scaled_receiver)).re, 1.0, max_relative = 1e-10);
                let gq = quotient(&gm.signal, &gm.denominator, g.group(i)).unwrap();
                assert_relative_eq!(gq, q, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn solved_gains_meet_budget() {
        let (t, ch, _, s, cas) = setup(vec![1, 4, 4, 2], 5);
        let w = solve_receiver(&cas, EigenSolver::Qr, &MsrOptions::default()).unwrap();
        for solver in [EigenSolver::Qr, EigenSolver::Power] {
            let gm = build_group_matrices(&t, &ch, &s, &cas, &w, 1, 3.0).unwrap();
            let a = solve_gains(&gm, solver, 3.0, 4, &MsrOptions::default()).unwrap();
            assert_relative_eq!(4.0 * a.norm_squared(), 3.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn rank_one_signal_gain_direction() {
        let m = CVector::from_vec(vec![Complex64::new(0.0, 1.0), c(2.0)]);
        let gm = GroupMatrices {
            signal: &m * m.adjoint(),
            interference: CMatrix::zeros(2, 2),
            downstream: CMatrix::identity(1, 1),
            denominator: CMatrix::identity(2, 2) * c(2.0),
            scaled_receiver: CVector::from_element(1, c(1.0)),
        };
        let a = solve_gains(&gm, EigenSolver::Qr, 1.0, 2, &MsrOptions::default()).unwrap();
        assert_relative_eq!(a.dotc(&m).norm(), a.norm() * m.norm(), max_relative = 1e-12);
    }

    #[test]
    fn design_meets_budgets_and_solvers_agree() {
        let t = Topology::new(vec![1, 4, 4, 2], 1.0, 0.1).unwrap();
        for seed in 0..5 {
            let ch = draw_channels(&t, seed);
            let qr = run_msr(&t, &ch, &[4.0, 4.0], &MsrOptions::default()).unwrap();
            let pw = run_msr(&t, &ch, &[4.0, 4.0], &MsrOptions { solver: EigenSolver::Power, ..Default::default() }).unwrap();
            assert!(PowerConstraint::Local(vec![4.0, 4.0]).residual(&t, &qr.gains) < 1e-10);
            assert_relative_eq!(qr.sum_rate(), pw.sum_rate(), max_relative = 1e-6);
            assert_relative_eq!(qr.receiver.norm(), 1.0, max_relative = 1e-12);
        }
    }
}
