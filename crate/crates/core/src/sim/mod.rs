//! Monte-Carlo BER and sum-rate sweeps over block-fading channel draws.
//!
//! Every packet (BER) or draw (sum rate) is an independent trial with its own
//! generators derived from the master seed and the trial coordinates, so
//! results do not depend on scheduling. All designs of one trial see the same
//! channel, payload bits and noise.

pub mod feedback;
pub mod qpsk;
pub mod stats;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};
use crate::mmse::{run_mmse, wiener_receiver, MmseOptions, StepControl};
use crate::msr::{build_cascade, equal_gains, run_msr, solve_receiver, sum_rate, EigenSolver, MsrOptions};
use crate::network::{
    compute_stats, destination_moments, draw_channels_with, propagate_block, ChannelSet, ConstraintKind, GainState,
    PowerConstraint, Topology,
};
use crate::rng::{complex_gaussian, stream};

pub use feedback::{quantize_feedback, Feedback};
pub use stats::{q_function, qpsk_awgn_ber, wilson_interval};

const CHANNEL: u64 = 0;
const PAYLOAD: u64 = 1;
const FEEDBACK: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Design {
    #[serde(rename = "mmse-global")]
    MmseGlobal,
    #[serde(rename = "mmse-local")]
    MmseLocal,
    #[serde(rename = "mmse-individual")]
    MmseIndividual,
    #[serde(rename = "msr-qr")]
    MsrQr,
    #[serde(rename = "msr-power")]
    MsrPower,
    /// Fixed equal gains per group, no optimisation.
    #[serde(rename = "equal")]
    Equal,
}

impl Design {
    pub const ALL: [Design; 6] =
        [Design::MmseGlobal, Design::MmseLocal, Design::MmseIndividual, Design::MsrQr, Design::MsrPower, Design::Equal];

    pub fn name(self) -> &'static str {
        match self {
            Design::MmseGlobal => "mmse-global",
            Design::MmseLocal => "mmse-local",
            Design::MmseIndividual => "mmse-individual",
            Design::MsrQr => "msr-qr",
            Design::MsrPower => "msr-power",
            Design::Equal => "equal",
        }
    }

    /// Design family without the constraint: `mmse`, `msr-qr`, `msr-power` or `equal`.
    pub fn family(self) -> &'static str {
        match self {
            Design::MmseGlobal | Design::MmseLocal | Design::MmseIndividual => "mmse",
            other => other.name(),
        }
    }

    pub fn constraint_kind(self) -> ConstraintKind {
        match self {
            Design::MmseGlobal => ConstraintKind::Global,
            Design::MmseIndividual => ConstraintKind::Individual,
            _ => ConstraintKind::Local,
        }
    }

    fn needs_single_source(self) -> bool {
        matches!(self, Design::MsrQr | Design::MsrPower)
    }
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Design {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Design::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown design `{s}`")))
    }
}

/// How trials are scheduled. Results are identical either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    /// Rayon data parallelism (sequential when the `parallel` feature is off).
    #[default]
    Parallel,
    Sequential,
}

/// Runs `f` for trial indices `0..count` and returns the results in index order.
pub fn map_trials<T, F>(execution: Execution, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..count).into_par_iter().map(f).collect()
        }
        _ => (0..count).map(f).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Node counts `N_0..N_m`.
    pub nodes: Vec<usize>,
    /// Total relay power shared by every constraint type.
    pub total_power: f64,
    /// Per-group budgets; equal split of `total_power` when absent.
    pub local_budgets: Option<Vec<f64>>,
    /// Per-node budgets; equal split of each group's budget when absent.
    pub individual_budgets: Option<Vec<Vec<f64>>>,
    pub snr_db: Vec<f64>,
    /// Packets (BER) or channel draws (sum rate) per SNR point.
    pub packets: usize,
    pub symbols_per_packet: usize,
    pub designs: Vec<Design>,
    pub feedback: Feedback,
    /// Alternating iterations per design.
    pub iterations: usize,
    pub step: StepControl,
    /// Redraws allowed when a design fails on a degenerate channel.
    pub max_redraws: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            nodes: vec![1, 4, 4, 2],
            total_power: 8.0,
            local_budgets: None,
            individual_budgets: None,
            snr_db: vec![0.0, 4.0, 8.0, 12.0, 16.0, 20.0],
            packets: 400,
            symbols_per_packet: 1500,
            designs: Design::ALL.to_vec(),
            feedback: Feedback::Perfect,
            iterations: 2,
            step: StepControl::Direct,
            max_redraws: 10,
            seed: 1,
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

impl SimConfig {
    pub fn topology(&self, snr_db: f64) -> Result<Topology> {
        Topology::with_snr_db(self.nodes.clone(), snr_db)
    }

    pub fn validate(&self) -> Result<()> {
        let top = Topology::new(self.nodes.clone(), 1.0, 1.0)?;
        if !(self.total_power > 0.0 && self.total_power.is_finite()) {
            return Err(Error::InvalidArgument(format!("total power {} must be positive", self.total_power)));
        }
        for kind in [ConstraintKind::Global, ConstraintKind::Local, ConstraintKind::Individual] {
            let c = self.constraint(kind, &top);
            c.validate(&top)?;
            if !close(c.total(), self.total_power) {
                return Err(Error::InvalidArgument(format!(
                    "{kind} budgets sum to {}, but every constraint type must share the total power {}",
                    c.total(),
                    self.total_power
                )));
            }
        }
        if let (Some(local), Some(ind)) = (&self.local_budgets, &self.individual_budgets) {
            for (i, (l, row)) in local.iter().zip(ind).enumerate() {
                if !close(*l, row.iter().sum()) {
                    return Err(Error::InvalidArgument(format!(
                        "individual budgets of group {} sum to {}, local budget is {l}",
                        i + 1,
                        row.iter().sum::<f64>()
                    )));
                }
            }
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("SNR grid must be non-empty and finite".into()));
        }
        if self.packets == 0 || self.symbols_per_packet == 0 || self.iterations == 0 {
            return Err(Error::InvalidArgument("packets, symbols per packet and iterations must be at least 1".into()));
        }
        if self.designs.is_empty() {
            return Err(Error::InvalidArgument("no designs selected".into()));
        }
        if top.sources() != 1 && self.designs.iter().any(|d| d.needs_single_source()) {
            return Err(Error::Unsupported("sum-rate designs need a single source".into()));
        }
        self.feedback.validate()
    }

    /// Budgets of one constraint type.
    pub fn constraint(&self, kind: ConstraintKind, topology: &Topology) -> PowerConstraint {
        let local = self
            .local_budgets
            .clone()
            .unwrap_or_else(|| vec![self.total_power / topology.relay_groups() as f64; topology.relay_groups()]);
        match kind {
            ConstraintKind::Global => PowerConstraint::Global(self.total_power),
            ConstraintKind::Local => PowerConstraint::Local(local),
            ConstraintKind::Individual => PowerConstraint::Individual(self.individual_budgets.clone().unwrap_or_else(|| {
                (1..=topology.relay_groups())
                    .map(|i| vec![local[i - 1] / topology.nodes(i) as f64; topology.nodes(i)])
                    .collect()
            })),
        }
    }

    fn local_budgets_for(&self, topology: &Topology) -> Vec<f64> {
        match self.constraint(ConstraintKind::Local, topology) {
            PowerConstraint::Local(b) => b,
            _ => unreachable!(),
        }
    }
}

/// Result of one design on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub bit_errors: u64,
    pub bits: u64,
    /// Sum rate achieved with the applied gains (sum-rate trials only).
    pub sum_rate: Option<f64>,
    /// MSE or sum-rate trace of the design iterations.
    pub trace: Vec<f64>,
    /// Constraint residual of the designed gains.
    pub design_residual: f64,
    /// Constraint residual of the gains the relays actually apply.
    pub applied_residual: f64,
}

struct DesignedGains {
    gains: GainState,
    constraint: PowerConstraint,
    trace: Vec<f64>,
}

fn design_gains(cfg: &SimConfig, topology: &Topology, channels: &ChannelSet, design: Design) -> Result<DesignedGains> {
    let constraint = cfg.constraint(design.constraint_kind(), topology);
    match design {
        Design::MmseGlobal | Design::MmseLocal | Design::MmseIndividual => {
            let opts = MmseOptions { iterations: cfg.iterations, step: cfg.step, ..Default::default() };
            let r = run_mmse(topology, channels, &constraint, &opts)?;
            Ok(DesignedGains { gains: r.gains, constraint, trace: r.mse_trace })
        }
        Design::MsrQr | Design::MsrPower => {
            let solver = if design == Design::MsrQr { EigenSolver::Qr } else { EigenSolver::Power };
            let opts = MsrOptions { iterations: cfg.iterations, solver, seed: cfg.seed, ..Default::default() };
            let r = run_msr(topology, channels, &cfg.local_budgets_for(topology), &opts)?;
            Ok(DesignedGains { gains: r.gains, constraint, trace: r.sr_trace })
        }
        Design::Equal => Ok(DesignedGains {
            gains: equal_gains(topology, &cfg.local_budgets_for(topology)),
            constraint,
            trace: Vec::new(),
        }),
    }
}

/// Gains known at the fusion centre (quantised, error free) and gains the
/// relays apply (quantised and passed through the BSC).
fn feed_back<R: Rng + ?Sized>(cfg: &SimConfig, gains: &GainState, rng: &mut R) -> Result<(GainState, GainState)> {
    match cfg.feedback {
        Feedback::Perfect => Ok((gains.clone(), gains.clone())),
        Feedback::Bsc { pe, bits_real, bits_imag } => {
            let sent = quantize_feedback(gains, bits_real, bits_imag, 0.0, rng)?;
            let applied = quantize_feedback(gains, bits_real, bits_imag, pe, rng)?;
            Ok((sent, applied))
        }
    }
}

/// Linear receiver (`N_m x N_0`) designed from the gains the fusion centre knows.
fn detection_receiver(topology: &Topology, channels: &ChannelSet, gains: &GainState, design: Design) -> Result<CMatrix> {
    let stats = compute_stats(topology, channels, gains)?;
    match design {
        Design::MsrQr | Design::MsrPower => {
            let solver = if design == Design::MsrQr { EigenSolver::Qr } else { EigenSolver::Power };
            let cascade = build_cascade(topology, channels, gains, &stats)?;
            let w = solve_receiver(&cascade, solver, &MsrOptions { solver, ..Default::default() })?;
            let (rdd, rds) = destination_moments(topology, channels, gains, &stats);
            Ok(scalar_wiener_tap(&w, &rdd, &rds))
        }
        _ => wiener_receiver(topology, channels, gains, &stats),
    }
}

/// `w` followed by the one-tap MMSE scaling of `w^H d` (fixes phase and
/// amplitude for symbol decisions).
pub fn scalar_wiener_tap(w: &CVector, rdd: &CMatrix, rds: &CMatrix) -> CMatrix {
    let energy = w.dotc(&(rdd * w)).re;
    let cross = (rds.adjoint() * w)[0].conj();
    let c = if energy > 0.0 { cross / energy } else { Complex64::new(0.0, 0.0) };
    CMatrix::from_column_slice(w.len(), 1, (w * c).as_slice())
}

fn ber_outcome(
    cfg: &SimConfig,
    topology: &Topology,
    channels: &ChannelSet,
    design: Design,
    payload_seed: &[u64],
    feedback_seed: &[u64],
) -> Result<TrialOutcome> {
    let designed = design_gains(cfg, topology, channels, design)?;
    let (sent, applied) = feed_back(cfg, &designed.gains, &mut stream(cfg.seed, feedback_seed))?;
    let receiver = detection_receiver(topology, channels, &sent, design)?;

    let mut rng = stream(cfg.seed, payload_seed);
    let n0 = topology.sources();
    let len = cfg.symbols_per_packet;
    let bits: Vec<u8> = (0..2 * n0 * len).map(|_| rng.random_range(0..2u8)).collect();
    let symbols = qpsk::modulate(&bits)?;
    // symbol k of source n is bits[2(k n0 + n)..]
    let block = CMatrix::from_fn(n0, len, |n, k| symbols[k * n0 + n]);
    let relay_stats = compute_stats(topology, channels, &applied)?;
    let out = propagate_block(topology, channels, &applied, &relay_stats, &block, &mut rng)?;
    let estimate = receiver.adjoint() * out.d;
    let flat: Vec<Complex64> = (0..len).flat_map(|k| (0..n0).map(move |n| (k, n))).map(|(k, n)| estimate[(n, k)]).collect();
    let decided = qpsk::demodulate(&flat);
    let errors = decided.iter().zip(&bits).filter(|(a, b)| a != b).count() as u64;
    Ok(TrialOutcome {
        bit_errors: errors,
        bits: bits.len() as u64,
        sum_rate: None,
        trace: designed.trace,
        design_residual: designed.constraint.residual(topology, &designed.gains),
        applied_residual: designed.constraint.residual(topology, &applied),
    })
}

fn sumrate_outcome(
    cfg: &SimConfig,
    topology: &Topology,
    channels: &ChannelSet,
    design: Design,
    feedback_seed: &[u64],
) -> Result<TrialOutcome> {
    let designed = design_gains(cfg, topology, channels, design)?;
    let (sent, applied) = feed_back(cfg, &designed.gains, &mut stream(cfg.seed, feedback_seed))?;
    let solver = if design == Design::MsrPower { EigenSolver::Power } else { EigenSolver::Qr };
    let opts = MsrOptions { solver, ..Default::default() };
    let known = compute_stats(topology, channels, &sent)?;
    let w = solve_receiver(&build_cascade(topology, channels, &sent, &known)?, solver, &opts)?;
    let actual = compute_stats(topology, channels, &applied)?;
    let sr = sum_rate(&build_cascade(topology, channels, &applied, &actual)?, &w, topology)?;
    Ok(TrialOutcome {
        bit_errors: 0,
        bits: 0,
        sum_rate: Some(sr),
        trace: designed.trace,
        design_residual: designed.constraint.residual(topology, &designed.gains),
        applied_residual: designed.constraint.residual(topology, &applied),
    })
}

/// Runs one design on one trial, redrawing the channel on numerical failure.
fn with_redraws<F>(cfg: &SimConfig, topology: &Topology, point: usize, trial: usize, design: Design, run: F) -> Result<TrialOutcome>
where
    F: Fn(&ChannelSet, u64) -> Result<TrialOutcome>,
{
    let mut last = None;
    for attempt in 0..=cfg.max_redraws as u64 {
        let channels = draw_channels_with(topology, &mut stream(cfg.seed, &[point as u64, trial as u64, attempt, CHANNEL]));
        if channels.has_zero_link() {
            log::warn!("snr point {point}, trial {trial}: zero channel drawn, redrawing");
            continue;
        }
        match run(&channels, attempt) {
            Ok(o) => return Ok(o),
            Err(e) if e.is_numerical() => {
                log::warn!("snr point {point}, trial {trial}, {design}: {e}; redrawing");
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Degenerate("every channel draw was degenerate".into())))
}

fn design_index(design: Design) -> u64 {
    Design::ALL.iter().position(|d| *d == design).expect("listed") as u64
}

/// All designs of one BER trial (one packet on one channel draw).
pub fn ber_trial(cfg: &SimConfig, topology: &Topology, point: usize, packet: usize) -> Result<Vec<TrialOutcome>> {
    cfg.designs
        .iter()
        .map(|&d| {
            with_redraws(cfg, topology, point, packet, d, |ch, attempt| {
                let base = [point as u64, packet as u64, attempt];
                ber_outcome(
                    cfg,
                    topology,
                    ch,
                    d,
                    &[base[0], base[1], base[2], PAYLOAD],
                    &[base[0], base[1], base[2], FEEDBACK, design_index(d)],
                )
            })
        })
        .collect()
}

/// All designs of one sum-rate trial.
pub fn sumrate_trial(cfg: &SimConfig, topology: &Topology, point: usize, draw: usize) -> Result<Vec<TrialOutcome>> {
    cfg.designs
        .iter()
        .map(|&d| {
            with_redraws(cfg, topology, point, draw, d, |ch, attempt| {
                sumrate_outcome(cfg, topology, ch, d, &[point as u64, draw as u64, attempt, FEEDBACK, design_index(d)])
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub design: Design,
    pub constraint: ConstraintKind,
    pub feedback: String,
    pub bit_errors: u64,
    pub bits: u64,
    pub ber: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub packets: usize,
    /// Largest constraint residual of the designed gains.
    pub max_design_residual: f64,
    /// Mean constraint residual of the applied (fed back) gains.
    pub mean_applied_residual: f64,
    pub max_applied_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumRatePoint {
    pub snr_db: f64,
    pub design: Design,
    pub sum_rate: f64,
    /// Standard error of the mean over draws.
    pub std_error: f64,
    pub draws: usize,
}

/// BER of every configured design at every SNR point.
pub fn run_ber_sweep(cfg: &SimConfig, execution: Execution) -> Result<Vec<BerPoint>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (p, &snr) in cfg.snr_db.iter().enumerate() {
        let topology = cfg.topology(snr)?;
        let trials = map_trials(execution, cfg.packets, |k| ber_trial(cfg, &topology, p, k));
        let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;
        for (j, &design) in cfg.designs.iter().enumerate() {
            let outcomes = trials.iter().map(|t| &t[j]);
            let (errors, bits) = outcomes.clone().fold((0, 0), |(e, b), o| (e + o.bit_errors, b + o.bits));
            let (ci_lo, ci_hi) = wilson_interval(errors, bits);
            let applied: Vec<f64> = outcomes.clone().map(|o| o.applied_residual).collect();
            rows.push(BerPoint {
                snr_db: snr,
                design,
                constraint: design.constraint_kind(),
                feedback: cfg.feedback.label(),
                bit_errors: errors,
                bits,
                ber: errors as f64 / bits as f64,
                ci_lo,
                ci_hi,
                packets: cfg.packets,
                max_design_residual: outcomes.clone().map(|o| o.design_residual).fold(0.0, f64::max),
                mean_applied_residual: applied.iter().sum::<f64>() / applied.len() as f64,
                max_applied_residual: applied.iter().copied().fold(0.0, f64::max),
            });
        }
        log::info!("BER sweep: SNR {snr} dB done ({} packets)", cfg.packets);
    }
    Ok(rows)
}

/// Mean sum rate of every configured design at every SNR point.
pub fn run_sumrate_sweep(cfg: &SimConfig, execution: Execution) -> Result<Vec<SumRatePoint>> {
    cfg.validate()?;
    if cfg.nodes[0] != 1 {
        return Err(Error::Unsupported("sum-rate sweeps need a single source".into()));
    }
    let mut rows = Vec::new();
    for (p, &snr) in cfg.snr_db.iter().enumerate() {
        let topology = cfg.topology(snr)?;
        let trials = map_trials(execution, cfg.packets, |k| sumrate_trial(cfg, &topology, p, k));
        let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;
        for (j, &design) in cfg.designs.iter().enumerate() {
            let values: Vec<f64> = trials.iter().map(|t| t[j].sum_rate.expect("sum-rate trial")).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            rows.push(SumRatePoint { snr_db: snr, design, sum_rate: mean, std_error: (var / n).sqrt(), draws: values.len() });
        }
        log::info!("sum-rate sweep: SNR {snr} dB done ({} draws)", cfg.packets);
    }
    Ok(rows)
}

/// Bit errors of QPSK sent straight over AWGN at the given `Eb/N0` (dB),
/// for checking the simulation plumbing against [`qpsk_awgn_ber`].
pub fn simulate_awgn_qpsk(ebn0_db: f64, bits: u64, seed: u64, execution: Execution) -> Result<(u64, u64)> {
    const CHUNK: u64 = 20_000;
    let ebn0 = 10f64.powf(ebn0_db / 10.0);
    // unit-energy symbols carry two bits: Eb = 1/2
    let n0 = 0.5 / ebn0;
    let chunks = bits.div_ceil(CHUNK) as usize;
    let counts = map_trials(execution, chunks, |k| -> Result<(u64, u64)> {
        let n = (bits - k as u64 * CHUNK).min(CHUNK) & !1;
        let mut rng = stream(seed, &[k as u64]);
        let tx: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let rx: Vec<Complex64> = qpsk::modulate(&tx)?.into_iter().map(|s| s + complex_gaussian(&mut rng, n0)).collect();
        let errors = qpsk::demodulate(&rx).iter().zip(&tx).filter(|(a, b)| a != b).count() as u64;
        Ok((errors, n))
    });
    counts.into_iter().try_fold((0, 0), |(e, b), r| r.map(|(e2, b2)| (e + e2, b + b2)))
}
