use afrelay::complexity::emit_complexity_curves;
use afrelay::mmse::{initial_gains, optimal_mse, run_mmse, MmseOptions, Multipliers};
use afrelay::msr::{equal_gains, evaluate, run_msr, EigenSolver, MsrOptions};
use afrelay::network::draw_channels;
use afrelay::sim::{run_ber_sweep, run_sumrate_sweep, Design, Execution};
use afrelay::{ConstraintKind, GainState, PowerConstraint, Topology};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::OutDir;
use crate::CliError;

#[derive(Serialize)]
struct BerRow<'a> {
    snr_db: f64,
    design: &'a str,
    constraint: String,
    feedback: &'a str,
    ber: f64,
    ber_ci_lo: f64,
    ber_ci_hi: f64,
    packets: usize,
}

/// Error counts and power accounting behind each BER row.
#[derive(Serialize)]
struct BerPowerRow<'a> {
    snr_db: f64,
    design: &'a str,
    bit_errors: u64,
    bits: u64,
    max_design_residual: f64,
    mean_applied_residual: f64,
    max_applied_residual: f64,
}

#[derive(Serialize)]
struct SumRateRow<'a> {
    snr_db: f64,
    design: &'a str,
    sr_bps_hz: f64,
    draws: usize,
}

#[derive(Serialize)]
struct ComplexityRow<'a> {
    #[serde(rename = "N")]
    relay_nodes: usize,
    scheme: &'a str,
    component: &'a str,
    multiplications: u64,
    additions: u64,
    divisions: u64,
}

#[derive(Serialize)]
struct TraceRow<'a> {
    iteration: usize,
    metric: &'a str,
    value: f64,
}

#[derive(Serialize)]
struct GainRow {
    group: usize,
    node: usize,
    gain_re: f64,
    gain_im: f64,
    /// `N_{i+1} |a|^2`, the node's share of the relay power.
    power: f64,
}

#[derive(Serialize)]
struct MultiplierRow {
    group: usize,
    /// Zero when the multiplier belongs to the whole group (or network).
    node: usize,
    lambda: f64,
}

#[derive(Serialize)]
struct ReceiverRow {
    row: usize,
    col: usize,
    re: f64,
    im: f64,
}

pub fn ber(cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    let rows = run_ber_sweep(&cfg.sim, Execution::Parallel)?;
    let main: Vec<BerRow> = rows
        .iter()
        .map(|r| BerRow {
            snr_db: r.snr_db,
            design: r.design.name(),
            constraint: r.constraint.to_string(),
            feedback: &r.feedback,
            ber: r.ber,
            ber_ci_lo: r.ci_lo,
            ber_ci_hi: r.ci_hi,
            packets: r.packets,
        })
        .collect();
    let power: Vec<BerPowerRow> = rows
        .iter()
        .map(|r| BerPowerRow {
            snr_db: r.snr_db,
            design: r.design.name(),
            bit_errors: r.bit_errors,
            bits: r.bits,
            max_design_residual: r.max_design_residual,
            mean_applied_residual: r.mean_applied_residual,
            max_applied_residual: r.max_applied_residual,
        })
        .collect();
    out.write_csv("ber.csv", &main)?;
    out.write_csv("ber_power.csv", &power)
}

pub fn sumrate(cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    let rows: Vec<SumRateRow> = run_sumrate_sweep(&cfg.sim, Execution::Parallel)?
        .iter()
        .map(|r| SumRateRow { snr_db: r.snr_db, design: r.design.name(), sr_bps_hz: r.sum_rate, draws: r.draws })
        .collect();
    out.write_csv("sumrate.csv", &rows)
}

pub fn complexity(cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    let rows = emit_complexity_curves(&cfg.complexity)?;
    let rows: Vec<ComplexityRow> = rows
        .iter()
        .map(|r| ComplexityRow {
            relay_nodes: r.relay_nodes,
            scheme: r.scheme.name(),
            component: r.component_name(),
            multiplications: r.count.multiplications,
            additions: r.count.additions,
            divisions: r.count.divisions,
        })
        .collect();
    out.write_csv("complexity.csv", &rows)
}

fn gain_rows(top: &Topology, gains: &GainState) -> Vec<GainRow> {
    let mut rows = Vec::new();
    for i in 1..=top.relay_groups() {
        let next = top.nodes(i + 1) as f64;
        for (j, a) in gains.group(i).iter().enumerate() {
            rows.push(GainRow { group: i, node: j + 1, gain_re: a.re, gain_im: a.im, power: next * a.norm_sqr() });
        }
    }
    rows
}

fn multiplier_rows(m: &Multipliers) -> Vec<MultiplierRow> {
    match m {
        Multipliers::Global(l) => vec![MultiplierRow { group: 0, node: 0, lambda: *l }],
        Multipliers::Local(ls) => {
            ls.iter().enumerate().map(|(i, &l)| MultiplierRow { group: i + 1, node: 0, lambda: l }).collect()
        }
        Multipliers::Individual(ls) => ls
            .iter()
            .enumerate()
            .flat_map(|(i, g)| g.iter().enumerate().map(move |(j, &l)| MultiplierRow { group: i + 1, node: j + 1, lambda: l }))
            .collect(),
    }
}

fn receiver_rows(w: &afrelay::linalg::CMatrix) -> Vec<ReceiverRow> {
    let mut rows = Vec::new();
    for r in 0..w.nrows() {
        for c in 0..w.ncols() {
            rows.push(ReceiverRow { row: r + 1, col: c + 1, re: w[(r, c)].re, im: w[(r, c)].im });
        }
    }
    rows
}

fn trace_rows<'a>(metric: &'a str, start: f64, trace: &[f64]) -> Vec<TraceRow<'a>> {
    std::iter::once(start).chain(trace.iter().copied()).enumerate().map(|(k, value)| TraceRow { iteration: k, metric, value }).collect()
}

/// One-shot design on the channel drawn from the configured seed.
pub fn design(cfg: &RunConfig, out: &mut OutDir) -> Result<(), CliError> {
    let sim = &cfg.sim;
    let top = sim.topology(cfg.design.snr_db)?;
    let channels = draw_channels(&top, sim.seed);
    let design = cfg.design.design;
    let local = match sim.constraint(ConstraintKind::Local, &top) {
        PowerConstraint::Local(b) => b,
        _ => unreachable!("local constraint"),
    };
    match design {
        Design::MmseGlobal | Design::MmseLocal | Design::MmseIndividual => {
            let constraint = sim.constraint(design.constraint_kind(), &top);
            let (_, start) = optimal_mse(&top, &channels, &initial_gains(&top, &constraint))?;
            let opts = MmseOptions { iterations: sim.iterations, step: sim.step, ..Default::default() };
            let r = run_mmse(&top, &channels, &constraint, &opts)?;
            log::info!("{design}: MSE {:.6} after {} iterations", r.mse(), r.mse_trace.len());
            out.write_csv("design_trace.csv", &trace_rows("mse", start, &r.mse_trace))?;
            out.write_csv("design_gains.csv", &gain_rows(&top, &r.gains))?;
            out.write_csv("design_multipliers.csv", &multiplier_rows(&r.multipliers))?;
            out.write_csv("design_receiver.csv", &receiver_rows(&r.receiver))
        }
        Design::MsrQr | Design::MsrPower => {
            let solver = if design == Design::MsrQr { EigenSolver::Qr } else { EigenSolver::Power };
            let opts = MsrOptions { iterations: sim.iterations, solver, seed: sim.seed, ..Default::default() };
            let (_, start) = evaluate(&top, &channels, &equal_gains(&top, &local), &opts)?;
            let r = run_msr(&top, &channels, &local, &opts)?;
            log::info!("{design}: sum rate {:.6} bps/Hz after {} iterations", r.sum_rate(), r.sr_trace.len());
            out.write_csv("design_trace.csv", &trace_rows("sum_rate", start, &r.sr_trace))?;
            out.write_csv("design_gains.csv", &gain_rows(&top, &r.gains))?;
            let w = afrelay::linalg::CMatrix::from_column_slice(r.receiver.len(), 1, r.receiver.as_slice());
            out.write_csv("design_receiver.csv", &receiver_rows(&w))
        }
        Design::Equal => {
            let gains = equal_gains(&top, &local);
            let (w, mse) = optimal_mse(&top, &channels, &gains)?;
            out.write_csv("design_trace.csv", &trace_rows("mse", mse, &[]))?;
            out.write_csv("design_gains.csv", &gain_rows(&top, &gains))?;
            out.write_csv("design_receiver.csv", &receiver_rows(&w))
        }
    }
}
