//! Acceptance suite: one check per criterion, one PASS/FAIL line each.
//!
//! Run all with `cargo test -p afrelay --test acceptance`; pass numbers
//! (`-- 3 7`) to run a subset. Exits non-zero if any selected check fails.

use std::time::Instant;

use afrelay::complexity::{count_mmse, total, Component, Scheme};
use afrelay::linalg::{CMatrix, CVector};
use afrelay::mmse::{initial_gains, lagrangian, optimal_mse, run_mmse, MmseOptions, StepControl};
use afrelay::msr::{self, build_cascade, rayleigh_quotient, run_msr, EigenSolver, MsrOptions};
use afrelay::network::{compute_stats, draw_channels, propagate_block, ConstraintKind, PowerConstraint, Topology};
use afrelay::rng::{complex_gaussian, stream};
use afrelay::sim::{
    qpsk, qpsk_awgn_ber, run_ber_sweep, run_sumrate_sweep, simulate_awgn_qpsk, BerPoint, Design, Execution, Feedback,
    SimConfig,
};
use afrelay::ConstraintKind::{Global, Individual, Local};
use num_complex::Complex64;
use rand::Rng;

const KINDS: [ConstraintKind; 3] = [Global, Local, Individual];

struct Verdict {
    pass: bool,
    detail: String,
}

type Check = (usize, &'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn default_topology(snr_db: f64) -> Topology {
    Topology::with_snr_db(vec![1, 4, 4, 2], snr_db).unwrap()
}

/// Every MMSE and MSR design meets its budget on 200 draws.
fn constraint_satisfaction() -> Verdict {
    let t = default_topology(10.0);
    let mut worst: f64 = 0.0;
    let mut designs = 0;
    for seed in 0..200 {
        let ch = draw_channels(&t, 10_000 + seed);
        for kind in KINDS {
            let c = PowerConstraint::equal_split(kind, &t, 8.0);
            let r = run_mmse(&t, &ch, &c, &MmseOptions { iterations: 10, ..Default::default() }).unwrap();
            worst = worst.max(c.residual(&t, &r.gains));
            designs += 1;
        }
        for solver in [EigenSolver::Qr, EigenSolver::Power] {
            let r = run_msr(&t, &ch, &[4.0, 4.0], &MsrOptions { iterations: 10, solver, ..Default::default() }).unwrap();
            worst = worst.max(PowerConstraint::Local(vec![4.0, 4.0]).residual(&t, &r.gains));
            designs += 1;
        }
    }
    verdict(worst <= 1e-8, format!("{designs} designs, worst relative residual {worst:.2e} (limit 1e-8)"))
}

fn violations(start: f64, trace: &[f64], worse: impl Fn(f64, f64) -> bool) -> (bool, f64) {
    let mut prev = start;
    let mut bad = false;
    let mut worst: f64 = 0.0;
    for &v in trace {
        if worse(prev, v) {
            bad = true;
        }
        worst = worst.max((v - prev).abs() * if worse(prev, v) { 1.0 } else { 0.0 });
        prev = v;
    }
    (bad, worst)
}

fn monotonicity_with(step: StepControl) -> (usize, usize, usize, f64) {
    let t = default_topology(10.0);
    let (mut mse_bad, mut sr_bad, mut runs) = (0, 0, 0);
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let ch = draw_channels(&t, 20_000 + seed);
        for kind in KINDS {
            let c = PowerConstraint::equal_split(kind, &t, 8.0);
            let (_, start) = optimal_mse(&t, &ch, &initial_gains(&t, &c)).unwrap();
            let r = run_mmse(&t, &ch, &c, &MmseOptions { iterations: 10, step, ..Default::default() }).unwrap();
            let (bad, w) = violations(start, &r.mse_trace, |p, v| v > p + 1e-9);
            mse_bad += usize::from(bad);
            worst = worst.max(w);
            runs += 1;
        }
        if step == StepControl::Direct {
            for solver in [EigenSolver::Qr, EigenSolver::Power] {
                let opts = MsrOptions { iterations: 10, solver, ..Default::default() };
                let (_, start) = msr::evaluate(&t, &ch, &msr::equal_gains(&t, &[4.0, 4.0]), &opts).unwrap();
                let r = run_msr(&t, &ch, &[4.0, 4.0], &opts).unwrap();
                let (bad, w) = violations(start, &r.sr_trace, |p, v| v < p - 1e-9);
                sr_bad += usize::from(bad);
                worst = worst.max(w);
                runs += 1;
            }
        }
    }
    (mse_bad, sr_bad, runs, worst)
}

/// MSE traces non-increasing and SR traces non-decreasing over 10 iterations.
fn alternating_monotonicity() -> Verdict {
    let (mse_bad, sr_bad, runs, worst) = monotonicity_with(StepControl::Direct);
    verdict(
        mse_bad + sr_bad == 0,
        format!(
            "{mse_bad}/300 MSE traces and {sr_bad}/200 SR traces violate monotonicity ({runs} runs, worst step {worst:.2e}); \
             the normalisers move with upstream gains, so the closed-form updates are not exact block minimisers"
        ),
    )
}

/// Central differences of the Lagrangian vanish at converged MMSE points.
fn stationarity() -> Verdict {
    let t = Topology::with_snr_db(vec![1, 2, 2, 1], 10.0).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut iterations = 0;
    for seed in 0..20 {
        let ch = draw_channels(&t, 30_000 + seed);
        for kind in KINDS {
            let c = PowerConstraint::equal_split(kind, &t, 4.0);
            let opts = MmseOptions { iterations: 20_000, tolerance: Some(1e-13), ..Default::default() };
            let r = run_mmse(&t, &ch, &c, &opts).unwrap();
            iterations = iterations.max(r.mse_trace.len());
            let eval = |gains: &afrelay::GainState, w: &CMatrix| {
                lagrangian(&t, &ch, gains, w, &r.normalizers, &c, &r.multipliers).unwrap()
            };
            for dir in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                for k in 0..r.receiver.len() {
                    let mut plus = r.receiver.clone();
                    let mut minus = r.receiver.clone();
                    plus[k] += dir * h;
                    minus[k] -= dir * h;
                    worst = worst.max(((eval(&r.gains, &plus) - eval(&r.gains, &minus)) / (2.0 * h)).abs());
                }
                for i in 1..=t.relay_groups() {
                    for j in 0..t.nodes(i) {
                        let mut plus = r.gains.clone();
                        let mut minus = r.gains.clone();
                        plus.group_mut(i)[j] += dir * h;
                        minus.group_mut(i)[j] -= dir * h;
                        worst = worst.max(((eval(&plus, &r.receiver) - eval(&minus, &r.receiver)) / (2.0 * h)).abs());
                    }
                }
            }
        }
    }
    verdict(worst <= 1e-5, format!("60 designs, largest |dL| {worst:.2e} (limit 1e-5), up to {iterations} iterations"))
}

/// Designed receivers beat random ones; QR and power paths agree.
fn rayleigh_optimality() -> Verdict {
    let t = default_topology(10.0);
    let mut beaten = 0;
    let mut worst_gap: f64 = 0.0;
    let mut rng = stream(7, &[4]);
    for seed in 0..100 {
        let ch = draw_channels(&t, 40_000 + seed);
        let qr = run_msr(&t, &ch, &[4.0, 4.0], &MsrOptions::default()).unwrap();
        let pw = run_msr(&t, &ch, &[4.0, 4.0], &MsrOptions { solver: EigenSolver::Power, ..Default::default() }).unwrap();
        worst_gap = worst_gap.max((qr.sum_rate() - pw.sum_rate()).abs() / qr.sum_rate());
        let stats = compute_stats(&t, &ch, &qr.gains).unwrap();
        let cascade = build_cascade(&t, &ch, &qr.gains, &stats).unwrap();
        let best = rayleigh_quotient(&cascade, &qr.receiver).unwrap();
        let all = (0..1000).all(|_| {
            let w = CVector::from_fn(2, |_, _| complex_gaussian(&mut rng, 1.0));
            rayleigh_quotient(&cascade, &w).unwrap() <= best
        });
        beaten += usize::from(all);
    }
    verdict(
        beaten == 100 && worst_gap <= 1e-6,
        format!("designed w beat 1000 random receivers on {beaten}/100 draws; QR vs power SR gap {worst_gap:.2e} (limit 1e-6)"),
    )
}

/// Closed-form relay statistics against sample moments of 10^5 transmissions.
fn relay_statistics() -> Verdict {
    let t = default_topology(10.0);
    let ch = draw_channels(&t, 50_000);
    let design = run_mmse(&t, &ch, &PowerConstraint::Global(8.0), &MmseOptions::default()).unwrap();
    let stats = compute_stats(&t, &ch, &design.gains).unwrap();
    let groups = t.relay_groups();
    let mut ryy: Vec<CMatrix> = (1..=groups).map(|i| CMatrix::zeros(t.nodes(i), t.nodes(i))).collect();
    let mut rys: Vec<CMatrix> = (1..=groups).map(|i| CMatrix::zeros(t.nodes(i), 1)).collect();
    let (chunks, len) = (10, 10_000);
    let mut rng = stream(5, &[5]);
    for _ in 0..chunks {
        let bits: Vec<u8> = (0..2 * len).map(|_| rng.random_range(0..2u8)).collect();
        let s = CMatrix::from_row_slice(1, len, &qpsk::modulate(&bits).unwrap());
        let out = propagate_block(&t, &ch, &design.gains, &stats, &s, &mut rng).unwrap();
        for i in 0..groups {
            ryy[i] += &out.y[i] * out.y[i].adjoint();
            rys[i] += &out.y[i] * s.adjoint();
        }
    }
    let n = (chunks * len) as f64;
    let mut worst: f64 = 0.0;
    for i in 0..groups {
        for (sample, exact) in [(&ryy[i], stats.ryy(i + 1)), (&rys[i], stats.rys(i + 1))] {
            let scale = exact.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let dev = (sample / Complex64::new(n, 0.0) - exact).iter().map(|z| z.norm()).fold(0.0, f64::max);
            worst = worst.max(dev / scale);
        }
    }
    verdict(worst <= 0.05, format!("largest elementwise deviation {:.2}% of the matrix scale (limit 5%)", 100.0 * worst))
}

fn ber_of(rows: &[BerPoint], design: Design) -> &BerPoint {
    rows.iter().find(|r| r.design == design).unwrap()
}

/// BER ordering of the MMSE designs against equal power at 15 dB.
fn ber_ordering() -> Verdict {
    let cfg = SimConfig {
        snr_db: vec![15.0],
        packets: 400,
        designs: vec![Design::MmseGlobal, Design::MmseLocal, Design::MmseIndividual, Design::Equal],
        seed: 6,
        ..Default::default()
    };
    let rows = run_ber_sweep(&cfg, Execution::Parallel).unwrap();
    let b: Vec<&BerPoint> = cfg.designs.iter().map(|&d| ber_of(&rows, d)).collect();
    let ordered = b.windows(2).all(|w| w[0].ber <= w[1].ber);
    let separated = b[0].ci_hi < b[3].ci_lo;
    let text: Vec<String> = b.iter().map(|r| format!("{} {:.3e}", r.design, r.ber)).collect();
    let mut detail = format!("{} bits/point: {}; global/equal intervals disjoint: {separated}", b[0].bits, text.join(", "));
    if b[0].ber > b[1].ber {
        detail.push_str("; global above local: with normalisers frozen the joint update misjudges the power split between groups");
    }
    verdict(ordered && separated, detail)
}

/// MSR sum rate above equal power at every SNR point.
fn msr_above_equal() -> Verdict {
    let cfg = SimConfig {
        packets: 500,
        designs: vec![Design::MsrQr, Design::MsrPower, Design::Equal],
        seed: 7,
        ..Default::default()
    };
    let rows = run_sumrate_sweep(&cfg, Execution::Parallel).unwrap();
    let mut ok = true;
    let mut margin = f64::INFINITY;
    for &snr in &cfg.snr_db {
        let at = |d: Design| rows.iter().find(|r| r.snr_db == snr && r.design == d).unwrap().sum_rate;
        for d in [Design::MsrQr, Design::MsrPower] {
            ok &= at(d) > at(Design::Equal);
            margin = margin.min(at(d) - at(Design::Equal));
        }
    }
    verdict(ok, format!("{} SNR points, 500 draws each, smallest MSR margin {margin:.4} bps/Hz", cfg.snr_db.len()))
}

/// BER and sum rate degrade as the feedback crossover probability grows.
fn feedback_trend() -> Verdict {
    let pes = [0.0, 1e-3, 1e-2];
    let base = SimConfig { snr_db: vec![10.0], seed: 8, ..Default::default() };
    let mut ber = Vec::new();
    let mut sr = Vec::new();
    for pe in pes {
        let feedback = Feedback::Bsc { pe, bits_real: 4, bits_imag: 4 };
        let cfg = SimConfig { feedback, packets: 400, designs: vec![Design::MmseGlobal, Design::MmseLocal, Design::MmseIndividual], ..base.clone() };
        ber.push(run_ber_sweep(&cfg, Execution::Parallel).unwrap());
        let cfg = SimConfig { feedback, packets: 500, designs: vec![Design::MsrQr], ..base.clone() };
        sr.push(run_sumrate_sweep(&cfg, Execution::Parallel).unwrap()[0].clone());
    }
    let mut ok = true;
    let mut notes = Vec::new();
    for d in [Design::MmseGlobal, Design::MmseLocal, Design::MmseIndividual] {
        let pts: Vec<&BerPoint> = ber.iter().map(|rows| ber_of(rows, d)).collect();
        // no step may improve significantly, and the end point must be worse
        let steps = pts.windows(2).all(|w| w[1].ci_hi >= w[0].ci_lo && w[1].ber >= w[0].ci_lo);
        ok &= steps && pts[2].ber > pts[0].ber;
        notes.push(format!("{d} {:.2e}/{:.2e}/{:.2e}", pts[0].ber, pts[1].ber, pts[2].ber));
    }
    let sr_steps = sr.windows(2).all(|w| w[1].sum_rate <= w[0].sum_rate + 1.96 * (w[0].std_error + w[1].std_error));
    ok &= sr_steps && sr[2].sum_rate < sr[0].sum_rate;
    notes.push(format!("msr-qr SR {:.4}/{:.4}/{:.4}", sr[0].sum_rate, sr[1].sum_rate, sr[2].sum_rate));
    verdict(ok, format!("pe 0/1e-3/1e-2 at 10 dB: {}", notes.join(", ")))
}

/// Qualitative complexity facts.
fn complexity_facts() -> Verdict {
    let mut ok = true;
    for n in 1..=12 {
        for nodes in [vec![1, n, n, 2], vec![2, n, n + 1, n, 3], vec![1, n, 2]] {
            let g = count_mmse(&nodes, Global, 10).unwrap();
            let l = count_mmse(&nodes, Local, 10).unwrap();
            for comp in [Component::Multiplier, Component::Gains] {
                let pick = |rows: &[afrelay::complexity::ComponentCount]| rows.iter().find(|r| r.component == comp).unwrap().count;
                ok &= pick(&g) == pick(&l);
            }
        }
    }
    for n in 2..=10 {
        let nodes = [1, n, n, 2];
        let mult = |s| total(&nodes, s, 10).unwrap().multiplications;
        ok &= mult(Scheme::MmseIndividual) < mult(Scheme::MmseGlobal) && mult(Scheme::MmseIndividual) < mult(Scheme::MmseLocal);
        ok &= mult(Scheme::MsrPower) < mult(Scheme::MsrQr);
    }
    verdict(ok, "global and local rows identical; individual cheapest and power method below QR for N = 2..10")
}

/// Relay-free QPSK over AWGN against the Q-function.
fn awgn_calibration() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for ebn0_db in [0.0, 4.0, 7.0] {
        let (e, n) = simulate_awgn_qpsk(ebn0_db, 1_000_000, 10, Execution::Parallel).unwrap();
        let p = qpsk_awgn_ber(10f64.powf(ebn0_db / 10.0));
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let z = (e as f64 / n as f64 - p) / sigma;
        ok &= z.abs() <= 3.0;
        notes.push(format!("{ebn0_db} dB: {:.3e} vs {p:.3e} ({z:+.2} sigma)", e as f64 / n as f64));
    }
    verdict(ok, format!("10^6 bits per point; {}", notes.join(", ")))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let filtered_out = std::env::args().skip(1).any(|a| !a.starts_with('-') && a.parse::<usize>().is_err());
    if filtered_out && selected.is_empty() {
        // a name filter meant for the regular test binaries
        return;
    }
    let checks: [Check; 10] = [
        (1, "constraint satisfaction", constraint_satisfaction),
        (2, "alternating monotonicity", alternating_monotonicity),
        (3, "stationarity oracle", stationarity),
        (4, "Rayleigh-quotient optimality", rayleigh_optimality),
        (5, "relay statistics", relay_statistics),
        (6, "BER ordering at 15 dB", ber_ordering),
        (7, "MSR sum rate above equal power", msr_above_equal),
        (8, "feedback-error trend", feedback_trend),
        (9, "complexity tables", complexity_facts),
        (10, "AWGN calibration", awgn_calibration),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in checks {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id:>2} {name}: {} ({:.1} s)", v.detail, start.elapsed().as_secs_f64());
        if !v.pass {
            failed.push(id);
        }
        if id == 2 {
            let start = Instant::now();
            let (bad, _, runs, worst) = monotonicity_with(StepControl::Monotone);
            println!(
                "[INFO] criterion  2 with backtracking step control: {bad}/{runs} MSE traces violate monotonicity (worst step {worst:.2e}) ({:.1} s)",
                start.elapsed().as_secs_f64()
            );
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
