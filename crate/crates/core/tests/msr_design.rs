use afrelay::linalg::{max_abs, CMatrix, CVector};
use afrelay::msr::{
    build_cascade, build_group_matrices, equal_gains, evaluate, rayleigh_quotient, run_msr, solve_gains, solve_receiver,
    EigenSolver, MsrOptions,
};
use afrelay::network::{compute_stats, stats_with_normalizers, destination_moments, draw_channels, propagate_block, GainState, Topology};
use afrelay::rng::{complex_gaussian, stream};
use nalgebra::DVector;
use num_complex::Complex64;

fn feasible_gains(t: &Topology, budgets: &[f64], seed: u64) -> GainState {
    let mut rng = stream(seed, &[11]);
    GainState::new(
        (1..=t.relay_groups())
            .map(|i| {
                let a = CVector::from_fn(t.nodes(i), |_, _| complex_gaussian(&mut rng, 1.0));
                let scale = (budgets[i - 1] / (t.nodes(i + 1) as f64 * a.norm_squared())).sqrt();
                a * Complex64::new(scale, 0.0)
            })
            .collect(),
    )
}

/// Destination quotient with the relay normalisers held at `frozen`.
fn quotient_at(t: &Topology, ch: &afrelay::ChannelSet, g: &GainState, w: &CVector, frozen: &[DVector<f64>]) -> f64 {
    let stats = stats_with_normalizers(t, ch, g, frozen).unwrap();
    rayleigh_quotient(&build_cascade(t, ch, g, &stats).unwrap(), w).unwrap()
}

#[test]
fn cascade_reproduces_the_destination_covariance() {
    let t = Topology::with_snr_db(vec![1, 3, 2, 4, 2], 7.0).unwrap();
    for seed in 0..10 {
        let ch = draw_channels(&t, seed);
        let g = feasible_gains(&t, &[2.0, 3.0, 1.0], seed);
        let stats = compute_stats(&t, &ch, &g).unwrap();
        let cas = build_cascade(&t, &ch, &g, &stats).unwrap();
        let (rdd, _) = destination_moments(&t, &ch, &g, &stats);
        let model = cas.phi.scale(t.sigma_s2()) + cas.z.scale(t.sigma_n2());
        assert!(max_abs(&(model - &rdd)) <= 1e-12 * max_abs(&rdd));
    }
}

#[test]
fn cascade_noise_term_matches_simulation() {
    // noise-only propagation: E(dd^H) = sigma_n^2 Z
    let t = Topology::with_snr_db(vec![1, 2, 3, 2], 3.0).unwrap();
    let ch = draw_channels(&t, 4);
    let g = feasible_gains(&t, &[2.0, 2.0], 4);
    let stats = compute_stats(&t, &ch, &g).unwrap();
    let cas = build_cascade(&t, &ch, &g, &stats).unwrap();
    let len = 200_000;
    let silent = CMatrix::zeros(1, len);
    let p = propagate_block(&t, &ch, &g, &stats, &silent, &mut stream(2, &[0])).unwrap();
    let sample = &p.d * p.d.adjoint() / Complex64::new(len as f64, 0.0);
    let exact = cas.z.scale(t.sigma_n2());
    assert!(max_abs(&(sample - &exact)) < 0.02 * max_abs(&exact));
}

#[test]
fn gain_update_beats_random_feasible_gains_for_a_fixed_receiver() {
    // exact for the last group; upstream groups are optimal with downstream normalisers frozen
    let t = Topology::with_snr_db(vec![1, 3, 3, 2], 10.0).unwrap();
    let budgets = [3.0, 3.0];
    let opts = MsrOptions::default();
    for seed in 0..20 {
        let ch = draw_channels(&t, 40 + seed);
        let g = feasible_gains(&t, &budgets, seed);
        let stats = compute_stats(&t, &ch, &g).unwrap();
        let cas = build_cascade(&t, &ch, &g, &stats).unwrap();
        let w = solve_receiver(&cas, EigenSolver::Qr, &opts).unwrap();
        for i in 1..=t.relay_groups() {
            let gm = build_group_matrices(&t, &ch, &stats, &cas, &w, i, budgets[i - 1]).unwrap();
            let a = solve_gains(&gm, EigenSolver::Qr, budgets[i - 1], t.nodes(i + 1), &opts).unwrap();
            let mut best = g.clone();
            *best.group_mut(i) = a;
            let designed = quotient_at(&t, &ch, &best, &w, &stats.normalizers);
            for trial in 0..200 {
                let mut other = g.clone();
                *other.group_mut(i) = feasible_gains(&t, &budgets, 10_000 * seed + trial).group(i).clone();
                let q = quotient_at(&t, &ch, &other, &w, &stats.normalizers);
                assert!(q <= designed * (1.0 + 1e-9), "seed {seed} group {i}: random {q} > designed {designed}");
            }
        }
    }
}

#[test]
fn solvers_agree() {
    let t = Topology::with_snr_db(vec![1, 4, 4, 2], 12.0).unwrap();
    for seed in 0..20 {
        let ch = draw_channels(&t, 300 + seed);
        let run = |solver| {
            run_msr(&t, &ch, &[4.0, 4.0], &MsrOptions { solver, iterations: 3, power_iterations: 5000, ..Default::default() })
                .unwrap()
                .sum_rate()
        };
        let (qr, pw) = (run(EigenSolver::Qr), run(EigenSolver::Power));
        assert!((qr - pw).abs() <= 1e-6 * qr, "seed {seed}: {qr} vs {pw}");
    }
}

#[test]
fn design_improves_on_equal_power() {
    let t = Topology::with_snr_db(vec![1, 4, 4, 2], 10.0).unwrap();
    let opts = MsrOptions::default();
    let draws = 50;
    let mut gain = 0.0;
    for seed in 0..draws {
        let ch = draw_channels(&t, 700 + seed);
        let designed = run_msr(&t, &ch, &[4.0, 4.0], &opts).unwrap().sum_rate();
        let (_, baseline) = evaluate(&t, &ch, &equal_gains(&t, &[4.0, 4.0]), &opts).unwrap();
        gain += designed - baseline;
    }
    assert!(gain / draws as f64 > 0.0);
}
