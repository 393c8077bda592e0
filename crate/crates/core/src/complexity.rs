//! Closed-form arithmetic cost of one design iteration.
//!
//! The polynomials are evaluated literally, per component (receiver,
//! multiplier, gains). Fractional coefficients always combine to integers,
//! so everything is computed in exact integer arithmetic. Root finding for
//! the multipliers is not counted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ConstraintKind;

/// Sweep cap used for the published curves.
pub const DEFAULT_SWEEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpCount {
    pub multiplications: u64,
    pub additions: u64,
    pub divisions: u64,
}

impl std::ops::Add for OpCount {
    type Output = OpCount;
    fn add(self, o: OpCount) -> OpCount {
        OpCount {
            multiplications: self.multiplications + o.multiplications,
            additions: self.additions + o.additions,
            divisions: self.divisions + o.divisions,
        }
    }
}

impl std::iter::Sum for OpCount {
    fn sum<I: Iterator<Item = OpCount>>(iter: I) -> OpCount {
        iter.fold(OpCount::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
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
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::MmseGlobal, Scheme::MmseLocal, Scheme::MmseIndividual, Scheme::MsrQr, Scheme::MsrPower];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::MmseGlobal => "mmse-global",
            Scheme::MmseLocal => "mmse-local",
            Scheme::MmseIndividual => "mmse-individual",
            Scheme::MsrQr => "msr-qr",
            Scheme::MsrPower => "msr-power",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    /// MMSE receive matrix.
    #[serde(rename = "W")]
    Receiver,
    /// Lagrange multiplier(s).
    #[serde(rename = "lambda")]
    Multiplier,
    /// Relay gains.
    #[serde(rename = "a")]
    Gains,
    /// MSR receive vector.
    #[serde(rename = "w")]
    ReceiveVector,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::Receiver => "W",
            Component::Multiplier => "lambda",
            Component::Gains => "a",
            Component::ReceiveVector => "w",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentCount {
    pub scheme: Scheme,
    pub component: Component,
    pub count: OpCount,
}

fn check_sizes(nodes: &[usize], iterations: usize) -> Result<()> {
    if nodes.len() < 3 || nodes.contains(&0) {
        return Err(Error::InvalidArgument(format!("need m >= 2 and every N_i >= 1, got {nodes:?}")));
    }
    if iterations == 0 {
        return Err(Error::InvalidArgument("eigen-solver iteration count must be at least 1".into()));
    }
    Ok(())
}

fn count(m: i64, a: i64, d: i64) -> OpCount {
    let nonneg = |x: i64| u64::try_from(x).expect("operation counts are non-negative for admissible sizes");
    OpCount { multiplications: nonneg(m), additions: nonneg(a), divisions: nonneg(d) }
}

/// `n (n - 1)(4n + 1) / 6`.
fn tri(n: i64) -> i64 {
    n * (n - 1) * (4 * n + 1) / 6
}

/// `n (3n - 1) / 2`.
fn half(n: i64) -> i64 {
    n * (3 * n - 1) / 2
}

/// Multiplications of one QR eigen-sweep: `13/6 n^3 + 3/2 n^2 + 1/3 n - 2`.
fn sweep_mults(n: i64) -> i64 {
    (13 * n * n * n + 9 * n * n + 2 * n - 12) / 6
}

/// Additions of one QR eigen-sweep: `13/6 n^3 - n^2 - 1/6 n + 1`.
fn sweep_adds(n: i64) -> i64 {
    (13 * n * n * n - 6 * n * n - n + 6) / 6
}

/// Per-iteration counts of an MMSE design, one entry per component.
pub fn count_mmse(nodes: &[usize], kind: ConstraintKind, n_q: usize) -> Result<Vec<ComponentCount>> {
    check_sizes(nodes, n_q)?;
    let n: Vec<i64> = nodes.iter().map(|&x| x as i64).collect();
    let m = n.len() - 1;
    let (n0, nm, nl) = (n[0], n[m], n[m - 1]);
    let q = n_q as i64;
    let groups = 1..m;
    let inner = 2..m;

    let mut wm = tri(nm) + (n0 + nl) * nm * nm + nl * nl * nm + n0 * nl * nm + nl * nm;
    let mut wa = tri(nm) + (n0 + nl) * nm * nm + nl * nl * nm + n0 * nl * nm - nm * nm + 2 * n0 * nm + nl * nm + nm;
    for i in inner.clone() {
        let (p, c) = (n[i - 1], n[i]);
        wm += 2 * p * p * c + p * c * c + n0 * p * c + 4 * p * c + 2 * c;
        wa += 2 * p * c * c + n0 * (p - 1) * c - c * c + c;
    }
    let receiver = count(wm, wa, half(nm));

    let chain: i64 = (1..m - 1).map(|i| n[i] * n[i + 1] + n[i + 1]).sum();
    let scheme;
    let (multiplier, gains) = match kind {
        ConstraintKind::Global | ConstraintKind::Local => {
            scheme = if kind == ConstraintKind::Global { Scheme::MmseGlobal } else { Scheme::MmseLocal };
            let mut lm = chain;
            let mut la = 0;
            let mut ld = 0;
            let (mut am, mut aa, mut ad) = (0, 0, 0);
            for i in groups.clone() {
                let (c, nx) = (n[i], n[i + 1]);
                lm += q * sweep_mults(c) - c * c * c + 3 * n0 * c * c + n0 * c * nx + c * c;
                la += q * sweep_adds(c) - c * c * c + 3 * n0 * c * c + n0 * c * nx - c * c - n0 * c - c;
                ld += q * (c - 1);
                am += tri(c) + c * c + 1;
                aa += tri(c) + c * c;
                ad += half(c);
            }
            (count(lm, la, ld), count(am, aa, ad))
        }
        ConstraintKind::Individual => {
            scheme = Scheme::MmseIndividual;
            let mut lm = chain;
            let mut la = 0;
            let mut total = 0;
            for i in groups.clone() {
                let (c, nx) = (n[i], n[i + 1]);
                lm += n0 * c * c + n0 * c * nx + c * c + n0 * c;
                la += n0 * c * c + n0 * c * nx - c * c - c;
                total += c;
            }
            (count(lm, la, 0), count(2 * total, total, total))
        }
    };
    Ok(vec![
        ComponentCount { scheme, component: Component::Receiver, count: receiver },
        ComponentCount { scheme, component: Component::Multiplier, count: multiplier },
        ComponentCount { scheme, component: Component::Gains, count: gains },
    ])
}

/// Per-iteration counts of the MSR design with the given eigen-solver,
/// `iterations` being the QR sweep count or the power-method step count.
pub fn count_msr(nodes: &[usize], solver: crate::msr::EigenSolver, iterations: usize) -> Result<Vec<ComponentCount>> {
    use crate::msr::EigenSolver;
    check_sizes(nodes, iterations)?;
    let n: Vec<i64> = nodes.iter().map(|&x| x as i64).collect();
    let m = n.len() - 1;
    let (nm, n1) = (n[m], n[1]);
    let it = iterations as i64;
    let mi = m as i64;

    // terms shared by both receiver rows
    let mut shared_m = n1 * nm;
    let mut shared_a = n1 * nm;
    for i in 1..m {
        shared_m += n[i] * nm * nm + n[i] * n[i + 1] + n[i];
        shared_a += n[i] * nm * nm;
    }
    for i in 2..m {
        let (p, c) = (n[i - 1], n[i]);
        shared_m += 2 * p * p * c + p * c * c + p * c * nm + 4 * p * c + 2 * c;
        shared_a += 2 * p * c * c + p * (c - 1) * nm - c * c + c;
    }
    // the cross-group sum in the gain additions
    let mut cross_a = 2 * nm * nm - 2 * nm;
    for i in 2..m {
        let c = n[i];
        let prior: i64 = (1..i).map(|k| (n[k] - 1) * c * c).sum();
        cross_a += prior + c * c * (i as i64 - 2) + c;
    }

    let (scheme, receiver, gains) = match solver {
        EigenSolver::Qr => {
            let receiver = count(
                it * sweep_mults(nm) + tri(nm) + nm * nm + shared_m,
                it * sweep_adds(nm) + tri(nm) - nm * nm + shared_a,
                it * (nm - 1) + half(nm),
            );
            let (mut gm, mut ga, mut gd) = (2 * nm * nm, cross_a, nm + mi - 1);
            for i in 1..m {
                let (c, nx) = (n[i], n[i + 1]);
                let upstream: i64 = (1..=i).map(|k| n[k] * c * c).sum();
                gm += it * sweep_mults(c) + tri(c) + upstream + 3 * c * c + 2 * c * nx + nx * nm + 3 * c + 2;
                ga += it * sweep_adds(c) + tri(c) + c * nx + nx * nm - nx + c - 1;
                gd += it * (c - 1) + half(c);
            }
            (Scheme::MsrQr, receiver, count(gm, ga, gd))
        }
        EigenSolver::Power => {
            let receiver = count(
                it * nm * nm + tri(nm) + nm * nm * nm + nm * nm + shared_m,
                it * nm * (nm - 1) + tri(nm) + nm * nm * nm - 2 * nm * nm + shared_a,
                half(nm),
            );
            let (mut gm, mut ga, mut gd) = (2 * nm * nm, cross_a, nm + mi - 1);
            for i in 1..m {
                let (c, nx) = (n[i], n[i + 1]);
                let upstream: i64 = (1..=i).map(|k| n[k] * c * c).sum();
                gm += it * c * c + tri(c) + upstream + c * c * c + 3 * c * c + 2 * c * nx + nx * nm + 3 * c + 2;
                ga += it * c * (c - 1) + tri(c) + c * c * c - c * c + c * nx + nx * nm - nx + c - 1;
                gd += half(c);
            }
            (Scheme::MsrPower, receiver, count(gm, ga, gd))
        }
    };
    Ok(vec![
        ComponentCount { scheme, component: Component::ReceiveVector, count: receiver },
        ComponentCount { scheme, component: Component::Gains, count: gains },
    ])
}

/// Components of one scheme at the given sizes.
pub fn count_scheme(nodes: &[usize], scheme: Scheme, iterations: usize) -> Result<Vec<ComponentCount>> {
    use crate::msr::EigenSolver;
    match scheme {
        Scheme::MmseGlobal => count_mmse(nodes, ConstraintKind::Global, iterations),
        Scheme::MmseLocal => count_mmse(nodes, ConstraintKind::Local, iterations),
        Scheme::MmseIndividual => count_mmse(nodes, ConstraintKind::Individual, iterations),
        Scheme::MsrQr => count_msr(nodes, EigenSolver::Qr, iterations),
        Scheme::MsrPower => count_msr(nodes, EigenSolver::Power, iterations),
    }
}

/// Sum over all components of one scheme.
pub fn total(nodes: &[usize], scheme: Scheme, iterations: usize) -> Result<OpCount> {
    Ok(count_scheme(nodes, scheme, iterations)?.into_iter().map(|c| c.count).sum())
}

/// Sweep of equal relay-group sizes `N_1 = ... = N_{m-1} = N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    pub hops: usize,
    pub sources: usize,
    pub destinations: usize,
    pub relay_sizes: Vec<usize>,
    /// QR sweeps (`n_Q`).
    pub qr_sweeps: usize,
    /// Power-method steps (`n_P`).
    pub power_steps: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            hops: 3,
            sources: 1,
            destinations: 2,
            relay_sizes: (2..=10).collect(),
            qr_sweeps: DEFAULT_SWEEPS,
            power_steps: DEFAULT_SWEEPS,
        }
    }
}

impl CurveConfig {
    pub fn nodes(&self, relay: usize) -> Vec<usize> {
        let mut v = vec![self.sources];
        v.extend(std::iter::repeat_n(relay, self.hops.saturating_sub(1)));
        v.push(self.destinations);
        v
    }
}

/// One output row; `component` is `None` for the scheme total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurveRow {
    pub relay_nodes: usize,
    pub scheme: Scheme,
    pub component: Option<Component>,
    pub count: OpCount,
}

impl CurveRow {
    pub fn component_name(&self) -> &'static str {
        self.component.map_or("total", Component::name)
    }
}

/// For every relay size and scheme: the total row followed by its components.
pub fn emit_complexity_curves(config: &CurveConfig) -> Result<Vec<CurveRow>> {
    let mut rows = Vec::new();
    for &n in &config.relay_sizes {
        let nodes = config.nodes(n);
        for scheme in Scheme::ALL {
            let iterations = if scheme == Scheme::MsrPower { config.power_steps } else { config.qr_sweeps };
            let parts = count_scheme(&nodes, scheme, iterations)?;
            let sum = parts.iter().map(|c| c.count).sum();
            rows.push(CurveRow { relay_nodes: n, scheme, component: None, count: sum });
            rows.extend(parts.iter().map(|c| CurveRow { relay_nodes: n, scheme, component: Some(c.component), count: c.count }));
        }
    }
    Ok(rows)
}
