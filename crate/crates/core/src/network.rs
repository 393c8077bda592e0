//! The m-hop amplify-and-forward signal model.
//!
//! Group `i` (1-based, `1..=m-1`) receives `x_i`, normalises it to unit
//! per-node power with the diagonal `F_i`, and forwards `A_i y_i` to group
//! `i+1`. The destinations receive `d = H_d A_{m-1} y_{m-1} + v_d`. All
//! second-order statistics are evaluated in closed form by a forward
//! recursion over the groups.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};
use crate::rng::complex_gaussian;

/// Hop count and per-stage node counts `N_0..N_m`, plus signal and noise
/// variances (one noise variance shared by every receiver).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    node_counts: Vec<usize>,
    sigma_s2: f64,
    sigma_n2: f64,
}

impl Topology {
    pub fn new(node_counts: Vec<usize>, sigma_s2: f64, sigma_n2: f64) -> Result<Self> {
        if node_counts.len() < 3 {
            return Err(Error::InvalidTopology(format!(
                "need at least two hops (three node counts), got {}",
                node_counts.len()
            )));
        }
        if let Some(k) = node_counts.iter().position(|&n| n == 0) {
            return Err(Error::InvalidTopology(format!("stage {k} has no nodes")));
        }
        if !(sigma_s2 > 0.0 && sigma_s2.is_finite()) || !(sigma_n2 > 0.0 && sigma_n2.is_finite()) {
            return Err(Error::InvalidTopology(format!(
                "variances must be positive and finite (sigma_s2 = {sigma_s2}, sigma_n2 = {sigma_n2})"
            )));
        }
        Ok(Self { node_counts, sigma_s2, sigma_n2 })
    }

    /// Unit source variance and noise variance set from an SNR in dB.
    pub fn with_snr_db(node_counts: Vec<usize>, snr_db: f64) -> Result<Self> {
        Self::new(node_counts, 1.0, 10f64.powf(-snr_db / 10.0))
    }

    /// Number of hops `m`.
    pub fn hops(&self) -> usize {
        self.node_counts.len() - 1
    }

    /// Number of relay groups, `m - 1`.
    pub fn relay_groups(&self) -> usize {
        self.hops() - 1
    }

    /// `N_i` for stage `i` in `0..=m`.
    pub fn nodes(&self, i: usize) -> usize {
        self.node_counts[i]
    }

    pub fn node_counts(&self) -> &[usize] {
        &self.node_counts
    }

    pub fn sources(&self) -> usize {
        self.node_counts[0]
    }

    pub fn destinations(&self) -> usize {
        self.node_counts[self.hops()]
    }

    pub fn sigma_s2(&self) -> f64 {
        self.sigma_s2
    }

    pub fn sigma_n2(&self) -> f64 {
        self.sigma_n2
    }

    /// `sigma_s^2 / sigma_n^2`.
    pub fn snr(&self) -> f64 {
        self.sigma_s2 / self.sigma_n2
    }

    pub fn with_noise(&self, sigma_n2: f64) -> Result<Self> {
        Self::new(self.node_counts.clone(), self.sigma_s2, sigma_n2)
    }
}

/// One block-fading draw of every channel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// `N_1 x N_0`, sources to the first relay group.
    pub h_s: CMatrix,
    /// `H_{i-1,i}` of shape `N_i x N_{i-1}` for `i = 2..=m-1`.
    pub hops: Vec<CMatrix>,
    /// `N_m x N_{m-1}`, last relay group to the destinations.
    pub h_d: CMatrix,
}

impl ChannelSet {
    /// Channel into stage `i` for `i` in `1..=m` (`H_s`, `H_{i-1,i}` or `H_d`).
    pub fn incoming(&self, i: usize) -> &CMatrix {
        let m = self.hops.len() + 2;
        match i {
            1 => &self.h_s,
            i if i == m => &self.h_d,
            i => &self.hops[i - 2],
        }
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        let m = topology.hops();
        if self.hops.len() != m - 2 {
            return Err(Error::Shape(format!("expected {} inter-relay channels, got {}", m - 2, self.hops.len())));
        }
        for i in 1..=m {
            let h = self.incoming(i);
            let want = (topology.nodes(i), topology.nodes(i - 1));
            if h.shape() != want {
                return Err(Error::Shape(format!("channel into stage {i} is {:?}, expected {want:?}", h.shape())));
            }
            if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::Degenerate(format!("channel into stage {i} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// True when some channel matrix is identically zero.
    pub fn has_zero_link(&self) -> bool {
        std::iter::once(&self.h_s)
            .chain(&self.hops)
            .chain(std::iter::once(&self.h_d))
            .any(|h| h.iter().all(|z| *z == Complex64::new(0.0, 0.0)))
    }
}

/// Relay amplification vectors `a_1..a_{m-1}` (the diagonals of `A_i`).
#[derive(Debug, Clone, PartialEq)]
pub struct GainState {
    pub gains: Vec<CVector>,
}

impl GainState {
    pub fn new(gains: Vec<CVector>) -> Self {
        Self { gains }
    }

    pub fn zeros(topology: &Topology) -> Self {
        Self::uniform(topology, &vec![0.0; topology.relay_groups()])
    }

    /// Every node of group `i` gets the real gain `values[i-1]`.
    pub fn uniform(topology: &Topology, values: &[f64]) -> Self {
        let gains = (1..=topology.relay_groups())
            .map(|i| CVector::from_element(topology.nodes(i), Complex64::new(values[i - 1], 0.0)))
            .collect();
        Self { gains }
    }

    /// `a_i` for group `i` in `1..=m-1`.
    pub fn group(&self, i: usize) -> &CVector {
        &self.gains[i - 1]
    }

    pub fn group_mut(&mut self, i: usize) -> &mut CVector {
        &mut self.gains[i - 1]
    }

    /// Transmit power of group `i`, `N_{i+1} a_i^H a_i`.
    pub fn group_power(&self, topology: &Topology, i: usize) -> f64 {
        topology.nodes(i + 1) as f64 * self.group(i).norm_squared()
    }

    pub fn total_power(&self, topology: &Topology) -> f64 {
        (1..=topology.relay_groups()).map(|i| self.group_power(topology, i)).sum()
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        if self.gains.len() != topology.relay_groups() {
            return Err(Error::Shape(format!(
                "expected {} gain vectors, got {}",
                topology.relay_groups(),
                self.gains.len()
            )));
        }
        for i in 1..=topology.relay_groups() {
            if self.group(i).len() != topology.nodes(i) {
                return Err(Error::Shape(format!(
                    "gain vector {i} has length {}, expected {}",
                    self.group(i).len(),
                    topology.nodes(i)
                )));
            }
        }
        Ok(())
    }
}

/// Closed-form second-order statistics of every relay group.
#[derive(Debug, Clone)]
pub struct SecondOrderStats {
    /// Diagonal of `F_i` per group.
    pub normalizers: Vec<DVector<f64>>,
    /// `E(y_i y_i^H)` per group.
    pub ryy: Vec<CMatrix>,
    /// `E(y_i s^H)` per group.
    pub rys: Vec<CMatrix>,
}

impl SecondOrderStats {
    pub fn normalizer(&self, i: usize) -> &DVector<f64> {
        &self.normalizers[i - 1]
    }

    pub fn normalizer_matrix(&self, i: usize) -> CMatrix {
        CMatrix::from_diagonal(&self.normalizers[i - 1].map(|f| Complex64::new(f, 0.0)))
    }

    pub fn ryy(&self, i: usize) -> &CMatrix {
        &self.ryy[i - 1]
    }

    pub fn rys(&self, i: usize) -> &CMatrix {
        &self.rys[i - 1]
    }
}

/// Budget on relay transmit power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerConstraint {
    /// `sum_i N_{i+1} a_i^H a_i = P_T`.
    Global(f64),
    /// `N_{i+1} a_i^H a_i = P_{T,i}` per group.
    Local(Vec<f64>),
    /// `N_{i+1} |a_{i,j}|^2 = P_{T,i,j}` per node.
    Individual(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Global,
    Local,
    Individual,
}

impl std::fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConstraintKind::Global => "global",
            ConstraintKind::Local => "local",
            ConstraintKind::Individual => "individual",
        })
    }
}

impl std::str::FromStr for ConstraintKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "local" => Ok(Self::Local),
            "individual" => Ok(Self::Individual),
            other => Err(Error::InvalidArgument(format!("unknown constraint `{other}`"))),
        }
    }
}

impl PowerConstraint {
    /// Splits a total budget evenly: across groups for `Local`, and across
    /// the nodes of each group for `Individual`. All three variants then
    /// share the same total relay power.
    pub fn equal_split(kind: ConstraintKind, topology: &Topology, total: f64) -> Self {
        let groups = topology.relay_groups();
        let per_group = total / groups as f64;
        match kind {
            ConstraintKind::Global => PowerConstraint::Global(total),
            ConstraintKind::Local => PowerConstraint::Local(vec![per_group; groups]),
            ConstraintKind::Individual => PowerConstraint::Individual(
                (1..=groups)
                    .map(|i| vec![per_group / topology.nodes(i) as f64; topology.nodes(i)])
                    .collect(),
            ),
        }
    }

    pub fn kind(&self) -> ConstraintKind {
        match self {
            PowerConstraint::Global(_) => ConstraintKind::Global,
            PowerConstraint::Local(_) => ConstraintKind::Local,
            PowerConstraint::Individual(_) => ConstraintKind::Individual,
        }
    }

    pub fn total(&self) -> f64 {
        match self {
            PowerConstraint::Global(p) => *p,
            PowerConstraint::Local(p) => p.iter().sum(),
            PowerConstraint::Individual(p) => p.iter().flatten().sum(),
        }
    }

    /// Budget of group `i` (`1..=m-1`); `None` for the global variant.
    pub fn group_budget(&self, i: usize) -> Option<f64> {
        match self {
            PowerConstraint::Global(_) => None,
            PowerConstraint::Local(p) => Some(p[i - 1]),
            PowerConstraint::Individual(p) => Some(p[i - 1].iter().sum()),
        }
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        let ok = |p: f64| p > 0.0 && p.is_finite();
        let groups = topology.relay_groups();
        match self {
            PowerConstraint::Global(p) if !ok(*p) => Err(Error::InvalidArgument(format!("global budget {p} must be positive"))),
            PowerConstraint::Local(p) if p.len() != groups => {
                Err(Error::InvalidArgument(format!("expected {groups} local budgets, got {}", p.len())))
            }
            PowerConstraint::Local(p) if !p.iter().all(|&x| ok(x)) => {
                Err(Error::InvalidArgument("local budgets must be positive".into()))
            }
            PowerConstraint::Individual(p) => {
                if p.len() != groups {
                    return Err(Error::InvalidArgument(format!("expected {groups} rows of individual budgets, got {}", p.len())));
                }
                for (k, row) in p.iter().enumerate() {
                    if row.len() != topology.nodes(k + 1) {
                        return Err(Error::InvalidArgument(format!(
                            "group {} has {} individual budgets, expected {}",
                            k + 1,
                            row.len(),
                            topology.nodes(k + 1)
                        )));
                    }
                    if !row.iter().all(|&x| ok(x)) {
                        return Err(Error::InvalidArgument("individual budgets must be positive".into()));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Largest relative deviation of the gains from the budget(s).
    pub fn residual(&self, topology: &Topology, gains: &GainState) -> f64 {
        match self {
            PowerConstraint::Global(p) => (gains.total_power(topology) - p).abs() / p,
            PowerConstraint::Local(p) => (1..=topology.relay_groups())
                .map(|i| (gains.group_power(topology, i) - p[i - 1]).abs() / p[i - 1])
                .fold(0.0, f64::max),
            PowerConstraint::Individual(p) => (1..=topology.relay_groups())
                .flat_map(|i| {
                    let next = topology.nodes(i + 1) as f64;
                    gains.group(i).iter().zip(&p[i - 1]).map(move |(a, &b)| (next * a.norm_sqr() - b).abs() / b)
                })
                .fold(0.0, f64::max),
        }
    }
}

/// Draws i.i.d. `CN(0, 1)` entries for every channel, deterministically from `seed`.
pub fn draw_channels(topology: &Topology, seed: u64) -> ChannelSet {
    draw_channels_with(topology, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn draw_channels_with<R: Rng + ?Sized>(topology: &Topology, rng: &mut R) -> ChannelSet {
    let m = topology.hops();
    let mut draw = |i: usize| CMatrix::from_fn(topology.nodes(i), topology.nodes(i - 1), |_, _| complex_gaussian(rng, 1.0));
    let h_s = draw(1);
    let hops = (2..m).map(&mut draw).collect();
    let h_d = draw(m);
    ChannelSet { h_s, hops, h_d }
}

/// `A = diag(a)`.
pub fn diag_embed(a: &CVector) -> CMatrix {
    CMatrix::from_diagonal(a)
}

/// Diagonal of `A` as a vector.
pub fn vec_of_diag(a: &CMatrix) -> CVector {
    a.diagonal()
}

fn real_diag(f: &DVector<f64>) -> CMatrix {
    CMatrix::from_diagonal(&f.map(|v| Complex64::new(v, 0.0)))
}

/// Runs the statistics recursion for groups `1..=m-1`.
///
/// `F_i` normalises `E|x_{i,j}|^2` to one, so `diag E(y_i y_i^H) = 1`.
pub fn compute_stats(topology: &Topology, channels: &ChannelSet, gains: &GainState) -> Result<SecondOrderStats> {
    recursion(topology, channels, gains, None)
}

/// The same recursion with the normalisers held at given values instead of
/// being recomputed from the gains.
pub fn stats_with_normalizers(
    topology: &Topology,
    channels: &ChannelSet,
    gains: &GainState,
    normalizers: &[DVector<f64>],
) -> Result<SecondOrderStats> {
    recursion(topology, channels, gains, Some(normalizers))
}

fn recursion(
    topology: &Topology,
    channels: &ChannelSet,
    gains: &GainState,
    fixed: Option<&[DVector<f64>]>,
) -> Result<SecondOrderStats> {
    channels.validate(topology)?;
    gains.validate(topology)?;
    let groups = topology.relay_groups();
    let (s2, n2) = (topology.sigma_s2(), topology.sigma_n2());
    let mut out = SecondOrderStats {
        normalizers: Vec::with_capacity(groups),
        ryy: Vec::with_capacity(groups),
        rys: Vec::with_capacity(groups),
    };
    for i in 1..=groups {
        let noise = CMatrix::identity(topology.nodes(i), topology.nodes(i)).scale(n2);
        let (rxx, rxs) = if i == 1 {
            let h = &channels.h_s;
            ((h * h.adjoint()).scale(s2) + noise, h.scale(s2))
        } else {
            let g = channels.incoming(i) * diag_embed(gains.group(i - 1));
            (&g * out.ryy(i - 1) * g.adjoint() + noise, g * out.rys(i - 1))
        };
        let f = match fixed {
            Some(f) => f[i - 1].clone(),
            None => {
                let power = rxx.diagonal().map(|z| z.re);
                if let Some(j) = power.iter().position(|&p| !(p > 0.0)) {
                    return Err(Error::Degenerate(format!("relay {j} of group {i} receives zero power")));
                }
                power.map(|p| 1.0 / p.sqrt())
            }
        };
        let fm = real_diag(&f);
        out.ryy.push(&fm * rxx * &fm);
        out.rys.push(&fm * rxs);
        out.normalizers.push(f);
    }
    Ok(out)
}

/// `E(d d^H)` and `E(d s^H)` at the destinations.
pub fn destination_moments(
    topology: &Topology,
    channels: &ChannelSet,
    gains: &GainState,
    stats: &SecondOrderStats,
) -> (CMatrix, CMatrix) {
    let last = topology.relay_groups();
    let g = &channels.h_d * diag_embed(gains.group(last));
    let nm = topology.destinations();
    let rdd = &g * stats.ryy(last) * g.adjoint() + CMatrix::identity(nm, nm).scale(topology.sigma_n2());
    let rds = g * stats.rys(last);
    (rdd, rds)
}

/// `E||s - W^H d||^2 = sigma_s^2 N_0 - 2 Re tr(W^H E(ds^H)) + tr(W^H E(dd^H) W)`.
pub fn mse(topology: &Topology, w: &CMatrix, rdd: &CMatrix, rds: &CMatrix) -> f64 {
    let cross = (w.adjoint() * rds).trace().re;
    let quad = (w.adjoint() * rdd * w).trace().re;
    topology.sigma_s2() * topology.sources() as f64 - 2.0 * cross + quad
}

/// Sample paths of one block of transmissions (columns are time instants).
#[derive(Debug, Clone)]
pub struct Propagation {
    /// Received signals `x_i` per relay group.
    pub x: Vec<CMatrix>,
    /// Normalised signals `y_i = F_i x_i` per relay group.
    pub y: Vec<CMatrix>,
    /// Destination observations.
    pub d: CMatrix,
}

/// Pushes a block of source symbols (`N_0 x L`) through every phase,
/// adding `CN(0, sigma_n^2)` noise at every receiver.
pub fn propagate_block<R: Rng + ?Sized>(
    topology: &Topology,
    channels: &ChannelSet,
    gains: &GainState,
    stats: &SecondOrderStats,
    symbols: &CMatrix,
    rng: &mut R,
) -> Result<Propagation> {
    if symbols.nrows() != topology.sources() {
        return Err(Error::Shape(format!(
            "symbol block has {} rows, expected {}",
            symbols.nrows(),
            topology.sources()
        )));
    }
    gains.validate(topology)?;
    let len = symbols.ncols();
    let n2 = topology.sigma_n2();
    let mut noise = |rows: usize| CMatrix::from_fn(rows, len, |_, _| complex_gaussian(rng, n2));
    let mut xs = Vec::with_capacity(topology.relay_groups());
    let mut ys: Vec<CMatrix> = Vec::with_capacity(topology.relay_groups());
    for i in 1..=topology.relay_groups() {
        let signal = if i == 1 {
            &channels.h_s * symbols
        } else {
            channels.incoming(i) * diag_embed(gains.group(i - 1)) * &ys[i - 2]
        };
        let x = signal + noise(topology.nodes(i));
        ys.push(real_diag(stats.normalizer(i)) * &x);
        xs.push(x);
    }
    let last = topology.relay_groups();
    let d = &channels.h_d * diag_embed(gains.group(last)) * &ys[last - 1] + noise(topology.destinations());
    Ok(Propagation { x: xs, y: ys, d })
}

/// Single-symbol convenience wrapper around [`propagate_block`].
pub fn propagate<R: Rng + ?Sized>(
    topology: &Topology,
    channels: &ChannelSet,
    gains: &GainState,
    stats: &SecondOrderStats,
    symbols: &CVector,
    rng: &mut R,
) -> Result<Propagation> {
    let block = CMatrix::from_column_slice(symbols.len(), 1, symbols.as_slice());
    propagate_block(topology, channels, gains, stats, &block, rng)
}
