//! Run configuration file and command-line overrides.
//!
//! The file is TOML with three optional tables:
//!
//! ```toml
//! [sim]          # topology, budgets, SNR grid, designs, feedback, seed
//! nodes = [1, 4, 4, 2]
//! total_power = 8.0
//!
//! [design]       # one-shot design command
//! snr_db = 10.0
//! design = "mmse-local"
//!
//! [complexity]   # operation-count sweep
//! relay_sizes = [2, 3, 4]
//! ```
//!
//! Every field has a default, so an empty file is valid.

use std::path::Path;

use afrelay::complexity::CurveConfig;
use afrelay::msr::EigenSolver;
use afrelay::sim::{Design, Feedback, SimConfig};
use afrelay::ConstraintKind;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Default BSC crossover when `--feedback bsc` is given without `--pe`.
const DEFAULT_PE: f64 = 1e-3;
const DEFAULT_FEEDBACK_BITS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    /// SNR of the single channel draw.
    pub snr_db: f64,
    pub design: Design,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self { snr_db: 10.0, design: Design::MmseLocal }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub design: DesignSection,
    pub complexity: CurveConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FeedbackChoice {
    Perfect,
    Bsc,
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub constraint: Option<ConstraintKind>,
    pub solver: Option<EigenSolver>,
    pub feedback: Option<FeedbackChoice>,
    pub pe: Option<f64>,
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

pub fn parse(text: &str, origin: &str) -> Result<RunConfig, CliError> {
    toml::from_str(text).map_err(|e| {
        let message = e.message().trim_end().to_string();
        match e.span() {
            Some(span) => {
                let (line, col) = line_col(text, span.start);
                CliError::Config(format!("{origin}:{line}:{col}: {message}"))
            }
            None => CliError::Config(format!("{origin}: {message}")),
        }
    })
}

pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            parse(&text, &p.display().to_string())
        }
    }
}

fn mmse_design(kind: ConstraintKind) -> Design {
    match kind {
        ConstraintKind::Global => Design::MmseGlobal,
        ConstraintKind::Local => Design::MmseLocal,
        ConstraintKind::Individual => Design::MmseIndividual,
    }
}

fn msr_design(solver: EigenSolver) -> Design {
    match solver {
        EigenSolver::Qr => Design::MsrQr,
        EigenSolver::Power => Design::MsrPower,
    }
}

impl RunConfig {
    /// Applies flag overrides. `--constraint` and `--solver` pick the design
    /// for the `design` command and narrow the design list of the sweeps.
    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(seed) = o.seed {
            self.sim.seed = seed;
        }
        if let Some(it) = o.iterations {
            self.sim.iterations = it;
        }
        match (o.constraint, o.solver) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("--constraint selects an MMSE design and --solver an MSR design; give one".into()))
            }
            (Some(kind), None) => self.design.design = mmse_design(kind),
            (None, Some(solver)) => self.design.design = msr_design(solver),
            (None, None) => {}
        }
        if let Some(kind) = o.constraint {
            self.sim.designs.retain(|d| d.family() != "mmse" || *d == mmse_design(kind));
            if !self.sim.designs.contains(&mmse_design(kind)) {
                self.sim.designs.insert(0, mmse_design(kind));
            }
        }
        if let Some(solver) = o.solver {
            self.sim.designs.retain(|d| !matches!(d, Design::MsrQr | Design::MsrPower) || *d == msr_design(solver));
            if !self.sim.designs.contains(&msr_design(solver)) {
                self.sim.designs.insert(0, msr_design(solver));
            }
        }
        let bits = match self.sim.feedback {
            Feedback::Bsc { bits_real, bits_imag, .. } => (bits_real, bits_imag),
            Feedback::Perfect => (DEFAULT_FEEDBACK_BITS, DEFAULT_FEEDBACK_BITS),
        };
        let current_pe = match self.sim.feedback {
            Feedback::Bsc { pe, .. } => Some(pe),
            Feedback::Perfect => None,
        };
        match (o.feedback, o.pe) {
            (Some(FeedbackChoice::Perfect), Some(_)) => {
                return Err(CliError::Config("--pe only applies to --feedback bsc".into()))
            }
            (Some(FeedbackChoice::Perfect), None) => self.sim.feedback = Feedback::Perfect,
            (Some(FeedbackChoice::Bsc), pe) | (None, pe @ Some(_)) => {
                let pe = pe.or(current_pe).unwrap_or(DEFAULT_PE);
                self.sim.feedback = Feedback::Bsc { pe, bits_real: bits.0, bits_imag: bits.1 };
            }
            (None, None) => {}
        }
        self.sim.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}
