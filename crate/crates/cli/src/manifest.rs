use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use cdpa::align::SignChoice;
use cdpa::cdpa::BootstrapInterval;
use cdpa::RankProfile;
use serde::{Deserialize, Serialize};

/// Record of one `decompose` run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub config: serde_json::Value,
    pub ranks: Option<RankProfile>,
    pub permutation_method: Option<String>,
    pub permutation_objective: Option<f64>,
    pub sign: Option<SignRecord>,
    pub explained: Option<f64>,
    pub r12_zero: bool,
    pub bootstrap: Option<BootstrapInterval>,
    pub delta_theta: Option<f64>,
    pub snr: Option<[f64; 2]>,
    pub canonical_correlations: Vec<f64>,
    pub channel_cosines: Vec<f64>,
    pub seed: u64,
    pub warnings: Vec<String>,
    pub timings: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
}

/// Sign choice with the trace of a sign that was not evaluated left empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignRecord {
    pub sign: i8,
    pub trace_plus: Option<f64>,
    pub trace_minus: Option<f64>,
}

impl From<SignChoice> for SignRecord {
    fn from(s: SignChoice) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self { sign: s.sign, trace_plus: finite(s.trace_plus), trace_minus: finite(s.trace_minus) }
    }
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
