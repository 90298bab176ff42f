//! Attention cost accounting.
//!
//! The primary unit is one score-term multiply-accumulate: every attention
//! invocation with `Lq` queries and `Lk` keys over model width `D` records
//! exactly `D * Lq * Lk` units, regardless of masking. Under this convention
//! the closed forms below are exact integers, so the verification suites can
//! assert equality with zero tolerance. A secondary full-MAC counter also
//! accumulates projection, value-mixing, FFN and logit multiplies; it has no
//! closed-form oracle and is reported for context only.

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// What an attention invocation was doing, for diffing failed counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostTag {
    /// Context path, first layer: latent queries over the full history.
    Focused,
    /// Context path, intermediate self-attention over the compressed window.
    CtxSelf,
    /// Context path, final layer: history queries over the compressed window.
    Restore,
    /// Generation path, causal self-attention inside the window.
    GenCausal,
    /// Generation path, cross-attention into the context bank.
    GenCross,
    /// Baseline decoder causal self-attention.
    BaselineSelf,
}

/// One attention invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostRecord {
    pub tag: CostTag,
    pub lq: usize,
    pub lk: usize,
    pub d: usize,
}

impl CostRecord {
    pub fn units(&self) -> u64 {
        self.d as u64 * self.lq as u64 * self.lk as u64
    }
}

/// Instrumented counter threaded through every attention kernel.
#[derive(Debug, Clone, Default)]
pub struct CostLedger {
    records: Vec<CostRecord>,
    total_units: u64,
    full_macs: u64,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, tag: CostTag, lq: usize, lk: usize, d: usize) {
        let rec = CostRecord { tag, lq, lk, d };
        self.total_units += rec.units();
        self.records.push(rec);
    }

    /// Full-MAC side channel for non-attention matmuls.
    pub fn record_macs(&mut self, m: usize, k: usize, n: usize) {
        self.full_macs += m as u64 * k as u64 * n as u64;
    }

    /// Running total in score units; always equals the sum over records.
    pub fn units(&self) -> u64 {
        self.total_units
    }

    pub fn full_macs(&self) -> u64 {
        self.full_macs
    }

    pub fn records(&self) -> &[CostRecord] {
        &self.records
    }

    pub fn merge(&mut self, other: &CostLedger) {
        self.records.extend_from_slice(&other.records);
        self.total_units += other.total_units;
        self.full_macs += other.full_macs;
    }

    pub fn clear(&mut self) {
        self.records.clear();
        self.total_units = 0;
        self.full_macs = 0;
    }
}

/// Closed-form cost coefficients for one configuration.
///
/// `miss(N) = c1 * N + c0` is affine in the total sequence length; `hit` is a
/// constant upper bound. Both are whole-model quantities: the per-block
/// formulas are multiplied by `n_blocks`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClosedForm {
    pub c1: u64,
    pub c0: u64,
    pub hit: u64,
    pub n_blocks: u64,
}

impl ClosedForm {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model as u64;
        let woh = cfg.woh as u64;
        let wog = cfg.wog as u64;
        let h = cfg.h as u64;
        let c1 = d * 2 * woh;
        let c0 = d * (h * (woh * woh + wog * wog + wog * woh) + 2 * wog * wog - wog * woh);
        let hit = (h + 1) * d * woh + (h + 2) * d * wog * wog;
        Self { c1, c0, hit, n_blocks: cfg.n_blocks as u64 }
    }
}

/// Whole-model cache-miss cost at total length `n`: the cost of one full
/// forward with the window partition `(n - Wog, Wog)`.
pub fn closed_form_miss(cfg: &ModelConfig, n: usize) -> Result<u64> {
    if n < cfg.woh + cfg.wog {
        return Err(Error::Config(format!(
            "miss cost needs n >= Woh + Wog = {}, got {}",
            cfg.woh + cfg.wog,
            n
        )));
    }
    let cf = ClosedForm::from_config(cfg);
    Ok((cf.c1 * n as u64 + cf.c0) * cf.n_blocks)
}

/// Whole-model constant hit-cost bound; independent of sequence length.
pub fn closed_form_hit(cfg: &ModelConfig) -> u64 {
    let cf = ClosedForm::from_config(cfg);
    cf.hit * cf.n_blocks
}

/// Exact whole-model cost of a hit step at window phase `r` (the number of
/// rows held by the generation window once the step's token is in place):
/// `(H+2)*D*r` causal plus `(H+1)*D*Woh` cross, per block.
pub fn exact_hit_cost(cfg: &ModelConfig, phase: usize, history_present: bool) -> u64 {
    let d = cfg.d_model as u64;
    let causal = (cfg.h as u64 + 2) * d * phase as u64;
    let cross = if history_present {
        (cfg.h as u64 + 1) * d * cfg.woh as u64
    } else {
        0
    };
    (causal + cross) * cfg.n_blocks as u64
}

/// Whole-model cost of one context-path refresh over `history_len` tokens
/// (focused + H self layers + restore, per block).
pub fn context_refresh_cost(cfg: &ModelConfig, history_len: usize) -> u64 {
    let d = cfg.d_model as u64;
    let woh = cfg.woh as u64;
    let per_block = 2 * d * history_len as u64 * woh + cfg.h as u64 * d * woh * woh;
    per_block * cfg.n_blocks as u64
}

/// Context a measured count is checked against.
#[derive(Debug, Clone, Copy)]
pub enum CountContext {
    /// A full miss pass at total length `n`: must equal the closed form exactly.
    MissAt { n: usize },
    /// A hit step at window phase `phase`: must equal the exact phase formula
    /// and stay at or below the constant bound.
    HitAtPhase { phase: usize },
}

/// Outcome of checking a ledger against a closed form.
#[derive(Debug, Clone)]
pub struct CountReport {
    pub pass: bool,
    pub measured: u64,
    pub expected: u64,
    pub bound: Option<u64>,
    pub detail: String,
    /// Per-invocation records of the measured run, for diffing on failure.
    pub records: Vec<CostRecord>,
}

impl std::fmt::Display for CountReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.pass {
            write!(f, "ok: measured {} == expected {}", self.measured, self.expected)
        } else {
            writeln!(f, "MISMATCH: measured {} expected {} ({})", self.measured, self.expected, self.detail)?;
            for r in &self.records {
                writeln!(f, "  {:?} lq={} lk={} d={} -> {}", r.tag, r.lq, r.lk, r.d, r.units())?;
            }
            Ok(())
        }
    }
}

/// Checks a measured ledger against the closed forms.
pub fn verify_counts(cfg: &ModelConfig, ledger: &CostLedger, ctx: CountContext) -> Result<CountReport> {
    let measured = ledger.units();
    match ctx {
        CountContext::MissAt { n } => {
            let expected = closed_form_miss(cfg, n)?;
            let pass = measured == expected;
            Ok(CountReport {
                pass,
                measured,
                expected,
                bound: None,
                detail: format!("miss at N={}", n),
                records: if pass { Vec::new() } else { ledger.records().to_vec() },
            })
        }
        CountContext::HitAtPhase { phase } => {
            let expected = exact_hit_cost(cfg, phase, true);
            let bound = closed_form_hit(cfg);
            let pass = measured == expected && measured <= bound;
            Ok(CountReport {
                pass,
                measured,
                expected,
                bound: Some(bound),
                detail: format!("hit at phase {}", phase),
                records: if pass { Vec::new() } else { ledger.records().to_vec() },
            })
        }
    }
}
