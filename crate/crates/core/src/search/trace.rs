use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::error::Result;
use crate::mapping::LayerMapping;

pub const TRACE_SCHEMA: &str = "# schema: oneloop-search-trace/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    /// Accepted gradient-descent start point.
    Start,
    /// Start point discarded by the 10x rule.
    RejectedStart,
    /// Rounded mappings during descent.
    Round,
    /// Random-search sample.
    Random,
    /// Fixed-hardware refinement.
    Refine,
}

impl EntryKind {
    pub fn name(self) -> &'static str {
        match self {
            EntryKind::Start => "start",
            EntryKind::RejectedStart => "rejected_start",
            EntryKind::Round => "round",
            EntryKind::Random => "random",
            EntryKind::Refine => "refine",
        }
    }
}

/// One evaluated design.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub index: usize,
    pub kind: EntryKind,
    /// Start point (or random hardware sample) the entry belongs to.
    pub start: usize,
    /// Descent step at which the mappings were rounded (0 for start points).
    pub step: usize,
    pub mappings: Vec<LayerMapping>,
    pub arch: ArchConfig,
    pub model_edp: f64,
    pub oracle_edp: Option<f64>,
    pub best_so_far: f64,
    /// Evaluations charged to the budget (1 unless ordering candidates count).
    pub cost: usize,
}

/// Evaluations in the order they count against the budget.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchTrace {
    pub entries: Vec<TraceEntry>,
}

/// Unindexed entry handed to [`SearchTrace::push`].
pub(crate) struct Pending {
    pub kind: EntryKind,
    pub start: usize,
    pub step: usize,
    pub mappings: Vec<LayerMapping>,
    pub arch: ArchConfig,
    pub model_edp: f64,
    pub oracle_edp: Option<f64>,
    pub cost: usize,
}

impl SearchTrace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn push(&mut self, p: Pending) {
        let best = self
            .entries
            .last()
            .map_or(p.model_edp, |e| e.best_so_far.min(p.model_edp));
        self.entries.push(TraceEntry {
            index: self.entries.len(),
            kind: p.kind,
            start: p.start,
            step: p.step,
            mappings: p.mappings,
            arch: p.arch,
            model_edp: p.model_edp,
            oracle_edp: p.oracle_edp,
            best_so_far: best,
            cost: p.cost,
        });
    }

    /// Entry with the lowest model EDP (earliest on ties).
    pub fn best(&self) -> Option<&TraceEntry> {
        self.entries
            .iter()
            .fold(None, |acc: Option<&TraceEntry>, e| match acc {
                Some(b) if b.model_edp <= e.model_edp => Some(b),
                _ => Some(e),
            })
    }

    /// Evaluations charged to the budget.
    pub fn evaluations(&self) -> usize {
        self.entries.iter().map(|e| e.cost).sum()
    }

    pub fn final_best_edp(&self) -> Option<f64> {
        self.entries.last().map(|e| e.best_so_far)
    }

    /// Best-so-far model EDP after each evaluation.
    pub fn best_curve(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.best_so_far).collect()
    }

    /// Appends CSV rows (no header) tagged with `method`.
    pub fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>, method: &str) -> Result<()> {
        for e in &self.entries {
            w.write_record([
                method.to_string(),
                e.index.to_string(),
                e.kind.name().to_string(),
                e.start.to_string(),
                e.step.to_string(),
                e.model_edp.to_string(),
                e.oracle_edp.map(|x| x.to_string()).unwrap_or_default(),
                e.best_so_far.to_string(),
                e.arch.pe_side.to_string(),
                e.arch.acc_words.to_string(),
                e.arch.sp_words.to_string(),
                e.arch.acc_bytes.to_string(),
                e.arch.sp_bytes.to_string(),
            ])?;
        }
        Ok(())
    }

    pub const HEADER: [&'static str; 13] = [
        "method",
        "evaluation_index",
        "kind",
        "start",
        "step",
        "model_edp",
        "oracle_edp",
        "best_so_far",
        "pe_side",
        "acc_words",
        "sp_words",
        "acc_bytes",
        "sp_bytes",
    ];

    /// Writes one or more traces as a single CSV with a schema line.
    pub fn write_csv<W: Write>(mut out: W, traces: &[(&str, &SearchTrace)]) -> Result<()> {
        writeln!(out, "{TRACE_SCHEMA}").map_err(|e| crate::error::Error::io("<trace>", e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::HEADER)?;
        for (method, t) in traces {
            t.write_rows(&mut w, method)?;
        }
        w.flush().map_err(|e| crate::error::Error::io("<trace>", e))?;
        Ok(())
    }
}
