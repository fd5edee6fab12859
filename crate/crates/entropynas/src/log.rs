//! Tab-separated search log, one record per iteration.
//!
//! Columns of the header line:
//!
//! | column       | content                                                   |
//! |--------------|-----------------------------------------------------------|
//! | `iteration`  | 1-based iteration index                                   |
//! | `phase`      | `coarse` or `fine`                                        |
//! | `parent`     | structural hash of the mutated member, 16 hex digits     |
//! | `candidate`  | structural hash of the mutant                             |
//! | `status`     | `accepted` or `rejected`                                  |
//! | `reason`     | rejection code (`flops`, `params`, `depth`, `duplicate`, `degenerate`, `invalid`, `score-error`); `cached` for a reused score; else `-` |
//! | `score`      | candidate score, or `-` when it was not scored            |
//! | `population` | population size after maintenance                         |
//! | `best`       | highest score in the population after maintenance         |
//!
//! Scores are printed with the shortest representation that round-trips.

use entropynas_core::evolution::{IterationRecord, Outcome, Population, SearchObserver};
use std::io::{self, Write};

pub const HEADER: &str = "iteration\tphase\tparent\tcandidate\tstatus\treason\tscore\tpopulation\tbest";

pub fn format_record(r: &IterationRecord) -> String {
    let (status, reason, score) = match &r.outcome {
        Outcome::Accepted { score, cached } => ("accepted", if *cached { "cached" } else { "-" }, score.to_string()),
        Outcome::Rejected(reason) => ("rejected", reason.code(), "-".to_string()),
    };
    format!(
        "{}\t{}\t{:016x}\t{:016x}\t{}\t{}\t{}\t{}\t{}",
        r.iteration,
        r.phase.name(),
        r.parent_hash,
        r.candidate_hash,
        status,
        reason,
        score,
        r.population_size,
        r.population_max
    )
}

/// Observer that streams records to a writer. The first IO error is kept
/// and later records are dropped.
pub struct TsvLog<W: Write> {
    out: W,
    error: Option<io::Error>,
}

impl<W: Write> TsvLog<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{HEADER}")?;
        Ok(TsvLog { out, error: None })
    }

    pub fn finish(mut self) -> io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> SearchObserver for TsvLog<W> {
    fn on_iteration(&mut self, record: &IterationRecord, _: &Population) {
        if self.error.is_none() {
            if let Err(e) = writeln!(self.out, "{}", format_record(record)) {
                self.error = Some(e);
            }
        }
    }
}
