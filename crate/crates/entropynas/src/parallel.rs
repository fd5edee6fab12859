//! Multi-threaded batch scoring.

use entropynas_core::evolution::{Evaluator, ScoreJob};
use entropynas_core::{ScoreError, Scorer};
use rayon::prelude::*;

/// Scores each batch on a dedicated thread pool. Every job carries its own
/// random stream, so results are identical to sequential scoring.
pub struct ThreadPoolEvaluator {
    pool: rayon::ThreadPool,
}

impl ThreadPoolEvaluator {
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
        Ok(ThreadPoolEvaluator { pool })
    }
}

impl Evaluator for ThreadPoolEvaluator {
    fn evaluate(&self, scorer: &dyn Scorer, jobs: &[ScoreJob<'_>]) -> Vec<Result<f64, ScoreError>> {
        self.pool.install(|| jobs.par_iter().map(|j| scorer.score(j.arch, j.seed, j.stream)).collect())
    }
}
