//! Grid runner: every cell is a pure task with its own seed, so the
//! aggregated result does not depend on how many workers ran it.

use critdet::numerics::derive_seed;
use critdet::Execution;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("sweep aborted: {failed} of {total} cells failed")]
pub struct SweepAborted {
    pub failed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome<R> {
    pub index: usize,
    pub seed: u64,
    pub result: Result<R, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport<R> {
    pub cells: Vec<CellOutcome<R>>,
    pub failed: usize,
}

/// 0 means one worker per available core.
pub fn execution_for(workers: usize) -> Execution {
    match workers {
        0 => Execution::Auto,
        n => Execution::with_workers(n),
    }
}

pub fn cell_seed(master_seed: u64, index: usize) -> u64 {
    derive_seed(master_seed, index as u64)
}

/// Runs `task(cell, seed)` over all cells. Failures are recorded per cell;
/// the sweep only aborts when more than half of the cells fail.
pub fn sweep<T, R, F>(cells: &[T], master_seed: u64, workers: usize, task: F) -> Result<SweepReport<R>, SweepAborted>
where
    T: Sync,
    R: Send,
    F: Fn(&T, u64) -> Result<R, String> + Sync + Send,
{
    let outcomes = execution_for(workers).map(cells, |index, cell| {
        let seed = cell_seed(master_seed, index);
        CellOutcome { index, seed, result: task(cell, seed) }
    });
    let failed = outcomes.iter().filter(|c| c.result.is_err()).count();
    for c in outcomes.iter().filter(|c| c.result.is_err()) {
        log::warn!("cell {} failed: {}", c.index, c.result.as_ref().err().map(String::as_str).unwrap_or(""));
    }
    if 2 * failed > outcomes.len() {
        return Err(SweepAborted { failed, total: outcomes.len() });
    }
    Ok(SweepReport { cells: outcomes, failed })
}
