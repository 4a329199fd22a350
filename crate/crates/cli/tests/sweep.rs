use critdet::numerics::derive_seed;
use critdet_cli::sweep::{cell_seed, sweep, SweepAborted};

fn task(x: &u64, seed: u64) -> Result<u64, String> {
    if x % 4 == 3 {
        Err(format!("cell {x} rejected"))
    } else {
        Ok(seed.rotate_left(7) ^ x)
    }
}

#[test]
fn results_do_not_depend_on_workers() {
    let cells: Vec<u64> = (0..40).collect();
    let reference = sweep(&cells, 99, 1, task).unwrap();
    for workers in [0, 2, 3, 8] {
        assert_eq!(sweep(&cells, 99, workers, task).unwrap(), reference, "workers {workers}");
    }
}

#[test]
fn cell_seeds_derive_from_master_and_index() {
    let cells: Vec<u64> = (0..6).collect();
    let report = sweep(&cells, 5, 2, |_, s| Ok::<u64, String>(s)).unwrap();
    for c in &report.cells {
        assert_eq!(c.seed, derive_seed(5, c.index as u64));
        assert_eq!(c.seed, cell_seed(5, c.index));
        assert_eq!(c.result, Ok(c.seed));
    }
    let other = sweep(&cells, 6, 2, |_, s| Ok::<u64, String>(s)).unwrap();
    assert_ne!(report, other);
}

#[test]
fn single_cell_matches_direct_call() {
    let report = sweep(&[17u64], 3, 4, task).unwrap();
    assert_eq!(report.cells[0].result, task(&17, cell_seed(3, 0)));
}

#[test]
fn failures_are_flagged_until_half() {
    let cells: Vec<u64> = (0..8).collect();
    let report = sweep(&cells, 1, 2, task).unwrap();
    assert_eq!(report.failed, 2);
    assert!(report.cells[3].result.is_err() && report.cells[7].result.is_err());

    // Exactly half failing still completes.
    let half = sweep(&cells, 1, 2, |x, _| if x % 2 == 0 { Ok(*x) } else { Err("odd".to_string()) }).unwrap();
    assert_eq!(half.failed, 4);

    let most = sweep(&cells, 1, 2, |x, _| if *x == 0 { Ok(*x) } else { Err("no".to_string()) });
    assert_eq!(most.unwrap_err(), SweepAborted { failed: 7, total: 8 });
}
