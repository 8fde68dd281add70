//! Wall-clock throughput of full payload transmissions, single-threaded and
//! with trials fanned out across the thread pool.

use std::time::Instant;

use rayon::prelude::*;

use crate::link::{run_link, LinkSetup, Payload};
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct ThroughputReport {
    pub single_items_per_sec: f64,
    pub parallel_items_per_sec: f64,
    pub single_items: u64,
    pub parallel_items: u64,
}

/// Run payload transmissions for roughly `duration_secs` in each mode and
/// report items (payload transmissions) per second. Per-run seeds derive
/// from the item index, so the parallel variant computes the same work.
pub fn measure_throughput(
    setup: &LinkSetup,
    payload: &Payload,
    duration_secs: f64,
) -> Result<ThroughputReport> {
    if duration_secs <= 0.0 {
        return Err(crate::HarnessError::Format(
            "duration must be positive".into(),
        ));
    }
    // warm-up and validity check
    run_link(setup, payload)?;

    let run_item = |i: u64| -> Result<()> {
        let mut cfg = setup.cfg.clone();
        cfg.seed = cfg.seed.wrapping_add(i);
        let item = LinkSetup {
            cfg,
            ensemble: setup.ensemble.clone(),
            config_hash: setup.config_hash.clone(),
        };
        run_link(&item, payload).map(|_| ())
    };

    let start = Instant::now();
    let mut single_items = 0u64;
    while start.elapsed().as_secs_f64() < duration_secs {
        run_item(single_items)?;
        single_items += 1;
    }
    let single_secs = start.elapsed().as_secs_f64();

    let batch = rayon::current_num_threads().max(1) as u64;
    let start = Instant::now();
    let mut parallel_items = 0u64;
    while start.elapsed().as_secs_f64() < duration_secs {
        (0..batch)
            .into_par_iter()
            .try_for_each(|j| run_item(parallel_items + j))?;
        parallel_items += batch;
    }
    let parallel_secs = start.elapsed().as_secs_f64();

    Ok(ThroughputReport {
        single_items_per_sec: single_items as f64 / single_secs,
        parallel_items_per_sec: parallel_items as f64 / parallel_secs,
        single_items,
        parallel_items,
    })
}
