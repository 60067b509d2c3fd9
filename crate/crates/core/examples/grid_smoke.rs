use std::time::Instant;

use rainbench_core::data::generate_synthetic;
use rainbench_core::harness::grid::{prepare_sources, run_grid, ExperimentGrid};
use rainbench_core::harness::report;

fn main() {
    let t0 = Instant::now();
    let regions = generate_synthetic(2000, 7, 4, 0.02).unwrap();
    let sources = prepare_sources(&regions).unwrap();
    println!(
        "sources: single {}x{}, mixed {}x{} ({:?})",
        sources.single.n_rows(),
        sources.single.n_features(),
        sources.mixed.n_rows(),
        sources.mixed.n_features(),
        t0.elapsed()
    );

    let grid = ExperimentGrid::default();
    let t1 = Instant::now();
    let run = run_grid(&grid, &sources).unwrap();
    println!(
        "grid: {} reports, {} failures in {:?}",
        run.reports.len(),
        run.failures,
        t1.elapsed()
    );
    let mut counts = std::collections::BTreeMap::new();
    for r in &run.reports {
        *counts
            .entry((r.provenance.task.clone(), r.provenance.family.clone()))
            .or_insert(0usize) += 1;
    }
    for ((task, family), count) in &counts {
        println!("  {task:>14} {family:>7}: {count}");
    }
    for r in run.reports.iter().filter(|r| matches!(r.eval, rainbench_core::metrics::TaskEval::Failed{..})).take(5) {
        println!("  FAILED {} -> {:?}", r.provenance.key(), r.eval);
    }
    let md = report::markdown_string(&run.reports);
    println!("markdown: {} bytes, {} tables", md.len(), md.matches("###").count());
}
