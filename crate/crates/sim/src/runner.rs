//! Runs scenarios and writes their output directories.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;
use scenic_core::harness::{Metrics, Scenario, SimError, World};

use crate::{report, ringdump};

pub const METRICS_FILE: &str = "metrics.csv";
pub const COUNTERS_FILE: &str = "counters.csv";

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Also write each node's unconsumed slow-path ring as `ring-<node>.bin`.
    pub ring_dumps: bool,
}

/// A finished run written to disk.
#[derive(Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub metrics: Metrics,
    pub summary: String,
}

/// Why a run produced no output.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{name}: {source}")]
    Sim { name: String, source: SimError },
    #[error("{name}: {source:#}")]
    Io { name: String, source: anyhow::Error },
}

fn write_dir(world: &World, metrics: &Metrics, dir: &Path, opts: RunOptions) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(METRICS_FILE);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    report::write_metrics(BufWriter::new(f), metrics)?;
    let path = dir.join(COUNTERS_FILE);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    report::write_counters(BufWriter::new(f), metrics)?;
    if opts.ring_dumps {
        for (i, n) in world.nodes().iter().enumerate() {
            let name = &world.scenario().nodes[i].name;
            ringdump::write(&dir.join(format!("ring-{name}.bin")), &n.ring().dump())?;
        }
    }
    Ok(())
}

/// Runs one scenario into `<out>/<scenario name>/`.
pub fn run_to_dir(sc: &Scenario, out: &Path, opts: RunOptions) -> Result<RunOutput, RunError> {
    let name = sc.name.clone();
    let (world, metrics) = World::run(sc).map_err(|source| RunError::Sim { name: name.clone(), source })?;
    let dir = out.join(&name);
    write_dir(&world, &metrics, &dir, opts).map_err(|source| RunError::Io { name, source })?;
    Ok(RunOutput { dir, metrics, summary: world.summary() })
}

/// Runs independent scenarios on up to `jobs` threads; results keep input order.
pub fn run_all(scenarios: &[Scenario], out: &Path, jobs: usize, opts: RunOptions) -> Vec<Result<RunOutput, RunError>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunOutput, RunError>>>> =
        Mutex::new(scenarios.iter().map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, scenarios.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(sc) = scenarios.get(i) else { break };
                let r = run_to_dir(sc, out, opts);
                results.lock().expect("no panics while held")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("threads joined").into_iter().map(|r| r.expect("every index ran")).collect()
}
