// Copyright 2026 The Unimart Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Periodic cube rebuilds.

use std::collections::HashSet;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime};

use super::CubeEngine;

/// Time from a fact batch's commit to the first cube version containing it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityLag {
    pub cube: String,
    pub fact: String,
    pub batch_id: u64,
    pub lag: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct RefreshStats {
    /// Completed refresh cycles.
    pub cycles: u64,
    pub rebuilds: u64,
    pub failures: u64,
    pub last_error: Option<String>,
    pub lags: Vec<VisibilityLag>,
}

#[derive(Default)]
struct StopFlag {
    stopped: Mutex<bool>,
    wake: Condvar,
}

pub struct CubeRefresher;

impl CubeRefresher {
    /// Rebuilds every cube of `engine` now and then once per `interval`
    /// until the handle is stopped or dropped.
    pub fn spawn(engine: Arc<CubeEngine>, interval: Duration) -> RefreshHandle {
        let stats = Arc::new(Mutex::new(RefreshStats::default()));
        let stop = Arc::new(StopFlag::default());
        if engine.specs().is_empty() {
            return RefreshHandle {
                stats,
                stop,
                thread: None,
            };
        }
        let thread = {
            let stats = Arc::clone(&stats);
            let stop = Arc::clone(&stop);
            std::thread::Builder::new()
                .name("cube-refresh".into())
                .spawn(move || refresh_loop(&engine, interval, &stats, &stop))
                .expect("spawn refresh thread")
        };
        RefreshHandle {
            stats,
            stop,
            thread: Some(thread),
        }
    }
}

fn refresh_loop(
    engine: &CubeEngine,
    interval: Duration,
    stats: &Mutex<RefreshStats>,
    stop: &StopFlag,
) {
    // (cube, fact batch) pairs already visible in a built cube.
    let mut seen: HashSet<(String, u64)> = HashSet::new();
    loop {
        refresh_once(engine, stats, &mut seen);
        let guard = stop.stopped.lock().expect("stop flag");
        let (guard, _) = stop
            .wake
            .wait_timeout_while(guard, interval, |stopped| !*stopped)
            .expect("stop flag");
        if *guard {
            return;
        }
    }
}

fn refresh_once(
    engine: &CubeEngine,
    stats: &Mutex<RefreshStats>,
    seen: &mut HashSet<(String, u64)>,
) {
    for spec in engine.specs() {
        // Batches committed before the build starts are in the new version.
        let batches = engine
            .store()
            .table_state(&spec.fact)
            .map(|s| s.segments)
            .unwrap_or_default();
        let result = engine.materialize(spec);
        let done = SystemTime::now();
        let mut st = stats.lock().expect("refresh stats");
        match result {
            Ok(summary) => {
                st.rebuilds += 1;
                for seg in batches {
                    if !seen.insert((spec.name.clone(), seg.batch_id)) {
                        continue;
                    }
                    let committed = std::fs::metadata(&seg.path).and_then(|m| m.modified());
                    if let Ok(lag) = committed.map(|c| done.duration_since(c).unwrap_or_default()) {
                        st.lags.push(VisibilityLag {
                            cube: spec.name.clone(),
                            fact: spec.fact.clone(),
                            batch_id: seg.batch_id,
                            lag,
                        });
                    }
                }
                log::debug!(
                    "cube {} rebuilt as version {:?}: {} rows",
                    spec.name,
                    summary.version,
                    summary.cube_rows
                );
            }
            Err(e) => {
                st.failures += 1;
                st.last_error = Some(format!("{}: {e}", spec.name));
                log::error!("cube {} refresh failed: {e}", spec.name);
            }
        }
    }
    stats.lock().expect("refresh stats").cycles += 1;
}

/// Controls a running refresher. Dropping the handle stops it.
pub struct RefreshHandle {
    stats: Arc<Mutex<RefreshStats>>,
    stop: Arc<StopFlag>,
    thread: Option<JoinHandle<()>>,
}

impl RefreshHandle {
    /// Whether the handle has any cubes to rebuild.
    pub fn is_active(&self) -> bool {
        self.thread.is_some()
    }

    pub fn stats(&self) -> RefreshStats {
        self.stats.lock().expect("refresh stats").clone()
    }

    /// Blocks until at least `cycles` refresh cycles have completed or
    /// `timeout` elapses. Returns whether the count was reached.
    pub fn wait_for_cycles(&self, cycles: u64, timeout: Duration) -> bool {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            if self.stats().cycles >= cycles {
                return true;
            }
            if !self.is_active() || std::time::Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    pub fn stop(mut self) -> RefreshStats {
        self.shutdown();
        self.stats()
    }

    fn shutdown(&mut self) {
        *self.stop.stopped.lock().expect("stop flag") = true;
        self.stop.wake.notify_all();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for RefreshHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}
