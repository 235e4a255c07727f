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

//! Worker pools for the data-parallel stages.

use std::time::{Duration, Instant};

/// Result of running a batch of tasks on a [`WorkerPool`].
#[derive(Debug)]
pub struct TimedRun<T> {
    /// Task outputs, in task order regardless of scheduling.
    pub outputs: Vec<T>,
    /// Busy time of each task, measured inside the worker (queue wait excluded).
    pub busy: Vec<Duration>,
    /// Wall-clock time of the whole batch.
    pub wall: Duration,
}

impl<T> TimedRun<T> {
    /// Sum of all per-task busy times.
    pub fn cumulative(&self) -> Duration {
        self.busy.iter().sum()
    }
}

/// A fixed-size pool of workers.
///
/// A pool of size 1 (and every pool when the `parallel` feature is off)
/// runs tasks sequentially on the calling thread. Clones share workers.
#[derive(Clone)]
pub struct WorkerPool {
    size: usize,
    #[cfg(feature = "parallel")]
    pool: Option<std::sync::Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool")
            .field("size", &self.size)
            .field("parallel", &self.is_parallel())
            .finish()
    }
}

impl WorkerPool {
    pub fn new(size: usize) -> Self {
        let size = size.max(1);
        #[cfg(feature = "parallel")]
        {
            let pool = if size > 1 {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(size)
                    .thread_name(|i| format!("unimart-worker-{i}"))
                    .build()
                    .map(std::sync::Arc::new)
                    .map_err(|e| log::warn!("falling back to sequential execution: {e}"))
                    .ok()
            } else {
                None
            };
            WorkerPool { size, pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            WorkerPool { size }
        }
    }

    pub fn sequential() -> Self {
        WorkerPool::new(1)
    }

    /// One worker per available hardware thread.
    pub fn with_available_parallelism() -> Self {
        WorkerPool::new(available_parallelism())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.pool.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }

    /// Runs `task` once per input item and times each invocation.
    pub fn run_timed<I, T, F>(&self, inputs: Vec<I>, task: F) -> TimedRun<T>
    where
        I: Send,
        T: Send,
        F: Fn(I) -> T + Sync + Send,
    {
        let start = Instant::now();
        let timed = |input: I| {
            let t0 = Instant::now();
            let out = task(input);
            (out, t0.elapsed())
        };

        #[cfg(feature = "parallel")]
        let pairs: Vec<(T, Duration)> = match &self.pool {
            Some(pool) => {
                use rayon::prelude::*;
                pool.install(|| inputs.into_par_iter().with_max_len(1).map(timed).collect())
            }
            None => inputs.into_iter().map(timed).collect(),
        };
        #[cfg(not(feature = "parallel"))]
        let pairs: Vec<(T, Duration)> = inputs.into_iter().map(timed).collect();

        let wall = start.elapsed();
        let (outputs, busy) = pairs.into_iter().unzip();
        TimedRun {
            outputs,
            busy,
            wall,
        }
    }

    /// Like [`run_timed`](Self::run_timed) without the timing bookkeeping.
    pub fn map<I, T, F>(&self, inputs: Vec<I>, task: F) -> Vec<T>
    where
        I: Send,
        T: Send,
        F: Fn(I) -> T + Sync + Send,
    {
        self.run_timed(inputs, task).outputs
    }
}

pub fn available_parallelism() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outputs_keep_task_order() {
        for size in [1, 2, 4] {
            let pool = WorkerPool::new(size);
            let out = pool.map((0..100).collect(), |i: u32| i * 2);
            assert_eq!(out, (0..100).map(|i| i * 2).collect::<Vec<_>>());
        }
    }

    #[test]
    fn busy_times_are_per_task() {
        let pool = WorkerPool::new(2);
        let run = pool.run_timed(vec![5u64, 5], |ms| {
            std::thread::sleep(Duration::from_millis(ms));
        });
        assert_eq!(run.busy.len(), 2);
        assert!(run.busy.iter().all(|d| *d >= Duration::from_millis(5)));
        assert!(run.cumulative() >= Duration::from_millis(10));
    }

    #[test]
    fn zero_size_is_clamped() {
        assert_eq!(WorkerPool::new(0).size(), 1);
        assert!(!WorkerPool::sequential().is_parallel());
    }
}
