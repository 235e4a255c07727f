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

//! Engine handles shared by the CLI and the service.

use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use unimart_core::cube::CubeEngine;
use unimart_core::etl::{BatchResult, EtlMode, SplitConfig};
use unimart_core::olap::OlapEngine;
use unimart_core::parallel::WorkerPool;
use unimart_core::{Pipeline, SegmentStore, TenantKey, WarehouseSchema};

use crate::config::GatewayConfig;
use crate::registry::TenantRegistry;

pub struct Warehouse {
    pub config: GatewayConfig,
    pub store: Arc<SegmentStore>,
    pub pipeline: Pipeline,
    pub cubes: Arc<CubeEngine>,
    pub olap: OlapEngine,
    pub split: SplitConfig,
}

impl Warehouse {
    pub fn open(config: GatewayConfig) -> anyhow::Result<Self> {
        let split = config.split_config()?;
        let store = Arc::new(
            SegmentStore::open(&config.warehouse_root, Arc::new(WarehouseSchema::builtin()))
                .with_context(|| {
                    format!("opening warehouse {}", config.warehouse_root.display())
                })?,
        );
        let pool = WorkerPool::new(config.worker_pool_size);
        let cubes = Arc::new(CubeEngine::with_builtin_cubes(
            Arc::clone(&store),
            pool.clone(),
        ));
        Ok(Warehouse {
            pipeline: Pipeline::new(Arc::clone(&store), pool.clone()),
            olap: OlapEngine::new(Arc::clone(&cubes), pool),
            cubes,
            store,
            split,
            config,
        })
    }

    pub fn registry(&self) -> anyhow::Result<TenantRegistry> {
        let path = self.config.registry_path();
        TenantRegistry::load(&path).context("loading tenant registry (`unimart init` creates one)")
    }

    pub fn ingest(
        &self,
        tenant: &TenantKey,
        table: &str,
        file: &Path,
        mode: EtlMode,
    ) -> anyhow::Result<BatchResult> {
        Ok(self
            .pipeline
            .run_etl(file, table, tenant, mode, &self.split)?)
    }
}

/// Milliseconds with microsecond resolution.
pub fn millis(d: std::time::Duration) -> f64 {
    (d.as_micros() as f64) / 1000.0
}
