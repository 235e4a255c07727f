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

//! Core engine of a multi-tenant university data mart.
//!
//! Universities upload CSV extracts which are validated, tenant-qualified and
//! committed into an immutable segment store ([`etl`], [`store`]). Predefined
//! OLAP cubes are materialized offline over the shared snowflake schema
//! ([`cube`], [`schema`]) and tenant-scoped reports are served from them
//! ([`olap`]). The [`bench`] module reproduces the ETL and OLAP scalability
//! experiments at desk scale.
//!
//! Data-parallel work (ETL splits, cube partitions, cube scans) runs on a
//! [`parallel::WorkerPool`]. With the `parallel` feature (default) pools are
//! backed by rayon; without it every pool executes its tasks in order on the
//! calling thread.

pub mod bench;
pub mod cube;
pub mod decimal;
pub mod etl;
pub mod olap;
pub mod parallel;
pub mod schema;
pub mod store;

pub use cube::{CubeRow, CubeSpec};
pub use etl::{BatchResult, EtlMode, Pipeline, SplitConfig, SplitPlan};
pub use olap::{ReportResult, TenantContext};
pub use schema::{TenantKey, WarehouseSchema};
pub use store::{Record, SegmentStore};
