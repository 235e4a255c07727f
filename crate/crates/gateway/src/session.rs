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

//! Bearer session tokens.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::RngCore;
use unimart_core::{TenantContext, TenantKey};

#[derive(Debug)]
pub struct Sessions {
    ttl: Duration,
    live: Mutex<HashMap<String, (TenantContext, Instant)>>,
}

impl Sessions {
    pub fn new(ttl: Duration) -> Self {
        Sessions {
            ttl,
            live: Mutex::new(HashMap::new()),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    /// Opens a session for `tenant` and returns its context; the session id
    /// is the bearer token.
    pub fn issue(&self, tenant: TenantKey) -> TenantContext {
        let mut raw = [0u8; 32];
        rand::rng().fill_bytes(&mut raw);
        let ctx = TenantContext::new(tenant, hex::encode(raw));
        let now = Instant::now();
        let mut live = self.live.lock().expect("session table");
        live.retain(|_, (_, expires)| *expires > now);
        live.insert(ctx.session_id.clone(), (ctx.clone(), now + self.ttl));
        ctx
    }

    pub fn resolve(&self, token: &str) -> Option<TenantContext> {
        let mut live = self.live.lock().expect("session table");
        match live.get(token) {
            Some((ctx, expires)) if *expires > Instant::now() => Some(ctx.clone()),
            Some(_) => {
                live.remove(token);
                None
            }
            None => None,
        }
    }
}
