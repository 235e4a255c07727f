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

//! Tenant credentials.
//!
//! The registry is a CSV file `login,secret_hash,university_key` where
//! `secret_hash` is `sha256$<salt hex>$<digest hex>` over salt then secret.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::RngCore;
use sha2::{Digest, Sha256};
use unimart_core::TenantKey;

pub const REGISTRY_HEADER: &str = "login,secret_hash,university_key";

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("registry line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error("reading registry {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// The only authentication failure; it does not say which part was wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("authentication failed")]
pub struct AuthFailed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretHash {
    salt: Vec<u8>,
    digest: [u8; 32],
}

impl SecretHash {
    pub fn new(secret: &str, salt: &[u8]) -> Self {
        SecretHash {
            salt: salt.to_vec(),
            digest: digest(salt, secret),
        }
    }

    pub fn generate(secret: &str) -> Self {
        let mut salt = [0u8; 16];
        rand::rng().fill_bytes(&mut salt);
        Self::new(secret, &salt)
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut parts = s.split('$');
        if parts.next()? != "sha256" {
            return None;
        }
        let salt = hex::decode(parts.next()?).ok()?;
        let digest: [u8; 32] = hex::decode(parts.next()?).ok()?.try_into().ok()?;
        parts
            .next()
            .is_none()
            .then_some(SecretHash { salt, digest })
    }

    /// Constant-time comparison against `secret`.
    pub fn verify(&self, secret: &str) -> bool {
        constant_time_eq(&digest(&self.salt, secret), &self.digest)
    }
}

impl std::fmt::Display for SecretHash {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "sha256${}${}",
            hex::encode(&self.salt),
            hex::encode(self.digest)
        )
    }
}

fn digest(salt: &[u8], secret: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(secret.as_bytes());
    h.finalize().into()
}

fn constant_time_eq(a: &[u8; 32], b: &[u8; 32]) -> bool {
    let diff = a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y));
    std::hint::black_box(diff) == 0
}

#[derive(Debug, Clone)]
struct Entry {
    hash: SecretHash,
    tenant: TenantKey,
}

#[derive(Debug, Clone)]
pub struct TenantRegistry {
    entries: HashMap<String, Entry>,
    /// Compared against for unknown logins so both paths cost the same.
    decoy: SecretHash,
}

impl TenantRegistry {
    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(text.as_bytes());
        let mut entries = HashMap::new();
        let mut tenants = HashSet::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 1;
            let invalid = |reason: String| RegistryError::Invalid { line, reason };
            let rec = rec.map_err(|e| invalid(e.to_string()))?;
            let fields: Vec<&str> = rec.iter().map(str::trim).collect();
            if line == 1 && fields.join(",") == REGISTRY_HEADER {
                continue;
            }
            let [login, hash, tenant] = fields[..] else {
                return Err(invalid(format!(
                    "expected 3 fields, found {}",
                    fields.len()
                )));
            };
            if login.is_empty() {
                return Err(invalid("empty login".into()));
            }
            let hash =
                SecretHash::parse(hash).ok_or_else(|| invalid("malformed secret hash".into()))?;
            let tenant = TenantKey::new(tenant).map_err(|e| invalid(e.to_string()))?;
            if !tenants.insert(tenant.clone()) {
                return Err(invalid(format!(
                    "university_key {tenant} is already registered"
                )));
            }
            if entries
                .insert(login.to_string(), Entry { hash, tenant })
                .is_some()
            {
                return Err(invalid(format!("login {login} is listed twice")));
            }
        }
        Ok(TenantRegistry {
            entries,
            decoy: SecretHash::new("", b"decoy"),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn authenticate(&self, login: &str, secret: &str) -> Result<TenantKey, AuthFailed> {
        match self.entries.get(login) {
            Some(e) if e.hash.verify(secret) => Ok(e.tenant.clone()),
            Some(_) => Err(AuthFailed),
            None => {
                let _ = self.decoy.verify(secret);
                Err(AuthFailed)
            }
        }
    }

    pub fn has_tenant(&self, tenant: &TenantKey) -> bool {
        self.entries.values().any(|e| &e.tenant == tenant)
    }

    /// Registered tenants in key order.
    pub fn tenants(&self) -> Vec<TenantKey> {
        let mut t: Vec<TenantKey> = self.entries.values().map(|e| e.tenant.clone()).collect();
        t.sort();
        t
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One registry line for a new tenant.
pub fn registry_line(login: &str, secret: &str, tenant: &TenantKey) -> String {
    format!("{login},{},{tenant}", SecretHash::generate(secret))
}
