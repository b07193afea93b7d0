//! Self-describing checkpoint files.
//!
//! Layout: 4-byte magic "DGCK", a format version byte, a little-endian
//! u64 header length, a JSON header, then raw f64 little-endian tensor
//! data in exactly the order the header's entry table lists. Entries are
//! sorted by (group, name), so a checkpoint's bytes are a pure function
//! of its contents. A SHA-256 fingerprint of the primary parameters is
//! stored in the header and re-verified on load. Adversarial-stage
//! checkpoints additionally embed the adversary (with its own optimizer
//! state and fingerprint) and the frozen conditioning model's parameters,
//! so a single file is enough both to resume training and to enhance.

use std::io::{Read, Write};
use std::path::Path;

use autodiff::ParamStore;
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, StageKind};
use crate::error::{DiscoganError, Result};

const MAGIC: &[u8; 4] = b"DGCK";
const VERSION: u8 = 1;

/// SHA-256 over the store's (name, shape, data) triples in name order.
pub fn param_fingerprint(store: &ParamStore) -> String {
    let mut items: Vec<(&str, &ArrayD<f64>)> = store.iter().collect();
    items.sort_by_key(|(name, _)| *name);
    fingerprint_of(items.into_iter())
}

fn fingerprint_of<'a>(items: impl Iterator<Item = (&'a str, &'a ArrayD<f64>)>) -> String {
    let mut hasher = Sha256::new();
    for (name, value) in items {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        for &d in value.shape() {
            hasher.update((d as u64).to_le_bytes());
        }
        hasher.update([0u8]);
        for &v in value.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    group: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: StageKind,
    config: RunConfig,
    step: u64,
    seed: u64,
    adam_t: u64,
    /// Adversary update count; 0 when no adversary is embedded.
    disc_adam_t: u64,
    fingerprint: String,
    adv_fingerprint: Option<String>,
    frozen_fingerprint: Option<String>,
    entries: Vec<Entry>,
}

/// In-memory image of a checkpoint file.
#[derive(Debug)]
pub struct Checkpoint {
    pub kind: StageKind,
    pub config: RunConfig,
    pub step: u64,
    pub seed: u64,
    pub adam_t: u64,
    pub disc_adam_t: u64,
    pub fingerprint: String,
    pub adv_fingerprint: Option<String>,
    pub frozen_fingerprint: Option<String>,
    pub params: Vec<(String, ArrayD<f64>)>,
    pub moments: Vec<(String, ArrayD<f64>, ArrayD<f64>)>,
    pub adv_params: Vec<(String, ArrayD<f64>)>,
    pub adv_moments: Vec<(String, ArrayD<f64>, ArrayD<f64>)>,
    pub frozen: Vec<(String, ArrayD<f64>)>,
}

impl Checkpoint {
    /// Snapshots a parameter store (and optionally the frozen conditioning
    /// store) into a checkpoint image.
    pub fn from_store(
        kind: StageKind,
        config: &RunConfig,
        step: u64,
        seed: u64,
        adam_t: u64,
        store: &ParamStore,
        frozen: Option<&ParamStore>,
    ) -> Self {
        let mut params: Vec<(String, ArrayD<f64>)> =
            store.iter().map(|(n, v)| (n.to_string(), v.clone())).collect();
        params.sort_by(|a, b| a.0.cmp(&b.0));
        let mut moments: Vec<(String, ArrayD<f64>, ArrayD<f64>)> = store
            .iter_moments()
            .map(|(n, m, v)| (n.to_string(), m.clone(), v.clone()))
            .collect();
        moments.sort_by(|a, b| a.0.cmp(&b.0));
        let mut frozen_params: Vec<(String, ArrayD<f64>)> = frozen
            .map(|f| f.iter().map(|(n, v)| (n.to_string(), v.clone())).collect())
            .unwrap_or_default();
        frozen_params.sort_by(|a, b| a.0.cmp(&b.0));

        Checkpoint {
            kind,
            config: config.clone(),
            step,
            seed,
            adam_t,
            disc_adam_t: 0,
            fingerprint: param_fingerprint(store),
            adv_fingerprint: None,
            frozen_fingerprint: frozen.map(param_fingerprint),
            params,
            moments,
            adv_params: Vec::new(),
            adv_moments: Vec::new(),
            frozen: frozen_params,
        }
    }

    /// Adds the adversary's parameters and optimizer state (adversarial
    /// stages carry two optimized networks in one file).
    pub fn attach_adversary(&mut self, store: &ParamStore, disc_adam_t: u64) {
        let mut params: Vec<(String, ArrayD<f64>)> =
            store.iter().map(|(n, v)| (n.to_string(), v.clone())).collect();
        params.sort_by(|a, b| a.0.cmp(&b.0));
        let mut moments: Vec<(String, ArrayD<f64>, ArrayD<f64>)> = store
            .iter_moments()
            .map(|(n, m, v)| (n.to_string(), m.clone(), v.clone()))
            .collect();
        moments.sort_by(|a, b| a.0.cmp(&b.0));
        self.adv_fingerprint = Some(param_fingerprint(store));
        self.adv_params = params;
        self.adv_moments = moments;
        self.disc_adam_t = disc_adam_t;
    }

    /// Loads parameter values (and Adam moments) into a freshly
    /// constructed store. The name sets must match exactly.
    pub fn apply_params(&self, store: &mut ParamStore) -> Result<()> {
        apply_group(&self.params, store)?;
        apply_moments(&self.moments, store)
    }

    /// Loads the embedded adversary into a freshly constructed store.
    pub fn apply_adversary(&self, store: &mut ParamStore) -> Result<()> {
        if self.adv_params.is_empty() {
            return Err(DiscoganError::Checkpoint("checkpoint embeds no adversary".into()));
        }
        apply_group(&self.adv_params, store)?;
        apply_moments(&self.adv_moments, store)
    }

    /// Loads the embedded frozen model's parameters into a store.
    pub fn apply_frozen(&self, store: &mut ParamStore) -> Result<()> {
        if self.frozen.is_empty() {
            return Err(DiscoganError::Checkpoint(
                "checkpoint embeds no frozen conditioning model".into(),
            ));
        }
        apply_group(&self.frozen, store)?;
        if let Some(want) = &self.frozen_fingerprint {
            let got = param_fingerprint(store);
            if got != *want {
                return Err(DiscoganError::Checkpoint(format!(
                    "frozen parameters hash {got}, expected {want}"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let push = |name: &str, group: &str, value: &ArrayD<f64>, entries: &mut Vec<Entry>, payload: &mut Vec<u8>| {
            entries.push(Entry {
                name: name.to_string(),
                shape: value.shape().to_vec(),
                group: group.to_string(),
            });
            for &v in value.iter() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (n, v) in &self.params {
            push(n, "param", v, &mut entries, &mut payload);
        }
        for (n, m, v) in &self.moments {
            push(n, "adam_m", m, &mut entries, &mut payload);
            push(n, "adam_v", v, &mut entries, &mut payload);
        }
        for (n, v) in &self.adv_params {
            push(n, "adv_param", v, &mut entries, &mut payload);
        }
        for (n, m, v) in &self.adv_moments {
            push(n, "adv_adam_m", m, &mut entries, &mut payload);
            push(n, "adv_adam_v", v, &mut entries, &mut payload);
        }
        for (n, v) in &self.frozen {
            push(n, "frozen", v, &mut entries, &mut payload);
        }

        let header = Header {
            kind: self.kind,
            config: self.config.clone(),
            step: self.step,
            seed: self.seed,
            adam_t: self.adam_t,
            disc_adam_t: self.disc_adam_t,
            fingerprint: self.fingerprint.clone(),
            adv_fingerprint: self.adv_fingerprint.clone(),
            frozen_fingerprint: self.frozen_fingerprint.clone(),
            entries,
        };
        let header_bytes = serde_json::to_vec(&header)?;

        let mut f = std::fs::File::create(path)?;
        f.write_all(MAGIC)?;
        f.write_all(&[VERSION])?;
        f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&header_bytes)?;
        f.write_all(&payload)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let fail = |msg: &str| DiscoganError::Checkpoint(format!("{}: {msg}", path.display()));
        if bytes.len() < 13 || &bytes[0..4] != MAGIC {
            return Err(fail("not a checkpoint file"));
        }
        if bytes[4] != VERSION {
            return Err(fail(&format!("unsupported version {}", bytes[4])));
        }
        let header_len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        if bytes.len() < 13 + header_len {
            return Err(fail("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[13..13 + header_len])?;

        let mut offset = 13 + header_len;
        let mut params = Vec::new();
        let mut m_by_name: Vec<(String, ArrayD<f64>)> = Vec::new();
        let mut v_by_name: Vec<(String, ArrayD<f64>)> = Vec::new();
        let mut adv_params = Vec::new();
        let mut am_by_name: Vec<(String, ArrayD<f64>)> = Vec::new();
        let mut av_by_name: Vec<(String, ArrayD<f64>)> = Vec::new();
        let mut frozen = Vec::new();
        for e in &header.entries {
            let n: usize = e.shape.iter().product();
            let end = offset + 8 * n;
            if bytes.len() < end {
                return Err(fail(&format!("truncated tensor '{}'", e.name)));
            }
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                data.push(f64::from_le_bytes(
                    bytes[offset + 8 * i..offset + 8 * i + 8].try_into().unwrap(),
                ));
            }
            offset = end;
            let arr = ArrayD::from_shape_vec(IxDyn(&e.shape), data)
                .map_err(|e| fail(&format!("bad tensor shape: {e}")))?;
            match e.group.as_str() {
                "param" => params.push((e.name.clone(), arr)),
                "adam_m" => m_by_name.push((e.name.clone(), arr)),
                "adam_v" => v_by_name.push((e.name.clone(), arr)),
                "adv_param" => adv_params.push((e.name.clone(), arr)),
                "adv_adam_m" => am_by_name.push((e.name.clone(), arr)),
                "adv_adam_v" => av_by_name.push((e.name.clone(), arr)),
                "frozen" => frozen.push((e.name.clone(), arr)),
                other => return Err(fail(&format!("unknown tensor group '{other}'"))),
            }
        }
        if offset != bytes.len() {
            return Err(fail("trailing bytes after tensor data"));
        }
        let pair = |ms: Vec<(String, ArrayD<f64>)>,
                    vs: Vec<(String, ArrayD<f64>)>|
         -> Result<Vec<(String, ArrayD<f64>, ArrayD<f64>)>> {
            if ms.len() != vs.len() {
                return Err(DiscoganError::Checkpoint(format!(
                    "{}: unpaired Adam moments",
                    path.display()
                )));
            }
            let mut out = Vec::with_capacity(ms.len());
            for ((mn, m), (vn, v)) in ms.into_iter().zip(vs) {
                if mn != vn {
                    return Err(DiscoganError::Checkpoint(format!(
                        "{}: moment pair mismatch: '{mn}' vs '{vn}'",
                        path.display()
                    )));
                }
                out.push((mn, m, v));
            }
            Ok(out)
        };
        let moments = pair(m_by_name, v_by_name)?;
        let adv_moments = pair(am_by_name, av_by_name)?;

        let ckpt = Checkpoint {
            kind: header.kind,
            config: header.config,
            step: header.step,
            seed: header.seed,
            adam_t: header.adam_t,
            disc_adam_t: header.disc_adam_t,
            fingerprint: header.fingerprint,
            adv_fingerprint: header.adv_fingerprint,
            frozen_fingerprint: header.frozen_fingerprint,
            params,
            moments,
            adv_params,
            adv_moments,
            frozen,
        };
        // integrity: the stored fingerprints must match the loaded tensors
        let got = fingerprint_of(ckpt.params.iter().map(|(n, v)| (n.as_str(), v)));
        if got != ckpt.fingerprint {
            return Err(fail(&format!(
                "parameter data hashes to {got} but header says {}",
                ckpt.fingerprint
            )));
        }
        if let Some(want) = &ckpt.adv_fingerprint {
            let got = fingerprint_of(ckpt.adv_params.iter().map(|(n, v)| (n.as_str(), v)));
            if got != *want {
                return Err(fail(&format!(
                    "adversary data hashes to {got} but header says {want}"
                )));
            }
        }
        Ok(ckpt)
    }
}

fn apply_moments(
    moments: &[(String, ArrayD<f64>, ArrayD<f64>)],
    store: &mut ParamStore,
) -> Result<()> {
    for (name, m, v) in moments {
        let id = store.find(name).ok_or_else(|| {
            DiscoganError::Checkpoint(format!("moment for unknown parameter '{name}'"))
        })?;
        store.set_moments(id, m.clone(), v.clone());
    }
    Ok(())
}

fn apply_group(values: &[(String, ArrayD<f64>)], store: &mut ParamStore) -> Result<()> {
    let mut seen = 0usize;
    for (name, value) in values {
        let id = store.find(name).ok_or_else(|| {
            DiscoganError::Checkpoint(format!("checkpoint has unknown parameter '{name}'"))
        })?;
        if store.value(id).shape() != value.shape() {
            return Err(DiscoganError::Checkpoint(format!(
                "parameter '{name}' shape {:?} does not match model {:?}",
                value.shape(),
                store.value(id).shape()
            )));
        }
        store.set_value(id, value.clone());
        seen += 1;
    }
    if seen != store.len() {
        return Err(DiscoganError::Checkpoint(format!(
            "checkpoint provides {seen} of {} model parameters",
            store.len()
        )));
    }
    Ok(())
}
