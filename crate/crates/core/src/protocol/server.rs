use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::chipset::{Chipset, ChipsetManifest, HASH_ADC_BITS};
use crate::ecc::{Remainder, SyndromeDecoder};
use crate::error::{Error, Result};
use crate::protocol::crypto::{Cipher, Combiner, CombinerSecret, HmacStreamCipher, PrfCombiner};
use crate::protocol::key::{KeySource, KeyString};
use crate::protocol::KeyRequest;
use crate::timer_model::{AdcConfig, ParamRanges, TimerParams};

/// The server's software clone of one chipset design.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChipDesign {
    timers: Arc<[TimerParams]>,
    key_adc: AdcConfig,
    hash_adc: AdcConfig,
}

impl ChipDesign {
    /// Rewinds every timer in `req` to `req.t` and applies the hash/key XOR.
    fn derive_bits(&self, req: &KeyRequest) -> Result<Vec<u8>> {
        let mut mask = 0u8;
        for &h in &req.hash_indices {
            mask ^= self.timers[h].bit_at(&self.hash_adc, req.t)?;
        }
        req.key_indices
            .iter()
            .map(|&o| Ok(self.timers[o].bit_at(&self.key_adc, req.t)? ^ mask))
            .collect()
    }
}

type UserLedger = Arc<Mutex<HashSet<(String, usize)>>>;

/// Holds every chipset's secret tuples and the per-user replay ledger.
///
/// Derivations for one user are serialized; different users proceed in
/// parallel.
pub struct ServerRegistry {
    designs: HashMap<String, ChipDesign>,
    ledgers: Mutex<HashMap<String, UserLedger>>,
    combiner: Box<dyn Combiner>,
    cipher: Box<dyn Cipher>,
}

impl Default for ServerRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for ServerRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut ids: Vec<_> = self.designs.keys().collect();
        ids.sort();
        f.debug_struct("ServerRegistry")
            .field("chipsets", &ids)
            .finish_non_exhaustive()
    }
}

impl ServerRegistry {
    pub fn new() -> Self {
        ServerRegistry {
            designs: HashMap::new(),
            ledgers: Mutex::new(HashMap::new()),
            combiner: Box::new(PrfCombiner),
            cipher: Box::new(HmacStreamCipher),
        }
    }

    pub fn with_combiner(mut self, combiner: impl Combiner + 'static) -> Self {
        self.combiner = Box::new(combiner);
        self
    }

    pub fn with_cipher(mut self, cipher: impl Cipher + 'static) -> Self {
        self.cipher = Box::new(cipher);
        self
    }

    pub fn cipher(&self) -> &dyn Cipher {
        self.cipher.as_ref()
    }

    /// Programs a new chipset design. The hash ADC uses [`HASH_ADC_BITS`].
    pub fn register(
        &mut self,
        id: impl Into<String>,
        timers: impl Into<Arc<[TimerParams]>>,
        key_adc: AdcConfig,
    ) -> Result<()> {
        let hash_adc = AdcConfig::new(HASH_ADC_BITS, key_adc.full_scale())?;
        self.register_with_hash_adc(id, timers, key_adc, hash_adc)
    }

    pub fn register_with_hash_adc(
        &mut self,
        id: impl Into<String>,
        timers: impl Into<Arc<[TimerParams]>>,
        key_adc: AdcConfig,
        hash_adc: AdcConfig,
    ) -> Result<()> {
        let id = id.into();
        let timers = timers.into();
        if timers.is_empty() {
            return Err(Error::EmptyChipset);
        }
        if self.designs.contains_key(&id) {
            return Err(Error::Config(format!("chipset id {id:?} already registered")));
        }
        self.designs.insert(
            id,
            ChipDesign {
                timers,
                key_adc,
                hash_adc,
            },
        );
        Ok(())
    }

    pub fn register_manifest(&mut self, manifest: &ChipsetManifest, ranges: &ParamRanges) -> Result<()> {
        let timers = manifest.timers(ranges)?;
        self.register_with_hash_adc(manifest.id.clone(), timers, manifest.key_adc()?, manifest.hash_adc()?)
    }

    pub fn chipset_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.designs.keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Fabricates a fresh hardware replica of a registered design.
    pub fn replica(&self, chipset_id: &str) -> Result<Chipset> {
        let d = self.design(chipset_id)?;
        Ok(Chipset::fabricate(chipset_id, d.timers.clone(), d.key_adc)?.with_hash_adc(d.hash_adc))
    }

    fn design(&self, chipset_id: &str) -> Result<&ChipDesign> {
        self.designs
            .get(chipset_id)
            .ok_or_else(|| Error::UnknownChipset(chipset_id.to_string()))
    }

    fn user_ledger(&self, user: &str) -> UserLedger {
        self.ledgers
            .lock()
            .unwrap()
            .entry(user.to_string())
            .or_default()
            .clone()
    }

    fn derive_logged(&self, req: &KeyRequest) -> Result<Vec<u8>> {
        let design = self.design(&req.chipset_id)?;
        req.validate(Some(design.timers.len()))?;

        let ledger = self.user_ledger(&req.user_id);
        let mut seen = ledger.lock().unwrap();
        if let Some(i) = req.touched().find(|&i| seen.contains(&(req.chipset_id.clone(), i))) {
            return Err(Error::Replay {
                user: req.user_id.clone(),
                chipset: req.chipset_id.clone(),
                index: i + 1,
            });
        }
        let bits = design.derive_bits(req)?;
        seen.extend(req.touched().map(|i| (req.chipset_id.clone(), i)));
        Ok(bits)
    }

    /// Recomputes the user's key from the public tuple and the secret
    /// tuples, logging every `(user, chipset, index)` it touches.
    pub fn server_derive(&self, req: &KeyRequest) -> Result<KeyString> {
        let bits = self.derive_logged(req)?;
        Ok(KeyString::from_trusted(bits, req.t, KeySource::ServerDerived))
    }

    /// Like [`Self::server_derive`], then reconciles the derived key toward
    /// the user's broadcast CRC. Returns the full-length reconciled key.
    pub fn server_derive_reconciled(&self, req: &KeyRequest, decoder: &SyndromeDecoder) -> Result<KeyString> {
        let hex = req
            .crc
            .as_deref()
            .ok_or_else(|| Error::MalformedRequest("request carries no crc".into()))?;
        let remainder =
            Remainder::from_hex(hex, decoder.config().degree()).map_err(|e| Error::MalformedRequest(e.to_string()))?;
        let bits = self.derive_logged(req)?;
        let fixed = decoder.reconcile(&bits, &remainder)?;
        Ok(KeyString::from_trusted(fixed.key, req.t, KeySource::Reconciled))
    }

    /// Trusted-third-party step: derives both users' keys, combines them
    /// under a fresh secret and encrypts `K_R` for each user.
    pub fn run_session(&self, req_a: &KeyRequest, req_b: &KeyRequest, rng: &mut dyn RngCore) -> Result<Session> {
        let k_a = self.server_derive(req_a)?;
        let k_b = self.server_derive(req_b)?;
        let f_secret = CombinerSecret::generate(rng);
        let k_r = self.combiner.combine(&k_a, &k_b, &f_secret)?;
        let payload = k_r.to_bytes();
        let ciphertext_a = self.cipher.encrypt(&k_a, &payload, rng)?;
        let ciphertext_b = self.cipher.encrypt(&k_b, &payload, rng)?;
        Ok(Session {
            user_a: req_a.user_id.clone(),
            user_b: req_b.user_id.clone(),
            k_a,
            k_b,
            k_r,
            ciphertext_a,
            ciphertext_b,
            f_secret,
        })
    }

    /// Writes the registry encrypted at rest: `registry.blob` holds the
    /// ciphertext, `registry.manifest.json` only public metadata.
    pub fn seal(&self, dir: &Path, store_key: &KeyString, rng: &mut dyn RngCore) -> Result<()> {
        let designs: BTreeMap<String, ChipDesign> = self.designs.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let ledgers: BTreeMap<String, Vec<(String, usize)>> = self
            .ledgers
            .lock()
            .unwrap()
            .iter()
            .map(|(user, l)| {
                let mut pairs: Vec<_> = l.lock().unwrap().iter().cloned().collect();
                pairs.sort();
                (user.clone(), pairs)
            })
            .collect();
        let plain = serde_json::to_vec(&StoredRegistry { designs, ledgers })?;
        let blob = self.cipher.encrypt(store_key, &plain, rng)?;

        let manifest = StoreManifest {
            format: STORE_FORMAT.into(),
            cipher: "hmac-sha256-stream".into(),
            chipsets: self
                .chipset_ids()
                .into_iter()
                .map(|id| StoreEntry {
                    capacity: self.designs[&id].timers.len(),
                    id,
                })
                .collect(),
        };
        fs::create_dir_all(dir)?;
        fs::write(dir.join("registry.blob"), blob)?;
        fs::write(
            dir.join("registry.manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn open(dir: &Path, store_key: &KeyString) -> Result<Self> {
        let manifest: StoreManifest = serde_json::from_slice(&fs::read(dir.join("registry.manifest.json"))?)?;
        if manifest.format != STORE_FORMAT {
            return Err(Error::SecretStore(format!("unsupported format {:?}", manifest.format)));
        }
        let blob = fs::read(dir.join("registry.blob"))?;
        let plain = HmacStreamCipher.decrypt(store_key, &blob)?;
        let stored: StoredRegistry = serde_json::from_slice(&plain)?;
        let listed: Vec<&str> = manifest.chipsets.iter().map(|e| e.id.as_str()).collect();
        let held: Vec<&str> = stored.designs.keys().map(String::as_str).collect();
        if listed != held {
            return Err(Error::SecretStore("manifest does not match sealed contents".into()));
        }

        let mut reg = ServerRegistry::new();
        reg.designs = stored.designs.into_iter().collect();
        *reg.ledgers.lock().unwrap() = stored
            .ledgers
            .into_iter()
            .map(|(user, pairs)| (user, Arc::new(Mutex::new(pairs.into_iter().collect()))))
            .collect();
        Ok(reg)
    }
}

const STORE_FORMAT: &str = "spotkd-secret-store/1";

#[derive(Serialize, Deserialize)]
struct StoredRegistry {
    designs: BTreeMap<String, ChipDesign>,
    ledgers: BTreeMap<String, Vec<(String, usize)>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreManifest {
    format: String,
    cipher: String,
    chipsets: Vec<StoreEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreEntry {
    id: String,
    #[serde(rename = "C")]
    capacity: usize,
}

/// Server-side record of one user-to-user exchange.
#[derive(Debug)]
pub struct Session {
    user_a: String,
    user_b: String,
    k_a: KeyString,
    k_b: KeyString,
    k_r: KeyString,
    ciphertext_a: Vec<u8>,
    ciphertext_b: Vec<u8>,
    f_secret: CombinerSecret,
}

impl Session {
    pub fn user_a(&self) -> &str {
        &self.user_a
    }

    pub fn user_b(&self) -> &str {
        &self.user_b
    }

    pub fn k_a(&self) -> &KeyString {
        &self.k_a
    }

    pub fn k_b(&self) -> &KeyString {
        &self.k_b
    }

    pub fn k_r(&self) -> &KeyString {
        &self.k_r
    }

    /// `E(K_R)` under `K_A`, for user A.
    pub fn ciphertext_a(&self) -> &[u8] {
        &self.ciphertext_a
    }

    pub fn ciphertext_b(&self) -> &[u8] {
        &self.ciphertext_b
    }

    /// Recomputes `K_R` with the session's own combiner secret.
    pub fn verify_combination(&self, combiner: &dyn Combiner) -> Result<bool> {
        Ok(combiner.combine(&self.k_a, &self.k_b, &self.f_secret)? == self.k_r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::user_generate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(c: usize) -> (ServerRegistry, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let timers = ParamRanges::default().sample_many(c, &mut rng);
        let mut reg = ServerRegistry::new();
        reg.register("lot", timers, AdcConfig::new(12, 1.0).unwrap()).unwrap();
        (reg, rng)
    }

    #[test]
    fn derive_matches_user_and_rejects_replay() {
        let (reg, mut rng) = setup(256);
        let mut chip = reg.replica("lot").unwrap();
        let (key, req) = user_generate(&mut chip, "u1", 16, 32, 7200.0, &mut rng).unwrap();
        assert_eq!(reg.server_derive(&req).unwrap().bits(), key.bits());
        assert!(matches!(reg.server_derive(&req), Err(Error::Replay { .. })));
    }

    #[test]
    fn same_indices_for_different_users_are_independent() {
        let (reg, mut rng) = setup(128);
        let mut chip = reg.replica("lot").unwrap();
        let (_, req) = user_generate(&mut chip, "u1", 8, 16, 100.0, &mut rng).unwrap();
        reg.server_derive(&req).unwrap();
        let other = KeyRequest {
            user_id: "u2".into(),
            ..req
        };
        assert!(reg.server_derive(&other).is_ok());
    }

    #[test]
    fn malformed_and_unknown_requests() {
        let (reg, _) = setup(64);
        let mut req = KeyRequest {
            user_id: "u".into(),
            chipset_id: "lot".into(),
            key_indices: vec![1, 2, 3],
            hash_indices: vec![3, 4],
            t: 5.0,
            crc: None,
        };
        assert!(matches!(reg.server_derive(&req), Err(Error::MalformedRequest(_))));
        req.hash_indices = vec![4, 5];
        req.chipset_id = "nope".into();
        assert!(matches!(reg.server_derive(&req), Err(Error::UnknownChipset(_))));
    }

    #[test]
    fn rejected_request_logs_nothing() {
        let (reg, _) = setup(64);
        let bad = KeyRequest {
            user_id: "u".into(),
            chipset_id: "lot".into(),
            key_indices: vec![1, 2],
            hash_indices: vec![2],
            t: 5.0,
            crc: None,
        };
        assert!(reg.server_derive(&bad).is_err());
        let good = KeyRequest {
            hash_indices: vec![3],
            ..bad
        };
        assert!(reg.server_derive(&good).is_ok());
    }

    #[test]
    fn duplicate_registration_rejected() {
        let (mut reg, mut rng) = setup(8);
        let timers = ParamRanges::default().sample_many(8, &mut rng);
        assert!(reg.register("lot", timers, AdcConfig::new(12, 1.0).unwrap()).is_err());
    }

    #[test]
    fn sealed_store_round_trip() {
        let (reg, mut rng) = setup(64);
        let mut chip = reg.replica("lot").unwrap();
        let (_, req) = user_generate(&mut chip, "u1", 4, 8, 10.0, &mut rng).unwrap();
        reg.server_derive(&req).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let store_key = KeyString::new(vec![1; 256], 0.0, KeySource::ServerDerived).unwrap();
        reg.seal(dir.path(), &store_key, &mut rng).unwrap();

        let manifest = fs::read_to_string(dir.path().join("registry.manifest.json")).unwrap();
        assert!(manifest.contains("\"C\": 64"));
        assert!(!manifest.contains("p0"));

        let reopened = ServerRegistry::open(dir.path(), &store_key).unwrap();
        assert!(matches!(reopened.server_derive(&req), Err(Error::Replay { .. })));
        let wrong = KeyString::new(vec![0; 256], 0.0, KeySource::ServerDerived).unwrap();
        assert!(matches!(
            ServerRegistry::open(dir.path(), &wrong),
            Err(Error::AuthenticationFailed)
        ));
    }
}
