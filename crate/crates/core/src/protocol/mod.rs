//! Key generation and the two key-exchange protocols.
//!
//! Protocol 1: a user reads a chipset replica, broadcasts `(O, H, t)` after a
//! wait, and the server recomputes the same key from its secret tuples.
//! Protocol 2: the server derives two users' keys, combines them into `K_R`
//! and sends each user `K_R` encrypted under their own key.

pub mod channel;
pub mod crypto;
pub mod key;
pub mod server;

use rand::seq::index::sample;
use rand::{Rng, RngCore};

use crate::chipset::Chipset;
use crate::ecc::{crc, CrcConfig};
use crate::error::{Error, Result};

pub use channel::{
    broadcast_after_wait, DeltaTDistribution, MessageBody, PublicChannel, PublicMessage, SimClock, Subscriber, HOUR,
};
pub use crypto::{combine_keys, decrypt, encrypt, Cipher, Combiner, CombinerSecret, HmacStreamCipher, PrfCombiner};
pub use key::{pack_bits, unpack_bits, KeyRequest, KeySource, KeyString};
pub use server::{ServerRegistry, Session};

/// Picks `g + n` distinct unconsumed timers at random, the first `g` as hash
/// timers and the rest as key timers, and reads them at `t`.
pub fn user_generate<R: Rng + ?Sized>(
    chip: &mut Chipset,
    user_id: &str,
    g: usize,
    n: usize,
    t: f64,
    rng: &mut R,
) -> Result<(KeyString, KeyRequest)> {
    let free = chip.unconsumed_indices();
    if free.len() < g + n {
        return Err(Error::InsufficientTimers {
            needed: g + n,
            available: free.len(),
        });
    }
    let picked: Vec<usize> = sample(rng, free.len(), g + n).into_iter().map(|i| free[i]).collect();
    let (hash, key) = picked.split_at(g);
    let receipt = chip.generate_key_output(key, hash, t)?;
    let request = KeyRequest {
        user_id: user_id.to_string(),
        chipset_id: chip.id().to_string(),
        key_indices: key.to_vec(),
        hash_indices: hash.to_vec(),
        t,
        crc: None,
    };
    Ok((
        KeyString::from_trusted(receipt.bits, t, KeySource::UserMeasured),
        request,
    ))
}

/// [`user_generate`] with `cfg.key_len` key timers and the key's CRC
/// remainder attached to the request.
pub fn user_generate_with_crc<R: Rng + ?Sized>(
    chip: &mut Chipset,
    user_id: &str,
    g: usize,
    cfg: &CrcConfig,
    t: f64,
    rng: &mut R,
) -> Result<(KeyString, KeyRequest)> {
    let (key, mut req) = user_generate(chip, user_id, g, cfg.key_len, t, rng)?;
    req.crc = Some(crc(key.bits(), cfg)?.to_hex());
    Ok((key, req))
}

/// Recovers `K_R` from the server's ciphertext using the user's own key.
pub fn user_decrypt(cipher: &dyn Cipher, own_key: &KeyString, ciphertext: &[u8]) -> Result<KeyString> {
    let plain = cipher.decrypt(own_key, ciphertext)?;
    let bits = unpack_bits(&plain, own_key.len())?;
    Ok(KeyString::from_trusted(
        bits,
        own_key.derived_at(),
        KeySource::Decrypted,
    ))
}

/// Knobs for one user-to-user exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeParams {
    pub hash_timers: usize,
    pub key_timers: usize,
    pub delta_t: DeltaTDistribution,
}

/// Everything a completed exchange produced.
#[derive(Debug)]
pub struct ExchangeOutcome {
    pub session: Session,
    pub request_a: KeyRequest,
    pub request_b: KeyRequest,
    /// `K_R` as decrypted by user A.
    pub k_r_a: KeyString,
    pub k_r_b: KeyString,
}

impl ExchangeOutcome {
    pub fn keys_agree(&self) -> bool {
        self.k_r_a == self.k_r_b && self.k_r_a == *self.session.k_r()
    }
}

/// Runs protocol 2 between two chipset holders over `channel`.
///
/// Each user measures at the current clock time and broadcasts after a
/// sampled wait. The server derives from what it sees on the channel and
/// publishes one ciphertext per user.
#[allow(clippy::too_many_arguments)]
pub fn exchange_between_users<R: RngCore>(
    server: &ServerRegistry,
    (user_a, chip_a): (&str, &mut Chipset),
    (user_b, chip_b): (&str, &mut Chipset),
    params: &ExchangeParams,
    channel: &PublicChannel,
    clock: &SimClock,
    rng: &mut R,
) -> Result<ExchangeOutcome> {
    params.delta_t.validate()?;
    let mut inbox = channel.subscribe();

    let (k_a, req_a) = user_generate(chip_a, user_a, params.hash_timers, params.key_timers, clock.now(), rng)?;
    broadcast_after_wait(channel, &req_a, params.delta_t.sample(rng), clock)?;
    let (k_b, req_b) = user_generate(chip_b, user_b, params.hash_timers, params.key_timers, clock.now(), rng)?;
    broadcast_after_wait(channel, &req_b, params.delta_t.sample(rng), clock)?;

    let seen: Vec<KeyRequest> = inbox
        .poll(clock)
        .into_iter()
        .filter_map(|m| match m.body {
            MessageBody::KeyRequest(r) => Some(r),
            MessageBody::Ciphertext { .. } => None,
        })
        .collect();
    let find = |user: &str| {
        seen.iter()
            .find(|r| r.user_id == user)
            .cloned()
            .ok_or_else(|| Error::MalformedRequest(format!("no request from {user} on the channel")))
    };
    let (seen_a, seen_b) = (find(user_a)?, find(user_b)?);

    let session = server.run_session(&seen_a, &seen_b, rng)?;
    let now = clock.now();
    for (to, ct) in [(user_a, session.ciphertext_a()), (user_b, session.ciphertext_b())] {
        channel.publish(PublicMessage {
            visible_at: now,
            sender: "server".into(),
            body: MessageBody::Ciphertext {
                to: to.to_string(),
                hex: hex::encode(ct),
            },
        });
    }

    let k_r_a = user_decrypt(server.cipher(), &k_a, session.ciphertext_a())?;
    let k_r_b = user_decrypt(server.cipher(), &k_b, session.ciphertext_b())?;
    Ok(ExchangeOutcome {
        session,
        request_a: req_a,
        request_b: req_b,
        k_r_a,
        k_r_b,
    })
}
