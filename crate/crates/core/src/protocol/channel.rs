//! Simulated clock and public broadcast channel.

use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::KeyRequest;
use crate::timer_model::Interval;

pub const HOUR: f64 = 3600.0;

/// Global simulated time in seconds since the chipset epoch. Shared by every
/// party; cloning yields a handle to the same clock.
#[derive(Debug, Clone, Default)]
pub struct SimClock {
    now: Arc<Mutex<f64>>,
}

impl SimClock {
    pub fn new(start: f64) -> Self {
        SimClock {
            now: Arc::new(Mutex::new(start)),
        }
    }

    pub fn now(&self) -> f64 {
        *self.now.lock().unwrap()
    }

    /// Moves the clock forward to `t`. Time never runs backwards.
    pub fn advance_to(&self, t: f64) {
        let mut now = self.now.lock().unwrap();
        if t > *now {
            *now = t;
        }
    }

    pub fn advance_by(&self, dt: f64) {
        let mut now = self.now.lock().unwrap();
        *now += dt.max(0.0);
    }
}

/// Wait period between measurement and broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaTDistribution {
    Fixed { seconds: f64 },
    Uniform { seconds: Interval },
}

impl Default for DeltaTDistribution {
    fn default() -> Self {
        DeltaTDistribution::Uniform {
            seconds: Interval::new(HOUR, 48.0 * HOUR),
        }
    }
}

impl DeltaTDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            DeltaTDistribution::Fixed { seconds } if *seconds >= 0.0 && seconds.is_finite() => Ok(()),
            DeltaTDistribution::Uniform { seconds } if seconds.lo >= 0.0 => seconds.validate("delta_t"),
            other => Err(Error::InvalidRange(format!("delta_t {other:?} must be >= 0"))),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DeltaTDistribution::Fixed { seconds } => *seconds,
            DeltaTDistribution::Uniform { seconds } => seconds.sample(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum MessageBody {
    KeyRequest(KeyRequest),
    /// Ciphertext from the server to `to`, hex encoded.
    Ciphertext {
        to: String,
        hex: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicMessage {
    pub visible_at: f64,
    pub sender: String,
    #[serde(flatten)]
    pub body: MessageBody,
}

/// Append-only broadcast medium. Anyone holding a handle, including an
/// eavesdropper, sees every message once its time has come.
#[derive(Debug, Clone, Default)]
pub struct PublicChannel {
    log: Arc<Mutex<Vec<PublicMessage>>>,
}

impl PublicChannel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, msg: PublicMessage) {
        self.log.lock().unwrap().push(msg);
    }

    /// Messages visible at `now`, in publication order.
    pub fn visible(&self, now: f64) -> Vec<PublicMessage> {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|m| m.visible_at <= now)
            .cloned()
            .collect()
    }

    /// Every message ever published.
    pub fn transcript(&self) -> Vec<PublicMessage> {
        self.log.lock().unwrap().clone()
    }

    pub fn subscribe(&self) -> Subscriber {
        Subscriber {
            channel: self.clone(),
            seen: 0,
        }
    }
}

/// Cursor over a channel. Delivery is in publication order per channel.
#[derive(Debug)]
pub struct Subscriber {
    channel: PublicChannel,
    seen: usize,
}

impl Subscriber {
    /// New messages visible at `clock.now()`. A message not yet visible
    /// holds back everything published after it.
    pub fn poll(&mut self, clock: &SimClock) -> Vec<PublicMessage> {
        let now = clock.now();
        let log = self.channel.log.lock().unwrap();
        let fresh: Vec<PublicMessage> = log[self.seen..]
            .iter()
            .take_while(|m| m.visible_at <= now)
            .cloned()
            .collect();
        self.seen += fresh.len();
        fresh
    }
}

/// Publishes `req` so it becomes visible at `req.t + delta_t`, and advances
/// the shared clock to that instant.
pub fn broadcast_after_wait(
    channel: &PublicChannel,
    req: &KeyRequest,
    delta_t: f64,
    clock: &SimClock,
) -> Result<PublicMessage> {
    if !(delta_t >= 0.0) || !delta_t.is_finite() {
        return Err(Error::InvalidRange(format!("delta_t = {delta_t} must be >= 0")));
    }
    let msg = PublicMessage {
        visible_at: req.t + delta_t,
        sender: req.user_id.clone(),
        body: MessageBody::KeyRequest(req.clone()),
    };
    clock.advance_to(msg.visible_at);
    channel.publish(msg.clone());
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn req(t: f64) -> KeyRequest {
        KeyRequest {
            user_id: "u".into(),
            chipset_id: "c".into(),
            key_indices: vec![1, 2],
            hash_indices: vec![3],
            t,
            crc: None,
        }
    }

    #[test]
    fn zero_wait_is_immediately_visible() {
        let ch = PublicChannel::new();
        let clock = SimClock::new(100.0);
        let msg = broadcast_after_wait(&ch, &req(100.0), 0.0, &clock).unwrap();
        assert_eq!(msg.visible_at, 100.0);
        assert_eq!(ch.visible(100.0).len(), 1);
    }

    #[test]
    fn eavesdropper_sees_identical_tuple() {
        let ch = PublicChannel::new();
        let clock = SimClock::new(0.0);
        let mut eve = ch.subscribe();
        let r = req(10.0);
        broadcast_after_wait(&ch, &r, 7200.0, &clock).unwrap();
        let got = eve.poll(&clock);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].body, MessageBody::KeyRequest(r));
        assert_eq!(clock.now(), 7210.0);
        assert!(eve.poll(&clock).is_empty());
    }

    #[test]
    fn not_yet_visible_messages_are_withheld() {
        let ch = PublicChannel::new();
        ch.publish(PublicMessage {
            visible_at: 50.0,
            sender: "u".into(),
            body: MessageBody::KeyRequest(req(0.0)),
        });
        let clock = SimClock::new(10.0);
        let mut sub = ch.subscribe();
        assert!(sub.poll(&clock).is_empty());
        clock.advance_by(40.0);
        assert_eq!(sub.poll(&clock).len(), 1);
    }

    #[test]
    fn seeded_wait_is_reproducible() {
        let d = DeltaTDistribution::default();
        d.validate().unwrap();
        let a = d.sample(&mut ChaCha8Rng::seed_from_u64(3));
        let b = d.sample(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!((HOUR..=48.0 * HOUR).contains(&a));
    }

    #[test]
    fn negative_wait_rejected() {
        let ch = PublicChannel::new();
        assert!(broadcast_after_wait(&ch, &req(0.0), -1.0, &SimClock::default()).is_err());
        assert!(DeltaTDistribution::Fixed { seconds: -1.0 }.validate().is_err());
    }

    #[test]
    fn message_json_shape() {
        let msg = PublicMessage {
            visible_at: 1.0,
            sender: "srv".into(),
            body: MessageBody::Ciphertext {
                to: "a".into(),
                hex: "00ff".into(),
            },
        };
        let v: serde_json::Value = serde_json::to_value(&msg).unwrap();
        assert_eq!(v["kind"], "ciphertext");
        assert_eq!(v["payload"]["hex"], "00ff");
    }
}
