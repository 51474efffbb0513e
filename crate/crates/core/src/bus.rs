//! Accounting message bus between the coordinator, agents and an optional
//! trusted device.
//!
//! Every message is serialized to its canonical byte form, recorded, and
//! decoded again before delivery, so the receiver only ever sees what went
//! over the wire and byte counts come from the encoding rather than from
//! in-memory sizes.
//!
//! Wire layout (little-endian unless noted):
//!
//! ```text
//! header   kind u8 | sender u8 tag, u16 index | receiver u8 tag, u16 index | payload tag u8 | count u32
//! ids      count × (episode u32, step u32)
//! reals    count × f64
//! cipher   width u16, then count × width bytes (big-endian integers, zero padded)
//! exp      count × (id, obs_len u16, obs f64s, act_len u16, act f64s, reward f64,
//!                   next_len u16, next_obs f64s, done u8)
//! ```

use std::collections::BTreeMap;
use std::io::Write;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::agent::{Experience, MemoryId};
use crate::error::{Error, Result};

pub const HEADER_BYTES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Ids,
    Q,
    TargetQ,
    RHat,
    Loss,
    GradQ,
    GradInterface,
    CipherBlob,
    ActivationRoundtrip,
    Experience,
    Weights,
}

impl MessageKind {
    pub const ALL: [MessageKind; 11] = [
        MessageKind::Ids,
        MessageKind::Q,
        MessageKind::TargetQ,
        MessageKind::RHat,
        MessageKind::Loss,
        MessageKind::GradQ,
        MessageKind::GradInterface,
        MessageKind::CipherBlob,
        MessageKind::ActivationRoundtrip,
        MessageKind::Experience,
        MessageKind::Weights,
    ];

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Result<Self> {
        Self::ALL
            .get(c as usize)
            .copied()
            .ok_or_else(|| Error::Data(format!("unknown message kind {c}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Ids => "ids",
            MessageKind::Q => "q",
            MessageKind::TargetQ => "target_q",
            MessageKind::RHat => "r_hat",
            MessageKind::Loss => "loss",
            MessageKind::GradQ => "grad_q",
            MessageKind::GradInterface => "grad_interface",
            MessageKind::CipherBlob => "cipher_blob",
            MessageKind::ActivationRoundtrip => "activation_roundtrip",
            MessageKind::Experience => "experience",
            MessageKind::Weights => "weights",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Coordinator,
    Agent(u16),
    TrustedDevice,
}

impl Endpoint {
    pub fn agent(i: usize) -> Self {
        Endpoint::Agent(i as u16)
    }

    fn encode(self, out: &mut Vec<u8>) {
        let (tag, idx) = match self {
            Endpoint::Coordinator => (0u8, 0u16),
            Endpoint::Agent(i) => (1, i),
            Endpoint::TrustedDevice => (2, 0),
        };
        out.push(tag);
        out.extend_from_slice(&idx.to_le_bytes());
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let tag = r.u8()?;
        let idx = r.u16()?;
        match tag {
            0 => Ok(Endpoint::Coordinator),
            1 => Ok(Endpoint::Agent(idx)),
            2 => Ok(Endpoint::TrustedDevice),
            t => Err(Error::Data(format!("unknown endpoint tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Ids(Vec<MemoryId>),
    Reals(Vec<f64>),
    /// Fixed-width big integers, e.g. ciphertexts mod n².
    Cipher { width: u16, items: Vec<BigUint> },
    Experiences(Vec<(MemoryId, Experience)>),
}

impl Payload {
    fn tag(&self) -> u8 {
        match self {
            Payload::Ids(_) => 0,
            Payload::Reals(_) => 1,
            Payload::Cipher { .. } => 2,
            Payload::Experiences(_) => 3,
        }
    }

    fn count(&self) -> usize {
        match self {
            Payload::Ids(v) => v.len(),
            Payload::Reals(v) => v.len(),
            Payload::Cipher { items, .. } => items.len(),
            Payload::Experiences(v) => v.len(),
        }
    }

    pub fn reals(&self) -> Result<&[f64]> {
        match self {
            Payload::Reals(v) => Ok(v),
            _ => Err(Error::Usage("expected a real-valued payload".into())),
        }
    }

    pub fn ids(&self) -> Result<&[MemoryId]> {
        match self {
            Payload::Ids(v) => Ok(v),
            _ => Err(Error::Usage("expected an id payload".into())),
        }
    }

    pub fn cipher(&self) -> Result<&[BigUint]> {
        match self {
            Payload::Cipher { items, .. } => Ok(items),
            _ => Err(Error::Usage("expected a ciphertext payload".into())),
        }
    }

    pub fn into_reals(self) -> Result<Vec<f64>> {
        match self {
            Payload::Reals(v) => Ok(v),
            _ => Err(Error::Usage("expected a real-valued payload".into())),
        }
    }

    pub fn into_cipher(self) -> Result<Vec<BigUint>> {
        match self {
            Payload::Cipher { items, .. } => Ok(items),
            _ => Err(Error::Usage("expected a ciphertext payload".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub kind: MessageKind,
    pub sender: Endpoint,
    pub receiver: Endpoint,
    pub payload: Payload,
}

fn put_id(out: &mut Vec<u8>, id: MemoryId) {
    out.extend_from_slice(&id.episode.to_le_bytes());
    out.extend_from_slice(&id.step.to_le_bytes());
}

fn put_reals(out: &mut Vec<u8>, v: &[f64]) -> Result<()> {
    let len = u16::try_from(v.len()).map_err(|_| Error::Usage("vector too long for wire".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

impl Message {
    pub fn new(kind: MessageKind, sender: Endpoint, receiver: Endpoint, payload: Payload) -> Self {
        Message {
            kind,
            sender,
            receiver,
            payload,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let count = u32::try_from(self.payload.count())
            .map_err(|_| Error::Usage("payload too large".into()))?;
        let mut out = Vec::with_capacity(HEADER_BYTES + 8 * self.payload.count());
        out.push(self.kind.code());
        self.sender.encode(&mut out);
        self.receiver.encode(&mut out);
        out.push(self.payload.tag());
        out.extend_from_slice(&count.to_le_bytes());
        match &self.payload {
            Payload::Ids(ids) => ids.iter().for_each(|id| put_id(&mut out, *id)),
            Payload::Reals(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::Cipher { width, items } => {
                out.extend_from_slice(&width.to_le_bytes());
                for c in items {
                    let bytes = c.to_bytes_be();
                    if bytes.len() > *width as usize {
                        return Err(Error::Usage(format!(
                            "integer of {} bytes exceeds cipher width {width}",
                            bytes.len()
                        )));
                    }
                    out.resize(out.len() + *width as usize - bytes.len(), 0);
                    out.extend_from_slice(&bytes);
                }
            }
            Payload::Experiences(v) => {
                for (id, e) in v {
                    put_id(&mut out, *id);
                    put_reals(&mut out, &e.observation)?;
                    put_reals(&mut out, &e.action)?;
                    out.extend_from_slice(&e.reward.to_le_bytes());
                    put_reals(&mut out, &e.next_observation)?;
                    out.push(u8::from(e.done));
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let kind = MessageKind::from_code(r.u8()?)?;
        let sender = Endpoint::decode(&mut r)?;
        let receiver = Endpoint::decode(&mut r)?;
        let tag = r.u8()?;
        let count = r.u32()? as usize;
        let payload = match tag {
            0 => Payload::Ids((0..count).map(|_| r.id()).collect::<Result<_>>()?),
            1 => Payload::Reals((0..count).map(|_| r.f64()).collect::<Result<_>>()?),
            2 => {
                let width = r.u16()?;
                let items = (0..count)
                    .map(|_| r.take(width as usize).map(BigUint::from_bytes_be))
                    .collect::<Result<_>>()?;
                Payload::Cipher { width, items }
            }
            3 => {
                let mut v = Vec::with_capacity(count);
                for _ in 0..count {
                    let id = r.id()?;
                    let observation = r.reals()?;
                    let action = r.reals()?;
                    let reward = r.f64()?;
                    let next_observation = r.reals()?;
                    let done = match r.u8()? {
                        0 => false,
                        1 => true,
                        b => return Err(Error::Data(format!("invalid done byte {b}"))),
                    };
                    v.push((
                        id,
                        Experience {
                            observation,
                            action,
                            reward,
                            next_observation,
                            done,
                        },
                    ));
                }
                Payload::Experiences(v)
            }
            t => return Err(Error::Data(format!("unknown payload tag {t}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Data(format!(
                "{} trailing bytes after message",
                bytes.len() - r.pos
            )));
        }
        Ok(Message {
            kind,
            sender,
            receiver,
            payload,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Data("truncated message".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn id(&mut self) -> Result<MemoryId> {
        Ok(MemoryId::new(self.u32()?, self.u32()?))
    }

    fn reals(&mut self) -> Result<Vec<f64>> {
        let n = self.u16()? as usize;
        (0..n).map(|_| self.f64()).collect()
    }
}

/// One line of the bus log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub round: u64,
    pub sender: Endpoint,
    pub receiver: Endpoint,
    pub kind: MessageKind,
    pub payload_bytes: u64,
}

/// Running totals kept regardless of whether individual records are retained.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BusTotals {
    pub messages: u64,
    pub bytes: u64,
    pub rounds: u64,
    pub bytes_by_kind: BTreeMap<MessageKind, u64>,
    pub messages_by_kind: BTreeMap<MessageKind, u64>,
}

impl BusTotals {
    pub fn bytes_of(&self, kind: MessageKind) -> u64 {
        self.bytes_by_kind.get(&kind).copied().unwrap_or(0)
    }

    pub fn messages_of(&self, kind: MessageKind) -> u64 {
        self.messages_by_kind.get(&kind).copied().unwrap_or(0)
    }

    pub fn add(&mut self, rec: &MessageRecord) {
        self.messages += 1;
        self.bytes += rec.payload_bytes;
        *self.bytes_by_kind.entry(rec.kind).or_default() += rec.payload_bytes;
        *self.messages_by_kind.entry(rec.kind).or_default() += 1;
    }

    /// Difference `self − earlier`, for per-interval accounting.
    pub fn since(&self, earlier: &BusTotals) -> BusTotals {
        let mut out = BusTotals {
            messages: self.messages - earlier.messages,
            bytes: self.bytes - earlier.bytes,
            rounds: self.rounds - earlier.rounds,
            ..Default::default()
        };
        for (k, v) in &self.bytes_by_kind {
            let d = v - earlier.bytes_by_kind.get(k).copied().unwrap_or(0);
            if d > 0 {
                out.bytes_by_kind.insert(*k, d);
            }
        }
        for (k, v) in &self.messages_by_kind {
            let d = v - earlier.messages_by_kind.get(k).copied().unwrap_or(0);
            if d > 0 {
                out.messages_by_kind.insert(*k, d);
            }
        }
        out
    }
}

/// Link model for the deterministic delay proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkModel {
    /// Bytes per second.
    pub rate: f64,
    /// Seconds added per message.
    pub latency: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            rate: 12.5e6,
            latency: 1e-3,
        }
    }
}

pub struct Bus {
    round: u64,
    totals: BusTotals,
    records: Option<Vec<MessageRecord>>,
    sink: Option<Box<dyn Write + Send>>,
    tap: Option<Vec<(u64, Message)>>,
    link: LinkModel,
    delay: f64,
    round_bytes: u64,
    round_msgs: u64,
}

impl std::fmt::Debug for Bus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bus")
            .field("round", &self.round)
            .field("totals", &self.totals)
            .finish_non_exhaustive()
    }
}

impl Default for Bus {
    fn default() -> Self {
        Bus::new()
    }
}

impl Bus {
    /// A bus that keeps every record in memory.
    pub fn new() -> Self {
        Bus {
            round: 0,
            totals: BusTotals::default(),
            records: Some(Vec::new()),
            sink: None,
            tap: None,
            link: LinkModel::default(),
            delay: 0.0,
            round_bytes: 0,
            round_msgs: 0,
        }
    }

    /// Totals only; for long runs where the log would not fit in memory.
    pub fn counting() -> Self {
        Bus {
            records: None,
            ..Bus::new()
        }
    }

    pub fn with_link(mut self, link: LinkModel) -> Self {
        self.link = link;
        self
    }

    /// Streams each record as a JSON line to `sink`.
    pub fn set_sink(&mut self, sink: Box<dyn Write + Send>) {
        self.sink = Some(sink);
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(s) = self.sink.as_mut() {
            s.flush().map_err(|e| Error::io("bus log", e))?;
        }
        Ok(())
    }

    /// Starts keeping decoded copies of every delivered message.
    pub fn enable_tap(&mut self) {
        if self.tap.is_none() {
            self.tap = Some(Vec::new());
        }
    }

    pub fn take_tap(&mut self) -> Vec<(u64, Message)> {
        self.tap.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn tap(&self) -> &[(u64, Message)] {
        self.tap.as_deref().unwrap_or(&[])
    }

    /// Closes the current protocol round and opens the next.
    pub fn next_round(&mut self) {
        if self.round_msgs > 0 {
            self.delay += self.round_bytes as f64 / self.link.rate + self.link.latency * self.round_msgs as f64;
            self.totals.rounds += 1;
            self.round += 1;
        }
        self.round_bytes = 0;
        self.round_msgs = 0;
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// Serializes, records and decodes `msg`; the decoded copy is what the
    /// receiver gets.
    pub fn deliver(&mut self, msg: Message) -> Result<Message> {
        let bytes = msg.encode()?;
        let rec = MessageRecord {
            round: self.round,
            sender: msg.sender,
            receiver: msg.receiver,
            kind: msg.kind,
            payload_bytes: bytes.len() as u64,
        };
        self.totals.add(&rec);
        self.round_bytes += rec.payload_bytes;
        self.round_msgs += 1;
        if let Some(sink) = self.sink.as_mut() {
            serde_json::to_writer(&mut *sink, &rec)?;
            sink.write_all(b"\n").map_err(|e| Error::io("bus log", e))?;
        }
        if let Some(r) = self.records.as_mut() {
            r.push(rec);
        }
        let decoded = Message::decode(&bytes)?;
        if let Some(t) = self.tap.as_mut() {
            t.push((self.round, decoded.clone()));
        }
        Ok(decoded)
    }

    /// Convenience wrapper returning only the delivered payload.
    pub fn send(
        &mut self,
        kind: MessageKind,
        sender: Endpoint,
        receiver: Endpoint,
        payload: Payload,
    ) -> Result<Payload> {
        Ok(self.deliver(Message::new(kind, sender, receiver, payload))?.payload)
    }

    pub fn records(&self) -> &[MessageRecord] {
        self.records.as_deref().unwrap_or(&[])
    }

    pub fn totals(&self) -> &BusTotals {
        &self.totals
    }

    /// Accumulated delay proxy in seconds over closed rounds.
    pub fn delay_proxy(&self) -> f64 {
        self.delay
    }
}

/// Kinds an agent may emit without disclosing experience data.
pub const AGENT_SAFE_KINDS: [MessageKind; 7] = [
    MessageKind::Ids,
    MessageKind::Q,
    MessageKind::TargetQ,
    MessageKind::Loss,
    MessageKind::CipherBlob,
    MessageKind::ActivationRoundtrip,
    MessageKind::GradInterface,
];

/// Privacy-boundary audit: agents only ever sent ids, q values (possibly
/// encrypted), losses and interface gradients.
pub fn audit_agent_messages(records: &[MessageRecord]) -> Result<()> {
    for r in records {
        if matches!(r.sender, Endpoint::Agent(_)) && !AGENT_SAFE_KINDS.contains(&r.kind) {
            return Err(Error::Integrity(format!(
                "agent {:?} sent a {} message in round {}",
                r.sender,
                r.kind.name(),
                r.round
            )));
        }
    }
    Ok(())
}

/// Totals recomputed from a record list.
pub fn account(records: &[MessageRecord]) -> BusTotals {
    let mut t = BusTotals::default();
    for r in records {
        t.add(r);
    }
    t.rounds = records
        .iter()
        .map(|r| r.round)
        .collect::<std::collections::BTreeSet<_>>()
        .len() as u64;
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn msg(payload: Payload) -> Message {
        Message::new(MessageKind::Q, Endpoint::agent(2), Endpoint::Coordinator, payload)
    }

    #[test]
    fn header_and_real_sizes() {
        let m = msg(Payload::Reals(vec![1.0; 64]));
        assert_eq!(m.encode().unwrap().len(), HEADER_BYTES + 64 * 8);
        let ids = msg(Payload::Ids(vec![MemoryId::new(1, 2)]));
        assert_eq!(ids.encode().unwrap().len(), HEADER_BYTES + 8);
    }

    #[test]
    fn experience_size() {
        let e = Experience {
            observation: vec![0.5; 17],
            action: vec![0.1, 0.2],
            reward: 1.0,
            next_observation: vec![0.25; 17],
            done: true,
        };
        let m = msg(Payload::Experiences(vec![(MemoryId::new(0, 0), e)]));
        let expect = HEADER_BYTES + 8 + (2 + 17 * 8) + (2 + 2 * 8) + 8 + (2 + 17 * 8) + 1;
        assert_eq!(m.encode().unwrap().len(), expect);
    }

    #[test]
    fn cipher_is_fixed_width() {
        let m = msg(Payload::Cipher {
            width: 16,
            items: vec![BigUint::from(1u8), BigUint::from(u64::MAX)],
        });
        let b = m.encode().unwrap();
        assert_eq!(b.len(), HEADER_BYTES + 2 + 32);
        assert_eq!(Message::decode(&b).unwrap(), m);
        let too_wide = msg(Payload::Cipher {
            width: 1,
            items: vec![BigUint::from(300u32)],
        });
        assert!(too_wide.encode().is_err());
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(matches!(Message::decode(&[]), Err(Error::Data(_))));
        let mut b = msg(Payload::Reals(vec![1.0])).encode().unwrap();
        b.push(0);
        assert!(matches!(Message::decode(&b), Err(Error::Data(_))));
        b.truncate(b.len() - 2);
        assert!(matches!(Message::decode(&b), Err(Error::Data(_))));
    }

    #[test]
    fn bus_records_one_per_message_and_rounds() {
        let mut bus = Bus::new();
        bus.enable_tap();
        bus.send(MessageKind::Ids, Endpoint::Coordinator, Endpoint::agent(0), Payload::Ids(vec![MemoryId::new(0, 1)]))
            .unwrap();
        bus.send(MessageKind::Q, Endpoint::agent(0), Endpoint::Coordinator, Payload::Reals(vec![0.5]))
            .unwrap();
        bus.next_round();
        bus.next_round();
        bus.send(MessageKind::Loss, Endpoint::agent(0), Endpoint::Coordinator, Payload::Reals(vec![0.5, 1.0]))
            .unwrap();
        bus.next_round();
        assert_eq!(bus.records().len(), 3);
        assert_eq!(bus.totals().rounds, 2);
        assert_eq!(bus.records()[2].round, 1);
        assert_eq!(bus.tap().len(), 3);
        let t = account(bus.records());
        assert_eq!(t.bytes, bus.totals().bytes);
        assert_eq!(t.bytes_by_kind, bus.totals().bytes_by_kind);
        assert_eq!(t.rounds, 2);
        audit_agent_messages(bus.records()).unwrap();
    }

    #[test]
    fn audit_flags_experience_uploads() {
        let mut bus = Bus::new();
        bus.send(
            MessageKind::Experience,
            Endpoint::agent(1),
            Endpoint::Coordinator,
            Payload::Experiences(vec![]),
        )
        .unwrap();
        assert!(matches!(audit_agent_messages(bus.records()), Err(Error::Integrity(_))));
    }

    #[test]
    fn delay_proxy_per_round() {
        let mut bus = Bus::new().with_link(LinkModel { rate: 100.0, latency: 0.5 });
        bus.send(MessageKind::Q, Endpoint::agent(0), Endpoint::Coordinator, Payload::Reals(vec![0.0; 11]))
            .unwrap();
        bus.next_round();
        // 12 + 88 = 100 bytes at 100 B/s plus one message latency
        assert!((bus.delay_proxy() - 1.5).abs() < 1e-12);
    }

    fn arb_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e6f64..1e6, 0..20)
    }

    fn arb_payload() -> impl Strategy<Value = Payload> {
        prop_oneof![
            prop::collection::vec((any::<u32>(), any::<u32>()), 0..10)
                .prop_map(|v| Payload::Ids(v.into_iter().map(|(e, s)| MemoryId::new(e, s)).collect())),
            prop::collection::vec(any::<f64>().prop_filter("nan breaks eq", |x| !x.is_nan()), 0..30)
                .prop_map(Payload::Reals),
            prop::collection::vec(any::<u128>(), 0..5).prop_map(|v| Payload::Cipher {
                width: 17,
                items: v.into_iter().map(BigUint::from).collect(),
            }),
            prop::collection::vec(
                (any::<u32>(), arb_vec(), arb_vec(), -10.0f64..10.0, arb_vec(), any::<bool>()),
                0..4
            )
            .prop_map(|v| Payload::Experiences(
                v.into_iter()
                    .map(|(s, o, a, r, n, d)| (
                        MemoryId::new(0, s),
                        Experience {
                            observation: o,
                            action: a,
                            reward: r,
                            next_observation: n,
                            done: d,
                        }
                    ))
                    .collect()
            )),
        ]
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            kind in 0u8..11,
            s in 0u16..5,
            payload in arb_payload(),
        ) {
            let m = Message::new(
                MessageKind::from_code(kind).unwrap(),
                Endpoint::Agent(s),
                Endpoint::TrustedDevice,
                payload,
            );
            let b = m.encode().unwrap();
            prop_assert_eq!(Message::decode(&b).unwrap(), m);
        }
    }
}
