//! Rule-driven Dolev-Yao attacker sitting on the RF and Internet channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::knowledge::Knowledge;
use crate::types::EntityId;
use crate::wire::{decode_frame, encode_frame, Channel, Message, HEADER_LEN, MESSAGE_TAGS};

/// Frame as offered to the adversary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observed {
    pub seq: u64,
    pub channel: Channel,
    pub src: EntityId,
    pub dst: EntityId,
    pub bytes: Vec<u8>,
}

impl Observed {
    pub fn tag(&self) -> u8 {
        self.bytes[0]
    }
}

/// What reaches the destination in place of an observed frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Delivery {
    Original,
    Modified(Vec<u8>),
    Injected(Vec<u8>),
    Replayed { of: u64, bytes: Vec<u8> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Trigger {
    pub channel: Option<Channel>,
    pub tag: Option<u8>,
    /// Fire only on the n-th matching frame, counting from zero.
    pub occurrence: Option<u32>,
}

impl Trigger {
    pub fn any() -> Self {
        Trigger::default()
    }

    pub fn tag(tag: u8) -> Self {
        Trigger { tag: Some(tag), ..Trigger::default() }
    }

    pub fn channel(channel: Channel) -> Self {
        Trigger { channel: Some(channel), ..Trigger::default() }
    }

    fn matches(&self, f: &Observed) -> bool {
        self.channel.is_none_or(|c| c == f.channel) && self.tag.is_none_or(|t| t == f.tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Deliver,
    Drop,
    /// Flip one random bit of the body.
    FlipBit,
    /// Deliver a random earlier frame from the same channel instead.
    ReplayEarlier,
    /// Swap in an earlier frame with the same tag.
    Substitute,
    /// Deliver the frame, then a fabricated frame of the given tag.
    InjectForged {
        tag: u8,
    },
    Duplicate,
}

impl Action {
    pub const KINDS: usize = 7;

    pub fn name(&self) -> &'static str {
        match self {
            Action::Deliver => "deliver",
            Action::Drop => "drop",
            Action::FlipBit => "flip-bit",
            Action::ReplayEarlier => "replay-earlier",
            Action::Substitute => "substitute",
            Action::InjectForged { .. } => "inject-forged",
            Action::Duplicate => "duplicate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rule {
    pub trigger: Trigger,
    pub action: Action,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("rule {0} targets the OOB channel, which requires physical contact")]
    OobRule(usize),
    #[error("rule {index} injects unknown tag 0x{tag:02x}")]
    UnknownTag { index: usize, tag: u8 },
}

pub struct Adversary {
    rules: Vec<Rule>,
    hits: Vec<u32>,
    rng: ChaCha20Rng,
    seen: Vec<Observed>,
    knowledge: Knowledge,
    offered: u64,
}

impl Adversary {
    pub fn new(rules: Vec<Rule>, seed: u64) -> Result<Self, PolicyError> {
        for (i, r) in rules.iter().enumerate() {
            if r.trigger.channel == Some(Channel::Oob) {
                return Err(PolicyError::OobRule(i));
            }
            if let Action::InjectForged { tag } = r.action {
                if !Message::is_known_tag(tag) {
                    return Err(PolicyError::UnknownTag { index: i, tag });
                }
            }
        }
        Ok(Adversary {
            hits: vec![0; rules.len()],
            rules,
            rng: ChaCha20Rng::seed_from_u64(seed),
            seen: Vec::new(),
            knowledge: Knowledge::default(),
            offered: 0,
        })
    }

    /// Passive eavesdropper.
    pub fn passive(seed: u64) -> Self {
        Adversary::new(Vec::new(), seed).expect("empty policy is valid")
    }

    /// Random policy over the given tags, for property runs.
    pub fn random(seed: u64, tags: &[u8], rules: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5EED);
        let mut out = Vec::with_capacity(rules);
        for _ in 0..rules {
            let tag = tags[rng.gen_range(0..tags.len())];
            let occurrence = rng.gen_bool(0.7).then(|| rng.gen_range(0..3));
            let action = match rng.gen_range(0..Action::KINDS) {
                0 => Action::Deliver,
                1 => Action::Drop,
                2 => Action::FlipBit,
                3 => Action::ReplayEarlier,
                4 => Action::Substitute,
                5 => Action::InjectForged { tag: tags[rng.gen_range(0..tags.len())] },
                _ => Action::Duplicate,
            };
            out.push(Rule { trigger: Trigger { channel: None, tag: Some(tag), occurrence }, action });
        }
        Adversary::new(out, seed).expect("random policies avoid OOB and use known tags")
    }

    pub fn with_knowledge(mut self, knowledge: Knowledge) -> Self {
        self.knowledge = knowledge;
        self
    }

    pub fn knowledge(&self) -> &Knowledge {
        &self.knowledge
    }

    pub fn seen(&self) -> &[Observed] {
        &self.seen
    }

    /// Frames offered so far.
    pub fn offered(&self) -> u64 {
        self.offered
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    fn pick(&mut self, frame: &Observed) -> Action {
        for (i, r) in self.rules.iter().enumerate() {
            if !r.trigger.matches(frame) {
                continue;
            }
            let n = self.hits[i];
            self.hits[i] += 1;
            if r.trigger.occurrence.is_none_or(|o| o == n) {
                return r.action;
            }
        }
        Action::Deliver
    }

    pub fn on_frame(&mut self, frame: &Observed) -> Vec<Delivery> {
        self.offered += 1;
        if let Ok(msg) = decode_frame(&frame.bytes) {
            self.knowledge.observe(&msg);
        }
        let action = self.pick(frame);
        let out = match action {
            Action::Deliver => vec![Delivery::Original],
            Action::Drop => Vec::new(),
            Action::FlipBit => vec![Delivery::Modified(self.flip(&frame.bytes))],
            Action::ReplayEarlier => {
                let pool: Vec<&Observed> = self.seen.iter().filter(|o| o.channel == frame.channel).collect();
                match pool.is_empty() {
                    true => vec![Delivery::Original],
                    false => {
                        let o = pool[self.rng.gen_range(0..pool.len())];
                        vec![Delivery::Replayed { of: o.seq, bytes: o.bytes.clone() }]
                    }
                }
            }
            Action::Substitute => {
                let pool: Vec<&Observed> = self.seen.iter().filter(|o| o.tag() == frame.tag()).collect();
                match pool.is_empty() {
                    true => vec![Delivery::Original],
                    false => {
                        let o = pool[self.rng.gen_range(0..pool.len())];
                        vec![Delivery::Replayed { of: o.seq, bytes: o.bytes.clone() }]
                    }
                }
            }
            Action::InjectForged { tag } => vec![Delivery::Original, Delivery::Injected(self.forge(tag))],
            Action::Duplicate => vec![Delivery::Original, Delivery::Original],
        };
        self.seen.push(frame.clone());
        out
    }

    fn flip(&mut self, bytes: &[u8]) -> Vec<u8> {
        let mut out = bytes.to_vec();
        if out.len() > HEADER_LEN {
            let bit = self.rng.gen_range(HEADER_LEN * 8..out.len() * 8);
            out[bit / 8] ^= 0x80 >> (bit % 8);
        }
        out
    }

    /// Fabricates a frame: a mutated copy of an earlier frame with that tag
    /// when one exists, otherwise a random well-typed message.
    fn forge(&mut self, tag: u8) -> Vec<u8> {
        let earlier: Vec<Vec<u8>> = self.seen.iter().filter(|o| o.tag() == tag).map(|o| o.bytes.clone()).collect();
        if !earlier.is_empty() && self.rng.gen_bool(0.5) {
            let base = earlier[self.rng.gen_range(0..earlier.len())].clone();
            return self.flip(&base);
        }
        let msg = Message::random_with_tag(tag, &mut self.rng).expect("tag checked at construction");
        encode_frame(&msg).unwrap_or_else(|_| vec![tag, 0, 0])
    }
}

/// Every tag carried on the RF or Internet channels.
pub fn attackable_tags() -> Vec<u8> {
    MESSAGE_TAGS.iter().filter(|(_, _, c)| matches!(c, Channel::Rf | Channel::Internet)).map(|(t, _, _)| *t).collect()
}
