//! Discrete-event scheduler that carries frames between actors.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::adversary::{Adversary, Delivery, Observed};
use crate::crypto::hash;
use crate::entities::reader::KICK;
use crate::entities::{Card, Ctx, Implant, Node, Outgoing, ProtocolEvent, Reader, Server, Task};
use crate::types::{EntityId, NetworkZone};
use crate::wire::{decode_frame, encode_frame, Channel, Message};

/// Default one-way latency per channel in milliseconds.
pub fn latency_ms(channel: Channel) -> u64 {
    match channel {
        Channel::Rf => 2,
        Channel::Oob => 5,
        Channel::Internet => 20,
        Channel::Contact => 1,
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FrameAction {
    Deliver,
    Drop,
    Modify,
    Inject,
    ReplayOf(u64),
    /// OOB frame with no skin contact between the endpoints.
    NoContact,
}

impl FrameAction {
    pub fn label(&self) -> String {
        match self {
            FrameAction::Deliver => "deliver".into(),
            FrameAction::Drop => "drop".into(),
            FrameAction::Modify => "modify".into(),
            FrameAction::Inject => "inject".into(),
            FrameAction::ReplayOf(seq) => format!("replay-of({seq})"),
            FrameAction::NoContact => "no-contact".into(),
        }
    }
}

/// One line of the channel trace.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ChannelEvent {
    pub seq: u64,
    pub time: u64,
    pub channel: Channel,
    pub src: EntityId,
    pub dst: EntityId,
    pub action: FrameAction,
    pub frame: Vec<u8>,
}

impl ChannelEvent {
    pub fn line(&self) -> String {
        format!(
            "{} {} {} {} {} {}",
            self.seq,
            self.channel.name(),
            self.src.short(),
            self.dst.short(),
            self.action.label(),
            hex::encode(&self.frame)
        )
    }

    pub fn delivered(&self) -> bool {
        !matches!(self.action, FrameAction::Drop | FrameAction::NoContact)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TimedEvent {
    pub time: u64,
    pub node: EntityId,
    pub event: ProtocolEvent,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Pending {
    Frame { channel: Channel, src: EntityId, dst: EntityId, bytes: Vec<u8>, zone: NetworkZone },
    Timer { node: EntityId, token: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Scheduled {
    time: u64,
    order: u64,
    what: Pending,
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.order).cmp(&(other.time, other.order))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunStats {
    pub processed: u64,
    pub budget_exhausted: bool,
}

pub const DEFAULT_EVENT_BUDGET: u64 = 2_000_000;

pub struct World {
    now: u64,
    seed: u64,
    nodes: BTreeMap<EntityId, Node>,
    rngs: HashMap<EntityId, ChaCha20Rng>,
    zones: HashMap<EntityId, NetworkZone>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    order: u64,
    seq: u64,
    trace: Vec<ChannelEvent>,
    events: Vec<TimedEvent>,
    adversary: Option<Adversary>,
    touch: HashSet<(EntityId, EntityId)>,
    slots: HashMap<EntityId, EntityId>,
    contact_probe: bool,
    budget: u64,
}

fn node_rng(seed: u64, id: &EntityId) -> ChaCha20Rng {
    let d = hash(&[seed.to_be_bytes().as_slice(), id.as_bytes()].concat());
    ChaCha20Rng::from_seed(d)
}

impl World {
    pub fn new(seed: u64) -> Self {
        World {
            now: 0,
            seed,
            nodes: BTreeMap::new(),
            rngs: HashMap::new(),
            zones: HashMap::new(),
            queue: BinaryHeap::new(),
            order: 0,
            seq: 0,
            trace: Vec::new(),
            events: Vec::new(),
            adversary: None,
            touch: HashSet::new(),
            slots: HashMap::new(),
            contact_probe: false,
            budget: DEFAULT_EVENT_BUDGET,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn add_node(&mut self, node: Node, zone: NetworkZone) {
        let id = node.id();
        self.rngs.insert(id, node_rng(self.seed, &id));
        self.zones.insert(id, zone);
        self.nodes.insert(id, node);
    }

    pub fn set_zone(&mut self, id: EntityId, zone: NetworkZone) {
        self.zones.insert(id, zone);
    }

    pub fn zone(&self, id: &EntityId) -> NetworkZone {
        self.zones.get(id).copied().unwrap_or(NetworkZone::External)
    }

    pub fn set_adversary(&mut self, adversary: Adversary) {
        self.adversary = Some(adversary);
    }

    pub fn adversary(&self) -> Option<&Adversary> {
        self.adversary.as_ref()
    }

    pub fn take_adversary(&mut self) -> Option<Adversary> {
        self.adversary.take()
    }

    /// Route card-slot traffic through the adversary as well.
    pub fn set_contact_probe(&mut self, on: bool) {
        self.contact_probe = on;
    }

    pub fn set_event_budget(&mut self, budget: u64) {
        self.budget = budget;
    }

    /// Skin contact between a reader and an implant enables their OOB link.
    pub fn set_touch(&mut self, reader: EntityId, implant: EntityId, on: bool) {
        if on {
            self.touch.insert((reader, implant));
        } else {
            self.touch.remove(&(reader, implant));
        }
    }

    fn touching(&self, a: EntityId, b: EntityId) -> bool {
        self.touch.contains(&(a, b)) || self.touch.contains(&(b, a))
    }

    pub fn node(&self, id: &EntityId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn node_mut(&mut self, id: &EntityId) -> Option<&mut Node> {
        self.nodes.get_mut(id)
    }

    pub fn implant(&self, id: &EntityId) -> &Implant {
        match self.nodes.get(id) {
            Some(Node::Implant(n)) => n,
            _ => panic!("{} is not an implant", id.short()),
        }
    }

    pub fn reader(&self, id: &EntityId) -> &Reader {
        match self.nodes.get(id) {
            Some(Node::Reader(n)) => n,
            _ => panic!("{} is not a reader", id.short()),
        }
    }

    pub fn reader_mut(&mut self, id: &EntityId) -> &mut Reader {
        match self.nodes.get_mut(id) {
            Some(Node::Reader(n)) => n,
            _ => panic!("{} is not a reader", id.short()),
        }
    }

    pub fn card(&self, id: &EntityId) -> &Card {
        match self.nodes.get(id) {
            Some(Node::Card(n)) => n,
            _ => panic!("{} is not a card", id.short()),
        }
    }

    pub fn card_mut(&mut self, id: &EntityId) -> &mut Card {
        match self.nodes.get_mut(id) {
            Some(Node::Card(n)) => n,
            _ => panic!("{} is not a card", id.short()),
        }
    }

    pub fn server(&self, id: &EntityId) -> &Server {
        match self.nodes.get(id) {
            Some(Node::Server(n)) => n,
            _ => panic!("{} is not a server", id.short()),
        }
    }

    pub fn server_mut(&mut self, id: &EntityId) -> &mut Server {
        match self.nodes.get_mut(id) {
            Some(Node::Server(n)) => n,
            _ => panic!("{} is not a server", id.short()),
        }
    }

    pub fn insert_card(&mut self, reader: EntityId, card: EntityId) {
        self.slots.insert(reader, card);
        self.reader_mut(&reader).insert_card(Some(card));
    }

    /// Pulls the card out of the reader, cutting its power.
    pub fn remove_card(&mut self, reader: EntityId) {
        if let Some(card) = self.slots.remove(&reader) {
            self.card_mut(&card).power_cycle();
        }
        self.reader_mut(&reader).insert_card(None);
    }

    fn slot_connects(&self, a: EntityId, b: EntityId) -> bool {
        self.slots.get(&a) == Some(&b) || self.slots.get(&b) == Some(&a)
    }

    pub fn push_tasks(&mut self, reader: EntityId, tasks: impl IntoIterator<Item = Task>) {
        let r = self.reader_mut(&reader);
        for t in tasks {
            r.push_task(t);
        }
        self.schedule(self.now, Pending::Timer { node: reader, token: KICK });
    }

    /// Moves the clock forward with nothing delivered in between.
    pub fn advance(&mut self, ms: u64) {
        self.now += ms;
    }

    pub fn trace(&self) -> &[ChannelEvent] {
        &self.trace
    }

    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for e in &self.trace {
            let _ = writeln!(out, "{}", e.line());
        }
        out
    }

    pub fn events(&self) -> &[TimedEvent] {
        &self.events
    }

    pub fn protocol_events(&self) -> impl Iterator<Item = &ProtocolEvent> {
        self.events.iter().map(|e| &e.event)
    }

    fn schedule(&mut self, time: u64, what: Pending) {
        self.order += 1;
        self.queue.push(Reverse(Scheduled { time, order: self.order, what }));
    }

    fn record(&mut self, channel: Channel, src: EntityId, dst: EntityId, action: FrameAction, frame: Vec<u8>) -> u64 {
        let seq = self.seq;
        self.seq += 1;
        self.trace.push(ChannelEvent { seq, time: self.now, channel, src, dst, action, frame });
        seq
    }

    /// Puts a frame on the wire as if `src` had sent it. It passes the
    /// adversary like any other frame.
    pub fn inject(&mut self, src: EntityId, channel: Channel, dst: EntityId, msg: Message) {
        self.route(src, Outgoing { channel, dst, msg });
    }

    /// Delivers raw bytes verbatim, bypassing the adversary. Used to replay
    /// a recorded trace. Only RF and Internet frames can be replayed; OOB
    /// and card-contact frames are recorded as refused.
    pub fn replay_raw(&mut self, event: &ChannelEvent) {
        match event.channel {
            Channel::Oob => {
                self.record(event.channel, event.src, event.dst, FrameAction::NoContact, event.frame.clone());
                return;
            }
            Channel::Contact => {
                self.record(event.channel, event.src, event.dst, FrameAction::Drop, event.frame.clone());
                return;
            }
            Channel::Rf | Channel::Internet => {}
        }
        self.record(event.channel, event.src, event.dst, FrameAction::ReplayOf(event.seq), event.frame.clone());
        let zone = self.zone(&event.src);
        self.schedule(
            self.now + latency_ms(event.channel),
            Pending::Frame { channel: event.channel, src: event.src, dst: event.dst, bytes: event.frame.clone(), zone },
        );
    }

    fn route(&mut self, src: EntityId, out: Outgoing) {
        let bytes = encode_frame(&out.msg).expect("actors emit encodable frames");
        let (channel, dst) = (out.channel, out.dst);
        let zone = self.zone(&src);
        let at = self.now + latency_ms(channel);
        match channel {
            Channel::Oob => {
                if self.touching(src, dst) {
                    self.record(channel, src, dst, FrameAction::Deliver, bytes.clone());
                    self.schedule(at, Pending::Frame { channel, src, dst, bytes, zone });
                } else {
                    self.record(channel, src, dst, FrameAction::NoContact, bytes);
                }
                return;
            }
            Channel::Contact if !self.slot_connects(src, dst) => {
                self.record(channel, src, dst, FrameAction::Drop, bytes);
                return;
            }
            Channel::Contact if !self.contact_probe => {
                self.record(channel, src, dst, FrameAction::Deliver, bytes.clone());
                self.schedule(at, Pending::Frame { channel, src, dst, bytes, zone });
                return;
            }
            _ => {}
        }
        let Some(mut adv) = self.adversary.take() else {
            self.record(channel, src, dst, FrameAction::Deliver, bytes.clone());
            self.schedule(at, Pending::Frame { channel, src, dst, bytes, zone });
            return;
        };
        let observed = Observed { seq: self.seq, channel, src, dst, bytes: bytes.clone() };
        let deliveries = adv.on_frame(&observed);
        self.adversary = Some(adv);
        if deliveries.is_empty() {
            self.record(channel, src, dst, FrameAction::Drop, bytes.clone());
        }
        for d in deliveries {
            let (action, frame, from_zone) = match d {
                Delivery::Original => (FrameAction::Deliver, bytes.clone(), zone),
                Delivery::Modified(b) => (FrameAction::Modify, b, zone),
                Delivery::Injected(b) => (FrameAction::Inject, b, NetworkZone::External),
                Delivery::Replayed { of, bytes } => (FrameAction::ReplayOf(of), bytes, NetworkZone::External),
            };
            self.record(channel, src, dst, action, frame.clone());
            self.schedule(at, Pending::Frame { channel, src, dst, bytes: frame, zone: from_zone });
        }
    }

    /// Processes the next pending event, if any.
    pub fn step(&mut self) -> bool {
        let Some(Reverse(item)) = self.queue.pop() else { return false };
        self.now = self.now.max(item.time);
        self.dispatch(item.what);
        true
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Runs until no event is pending or the event budget is spent.
    pub fn run_until_quiescent(&mut self) -> RunStats {
        let mut processed = 0u64;
        while let Some(Reverse(item)) = self.queue.pop() {
            if processed >= self.budget {
                self.queue.push(Reverse(item));
                return RunStats { processed, budget_exhausted: true };
            }
            processed += 1;
            self.now = self.now.max(item.time);
            self.dispatch(item.what);
        }
        RunStats { processed, budget_exhausted: false }
    }

    fn dispatch(&mut self, what: Pending) {
        let (id, zone) = match &what {
            Pending::Frame { dst, zone, .. } => (*dst, *zone),
            Pending::Timer { node, .. } => (*node, self.zone(node)),
        };
        let Some(node) = self.nodes.get_mut(&id) else { return };
        let rng = self.rngs.get_mut(&id).expect("rng per node");
        let mut ctx = Ctx::new(self.now, id, rng);
        ctx.origin_zone = zone;
        match what {
            Pending::Frame { channel, src, bytes, .. } => {
                // Undecodable frames die at the receiver's parser.
                if let Ok(msg) = decode_frame(&bytes) {
                    node.on_message(&mut ctx, src, channel, msg);
                }
            }
            Pending::Timer { token, .. } => node.on_timer(&mut ctx, token),
        }
        let Ctx { sends, timers, events, .. } = ctx;
        let now = self.now;
        self.events.extend(events.into_iter().map(|event| TimedEvent { time: now, node: id, event }));
        for (delay, token) in timers {
            self.schedule(now + delay, Pending::Timer { node: id, token });
        }
        for out in sends {
            self.route(id, out);
        }
    }
}
