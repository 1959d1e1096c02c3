mod common;

use imdsec::entities::puzzle::{issue_puzzle, solve_puzzle, verify_puzzle};
use imdsec::entities::{ProtocolEvent, Reason, Task};
use imdsec::netsim::{build, Action, Adversary, PolicyError, Rule, Setup, Trigger, WorldConfig};
use imdsec::types::{Command, EntityId};
use imdsec::wire::Channel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const SECRET: [u8; 16] = [0x5a; 16];

#[test]
fn puzzle_work_averages_half_the_space() {
    let reader = EntityId::from_label("reader");
    let k = 12;
    let n = 1000u64;
    let total: u64 = (0..n)
        .map(|t| {
            let p = issue_puzzle(&SECRET, &reader, t, k);
            let (sol, work) = solve_puzzle(&p).unwrap();
            assert_eq!(verify_puzzle(&SECRET, &reader, t, &sol, t, k, 10_000), Ok(()));
            work
        })
        .sum();
    let mean = total as f64 / n as f64;
    // Uniform on 1..=4096: mean 2048.5, standard error about 37.
    assert!((mean - 2048.5).abs() < 200.0, "{mean}");
}

#[test]
fn puzzle_work_never_exceeds_the_space() {
    let reader = EntityId::from_label("reader");
    for t in 0..200 {
        let (_, work) = solve_puzzle(&issue_puzzle(&SECRET, &reader, t, 8)).unwrap();
        assert!((1..=256).contains(&work));
    }
}

#[test]
fn random_guesses_pass_at_rate_two_to_minus_k() {
    let reader = EntityId::from_label("reader");
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let n = 50_000;
    let hits = (0..n)
        .filter(|&t| {
            let guess = [rng.gen::<u8>()];
            verify_puzzle(&SECRET, &reader, t, &guess, t, 8, 10_000).is_ok()
        })
        .count();
    // Expected 195.3, standard deviation about 14.
    assert!((130..=260).contains(&hits), "{hits}");
}

#[test]
fn stale_puzzle_is_expired() {
    let reader = EntityId::from_label("reader");
    let p = issue_puzzle(&SECRET, &reader, 100, 6);
    let (sol, _) = solve_puzzle(&p).unwrap();
    assert_eq!(verify_puzzle(&SECRET, &reader, 100, &sol, 10_100, 6, 10_000), Ok(()));
    assert_eq!(verify_puzzle(&SECRET, &reader, 100, &sol, 10_101, 6, 10_000), Err(Reason::PuzzleExpired));
}

fn online(s: &Setup) -> Vec<Task> {
    vec![
        Task::ConnectServer { server: s.ids.server },
        Task::AuthenticateCard,
        Task::VerifyUser { pin: s.pin },
        Task::EstablishSession { implant: s.ids.implant },
        Task::Command(Command::read_status()),
    ]
}

#[test]
fn runs_are_deterministic_per_seed() {
    let go = |seed| {
        let mut s = build(&WorldConfig { seed, ..WorldConfig::default() });
        s.world.set_adversary(Adversary::random(seed, &[0x40, 0x41, 0x42, 0x43, 0x44], 3));
        let t = online(&s);
        s.world.push_tasks(s.ids.reader, t);
        s.world.run_until_quiescent();
        (s.world.trace_text(), s.world.events().to_vec())
    };
    for seed in [1, 2, 99] {
        assert_eq!(go(seed), go(seed));
    }
}

#[test]
fn passive_eavesdropper_changes_nothing() {
    let go = |adv: Option<Adversary>| {
        let mut s = build(&WorldConfig::default());
        if let Some(a) = adv {
            s.world.set_adversary(a);
        }
        let t = online(&s);
        s.world.push_tasks(s.ids.reader, t);
        s.world.run_until_quiescent();
        (s.world.trace_text(), s.world.events().to_vec())
    };
    assert_eq!(go(None), go(Some(Adversary::passive(5))));
}

#[test]
fn dropping_all_radio_times_out_without_battery_cost() {
    let mut s = build(&WorldConfig::default());
    let rule = Rule { trigger: Trigger::channel(Channel::Rf), action: Action::Drop };
    s.world.set_adversary(Adversary::new(vec![rule], 1).unwrap());
    let t = online(&s);
    s.world.push_tasks(s.ids.reader, t);
    s.world.run_until_quiescent();
    let aborts: Vec<Reason> = s
        .world
        .protocol_events()
        .filter_map(|e| match e {
            ProtocolEvent::PhaseAborted { reason } => Some(*reason),
            _ => None,
        })
        .collect();
    assert_eq!(aborts, vec![Reason::Timeout]);
    assert_eq!(s.world.implant(&s.ids.implant).ledger().battery_spent_pj(), 0);
}

#[test]
fn oob_rules_are_rejected() {
    let rule = Rule { trigger: Trigger::channel(Channel::Oob), action: Action::Drop };
    let ok = Rule { trigger: Trigger::any(), action: Action::Deliver };
    assert_eq!(Adversary::new(vec![ok, rule], 0).err(), Some(PolicyError::OobRule(1)));
    let bad = Rule { trigger: Trigger::any(), action: Action::InjectForged { tag: 0xEE } };
    assert_eq!(Adversary::new(vec![bad], 0).err(), Some(PolicyError::UnknownTag { index: 0, tag: 0xEE }));
}

#[test]
fn adversary_sees_every_remote_frame() {
    let mut s = build(&WorldConfig::default());
    s.world.set_touch(s.ids.reader, s.ids.implant, true);
    s.world.set_adversary(Adversary::passive(0));
    let ids = s.ids;
    s.world.push_tasks(
        ids.reader,
        [
            Task::ConnectServer { server: ids.server },
            Task::AuthenticateCard,
            Task::VerifyUser { pin: s.pin },
            Task::OfflinePair { implant: ids.implant, signed: true },
            Task::Command(Command::read_status()),
        ],
    );
    s.world.run_until_quiescent();
    let remote = s.world.trace().iter().filter(|c| matches!(c.channel, Channel::Rf | Channel::Internet)).count();
    assert!(s.world.trace().iter().any(|c| c.channel == Channel::Oob));
    assert_eq!(s.world.adversary().unwrap().offered(), remote as u64);
}

#[test]
fn mode_gating_holds_on_a_long_random_walk() {
    for nr in [true, false] {
        let w = common::mode_gating_walk(11, 10_000, nr);
        assert_eq!(w.steps, 10_000);
        assert!(w.violations.is_empty(), "{:?}", w.violations);
        assert!(w.offline_sessions > 0 && w.bedside_commands > 0, "{w:?}");
    }
}
