use imdsec::entities::{ProtocolEvent, Reason, Task};
use imdsec::netsim::{build, Action, Adversary, Rule, Setup, Trigger, WorldConfig};
use imdsec::types::{Command, CommandKind, NetworkZone, Privilege, SessionMode};
use imdsec::wire::{decode_frame, Channel, Message};

fn online(s: &Setup) -> Vec<Task> {
    vec![
        Task::ConnectServer { server: s.ids.server },
        Task::AuthenticateCard,
        Task::VerifyUser { pin: s.pin },
        Task::EstablishSession { implant: s.ids.implant },
    ]
}

fn run(cfg: &WorldConfig, tasks: impl FnOnce(&Setup) -> Vec<Task>) -> Setup {
    let mut s = build(cfg);
    let t = tasks(&s);
    s.world.push_tasks(s.ids.reader, t);
    s.world.run_until_quiescent();
    s
}

fn aborts(s: &Setup) -> Vec<Reason> {
    s.world
        .protocol_events()
        .filter_map(|e| match e {
            ProtocolEvent::PhaseAborted { reason } => Some(*reason),
            ProtocolEvent::CommandRejected { reason, .. } => Some(*reason),
            _ => None,
        })
        .collect()
}

fn count(s: &Setup, f: impl Fn(&ProtocolEvent) -> bool) -> usize {
    s.world.protocol_events().filter(|e| f(e)).count()
}

fn executed(s: &Setup) -> Vec<(Command, Privilege, SessionMode)> {
    s.world
        .protocol_events()
        .filter_map(|e| match e {
            ProtocolEvent::CommandExecuted { cmd, granted, mode, .. } => Some((*cmd, *granted, *mode)),
            _ => None,
        })
        .collect()
}

fn write() -> Command {
    Command::new(CommandKind::WriteTherapy, 7)
}

fn sessions(s: &Setup) -> usize {
    count(s, |e| matches!(e, ProtocolEvent::SessionEstablished { .. }))
}

#[test]
fn honest_run_agrees_on_every_key() {
    let s = run(&WorldConfig::default(), online);
    let reader = s.world.reader(&s.ids.reader);
    let card = s.world.card(&s.ids.card);
    let implant = s.world.implant(&s.ids.implant);
    let cs = reader.card_session().expect("card session");
    assert_eq!(card.flash().unwrap().k_rc, cs.k_rc);
    assert_eq!(cs.lifetime_ms, imdsec::entities::HOUR_MS);
    let rs = reader.session().expect("reader session");
    let is = implant.session().expect("implant session");
    assert_eq!(rs.key, is.key);
    assert_eq!(is.privilege, Privilege::ReadWrite);
    assert_eq!(is.card_id, s.ids.card);
    assert!(aborts(&s).is_empty());
}

#[test]
fn card_state_survives_removal_between_phases() {
    let mut s = build(&WorldConfig::default());
    let ids = s.ids;
    s.world.push_tasks(ids.reader, [Task::ConnectServer { server: ids.server }, Task::AuthenticateCard]);
    s.world.run_until_quiescent();
    let before = s.world.card(&ids.card).flash().cloned().expect("persisted");
    s.world.remove_card(ids.reader);
    s.world.insert_card(ids.reader, ids.card);
    assert_eq!(s.world.card(&ids.card).flash(), Some(&before));
    s.world.push_tasks(
        ids.reader,
        [Task::VerifyUser { pin: s.pin }, Task::EstablishSession { implant: ids.implant }, Task::Command(write())],
    );
    s.world.run_until_quiescent();
    assert_eq!(executed(&s).len(), 1);
}

#[test]
fn three_wrong_pins_lock_the_card() {
    let s = run(&WorldConfig::default(), |s| {
        let mut t = vec![Task::ConnectServer { server: s.ids.server }, Task::AuthenticateCard];
        t.push(Task::VerifyUser { pin: s.pin + 1 });
        t
    });
    assert_eq!(aborts(&s), vec![Reason::PinMismatch]);
    let mut s = s;
    let ids = s.ids;
    for _ in 0..2 {
        s.world.push_tasks(ids.reader, [Task::VerifyUser { pin: s.pin + 1 }]);
        s.world.run_until_quiescent();
    }
    assert!(s.world.card(&ids.card).is_locked());
    s.world.push_tasks(ids.reader, [Task::VerifyUser { pin: s.pin }]);
    s.world.run_until_quiescent();
    assert_eq!(aborts(&s).last(), Some(&Reason::CardLocked));
}

#[test]
fn token_validity_boundary() {
    let s =
        run(&WorldConfig::default(), |s| vec![Task::ConnectServer { server: s.ids.server }, Task::AuthenticateCard]);
    let cs = *s.world.reader(&s.ids.reader).card_session().unwrap();
    assert!(cs.valid_at(cs.issued_at + cs.lifetime_ms - 1));
    assert!(!cs.valid_at(cs.issued_at + cs.lifetime_ms));
}

#[test]
fn user_verification_after_token_lifetime_fails() {
    let mut cfg = WorldConfig::default();
    cfg.server.token_lifetime_ms = 1_000;
    let s = run(&cfg, |s| {
        vec![
            Task::ConnectServer { server: s.ids.server },
            Task::AuthenticateCard,
            Task::Wait(1_000),
            Task::VerifyUser { pin: s.pin },
        ]
    });
    assert_eq!(aborts(&s), vec![Reason::TokenExpired]);
    let ok = run(&cfg, |s| {
        vec![
            Task::ConnectServer { server: s.ids.server },
            Task::AuthenticateCard,
            Task::Wait(900),
            Task::VerifyUser { pin: s.pin },
        ]
    });
    assert!(aborts(&ok).is_empty());
}

#[test]
fn swapped_key_delivery_from_earlier_session_is_refused() {
    let mut s = build(&WorldConfig::default());
    let ids = s.ids;
    let rule = Rule { trigger: Trigger { occurrence: Some(1), ..Trigger::tag(0x42) }, action: Action::Substitute };
    s.world.set_adversary(Adversary::new(vec![rule], 9).unwrap());
    for _ in 0..2 {
        let t = online(&s);
        s.world.push_tasks(ids.reader, t);
        s.world.run_until_quiescent();
    }
    assert_eq!(sessions(&s), 1);
    assert!(aborts(&s).contains(&Reason::NonceMismatch), "{:?}", aborts(&s));
}

#[test]
fn write_card_outside_hospital_gets_read_only() {
    let cfg = WorldConfig { reader_zone: NetworkZone::External, ..WorldConfig::default() };
    let s = run(&cfg, |s| {
        let mut t = online(s);
        t.push(Task::Command(Command::read_status()));
        t.push(Task::Command(write()));
        t
    });
    assert!(s
        .world
        .protocol_events()
        .any(|e| matches!(e, ProtocolEvent::KeyGranted { privilege: Privilege::ReadOnly, .. })));
    assert_eq!(executed(&s).len(), 1);
    assert_eq!(aborts(&s), vec![Reason::PrivilegeViolation]);
}

#[test]
fn read_only_command_leaves_flash_empty() {
    let cfg = WorldConfig { card_privilege: Privilege::ReadOnly, ..WorldConfig::default() };
    let s = run(&cfg, |s| {
        let mut t = online(s);
        t.push(Task::Command(Command::read_status()));
        t
    });
    assert_eq!(executed(&s).len(), 1);
    assert_eq!(s.world.reader(&s.ids.reader).answers().len(), 1);
    assert!(s.world.implant(&s.ids.implant).flash().is_empty());
}

#[test]
fn write_under_read_only_is_a_privilege_violation() {
    let cfg = WorldConfig { card_privilege: Privilege::ReadOnly, ..WorldConfig::default() };
    let s = run(&cfg, |s| {
        let mut t = online(s);
        t.push(Task::Command(write()));
        t
    });
    assert!(executed(&s).is_empty());
    assert_eq!(aborts(&s), vec![Reason::PrivilegeViolation]);
    assert_eq!(
        s.world.implant(&s.ids.implant).therapy().setting,
        imdsec::entities::implant::TherapyState::default().setting
    );
}

#[test]
fn write_stores_one_verifying_record() {
    let s = run(&WorldConfig::default(), |s| {
        let mut t = online(s);
        t.push(Task::Command(write()));
        t
    });
    let flash = s.world.implant(&s.ids.implant).flash();
    assert_eq!(flash.len(), 1);
    assert_eq!(flash.dump().len(), 72);
    let (_, r) = flash.records().next().unwrap();
    assert!(r.verify(&s.card_public));
    assert_eq!(r.card_id, s.ids.card);
    assert_eq!(r.cmd, write());
}

fn offline(s: &Setup, cmd: Command) -> Vec<Task> {
    vec![
        Task::ConnectServer { server: s.ids.server },
        Task::AuthenticateCard,
        Task::VerifyUser { pin: s.pin },
        Task::OfflinePair { implant: s.ids.implant, signed: true },
        Task::Command(cmd),
    ]
}

fn touching(cfg: &WorldConfig, touch: bool, tasks: impl FnOnce(&Setup) -> Vec<Task>) -> Setup {
    let mut s = build(cfg);
    s.world.set_touch(s.ids.reader, s.ids.implant, touch);
    let t = tasks(&s);
    s.world.push_tasks(s.ids.reader, t);
    s.world.run_until_quiescent();
    s
}

#[test]
fn offline_session_needs_touch_and_no_server() {
    let s = touching(&WorldConfig::default(), true, |s| offline(s, write()));
    assert_eq!(sessions(&s), 1);
    assert_eq!(executed(&s).len(), 1);
    assert_eq!(s.world.implant(&s.ids.implant).flash().len(), 1);
    assert!(s.world.trace().iter().all(|c| c.frame[0] != 0x09), "no session-key request reaches a server");
    assert!(s.world.trace().iter().any(|c| c.channel == Channel::Oob && c.delivered()));

    let s = touching(&WorldConfig::default(), false, |s| offline(s, write()));
    assert_eq!(sessions(&s), 0);
    assert_eq!(aborts(&s), vec![Reason::OobUnavailable]);
    assert!(s.world.trace().iter().any(|c| c.channel == Channel::Oob && !c.delivered()));
}

#[test]
fn offline_privilege_is_capped() {
    let cfg = WorldConfig { card_privilege: Privilege::ReadWriteFirmware, ..WorldConfig::default() };
    let s = touching(&cfg, true, |s| offline(s, Command::new(CommandKind::FirmwareUpdate, 2)));
    assert!(executed(&s).is_empty());
    assert_eq!(aborts(&s), vec![Reason::PrivilegeViolation]);
}

#[test]
fn unsigned_offline_mode_depends_on_the_deployment_flag() {
    let unsigned =
        |s: &Setup| vec![Task::OfflinePair { implant: s.ids.implant, signed: false }, Task::Command(write())];
    let mut cfg = WorldConfig::default();
    cfg.implant.nr_required = false;
    let s = touching(&cfg, true, unsigned);
    assert_eq!(executed(&s).len(), 1);
    assert!(s.world.implant(&s.ids.implant).flash().is_empty());

    let s = touching(&WorldConfig::default(), true, unsigned);
    assert!(executed(&s).is_empty());
    assert!(aborts(&s).contains(&Reason::FlagMismatch), "{:?}", aborts(&s));
}

fn bedside(cfg: &WorldConfig, touch_rules: Vec<Rule>) -> Setup {
    let mut s = build(cfg);
    if !touch_rules.is_empty() {
        s.world.set_adversary(Adversary::new(touch_rules, 4).unwrap());
    }
    let ids = s.ids;
    s.world.push_tasks(
        ids.bedside_reader,
        [Task::ConnectServer { server: ids.server }, Task::BedsideSession { implant: ids.implant }],
    );
    s.world.run_until_quiescent();
    s
}

#[test]
fn bedside_collects_full_log_read_only() {
    let mut cfg = WorldConfig::default();
    let implant = imdsec::netsim::Ids::default().implant;
    cfg.server.bedside_commands.insert(implant, vec![Command::read_status(), Command::read_log()]);
    let s = bedside(&cfg, Vec::new());
    let collected: Vec<u64> = s
        .world
        .protocol_events()
        .filter_map(|e| match e {
            ProtocolEvent::BedsideCollected { bytes, .. } => Some(*bytes),
            _ => None,
        })
        .collect();
    assert_eq!(collected, vec![3_000_000]);
    assert!(executed(&s).iter().all(|(c, g, m)| c.required_privilege() == Privilege::ReadOnly
        && *g == Privilege::ReadOnly
        && *m == SessionMode::Bedside));
    let chunks = s.world.trace().iter().filter(|c| c.frame[0] == 0x48).count();
    assert_eq!(chunks, 3_000_000usize.div_ceil(256));
}

#[test]
fn bedside_write_is_refused() {
    let mut cfg = WorldConfig::default();
    cfg.server.bedside_commands.insert(imdsec::netsim::Ids::default().implant, vec![write()]);
    let s = bedside(&cfg, Vec::new());
    assert!(executed(&s).iter().all(|(c, _, _)| c.kind == CommandKind::Finish));
    assert!(aborts(&s).contains(&Reason::PrivilegeViolation));
}

#[test]
fn bedside_command_with_bad_server_mac_is_refused() {
    let mut cfg = WorldConfig::default();
    cfg.server.bedside_commands.insert(imdsec::netsim::Ids::default().implant, vec![Command::read_status()]);
    let rule = Rule { trigger: Trigger::tag(0x45), action: Action::FlipBit };
    let s = bedside(&cfg, vec![rule]);
    assert!(executed(&s).is_empty());
    assert!(aborts(&s).contains(&Reason::MacFailure));
}

#[test]
fn remote_hospital_session() {
    let cfg = WorldConfig { remote_implant: true, ..WorldConfig::default() };
    let s = run(&cfg, |s| {
        let mut t = online(s);
        t.push(Task::Command(write()));
        t
    });
    assert_eq!(s.world.implant(&s.ids.implant).session().map(|x| x.mode), Some(SessionMode::Remote));
    assert_eq!(executed(&s).len(), 1);
    assert!(s.world.trace().iter().any(|c| c.frame[0] == 0x80));
}

#[test]
fn remote_implant_missing_from_registry_fails_cleanly() {
    let cfg = WorldConfig { remote_implant: true, implant_in_registry: false, ..WorldConfig::default() };
    let s = run(&cfg, online);
    assert_eq!(sessions(&s), 0);
    assert_eq!(aborts(&s), vec![Reason::UnknownImplant]);
}

#[test]
fn misbound_remote_key_fails_at_the_implant() {
    let mut cfg = WorldConfig { remote_implant: true, ..WorldConfig::default() };
    cfg.server.misbind_remote = true;
    let s = run(&cfg, online);
    assert_eq!(sessions(&s), 0);
    assert!(aborts(&s).contains(&Reason::MacFailure), "{:?}", aborts(&s));
}

#[test]
fn replayed_token_request_gets_no_second_token() {
    let mut s = build(&WorldConfig::default());
    let ids = s.ids;
    let rule = Rule { trigger: Trigger { occurrence: Some(1), ..Trigger::tag(0x07) }, action: Action::Substitute };
    s.world.set_adversary(Adversary::new(vec![rule], 2).unwrap());
    s.world.push_tasks(
        ids.reader,
        [Task::ConnectServer { server: ids.server }, Task::AuthenticateCard, Task::AuthenticateCard],
    );
    s.world.run_until_quiescent();
    assert_eq!(count(&s, |e| matches!(e, ProtocolEvent::TokenIssued { .. })), 1);
    assert_eq!(aborts(&s).len(), 1);
}

#[test]
fn replayed_pin_block_is_refused() {
    let mut s = build(&WorldConfig::default());
    let ids = s.ids;
    s.world.set_contact_probe(true);
    let rule = Rule { trigger: Trigger { occurrence: Some(1), ..Trigger::tag(0x24) }, action: Action::Substitute };
    s.world.set_adversary(Adversary::new(vec![rule], 2).unwrap());
    s.world.push_tasks(
        ids.reader,
        [
            Task::ConnectServer { server: ids.server },
            Task::AuthenticateCard,
            Task::VerifyUser { pin: s.pin },
            Task::AuthenticateCard,
            Task::VerifyUser { pin: s.pin },
        ],
    );
    s.world.run_until_quiescent();
    assert_eq!(aborts(&s).len(), 1, "{:?}", aborts(&s));
}

#[test]
fn replayed_session_start_is_refused_at_the_implant() {
    let mut s = run(&WorldConfig::default(), online);
    let phase3: Vec<_> = s.world.trace().iter().filter(|c| matches!(c.frame[0], 0x40 | 0x42)).cloned().collect();
    assert_eq!(phase3.len(), 2);
    for c in &phase3 {
        s.world.replay_raw(c);
    }
    s.world.run_until_quiescent();
    assert_eq!(sessions(&s), 1);
    assert_eq!(aborts(&s), vec![Reason::NonceMismatch]);
}

#[test]
fn expired_puzzle_solution_is_refused() {
    let mut cfg = WorldConfig::default();
    cfg.server.force_puzzle = true;
    cfg.server.puzzle_k = 6;
    let mut s = run(&cfg, |s| vec![Task::ConnectServer { server: s.ids.server }]);
    assert!(aborts(&s).is_empty());
    let solution = s.world.trace().iter().find(|c| c.frame[0] == 0x03).cloned().unwrap();
    s.world.advance(cfg.server.puzzle_expiry_ms + 1);
    let mark = s.world.trace().len();
    s.world.replay_raw(&solution);
    s.world.run_until_quiescent();
    let rejects: Vec<Message> = s.world.trace()[mark..]
        .iter()
        .filter_map(|c| decode_frame(&c.frame).ok())
        .filter(|m| matches!(m, Message::SessionReject { .. }))
        .collect();
    assert_eq!(rejects, vec![Message::SessionReject { reason: Reason::PuzzleExpired.to_u8() }]);
}

#[test]
fn oob_frames_cannot_be_replayed() {
    let mut s = touching(&WorldConfig::default(), true, |s| offline(s, Command::read_status()));
    let oob: Vec<_> = s.world.trace().iter().filter(|c| c.channel == Channel::Oob).cloned().collect();
    assert_eq!(oob.len(), 2);
    let mark = s.world.trace().len();
    for c in &oob {
        s.world.replay_raw(c);
    }
    s.world.run_until_quiescent();
    assert!(s.world.trace()[mark..].iter().all(|c| !c.delivered()));
}

#[test]
fn stolen_reader_is_refused_by_the_server() {
    let cfg = WorldConfig { reader_kind: imdsec::entities::ReaderKind::Stolen, ..WorldConfig::default() };
    let s = run(&cfg, online);
    assert_eq!(aborts(&s), vec![Reason::CertRevoked]);
    assert!(s.world.reader(&s.ids.reader).link().is_none_or(|l| l.k_rs.is_none()));
}

#[test]
fn revoked_card_is_refused() {
    let cfg = WorldConfig { card_revoked: true, ..WorldConfig::default() };
    let s = run(&cfg, online);
    assert_eq!(aborts(&s), vec![Reason::CardRevoked]);
}
