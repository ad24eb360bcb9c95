use std::collections::BTreeMap;

use lpos_core::channel::{channel_establish, ChannelMode, Party, Registry};
use lpos_core::group_key::{KeyTree, MemberId};
use lpos_core::gt::ElGamalParams;
use lpos_core::ope::{OpeParams, Padding};
use lpos_core::protocol::{
    oracle_decision, ComparisonTransport, FcEngine, Outcome, ProtocolError, PublicParams,
    SensingConfig, SuEngine, TransportError,
};
use lpos_core::sim::Profile;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

struct Net {
    tree: KeyTree,
    registry: Registry,
    fc: FcEngine,
    sus: BTreeMap<MemberId, SuEngine>,
    params: PublicParams,
    rng: ChaCha20Rng,
}

fn setup(n: u32, tau: u64) -> Net {
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let group = Profile::Test.group();
    let ope = OpeParams::for_rss_bits(8).unwrap();
    let padding = Padding::random(ope.padding_bits(8), &mut rng).unwrap();
    let gt = ElGamalParams::new(group.clone(), 8).unwrap();
    let params = PublicParams::new(gt, ope, padding).unwrap();
    let mut config = SensingConfig::new(tau, params.clone()).unwrap();
    config.refresh_pi_on_membership = true;
    let ids: Vec<MemberId> = (1..=n).collect();
    let (tree, _) = KeyTree::init(group.clone(), &ids, &mut rng).unwrap();
    let mut registry = Registry::new(group);
    registry.register(Party::Fc, &mut rng);
    let mut fc = FcEngine::new(config, tree.epoch(), ChaCha20Rng::seed_from_u64(1)).unwrap();
    let mut sus = BTreeMap::new();
    for id in ids {
        registry.register(Party::Su(id), &mut rng);
        let (f, s) =
            channel_establish(&registry, Party::Fc, Party::Su(id), ChannelMode::Encrypted).unwrap();
        fc.add_channel(id, f);
        let su = SuEngine::new(
            id,
            params.clone(),
            tree.view(id).unwrap(),
            s,
            ChaCha20Rng::seed_from_u64(100 + id as u64),
        )
        .unwrap();
        sus.insert(id, su);
    }
    Net {
        tree,
        registry,
        fc,
        sus,
        params,
        rng,
    }
}

struct Direct<'a> {
    sus: &'a mut BTreeMap<MemberId, SuEngine>,
    fail: Vec<MemberId>,
}

impl ComparisonTransport for Direct<'_> {
    fn exchange(&mut self, user: MemberId, gt_init: Vec<u8>) -> Result<Vec<u8>, TransportError> {
        let su = self.sus.get_mut(&user).unwrap();
        let opened = su.open(&gt_init).unwrap();
        if self.fail.contains(&user) {
            return Err(TransportError::NoResponse(user));
        }
        Ok(su.respond(&opened).unwrap())
    }
}

fn collect_reports(
    net: &mut Net,
    round: u64,
    rss: &[u64],
) -> BTreeMap<MemberId, lpos_core::ope::OpeCiphertext> {
    let mut reports = BTreeMap::new();
    for (&id, &r) in net.sus.keys().copied().collect::<Vec<_>>().iter().zip(rss) {
        let su = net.sus.get_mut(&id).unwrap();
        su.set_rss(r).unwrap();
        let (wire, _) = su.build_report(round).unwrap();
        let (c, _) = net.fc.open_report(round, id, &wire).unwrap();
        reports.insert(id, c);
    }
    reports
}

#[test]
fn round_trip_through_engines() {
    let mut net = setup(5, 3);
    let rss = [1, 2, 3, 4, 5];
    let reports = collect_reports(&mut net, 1, &rss);
    let state = net.fc.collect(1, reports).unwrap();
    assert_eq!(state.lambda, 3);
    let mut t = Direct {
        sus: &mut net.sus,
        fail: vec![],
    };
    let result = net.fc.sensing_round(state, &mut t).unwrap();
    assert_eq!(result.decision.outcome, Outcome::Free);
    assert_eq!(result.decision.votes, 2);
    assert_eq!(result.decision.outcome, oracle_decision(&rss, 3, 3));
}

#[test]
fn duplicates_collapse_in_collect() {
    let mut net = setup(5, 3);
    let reports = collect_reports(&mut net, 1, &[7, 9, 9, 2, 4]);
    let state = net.fc.collect(1, reports).unwrap();
    let mult: Vec<_> = state.sorted.iter().map(|d| d.multiplicity).collect();
    assert_eq!(mult, [1, 1, 1, 2]);
    assert_eq!(state.sorted[3].representative, 2);
    assert!(matches!(
        net.fc.collect(2, BTreeMap::new()),
        Err(ProtocolError::NoQuorum)
    ));
}

#[test]
fn stale_epoch_report_is_rejected() {
    let mut net = setup(4, 10);
    let stale_view_holder = 2;
    let report = net.tree.join(&[5], &mut net.rng).unwrap();
    net.fc.advance_epoch(report.epoch).unwrap();
    // User 2 has not installed the new view yet.
    let su = net.sus.get_mut(&stale_view_holder).unwrap();
    su.set_rss(11).unwrap();
    let (wire, _) = su.build_report(1).unwrap();
    assert_eq!(
        net.fc.open_report(1, stale_view_holder, &wire).unwrap_err(),
        ProtocolError::EpochMismatch {
            expected: report.epoch,
            got: report.epoch - 1
        }
    );
    // After installing the view the same user is accepted, with a new ciphertext.
    let old_c = su.ope_ciphertext().unwrap();
    su.install_view(net.tree.view(stale_view_holder).unwrap())
        .unwrap();
    assert_ne!(su.ope_ciphertext().unwrap(), old_c);
    let (wire, _) = su.build_report(1).unwrap();
    assert!(net.fc.open_report(1, stale_view_holder, &wire).is_ok());
}

#[test]
fn spoofed_id_and_unknown_user_rejected() {
    let mut net = setup(3, 10);
    let su = net.sus.get_mut(&1).unwrap();
    let (wire, _) = su.build_report(1).unwrap();
    assert!(matches!(
        net.fc.open_report(1, 2, &wire),
        Err(ProtocolError::Channel(_))
    ));
    assert_eq!(
        net.fc.open_report(1, 9, &wire).unwrap_err(),
        ProtocolError::UnknownUser(9)
    );
    assert!(net.registry.contains(Party::Su(3)));
}

#[test]
fn one_failure_restarts_two_abort() {
    let mut net = setup(6, 50);
    let rss = [10, 20, 30, 60, 70, 80];
    let reports = collect_reports(&mut net, 1, &rss);
    let state = net.fc.collect(1, reports.clone()).unwrap();
    // User 6 holds the maximum and is probed first.
    let mut t = Direct {
        sus: &mut net.sus,
        fail: vec![6],
    };
    let r = net.fc.sensing_round(state, &mut t).unwrap();
    assert_eq!(r.dropped, vec![6]);
    assert_eq!((r.state.n_active, r.state.lambda), (5, 3));
    assert_eq!(r.decision.outcome, oracle_decision(&rss[..5], 50, 3));

    let reports = collect_reports(&mut net, 2, &rss);
    let state = net.fc.collect(2, reports).unwrap();
    let mut t = Direct {
        sus: &mut net.sus,
        fail: vec![6, 5],
    };
    match net.fc.sensing_round(state, &mut t) {
        Err(ProtocolError::RoundAborted(f)) => {
            assert_eq!(f.failures.iter().map(|x| x.0).collect::<Vec<_>>(), [6, 5])
        }
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn pi_refresh_replaces_comparison_key() {
    let mut net = setup(3, 10);
    let before = net.fc.comparison_public_key().clone();
    let report = net.tree.leave(&[3], &mut net.rng).unwrap();
    net.fc.advance_epoch(report.epoch).unwrap();
    assert_ne!(net.fc.comparison_public_key(), &before);
    assert!(net.fc.advance_epoch(report.epoch).is_err());
    assert_eq!(net.params.gamma, 8);
}
