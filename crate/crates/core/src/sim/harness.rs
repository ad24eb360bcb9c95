use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::channel::{channel_establish, ChannelEnd, Party, Registry};
use crate::group::modexp_count;
use crate::group_key::{KeyTree, MemberId, RekeyReport};
use crate::gt::ElGamalParams;
use crate::ope::{encode_report, OpeParams, Padding};
use crate::protocol::wire::{encode_report_payload, Frame};
use crate::protocol::{
    oracle_decision, ComparisonTransport, FcEngine, MsgKind, ProtocolError, PublicParams,
    SensingConfig, SuEngine, TransportError,
};

use super::scenario::{quantize_dbm, EventKind, RssModel, Scenario};
use super::transcript::{CostMetrics, Entry, Receiver, RoundTranscript, RoundTruth};
use super::SimError;

/// Independent deterministic stream per `(seed, label)`.
pub fn rng_for(seed: u64, label: &str) -> ChaCha20Rng {
    let digest = Sha256::new()
        .chain_update(seed.to_be_bytes())
        .chain_update(label.as_bytes())
        .finalize();
    ChaCha20Rng::from_seed(digest.into())
}

/// A fusion center and its users driven round by round over a logical bus.
pub struct Simulation {
    scenario: Scenario,
    params: PublicParams,
    tree: KeyTree,
    registry: Registry,
    fc: FcEngine,
    sus: BTreeMap<MemberId, SuEngine>,
    dropped: BTreeSet<MemberId>,
    next_id: MemberId,
    round: u64,
    crypto_seed: u64,
    event_rng: ChaCha20Rng,
    rss_rng: ChaCha20Rng,
    tree_rng: ChaCha20Rng,
    registry_rng: ChaCha20Rng,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("round", &self.round)
            .field("members", &self.sus.len())
            .field("dropped", &self.dropped)
            .finish_non_exhaustive()
    }
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let seed = scenario.seed;
        let crypto_seed = scenario.crypto_seed.unwrap_or(seed);
        let group = scenario.profile.group();
        let gamma = scenario.gamma;
        let ope = OpeParams::for_rss_bits(gamma).map_err(ProtocolError::from)?;
        let padding = Padding::random(ope.padding_bits(gamma), &mut rng_for(seed, "padding"))
            .map_err(ProtocolError::from)?;
        let gt = ElGamalParams::new(group.clone(), gamma).map_err(ProtocolError::from)?;
        let mut params = PublicParams::new(gt, ope, padding)?;
        params.debug_leak_plaintext_rss = scenario.leak_plaintext_rss;
        let mut config = SensingConfig::new(scenario.tau, params.clone())?;
        config.lambda = scenario.lambda;
        config.refresh_pi_on_membership = scenario.refresh_pi;

        let mut registry_rng = rng_for(crypto_seed, "registry");
        let mut registry = Registry::new(group.clone());
        registry.register(Party::Fc, &mut registry_rng);
        let ids: Vec<MemberId> = (1..=scenario.n as MemberId).collect();
        let mut tree_rng = rng_for(crypto_seed, "tree");
        let (tree, _) = KeyTree::init(group, &ids, &mut tree_rng)?;
        let fc = FcEngine::new(config, tree.epoch(), rng_for(crypto_seed, "fc"))?;
        let mut sim = Simulation {
            event_rng: rng_for(seed, "events"),
            rss_rng: rng_for(seed, "rss"),
            next_id: scenario.n as MemberId + 1,
            scenario,
            params,
            tree,
            registry,
            fc,
            sus: BTreeMap::new(),
            dropped: BTreeSet::new(),
            round: 0,
            crypto_seed,
            tree_rng,
            registry_rng,
        };
        for id in ids {
            sim.admit(id)?;
        }
        Ok(sim)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn members(&self) -> Vec<MemberId> {
        self.sus.keys().copied().collect()
    }

    pub fn epoch(&self) -> u64 {
        self.tree.epoch()
    }

    fn admit(&mut self, id: MemberId) -> Result<(), SimError> {
        let party = Party::Su(id);
        self.registry.register(party, &mut self.registry_rng);
        let (fc_end, su_end): (ChannelEnd, ChannelEnd) =
            channel_establish(&self.registry, Party::Fc, party, self.scenario.channel_mode)?;
        self.fc.add_channel(id, fc_end);
        let view = self.tree.view(id).expect("member in tree");
        let rng = rng_for(self.crypto_seed, &format!("su/{id}"));
        let su = SuEngine::new(id, self.params.clone(), view, su_end, rng)?;
        self.sus.insert(id, su);
        Ok(())
    }

    fn reporters(&self) -> Vec<MemberId> {
        self.sus
            .keys()
            .copied()
            .filter(|id| !self.dropped.contains(id))
            .collect()
    }

    fn pick(&mut self, mut from: Vec<MemberId>, k: usize) -> Vec<MemberId> {
        from.shuffle(&mut self.event_rng);
        from.truncate(k);
        from.sort_unstable();
        from
    }

    fn membership_events(&mut self, entries: &mut Vec<Entry>) -> Result<(), SimError> {
        let round = self.round;
        let n_leave = self.scenario.events_at(round, EventKind::Leave);
        let n_join = self.scenario.events_at(round, EventKind::Join);
        if n_leave + n_join > 0 {
            let reporting = self.reporters();
            let mut leavers = self.pick(reporting.clone(), n_leave);
            if n_leave > reporting.len() {
                let silent: Vec<_> = self.dropped.iter().copied().collect();
                let extra = self.pick(silent, n_leave - reporting.len());
                leavers.extend(extra);
                leavers.sort_unstable();
            }
            let joiners: Vec<MemberId> =
                (0..n_join as MemberId).map(|i| self.next_id + i).collect();
            self.next_id += n_join as MemberId;
            let report = self.tree.update(&joiners, &leavers, &mut self.tree_rng)?;
            self.broadcast_rekey(&report, entries);
            self.fc.advance_epoch(report.epoch)?;
            for id in &leavers {
                self.sus.remove(id);
                self.fc.remove_channel(*id);
                self.dropped.remove(id);
            }
            for su in self.sus.values_mut() {
                su.install_view(self.tree.view(su.id()).expect("member in tree"))?;
            }
            for id in joiners {
                self.admit(id)?;
            }
        }
        let n_drop = self.scenario.events_at(round, EventKind::Drop);
        if n_drop > 0 {
            let victims = self.pick(self.reporters(), n_drop);
            self.dropped.extend(victims);
        }
        Ok(())
    }

    fn broadcast_rekey(&self, report: &RekeyReport, entries: &mut Vec<Entry>) {
        let group = self.params.gt.group.clone();
        let sender = report
            .sponsors
            .first()
            .copied()
            .unwrap_or_else(|| self.tree.members()[0]);
        for update in &report.broadcasts {
            let frame = Frame::new(
                MsgKind::EpochUpdate,
                self.round,
                update.epoch,
                update.encode(&group),
            )
            .encode();
            entries.push(Entry {
                sender: Party::Su(sender),
                receiver: Receiver::Broadcast,
                kind: MsgKind::EpochUpdate,
                wire: frame.clone(),
                frame,
                delivered: true,
            });
        }
    }

    fn draw_rss(&mut self, count: usize) -> Vec<u64> {
        let gamma = self.scenario.gamma;
        let tau = self.scenario.tau;
        match self.scenario.rss.clone() {
            RssModel::Uniform { lo, hi } => (0..count)
                .map(|_| self.rss_rng.gen_range(lo..=hi))
                .collect(),
            RssModel::Energy {
                mean_dbm,
                spread_db,
            } => (0..count)
                .map(|_| {
                    let u: f64 = self.rss_rng.gen_range(-1.0..=1.0);
                    quantize_dbm(mean_dbm + spread_db * u, gamma)
                })
                .collect(),
            RssModel::Sentinel => {
                // Every byte has its top bit set, so a sentinel cannot collide
                // with small counters, ids or length fields.
                let bytes = (gamma / 8) as usize;
                let mut out: Vec<u64> = Vec::with_capacity(count);
                while out.len() < count {
                    let v = (0..bytes).fold(0u64, |acc, _| {
                        (acc << 8) | self.rss_rng.gen_range(0x80..=0xFFu64)
                    });
                    if v != tau && !out.contains(&v) {
                        out.push(v);
                    }
                }
                out
            }
            RssModel::Explicit(map) => map[&self.round].clone(),
        }
    }

    /// Runs the next round.
    pub fn step(&mut self) -> Result<RoundTranscript, SimError> {
        self.round += 1;
        let round = self.round;
        let modexp_start = modexp_count();
        let mut entries = Vec::new();
        self.membership_events(&mut entries)?;

        let reporters = self.reporters();
        let readings = self.draw_rss(reporters.len());
        let mut truth = RoundTruth {
            tau: self.scenario.tau,
            gamma: self.scenario.gamma,
            ope_plaintext_bits: self.params.ope.plaintext_bits(),
            ..RoundTruth::default()
        };
        for (&id, &r) in reporters.iter().zip(&readings) {
            let su = self.sus.get_mut(&id).expect("reporter is a member");
            su.set_rss(r)?;
            truth.rss.insert(id, r);
        }

        // Report phase.
        let built = self.build_reports(&reporters, round);
        let mut modexp_workers = 0;
        let mut reports = BTreeMap::new();
        let mut rejected = Vec::new();
        for (id, result, modexps) in built {
            modexp_workers += modexps;
            let (wire, frame, c) = result?;
            let p = &self.params;
            truth.report_plaintexts.insert(
                id,
                encode_report(p.padding, truth.rss[&id], p.gamma, &p.ope)
                    .map_err(ProtocolError::from)?,
            );
            truth.ope_ciphertexts.insert(id, c.to_bytes(&p.ope));
            truth
                .report_payloads
                .insert(id, encode_report_payload(id, c, &p.ope));
            let delivered = match self.fc.open_report(round, id, &wire) {
                Ok((c, _)) => {
                    reports.insert(id, c);
                    true
                }
                Err(e) => {
                    rejected.push((id, e.to_string()));
                    false
                }
            };
            entries.push(Entry {
                sender: Party::Su(id),
                receiver: Receiver::Party(Party::Fc),
                kind: MsgKind::Report,
                wire,
                frame,
                delivered,
            });
        }

        // Comparison phase.
        let stall_count = self.scenario.events_at(round, EventKind::Stall);
        let mut by_reading: Vec<_> = truth.rss.iter().map(|(&id, &r)| (r, id)).collect();
        by_reading.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let stalled: BTreeSet<MemberId> = by_reading
            .iter()
            .take(stall_count)
            .map(|&(_, id)| id)
            .collect();

        let mut transcript = RoundTranscript {
            round,
            epoch: self.tree.epoch(),
            members: self.sus.len(),
            n_active: reports.len(),
            lambda: 0,
            entries: Vec::new(),
            decision: None,
            oracle: None,
            invocations: Vec::new(),
            distinct_values: 0,
            dropped_in_round: Vec::new(),
            fault: None,
            rejected_reports: rejected,
            metrics: CostMetrics::default(),
            truth,
        };
        match self.fc.collect(round, reports) {
            Err(ProtocolError::NoQuorum) => {}
            Err(e) => return Err(e.into()),
            Ok(state) => {
                let mut transport = BusTransport {
                    sus: &mut self.sus,
                    stalled: &stalled,
                    entries: &mut entries,
                };
                match self.fc.sensing_round(state, &mut transport) {
                    Ok(result) => {
                        let st = &result.state;
                        let survivors: Vec<u64> = st
                            .reports
                            .keys()
                            .map(|id| transcript.truth.rss[id])
                            .collect();
                        transcript.oracle =
                            Some(oracle_decision(&survivors, self.scenario.tau, st.lambda));
                        transcript.n_active = st.n_active;
                        transcript.lambda = st.lambda;
                        transcript.distinct_values = st.sorted.len();
                        transcript.decision = Some(result.decision);
                        transcript.invocations = result.invocations;
                        transcript.dropped_in_round = result.dropped;
                        let frame = self.fc.decision_frame(round, result.decision.outcome);
                        entries.push(Entry {
                            sender: Party::Fc,
                            receiver: Receiver::Broadcast,
                            kind: MsgKind::Decision,
                            wire: frame.clone(),
                            frame,
                            delivered: true,
                        });
                    }
                    Err(ProtocolError::RoundAborted(fault)) => {
                        transcript.dropped_in_round = fault.failures.iter().map(|f| f.0).collect();
                        transcript.fault = Some(fault);
                        transcript.invocations = Vec::new();
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }

        let m = &mut transcript.metrics;
        for e in &entries {
            let len = e.wire.len() as u64;
            match (e.sender, e.receiver) {
                (Party::Su(_), Receiver::Party(Party::Fc)) => m.bytes_su_to_fc += len,
                (Party::Fc, _) => m.bytes_fc_to_su += len,
                _ => {}
            }
            match e.kind {
                MsgKind::GtInit => m.ym_invocations += 1,
                MsgKind::EpochUpdate => m.rekey_messages += 1,
                _ => {}
            }
        }
        m.ope_encryptions = reporters.len() as u64;
        m.modexp_count = modexp_count() - modexp_start + modexp_workers;
        transcript.entries = entries;
        Ok(transcript)
    }

    #[allow(clippy::type_complexity)]
    fn build_reports(
        &mut self,
        reporters: &[MemberId],
        round: u64,
    ) -> Vec<(
        MemberId,
        Result<(Vec<u8>, Vec<u8>, crate::ope::OpeCiphertext), ProtocolError>,
        u64,
    )> {
        let build = |su: &mut SuEngine| {
            let c = su.ope_ciphertext();
            let r = su.build_report(round);
            (su.id(), c.and_then(|c| r.map(|(w, f)| (w, f, c))))
        };
        let wanted: BTreeSet<_> = reporters.iter().copied().collect();
        let mut engines: Vec<&mut SuEngine> = self
            .sus
            .values_mut()
            .filter(|s| wanted.contains(&s.id()))
            .collect();
        if !self.scenario.parallel || engines.len() < 2 {
            return engines
                .into_iter()
                .map(|su| {
                    let (id, r) = build(su);
                    (id, r, 0)
                })
                .collect();
        }
        let workers = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(2)
            .min(engines.len());
        let chunk = engines.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = engines
                .chunks_mut(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        let start = modexp_count();
                        let out: Vec<_> = part.iter_mut().map(|su| build(su)).collect();
                        (out, modexp_count() - start)
                    })
                })
                .collect();
            // Merge in id order; attribute each worker's count to its first entry.
            let mut merged = Vec::new();
            for h in handles {
                let (out, count) = h.join().expect("report worker panicked");
                for (i, (id, r)) in out.into_iter().enumerate() {
                    merged.push((id, r, if i == 0 { count } else { 0 }));
                }
            }
            merged
        })
    }
}

struct BusTransport<'a> {
    sus: &'a mut BTreeMap<MemberId, SuEngine>,
    stalled: &'a BTreeSet<MemberId>,
    entries: &'a mut Vec<Entry>,
}

impl ComparisonTransport for BusTransport<'_> {
    fn exchange(&mut self, user: MemberId, gt_init: Vec<u8>) -> Result<Vec<u8>, TransportError> {
        let su = self
            .sus
            .get_mut(&user)
            .ok_or(TransportError::NoResponse(user))?;
        let opened = su.open(&gt_init);
        self.entries.push(Entry {
            sender: Party::Fc,
            receiver: Receiver::Party(Party::Su(user)),
            kind: MsgKind::GtInit,
            wire: gt_init,
            frame: opened.clone().unwrap_or_default(),
            delivered: opened.is_ok(),
        });
        let opened = opened.map_err(|e| TransportError::Peer {
            user,
            reason: e.to_string(),
        })?;
        if self.stalled.contains(&user) {
            return Err(TransportError::NoResponse(user));
        }
        let reply = su.respond(&opened).map_err(|e| TransportError::Peer {
            user,
            reason: e.to_string(),
        })?;
        self.entries.push(Entry {
            sender: Party::Su(user),
            receiver: Receiver::Party(Party::Fc),
            kind: MsgKind::GtResp,
            wire: reply.clone(),
            frame: Vec::new(),
            delivered: false,
        });
        Ok(reply)
    }

    fn opened_at_fc(&mut self, _user: MemberId, frame: &[u8]) {
        if let Some(last) = self.entries.last_mut() {
            last.frame = frame.to_vec();
            last.delivered = true;
        }
    }
}

/// Runs every round of `scenario`.
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<RoundTranscript>, SimError> {
    let mut sim = Simulation::new(scenario.clone())?;
    (0..scenario.rounds).map(|_| sim.step()).collect()
}
