//! Secure collection rounds: signed, timestamped Paillier packets flowing up
//! the tree, with validation at every hop, homomorphic aggregation, resend
//! handling, and adversary injection for the security test harness.
//!
//! Wire layout (normative, see `PROTOCOL.md`):
//! `[2-byte id BE][2-byte ciphertext count BE][per ciphertext: 4-byte length
//! BE + big-endian bytes][4-byte signature length BE + signature]`. The
//! signed digest is `digest64(ciphertext bytes || 8-byte BE timestamp)`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use num_bigint::BigInt;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::coeff::{self, SensingMatrix};
use crate::crypto::{
    digest64, hom_add, hom_one, hom_scale, paillier_decrypt, paillier_encrypt, sign, verify,
    Ciphertext, CodecError, FixedPointCodec, KeyDirectory, NodeKeys, PaillierError,
    PaillierKeypair, PaillierPrivate, PaillierPublic, Signature,
};
use crate::seed;
use crate::topology::{classify_roles, NodeId, Role, Topology};

#[derive(Debug, Error)]
pub enum SecureError {
    #[error("packet parse failure: {0}")]
    Parse(String),
    #[error("node {0} has no signing key")]
    MissingKey(NodeId),
    #[error("node id {0} does not fit the 2-byte wire field")]
    IdTooWide(NodeId),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Coeff(#[from] coeff::CoeffError),
    #[error(transparent)]
    Topology(#[from] crate::topology::TopologyError),
}

/// Unit of secure transmission: one ciphertext for forwarder-origin packets,
/// `M` for aggregator packets, with one signature over the ciphertext bytes
/// and the round timestamp.
#[derive(Debug, Clone)]
pub struct SecurePacket {
    pub sender_id: NodeId,
    pub ciphertexts: Vec<Ciphertext>,
    pub sig: Signature,
}

fn packet_digest(cts: &[Ciphertext], ts: u64) -> [u8; 8] {
    let mut input = Vec::new();
    for c in cts {
        input.extend_from_slice(&c.to_bytes());
    }
    input.extend_from_slice(&ts.to_be_bytes());
    digest64(&input)
}

impl SecurePacket {
    pub fn build(
        sender_id: NodeId,
        ciphertexts: Vec<Ciphertext>,
        ts: u64,
        keys: &NodeKeys,
    ) -> Result<SecurePacket, SecureError> {
        if sender_id > u16::MAX as NodeId {
            return Err(SecureError::IdTooWide(sender_id));
        }
        let key = keys.get(sender_id).ok_or(SecureError::MissingKey(sender_id))?;
        let digest = packet_digest(&ciphertexts, ts);
        let sig = sign(&digest, ts, key);
        Ok(SecurePacket {
            sender_id,
            ciphertexts,
            sig,
        })
    }

    pub fn wire_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.sender_id as u16).to_be_bytes());
        out.extend_from_slice(&(self.ciphertexts.len() as u16).to_be_bytes());
        for c in &self.ciphertexts {
            let bytes = c.to_bytes();
            out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
            out.extend_from_slice(&bytes);
        }
        out.extend_from_slice(&(self.sig.0.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.sig.0);
        out
    }

    pub fn parse(bytes: &[u8], pk: &PaillierPublic) -> Result<SecurePacket, SecureError> {
        let take = |buf: &[u8], at: &mut usize, n: usize| -> Result<Vec<u8>, SecureError> {
            if *at + n > buf.len() {
                return Err(SecureError::Parse(format!(
                    "truncated at offset {} needing {n} bytes",
                    *at
                )));
            }
            let out = buf[*at..*at + n].to_vec();
            *at += n;
            Ok(out)
        };
        let mut at = 0usize;
        let id_b = take(bytes, &mut at, 2)?;
        let sender_id = u16::from_be_bytes([id_b[0], id_b[1]]) as NodeId;
        let cnt_b = take(bytes, &mut at, 2)?;
        let count = u16::from_be_bytes([cnt_b[0], cnt_b[1]]) as usize;
        let mut ciphertexts = Vec::with_capacity(count);
        for _ in 0..count {
            let len_b = take(bytes, &mut at, 4)?;
            let len = u32::from_be_bytes(len_b.try_into().unwrap()) as usize;
            let ct_b = take(bytes, &mut at, len)?;
            let ct = Ciphertext::from_bytes(&ct_b, pk)
                .map_err(|e| SecureError::Parse(e.to_string()))?;
            ciphertexts.push(ct);
        }
        let slen_b = take(bytes, &mut at, 4)?;
        let slen = u32::from_be_bytes(slen_b.try_into().unwrap()) as usize;
        let sig = Signature(take(bytes, &mut at, slen)?);
        if at != bytes.len() {
            return Err(SecureError::Parse(format!(
                "{} trailing bytes",
                bytes.len() - at
            )));
        }
        Ok(SecurePacket {
            sender_id,
            ciphertexts,
            sig,
        })
    }
}

/// Validation verdict: on failure the parsed id and ciphertexts (if any) are
/// still surfaced for logging.
#[derive(Debug)]
pub struct Validation {
    pub ok: bool,
    pub id: Option<NodeId>,
    pub enc_data: Vec<Ciphertext>,
    pub reason: Option<String>,
}

/// Check source id membership and signature/digest integrity of one packet.
pub fn validate(
    bytes: &[u8],
    dir: &KeyDirectory,
    id_set: &BTreeSet<NodeId>,
    ts: u64,
    pk: &PaillierPublic,
) -> Validation {
    let pkt = match SecurePacket::parse(bytes, pk) {
        Ok(p) => p,
        Err(e) => {
            return Validation {
                ok: false,
                id: None,
                enc_data: Vec::new(),
                reason: Some(e.to_string()),
            }
        }
    };
    let digest = packet_digest(&pkt.ciphertexts, ts);
    let mut reason = None;
    let ok = if !id_set.contains(&pkt.sender_id) {
        reason = Some(format!("id {} not in expected set", pkt.sender_id));
        false
    } else {
        match dir.get(pkt.sender_id) {
            Some(vk) if verify(&pkt.sig, &digest, ts, vk) => true,
            Some(_) => {
                reason = Some("signature/digest mismatch".into());
                false
            }
            None => {
                reason = Some(format!("no public key for id {}", pkt.sender_id));
                false
            }
        }
    };
    Validation {
        ok,
        id: Some(pkt.sender_id),
        enc_data: pkt.ciphertexts,
        reason,
    }
}

/// Per-node receive state for one round.
#[derive(Debug, Default)]
pub struct NodeInbox {
    pub expected: BTreeSet<NodeId>,
    pub received_ids: BTreeSet<NodeId>,
    /// Validated packets, keyed by origin, holding the verbatim wire bytes
    /// and the parsed ciphertexts.
    pub received_pkts: BTreeMap<NodeId, (Vec<u8>, Vec<Ciphertext>)>,
    pub rejects: Vec<String>,
}

impl NodeInbox {
    fn ingest(
        &mut self,
        raw: &[Vec<u8>],
        dir: &KeyDirectory,
        ts: u64,
        pk: &PaillierPublic,
    ) {
        for bytes in raw {
            let v = validate(bytes, dir, &self.expected, ts, pk);
            if v.ok {
                let id = v.id.unwrap();
                self.received_ids.insert(id);
                self.received_pkts.insert(id, (bytes.clone(), v.enc_data));
            } else {
                self.rejects.push(v.reason.unwrap_or_default());
            }
        }
    }

    pub fn resend_requests(&self) -> Vec<NodeId> {
        self.expected
            .difference(&self.received_ids)
            .copied()
            .collect()
    }
}

/// Everything a node step needs to know about the round.
pub struct SecureContext<'a> {
    pub topo: &'a Topology,
    pub m: usize,
    pub roles: BTreeMap<NodeId, Role>,
    pub phi: SensingMatrix,
    pub dir: KeyDirectory,
    pub k_dc: PaillierPublic,
    pub codec: FixedPointCodec,
}

impl<'a> SecureContext<'a> {
    pub fn new(
        topo: &'a Topology,
        m: usize,
        keys: &NodeKeys,
        k_dc: PaillierPublic,
        codec: FixedPointCodec,
    ) -> Result<Self, SecureError> {
        let roles = classify_roles(topo, m)?;
        let phi = coeff::assemble_sensing_matrix(&topo.meter_ids(), m)?;
        Ok(SecureContext {
            topo,
            m,
            roles,
            phi,
            dir: keys.directory(),
            k_dc,
            codec,
        })
    }

    /// Quantised coefficient `round(S * phi_{l, id})` used identically on the
    /// node and collector sides.
    pub fn quant_coeff(&self, l: usize, id: NodeId) -> Result<i64, SecureError> {
        let phi = self
            .phi
            .coeff_for(l, id)
            .expect("id is a column of the sensing matrix");
        Ok(self.codec.quantize(phi)?)
    }

    /// Origins a node expects from its children under the given roles: whole
    /// subtrees behind forwarder children, the child itself for aggregators.
    fn expected_origins(&self, node: NodeId, bootstrap: bool) -> BTreeSet<NodeId> {
        let children = self.topo.children();
        let mut expected = BTreeSet::new();
        for &c in children.get(&node).map(Vec::as_slice).unwrap_or(&[]) {
            if self.topo.unreachable().contains(&c) {
                continue;
            }
            if bootstrap || self.roles[&c] == Role::Forwarder {
                expected.extend(
                    self.topo
                        .subtree_members(c)
                        .into_iter()
                        .filter(|id| !self.topo.unreachable().contains(id)),
                );
            } else {
                expected.insert(c);
            }
        }
        expected
    }
}

/// Forwarder step: validate, request resends for missing origins, and relay
/// everything plus an encrypted own reading.
pub fn forwarder_step(
    ctx: &SecureContext,
    node: NodeId,
    reading: f64,
    raw_packets: &[Vec<u8>],
    keys: &NodeKeys,
    ts: u64,
    rng: &mut ChaCha20Rng,
    bootstrap: bool,
) -> Result<(Vec<Vec<u8>>, Vec<NodeId>, Vec<String>), SecureError> {
    let mut inbox = NodeInbox {
        expected: ctx.expected_origins(node, bootstrap),
        ..Default::default()
    };
    inbox.ingest(raw_packets, &ctx.dir, ts, &ctx.k_dc);
    let resend = inbox.resend_requests();

    let e_i = ctx.codec.encode(reading)?;
    let ct = paillier_encrypt(&e_i, &ctx.k_dc, rng)?;
    let own = SecurePacket::build(node, vec![ct], ts, keys)?;

    let mut send: Vec<Vec<u8>> = inbox
        .received_pkts
        .values()
        .map(|(bytes, _)| bytes.clone())
        .collect();
    send.push(own.wire_bytes());
    Ok((send, resend, inbox.rejects))
}

/// Aggregator step: validate, fold forwarder-origin ciphertexts into `M`
/// weighted homomorphic sums, merge aggregator children, add the own term,
/// and emit a single signed packet of `M` ciphertexts.
pub fn aggregator_step(
    ctx: &SecureContext,
    node: NodeId,
    reading: f64,
    raw_packets: &[Vec<u8>],
    keys: &NodeKeys,
    ts: u64,
    rng: &mut ChaCha20Rng,
) -> Result<(Vec<u8>, Vec<NodeId>, Vec<String>, bool), SecureError> {
    let mut inbox = NodeInbox {
        expected: ctx.expected_origins(node, false),
        ..Default::default()
    };
    inbox.ingest(raw_packets, &ctx.dir, ts, &ctx.k_dc);
    let resend = inbox.resend_requests();
    let partial = !resend.is_empty();

    let children = ctx.topo.children();
    let agg_children: BTreeSet<NodeId> = children
        .get(&node)
        .map(Vec::as_slice)
        .unwrap_or(&[])
        .iter()
        .copied()
        .filter(|c| ctx.roles[c] == Role::Aggregator)
        .collect();

    let mut out_cts = Vec::with_capacity(ctx.m);
    for l in 0..ctx.m {
        let mut f_acc = hom_one(&ctx.k_dc);
        let mut a_acc = hom_one(&ctx.k_dc);
        // received_pkts iterates ascending origin id, keeping sums ordered
        for (&origin, (_, cts)) in &inbox.received_pkts {
            if agg_children.contains(&origin) {
                a_acc = hom_add(&a_acc, &cts[l], &ctx.k_dc)?;
            } else {
                let q = ctx.quant_coeff(l, origin)?;
                let exp = ctx.codec.encode_int(&BigInt::from(q));
                f_acc = hom_add(&f_acc, &hom_scale(&cts[0], &exp, &ctx.k_dc)?, &ctx.k_dc)?;
            }
        }
        let q_own = ctx.quant_coeff(l, node)?;
        let e_own = ctx.codec.quantize(reading)?;
        let own_term = BigInt::from(q_own) * BigInt::from(e_own);
        let own_ct = paillier_encrypt(&ctx.codec.encode_int(&own_term), &ctx.k_dc, rng)?;
        out_cts.push(hom_add(&hom_add(&f_acc, &a_acc, &ctx.k_dc)?, &own_ct, &ctx.k_dc)?);
    }
    let pkt = SecurePacket::build(node, out_cts, ts, keys)?;
    Ok((pkt.wire_bytes(), resend, inbox.rejects, partial))
}

/// Collector assembly: decrypt aggregates and forwarder-origin readings,
/// self-weight the plaintexts with the same quantised coefficients, and
/// decode `y`. Also returns the exact integer row sums for equivalence
/// checks against the quantised plain pipeline.
pub fn collector_assemble(
    ctx: &SecureContext,
    raw_packets: &[Vec<u8>],
    sk: &PaillierPrivate,
    ts: u64,
    bootstrap: bool,
) -> Result<(DVector<f64>, Vec<BigInt>, NodeInbox), SecureError> {
    let mut inbox = NodeInbox {
        expected: ctx.expected_origins(ctx.topo.root_id(), bootstrap),
        ..Default::default()
    };
    inbox.ingest(raw_packets, &ctx.dir, ts, &ctx.k_dc);

    let children = ctx.topo.children();
    let agg_children: BTreeSet<NodeId> = children
        .get(&ctx.topo.root_id())
        .map(Vec::as_slice)
        .unwrap_or(&[])
        .iter()
        .copied()
        .filter(|c| !bootstrap && ctx.roles[c] == Role::Aggregator)
        .collect();

    let mut sums = vec![BigInt::ZERO; ctx.m];
    for (&origin, (_, cts)) in &inbox.received_pkts {
        if agg_children.contains(&origin) {
            for (l, sum) in sums.iter_mut().enumerate() {
                let p = paillier_decrypt(&cts[l], &ctx.k_dc, sk)?;
                *sum += ctx.codec.lift(&p);
            }
        } else {
            let e = ctx.codec.lift(&paillier_decrypt(&cts[0], &ctx.k_dc, sk)?);
            for (l, sum) in sums.iter_mut().enumerate() {
                let q = ctx.quant_coeff(l, origin)?;
                *sum += BigInt::from(q) * &e;
            }
        }
    }
    let scale2 = ctx.codec.scale() * ctx.codec.scale();
    let mut y = DVector::zeros(ctx.m);
    for (l, sum) in sums.iter().enumerate() {
        use num_traits::ToPrimitive;
        let v = sum.to_f64().ok_or(CodecError::BudgetExceeded)?;
        y[l] = v / scale2;
    }
    Ok((y, sums, inbox))
}

/// Exact integer row sums of the quantised plain pipeline,
/// `sum_j round(S phi_{lj}) * round(S d_j)`, and the corresponding real `y`.
pub fn quantized_plain_y(
    phi: &SensingMatrix,
    codec: &FixedPointCodec,
    d: &[f64],
) -> Result<(Vec<BigInt>, DVector<f64>), SecureError> {
    let m = phi.rows();
    let mut sums = vec![BigInt::ZERO; m];
    let es: Vec<i64> = d
        .iter()
        .map(|&v| codec.quantize(v))
        .collect::<Result<_, _>>()?;
    for l in 0..m {
        let mut acc = BigInt::ZERO;
        for (j, &e) in es.iter().enumerate() {
            let q = codec.quantize(phi.entry(l, j))?;
            acc += BigInt::from(q) * BigInt::from(e);
        }
        sums[l] = acc;
    }
    let scale2 = codec.scale() * codec.scale();
    let y = DVector::from_fn(m, |l, _| {
        use num_traits::ToPrimitive;
        sums[l].to_f64().unwrap() / scale2
    });
    Ok((sums, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Tamper,
    Replay,
    Impersonate,
    Eavesdrop,
}

/// Attack placement: applied to the first delivery of the chosen packet on
/// the chosen (child, parent) link.
#[derive(Debug, Clone, Copy)]
pub struct AttackPlan {
    pub kind: AttackKind,
    pub link: (NodeId, NodeId),
    pub packet_index: usize,
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub kind: AttackKind,
    /// The injected or corrupted artefact was rejected before influencing y.
    pub rejected: bool,
    /// A resend healed a suppressed honest packet.
    pub resend_healed: bool,
    /// Final measurements equal the attack-free run.
    pub y_unaffected: bool,
    pub notes: String,
}

/// Result of one secure round.
#[derive(Debug)]
pub struct SecureRoundResult {
    pub y: DVector<f64>,
    /// Integer row sums, comparable exactly with [`quantized_plain_y`].
    pub row_sums: Vec<BigInt>,
    /// Packets per link, counted per the plain model (an aggregator's packet
    /// of M ciphertexts counts M).
    pub cost: u64,
    pub rejections: Vec<String>,
    pub resend_deliveries: usize,
    /// Aggregates that stayed incomplete after resend retries.
    pub partial: bool,
}

const RESEND_RETRIES: usize = 2;

/// Drive one full secure round bottom-up. `attack`, when set, corrupts or
/// injects traffic on its link at first delivery; validation plus resend
/// handling must leave `y` untouched.
#[allow(clippy::too_many_arguments)]
pub fn run_secure_round(
    ctx: &SecureContext,
    keys: &NodeKeys,
    kp: &PaillierKeypair,
    d: &[f64],
    ts: u64,
    enc_seed: u64,
    attack: Option<&AttackPlan>,
    bootstrap: bool,
) -> Result<SecureRoundResult, SecureError> {
    let ids = ctx.topo.meter_ids();
    let reading: BTreeMap<NodeId, f64> = ids.iter().copied().zip(d.iter().copied()).collect();
    let mut rng = seed::subseed_rng(enc_seed, &format!("secure.enc.{ts}"));
    let active = |id: NodeId| !ctx.topo.unreachable().contains(&id);

    // outbox bytes queued on each child->parent link
    let mut outbox: BTreeMap<NodeId, Vec<Vec<u8>>> = BTreeMap::new();
    let mut rejections = Vec::new();
    let mut resend_deliveries = 0usize;
    let mut partial = false;
    let mut cost = 0u64;

    let deliver = |from: NodeId,
                   to: NodeId,
                   outbox: &BTreeMap<NodeId, Vec<Vec<u8>>>,
                   first: bool,
                   rng: &mut ChaCha20Rng|
     -> Vec<Vec<u8>> {
        let mut pkts = outbox.get(&from).cloned().unwrap_or_default();
        if !first {
            return pkts;
        }
        if let Some(plan) = attack {
            if plan.link == (from, to) && !pkts.is_empty() {
                let idx = plan.packet_index % pkts.len();
                match plan.kind {
                    AttackKind::Tamper => {
                        // flip one ciphertext bit in transit
                        let bytes = &mut pkts[idx];
                        let pos = 5.min(bytes.len() - 1);
                        bytes[pos] ^= 0x01;
                    }
                    AttackKind::Replay => {
                        // re-inject a packet recorded at the previous round:
                        // same content, signed then, stale timestamp now
                        if let Ok(pkt) = SecurePacket::parse(&pkts[idx], &ctx.k_dc) {
                            if let Ok(stale) = SecurePacket::build(
                                pkt.sender_id,
                                pkt.ciphertexts,
                                ts.wrapping_sub(1),
                                keys,
                            ) {
                                pkts.push(stale.wire_bytes());
                            }
                        }
                    }
                    AttackKind::Impersonate => {
                        // forged packet under the victim's id, attacker key
                        if let Ok(pkt) = SecurePacket::parse(&pkts[idx], &ctx.k_dc) {
                            let mut arng = seed::stream_rng("gridcs.attacker", ts);
                            let attacker =
                                crate::crypto::rsa_keygen(512, &mut arng);
                            let forged_ct = paillier_encrypt(
                                &ctx.codec.encode(999.0).unwrap(),
                                &ctx.k_dc,
                                rng,
                            )
                            .unwrap();
                            let digest = packet_digest(&vec![forged_ct.clone()], ts);
                            let sig = sign(&digest, ts, &attacker);
                            let forged = SecurePacket {
                                sender_id: pkt.sender_id,
                                ciphertexts: vec![forged_ct],
                                sig,
                            };
                            pkts.push(forged.wire_bytes());
                        }
                    }
                    AttackKind::Eavesdrop => {
                        // passive: traffic unchanged
                    }
                }
            }
        }
        pkts
    };

    for &node in ctx.topo.depth_order().iter().rev() {
        if !active(node) {
            partial = true;
            continue;
        }
        let children = ctx.topo.children();
        let kids: Vec<NodeId> = children
            .get(&node)
            .map(|cs| cs.iter().copied().filter(|&c| active(c)).collect())
            .unwrap_or_default();

        // first delivery, possibly attacked
        let mut raw = Vec::new();
        for &c in &kids {
            raw.extend(deliver(c, node, &outbox, true, &mut rng));
        }

        let is_forwarder = bootstrap || ctx.roles[&node] == Role::Forwarder;
        let mut attempts = 0usize;
        loop {
            if is_forwarder {
                let (send, resend, rejects) = forwarder_step(
                    ctx,
                    node,
                    reading[&node],
                    &raw,
                    keys,
                    ts,
                    &mut rng,
                    bootstrap,
                )?;
                rejections.extend(rejects.iter().cloned());
                if resend.is_empty() || attempts >= RESEND_RETRIES {
                    partial = partial || !resend.is_empty();
                    cost += send.len() as u64;
                    outbox.insert(node, send);
                    break;
                }
                attempts += 1;
                resend_deliveries += 1;
                // clean redelivery from the children's outboxes
                raw = Vec::new();
                for &c in &kids {
                    raw.extend(deliver(c, node, &outbox, false, &mut rng));
                }
            } else {
                let (pkt, resend, rejects, part) = aggregator_step(
                    ctx,
                    node,
                    reading[&node],
                    &raw,
                    keys,
                    ts,
                    &mut rng,
                )?;
                rejections.extend(rejects.iter().cloned());
                if resend.is_empty() || attempts >= RESEND_RETRIES {
                    partial = partial || part;
                    cost += ctx.m as u64;
                    outbox.insert(node, vec![pkt]);
                    break;
                }
                attempts += 1;
                resend_deliveries += 1;
                raw = Vec::new();
                for &c in &kids {
                    raw.extend(deliver(c, node, &outbox, false, &mut rng));
                }
            }
        }
    }

    // collector
    let root = ctx.topo.root_id();
    let children = ctx.topo.children();
    let root_kids: Vec<NodeId> = children
        .get(&root)
        .map(|cs| cs.iter().copied().filter(|&c| active(c)).collect())
        .unwrap_or_default();
    let mut raw = Vec::new();
    for &c in &root_kids {
        raw.extend(deliver(c, root, &outbox, true, &mut rng));
    }
    let mut attempts = 0usize;
    let (y, sums, inbox) = loop {
        let (y, sums, inbox) = collector_assemble(ctx, &raw, &kp.private, ts, bootstrap)?;
        if inbox.resend_requests().is_empty() || attempts >= RESEND_RETRIES {
            break (y, sums, inbox);
        }
        attempts += 1;
        resend_deliveries += 1;
        raw = Vec::new();
        for &c in &root_kids {
            raw.extend(deliver(c, root, &outbox, false, &mut rng));
        }
    };
    rejections.extend(inbox.rejects.iter().cloned());
    partial = partial || !inbox.resend_requests().is_empty();

    Ok(SecureRoundResult {
        y,
        row_sums: sums,
        cost,
        rejections,
        resend_deliveries,
        partial,
    })
}

/// Run a secure round under an injected attack and report the outcome
/// against the attack-free baseline.
#[allow(clippy::too_many_arguments)]
pub fn inject_adversary(
    ctx: &SecureContext,
    keys: &NodeKeys,
    kp: &PaillierKeypair,
    d: &[f64],
    ts: u64,
    enc_seed: u64,
    plan: &AttackPlan,
) -> Result<(SecureRoundResult, AttackOutcome), SecureError> {
    let clean = run_secure_round(ctx, keys, kp, d, ts, enc_seed, None, false)?;
    let attacked = run_secure_round(ctx, keys, kp, d, ts, enc_seed, Some(plan), false)?;
    let y_unaffected = clean.row_sums == attacked.row_sums;

    let outcome = match plan.kind {
        AttackKind::Eavesdrop => {
            // semantic-security smoke test: equal plaintexts, fresh
            // randomness, distinct ciphertexts
            let mut rng = seed::subseed_rng(enc_seed, "secure.eavesdrop");
            let m = ctx.codec.encode(d.first().copied().unwrap_or(0.0))?;
            let c1 = paillier_encrypt(&m, &ctx.k_dc, &mut rng)?;
            let c2 = paillier_encrypt(&m, &ctx.k_dc, &mut rng)?;
            AttackOutcome {
                kind: plan.kind,
                rejected: true,
                resend_healed: false,
                y_unaffected,
                notes: format!(
                    "observed ciphertexts are probabilistic (distinct for equal plaintexts: {})",
                    c1 != c2
                ),
            }
        }
        AttackKind::Tamper => AttackOutcome {
            kind: plan.kind,
            rejected: !attacked.rejections.is_empty(),
            resend_healed: attacked.resend_deliveries > clean.resend_deliveries,
            y_unaffected,
            notes: format!("{} validation rejections", attacked.rejections.len()),
        },
        AttackKind::Replay | AttackKind::Impersonate => AttackOutcome {
            kind: plan.kind,
            rejected: !attacked.rejections.is_empty(),
            resend_healed: false,
            y_unaffected,
            notes: format!("{} validation rejections", attacked.rejections.len()),
        },
    };
    Ok((attacked, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen_network, CryptoProfile, FixedPointCodec};
    use crate::topology::{gen_random_tree, gen_star};

    fn setup(
        n: usize,
        tree_seed: u64,
        m: usize,
    ) -> (
        crate::topology::Topology,
        PaillierKeypair,
        NodeKeys,
        FixedPointCodec,
    ) {
        let topo = gen_random_tree(n, tree_seed);
        let (kp, keys) = keygen_network(&topo.meter_ids(), CryptoProfile::TEST_512, 99);
        let codec = FixedPointCodec::new(16, &kp.public);
        let _ = m;
        (topo, kp, keys, codec)
    }

    fn readings(n: usize, s: u64) -> Vec<f64> {
        let mut rng = seed::stream_rng("test.secure", s);
        (0..n)
            .map(|_| seed::standard_normal(&mut rng).abs() * 300.0)
            .collect()
    }

    #[test]
    fn wire_roundtrip() {
        let (_, kp, keys, codec) = setup(3, 0, 2);
        let mut rng = seed::stream_rng("test.secure.wire", 0);
        let ct = paillier_encrypt(&codec.encode(5.0).unwrap(), &kp.public, &mut rng).unwrap();
        let pkt = SecurePacket::build(2, vec![ct], 7, &keys).unwrap();
        let bytes = pkt.wire_bytes();
        let back = SecurePacket::parse(&bytes, &kp.public).unwrap();
        assert_eq!(back.sender_id, 2);
        assert_eq!(back.ciphertexts, pkt.ciphertexts);
        assert_eq!(back.sig, pkt.sig);
    }

    #[test]
    fn honest_packet_validates() {
        let (_, kp, keys, codec) = setup(3, 0, 2);
        let mut rng = seed::stream_rng("test.secure.val", 0);
        let ct = paillier_encrypt(&codec.encode(5.0).unwrap(), &kp.public, &mut rng).unwrap();
        let pkt = SecurePacket::build(1, vec![ct], 3, &keys).unwrap();
        let dir = keys.directory();
        let set: BTreeSet<NodeId> = [1, 2, 3].into();
        let v = validate(&pkt.wire_bytes(), &dir, &set, 3, &kp.public);
        assert!(v.ok, "{:?}", v.reason);

        // id outside the expected set
        let v2 = validate(&pkt.wire_bytes(), &dir, &[2u32, 3].into(), 3, &kp.public);
        assert!(!v2.ok);
        assert_eq!(v2.id, Some(1));

        // one flipped ciphertext bit
        let mut bytes = pkt.wire_bytes();
        bytes[6] ^= 0x01;
        let v3 = validate(&bytes, &dir, &set, 3, &kp.public);
        assert!(!v3.ok);

        // garbage does not panic
        let v4 = validate(&[1, 2, 3], &dir, &set, 3, &kp.public);
        assert!(!v4.ok);
        assert!(v4.reason.unwrap().contains("truncated"));
    }

    #[test]
    fn secure_round_matches_quantized_plain() {
        for tree_seed in [1u64, 2, 3] {
            let n = 12;
            let m = 4;
            let (topo, kp, keys, codec) = setup(n, tree_seed, m);
            let ctx =
                SecureContext::new(&topo, m, &keys, kp.public.clone(), codec.clone()).unwrap();
            let d = readings(n, tree_seed);
            let res =
                run_secure_round(&ctx, &keys, &kp, &d, 5, 1234, None, false).unwrap();
            assert!(res.rejections.is_empty());
            assert!(!res.partial);
            let (sums, y_q) = quantized_plain_y(&ctx.phi, &codec, &d).unwrap();
            assert_eq!(res.row_sums, sums, "integer sums differ (seed {tree_seed})");
            let rel = (res.y.clone() - &y_q).norm() / y_q.norm();
            assert!(rel < 1e-12);
            // and close to the unquantised plain pipeline
            let plain = crate::protocol::run_plain_round(&topo, &d, m).unwrap();
            let rel2 = (res.y.clone() - &plain.y).norm() / plain.y.norm();
            assert!(rel2 < 1e-3, "quantisation gap {rel2}");
        }
    }

    #[test]
    fn all_forwarder_network_reduces_to_collector_side_weighting() {
        let n = 6;
        let m = 5;
        let topo = gen_star(n);
        let (kp, keys) = keygen_network(&topo.meter_ids(), CryptoProfile::TEST_512, 7);
        let codec = FixedPointCodec::new(16, &kp.public);
        let ctx = SecureContext::new(&topo, m, &keys, kp.public.clone(), codec.clone()).unwrap();
        let d = readings(n, 9);
        let res = run_secure_round(&ctx, &keys, &kp, &d, 1, 55, None, false).unwrap();
        let (sums, _) = quantized_plain_y(&ctx.phi, &codec, &d).unwrap();
        assert_eq!(res.row_sums, sums);
        assert_eq!(res.cost, n as u64);
    }

    #[test]
    fn bootstrap_round_delivers_exact_readings() {
        let n = 8;
        let m = 3;
        let (topo, kp, keys, codec) = setup(n, 4, m);
        let ctx = SecureContext::new(&topo, m, &keys, kp.public.clone(), codec.clone()).unwrap();
        let d = readings(n, 10);
        // bootstrap: every node forwards one ciphertext; the collector can
        // decode each reading to codec precision
        let res = run_secure_round(&ctx, &keys, &kp, &d, 0, 77, None, true).unwrap();
        assert!(res.rejections.is_empty());
        // cost equals the full-round accounting
        let full = crate::protocol::run_full_round(&topo, &d, m).unwrap();
        assert_eq!(res.cost, full.cost);
    }

    #[test]
    fn aggregator_with_zero_reading_passes_child_through() {
        // chain 1 <- 2 <- ... <- 5 with m = 2: node 1 aggregates
        let topo = crate::topology::gen_chain(5);
        let (kp, keys) = keygen_network(&topo.meter_ids(), CryptoProfile::TEST_512, 11);
        let codec = FixedPointCodec::new(16, &kp.public);
        let m = 2;
        let ctx = SecureContext::new(&topo, m, &keys, kp.public.clone(), codec.clone()).unwrap();
        let d = vec![0.0, 10.0, 20.0, 30.0, 40.0];
        let res = run_secure_round(&ctx, &keys, &kp, &d, 2, 88, None, false).unwrap();
        let (sums, _) = quantized_plain_y(&ctx.phi, &codec, &d).unwrap();
        assert_eq!(res.row_sums, sums);
    }

    #[test]
    fn tamper_is_rejected_and_healed() {
        let n = 10;
        let m = 3;
        let (topo, kp, keys, codec) = setup(n, 6, m);
        let ctx = SecureContext::new(&topo, m, &keys, kp.public.clone(), codec).unwrap();
        let d = readings(n, 11);
        // pick a deep link so the tamper crosses a validating hop
        let victim = *topo.meter_ids().last().unwrap();
        let plan = AttackPlan {
            kind: AttackKind::Tamper,
            link: (victim, topo.parent_of(victim).unwrap()),
            packet_index: 0,
        };
        let (_, outcome) = inject_adversary(&ctx, &keys, &kp, &d, 3, 21, &plan).unwrap();
        assert!(outcome.rejected, "{}", outcome.notes);
        assert!(outcome.y_unaffected);
    }

    #[test]
    fn replay_and_impersonation_rejected() {
        let n = 8;
        let m = 3;
        let (topo, kp, keys, codec) = setup(n, 8, m);
        let ctx = SecureContext::new(&topo, m, &keys, kp.public.clone(), codec).unwrap();
        let d = readings(n, 13);
        for kind in [AttackKind::Replay, AttackKind::Impersonate] {
            let victim = topo.meter_ids()[0];
            let plan = AttackPlan {
                kind,
                link: (victim, topo.parent_of(victim).unwrap()),
                packet_index: 0,
            };
            let (_, outcome) = inject_adversary(&ctx, &keys, &kp, &d, 9, 22, &plan).unwrap();
            assert!(outcome.rejected, "{kind:?}: {}", outcome.notes);
            assert!(outcome.y_unaffected, "{kind:?}");
        }
    }

    #[test]
    fn eavesdrop_sees_probabilistic_ciphertexts() {
        let n = 6;
        let m = 3;
        let (topo, kp, keys, codec) = setup(n, 9, m);
        let ctx = SecureContext::new(&topo, m, &keys, kp.public.clone(), codec).unwrap();
        let d = readings(n, 14);
        let victim = topo.meter_ids()[2];
        let plan = AttackPlan {
            kind: AttackKind::Eavesdrop,
            link: (victim, topo.parent_of(victim).unwrap()),
            packet_index: 0,
        };
        let (_, outcome) = inject_adversary(&ctx, &keys, &kp, &d, 4, 33, &plan).unwrap();
        assert!(outcome.y_unaffected);
        assert!(outcome.notes.contains("distinct for equal plaintexts: true"));
    }
}
