//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use badsim_core::chain::{BlockHash, TxHash};
use badsim_core::encoding::put_varint;
use badsim_core::metrics::{annual_fork_broadcast, overhead};
use badsim_core::scenario::Scenario;
use badsim_core::sim::{NodeId, ScriptAction, SimConfig, Simulation, TraceKind};
use badsim_core::threat::{deserialize_db, serialize_db, MatcherState, ThreatDatabase, ThresholdRule};
use common::{oracle_detections, streaming_detections, sym, Instance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn two_domain_replay() -> Outcome {
    let started = Instant::now();
    let scenario = Scenario::load(bundled("two_domain.toml")).map_err(|e| e.to_string())?;
    let run = scenario.run().map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let sim = &run.sim;
    let id = |n: &str| scenario.sim.node_id(n).unwrap();
    let (a2, b2) = (id("A2"), id("B2"));
    let evil: Vec<TxHash> = ["evil-1", "evil-2", "evil-3"]
        .iter()
        .map(|t| scenario.tx_hash(t).unwrap())
        .collect();

    // (a) during the eclipse A2's tip is the top of a 3-block injected branch.
    let probe = sim
        .trace()
        .events()
        .iter()
        .find(|e| e.node == a2 && e.kind == TraceKind::Probe && e.tick == 690)
        .ok_or("no probe of A2")?;
    check(probe.detail["injected_depth"] == 3, format!("A2 probe {}", probe.detail))?;
    let tip: BlockHash = serde_json::from_value(probe.detail["tip"].clone()).map_err(|e| e.to_string())?;
    check(sim.injected_blocks().contains(&tip), "A2 tip at 690 not injected")?;

    // (b) exactly one fork record, holding the three injected blocks.
    let records = sim.node(a2).store().fork_records();
    check(records.len() == 1, format!("A2 has {} fork records", records.len()))?;
    let branch = &records[0].branch_blocks;
    check(
        branch.len() == 3 && branch.iter().all(|b| sim.injected_blocks().contains(&b.hash())),
        "A2 fork record is not the injected branch",
    )?;
    check(records[0].suspicious_txs == evil, "A2 suspicious txs differ from evil-1..3")?;

    // (c) the sequence reached B2 through gossip before its eclipse.
    let seq = sim
        .node(b2)
        .db()
        .sequences()
        .iter()
        .find(|s| s.hashes == evil)
        .ok_or("B2 never stored evil-1..3")?;
    let inserted = sim
        .trace()
        .events()
        .iter()
        .find(|e| e.node == b2 && e.kind == TraceKind::IntelInserted && e.detail["id"] == seq.id)
        .ok_or("no insertion event at B2")?;
    check(
        inserted.detail["source"] == "gossip" && inserted.tick < 1200,
        format!("B2 insertion {}", inserted.detail),
    )?;

    // (d) B2 accepts fewer than 3 of the replayed transactions and refuses
    // the block completing the prefix.
    let in_window = |e: &&badsim_core::sim::TraceEvent| e.node == b2 && (1200..1700).contains(&e.tick);
    let payloads = |e: &badsim_core::sim::TraceEvent| -> Vec<String> {
        serde_json::from_value(e.detail["payloads"].clone()).unwrap_or_default()
    };
    let accepted: BTreeSet<String> = sim
        .trace()
        .of_kind(TraceKind::BlockAccepted)
        .filter(in_window)
        .flat_map(payloads)
        .filter(|p| p.starts_with("evil-"))
        .collect();
    check(accepted.len() < 3, format!("B2 accepted {accepted:?}"))?;
    let theta = ThresholdRule::Early.theta(3);
    check(accepted.len() < theta, format!("B2 accepted {} ≥ θ = {theta}", accepted.len()))?;
    let refusal = sim
        .trace()
        .of_kind(TraceKind::BlockRefused)
        .filter(in_window)
        .find(|e| e.detail["reason"] == "attack_detected")
        .ok_or("B2 refused no block")?;
    check(
        payloads(refusal).contains(&"evil-2".to_owned()),
        "refused block does not carry evil-2",
    )?;
    check(run.passed(), "bundled assertions failed")?;
    check(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!(
        "A2 depth 3, 1 record of 3 blocks, B2 got intel at t={}, accepted {}/3, refused at t={}, {:.0?}",
        inserted.tick,
        accepted.len(),
        refusal.tick,
        elapsed
    ))
}

fn overhead_formula() -> Outcome {
    let gb = annual_fork_broadcast(141.0, 0.993201, 32.0);
    let ovh = overhead(gb, 150.0).map_err(|e| e.to_string())?;
    check((gb - 4.481).abs() <= 0.001, format!("annual {gb}"))?;
    check((ovh - 0.00249).abs() <= 0.00002, format!("overhead {ovh}"))?;
    Ok(format!("{gb:.4} GB/year, overhead {ovh:.6} at m=150"))
}

fn matcher_work_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let k = rng.gen_range(1..=8);
        let lens: Vec<usize> = (0..k).map(|_| rng.gen_range(1..=16)).collect();
        let mut db = ThreatDatabase::default();
        for &l in &lens {
            db.insert(vec![sym(0); l], "w", 0);
        }
        let mut m = MatcherState::new(ThresholdRule::Full);
        m.step(&db, &sym(0));
        let total: usize = lens.iter().sum();
        check(
            m.last_step_work() == total as u64,
            format!("case {case}: work {} ≠ Σℓ {total}", m.last_step_work()),
        )?;
    }
    let inst = Instance::random(&mut rng, 8, 6, 4, 0);
    let db = inst.db();
    let bound = db.total_length() as u64;
    let mut worst = 0;
    for rule in [ThresholdRule::Full, ThresholdRule::Early] {
        let mut m = MatcherState::new(rule);
        for step in 0..10_000 {
            m.step(&db, &sym(rng.gen_range(0..4)));
            worst = worst.max(m.last_step_work());
            check(m.last_step_work() <= bound, format!("step {step}: {} > {bound}", m.last_step_work()))?;
        }
    }
    let run = Scenario::load(bundled("worst_case_matcher.toml"))
        .and_then(|s| s.run())
        .map_err(|e| e.to_string())?;
    let w = run.sim.node_by_name("W").ok_or("no node W")?.stats();
    check(
        w.max_step_work == w.work_bound_at_max && w.bound_violations == 0,
        "worst-case scenario work ≠ Σℓ",
    )?;
    Ok(format!(
        "1000 equal-hash dbs exact, 20000 random steps max {worst} ≤ {bound}, scenario {}",
        w.max_step_work
    ))
}

fn matcher_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut detections = [0usize; 2];
    for case in 0..1000 {
        let alphabet = rng.gen_range(2..=16);
        let inst = Instance::random(&mut rng, 8, 6, alphabet, 200);
        let early = match rng.gen_range(0..3) {
            0 => ThresholdRule::Early,
            _ => ThresholdRule::AtMost(rng.gen_range(1..=5)),
        };
        for (mode, rule) in [ThresholdRule::Full, early].into_iter().enumerate() {
            let got = streaming_detections(&inst, rule);
            let want = oracle_detections(&inst, &inst.thetas(rule));
            check(got == want, format!("case {case} {rule:?}: {got:?} vs {want:?}"))?;
            detections[mode] += got.len();
        }
    }
    check(detections.iter().all(|&d| d > 0), "no detections exercised")?;
    Ok(format!(
        "1000/1000 instances agree ({} full-θ and {} early-θ detections)",
        detections[0], detections[1]
    ))
}

fn convergence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..50u64 {
        let n = rng.gen_range(9..=32);
        let mut c = SimConfig::honest(seed, n, 8);
        let miner = NodeId(rng.gen_range(0..n as u32));
        let blocks = rng.gen_range(1..=8u64);
        let gap = rng.gen_range(1..=120u64);
        c.script = (0..blocks)
            .map(|i| ScriptAction::Mine {
                at: 10 + i * gap,
                node: miner,
                txs: if i < 4 {
                    vec![c.genesis.payload_transaction(i as u32, b"pay", b"r")]
                } else {
                    Vec::new()
                },
            })
            .collect();
        let mut sim = Simulation::new(c).map_err(|e| e.to_string())?;
        let diameter = sim.topology().diameter(&sim.honest_ids()).ok_or("disconnected")? as u64;
        let last = 10 + (blocks - 1) * gap;
        sim.run(last + diameter * 60);
        check(sim.tips_agree(), format!("seed {seed}: tips differ"))?;
        let records: usize = sim.nodes().iter().map(|x| x.store().fork_records().len()).sum();
        check(records == 0, format!("seed {seed}: {records} fork records"))?;
        check(
            sim.node(NodeId(0)).store().tip_height() == blocks,
            format!("seed {seed}: wrong height"),
        )?;
    }
    Ok("50/50 topologies converge within diameter × 60 ticks, no fork records".into())
}

fn determinism() -> Outcome {
    let mut lines = 0;
    for name in ["two_domain.toml", "no_adversary.toml", "worst_case_matcher.toml"] {
        let scenario = Scenario::load(bundled(name)).map_err(|e| e.to_string())?;
        let a = scenario.run().map_err(|e| e.to_string())?;
        let b = scenario.run().map_err(|e| e.to_string())?;
        let (ta, tb) = (a.sim.trace().to_jsonl(), b.sim.trace().to_jsonl());
        check(ta == tb, format!("{name}: traces differ"))?;
        check(
            a.sim.ledger().to_jsonl() == b.sim.ledger().to_jsonl(),
            format!("{name}: bandwidth differs"),
        )?;
        lines += ta.lines().count();
    }
    Ok(format!("3 scenarios, {lines} identical trace lines"))
}

fn random_db(rng: &mut ChaCha8Rng) -> ThreatDatabase {
    let mut db = ThreatDatabase::default();
    for _ in 0..rng.gen_range(0..=20) {
        let len = rng.gen_range(1..=64);
        let hashes = (0..len).map(|_| TxHash(rng.gen())).collect();
        let label: String = (0..rng.gen_range(0..20))
            .map(|_| char::from_u32(rng.gen_range(0x20..0x2FF)).unwrap_or('?'))
            .collect();
        db.insert(hashes, label, rng.gen());
    }
    db
}

fn db_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut structural = 0;
    let mut mutated_ok = 0;
    for case in 0..1000 {
        let db = random_db(&mut rng);
        let bytes = serialize_db(&db);
        let back = deserialize_db(&bytes).map_err(|e| format!("case {case}: {e}"))?;
        check(back == db, format!("case {case}: round trip differs"))?;

        // Structural damage is always reported as malformed input.
        let cut = rng.gen_range(0..bytes.len());
        let mut bad_magic = bytes.clone();
        bad_magic[rng.gen_range(0..4)] ^= 0x20;
        let mut bad_version = bytes.clone();
        bad_version[4] = rng.gen_range(2..=255);
        let mut trailing = bytes.clone();
        trailing.push(rng.gen());
        let mut inflated = bytes[..6].to_vec();
        put_varint(&mut inflated, db.len() as u64 + 1);
        inflated.extend_from_slice(&bytes[6 + badsim_core::encoding::varint_len(db.len() as u64)..]);
        for (what, input) in [
            ("truncated", &bytes[..cut]),
            ("magic", &bad_magic[..]),
            ("version", &bad_version[..]),
            ("trailing", &trailing[..]),
            ("count", &inflated[..]),
        ] {
            check(deserialize_db(input).is_err(), format!("case {case}: {what} accepted"))?;
        }

        // Arbitrary byte damage never crashes.
        let mut mutated = bytes.clone();
        for _ in 0..rng.gen_range(1..=4) {
            let i = rng.gen_range(0..mutated.len());
            mutated[i] = rng.gen();
        }
        let result = catch_unwind(AssertUnwindSafe(|| deserialize_db(&mutated).is_ok()))
            .map_err(|_| format!("case {case}: decoder panicked"))?;
        mutated_ok += usize::from(result);
        structural += 5;
    }
    Ok(format!(
        "1000 round trips, {structural} structural corruptions rejected, random mutations never panic ({mutated_ok} decoded)"
    ))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("two-domain replay", two_domain_replay),
        ("fork broadcast overhead", overhead_formula),
        ("matcher work bound", matcher_work_bound),
        ("matcher/oracle equivalence", matcher_oracle_equivalence),
        ("convergence", convergence),
        ("determinism", determinism),
        ("threat db round trip", db_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
