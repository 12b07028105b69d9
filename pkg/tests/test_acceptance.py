"""The ten acceptance criteria, each at its stated tolerance.

Every criterion prints one PASS/FAIL line (shown in the terminal summary and
on stdout with ``-s``) and must finish within ten seconds.
"""

import random
import struct
import time
from contextlib import contextmanager

from crc32c import crc32c

import rule_oracle as ro
from conftest import ACCEPTANCE_RESULTS
from strategies import random_key

from ckss.blackbox import replay, thaw
from ckss.codec import decode_key, encode_key
from ckss.command import handle_clash
from ckss.conformance import reference_key, run_conformance
from ckss.domain import Activity, CombatRole
from ckss.keys import CodifiedKey
from ckss.scenario import corpus_names, load_scenario
from ckss.sim import Simulation, run_scenario
from ckss.switch import ActionDispatched, ActionState, KeyClash, dispatch
from ckss.verify import lethal_dispatches

TIME_LIMIT = 10.0


@contextmanager
def criterion(number, title):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        line = f"criterion {number:2d} FAIL  {title}"
        ACCEPTANCE_RESULTS.append(line)
        print(line)
        raise
    elapsed = time.perf_counter() - start
    ok = elapsed < TIME_LIMIT
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title} ({elapsed:.2f} s)"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    assert ok, f"took {elapsed:.2f} s"


def test_01_rule_oracle_equivalence():
    with criterion(1, "rule-oracle equivalence"):
        space = ro.evaluated()
        assert len(space) >= 10_000
        disagreements = [pt for pt, _, _, invs in space if [int(i.rule) for i in invs] != ro.expected_rules(pt)]
        assert disagreements == []
        assert {int(i.rule) for _, _, _, invs in space for i in invs} == set(range(1, 15))


def test_02_clash_semantics():
    with criterion(2, "clash semantics"):
        clashed = 0
        for _, _, ctx, invs in ro.evaluated():
            if len(invs) < 2:
                continue
            clashed += 1
            result = dispatch(invs, ctx)
            assert isinstance(result, KeyClash)
            record, pending = handle_clash(invs, ctx.pending)
            assert len(record.nullified) >= len(invs)
            assert all(a.state == ActionState.NULLIFIED for a in record.nullified)
            if ctx.pending is not None:
                if ctx.pending.state == ActionState.EXECUTED:
                    assert pending is ctx.pending
                else:
                    assert pending.state == ActionState.NULLIFIED
        assert clashed > 0


def test_03_non_combatant_safety():
    with criterion(3, "non-combatant safety"):
        checked = 0
        for _, key, ctx, invs in ro.evaluated():
            if key.seg9_role != CombatRole.NON_COMBATANT:
                continue
            checked += 1
            result = dispatch(invs, ctx)
            assert not (isinstance(result, ActionDispatched) and result.action.lethal)
        assert checked > 0


def test_04_toddler_abort():
    with criterion(4, "toddler-abort reproduction"):
        sim = run_scenario("toddler-abort")
        aborts = [thaw(r.payload) for r in sim.log
                  if r.kind == "action" and r.payload["kind"] == "AbortEngagement" and r.payload["state"] == "Invoked"]
        assert len(aborts) == 1
        assert aborts[0]["action"]["target"] == 21
        executed = [r for r in sim.log if r.kind == "action" and r.payload["state"] == "Executed"
                    and r.payload["kind"].endswith("Attack") and r.payload["action"]["target"] == 21]
        assert executed == []
        flip = next(t for t, b in load_scenario("toddler-abort").targets[0].script if b.activity == int(Activity.PLAYING))
        assert flip == 40 and [r.tick for r in sim.log if r.kind == "action"
                               and r.payload["kind"] == "AbortEngagement"][0] == flip


def test_05_tamper_defense():
    with criterion(5, "tamper defense"):
        data = encode_key(reference_key())
        # full decode of every position under nine corruption masks
        for i in range(len(data)):
            for mask in (1, 2, 4, 8, 16, 32, 64, 128, 255):
                bad = data[:i] + bytes([data[i] ^ mask]) + data[i + 1:]
                assert not isinstance(decode_key(bad), CodifiedKey), (i, mask)
        # every replacement value at every position breaks the trailer check
        body, stored = data[:-4], struct.unpack(">I", data[-4:])[0]
        for i in range(len(body)):
            for v in range(256):
                if v != body[i]:
                    assert crc32c(body[:i] + bytes([v]) + body[i + 1:]) != stored, (i, v)
        for i in range(4):
            for v in range(256):
                if v != data[-4 + i]:
                    trailer = bytearray(data[-4:])
                    trailer[i] = v
                    assert struct.unpack(">I", trailer)[0] != crc32c(body)
        sim = run_scenario("tamper-induced")
        report = sim.report()
        assert report["lockouts"] >= 1 and report["quarantines"] >= 1
        clean = {tuple(thaw(r.payload)["key"]) for r in sim.log
                 if r.kind == "invocations" and isinstance(decode_key(r.payload["wire"]), CodifiedKey)}
        for d in lethal_dispatches(sim.log):
            assert tuple(d["key"]) in clean


def test_06_codec_conformance():
    with criterion(6, "codec conformance"):
        rng = random.Random("acceptance/codec")
        samples = [random_key(rng) for _ in range(1000)]
        assert sum(bool(k.seg_vicinity_targets or k.seg_vicinity_friendlies) for k in samples) > 200
        failures = [k for k in samples if decode_key(encode_key(k)) != k]
        assert failures == []
        results = run_conformance()
        assert results and all(r.passed for r in results)


def test_07_ceasefire():
    with criterion(7, "ceasefire"):
        sc = load_scenario("ceasefire")
        t = sc.mission_config(sc.platforms[0].id).ceasefire_timetable
        assert t == 30
        sim = run_scenario(sc)
        assert all(d["key"][2] < t for d in lethal_dispatches(sim.log))
        deactivated = {}
        for r in sim.log:
            if r.kind == "state" and r.payload["state"] == "Deactivated":
                deactivated.setdefault(r.actor.id, r.tick)
        assert set(deactivated) == {p.id for p in sc.platforms}
        assert all(tick <= t + 5 for tick in deactivated.values())


def test_08_custody_theorem():
    with criterion(8, "custody theorem"):
        naive = Simulation(load_scenario("swap-two-mobile-custody"), swap_mode="naive")
        naive.run()
        normative = Simulation(load_scenario("swap-two-mobile-custody"), swap_mode="normative")
        normative.run()
        stationary = run_scenario("swap-stationary")
        assert naive.report()["custody_violations"] >= 1
        assert normative.report()["custody_violations"] == 0
        assert stationary.report()["custody_violations"] == 0
        # each run really swapped
        for sim in (naive, normative, stationary):
            assert any(r.kind == "custody" for r in sim.log)


def test_09_determinism_and_replay():
    with criterion(9, "determinism and replay"):
        names = corpus_names()
        assert len(names) >= 10
        for name in names:
            a, b = run_scenario(name), run_scenario(name)
            assert a.log.to_bytes() == b.log.to_bytes(), name
            assert replay(a.log).summary == a.summary(), name


def test_10_surrender_latch():
    with criterion(10, "surrender latch"):
        sc = load_scenario("surrender-latch")
        script = sc.targets[0].script
        complying = int(Activity.COMPLYING)
        start = next(t for t, b in script if b.activity is not None and b.activity & complying)
        end = next((t for t, b in script if t > start and b.activity is not None and not b.activity & complying),
                   sc.max_ticks + 1)
        sim = run_scenario(sc)
        during = [d for d in lethal_dispatches(sim.log) if d["target"] == 21 and start <= d["tick"] < end]
        assert during == []
        assert any(r.kind == "context" and 21 in r.payload["ctx"]["surrender_latch"] for r in sim.log)
