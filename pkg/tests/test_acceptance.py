"""Acceptance criteria, one test per criterion.

The conftest hook prints a ``[PASS]/[FAIL] criterion n`` line for each at
the end of the run.
"""

import math
import time

import numpy as np
import pytest

from recmem.engine import EngineConfig, RecMemEngine
from recmem.fixtures import CAKE_JEANS_CAKE, GOLDEN_THETA_SIM, StreamSpec, random_stream, synthetic_stream
from recmem.index import SCORE_DECIMALS, VectorIndex
from recmem.qa import RetrievalBudget
from recmem.subconscious import ConsolidationConfig, InteractionUnit

STREAM_200 = StreamSpec(200, [30, 20, 15, 12, 10, 8, 6, 5, 4, 3], seed=0)


def _engine(theta_sim, theta_count, mode="recurrence", cid="c"):
    cfg = EngineConfig(consolidation=ConsolidationConfig(theta_sim, theta_count, neighbor_k=max(10, theta_count)),
                       mode=mode)
    return RecMemEngine(cfg, cid)


def _run(units, theta_sim, theta_count, mode="recurrence"):
    eng = _engine(theta_sim, theta_count, mode)
    eng.ingest_many(units)
    return eng


@pytest.mark.criterion(1, "golden cake/jeans/cake trace")
def test_golden_trace():
    t0 = time.perf_counter()
    eng = _engine(GOLDEN_THETA_SIM, 2, cid="gold")
    outs = [eng.ingest(u) for u in CAKE_JEANS_CAKE]
    elapsed = time.perf_counter() - t0
    s = eng.summary
    assert [o.triggered for o in outs] == [False, False, True]
    assert s.trigger_turns == ["t3"]
    assert (s.consolidations, s.episodes, s.merges) == (1, 1, 0)
    assert s.facts >= 1
    [ep] = eng.episodic.episodes()
    assert ep.source_turn_ids == ["t1", "t3"]
    assert elapsed < 1.0


@pytest.mark.criterion(2, "trigger count and construction tokens non-increasing in both thresholds")
def test_threshold_monotonicity():
    t0 = time.perf_counter()
    units = synthetic_stream(STREAM_200)
    by_count = [_run(units, 0.5, c).summary for c in range(2, 9)]
    by_sim = [_run(units, t, 5).summary for t in (0.5, 0.6, 0.7, 0.8, 0.9)]
    elapsed = time.perf_counter() - t0
    for sweep in (by_count, by_sim):
        triggers = [s.consolidations for s in sweep]
        tokens = [s.construction_usage.total for s in sweep]
        assert all(a >= b for a, b in zip(triggers, triggers[1:])), triggers
        assert all(a >= b for a, b in zip(tokens, tokens[1:])), tokens
    # the sweep is not vacuous
    assert by_count[0].consolidations > by_count[-1].consolidations
    assert by_sim[0].construction_usage.total > by_sim[-1].construction_usage.total
    assert elapsed < 10.0


@pytest.mark.criterion(3, "recurrence never costs more LLM calls than eager; sparse stream at most half the tokens")
def test_eager_vs_recurrence():
    t0 = time.perf_counter()
    settings = [(0.5, 2), (0.5, 5), (0.6, 3), (0.7, 4), (0.4, 2)]
    checked = 0
    for seed in range(60):
        units = random_stream(seed, n_turns=30, fact_rate=0.3)
        theta_sim, theta_count = settings[seed % len(settings)]
        rec = _run(units, theta_sim, theta_count)
        eager = _run(units, theta_sim, theta_count, mode="eager")
        assert rec.ledger.construction_calls("c") <= eager.ledger.construction_calls("c"), seed
        checked += 1
    assert checked >= 50

    # 30 of 100 turns belong to recurring topics
    sparse = synthetic_stream(StreamSpec(100, [10, 10, 10], seed=21))
    rec = _run(sparse, 0.5, 5)
    eager = _run(sparse, 0.5, 5, mode="eager")
    assert rec.summary.consolidations >= 1
    assert rec.summary.construction_usage.total <= 0.5 * eager.summary.construction_usage.total
    assert time.perf_counter() - t0 < 30.0


def _brute_top_k(entries, q, k):
    scored = []
    for seq, (id, v) in enumerate(entries):
        s = math.fsum(a * b for a, b in zip(v.tolist(), q.tolist()))
        scored.append((-round(s, SCORE_DECIMALS), seq, id))
    scored.sort()
    return [id for _, _, id in scored[:k]]


@pytest.mark.criterion(4, "vector index equals brute-force cosine ranking")
def test_index_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    dim = 64
    for inst in range(100):
        n = int(rng.integers(1, 1001))
        vecs = rng.standard_normal((n, dim))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        # exact duplicates force ties that only the seq order can break
        dup = rng.integers(0, n, size=n // 10)
        vecs[dup] = vecs[0]
        idx = VectorIndex(dim)
        entries = []
        for i in range(n):
            idx.insert(f"v{i}", vecs[i])
            entries.append((f"v{i}", vecs[i]))
        if inst % 3 == 0 and n > 1:
            gone = {f"v{i}" for i in rng.choice(n, size=n // 4, replace=False)}
            for g in gone:
                idx.remove(g)
            entries = [e for e in entries if e[0] not in gone]
        q = vecs[0] if inst % 2 else rng.standard_normal(dim)
        q = q / np.linalg.norm(q)
        k = int(rng.integers(1, 50))
        assert [h.id for h in idx.top_k(q, k)] == _brute_top_k(entries, q, k), inst
    assert time.perf_counter() - t0 < 10.0


PREFERENCE_SHIFT = [
    InteractionUnit("p1", "I really love coffee in the morning. FACT{The user prefers coffee}",
                    "Coffee in the morning is a great ritual.", "2024-02-01T08:00:00Z"),
    InteractionUnit("p2", "Any tips for brewing coffee in the morning?",
                    "Grind coffee fresh every morning.", "2024-02-01T08:10:00Z"),
    InteractionUnit("p3", "Lately green tea suits me: sencha, matcha, a kettle and loose leaves in a small teapot.",
                    "Green tea is gentle; steep sencha or matcha leaves briefly in the teapot below boiling.",
                    "2024-03-01T08:00:00Z"),
    InteractionUnit("p4", "Which green tea leaves should I steep in my teapot, sencha or matcha? "
                          "SUPERSEDES{The user prefers coffee} FACT{The user prefers green tea}",
                    "Steep sencha leaves in the teapot; whisk matcha; keep the kettle below boiling for green tea.",
                    "2024-03-01T08:10:00Z"),
]


def _corpus():
    for seed in range(30):
        for theta_sim, theta_count in ((0.5, 2), (0.6, 3)):
            yield random_stream(seed, n_turns=40, fact_rate=0.5), theta_sim, theta_count, "recurrence"
    for seed in range(5):
        yield random_stream(100 + seed, n_turns=30, fact_rate=0.5), 0.5, 3, "eager"
        yield random_stream(200 + seed, n_turns=30, fact_rate=0.5), 0.5, 2, "direct-extraction"
    yield PREFERENCE_SHIFT, 0.5, 2, "recurrence"


def _violations(eng, units):
    v = []
    # (a) byte-identical retrieval by id
    for u in units:
        got = eng.subconscious.get(u.turn_id).unit
        if (got.user_message.encode(), got.assistant_message.encode(), got.timestamp.encode()) != (
                u.user_message.encode(), u.assistant_message.encode(), u.timestamp.encode()):
            v.append(f"turn {u.turn_id} not byte-identical")
    # (b) provenance partitions the consolidated turns
    consolidated = {s.turn_id for s in eng.subconscious.units() if s.consolidated}
    sources = [t for e in eng.episodic.episodes() for t in e.source_turn_ids]
    if len(sources) != len(set(sources)):
        v.append("a turn is claimed by two episodes")
    if set(sources) != consolidated:
        v.append("episode sources differ from consolidated turns")
    for s in eng.subconscious.units():
        if s.consolidated and (len(s.episode_refs) != 1
                               or s.turn_id not in eng.episodic.get(s.episode_refs[0]).source_turn_ids):
            v.append(f"turn {s.turn_id} back-reference broken")
    # (c) no live duplicates
    live = [f.text for f in eng.semantic.facts(live_only=True)]
    if len(live) != len(set(live)):
        v.append("duplicate live facts")
    # (d) superseded facts never retrieved, even when asked about verbatim
    stale = [f for f in eng.semantic.facts() if not f.live]
    queries = [f.text for f in stale] + [u.user_message for u in units[:5]]
    for q in queries:
        ctx = eng.retrieve(q, RetrievalBudget(10, 50))
        if any(not f.live for f, _ in ctx.sem_hits):
            v.append(f"superseded fact retrieved for {q!r}")
    return v, len(stale)


@pytest.mark.criterion(5, "faithfulness and provenance over the property corpus")
def test_faithfulness_and_provenance():
    violations, superseded, facts = [], 0, 0
    for units, theta_sim, theta_count, mode in _corpus():
        eng = _run(units, theta_sim, theta_count, mode)
        v, n_stale = _violations(eng, units)
        violations += v
        superseded += n_stale
        facts += len(eng.semantic)
    assert violations == []
    # the corpus exercises supersession, so (d) is not vacuous
    assert superseded > 0 and facts > superseded

    eng = _run(PREFERENCE_SHIFT, 0.5, 2)
    coffee = next(f for f in eng.semantic.facts() if f.text == "The user prefers coffee")
    assert coffee.superseded_by is not None
    assert eng.semantic.get(coffee.superseded_by).text == "The user prefers green tea"
    ctx = eng.retrieve("Does the user prefer coffee?")
    assert [f.text for f, _ in ctx.sem_hits] == ["The user prefers green tea"]


@pytest.mark.criterion(6, "retrieval budget defaults and k_sem = 2 k_epi coupling")
def test_budget_coupling():
    b = RetrievalBudget()
    assert (b.k_sub, b.k_epi, b.k_sem) == (10, 5, 10)
    assert EngineConfig().retrieval == b
    # eager mode gives one episode per turn, so every cap is binding
    units = [
        InteractionUnit(u.turn_id, f"{u.user_message} FACT{{note number {i}}}", u.assistant_message, u.timestamp)
        for i, u in enumerate(synthetic_stream(StreamSpec(40, [20, 10], seed=3)))
    ]
    eng = _run(units, 0.5, 2, mode="eager")
    assert len(eng.episodic) > 8 and len(eng.semantic.facts(live_only=True)) > 16
    for k_epi in range(1, 9):
        b = RetrievalBudget(k_epi=k_epi)
        assert b.k_sem == 2 * k_epi and not b.overridden
        for k_sub in (0, 1, 10, 500):
            b = RetrievalBudget(k_sub=k_sub, k_epi=k_epi)
            ctx = eng.retrieve("Tell me what we discussed", b)
            assert len(ctx.sub_hits) <= k_sub and len(ctx.epi_hits) <= k_epi and len(ctx.sem_hits) <= b.k_sem
            assert len(ctx.epi_hits) == min(k_epi, len(eng.episodic))


def _snapshot_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.mark.criterion(7, "byte-identical snapshots and exact restore")
def test_determinism_and_persistence(tmp_path):
    units = synthetic_stream(StreamSpec(200, [30, 20, 15, 12], seed=8, fact_rate=0.5))
    questions = ["What did we discuss first?", units[17].user_message, units[150].assistant_message]
    runs = []
    for name in ("a", "b"):
        eng = _run(units, 0.5, 3)
        for i, q in enumerate(questions):
            eng.answer(q, f"q{i}")
        eng.snapshot(tmp_path / name)
        runs.append(eng)
    assert _snapshot_bytes(tmp_path / "a") == _snapshot_bytes(tmp_path / "b")

    restored = RecMemEngine.restore(tmp_path / "a")
    for q in questions:
        for b in (RetrievalBudget(), RetrievalBudget(3, 2), RetrievalBudget(50, 20)):
            before, after = runs[0].retrieve(q, b), restored.retrieve(q, b)
            assert after.summary() == before.summary()
            assert np.array_equal(after.query_vector, before.query_vector)
            assert [s.unit for s, _ in after.sub_hits] == [s.unit for s, _ in before.sub_hits]
            assert [e.text() for e, _ in after.epi_hits] == [e.text() for e, _ in before.epi_hits]
            assert [f.text for f, _ in after.sem_hits] == [f.text for f, _ in before.sem_hits]


def _accounting_holds(eng):
    s, cid = eng.summary, eng.conversation_id
    return (
        eng.ledger.construction_calls(cid) == s.merges + s.consolidations + s.refinements
        and eng.ledger.calls(cid, "merge") == s.merges
        and eng.ledger.calls(cid, "consolidate") == s.consolidations
        and eng.ledger.calls(cid, "refine") == s.refinements
        and s.refinements == s.episodes
    )


@pytest.mark.criterion(8, "construction calls equal merges + consolidations + refinements")
def test_ledger_accounting():
    eng = _engine(GOLDEN_THETA_SIM, 2, cid="gold")
    eng.ingest_many(CAKE_JEANS_CAKE)
    assert _accounting_holds(eng)
    assert eng.ledger.construction_calls("gold") == 2

    for seed in range(20):
        eng = _run(random_stream(seed, n_turns=50, fact_rate=0.3), 0.5, 2 + seed % 4)
        assert _accounting_holds(eng), seed
