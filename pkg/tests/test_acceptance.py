"""Acceptance criteria, one test per criterion.

Each test records a one-line summary (``record_property("detail", ...)``)
that the terminal summary prints as a PASS/FAIL line. Thresholds are the
stated ones; nothing here is tuned to make a criterion pass.
"""

from __future__ import annotations

import math
import time
from collections import Counter

import numpy as np
import pytest

from interest_retrieval.data import Click
from interest_retrieval.embedding import EmbedderConfig, make_embedder, tokenize
from interest_retrieval.evaluation import EvalConfig, EvalDataset, RandomSystem, evaluate, hit_ratio, ndcg, split_dataset
from interest_retrieval.index import SCORE_DECIMALS, build_index
from interest_retrieval.retrieval import RetrievalConfig, retrieve
from interest_retrieval.simulator import SimConfig, generate
from interest_retrieval.studies import StudySetup, run_study
from interest_retrieval.units import (
    Document,
    UnitConfig,
    UserProfile,
    build_profile,
    contextual_text,
    snapshot,
    update_profile,
)

from helpers import check_stream

# -- 1. oracle equivalence ---------------------------------------------------------


def _sparse_embed(text: str, vocabulary: set[str]) -> dict[str, float]:
    counts = Counter(t for t in tokenize(text) if t in vocabulary)
    norm = math.sqrt(sum(c * c for c in counts.values()))
    return {t: c / norm for t, c in counts.items()} if norm else {}


def _oracle_ranking(profile: UserProfile, docs: list[Document], vocabulary: set[str]) -> list[tuple[str, float]]:
    """Full scan with dictionary vectors: sum of per-unit dot products, clicked docs removed."""
    units = [_sparse_embed(contextual_text(u), vocabulary) for u in profile.units]
    clicked = {m for u in profile.units for m in u.member_doc_ids}
    scored = []
    for d in docs:
        if d.doc_id in clicked:
            continue
        vec = _sparse_embed(d.title, vocabulary)
        scored.append((d.doc_id, sum(w * u.get(t, 0.0) for u in units for t, w in vec.items())))
    scored.sort(key=lambda item: (-round(item[1], SCORE_DECIMALS), item[0]))
    return scored


@pytest.mark.criterion("1 retrieve equals naive full-scan oracle (200 instances, < 60 s)")
def test_criterion_1_oracle_equivalence(record_property):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    mismatches, max_units, sizes = [], 0, []
    for case in range(200):
        vocab = [f"v{i:02d}" for i in range(int(rng.integers(8, 61)))]
        emb = make_embedder(EmbedderConfig.for_vocabulary(vocab))
        size = int(round(math.exp(rng.uniform(0, math.log(5000)))))
        sizes.append(size)
        titles = [" ".join(rng.choice(vocab, size=int(rng.integers(1, 7)))) for _ in range(size)]
        docs = [Document.create(f"x{i:04d}", t) for i, t in enumerate(titles)]
        index = build_index(docs, emb)
        picks = rng.integers(size, size=int(rng.integers(1, 150)))
        clicks = [Document.create(docs[i].doc_id, docs[i].title, t) for t, i in enumerate(picks, 1)]
        profile = build_profile("u", clicks, emb, UnitConfig(tau=float(rng.choice([0.5, 0.65, 0.8]))))
        max_units = max(max_units, len(profile.units))
        got = retrieve(profile, index, RetrievalConfig(per_unit_n=size, max_results=size)).items
        want = _oracle_ranking(profile, docs, set(vocab))
        same_ids = [d for d, _ in got] == [d for d, _ in want]
        close = all(abs(a - b) <= 1e-9 for (_, a), (_, b) in zip(got, want))
        if not (same_ids and close):
            mismatches.append(case)
    elapsed = time.perf_counter() - start
    record_property(
        "detail",
        f"mismatches={len(mismatches)} largest_corpus={max(sizes)} max_units={max_units} time={elapsed:.1f}s",
    )
    assert mismatches == []
    assert max_units <= 20
    assert elapsed < 60


# -- 2. unit-store invariants --------------------------------------------------------

STREAM_VOCAB = ["ant", "bee", "cat", "dog", "eel", "fox", "gnu", "hen", "jay", "kit", "owl", "pig"]


def _random_stream(rng: np.random.Generator, length: int) -> list[Document]:
    pool = int(rng.integers(1, max(2, length // 2) + 1))
    words = STREAM_VOCAB[: int(rng.integers(3, len(STREAM_VOCAB) + 1))]
    titles = [" ".join(rng.choice(words, size=int(rng.integers(1, 5)))) for _ in range(pool)]
    docs, ts = [], 0
    for _ in range(length):
        if docs and rng.random() < 0.05:
            docs.append(docs[-1])  # exact replay of the previous event
            continue
        ts += int(rng.integers(0, 3))  # equal timestamps happen too
        i = int(rng.integers(pool))
        docs.append(Document.create(f"d{i:05d}", titles[i], ts))
    return docs


@pytest.mark.criterion("2 unit-store invariants over >= 1,000 random streams (<= 10,000 events)")
def test_criterion_2_invariant_suite(record_property):
    rng = np.random.default_rng(7)
    lengths = [int(round(math.exp(rng.uniform(0, math.log(300))))) for _ in range(995)] + [10_000, 10_000, 5_000, 3_000, 2_000]
    emb = make_embedder(EmbedderConfig.for_vocabulary(STREAM_VOCAB))
    violations: list[str] = []
    events = merges = duplicates = 0
    for n, length in enumerate(lengths):
        cfg = UnitConfig(
            tau=float(rng.choice([0.3, 0.5, 0.65, 0.8, 0.95])),
            big_threshold=int(rng.integers(1, 8)),
            keep_per_group=int(rng.integers(1, 11)),
        )
        docs = _random_stream(rng, length)
        profile, report = check_stream(f"user{n}", docs, emb, cfg)
        violations += [f"stream {n}: {v}" for v in report.violations]
        events += report.events
        merges += report.merges
        duplicates += report.duplicates
        replay = UserProfile(f"user{n}")
        for d in docs:
            try:
                update_profile(replay, d, emb, cfg)
            except ValueError:
                pass
        if snapshot(replay) != snapshot(profile):
            violations.append(f"stream {n}: replay differs")
    record_property(
        "detail",
        f"streams={len(lengths)} events={events} multi_merges={merges} duplicates={duplicates} violations={len(violations)}",
    )
    assert violations == []
    assert merges > 0 and duplicates > 0


# -- 3. merging at tau = 0.65 ----------------------------------------------------------


@pytest.mark.criterion("3 merging at tau=0.65 on hand-computed fixtures")
def test_criterion_3_tau_fixtures(record_property):
    abcd = make_embedder(EmbedderConfig.for_vocabulary(["ant", "bee", "cat", "dog"]))
    p = UserProfile("u")
    update_profile(p, Document.create("s1", "dog", 1), abcd)
    update_profile(p, Document.create("s2", "bee cat cat dog", 2), abcd)
    before = len(p.units)
    # "bee dog" has cosine 1/sqrt(2) ~ 0.707 and 4/sqrt(34) ~ 0.686 to the two units
    x = abcd.embed("bee dog")
    sims = sorted(float(x @ u.embedding) for u in p.units)
    update_profile(p, Document.create("x", "bee dog", 3), abcd)
    collapsed = len(p.units)

    abc = make_embedder(EmbedderConfig.for_vocabulary(["ant", "bee", "cat"]))
    q = update_profile(UserProfile("u"), Document.create("s", "ant ant ant bee bee", 1), abc)
    # unit text "ant ant ant bee bee | ant bee" embeds to (0.8, 0.6, 0); the doc to (0.8, 0, 0.6)
    y = abc.embed("ant ant ant ant cat cat cat")
    sim = float(y @ q.units[0].embedding)
    update_profile(q, Document.create("y", "ant ant ant ant cat cat cat", 2), abc)
    record_property("detail", f"units 2->{collapsed} at sims {sims[0]:.3f},{sims[1]:.3f}; 1->{len(q.units)} at sim {sim:.2f}")
    assert before == 2
    assert sims == pytest.approx(sorted([4 / math.sqrt(34), 1 / math.sqrt(2)]), abs=1e-12)
    assert collapsed == 1 and p.units[0].size == 3
    assert sim == pytest.approx(0.64, abs=1e-12)
    assert len(q.units) == 2


# -- 4. metrics -------------------------------------------------------------------------


@pytest.mark.criterion("4 metric closed forms and random-ranker HR@5 = 5/496 +- 3 sigma (>= 2,000 evals, < 30 s)")
def test_criterion_4_metrics(record_property):
    start = time.perf_counter()
    closed = (
        ndcg(1, 5) == 1.0
        and ndcg(3, 5) == 0.5
        and ndcg(7, 5) == 0.0
        and hit_ratio(3, 5) == 1
        and hit_ratio(6, 5) == 0
        and hit_ratio(None, 5) == 0
    )
    words = [f"w{i:03d}" for i in range(600)]
    emb = make_embedder(EmbedderConfig.for_vocabulary(words))
    docs = [Document(f"d{i:03d}", w) for i, w in enumerate(words)]
    rng = np.random.default_rng(11)
    by_user = {}
    for u in range(420):
        picks = rng.choice(600, size=20, replace=False)
        by_user[f"u{u:03d}"] = [Click(f"u{u:03d}", docs[i].doc_id, docs[i].title, t) for t, i in enumerate(picks)]
    split = split_dataset(by_user)
    dataset = EvalDataset(build_index(docs, emb), split.train, split.test)
    report = evaluate(RandomSystem(seed=0), dataset, EvalConfig())
    p = 5 / 496
    sigma = math.sqrt(p * (1 - p) / report.evaluations)
    hr = report.metrics["H@5"]
    elapsed = time.perf_counter() - start
    record_property(
        "detail",
        f"HR@5={hr:.5f} expected={p:.5f} sigma={sigma:.5f} evals={report.evaluations} time={elapsed:.1f}s",
    )
    assert closed
    assert report.evaluations >= 2000 and report.shortfall_evaluations == 0
    assert abs(hr - p) <= 3 * sigma
    assert elapsed < 30


# -- 5 and 6. simulator trends ------------------------------------------------------------

TREND_SIM = SimConfig(num_users=500, num_topics=8, interests_per_user=(3, 3), drift=(("B", 0.5),), seed=0)


@pytest.fixture(scope="module")
def trend_setup():
    start = time.perf_counter()
    setup = StudySetup(generate(TREND_SIM), UnitConfig(), EvalConfig())
    return setup, time.perf_counter() - start


@pytest.mark.criterion("5 adaptability: IRA(A+B) beats IRA(A) on period-C H@20 by >= 5% relative (< 5 min)")
def test_criterion_5_adaptability(trend_setup, record_property):
    setup, setup_time = trend_setup
    start = time.perf_counter()
    result = run_study("adaptability", setup=setup)
    elapsed = setup_time + time.perf_counter() - start
    frozen, updated = result.row("ira-A")["H@20"], result.row("ira-A+B")["H@20"]
    gain = updated / frozen - 1
    record_property("detail", f"H@20 A={frozen:.4f} A+B={updated:.4f} gain={gain:+.1%} time={elapsed:.0f}s")
    assert gain >= 0.05
    assert elapsed < 300


@pytest.mark.criterion("6a contextual text: T+K >= max(T-only, K-only) on H@20")
def test_criterion_6a_text_ablation(trend_setup, record_property):
    setup, _ = trend_setup
    result = run_study("text-ablation", setup=setup)
    both = result.row("title+key-terms")["H@20"]
    title = result.row("last-title")["H@20"]
    terms = result.row("key-terms")["H@20"]
    record_property("detail", f"H@20 T+K={both:.4f} T={title:.4f} K={terms:.4f}")
    assert both >= max(title, terms)


@pytest.mark.criterion("6b pruning: grouped >= recency-only and >= size-only on H@20")
def test_criterion_6b_pruning(trend_setup, record_property):
    setup, _ = trend_setup
    result = run_study("pruning", setup=setup)
    grouped, recency, size = (result.row(v)["H@20"] for v in ("grouped", "recency", "size"))
    record_property("detail", f"H@20 grouped={grouped:.4f} recency={recency:.4f} size={size:.4f}")
    assert grouped >= recency
    assert grouped >= size


@pytest.mark.criterion("6c unit cap: cap 10 beats cap 1 on H@20 for users with >= 3 interests")
def test_criterion_6c_unit_cap(trend_setup, record_property):
    setup, _ = trend_setup
    result = run_study("unit-cap", setup=setup, unit_caps=(1, 10), min_interests=3)
    one, ten = result.row("cap-1"), result.row("cap-10")
    record_property("detail", f"H@20 cap1={one['H@20']:.4f} cap10={ten['H@20']:.4f} users={ten['users']}")
    assert ten["users"] > 0
    assert ten["H@20"] > one["H@20"]


# -- 7. ANN quality ----------------------------------------------------------------------


@pytest.mark.criterion("7 IVF recall@10 >= 0.95 over 100 queries on 10,000 docs; exact index equals full scan")
def test_criterion_7_ann_quality(record_property):
    sim = generate(SimConfig(num_users=0, num_topics=8, docs_per_topic=1263, seed=21))
    rng = np.random.default_rng(5)
    shuffled = [sim.corpus[i] for i in rng.permutation(len(sim.corpus))]
    queries, corpus = shuffled[:100], shuffled[100:10_100]
    emb = make_embedder(EmbedderConfig(kind="hashed", dimension=64))
    exact = build_index(corpus, emb)
    approx = build_index(corpus, emb, "approximate")
    recalls, exact_ok = [], True
    for q in queries:
        vec = emb.embed(q.title)
        full = exact.vectors @ vec
        # full scan in plain Python, ties by doc_id
        scan = sorted(zip(exact.doc_ids, full.tolist()), key=lambda t: (-round(t[1], SCORE_DECIMALS), t[0]))
        exact_ok &= [d for d, _ in exact.search(vec, 10)] == [d for d, _ in scan[:10]]
        kth = round(scan[9][1], SCORE_DECIMALS)
        # a returned doc counts when it scores at least the exact 10th score, so ties are not penalized
        hits = sum(round(float(exact.vector(d) @ vec), SCORE_DECIMALS) >= kth for d, _ in approx.search(vec, 10))
        recalls.append(hits / 10)
    recall = float(np.mean(recalls))
    record_property("detail", f"recall@10={recall:.3f} exact_matches_scan={exact_ok} docs={len(corpus)}")
    assert len(corpus) == 10_000
    assert exact_ok
    assert recall >= 0.95


# -- 8. throughput -------------------------------------------------------------------------


@pytest.mark.criterion("8 throughput: >= 1,000 updates/s and >= 100 retrieves/s (100k docs, 20-unit profiles, IVF)")
def test_criterion_8_throughput(record_property):
    rng = np.random.default_rng(3)
    topics, words_per_topic, size = 400, 6, 100_000
    words = [f"w{i:04d}" for i in range(topics * words_per_topic)]
    doc_topic = rng.integers(topics, size=size)
    tokens = doc_topic[:, None] * words_per_topic + rng.integers(words_per_topic, size=(size, 6))
    docs = [Document.create(f"d{i:06d}", " ".join(words[j] for j in row)) for i, row in enumerate(tokens)]
    emb = make_embedder(EmbedderConfig(kind="hashed", dimension=64))
    index = build_index(docs, emb, "approximate")
    members = {t: np.flatnonzero(doc_topic == t) for t in range(topics)}
    cfg = UnitConfig()

    def click(profile: UserProfile, topic: int, ts: int) -> None:
        d = docs[int(rng.choice(members[topic]))]
        update_profile(profile, Document(d.doc_id, d.title, ts, d.key_terms), emb, cfg)

    profiles = []
    for u in range(20):
        profile, ts, order, k = UserProfile(f"u{u}"), 0, rng.permutation(topics), 0
        while sum(x.size >= cfg.big_threshold for x in profile.units) < cfg.keep_per_group:
            for _ in range(10):
                ts += 1
                click(profile, int(order[k]), ts)
            k += 1
        while len(profile.units) < 2 * cfg.keep_per_group:
            ts += 1
            click(profile, int(order[k]), ts)
            k += 1
        profiles.append((profile, order[:k], ts))
    unit_counts = {len(p.units) for p, _, _ in profiles}

    start = time.perf_counter()
    for i in range(300):
        retrieve(profiles[i % 20][0], index)
    retrieves = 300 / (time.perf_counter() - start)

    plan = [(i % 20, rng.random() < 0.7, int(rng.integers(topics))) for i in range(5000)]
    clocks = [ts for _, _, ts in profiles]
    start = time.perf_counter()
    for u, own, other in plan:
        profile, mine, _ = profiles[u]
        clocks[u] += 1
        click(profile, int(mine[other % len(mine)]) if own else other, clocks[u])
    updates = len(plan) / (time.perf_counter() - start)
    record_property("detail", f"updates/s={updates:.0f} retrieves/s={retrieves:.0f} profile_units={sorted(unit_counts)}")
    assert unit_counts == {20}
    assert updates >= 1000
    assert retrieves >= 100
