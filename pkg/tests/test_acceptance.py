"""End-to-end acceptance checks; each records one pass/fail line for the run summary."""

import time

import numpy as np
import pytest
from scipy import stats

from conftest import record_acceptance
from privforest import analysis, datagen, dpmech, hecore, pipeline, pisum
from privforest.audit import audit_records, shape_summaries
from privforest.config import (CuckooSection, DataSection, DpSection, ForestSection, RunConfig,
                               RunSection)
from privforest.forest import central_oracle_train, classify_leaves, oracle_tree_labels
from privforest.pisum import IdCodec
from privforest.protocol import AGG_NAME, decrypt_red_labels


def desk_cfg(seed, anomaly_rate=0.05, **extra) -> RunConfig:
    return RunConfig(run=RunSection(seed=seed),
                     data=DataSection(banks=3, accounts_per_bank=200, transactions=500,
                                      test_transactions=200, anomaly_rate=anomaly_rate),
                     forest=ForestSection(tau=6, height=4), **extra)


@pytest.mark.slow
def test_oracle_equivalence_over_fifty_seeds():
    start = time.perf_counter()
    label_miss = tree_miss = leaves = trees_checked = 0
    for seed in range(50):
        # alternate rates so both label values occur at red leaves
        cfg = desk_cfg(seed, 0.05 if seed % 2 == 0 else 0.4)
        data = pipeline.generate(cfg)
        run = pipeline.train_run(cfg, data.accounts, data.train)
        oracle = central_oracle_train(run.forest, run.subsets, data.accounts)
        red = [leaf.leaf_id for leaf in classify_leaves(run.forest)[1]]
        for j in range(len(run.fed.banks)):
            got = decrypt_red_labels(run.fed, j)
            label_miss += sum(got[lid] != oracle[lid] for lid in red)
            leaves += len(red)
        flags = datagen.account_flags(data.accounts)
        rows = pipeline.predict(run.fed, data.test)
        for tx, row in zip(datagen.derive_features(data.test), rows):
            want = oracle_tree_labels(run.forest, oracle, tx, flags)
            tree_miss += sum(a != b for a, b in zip(row["tree_labels"], want))
            trees_checked += len(want)
    elapsed = time.perf_counter() - start
    ok = label_miss == 0 and tree_miss == 0 and elapsed < 300
    record_acceptance(1, ok, f"50 seeds, {label_miss}/{leaves} red-label and "
                             f"{tree_miss}/{trees_checked} per-tree mismatches, {elapsed:.0f}s")
    assert label_miss == 0 and tree_miss == 0
    assert elapsed < 300


def test_red_leaf_lemma():
    start = time.perf_counter()
    value = analysis.expected_red_leaves(10, 2, 6, 12)
    exact = 12 * 2**6 * (1 - (10 / 12) ** 6)
    per_tree = analysis.expected_red_leaves(10, 2, 6)
    mc = analysis.monte_carlo_red_leaves(2024, 10, 2, 6, 10_000)
    elapsed = time.perf_counter() - start
    rel = abs(mc.mean - per_tree) / per_tree
    ok = abs(value - exact) < 1e-9 and round(value) == 511 and rel < 0.02 and elapsed < 30
    record_acceptance(2, ok, f"E[R]={value:.4f} (~{round(value)}), Monte Carlo {mc.mean:.3f} "
                             f"vs {per_tree:.3f} per tree ({rel:.2%}), {elapsed:.1f}s")
    assert value == pytest.approx(exact, rel=1e-12)
    assert round(value) == 511
    assert rel < 0.02
    assert elapsed < 30


def test_pet_exhaustive():
    keys = hecore.keygen(rng=np.random.default_rng(8))
    start = time.perf_counter()
    errors = pairs = 0
    for sigma in range(1, 9):
        values = np.arange(1 << sigma)
        bits = hecore.encrypt_bits(keys.public_key, values, sigma)
        for b in values:
            out = hecore.decrypt(keys.secret_key, hecore.pet(bits, int(b)))
            got = out[: values.size * sigma: sigma]
            errors += int(np.sum(got != (values == b)))
            pairs += values.size
    elapsed = time.perf_counter() - start
    ok = errors == 0 and elapsed < 60
    record_acceptance(3, ok, f"{pairs} pairs over widths 1..8, {errors} errors, {elapsed:.1f}s")
    assert errors == 0
    assert elapsed < 60


def test_pi_sum_thousand_instances():
    keys = hecore.keygen(rng=np.random.default_rng(9))
    rng = np.random.default_rng(10)
    codec = IdCodec(16, ("B1-", "B2-", "B3-"))
    start = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        universe = [f"B{b}-{s:06d}" for b in (1, 2, 3) for s in range(int(rng.integers(5, 300)))]
        n_pns = int(rng.integers(0, min(len(universe), 200) + 1))
        tables, entries_by_label = [], []
        bins = pisum.default_num_bins(max(n_pns, 1))
        for _ in (0, 1):
            chosen = rng.choice(universe, size=n_pns, replace=False)
            entries = {str(a): int(rng.integers(1, 10)) for a in chosen}
            table = pisum.build_account_table(entries, codec, bins, rng=rng)
            tables.append(pisum.pad_and_encrypt(table, keys.public_key, codec, rng))
            entries_by_label.append(entries)
        bank = {str(a) for a in rng.choice(universe, size=int(rng.integers(0, len(universe) + 1)),
                                           replace=False)}
        sums = pisum.bank_intersection_sum(tuple(tables), bank, codec, keys.public_key)
        for ct, entries in zip(sums, entries_by_label):
            got = hecore.decrypt(keys.secret_key, ct)[0]
            mismatches += int(got != pisum.plaintext_intersection_sum(entries, bank))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 120
    record_acceptance(4, ok, f"1000 instances (2000 sums), {mismatches} mismatches, {elapsed:.1f}s")
    assert mismatches == 0
    assert elapsed < 120


def test_dp_mechanism():
    start = time.perf_counter()
    details, ok = [], True
    for epsilon, bound in ((0.5, 2), (1.0, 5)):
        scale = bound / epsilon
        x = dpmech.laplace_sample(np.random.default_rng([31, bound]), scale, 100_000)
        var_err = abs(x.var() - 2 * scale**2) / (2 * scale**2)
        ks = stats.kstest(x, lambda v: dpmech.laplace_cdf(v, scale)).statistic
        ok &= var_err < 0.05 and ks < 0.01
        details.append(f"scale {scale:g}: var err {var_err:.2%}, KS {ks:.4f}")

    worst = 0
    for seed in range(10):
        for bound in (1, 2, 5):
            cfg = desk_cfg(seed, dp=DpSection(enabled=True, bound=bound))
            data = pipeline.generate(cfg)
            subsets = pipeline.training_subsets(data.train, 6, cfg.dp_config(), seed)
            m = dpmech.max_multiplicity([tx for s in subsets for tx in s])
            ok &= m <= bound
            worst = max(worst, m - bound)
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30
    details.append(f"capping excess over bound {max(worst, 0)} on 30 datasets, {elapsed:.1f}s")
    record_acceptance(5, ok, "; ".join(details))
    assert ok


def test_view_shapes():
    def run(data_seed):
        # same forest and public table size; everything private differs
        cfg = RunConfig(run=RunSection(seed=data_seed),
                        data=DataSection(banks=3, accounts_per_bank=200, transactions=500,
                                         test_transactions=20, anomaly_rate=0.1),
                        forest=ForestSection(tau=6, height=4, seed=77),
                        cuckoo=CuckooSection(num_bins=1024))
        data = pipeline.generate(cfg)
        start = len(hecore.audit)
        trained = pipeline.train_run(cfg, data.accounts, data.train)
        pipeline.predict(trained.fed, data.test)
        return trained, hecore.audit.events()[start:]

    (a, events_a), (b, events_b) = run(101), run(202)
    rec_a, rec_b = a.fed.net.records(), b.fed.net.records()
    same = shape_summaries(rec_a) == shape_summaries(rec_b)
    n_banks = len(a.fed.banks)
    got = [sum(r["items"] for r in t.fed.net.transcript(AGG_NAME)
               if r["direction"] == "recv" and r["kind"] == "noisy_counts") for t in (a, b)]
    want = n_banks * 2 * a.n_red
    decryptors = {e.party for e in events_a + events_b}
    local = {r["party"] for r in rec_a + rec_b if r.get("event") == "decrypt"}
    report = audit_records(rec_a, rec_b)
    ok = (same and got == [want, want] and decryptors == {"pns"} and local == {"pns"}
          and report.passed)
    record_acceptance(6, ok, f"shape summaries identical={same}; aggregator received {got} "
                             f"(expected {want}); decrypting parties {sorted(decryptors)}")
    assert same
    assert got == [want, want]
    assert decryptors == {"pns"} and local == {"pns"}
    assert report.passed, report.text()


def test_depth_and_cost_trends():
    keys = hecore.keygen(rng=np.random.default_rng(12))
    bits = hecore.encrypt_bits(keys.public_key, [4242], 16)
    count = hecore.encrypt(keys.public_key, [3])
    out = hecore.he_mul(hecore.pet(bits, 4242), count)
    depth_ok = (out.depth, out.bootstrap_count) == (6, 0)

    cfg = desk_cfg(5)
    forest = pipeline.make_forest(cfg)
    accounts = datagen.gen_accounts(5, 3, 200)

    def pet_count(acc, txs):
        return pipeline.train_run(cfg, acc, txs, forest=forest).phases["train"]["pet"]

    by_pns = [pet_count(accounts, datagen.gen_transactions(5, 500, [t[:k] for t in accounts], 0.1))
              for k in (50, 100, 200)]
    fixed = datagen.gen_transactions(5, 500, [t[:50] for t in accounts], 0.1)
    by_bank = [pet_count([t[:m] for t in accounts], fixed) for m in (50, 100, 200)]
    mono = all(x <= y for x, y in zip(by_pns, by_pns[1:])) and \
        all(x <= y for x, y in zip(by_bank, by_bank[1:]))
    record_acceptance(7, depth_ok and mono,
                      f"PET+multiply depth {out.depth}, bootstraps {out.bootstrap_count}; "
                      f"pet_count by PNS accounts {by_pns}, by bank accounts {by_bank}")
    assert depth_ok
    assert mono


@pytest.mark.slow
def test_utility_planted_rule():
    def cfg(dp_on):
        return RunConfig(run=RunSection(seed=3),
                         data=DataSection(banks=3, accounts_per_bank=1000, transactions=8000,
                                          test_transactions=2000, anomaly_rate=0.05),
                         forest=ForestSection(tau=12, height=4),
                         dp=DpSection(enabled=dp_on, epsilon=1.0, bound=5, oversample_ratio=4))

    base = cfg(False)
    data = pipeline.generate(base)
    flags = datagen.account_flags(data.accounts)
    rule = pipeline.planted_rule(base)
    truth = [tx.label for tx in data.test]
    in_rule = [tx.label == 1 and rule.matches(tx, flags) for tx in data.test]

    results = {}
    for dp_on in (False, True):
        c = cfg(dp_on)
        run = pipeline.train_run(c, data.accounts, data.train)
        rows = pipeline.predict(run.fed, data.test)
        m = analysis.evaluate([r["label"] for r in rows], truth, [r["score"] for r in rows])
        hits = sum(r["label"] for r, inside in zip(rows, in_rule) if inside)
        m["rule_recall"] = hits / max(sum(in_rule), 1)
        results[dp_on] = m
    off, on = results[False], results[True]
    delta = off["average_precision"] - on["average_precision"]
    ok = off["rule_recall"] >= 0.8
    record_acceptance(8, ok, f"DP off: rule recall {off['rule_recall']:.3f}, AP "
                             f"{off['average_precision']:.3f}; DP on (eps=1, bound=5): rule recall "
                             f"{on['rule_recall']:.3f}, AP {on['average_precision']:.3f}, "
                             f"AP delta {delta:+.3f}")
    assert off["rule_recall"] >= 0.8
