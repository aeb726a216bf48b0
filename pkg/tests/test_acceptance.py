"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line; conftest prints them at the end of the
session. Criteria 6-8 and 11 train real models and take several minutes.
"""

import itertools
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from hsngae.autodiff import LOG_EPS
from hsngae.classifiers import dt_train, gini, knn_fit, knn_predict
from hsngae.cli import EXIT_OK, main
from hsngae.experiments import baseline_run, transfer_run
from hsngae.gradcheck import run_suite
from hsngae.layers import GaeModel, read_checkpoint
from hsngae.losses import (
    LossWeights,
    associative_loss,
    cross_entropy,
    pooling_loss,
    reconstruction_loss,
    transition_probabilities,
    visit_loss,
    walker_loss,
)
from hsngae.metrics import confusion_matrix, f1_score, mean_ci95, relative_score
from hsngae.sitegraph import AdjacencyDesign, Sensor, SiteLayout, build_adjacency, build_dataset, normalize_adjacency
from hsngae.synthhome import SynthConfig, generate_homes
from hsngae.training import LabeledGraphSet, TrainConfig, train_gae

RESULTS: dict[int, str] = {}
N_SEEDS = 10


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, RESULTS[n]


# -- shared training runs ----------------------------------------------------


@pytest.fixture(scope="module")
def synth_pair():
    homes = generate_homes(SynthConfig())
    return tuple(LabeledGraphSet.from_samples(build_dataset(h.log, h.layout)) for h in homes)


@pytest.fixture(scope="module")
def transfer_runs(synth_pair):
    """Per seed: target-trained MLP baseline F1, GAE+MLP F1 with all and with 20 target windows."""
    source, target = synth_pair
    out = {"baseline": [], "all": [], "k20": []}
    for seed in range(N_SEEDS):
        cfg = TrainConfig(seed=seed)
        out["baseline"].append(baseline_run("mlp", target, cfg).f1)
        out["all"].append(transfer_run("mlp", source, target, cfg).f1)
        out["k20"].append(transfer_run("mlp", source, target, cfg, target_points=20).f1)
    return out


# -- 1 -----------------------------------------------------------------------


def test_c01_gradient_suite():
    t0 = time.perf_counter()
    results = run_suite()
    elapsed = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    worst = max(r.report.worst.error for r in results)
    record(1, not failed and elapsed <= 60,
           f"{len(results)} checks, worst rel err {worst:.1e} (tol 1e-4), {elapsed:.1f}s (limit 60s)"
           + (f", failed: {failed}" if failed else ""))


# -- 2 -----------------------------------------------------------------------


def test_c02_shape_independence():
    rng = np.random.default_rng(2)
    model = GaeModel(seed=0)
    shapes = {}
    for n in (1, 2, 5, 37, 40, 53, 64, 70):
        a = np.triu((rng.random((n, n)) < 0.3).astype(float), 1)
        x = rng.integers(0, 6, size=(n, 6)).astype(float)
        shapes[n] = model.encoder(normalize_adjacency(a + a.T), x).z.shape
    ok = all(s == (64, 16) for s in shapes.values())
    record(2, ok, f"Z shapes for N in {list(shapes)}: {set(shapes.values())}")


# -- 3 -----------------------------------------------------------------------


def test_c03_permutation_invariance():
    rng = np.random.default_rng(3)
    model = GaeModel(seed=0)
    worst = 0.0
    for _ in range(20):
        a = np.triu((rng.random((10, 10)) < 0.4).astype(float), 1)
        a = normalize_adjacency(a + a.T)
        x = rng.integers(0, 6, size=(10, 6)).astype(float)
        ref = model.encoder(a, x)
        p = rng.permutation(10)
        out = model.encoder(a[np.ix_(p, p)], x[p])
        worst = max(worst, np.abs(out.z.value - ref.z.value).max(), np.abs(out.a_enc.value - ref.a_enc.value).max())
    record(3, worst <= 1e-9, f"max |diff| over 20 permutations {worst:.1e} (tol 1e-9)")


# -- 4 -----------------------------------------------------------------------


def random_layout(rng, n):
    rooms = [f"r{i}" for i in range(int(rng.integers(1, min(n, 6) + 1)))]
    locs = rooms + [rooms[int(rng.integers(len(rooms)))] for _ in range(n - len(rooms))]
    sensors = tuple(Sensor(f"S{i}", int(rng.integers(6)), loc) for i, loc in enumerate(locs))
    pairs = frozenset(frozenset(p) for p in itertools.combinations(rooms, 2) if rng.random() < 0.4)
    return SiteLayout("rand", sensors, pairs)


def test_c04_adjacency_designs():
    rng = np.random.default_rng(4)
    identity_exact, fcw_ok, radius = True, True, 0.0
    for _ in range(200):
        layout = random_layout(rng, int(rng.integers(1, 21)))
        n = layout.n
        identity_exact &= np.array_equal(normalize_adjacency(build_adjacency(layout, "identity")), np.eye(n))
        d = build_adjacency(layout, "default")
        w = build_adjacency(layout, "fc-w")
        off = ~np.eye(n, dtype=bool)
        fcw_ok &= np.array_equal(w[d > 0], d[d > 0]) and bool(np.all(w[(d == 0) & off] == 0.1))
        for design in AdjacencyDesign:
            an = normalize_adjacency(build_adjacency(layout, design))
            radius = max(radius, float(np.abs(np.linalg.eigvalsh(an)).max()))
    ok = identity_exact and fcw_ok and radius <= 1 + 1e-9
    record(4, ok, f"identity exact={identity_exact}, FC-W relation={fcw_ok}, "
                  f"max spectral radius {radius:.12f} (limit 1+1e-9) over 200 layouts, N<=20")


# -- 5 -----------------------------------------------------------------------


def test_c05_loss_identities():
    s = np.eye(3)[[0, 1, 1, 2]]
    pool = pooling_loss(s @ s.T, s).value.item()
    pst, pts = transition_probabilities(np.ones((1, 2)), np.ones((1, 2)))
    walker = walker_loss(pst, pts, [3]).value.item()
    pst2, _ = transition_probabilities(np.ones((1, 2)), np.ones((2, 2)))
    visit = visit_loss(pst2).value.item()

    # log(p + eps) with p <= 1 bottoms out at -log(1 + eps); that is the float floor of "zero"
    floor = math.log1p(LOG_EPS) + 1e-15
    w = LossWeights()
    rng = np.random.default_rng(5)
    lowest = math.inf
    for _ in range(1000):
        n, k = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        e = np.exp(rng.normal(scale=3, size=(n, k)))
        sm = e / e.sum(axis=1, keepdims=True)
        a = rng.random((n, n))
        ns, nt, d = (int(v) for v in rng.integers(1, 7, size=3))
        zs, zt = rng.normal(scale=2, size=(ns, d)), rng.normal(scale=2, size=(nt, d))
        y = rng.integers(0, 3, size=ns)
        p1, p2 = transition_probabilities(zs, zt)
        probs = rng.dirichlet(np.ones(13), size=3)
        for value, bound in (
            (reconstruction_loss(rng.normal(size=(n, 6)), rng.normal(size=(n, 6))).value.item(), 0.0),
            (pooling_loss(a + a.T, sm).value.item(), 0.0),
            (walker_loss(p1, p2, y).value.item(), floor),
            (visit_loss(p1).value.item(), floor),
            (associative_loss(zs, zt, y).value.item(), (w.beta_walker + w.beta_visit) * floor),
            (cross_entropy(probs, rng.integers(0, 13, size=3)).value.item(), floor),
        ):
            lowest = min(lowest, value + bound)
    ok = pool == 0.0 and abs(walker) <= 1e-9 and abs(visit - math.log(2)) <= 1e-9 and lowest >= 0.0
    record(5, ok, f"L_pool={pool}, walker={walker:.1e}, visit-ln2={visit - math.log(2):.1e}, "
                  f"1000 trials non-negative={lowest >= 0.0} (eps floor {LOG_EPS:g})")


# -- 6 -----------------------------------------------------------------------


def test_c06_training_reduces_loss(synth_pair):
    source, target = synth_pair
    cfg = TrainConfig(seed=0)
    t0 = time.perf_counter()
    result = train_gae(GaeModel(seed=0), source, target.unlabeled(), cfg)
    elapsed = time.perf_counter() - t0
    ratio = result.final_train_loss / result.initial_train_loss
    ok = ratio <= 0.5 and elapsed <= 600
    record(6, ok, f"L_ae {result.initial_train_loss:.3f} -> {result.final_train_loss:.3f} "
                  f"(ratio {ratio:.3f}, need <= 0.5) in {len(result.history)} epochs, {elapsed:.0f}s (limit 600s)")


# -- 7 -----------------------------------------------------------------------


def test_c07_transfer_efficacy(transfer_runs):
    f1 = float(np.mean(transfer_runs["all"]))
    base = float(np.mean(transfer_runs["baseline"]))
    rel = relative_score(f1, base)
    per_seed = float(np.mean([relative_score(t, b) for t, b in zip(transfer_runs["all"], transfer_runs["baseline"])]))
    ok = f1 >= 0.5 and rel >= 60.0
    record(7, ok, f"GAE+MLP target macro-F1 {f1:.3f} (need >= 0.50), baseline {base:.3f}, "
                  f"relative {rel:.1f}% (need >= 60%; per-seed mean {per_seed:.1f}%) over {N_SEEDS} seeds")


# -- 8 -----------------------------------------------------------------------


def test_c08_adaptation_speed(transfer_runs):
    base = float(np.mean(transfer_runs["baseline"]))
    rel_all = relative_score(float(np.mean(transfer_runs["all"])), base)
    rel_20 = relative_score(float(np.mean(transfer_runs["k20"])), base)
    ok = rel_all >= rel_20 and rel_20 >= 50.0
    record(8, ok, f"relative score all windows {rel_all:.1f}% >= 20 windows {rel_20:.1f}% (need >= 50%)")


# -- 9 -----------------------------------------------------------------------


F1_CASES = [
    # (true, pred, hand-computed macro F1 over classes present in true)
    ([1, 1, 2, 2], [1, 1, 2, 2], 1.0),
    ([1, 1, 2, 2], [1, 2, 2, 2], (2 / 3 + 4 / 5) / 2),
    ([1, 2, 3, 1], [1, 1, 1, 1], (2 * 0.5 * 1 / 1.5 + 0 + 0) / 3),
    ([4, 4, 4, 5], [4, 4, 6, 5], (2 * 1 * (2 / 3) / (5 / 3) + 1.0) / 2),
    ([0, 3, 3, 7, 7, 7], [3, 3, 0, 7, 7, 3], (0 + 2 * (1 / 3) * (1 / 2) / (5 / 6) + 2 * 1 * (2 / 3) / (5 / 3)) / 3),
]


def test_c09_metric_oracles():
    f1_ok = all(f1_score(confusion_matrix(t, p)) == pytest.approx(e, abs=1e-15) for t, p, e in F1_CASES)
    rel = relative_score(56.6, 67.6)
    _, h2 = mean_ci95([0.4, 0.6])
    vals = [0.50, 0.52, 0.55, 0.49, 0.61, 0.58, 0.47, 0.53, 0.56, 0.60]
    _, h10 = mean_ci95(vals)
    t2, t10 = 12.7062, 2.2622  # two-sided 95% t-table, 1 and 9 degrees of freedom
    ci_ok = (h2 == pytest.approx(t2 * np.std([0.4, 0.6], ddof=1) / math.sqrt(2), rel=1e-4)
             and h10 == pytest.approx(t10 * np.std(vals, ddof=1) / math.sqrt(10), rel=1e-4))
    ok = f1_ok and abs(rel - 83.7) <= 0.05 and ci_ok
    record(9, ok, f"5 F1 oracles={f1_ok}, 56.6/67.6 -> {rel:.2f} (83.7 +- 0.05), t-table n=2,10={ci_ok}")


# -- 10 ----------------------------------------------------------------------


def oracle_tree(x, y, max_leaves):
    """Best-first growth with a brute-force scan over every midpoint (lowest threshold wins ties).

    A split's priority is its Gini decrease weighted by node size, in sample counts.
    """
    def best(idx):
        parent = gini(np.bincount(y[idx], minlength=13))
        top = (0.0, None)
        vals = sorted(set(x[idx].tolist()))
        for lo, hi in zip(vals[:-1], vals[1:]):
            t = (lo + hi) / 2
            left, right = idx[x[idx] < t], idx[x[idx] >= t]
            g = parent - (len(left) * gini(np.bincount(y[left], minlength=13))
                          + len(right) * gini(np.bincount(y[right], minlength=13))) / len(idx)
            g *= len(idx)
            if g > top[0] + 1e-9:
                top = (g, t)
        return top

    nodes, rules, frontier, counter, leaves = {0: np.arange(len(x))}, {}, [], itertools.count(), 1

    def push(i):
        g, t = best(nodes[i])
        if t is not None and g > 1e-9:
            frontier.append((-g, next(counter), i, t))

    push(0)
    while frontier and leaves < max_leaves:
        frontier.sort()
        _, _, i, t = frontier.pop(0)
        l, r = len(nodes), len(nodes) + 1
        nodes[l], nodes[r] = nodes[i][x[nodes[i]] < t], nodes[i][x[nodes[i]] >= t]
        rules[i] = (t, l, r)
        leaves += 1
        push(l)
        push(r)

    def predict(q):
        i = 0
        while i in rules:
            t, l, r = rules[i]
            i = l if q < t else r
        return int(np.argmax(np.bincount(y[nodes[i]], minlength=13)))
    return predict


def one_d_datasets():
    """Every binary labelling of every tie pattern for n <= 6 points, every binary and
    ternary labelling of n distinct points for n in 7, 8 (ternary up to n = 7)."""
    for n in range(1, 7):
        for cuts in itertools.product([0, 1], repeat=n - 1):
            x = np.concatenate([[0], np.cumsum(cuts)]).astype(float)
            for y in itertools.product([0, 1], repeat=n):
                yield x, np.array(y)
    for n in (7, 8):
        x = np.arange(n, dtype=float)
        for y in itertools.product(range(3 if n == 7 else 2), repeat=n):
            yield x, np.array(y)


def brute_knn(xs, ys, q, k):
    d = ((xs - q) ** 2).sum(axis=1)
    order = sorted(range(len(xs)), key=lambda i: (d[i], i))[:k]
    labels = [int(ys[i]) for i in order]
    counts = {c: labels.count(c) for c in labels}
    top = max(counts.values())
    return next(c for c in labels if counts[c] == top)


def test_c10_baseline_classifiers():
    queries = np.arange(-1.0, 9.0, 0.25)
    n_sets, dt_ok = 0, True
    for x, y in one_d_datasets():
        for cap in (2, 3, 500):
            tree = dt_train(x[:, None], y, max_leaves=cap)
            oracle = oracle_tree(x, y, cap)
            if not np.array_equal(tree.predict(queries[:, None]), [oracle(q) for q in queries]):
                dt_ok = False
        n_sets += 1

    rng = np.random.default_rng(10)
    xs = rng.integers(0, 5, size=(80, 4)).astype(float)
    ys = rng.integers(0, 6, size=80)
    model = knn_fit(xs, ys, k=3)
    qs = rng.integers(0, 5, size=(200, 4)).astype(float)
    knn_ok = all(knn_predict(model, q) == brute_knn(xs, ys, q, 3) for q in qs)
    record(10, dt_ok and knn_ok, f"DT matches oracle on {n_sets} 1-D datasets x 3 leaf caps={dt_ok}; "
                                 f"KNN matches brute force on 200 queries={knn_ok}")


# -- 11 ----------------------------------------------------------------------


def test_c11_target_labels_never_used(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data)]) == EXIT_OK
    doc = json.loads((data / "experiment.json").read_text())
    doc["repetitions"] = 1

    target_events = data / doc["target"]["events"]
    corrupted = data / "corrupted.events.txt"
    rng = np.random.default_rng(11)
    lines = []
    for line in target_events.read_text().splitlines():
        fields = line.split()
        fields[4:] = [str(rng.choice(["Cook", "Relax", "Work", "Groom", "Sleep"]))]
        lines.append(" ".join(fields))
    corrupted.write_text("\n".join(lines) + "\n")

    params = []
    for name, events in (("clean", doc["target"]["events"]), ("corrupted", corrupted.name)):
        cfg = dict(doc, name=name, out=str(tmp_path / "runs"), target=dict(doc["target"], events=events))
        path = data / f"{name}.json"
        path.write_text(json.dumps(cfg))
        assert main(["baseline", "--config", str(path)]) == EXIT_OK
        assert main(["transfer", "--config", str(path)]) == EXIT_OK
        seed_dir = tmp_path / "runs" / name / "0"
        params.append({f: read_checkpoint(seed_dir / f)["params"] for f in ("gae.ckpt", "mlp.ckpt")})
    changed = sum(1 for line, orig in zip(lines, target_events.read_text().splitlines()) if line != orig)
    same = params[0] == params[1]
    record(11, same and changed > 0, f"{changed} target annotations corrupted; GAE and MLP parameters "
                                     f"bitwise identical={same}")


# -- 12 ----------------------------------------------------------------------


def test_c12_casas_pipeline(tmp_path):
    """Non-gating: set HSNGAE_CASAS_DIR to a folder holding hh101/hh102 ``.events.txt`` and ``.layout.json``."""
    root = os.environ.get("HSNGAE_CASAS_DIR")
    files = {h: (Path(root or ".") / f"{h}.events.txt", Path(root or ".") / f"{h}.layout.json")
             for h in ("hh101", "hh102")}
    if not root or not all(p.is_file() for pair in files.values() for p in pair):
        RESULTS[12] = "criterion 12: SKIP  optional; HSNGAE_CASAS_DIR with hh101/hh102 files not provided"
        pytest.skip("CASAS files not available")
    cfg = {"name": "casas", "out": str(tmp_path), "repetitions": 1,
           "source": {"events": str(files["hh101"][0]), "layout": str(files["hh101"][1])},
           "target": {"events": str(files["hh102"][0]), "layout": str(files["hh102"][1])}}
    path = tmp_path / "casas.json"
    path.write_text(json.dumps(cfg))
    codes = [main(["baseline", "--config", str(path)]), main(["transfer", "--config", str(path)])]
    csv = tmp_path / "casas" / "aggregate_transfer.csv"
    record(12, codes == [EXIT_OK, EXIT_OK] and csv.is_file(), f"exit codes {codes}, results table {csv.name}")
