"""Acceptance gate: ten end-to-end checks with stated tolerances.

Each test prints a single PASS/FAIL line (bypassing capture) so the gate
can be read off the run log directly. Statistical checks use fixed seeds.
"""

import json
import math
import time

import numpy as np
import pytest
import yaml

from cbou.cbo_loop import ExperimentConfig, run_cbo_known, run_cbo_u, run_random
from cbou.cli import load_config, main, posterior_demo, resolve_scm
from cbou.dr_prior import DrConfig
from cbou.metrics import (mean_accuracy, mean_f1,
                          parent_intervention_proportion, y_bar, y_star)
from cbou.parent_posterior import (LINEAR, FourierFeatureMap, GaussianBelief,
                                   ParentPosterior, ParentSet,
                                   PosteriorConfig, SetEntry, featurize,
                                   init_beliefs, log_increment, normalize,
                                   rbf_kernel, update)
from cbou.scm import (Dataset, Intervention, default_domains,
                      generate_erdos_renyi, make_epidemiology,
                      make_healthcare, make_toy, sample_interventional,
                      sample_observational)


def _report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE CRITERION {n}: {'PASS' if ok else 'FAIL'} "
              f"({detail})")
    assert ok, f"criterion {n}: {detail}"


def _quadrature_log_evidence(belief, x, y, noise_var):
    """Dense Riemann integration of the evidence over 1-d or 2-d weights."""
    mu, cov = belief.mean, belief.cov
    d = mu.size
    pts = 4001
    if d == 1:
        s = math.sqrt(cov[0, 0])
        theta = np.linspace(mu[0] - 10 * s, mu[0] + 10 * s, pts)
        dt = theta[1] - theta[0]
        log_prior = -0.5 * (theta - mu[0]) ** 2 / cov[0, 0] \
            - 0.5 * math.log(2 * math.pi * cov[0, 0])
        log_like = -0.5 * (y - x[0] * theta) ** 2 / noise_var \
            - 0.5 * math.log(2 * math.pi * noise_var)
        return math.log(np.exp(log_prior + log_like).sum() * dt)
    s = np.sqrt(np.diag(cov))
    t1 = np.linspace(mu[0] - 10 * s[0], mu[0] + 10 * s[0], pts)
    t2 = np.linspace(mu[1] - 10 * s[1], mu[1] + 10 * s[1], pts)
    dt = (t1[1] - t1[0]) * (t2[1] - t2[0])
    sinv = np.linalg.inv(cov)
    norm = (2 * math.pi * math.sqrt(np.linalg.det(cov))
            * math.sqrt(2 * math.pi * noise_var))
    total = 0.0
    for block in np.array_split(t1, 32):
        d1 = block[:, None] - mu[0]
        d2 = t2[None, :] - mu[1]
        quad = (sinv[0, 0] * d1 ** 2 + 2 * sinv[0, 1] * d1 * d2
                + sinv[1, 1] * d2 ** 2)
        resid = y - (x[0] * (d1 + mu[0]) + x[1] * (d2 + mu[1]))
        total += float(np.exp(-0.5 * quad
                              - 0.5 * resid ** 2 / noise_var).sum())
    return math.log(total * dt / norm)


def test_criterion_01_increment_matches_quadrature(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for probe in range(20):
        d = 1 if probe < 14 else 2
        mu = rng.normal(size=d)
        a = rng.normal(size=(d, d))
        cov = a @ a.T + np.eye(d)
        x = rng.normal(size=d)
        y = float(rng.normal())
        belief = GaussianBelief(mu, cov)
        inc, _ = log_increment(belief, x, y, 1.0)
        ref = _quadrature_log_evidence(belief, x, y, 1.0)
        worst = max(worst, abs(inc - ref))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-3 and dt < 10.0
    _report(capsys, 1, ok, f"max |error|={worst:.2e} vs 1e-3, {dt:.1f}s < 10s")


def test_criterion_02_sequential_equals_batch(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    rows = rng.normal(size=(200, 4))
    rows[:, 3] = rows[:, 0] - 2.0 * rows[:, 1] + 0.3 * rng.normal(size=200)
    obs = Dataset(tuple(range(4)), rows, [None] * 200)
    s = ParentSet.of((0, 1))
    cfg = PosteriorConfig(mode=LINEAR, target=3)
    batch = init_beliefs({s: 1.0}, obs, cfg)
    seq = init_beliefs({s: 1.0}, obs, cfg, fit_obs=False)
    for row in rows:
        update(seq, row, row[3])
    b, q = batch.entries[s].belief, seq.entries[s].belief
    err = max(float(np.max(np.abs(b.mean - q.mean))),
              float(np.max(np.abs(b.cov - q.cov))))
    dt = time.perf_counter() - t0
    ok = err <= 1e-8 and dt < 5.0
    _report(capsys, 2, ok, f"max |mu,Sigma diff|={err:.2e} vs 1e-8, "
                           f"{dt:.1f}s < 5s")


def test_criterion_03_rff_fidelity(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    pairs = []
    while len(pairs) < 200:
        x = rng.normal(size=3)
        delta = rng.normal(size=3)
        delta *= rng.uniform(0, 2.0) / np.linalg.norm(delta)
        pairs.append((x, x + delta))

    def mean_err(dimension):
        # averaged over several feature-map draws to measure the dimension,
        # not the luck of a single frequency sample
        errs = []
        for seed in range(5):
            fmap = FourierFeatureMap.draw(3, dimension=dimension, seed=seed)
            errs.extend(abs(featurize(a, fmap) @ featurize(b, fmap)
                            - rbf_kernel(a, b)) for a, b in pairs)
        return float(np.mean(errs))

    e100, e25, e400 = mean_err(100), mean_err(25), mean_err(400)
    dt = time.perf_counter() - t0
    ok = e100 <= 0.08 and e400 < e25 and dt < 5.0
    _report(capsys, 3, ok, f"err(D=100)={e100:.4f} vs 0.08, "
                           f"err(400)={e400:.4f} < err(25)={e25:.4f}, "
                           f"{dt:.1f}s < 5s")


def test_criterion_04_posterior_concentration(capsys):
    t0 = time.perf_counter()
    hits = 0
    for seed in range(10):
        scm = generate_erdos_renyi(10, kind="linear", seed=seed)
        target = scm.dag.target
        true = tuple(sorted(scm.dag.true_parent_set()))
        rng = np.random.default_rng(seed)
        obs = sample_observational(scm, 200, seed=seed)
        domains = scm.domains or default_domains(scm, obs)
        support = {ParentSet.of((j,))
                   for j in range(scm.dag.num_nodes) if j != target}
        support.add(ParentSet.of(true))
        others = [j for j in range(scm.dag.num_nodes)
                  if j != target and j not in true]
        while len(support) < 15:
            k = int(rng.integers(2, 5))
            cand = tuple(sorted(rng.choice(
                others, size=min(k, len(others)), replace=False).tolist()))
            if not set(true) <= set(cand):
                support.add(ParentSet.of(cand))
        prior = {s: 1.0 / len(support) for s in support}
        pcfg = PosteriorConfig(mode=LINEAR, target=target, seed=seed)
        post = init_beliefs(prior, obs, pcfg, fit_obs=False)
        parents = list(true)
        for _ in range(200):
            vals = [float(rng.uniform(*domains[j])) for j in parents]
            iv = Intervention(parents, vals)
            d = sample_interventional(
                scm, iv, 1, int(rng.integers(0, 2**31 - 1)))
            update(post, d.rows[0], d.rows[0][target])
        hits += post.weight(ParentSet.of(true)) >= 0.9
    dt = time.perf_counter() - t0
    ok = hits >= 8 and dt < 120.0
    _report(capsys, 4, ok, f"true-set weight >= 0.9 in {hits}/10 seeds "
                           f"(need 8), {dt:.0f}s < 120s")


def test_criterion_05_benchmark_convergence(capsys):
    t0 = time.perf_counter()
    details, all_ok = [], True
    for name, make in (("toy", make_toy), ("healthcare", make_healthcare),
                       ("epidemiology", make_epidemiology)):
        su, sk, bu, br = [], [], [], []
        for seed in range(10):
            cfg = ExperimentConfig(trials=30, seed=seed, grid_size=256)
            tu = run_cbo_u(make(), cfg)
            su.append(y_star(tu))
            bu.append(y_bar(tu))
            sk.append(y_star(run_cbo_known(make(), cfg)))
            br.append(y_bar(run_random(make(), cfg)))
        pooled = math.sqrt((np.var(su, ddof=1) + np.var(sk, ddof=1)) / 2)
        gap = abs(float(np.mean(su)) - float(np.mean(sk)))
        tol = max(0.1, 0.25 * pooled)
        order = float(np.mean(bu)) <= float(np.mean(br))
        all_ok &= gap <= tol and order
        details.append(f"{name}: gap={gap:.3f}<=tol {tol:.3f}, "
                       f"Ybar u<=rand {order}")
    dt = time.perf_counter() - t0
    ok = all_ok and dt < 900.0
    _report(capsys, 5, ok, "; ".join(details) + f"; {dt:.0f}s < 900s")


def test_criterion_06_scaling_nonlinear_er50(capsys):
    t0 = time.perf_counter()
    us, rs = [], []
    mono = filt = True
    for seed in range(3):
        cfg = ExperimentConfig(trials=50, seed=seed, threshold=0.1,
                               dr=DrConfig(confidence=0.99))
        scm = generate_erdos_renyi(50, kind="nonlinear", seed=seed)
        tu = run_cbo_u(scm, cfg)
        stars = [r.y_star for r in tu.iterations]
        mono &= all(a >= b for a, b in zip(stars, stars[1:]))
        manip = set(scm.dag.manipulative)
        filt &= all(r.element and set(r.element) <= manip
                    for r in tu.iterations)
        us.append(y_star(tu))
        rs.append(y_star(run_random(scm, cfg)))
    dt = time.perf_counter() - t0
    ok = (mono and filt and float(np.mean(us)) <= float(np.mean(rs))
          and dt < 1800.0)
    _report(capsys, 6, ok, f"monotone={mono}, filtered={filt}, "
                           f"Y* u={np.mean(us):.3f} <= rand="
                           f"{np.mean(rs):.3f}, {dt:.0f}s < 1800s")


def test_criterion_07_parent_selection_proportion(capsys):
    us, rs = [], []
    for seed in range(10):
        cfg = ExperimentConfig(trials=50, seed=seed, threshold=0.1,
                               dr=DrConfig(confidence=0.99))
        scm = generate_erdos_renyi(10, kind="linear", seed=seed)
        truth = ParentSet.of(sorted(scm.dag.true_parent_set()))
        tu = run_cbo_u(scm, cfg)
        tr = run_random(scm, cfg)
        us.append(parent_intervention_proportion(tu.iterations[-20:], truth))
        rs.append(parent_intervention_proportion(tr.iterations[-20:], truth))
    mu, mr = float(np.mean(us)), float(np.mean(rs))
    ok = mu >= 0.6 and mu > mr
    _report(capsys, 7, ok, f"last-20 proportion cbo-u={mu:.3f} "
                           f"(need >= 0.6) vs random={mr:.3f}")


def test_criterion_08_interventional_data_value(capsys):
    cfg = load_config(None)
    cfg["scm"] = "er-linear-6"
    wins = 0
    for seed in range(10):
        scm = resolve_scm("er-linear-6", seed)
        series = posterior_demo(scm, cfg, seed)
        wins += series["int_acc"][-1] >= series["obs_acc"][-1]
    ok = wins >= 8
    _report(capsys, 8, ok, f"int accuracy >= obs in {wins}/10 seeds (need 8)")


def test_criterion_09_metric_identities(capsys):
    def post_of(weights):
        entries = {ParentSet.of(n): SetEntry(
            math.log(w), GaussianBelief(np.zeros(1), np.eye(1)))
            for n, w in weights.items()}
        p = ParentPosterior(entries=entries, num_nodes=6, target=5,
                            mode=LINEAR)
        normalize(p)
        return p

    recs = [{"element": e, "y": y} for e, y in
            [((0,), 3.0), ((0,), 1.0), ((0,), 2.0)]]
    checks = [
        y_star(recs) == 1.0,
        y_bar(recs) == 2.0,
        mean_accuracy(post_of({(1, 3): 1.0}), ParentSet.of((1, 3))) == 1.0,
        mean_accuracy(post_of({(0,): 0.5, (0, 1): 0.5}),
                      ParentSet.of((0,))) == pytest.approx(0.9),
        mean_f1(post_of({(1,): 1.0}),
                ParentSet.of((1, 2))) == pytest.approx(2.0 / 3.0),
        mean_f1(post_of({(): 1.0}), ParentSet.of(())) == 1.0,
        parent_intervention_proportion(
            [{"element": e, "y": 0.0}
             for e in [(1,), (2,), (1, 2), (0, 1)]],
            ParentSet.of((1, 2))) == 0.75,
    ]
    ok = all(bool(c) for c in checks)
    _report(capsys, 9, ok, f"{sum(bool(c) for c in checks)}/7 identities")


def test_criterion_10_byte_identical_replay(capsys, tmp_path):
    cfg = {"version": 1, "scm": "toy", "method": "cbo-u", "trials": 3,
           "n_obs": 100, "grid_size": 16,
           "dr": {"bootstrap_count": 5, "repeats": 2}}
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    code_a = main(["run", "--config", str(path), "--out", str(out_a)])
    code_b = main(["run", "--config", str(path), "--out", str(out_b)])
    names = ["trace-cbo-u-seed0.jsonl", "metrics-cbo-u.csv",
             "summary-cbo-u.csv"]
    same = all((out_a / n).read_bytes() == (out_b / n).read_bytes()
               for n in names)
    ok = code_a == 0 and code_b == 0 and same
    _report(capsys, 10, ok, f"replay byte-identical across {len(names)} "
                            f"artifacts: {same}")
