"""Acceptance suite: one test per criterion, one printed line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines live.
The end-to-end criterion trains three seeds and dominates the runtime.
"""

import math
import time

import numpy as np
import pytest
import torch

from conftest import agdn_oracle, fd_gradcheck, random_instance, ttcn_oracle
from aseer.agdn import AsyncGraphConv, process_timeline, segment_softmax
from aseer.cli import main as cli_main
from aseer.data import build_graph
from aseer.evaluation import evaluate_on_instances, latency_sweep
from aseer.metrics import f_aae, f_aae_bruteforce
from aseer.model import ASeer
from aseer.plan import build_plan
from aseer.sapn import SemiAutoregressiveDecoder
from aseer.synthgen import ScenarioConfig, generate_dataset
from aseer.time_encoding import TimeEncoding
from aseer.training import TrainConfig, build_plans, split_instances, train_model
from aseer.ttcn import MetaFilterConv

import test_metrics as metric_cases


def _report(num: int, name: str, ok: bool, detail: str = ""):
    print(f"\n[acceptance {num:02d}] {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


# -- 1. event-driven diffusion equals brute-force timeline rescan -----------


def test_criterion_01_agdn_oracle_equivalence():
    torch.manual_seed(0)
    ids = [f"x{i:02d}" for i in range(5)]
    enc = TimeEncoding(ids, d_phi=4).double()
    conv = AsyncGraphConv(4, 6, 8).double()
    mean = torch.tensor([60.0, 8.0], dtype=torch.float64)
    std = torch.tensor([20.0, 4.0], dtype=torch.float64)
    rng = np.random.default_rng(123)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(30):
        inst, graph = random_instance(rng, n_sensors=int(rng.integers(2, 6)), max_meas=20)
        got = process_timeline(inst, graph, conv, enc, mean, std)
        want = agdn_oracle(inst, graph, conv, enc, mean.numpy(), std.numpy())
        for sid in want:
            for n, h in enumerate(got[sid][0]):
                worst = max(worst, float(np.abs(h.detach().numpy() - want[sid][0][n]).max()))
            worst = max(worst, float(np.abs(got[sid][1].detach().numpy() - want[sid][1]).max()))
    elapsed = time.perf_counter() - t0
    _report(
        1, "AGDN replay equals rescan oracle",
        worst <= 1e-6 and elapsed < 10.0,
        f"(max abs err {worst:.2e}, {elapsed:.1f}s over 30 instances)",
    )


# -- 2. meta-filter convolution equals double-loop oracle -------------------


def test_criterion_02_ttcn_oracle_equivalence():
    rng = np.random.default_rng(7)
    worst = 0.0
    for case in range(100):
        torch.manual_seed(case)
        d_in = int(rng.integers(1, 5))
        d_out = int(rng.integers(1, 4))
        t_len = int(rng.integers(1, 9))
        meta = MetaFilterConv(d_in, d_out, hidden=5).double()
        z = rng.normal(size=(t_len, d_in))
        got = meta(torch.tensor(z)).detach().numpy()
        worst = max(worst, float(np.abs(got - ttcn_oracle(meta, z)).max()))
    _report(2, "TTCN equals double-loop oracle", worst <= 1e-6, f"(max abs err {worst:.2e})")


# -- 3. density metric equals per-second brute force ------------------------


def test_criterion_03_f_aae_oracle_equivalence():
    rng = np.random.default_rng(11)
    worst = 0.0
    checked = 0
    for _ in range(100):
        pairs = [metric_cases._random_pair(rng, f"s{i}") for i in range(int(rng.integers(1, 3)))]
        fast, slow = f_aae(pairs), f_aae_bruteforce(pairs)
        if fast is None:
            assert slow is None
            continue
        checked += 1
        worst = max(worst, abs(fast - slow))
    _report(
        3, "F-AAE equals per-second oracle",
        worst <= 1e-9 and checked > 80, f"(max abs err {worst:.2e} over {checked} cases)",
    )


# -- 4. analytic gradients match finite differences -------------------------


def test_criterion_04_gradient_checks():
    torch.manual_seed(3)
    errs = {}

    enc = TimeEncoding(["a", "b"], d_phi=4).double()
    idx = torch.tensor([0, 1, 0])
    dt = torch.tensor([0.5, 7.0, 40.0], dtype=torch.float64)
    w = torch.randn(3, enc.out_dim, dtype=torch.float64)
    errs["time_encoding"] = fd_gradcheck(lambda: (enc(idx, dt) * w).sum(), list(enc.parameters()))

    conv = AsyncGraphConv(4, 3, 4).double()
    graph = build_graph([("a", 30.0, 120.0), ("b", 30.003, 120.0)], [("a", "b")], 1.0)
    from aseer.types import ForecastInstance, Measurement, SensorWindow

    inst = ForecastInstance(
        500, 501, 100,
        {
            "a": SensorWindow("a", [Measurement("a", 0, 50, 5.0), Measurement("a", 50, 60, 8.0)], []),
            "b": SensorWindow("b", [Measurement("b", 5, 45, 4.0), Measurement("b", 60, 30, 6.0)], []),
        },
    )
    plan = build_plan(inst, graph, dtype=torch.float64)
    mean = torch.tensor([50.0, 5.0], dtype=torch.float64)
    std = torch.tensor([20.0, 2.0], dtype=torch.float64)
    wc = torch.randn(plan.num_events, 3, dtype=torch.float64)
    errs["agdn"] = fd_gradcheck(
        lambda: (conv(plan, enc, mean, std) * wc).sum(), list(conv.parameters())
    )

    meta = MetaFilterConv(3, 2, 4).double()
    z = torch.randn(4, 3, dtype=torch.float64)
    wm = torch.randn(2, dtype=torch.float64)
    errs["meta_filters"] = fd_gradcheck(lambda: (meta(z) * wm).sum(), list(meta.parameters()))

    dec = SemiAutoregressiveDecoder(3, 4, 2, 4).double()
    h = torch.randn(2, 3, dtype=torch.float64)
    phi = torch.randn(2, 5, dtype=torch.float64)
    ws = torch.randn(2, 3, dtype=torch.float64)
    errs["seu"] = fd_gradcheck(
        lambda: (dec.evolve_state(h, phi) * ws).sum(), list(dec.seu.parameters())
    )
    h2 = torch.randn(2, 3, dtype=torch.float64)
    wp = torch.randn(2, 2, dtype=torch.float64)
    wu = torch.randn(2, 2, dtype=torch.float64)

    def predictor_loss():
        p, u = dec.predict_step(
            h, h2, phi, torch.tensor(60.0, dtype=torch.float64),
            torch.tensor(10.0, dtype=torch.float64),
        )
        return (p * wp).sum() + (u * wu).sum()

    errs["predictor"] = fd_gradcheck(predictor_loss, list(dec.predictor.parameters()))

    worst = max(errs.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    _report(4, "finite-difference gradient checks", worst < 1e-4, f"({detail})")


# -- 5. normalization invariants --------------------------------------------


def test_criterion_05_normalization_invariants():
    torch.manual_seed(5)
    rng = np.random.default_rng(5)

    meta = MetaFilterConv(4, 3, 5).double()
    filter_err = 0.0
    for t_len in (1, 3, 17, 120):
        f = meta.derive_filters(torch.tensor(rng.normal(size=(t_len, 4))))
        filter_err = max(filter_err, float((f.sum(0) - 1).abs().max()))

    attn_err = 0.0
    for m in (1, 2, 6, 20):
        scores = torch.tensor(rng.normal(size=m) * 3)
        seg = torch.zeros(m, dtype=torch.long)
        attn_err = max(attn_err, abs(float(segment_softmax(scores, seg, 1).sum()) - 1.0))

    enc = TimeEncoding(["a"], d_phi=4)
    exact = True
    for lam in np.linspace(-5, 5, 101):
        with torch.no_grad():
            enc.lam[0] = float(lam)
        wp, wg = enc.mixture_weights(torch.tensor([0]))
        exact &= float(wp + wg) == 1.0

    _report(
        5, "normalization invariants",
        filter_err <= 1e-5 and attn_err <= 1e-6 and exact,
        f"(filter sum err {filter_err:.1e}, attention sum err {attn_err:.1e}, "
        f"mixture exact {exact})",
    )


# -- 6. masked values are inert ---------------------------------------------


def _small_scenario(seed=400, days=1, missing=0.4):
    cfg = ScenarioConfig(
        grid_rows=1, grid_cols=2, lanes_per_intersection=2, missing_ratio=missing, seed=seed
    )
    series, nodes, reach = generate_dataset(cfg, days)
    return series, build_graph(nodes, reach, 1.0)


def test_criterion_06_mask_invariance():
    series, graph = _small_scenario()
    tcfg = TrainConfig(seed=0)
    tr, _, _, stats = split_instances(series, tcfg)
    inst = tr[2]
    torch.manual_seed(0)
    model = ASeer(graph.sensor_ids, d_phi=4, d_hidden=16, step_size=6, hidden=16)
    model.set_norm_stats(stats)

    def losses(plan):
        torch.manual_seed(1)
        lb = model.loss(plan)
        return lb.detach_floats()

    def metrics(instance):
        out, _, _ = evaluate_on_instances("ha", [instance], graph)
        return out

    plan = build_plan(inst, graph)
    base_loss = losses(plan)
    base_metrics = metrics(inst)
    hidden_slots = sum(
        1 for w in inst.sensors.values() for t in w.targets if t.mask == 0
    )
    assert hidden_slots > 0, "scenario must contain masked slots"

    ok = True
    for sign in (1.0, -1.0):
        moved = build_plan(inst, graph)
        off = (1.0 - moved.tgt_zeta) * 1000.0 * sign
        moved.tgt_p += off
        moved.tgt_f += off
        moved.tgt_delta += off
        ok &= losses(moved) == base_loss
        # metrics path: perturb the instance's masked target slots
        import copy

        inst2 = copy.deepcopy(inst)
        for w in inst2.sensors.values():
            for t in w.targets:
                if t.mask == 0:
                    t.begin += int(1000 * sign)
                    t.length += int(1000 * sign)
                    t.flow += 1000 * sign
                    t.elapsed += int(1000 * sign)
        ok &= metrics(inst2) == base_metrics
    _report(6, "masked values are inert", ok, f"({hidden_slots} hidden slots perturbed)")


# -- 7. special-case identities ---------------------------------------------


def test_criterion_07_special_case_identities():
    torch.manual_seed(9)
    enc = TimeEncoding(["a", "b"], d_phi=6).double()
    with torch.no_grad():
        enc.lam[0] = 0.0
        enc.omega_personal[0] += 0.4
    generic_ok = torch.equal(
        enc(torch.tensor(0), torch.tensor(25.0, dtype=torch.float64)),
        enc.encode_generic(torch.tensor(25.0, dtype=torch.float64)),
    )

    dec = SemiAutoregressiveDecoder(4, 6, 1, 6).double()
    h0 = torch.randn(2, 4, dtype=torch.float64)
    idx = torch.tensor([0, 1])
    mean = torch.tensor(0.0, dtype=torch.float64)
    std = torch.tensor(1.0, dtype=torch.float64)
    res = dec.rollout(h0, idx, enc, mean, std, tau=0.0,
                      needed=torch.tensor([5, 5]), clamp=True)
    h, delta, sigma = h0, torch.ones(2, dtype=torch.float64), torch.ones(2, dtype=torch.float64)
    auto_ok = res.invocations == 5
    for k in range(5):
        h = dec.evolve_state(h, enc(idx, sigma))
        p, u = dec.predict_step(h, h0, enc(idx, delta), mean, std)
        p, u = p.clamp(min=1.0), u.clamp(min=0.0)
        auto_ok &= torch.equal(res.p[:, k], p[:, 0]) and torch.equal(res.u[:, k], u[:, 0])
        auto_ok &= torch.equal(res.delta[:, k], delta)
        sigma = p[:, 0]
        delta = delta + p[:, 0]

    conv = AsyncGraphConv(6, 4, 6).double()
    graph = build_graph([("a", 30.0, 120.0), ("b", 30.003, 120.0)], [], 1.0)
    from aseer.types import ForecastInstance, Measurement, SensorWindow

    inst = ForecastInstance(
        200, 201, 100,
        {
            "a": SensorWindow("a", [Measurement("a", 0, 50, 5.0)], []),
            "b": SensorWindow("b", [Measurement("b", 10, 80, 7.0)], []),
        },
    )
    out = process_timeline(
        inst, graph, conv, enc,
        torch.tensor([50.0, 5.0], dtype=torch.float64),
        torch.tensor([20.0, 2.0], dtype=torch.float64),
    )
    first = out["a"][0][0]
    empty_ok = torch.equal(first, torch.zeros_like(first))

    _report(
        7, "special-case identities",
        generic_ok and auto_ok and empty_ok,
        f"(lambda0->generic {generic_ok}, xi=1 autoregressive {auto_ok}, "
        f"empty buffer zero {empty_ok})",
    )


# -- 9. decoding latency mechanism ------------------------------------------


def test_criterion_09_latency_mechanism():
    series, graph = _small_scenario(seed=60, missing=0.2)
    tcfg = TrainConfig(seed=0)
    _, _, te, stats = split_instances(series, tcfg)
    plans = build_plans(te, graph, require_targets=False)[:3]
    torch.manual_seed(0)
    model = ASeer(graph.sensor_ids, d_phi=8, d_hidden=32, step_size=12, hidden=32)
    model.set_norm_stats(stats)
    rows = latency_sweep(model, plans, step_sizes=[1, 12], horizon_hours=[1.0], repeats=3)
    ms = {row["xi"]: row["ms"] for row in rows}
    ratio = ms[12] / ms[1]

    counts_ok = True
    enc = model.time_enc
    for xi, slots in ((1, 60), (12, 60), (12, 61), (7, 100)):
        dec = SemiAutoregressiveDecoder(8, 8, xi, 8)
        r = dec.rollout(
            torch.zeros(2, 8), torch.tensor([0, 1]), enc,
            model.pf_mean[0], model.pf_std[0],
            tau=0.0, needed=torch.tensor([slots, slots]), clamp=True,
        )
        counts_ok &= r.invocations == math.ceil(slots / xi)

    _report(
        9, "latency drops with block size",
        ratio <= 0.5 and counts_ok,
        f"(xi=12 at {ratio:.2f}x the xi=1 latency; invocation counts exact {counts_ok})",
    )


# -- 10. determinism ---------------------------------------------------------


def test_criterion_10_determinism(tmp_path):
    import json

    cfg = {
        "scenario": {"grid_rows": 1, "grid_cols": 2, "lanes_per_intersection": 1,
                     "missing_ratio": 0.2, "seed": 17},
        "days": 1,
        "model": {"d_phi": 4, "d_hidden": 8, "step_size": 4, "hidden": 8},
        "training": {"max_epochs": 2, "patience": 5, "seed": 3},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))

    gen_ok = True
    dirs = []
    for tag in ("g1", "g2"):
        out = tmp_path / tag
        assert cli_main(["generate", "--config", str(cfg_path), "--out", str(out)]) == 0
        dirs.append(out)
    for name in ("dataset.csv", "nodes.csv", "reach.csv"):
        gen_ok &= (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()

    histories = []
    for tag in ("t1", "t2"):
        out = tmp_path / tag
        assert cli_main(
            ["train", "--config", str(cfg_path), "--data", str(dirs[0]),
             "--out", str(out), "--quiet"]
        ) == 0
        histories.append((out / "history.csv").read_text().splitlines())
    # float32 epoch losses support relative agreement only
    train_err = 0.0
    for a, b in zip(histories[0][1:], histories[1][1:]):
        for x, y in zip(a.split(",")[1:], b.split(",")[1:]):
            fx, fy = float(x), float(y)
            train_err = max(train_err, abs(fx - fy) / max(1.0, abs(fx), abs(fy)))

    _report(
        10, "generation bit-identical, training trajectory stable",
        gen_ok and train_err <= 1e-5,
        f"(bytes equal {gen_ok}, max relative trajectory divergence {train_err:.2e})",
    )


# -- 11. ablation plumbing ---------------------------------------------------


def test_criterion_11_ablation_plumbing():
    series, graph = _small_scenario(seed=23, missing=0.2)
    tcfg = TrainConfig(max_epochs=2, patience=5, seed=0)
    tr, va, _, stats = split_instances(series, tcfg)
    plans = build_plans(tr, graph)[:8]
    vplans = build_plans(va, graph)[:3]
    vals = {}
    for name, kw in (
        ("full", {}), ("no_agdn", {"no_agdn": True}), ("no_pte", {"no_pte": True})
    ):
        torch.manual_seed(0)
        model = ASeer(graph.sensor_ids, d_phi=4, d_hidden=16, step_size=6, hidden=16, **kw)
        model.set_norm_stats(stats)
        result = train_model(model, plans, vplans, tcfg)
        vals[name] = result.best_val
    distinct = (
        vals["full"] != vals["no_agdn"]
        and vals["full"] != vals["no_pte"]
        and all(math.isfinite(v) for v in vals.values())
    )
    detail = ", ".join(f"{k} {v:.3f}" for k, v in vals.items())
    _report(11, "ablation toggles are live", distinct, f"({detail})")


# -- 8. end-to-end relative performance (runs last: trains 3 seeds) ----------

E2E_SCENARIO = dict(grid_rows=2, grid_cols=5, lanes_per_intersection=2, missing_ratio=0.3)
E2E_DAYS = 7
E2E_EPOCHS = 25
E2E_BUDGET_S = 30 * 60


def test_criterion_08_beats_heuristics_across_seeds():
    t_start = time.perf_counter()
    results = []
    for seed in (0, 1, 2):
        cfg = ScenarioConfig(**E2E_SCENARIO, seed=100 + seed)
        series, nodes, reach = generate_dataset(cfg, E2E_DAYS)
        graph = build_graph(nodes, reach, 1.0)
        tcfg = TrainConfig(max_epochs=E2E_EPOCHS, patience=10, seed=seed)
        tr, va, te, stats = split_instances(series, tcfg)
        plans = build_plans(tr, graph)
        vplans = build_plans(va, graph)
        torch.manual_seed(seed)
        model = ASeer(graph.sensor_ids)
        model.set_norm_stats(stats)
        train_model(model, plans, vplans, tcfg)
        row = {}
        for name, predictor in (("aseer", model), ("last", "last"), ("ha", "ha")):
            met, _, _ = evaluate_on_instances(predictor, te, graph)
            row[name] = (met["c_mae"], met["f_mae"])
        results.append(row)
        print(
            f"\n  seed {seed}: aseer C-MAE {row['aseer'][0]:.2f} F-MAE {row['aseer'][1]:.3f} | "
            f"last {row['last'][0]:.2f}/{row['last'][1]:.3f} | "
            f"ha {row['ha'][0]:.2f}/{row['ha'][1]:.3f}"
        )
    elapsed = time.perf_counter() - t_start
    wins = all(
        row["aseer"][0] < row["last"][0]
        and row["aseer"][0] < row["ha"][0]
        and row["aseer"][1] < row["last"][1]
        and row["aseer"][1] < row["ha"][1]
        for row in results
    )
    _report(
        8, "trained model beats repeat-last and historical-average",
        wins and elapsed <= E2E_BUDGET_S,
        f"(3 seeds, {elapsed/60:.1f} min of {E2E_BUDGET_S/60:.0f})",
    )
