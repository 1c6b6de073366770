"""Acceptance gate, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
Criteria 4-10 run full 128-node sweeps; the sweeps are shared through
session fixtures and only per-run summaries are kept in memory.
"""

import itertools
import random
import time

import mpmath
import pytest

from lifeguard import Config
from lifeguard.core.node import Node
from lifeguard.core.timeouts import LocalHealth, gossip_budget, suspicion_bounds, suspicion_timeout
from lifeguard.metrics import aggregate, pct_of_baseline, scan_buddy_and_budget, summarize
from lifeguard.sim import ExperimentPlan, SimConfig, Simulator, run_plan
from oracles import bounds_ref, check_precedence, check_refutation, timeout_ref

CONFIGS = ("SWIM", "LHA-Probe", "LHA-Suspicion", "Buddy System", "Lifeguard")
SEEDS = (0, 1, 2)
AB_GRID = ((2.0, 2.0), (2.0, 6.0), (5.0, 2.0), (5.0, 6.0))

# Reference latencies (seconds) and the tolerances allowed at desk scale.
SWIM_FIRST, SWIM_FULL, LATENCY_TOL = 12.44, 12.90, 0.20


def interval_plans(config, alpha=5.0, beta=6.0):
    return [ExperimentPlan("interval", C, D, I, config, alpha, beta, seed=s)
            for C, D, I, s in itertools.product((4, 16, 32), (512, 8192), (64, 1024), SEEDS)]


def threshold_plans(config, alpha=5.0, beta=6.0):
    return [ExperimentPlan("threshold", C, D, None, config, alpha, beta, seed=s)
            for C, D, s in itertools.product((1, 8, 32), (16384, 32768), SEEDS)]


class Sweep:
    """Runs plans and keeps (plan, summary, scan) triples plus timings."""

    def __init__(self):
        self.results = {}
        self.seconds = 0.0
        self.scan_seconds = 0.0

    def run(self, name, plans):
        out = []
        for plan in plans:
            t0 = time.perf_counter()
            log = run_plan(plan)
            t1 = time.perf_counter()
            scan = scan_buddy_and_budget(log)
            t2 = time.perf_counter()
            out.append((plan, summarize(log, digest=False, scan=scan), scan))
            self.seconds += time.perf_counter() - t0
            self.scan_seconds += t2 - t1
        self.results[name] = out
        return out

    def stats(self, name):
        return aggregate(s for _, s, _ in self.results[name])


@pytest.fixture(scope="session")
def interval_sweep():
    sweep = Sweep()
    for name in CONFIGS:
        sweep.run(name, interval_plans(name))
    return sweep


@pytest.fixture(scope="session")
def threshold_sweep():
    sweep = Sweep()
    for name in ("SWIM", "Lifeguard"):
        sweep.run(name, threshold_plans(name))
    return sweep


@pytest.fixture(scope="session")
def alpha_beta_sweep():
    sweep = Sweep()
    for a, b in AB_GRID:
        if (a, b) != (5.0, 6.0):  # reused from the criterion 5 and 6 sweeps
            sweep.run(("interval", a, b), interval_plans("Lifeguard", a, b))
            sweep.run(("threshold", a, b), threshold_plans("Lifeguard", a, b))
    return sweep


def healthy_log(name, seed=0):
    sim = Simulator(SimConfig(seed=seed), Config.preset(name))
    return sim.run(600_000)


# -- criterion 1 -------------------------------------------------------------

def test_criterion_01_formula_oracle(criterion):
    grid = [(lo * 1000, hi * 1000, k, c) for lo in range(1, 11) for hi in range(lo, 61)
            for k in range(1, 6) for c in range(11)]
    t0 = time.perf_counter()
    ours = [suspicion_timeout(lo, hi, k, c) for lo, hi, k, c in grid]
    elapsed = time.perf_counter() - t0
    worst = max(abs(mpmath.mpf(v) - timeout_ref(*g)) for v, g in zip(ours, grid))

    bgrid = list(itertools.product(range(2, 1025), (2, 4, 5), (1, 2, 4, 6)))
    t0 = time.perf_counter()
    bounds = [suspicion_bounds(n, a, b, 1000.0) for n, a, b in bgrid]
    elapsed += time.perf_counter() - t0
    worst_b = max(max(abs(mpmath.mpf(x) - y) for x, y in zip(got, bounds_ref(*g)))
                  for got, g in zip(bounds, bgrid))
    ok = worst <= 1.0 and worst_b <= 1.0 and elapsed < 1.0
    detail = (f"{len(grid)} timeouts, worst error {float(worst):.2e} ms; {len(bgrid)} bounds, "
              f"worst error {float(worst_b):.2e} ms; {elapsed:.3f}s")
    criterion(1, ok, detail)
    assert ok, detail


# -- criterion 2 -------------------------------------------------------------

def test_criterion_02_lhm_properties(criterion):
    rng = random.Random(2)
    limit = 8
    t0 = time.perf_counter()
    bad = 0
    for _ in range(100_000):
        h = LocalHealth(limit)
        model = 0
        for _ in range(rng.randint(1, 30)):
            delta = rng.choice((-1, 1, 1, -1, 1))  # probe success, failure, missed nack, refute
            h.apply(delta)
            model = min(limit, max(0, model + delta))
            lhm = h.value
            if not (0 <= lhm <= limit and lhm == model and h.scale(1000.0) == 1000.0 * (lhm + 1)
                    and h.scale(500.0) == 500.0 * (lhm + 1)):
                bad += 1
    elapsed = time.perf_counter() - t0

    node = Node("me", Config.preset("Lifeguard"), random.Random(0), peers=["p"])
    node.health.value = limit
    fires = {o.timer[0]: o.fire_at for o in node.begin_protocol_period(0.0) if hasattr(o, "timer")}
    saturated = fires.get("period_end") == 9000.0 and fires.get("probe_timeout") == 4500.0
    ok = bad == 0 and saturated and elapsed < 10.0
    detail = f"1e5 sequences, {bad} violations; at lhm={limit}: {fires}; {elapsed:.1f}s"
    criterion(2, ok, detail)
    assert ok, detail


# -- criterion 3 -------------------------------------------------------------

def test_criterion_03_precedence_brute_force(criterion):
    t0 = time.perf_counter()
    checked, failures = check_precedence(max_size=4, max_inc=3)
    rchecked, rfailures = check_refutation(max_size=4, max_inc=3)
    elapsed = time.perf_counter() - t0
    ok = not failures and not rfailures and elapsed < 30.0
    detail = (f"{checked} multisets, {len(failures)} mismatches; {rchecked} refutation orders, "
              f"{len(rfailures)} failures; {elapsed:.1f}s")
    criterion(3, ok, detail)
    assert ok, detail


# -- criterion 4 -------------------------------------------------------------

@pytest.mark.slow
def test_criterion_04_healthy_cluster(criterion):
    t0 = time.perf_counter()
    events = {}
    for name in CONFIGS:
        log = healthy_log(name)
        events[name] = sum(1 for r in log.records if r[0] == "state" and r[5] in ("suspect", "dead"))
    elapsed = time.perf_counter() - t0
    ok = not any(events.values()) and elapsed < 120.0
    detail = f"suspect+dead events per config {events}; {elapsed:.0f}s"
    criterion(4, ok, detail)
    assert ok, detail


# -- criterion 5 -------------------------------------------------------------

@pytest.mark.slow
def test_criterion_05_detection_latency(criterion, threshold_sweep):
    swim, lg = threshold_sweep.stats("SWIM"), threshold_sweep.stats("Lifeguard")
    checks = {
        "swim first": swim["first_median"] is not None
        and abs(swim["first_median"] / SWIM_FIRST - 1) <= LATENCY_TOL,
        "swim full": swim["full_median"] is not None
        and abs(swim["full_median"] / SWIM_FULL - 1) <= LATENCY_TOL,
        "lifeguard first": lg["first_median"] is not None and swim["first_median"] is not None
        and lg["first_median"] <= 1.02 * swim["first_median"],
        "lifeguard full": lg["full_median"] is not None and swim["full_median"] is not None
        and lg["full_median"] <= 1.02 * swim["full_median"],
        "runtime": threshold_sweep.seconds < 600,
    }
    ok = all(checks.values())
    detail = (f"SWIM median first {swim['first_median']}s full {swim['full_median']}s; "
              f"Lifeguard first {lg['first_median']}s full {lg['full_median']}s; "
              f"undetected {swim['undetected']}/{lg['undetected']}; {threshold_sweep.seconds:.0f}s; "
              f"failed: {[k for k, v in checks.items() if not v]}")
    criterion(5, ok, detail)
    assert ok, detail


# -- criterion 6 -------------------------------------------------------------

@pytest.mark.slow
def test_criterion_06_false_positive_reduction(criterion, interval_sweep):
    st = {name: interval_sweep.stats(name) for name in CONFIGS}
    fp_pct = pct_of_baseline(st["Lifeguard"]["fp"], st["SWIM"]["fp"])
    fpm_pct = pct_of_baseline(st["Lifeguard"]["fp_minus"], st["SWIM"]["fp_minus"])
    checks = {
        "nonzero baseline": st["SWIM"]["fp"] > 0 and st["SWIM"]["fp_minus"] > 0,
        "fp": fp_pct <= 10.0,
        "fp_minus": fpm_pct <= 20.0,
        "ordering": st["LHA-Suspicion"]["fp"] < min(st["LHA-Probe"]["fp"], st["Buddy System"]["fp"]),
        "runtime": interval_sweep.seconds < 1200,
    }
    ok = all(checks.values())
    detail = (f"FP {[(n, st[n]['fp']) for n in CONFIGS]}; Lifeguard FP {fp_pct:.2f}% "
              f"FP- {fpm_pct:.2f}% of SWIM; {interval_sweep.seconds:.0f}s; "
              f"failed: {[k for k, v in checks.items() if not v]}")
    criterion(6, ok, detail)
    assert ok, detail


# -- criterion 7 -------------------------------------------------------------

@pytest.mark.slow
def test_criterion_07_message_load(criterion, interval_sweep):
    swim, lg = interval_sweep.stats("SWIM"), interval_sweep.stats("Lifeguard")
    msg_ratio = lg["messages"] / swim["messages"]
    byte_ratio = lg["bytes"] / swim["bytes"]
    ok = msg_ratio <= 1.25 and byte_ratio <= 1.10
    detail = f"Lifeguard/SWIM messages {msg_ratio:.3f}, bytes {byte_ratio:.3f}"
    criterion(7, ok, detail)
    assert ok, detail


# -- criterion 8 -------------------------------------------------------------

@pytest.mark.slow
def test_criterion_08_alpha_beta_trends(criterion, interval_sweep, threshold_sweep, alpha_beta_sweep):
    def fp(a, b):
        if (a, b) == (5.0, 6.0):
            return interval_sweep.stats("Lifeguard")
        return alpha_beta_sweep.stats(("interval", a, b))

    def lat(a, b):
        if (a, b) == (5.0, 6.0):
            return threshold_sweep.stats("Lifeguard")
        return alpha_beta_sweep.stats(("threshold", a, b))

    checks = {}
    for b in (2.0, 6.0):
        lo, hi = lat(2.0, b), lat(5.0, b)
        for key in ("first_median", "full_median"):
            checks[f"{key} a2<=a5 b{b:g}"] = (lo[key] is not None and hi[key] is not None
                                            and lo[key] <= hi[key])
        for key in ("fp", "fp_minus"):
            checks[f"{key} a2>=a5 b{b:g}"] = fp(2.0, b)[key] >= fp(5.0, b)[key]
    for a in (2.0, 5.0):
        for key in ("fp", "fp_minus"):
            checks[f"{key} b2>=b6 a{a:g}"] = fp(a, 2.0)[key] >= fp(a, 6.0)[key]
    swim_fpm = interval_sweep.stats("SWIM")["fp_minus"]
    at22 = pct_of_baseline(fp(2.0, 2.0)["fp_minus"], swim_fpm)
    checks["fp_minus (2,2) <= 50% SWIM"] = at22 <= 50.0
    checks["runtime"] = alpha_beta_sweep.seconds < 1800
    ok = all(checks.values())
    table = {f"{a:g}/{b:g}": (fp(a, b)["fp"], fp(a, b)["fp_minus"], lat(a, b)["first_median"],
                              lat(a, b)["full_median"]) for a, b in AB_GRID}
    detail = (f"(fp, fp-, first, full) by alpha/beta {table}; (2,2) FP- {at22:.1f}% of SWIM; "
              f"{alpha_beta_sweep.seconds:.0f}s; failed: {[k for k, v in checks.items() if not v]}")
    criterion(8, ok, detail)
    assert ok, detail


# -- criterion 9 -------------------------------------------------------------

@pytest.mark.slow
def test_criterion_09_determinism(criterion):
    t0 = time.perf_counter()
    pairs = {
        "healthy": [healthy_log("Buddy System", seed=3).digest() for _ in range(2)],
        "threshold": [run_plan(ExperimentPlan("threshold", 8, 16384, None, "Lifeguard", seed=1)).digest()
                      for _ in range(2)],
        "interval": [run_plan(ExperimentPlan("interval", 16, 8192, 64, "SWIM", seed=2)).digest()
                     for _ in range(2)],
    }
    ok = all(a == b for a, b in pairs.values())
    detail = (f"repeat digests equal: {({k: a == b for k, (a, b) in pairs.items()})}; "
              f"{time.perf_counter() - t0:.0f}s")
    criterion(9, ok, detail)
    assert ok, detail


# -- criterion 10 ------------------------------------------------------------

@pytest.mark.slow
def test_criterion_10_buddy_and_budget(criterion, interval_sweep):
    pings = to_suspects = violations = over = 0
    worst = 0
    for name in CONFIGS:
        for plan, summary, scan in interval_sweep.results[name]:
            pings += scan.pings
            violations += scan.violations if plan.protocol_config().buddy else 0
            if plan.protocol_config().buddy:
                to_suspects += scan.pings_to_suspects
            k = plan.protocol_config().suspicion_k
            assert scan.bound == (k + 1) * gossip_budget(128, plan.protocol_config().retransmit_mult)
            worst = max(worst, scan.max_suspect_transmissions)
            over += scan.max_suspect_transmissions > scan.bound
    ok = violations == 0 and over == 0 and to_suspects > 0 and interval_sweep.scan_seconds < 60
    detail = (f"{to_suspects} buddy-config pings to suspects, {violations} without the suspicion; "
              f"max per-node suspect transmissions {worst}, {over} runs over bound; "
              f"scan {interval_sweep.scan_seconds:.1f}s")
    criterion(10, ok, detail)
    assert ok, detail
