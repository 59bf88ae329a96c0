"""Shared builders and oracles for the test suite."""

from __future__ import annotations

import functools
import math
from dataclasses import replace

import numpy as np

from opwatt.segmentation import dataset_from_traces
from opwatt.simulator import NoiseSpec, make_scenario, simulate_runs

KKT_TOL = 2e-3


@functools.lru_cache(maxsize=None)
def scenario_runs(name: str, n: int, seed: int = 0, zero: bool = False, drop: float | None = None):
    """Cached ``simulate_runs`` output for a named scenario."""
    ops, battery, noise = make_scenario(name)
    noise = NoiseSpec.zero(seed) if zero else replace(noise, seed=seed)
    if drop is not None:
        noise = replace(noise, poll_drop_prob=drop)
    return tuple(simulate_runs(ops, battery, noise, n, label=name.replace(" ", "")))


def scenario_dataset(name: str, n: int, seed: int = 0, zero: bool = False, schema=None):
    runs = scenario_runs(name, n, seed, zero)
    intervals, samples, schema = dataset_from_traces([log for log, _ in runs], schema=schema)
    return runs, intervals, samples, schema


def kkt_violations(K, y, C, epsilon, beta, bias, tol=KKT_TOL) -> list[str]:
    """Every KKT condition of the epsilon-SVR dual that ``(beta, bias)`` breaks."""
    beta = np.asarray(beta, dtype=float)
    y = np.asarray(y, dtype=float)
    out = []
    if np.any(np.abs(beta) > C * (1 + 1e-12)):
        out.append(f"dual outside [-C, C]: max |beta| = {np.abs(beta).max()!r}, C = {C}")
    s = float(np.sum(beta))
    if abs(s) > 1e-6:
        out.append(f"sum of duals {s!r} is not 0")
    resid = np.asarray(K) @ beta + bias - y
    inside = np.abs(resid) < epsilon - tol
    if np.any(beta[inside] != 0):
        out.append(f"{int(np.sum(beta[inside] != 0))} in-tube points carry nonzero duals")
    outside = np.abs(resid) > epsilon + tol
    at_bound = np.isclose(np.abs(beta), C, rtol=1e-9, atol=1e-12)
    if np.any(outside & ~at_bound):
        out.append(f"{int(np.sum(outside & ~at_bound))} out-of-tube points are below the box bound")
    wrong_side = (beta > 0) & (resid > -epsilon + tol) | (beta < 0) & (resid < epsilon - tol)
    if np.any(wrong_side):
        out.append(f"{int(np.sum(wrong_side))} nonzero duals are not on the tube edge their sign implies")
    return out


def exact_periodic_energy(a: float, b: float, idle_w: float, ops) -> float:
    """Energy of idle plus single-state Periodic operators over ``[a, b]``.

    Integrates the planted schedule piecewise between its own on/off
    breakpoints, independent of the simulator's integrator.
    """
    total = idle_w * (b - a)
    for period, active, phase, dyn in ops:
        k0 = max(0, math.floor((a - phase) / period) - 1)
        k = k0
        while phase + k * period < b:
            lo = max(a, phase + k * period)
            hi = min(b, phase + k * period + active)
            if hi > lo:
                total += dyn * (hi - lo)
            k += 1
    return total


def poll_drop_truth(name: str, n: int, seed: int, drop: float, threshold: float = 0.10):
    """Per-interval ground truth for poll-drop corruption.

    The simulator draws poll drops from their own random stream, so the
    same seed with ``poll_drop_prob = 0`` yields identical SoC events and
    the full poll set. An interval is affected when more than
    ``threshold`` of its polls were dropped.
    """
    noisy = scenario_runs(name, n, seed, drop=drop)
    clean = scenario_runs(name, n, seed, drop=0.0)
    affected: dict[int, bool] = {}
    k = 0
    for (log, _), (ref, _) in zip(noisy, clean):
        assert log.soc_events == ref.soc_events
        got = np.array([p.t for p in log.polls])
        full = np.array([p.t for p in ref.polls])
        for a, b in zip(log.soc_events[:-1], log.soc_events[1:]):
            have = np.count_nonzero((got > a.t) & (got <= b.t))
            want = np.count_nonzero((full > a.t) & (full <= b.t))
            affected[k] = want > 0 and (want - have) / want > threshold
            k += 1
    return noisy, affected
