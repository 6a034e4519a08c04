"""Calculators for the attack's guarantees.

* angle statistics between benign updates and the aggregated malicious update;
* the minimum number of compromised clients for a round to move the global
  model toward ``X`` in the worst case, its Monte-Carlo ground truth and the
  relative error between the two;
* the second-order cosine expansion behind that bound;
* the distance-to-``X`` convergence bound with its empirical residual;
* the bounds on the server's error when it estimates ``X`` from the local
  models of the clients it flags as compromised.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateOracle,
    EmptyDetectedSet,
    NoCompromisedParticipation,
    ZeroMaliciousDirection,
)


@dataclass(frozen=True)
class AngleStats:
    mean: float
    std: float
    samples: tuple
    round: int = 0
    skipped: int = 0


@dataclass(frozen=True)
class BoundReport:
    name: str
    lower: float | None
    observed: float
    upper: float | None
    sampled: bool = False

    @property
    def holds(self):
        ok = True
        if self.lower is not None:
            ok &= self.lower <= self.observed
        if self.upper is not None:
            ok &= self.observed <= self.upper
        return bool(ok)


def angle_between(u, v):
    u, v = np.asarray(u, float), np.asarray(v, float)
    c = float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))
    return math.acos(min(1.0, max(-1.0, c)))


def angle_stats(benign_updates, malicious_agg, round_=0):
    """Angles (radians) between each benign update and the malicious aggregate.

    Zero-norm benign updates have no direction and are skipped (counted in
    ``skipped``). The std uses the unbiased estimator and is 0 for one sample.
    """
    m = np.asarray(malicious_agg, float)
    if not np.linalg.norm(m) > 0:
        raise ZeroMaliciousDirection("malicious aggregate has zero norm")
    betas, skipped = [], 0
    for u in benign_updates:
        u = getattr(u, "delta", u)
        if not np.linalg.norm(u) > 0:
            skipped += 1
            continue
        betas.append(angle_between(u, m))
    if not betas:
        raise ValueError("no benign update with a direction")
    arr = np.array(betas)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return AngleStats(float(arr.mean()), std, tuple(betas), round_, skipped)


# ----------------------------------------------------------------------------
# minimum number of compromised clients
# ----------------------------------------------------------------------------

def lower_bound_fraction(mu, sigma, a, b):
    s = sigma * sigma + mu * mu
    den = a + b + 2.0 - s
    if den <= 0:
        return 0.0
    return (2.0 - s) / den


def lower_bound_compromised(mu, sigma, a, b, n):
    """Smallest integer |C| with |C| >= (2 - s) / (a + b + 2 - s) * n, s = sigma^2 + mu^2.

    Returns 0 when the bound is vacuous (non-positive denominator or numerator).
    """
    frac = lower_bound_fraction(mu, sigma, a, b)
    if frac <= 0:
        return 0
    return int(min(n, max(0, math.ceil(frac * n - 1e-9))))


def success_condition_exact(psi, beta):
    """Worst-case success of one round for sampled ``psi`` (attackers) and ``beta`` (benign).

    Returns ``(exact, quadratic)``: the cosine-projection form
    ``sum(psi) - sum(cos beta) >= 0`` and its second-order version
    ``sum(psi) - (n_benign - sum(beta^2) / 2) >= 0``.
    """
    psi = np.asarray(psi, float)
    beta = np.asarray(beta, float)
    if psi.size == 0 and beta.size == 0:
        raise ValueError("need at least one sample")
    exact = psi.sum() - np.cos(beta).sum() >= 0
    quad = psi.sum() - (beta.size - (beta * beta).sum() / 2.0) >= 0
    return bool(exact), bool(quad)


def maclaurin_cos_sum(beta):
    """``(sum cos beta, n - sum beta^2 / 2, |difference|)``; the difference is
    checked against the fourth-order remainder ``sum beta^4 / 24``."""
    beta = np.asarray(beta, float)
    exact = float(np.cos(beta).sum())
    approx = float(beta.size - (beta * beta).sum() / 2.0)
    err = abs(exact - approx)
    assert err <= float((beta ** 4).sum()) / 24.0 + 1e-12, "Maclaurin remainder exceeded"
    return exact, approx, err


def success_rates(mu, sigma, a, b, n, draws=10_000, rng=None, form="quadratic", chunk=1000):
    """Monte-Carlo success probability for every |C| in 0..n.

    For each draw, ``n`` psi values ~ U[a, b] and ``n`` angles ~ N(mu, sigma^2)
    are sampled once; candidate |C| = c uses the first c psi values and the
    last ``n - c`` angles, so all candidates share the same randomness.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    hits = np.zeros(n + 1)
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        psi = rng.uniform(a, b, size=(m, n)) if b > a else np.full((m, n), float(a))
        beta = mu + sigma * rng.standard_normal((m, n))
        psi_sum = np.concatenate([np.zeros((m, 1)), np.cumsum(psi, axis=1)], axis=1)
        if form == "quadratic":
            term = 1.0 - beta * beta / 2.0
        elif form == "exact":
            term = np.cos(beta)
        else:
            raise ValueError(f"unknown form {form!r}")
        # suffix sums: benign clients are the last n - c
        tail = np.concatenate([np.cumsum(term[:, ::-1], axis=1)[:, ::-1], np.zeros((m, 1))], axis=1)
        hits += (psi_sum - tail >= 0).sum(axis=0)
        done += m
    return hits / draws


def mc_lower_bound(mu, sigma, a, b, n, draws=10_000, rng=None, form="quadratic", level=0.5):
    """Smallest |C| whose sampled success condition holds in at least ``level`` of draws."""
    rates = success_rates(mu, sigma, a, b, n, draws, rng, form)
    ok = np.flatnonzero(rates >= level)
    if ok.size == 0:
        raise DegenerateOracle(f"no |C| <= {n} succeeds in {level:.0%} of draws")
    return int(ok[0])


def bound_approx_error(true_bound_mc, closed_form):
    """Relative error ``|closed - true| / true`` of the closed-form |C|."""
    if not true_bound_mc > 0:
        raise ValueError("Monte-Carlo bound must be positive")
    return abs(closed_form - true_bound_mc) / true_bound_mc


def regime_approx_error(mu, sigma, a, b, n, draws=10_000, rng=None):
    """``(relative error, closed form, Monte-Carlo |C|)`` for one angle regime."""
    closed = lower_bound_compromised(mu, sigma, a, b, n)
    truth = mc_lower_bound(mu, sigma, a, b, n, draws, rng)
    if truth == 0:
        raise DegenerateOracle("Monte-Carlo oracle needs no compromised client")
    return bound_approx_error(truth, closed), closed, truth


# ----------------------------------------------------------------------------
# convergence toward X
# ----------------------------------------------------------------------------

def convergence_bound_check(theta, X, last_malicious_update, a, eps=0.0):
    """Check ``||theta - X|| <= (1/a - 1) ||delta_c|| + eps``.

    ``delta_c`` is the latest update of a compromised client. The residual
    ``zeta_proxy = max(0, ||theta - X|| - (1/a - 1) ||delta_c||)`` stands in
    for the unmeasurable error term and is returned next to the report.
    """
    if not 0 < a <= 1:
        raise ValueError("a must be in (0, 1]")
    if last_malicious_update is None:
        raise NoCompromisedParticipation("no compromised client has participated yet")
    dist = float(np.linalg.norm(np.asarray(theta) - np.asarray(X)))
    slack = (1.0 / a - 1.0) * float(np.linalg.norm(last_malicious_update))
    zeta = max(0.0, dist - slack)
    return BoundReport("convergence", None, dist, slack + eps), zeta


# ----------------------------------------------------------------------------
# server-side estimation of X
# ----------------------------------------------------------------------------

def detected_set(compromised_ids, benign_ids, p, rng):
    """Flagged clients at precision ``p``: round(p * k) true positives plus
    enough benign clients to keep the set at size k = len(compromised_ids)."""
    compromised_ids, benign_ids = sorted(compromised_ids), sorted(benign_ids)
    k = len(compromised_ids)
    n_true = int(math.floor(p * k + 0.5))
    n_false = min(k - n_true, len(benign_ids))
    true = rng.choice(compromised_ids, size=n_true, replace=False) if n_true else []
    false = rng.choice(benign_ids, size=n_false, replace=False) if n_false else []
    return sorted(int(i) for i in true), sorted(int(i) for i in false)


def _max_subset_error(models, X, size, exhaustive_limit, samples, rng):
    ids = sorted(models)
    centred = np.stack([models[i] for i in ids]) - X
    n = len(ids)
    size = min(size, n)
    chunk = max(1, (1 << 22) // (size * centred.shape[1]))
    best = 0.0
    if n <= exhaustive_limit:
        combos = itertools.combinations(range(n), size)
        while True:
            idx = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
            if idx.size == 0:
                return best, False
            errs = np.linalg.norm(centred[idx].mean(axis=1), axis=1)
            best = max(best, float(errs.max()))
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        idx = np.argsort(rng.random((m, n)), axis=1)[:, :size]
        errs = np.linalg.norm(centred[idx].mean(axis=1), axis=1)
        best = max(best, float(errs.max()))
        done += m
    return best, True


def estimation_error_bounds(detected_true, detected_false, updates, local_models, X, p, b,
                            rng=None, exhaustive_limit=20, samples=10_000):
    """Lower / observed / upper error of the server's estimate of ``X``.

    The estimate is ``X' = sum(theta_i for flagged i) / k`` with ``k`` the
    flagged-set size. Lower bound: ``||sum_{true positives} delta_c|| / (p k b)``.
    Upper bound: the largest ``||mean(theta_i for i in L) - X||`` over
    size-``k`` subsets ``L`` of the clients in ``local_models``, enumerated
    when there are at most ``exhaustive_limit`` clients and otherwise the
    maximum over ``samples`` random subsets (``sampled=True``).
    """
    detected = list(detected_true) + list(detected_false)
    if not detected or p <= 0:
        raise EmptyDetectedSet("no client was flagged")
    rng = rng if rng is not None else np.random.default_rng(0)
    k = len(detected)
    X = np.asarray(X, float)
    x_est = sum(local_models[i] for i in detected) / k
    observed = float(np.linalg.norm(x_est - X))
    mal_sum = sum((updates[i] for i in detected_true), np.zeros_like(X))
    lower = float(np.linalg.norm(mal_sum)) / (p * k * b)
    upper, sampled = _max_subset_error(local_models, X, k, exhaustive_limit, samples, rng)
    return BoundReport("estimation_error", lower, observed, upper, sampled)


def corrected_estimation_lower(detected_true, updates, p, b, k):
    """``(1/b - 1) ||sum delta_c|| / (p k)``: the estimation-error floor that
    follows from ``theta_c - X = (1 - 1/psi) delta_c`` for aligned updates."""
    mal_sum = sum(updates[i] for i in detected_true)
    return max(0.0, 1.0 / b - 1.0) * float(np.linalg.norm(mal_sum)) / (p * k)
