"""Instance builders shared across the test modules."""

from __future__ import annotations

import random

from dynmatch import INFINITE, AgentType, MarketInstance, MatchValueMatrix


def make_instance(types, values):
    """types: list of (label, lam, mu) with mu None meaning impatient.
    values: dict {(i, j): v} on unordered index pairs."""
    ts = tuple(
        AgentType(i, label, lam, INFINITE if mu is None else mu)
        for i, (label, lam, mu) in enumerate(types)
    )
    return MarketInstance(types=ts, values=MatchValueMatrix(len(ts), dict(values)))


def one_type(lam=1.0, mu=1.0, v=1.0):
    return make_instance([("solo", lam, mu)], {(0, 0): v})


def patient_impatient(lam_p=1.0, mu_p=1.0, lam_i=1.0, v=1.0):
    """The two-type market where all value sits on the cross pair and one
    side leaves instantly."""
    return make_instance(
        [("patient", lam_p, mu_p), ("flash", lam_i, None)], {(0, 1): v}
    )


def random_instance(rng: random.Random, n_types, *, allow_impatient=False,
                    rate_lo=0.5, rate_hi=2.0):
    """Random market with rates in [rate_lo, rate_hi] and values in [0, 1].

    Every unordered pair gets a value (possibly 0 is excluded by uniform;
    sprinkle explicit zeros so sparse matrices are exercised too).
    """
    types = []
    for i in range(n_types):
        lam = rng.uniform(rate_lo, rate_hi)
        if allow_impatient and rng.random() < 0.25:
            mu = None
        else:
            mu = rng.uniform(rate_lo, rate_hi)
        types.append((f"t{i}", lam, mu))
    values = {}
    for i in range(n_types):
        for j in range(i, n_types):
            if rng.random() < 0.15:
                continue  # leave the pair at the implicit zero
            values[(i, j)] = rng.uniform(0.0, 1.0)
    return make_instance(types, values)


def rates_of(instance):
    return [t.arrival_rate for t in instance.types]


def departs_of(instance):
    return [
        float("inf") if t.impatient else t.departure_rate for t in instance.types
    ]


def dense_values(instance):
    return [list(row) for row in instance.values.dense()]
