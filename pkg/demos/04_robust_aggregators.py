"""Robust aggregation against a single loud update and against aligned ones.

A lone large update is easy to reject. Several small updates pointing the
same way look like ordinary clients to distance- and rank-based rules.
"""
import numpy as np

from fedpois.attacks import ClientUpdate
from fedpois.defense import DefenseConfig, aggregate

rng = np.random.default_rng(0)
benign = rng.normal(0, 1, size=(8, 5))
direction = np.ones(5) / np.sqrt(5)


def show(title, malicious):
    ups = [ClientUpdate(i, 0, v) for i, v in enumerate(np.vstack([benign, malicious]))]
    print(title)
    for kind in ("fedavg", "krum", "median", "trimmed_mean", "rlr"):
        out = aggregate(ups, DefenseConfig(kind, krum_f=2, trim_beta=0.2, rlr_threshold=4))
        print(f"  {kind:>12}: projection on attack direction {out @ direction:+.3f}")


show("one update of norm 50:", 50 * direction[None, :])
show("three aligned updates of benign-sized norm:", np.repeat(2.2 * direction[None, :], 3, axis=0))
