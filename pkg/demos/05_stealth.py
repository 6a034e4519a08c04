"""Do the malicious updates stand out?

Runs a short attack with the clip bound set to the median benign update norm
and compares malicious against benign updates on angle and norm with Welch's
t, Brown-Forsythe and KS tests plus the 3-sigma rule.
"""
import math

from fedpois.config import ExperimentConfig
from fedpois.engine import run_experiment
from fedpois.metrics import stealth_battery

cfg = ExperimentConfig().replace(**{
    "data.num_samples": 6000, "data.num_clients": 50, "fl.num_rounds": 40,
    "attack.compromised_fraction": 0.1, "attack.clip_bound": "auto", "attack.trojan_min_benign_ac": 0.7,
})
res = run_experiment(cfg)
print(f"clip bound A = {res.calibrated_norm:.3f}")
ben_a, mal_a, ben_n, mal_n = [], [], [], []
for r in res.records:
    for cid, ang, norm in zip(r.sampled_ids, r.background_angles, r.update_norms):
        if math.isnan(ang):
            continue
        if cid in res.compromised:
            mal_a.append(ang)
            mal_n.append(norm)
        else:
            ben_a.append(ang)
            ben_n.append(norm)
for key, value in sorted(stealth_battery(ben_a, mal_a, ben_n, mal_n).items()):
    print(f"{key:>20}: {value:.4g}")
