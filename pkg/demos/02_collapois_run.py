"""A short undefended run: the global model drifts toward the Trojaned model X.

Five of fifty clients push along the same direction X - theta each round they
are sampled. The printout tracks the distance to X, clean accuracy and the
backdoor success rate on benign clients' pooled test data.
"""
from fedpois.config import ExperimentConfig
from fedpois.engine import Simulation

cfg = ExperimentConfig().replace(**{
    "data.num_samples": 6000, "data.num_clients": 50, "fl.num_rounds": 40,
    "attack.compromised_fraction": 0.1, "attack.trojan_min_benign_ac": 0.7,
})
sim = Simulation(cfg)
print(f"compromised clients: {sim.compromised}")
print(f"X on its holdout: benign AC {sim.trojan.holdout_benign_ac:.3f}, attack SR {sim.trojan.holdout_attack_sr:.3f}")
for t in range(1, cfg.fl.num_rounds + 1):
    r = sim.run_round(t)
    if t % 5 == 0:
        print(f"round {t:3d}  attackers sampled {r.n_malicious_sampled}  dist_to_X {r.dist_to_X:7.3f}  "
              f"benign AC {r.benign_ac:.3f}  attack SR {r.attack_sr:.3f}")

res = sim.result()
for c in res.clusters:
    print(f"{c.label:>8}: {len(c.members):2d} clients  mean attack SR {c.mean_attack_sr:.3f}  CS {c.cs:.3f}")
