"""Label skew under a Dirichlet split, and what the trigger does to an input.

Smaller alpha gives each client fewer dominant classes; the share of a
client's data taken by its largest class is a quick skew gauge.
"""
import numpy as np

from fedpois.data import DatasetMeta, PartitionConfig, TriggerSpec, dirichlet_partition, generate_synthetic, poison

data = generate_synthetic(DatasetMeta(num_classes=4, feature_dim=20, num_samples=8000), 4.0, seed=0)
print("pooled label histogram:", data.label_histogram())

for alpha in (0.05, 0.5, 5.0, 50.0):
    shards = dirichlet_partition(data, PartitionConfig(alpha, num_clients=50, min_samples_per_client=2, seed=0))
    top = np.mean([s.label_histogram.max() / len(s) for s in shards])
    sizes = [len(s) for s in shards]
    print(f"alpha={alpha:<5}  mean top-class share {top:.2f}  shard sizes {min(sizes)}..{max(sizes)}")

trig = TriggerSpec.default(data.feature_dim, num_coords=4, magnitude=2.0, target_label=0)
print("\ntrigger adds", trig.pattern, "at coordinates", trig.coordinates)
bad = poison(data.subset(range(3)), trig, 1.0)
print("clean labels", data.y[:3], "-> poisoned labels", bad.y)
