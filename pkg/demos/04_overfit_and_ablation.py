"""Overfitting a handful of images, per variant.

Trains each step of the ablation ladder (plain hourglass up to the full
multi-context model) on the same eight figures and reports parameter count,
final loss and training-set PCK. Short by default; pass a step count to go
longer (a few thousand steps drive the full model to PCK 1.0).

    python demos/04_overfit_and_ablation.py [steps]
"""

import sys
import time

from mcapose import NetworkConfig, ablation_matrix, build_network
from mcapose.data import SynthSpec, synth_generate
from mcapose.training import TrainSettings, evaluate, fit

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 100
data = synth_generate(SynthSpec(seed=7), 8)
base = NetworkConfig(stacks=2, channels=16, input_size=64, seed=0)

print(f"{'variant':20s} {'params':>8s} {'loss0':>10s} {'loss':>10s} {'PCK@0.2':>8s} {'time':>6s}")
for cfg in ablation_matrix(base):
    net = build_network(cfg)
    t0 = time.perf_counter()
    hist = fit(net, data, TrainSettings(steps=steps, batch_size=8, lr=2.5e-4))
    rep, _, _ = evaluate(net, data)
    print(f"{cfg.variant:20s} {net.num_parameters():8d} {hist[0]['loss']:10.2f} {hist[-1]['loss']:10.3f} "
          f"{rep.mean:8.3f} {time.perf_counter() - t0:5.0f}s")
