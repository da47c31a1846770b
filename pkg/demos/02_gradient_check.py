"""Checking hand-written backward passes against finite differences.

Every op records its own adjoint. Here a one-stack network is checked end to
end, and a deliberately wrong backward shows what a failure looks like.

    python demos/02_gradient_check.py
"""

import numpy as np

from mcapose import NetworkConfig, Tensor, build_network, total_loss
from mcapose.network import variant_config
from mcapose import tensor as T
from mcapose.gradcheck import grad_check

rng = np.random.default_rng(0)

# a tiny full network: every op, every attention path
cfg = variant_config(NetworkConfig(stacks=1, parts=2, input_size=16, channels=4, depth=1, seed=0), "BL+MS+HRU+MR+HP")
net = build_network(cfg)
x = rng.normal(size=(2, 3, 16, 16))
y = rng.uniform(size=(2, 2, 4, 4))
report = grad_check(lambda: total_loss(net(x), y), net.parameters(), sample=200, rng=rng)
print(f"1-stack {cfg.variant}: {report.rel_error.size} coordinates, worst relative error {report.max_rel_error:.2e}",
      "PASS" if report else "FAIL")


a = Tensor(rng.normal(size=5), requires_grad=True)


# a broken op: claims d(x^2)/dx = 3x instead of 2x
def broken_square():
    def bw(g, grads):
        T._send(grads, a, 3.0 * a.data * g)

    return T.sum_all(T._make(a.data**2, (a,), "broken_square", bw))


bad = grad_check(broken_square, a)
print(f"broken square: worst relative error {bad.max_rel_error:.3f}", "PASS" if bad else "FAIL (as it should)")
