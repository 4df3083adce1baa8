"""The algebraic core: scaling batch-norm parameters scales its output.

Everything downstream of the firewall rests on one identity: replacing
(gamma, beta) with (w*gamma, w*beta) multiplies the batch-norm output by w
elementwise, because w*gamma*z + w*beta = w*(gamma*z + beta). This script
shows the identity on random tensors and the stability properties of the
other kernels.
"""

import numpy as np

from ibdpsc import BnParams, batchnorm_infer, conv2d, softmax

rng = np.random.default_rng(0)

x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
params = BnParams(
    gamma=rng.standard_normal(3).astype(np.float32),
    beta=rng.standard_normal(3).astype(np.float32),
    running_mean=rng.standard_normal(3).astype(np.float32),
    running_var=rng.random(3).astype(np.float32) + 0.1,
)

for omega in (0.5, 1.0, 1.5, 3.0):
    scaled = BnParams(*params.scaled(omega), params.running_mean,
                      params.running_var, params.epsilon)
    lhs = batchnorm_infer(x, scaled)
    rhs = omega * batchnorm_infer(x, params)
    gap = float(np.abs(lhs - rhs).max())
    print(f"omega={omega:4.1f}  max |bn(w*p) - w*bn(p)| = {gap:.2e}")

print()
print("conv2d with a 1x1 identity kernel reproduces its input:",
      np.array_equal(
          conv2d(x, np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1), None), x
      ))

logits = rng.standard_normal((4, 5)).astype(np.float32) * 10
rows = softmax(logits).sum(axis=1)
print("softmax row sums:", np.round(rows, 8))
