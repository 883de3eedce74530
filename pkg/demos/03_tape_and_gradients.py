"""
The reverse-mode tape on its own: fit a sine, check every gradient
==================================================================

The training code never calls an external autodiff framework; it records
forward operations on a tape of numpy arrays and walks it backwards.  This
script uses that engine directly: a two-layer perceptron is fit to sin(x)
with Adam, and the analytic gradients are verified against central finite
differences (the same audit the test suite applies to every layer kind
and loss).
"""
import numpy as np

from latentflow.autodiff import (TANH, ParamStore, adam_step, apply_sequence,
                                 fc, grad_check, grads_from_leaves,
                                 init_sequence, tensor)

rng = np.random.default_rng(0)
specs = [fc(1, 32), TANH, fc(32, 1)]
store = ParamStore()
init_sequence(specs, store, rng, "net.")

x = rng.uniform(-np.pi, np.pi, (256, 1))
y = np.sin(x)


def loss_fn(leaves):
    out = apply_sequence(specs, leaves, tensor(x), "net.")
    diff = out - tensor(y)
    return (diff * diff).sum() * (1.0 / len(x))


# finite-difference audit at the random initialization
err = grad_check(loss_fn, store.raw_copy())
print(f"gradient audit: max relative error {err:.2e} "
      f"over {store.n_params()} parameters")

for step in range(1, 2001):
    leaves = store.leaves()
    loss = loss_fn(leaves)
    loss.backward()
    adam_step(store, grads_from_leaves(leaves), lr=1e-2)
    if step % 400 == 0:
        print(f"step {step:4d}  mse {loss.item():.5f}")

xt = np.linspace(-np.pi, np.pi, 9).reshape(-1, 1)
pred = apply_sequence(specs, store.leaves(), tensor(xt), "net.").data
for xi, pi in zip(xt.ravel(), pred.ravel()):
    bar = " " * int((pi + 1.1) * 20) + "*"
    print(f"x={xi:+5.2f}  sin={np.sin(xi):+5.2f}  net={pi:+5.2f}  {bar}")
