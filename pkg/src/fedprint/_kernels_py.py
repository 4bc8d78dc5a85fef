"""Pure numpy fallback for the compiled SGD kernel.

Mirrors ``_kernels.pyx`` operation for operation so both backends follow the
same arithmetic path (BLAS gemm, then bias add, then elementwise updates).
"""

import numpy as np


def sgd_epochs(weights, biases, x, y, orders, lr, batch_size):
    """Run minibatch SGD in place on ``weights``/``biases``.

    ``orders`` holds one row of frame indices per epoch; consecutive slices of
    ``batch_size`` form the minibatches, the last partial batch included.
    """
    n_layers = len(weights)
    for order in orders:
        for start in range(0, order.shape[0], batch_size):
            idx = order[start:start + batch_size]
            rows = idx.shape[0]
            acts = [x[idx]]
            for l in range(n_layers - 1):
                z = acts[-1] @ weights[l].T
                z += biases[l]
                np.maximum(z, 0.0, out=z)
                acts.append(z)
            delta = acts[-1] @ weights[-1].T
            delta += biases[-1]
            delta -= delta.max(axis=1, keepdims=True)
            np.exp(delta, out=delta)
            delta /= delta.sum(axis=1, keepdims=True)
            delta[np.arange(rows), y[idx]] -= 1.0
            delta /= rows
            for l in range(n_layers - 1, -1, -1):
                a = acts[l]
                gw = delta.T @ a
                gb = delta.sum(axis=0)
                if l > 0:
                    delta = delta @ weights[l]
                    delta *= a > 0.0
                weights[l] -= lr * gw
                biases[l] -= lr * gb
