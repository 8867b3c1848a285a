# The numerical backbone: a tiny reverse-mode tape over numpy arrays, the
# Adam optimizer, and finite-difference validation of every gradient the
# training loops rely on.
#
# Run:  python demos/06_gradient_checking.py

import numpy as np

from fopser import Tensor, adam_init, adam_step, grad_check
from fopser.autodiff import softmax
from fopser.gradsuite import tiny_grad_reports

# Build a graph; backward() fills .grad on every leaf that requires it.
w = Tensor(np.array([[0.5, -1.0], [2.0, 0.3]]), requires_grad=True)
x = Tensor(np.array([[1.0], [2.0]]))
loss = (softmax((w @ x).reshape(1, 2)) * Tensor(np.array([[1.0, 0.0]]))).sum()
loss.backward()
print("loss:", loss.item())
print("dloss/dw:\n", w.grad)

# grad_check compares that against central differences in float64.
report = grad_check(
    lambda: (softmax((w @ x).reshape(1, 2)) * Tensor(np.array([[1.0, 0.0]]))).sum(),
    [("w", w)],
)
print(f"\nsoftmax-graph check: max rel err {report.max_error:.2e} -> {'PASS' if report.passed else 'FAIL'}")

# Adam on f(x) = x^2 walks to the minimum.
params = [np.array([1.0])]
state = adam_init(params, lr=0.05)
for step in range(200):
    params, state = adam_step(params, [2.0 * params[0]], state)
print(f"\nAdam on x^2 from 1.0: x = {params[0][0]:.5f} after {state.step} steps")

# The full-model validation the test suite runs: every parameter tensor of the
# prediction loss and the fine-tuning loss, coordinate by coordinate.
print()
for title, rep in tiny_grad_reports():
    print(f"{title}: max rel err {rep.max_error:.2e} over {len(rep.per_param)} tensors "
          f"-> {'PASS' if rep.passed else 'FAIL'}")
