"""Quaternion products, the real block form of a quaternion layer, and its parameter count."""

from __future__ import annotations

import numpy as np

from qnlp.qcore import QTensor, Quaternion, q_hamilton, qt_hamilton
from qnlp.qlayers import QLinear, hamilton_matrix_form, param_count

rng = np.random.default_rng(0)

# The imaginary units multiply cyclically, and the order matters.
i, j, k = Quaternion(0, 1, 0, 0), Quaternion(0, 0, 1, 0), Quaternion(0, 0, 0, 1)
print("i*j =", q_hamilton(i, j))
print("j*i =", q_hamilton(j, i))
print("k*k =", q_hamilton(k, k))

# A product w*q is a 4x4 real matrix built from w acting on the components of q.
w = Quaternion.from_array(rng.standard_normal(4))
q = Quaternion.from_array(rng.standard_normal(4))
m = hamilton_matrix_form(w)
print("\nmatrix form of w:\n", np.round(m, 3))
print("max |m @ q - w*q| =", np.max(np.abs(m @ q.as_array() - q_hamilton(w, q).as_array())))

# Norms multiply.
print("|w*q| - |w||q| =", abs(q_hamilton(w, q)) - abs(w) * abs(q))

# A quaternion layer from 3 to 2 quaternions is a real 12 -> 8 map
# whose 96 matrix entries come from only 24 free weights.
layer = QLinear(3, 2, rng=rng)
block = layer.block_matrix()
print("\nreal block shape:", block.shape, "distinct |values|:", len(np.unique(np.abs(block))))
report = param_count(layer)
print("weights:", report.weights, "real reference:", report.reference_weights,
      "ratio:", report.weight_ratio)

# Batched products work on component-major arrays of shape (4, ...).
a, b = QTensor.random(rng, (2, 3)), QTensor.random(rng, (2, 3))
print("\nelementwise product shape:", qt_hamilton(a, b).shape)
