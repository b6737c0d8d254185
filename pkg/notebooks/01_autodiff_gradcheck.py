"""
Checking gradients of the tensor engine
=======================================

Every op records how to push a gradient back to its inputs.  Here we build a
few graphs by hand, run ``backward`` and compare against central differences.
"""

import numpy as np

from aggcn import numerics as nx
from aggcn.numerics import Tensor

# a tiny linear layer: y = relu(x W^T + b), loss = sum(y * r)
rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(4, 3)))
w = Tensor(rng.normal(size=(2, 3)), requires_grad=True, name="w")
b = Tensor(np.zeros(2), requires_grad=True, name="b")
r = Tensor(rng.normal(size=(4, 2)))

loss = nx.sum_all(nx.mul(nx.relu(nx.linear(x, w, b)), r))
nx.backward(loss)
print("loss", loss.item())
print("dL/dw\n", w.grad)

# gradients accumulate on leaves until zeroed, like most engines
nx.backward(loss)
print("after a second backward, dL/db doubles:", b.grad)
nx.zero_grads([w, b])

# the finite difference harness rebuilds the graph on every call
def f():
    return nx.sum_all(nx.mul(nx.relu(nx.linear(x, w, b)), r))

report = nx.finite_diff_check(f, [w, b])
print("worst relative error", report.worst, "passed", report.passed)

# softmax rows always sum to one, even for huge scores
scores = Tensor([[1e6, 1e6 - 1.0, 0.0], [0.0, 0.0, 0.0]])
print(nx.softmax_rows(scores).data.sum(axis=1))

# the whole model, end to end, on a 6 token instance
from aggcn import model as M
from aggcn.model import Instance, ModelConfig
from aggcn.depgraph import DependencyGraph
from aggcn.train import cross_entropy

g = DependencyGraph(["the", "drug", "stops", "the", "gene", "."], [2, 3, 0, 5, 3, 3])
inst = Instance(g, ((2, 2), (5, 5)), 1, "toy")
cfg = ModelConfig(n_heads=2, n_blocks=2, sublayers=(2, 4), d=8, d_word=8, n_labels=3)
model = M.init_model(cfg, [M.PAD, M.UNK, "the", "drug", "stops", "gene", "."], ["a", "b", "c"], nx.Rng(0))
report = nx.finite_diff_check(lambda: cross_entropy(M.classify(inst, model), inst.label), model.parameters())
print(f"{sum(p.size for p in model.parameters())} parameters, worst relative error {report.worst:.2e}")
