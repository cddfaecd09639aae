"""ctcmt: parallel one-pass machine translation.

A state-splitting Transformer trained with connectionist temporal
classification decodes every output position in a single forward pass;
the package bundles the model, training loop, translation pipeline, and
a latency/throughput benchmark harness.
"""

__version__ = "0.1.0"

from . import ctc, data, evalbench, inference, kernels, model, numerics, training  # noqa: F401
