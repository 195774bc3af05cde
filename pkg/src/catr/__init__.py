"""Audio-visual video segmentation at desk scale.

Decoupled audio-visual transformer encoding, blockwise-gated feature
fusion, audio-constrained query decoding with dynamic mask kernels, a
set-matching loss, synthetic data, metrics, and an attention-cost model,
all on a self-contained numpy autodiff engine.
"""

__version__ = "0.1.0"

from .tensor import Tensor, gradcheck, no_grad  # noqa: F401
