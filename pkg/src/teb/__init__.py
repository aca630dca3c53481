"""Dual-stream sequence prediction with a transfer-entropy bottleneck.

Subpackages: ``dist`` (probability primitives), ``nets``/``models``
(encoders, decoders, assembled architectures), ``objectives`` (training
losses), ``tasks`` (synthetic dataset generators), ``infoexact`` (exact
information oracles), ``harness`` (training/sweeps), ``evaluate``
(post-hoc metrics), ``cli`` (the ``teb`` command).
"""

__version__ = "0.1.0"
