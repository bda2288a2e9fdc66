"""Multi-label-domain human parsing with scalable semantic transfer.

Modules: ``domains`` (label domains and cross-domain links), ``synthgen``
(synthetic corpus), ``parsenet`` (network and heads), ``msa``/``mse``/``mst``
(auxiliary modules), ``trainer``, ``evalkit`` and ``cli``.
"""

__version__ = "0.1.0"
