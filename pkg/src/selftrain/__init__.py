"""Teacher-student self-training with calibrated, entropy-filtered pseudo-labels.

Modules: ``data`` (synthetic splits and files), ``model`` (numpy classifiers
and losses), ``calibration``, ``selection``, ``sampling``, ``openset``,
``pipeline`` (the iterative loop and presets), ``report`` and ``cli``.
"""

__version__ = "0.1.0"
