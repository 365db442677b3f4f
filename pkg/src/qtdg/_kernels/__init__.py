"""Monomial table kernels with backend selection at import time.

The compiled Cython core is used when available; setting QTDG_PURE_PYTHON=1
(or a failed build) selects the numpy fallback.  Both backends implement the
same two functions; ``BACKEND`` records which one is active.
"""

from __future__ import annotations

import os

from . import _py

if os.environ.get("QTDG_PURE_PYTHON", "").strip() not in ("", "0"):
    BACKEND = "python"
    monomial_values = _py.monomial_values
    monomial_tables = _py.monomial_tables
else:
    try:
        from . import _core

        BACKEND = "cython"
        monomial_values = _core.monomial_values
        monomial_tables = _core.monomial_tables
    except ImportError:
        BACKEND = "python"
        monomial_values = _py.monomial_values
        monomial_tables = _py.monomial_tables

__all__ = ["BACKEND", "monomial_values", "monomial_tables"]
