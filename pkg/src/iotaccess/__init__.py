"""Ledger-mediated access control and payments for offline IoT devices."""

import importlib

__version__ = "0.1.0"

__all__ = [
    "ScenarioConfig",
    "ScenarioReport",
    "compare_traces",
    "run",
    "run_matrix",
]


def __getattr__(name):
    # resolved lazily so that importing the device module alone never loads the ledger
    if name in __all__:
        return getattr(importlib.import_module(".scenario", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
