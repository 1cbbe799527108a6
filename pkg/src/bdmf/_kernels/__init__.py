"""Event-loop kernels: compiled core with a pure numpy fallback.

``backend_for(table)`` picks the implementation at runtime: the compiled
core when it imported successfully and the model's interaction is
tabulated; the fallback otherwise.  Both expose the same four functions
(run_system, run_coupled, run_driven, run_chaos) with one draw protocol,
so the choice never changes results, only speed.
"""

from . import fallback
from .common import (
    BudgetExceeded,
    DEFAULT_BUDGET,
    KernelTable,
    TableOverflow,
    build_table,
    grow_table,
)

try:
    from . import _core as compiled
    HAVE_COMPILED = True
except ImportError:
    compiled = None
    HAVE_COMPILED = False


def backend_for(table: KernelTable, backend: str = None):
    """Resolve the kernel module for a tabulated model.

    ``backend`` forces a choice: "compiled", "fallback", or None (auto).
    """
    if backend == "fallback":
        return fallback
    if backend == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernels are not available")
        if not table.kernel_compatible:
            raise RuntimeError("model interaction is not tabulated; only the fallback can run it")
        return compiled
    if backend is not None:
        raise ValueError(f"unknown backend {backend!r}")
    if HAVE_COMPILED and table.kernel_compatible:
        return compiled
    return fallback
