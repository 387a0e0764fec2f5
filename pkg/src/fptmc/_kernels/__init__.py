"""Kernel backend selection.

The compiled Cython core is preferred; the numpy fallback is used when the
extension is missing or FPTMC_FORCE_FALLBACK is set. Both expose the same
three entry points: ``program_eval``, ``functional_block``, ``euler_block``.
"""

from __future__ import annotations

import os

if os.environ.get("FPTMC_FORCE_FALLBACK", "") not in ("", "0"):
    from . import _fallback as _impl
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _fallback as _impl

BACKEND = _impl.BACKEND_NAME
program_eval = _impl.program_eval
functional_block = _impl.functional_block
euler_block = _impl.euler_block

from . import _fallback as fallback_module  # noqa: E402  (benchmark / parity tests)

try:
    from . import _core as compiled_module  # type: ignore[attr-defined]  # noqa: E402
except ImportError:
    compiled_module = None
