"""Python surface of the gradattn C++ core.

The compiled ``_gradattn`` extension carries every exported operation; this
package re-exports it. Installed wheels place the extension inside the
package; a source-tree checkout can instead put the CMake build's
``bindings`` directory on ``PYTHONPATH``, where it is found top-level.
"""

try:
    from ._gradattn import *  # noqa: F401,F403
except ImportError:  # source tree: extension lives in the build directory
    from _gradattn import *  # noqa: F401,F403

__all__ = [name for name in dir() if not name.startswith("_")]
