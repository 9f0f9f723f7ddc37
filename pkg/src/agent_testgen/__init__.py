"""Goal-driven GUI test generation against a simulated device.

The pipeline selects actions with a language-model selector, observes the
resulting UI changes, verifies completion from both the textual dump and a
screenshot, ranks several independent runs, and emits replayable scripts.
"""

from __future__ import annotations

__version__ = "0.1.0"
