"""Optional integrations for isspcert.

These modules depend on optional packages and are imported lazily.
"""

from __future__ import annotations
