from .io import SchemaVersionError, read_run
from .panels import PANEL_KINDS, PanelSpec, render

__all__ = ["PANEL_KINDS", "PanelSpec", "SchemaVersionError", "read_run",
           "render"]
__version__ = "0.1.0"
