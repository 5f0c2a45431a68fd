# every class ending in Analysis, keyed by name, so experiments can be created from a string.
from dc_bdl_tools.Utils.analysis_registry import discover_analyses

analysis_dict = discover_analyses(__name__, __path__)
__all__ = list(analysis_dict.keys())
