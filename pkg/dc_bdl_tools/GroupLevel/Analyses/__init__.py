# Group* helpers are looked up by replacing Experiment with Group in the final analysis name.
from dc_bdl_tools.Utils.analysis_registry import discover_analyses

analysis_dict = discover_analyses(__name__, __path__)
__all__ = list(analysis_dict.keys())
