from .export import ExportJob, export_trace
from .models import FixedLogitModel, HFModel, ModelLoadError, load_model

__all__ = ["ExportJob", "export_trace", "FixedLogitModel", "HFModel",
           "ModelLoadError", "load_model"]
