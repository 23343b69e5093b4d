"""imgsandbox: isolated execution service for image and computation snippets."""

__version__ = "0.1.0"

from .service import ExecutionRequest, ExecutionResult, execute, helper_versions

__all__ = ["ExecutionRequest", "ExecutionResult", "execute", "helper_versions"]
