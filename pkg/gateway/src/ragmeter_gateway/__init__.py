"""HTTP inference gateway for the ragmeter wire protocol."""

from .bindings import ModelBinding, load_bindings
from .errors import BindingError, StartupError
from .fixtures import FixtureStore
from .service import create_app

__version__ = "0.1.0"

__all__ = [
    "BindingError",
    "FixtureStore",
    "ModelBinding",
    "StartupError",
    "create_app",
    "load_bindings",
    "__version__",
]
