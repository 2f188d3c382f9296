class GatewayError(Exception):
    """Base for everything this package raises on purpose."""


class BindingError(GatewayError):
    """A model binding is malformed or conflicts with another."""


class StartupError(GatewayError):
    """A binding's model could not be loaded; names the binding."""
