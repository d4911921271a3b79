class ExportError(Exception):
    """Raised when a bundle cannot be converted to FWF."""


class BundleError(Exception):
    """Raised when a source bundle is malformed or unreadable."""
