"""Convert layers-model bundles into the FWF portable weight format."""

from .bundle import Bundle, forward, read_bundle, reference_bundle, write_bundle
from .errors import BundleError, ExportError
from .export import export, manifest_path_for
from .fwf import read_fwf, write_fwf
from .manifest import ExportManifest, read_manifest, write_manifest

__all__ = [
    "Bundle",
    "BundleError",
    "ExportError",
    "ExportManifest",
    "export",
    "forward",
    "manifest_path_for",
    "read_bundle",
    "read_fwf",
    "read_manifest",
    "reference_bundle",
    "write_bundle",
    "write_fwf",
    "write_manifest",
]
