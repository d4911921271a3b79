"""Export manifest: which source layer becomes which FWF layer."""

import json
from dataclasses import dataclass, field

from .errors import ExportError


@dataclass
class ExportManifest:
    source_model: str
    mapping: dict = field(default_factory=dict)  # source layer -> FWF layer
    preprocessing: str = ""                      # input domain the net expects


def read_manifest(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ExportError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ExportError(f"manifest {path} is not valid JSON: {exc}") from exc
    for key in ("source_model", "mapping"):
        if key not in raw:
            raise ExportError(f"manifest {path} lacks required key {key!r}")
    if not isinstance(raw["mapping"], dict):
        raise ExportError(f"manifest {path}: mapping must be an object")
    return ExportManifest(source_model=raw["source_model"],
                          mapping=dict(raw["mapping"]),
                          preprocessing=raw.get("preprocessing", ""))


def write_manifest(manifest, path):
    payload = {
        "source_model": manifest.source_model,
        "mapping": manifest.mapping,
        "preprocessing": manifest.preprocessing,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
