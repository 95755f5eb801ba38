"""Posterior archives: in-memory container plus on-disk persistence.

An archive is a directory of one ``.npy`` file per stored array and a
``manifest.json`` written last. A manifest that is missing, or that lists
arrays whose files are absent or mismatched, marks the archive as partial
and loading refuses it. Saving the same archive twice produces
byte-identical directories, which is what makes seeded runs auditable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArchiveError

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"

__all__ = ["PosteriorArchive", "FORMAT_VERSION"]


@dataclass
class PosteriorArchive:
    """Thinned posterior draws of every sampled parameter.

    ``arrays`` maps parameter names to draw matrices. Chain-indexed
    parameters lead with (n_chains, n_draws, ...); static arrays such as
    site coordinates carry no chain axis and are listed in the manifest's
    ``static`` set.
    """

    manifest: dict
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def model(self) -> str:
        return self.manifest["model"]

    @property
    def n_chains(self) -> int:
        return int(self.manifest["n_chains"])

    @property
    def n_draws(self) -> int:
        """Retained draws per chain."""
        return int(self.manifest["n_draws_per_chain"])

    def param(self, name: str) -> np.ndarray:
        try:
            return self.arrays[name]
        except KeyError:
            raise KeyError(
                f"archive has no parameter {name!r}; available: "
                f"{sorted(self.arrays)}"
            ) from None

    def stacked(self, name: str) -> np.ndarray:
        """Chain-flattened draws: (n_chains * n_draws, ...)."""
        if name in self.manifest["static"]:
            raise ValueError(f"{name!r} is a static array, not chained draws")
        arr = self.param(name)
        return arr.reshape((-1,) + arr.shape[2:])

    def save(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        listing = {}
        for name in sorted(self.arrays):
            arr = self.arrays[name]
            np.save(path / f"{name}.npy", arr)
            listing[name] = {"shape": list(arr.shape), "dtype": str(arr.dtype)}
        manifest = dict(self.manifest)
        manifest["format_version"] = FORMAT_VERSION
        manifest["files"] = listing
        text = json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=True)
        (path / MANIFEST_NAME).write_text(text + "\n")

    @classmethod
    def load(cls, path) -> "PosteriorArchive":
        path = Path(path)
        manifest_path = path / MANIFEST_NAME
        if not manifest_path.is_file():
            raise ArchiveError(
                f"no manifest at {manifest_path}; archive is partial or not an archive"
            )
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ArchiveError(
                f"unsupported archive format {manifest.get('format_version')!r}"
            )
        arrays = {}
        for name, meta in manifest["files"].items():
            file = path / f"{name}.npy"
            if not file.is_file():
                raise ArchiveError(f"archive is partial: missing {file.name}")
            arr = np.load(file)
            if list(arr.shape) != meta["shape"] or str(arr.dtype) != meta["dtype"]:
                raise ArchiveError(
                    f"archive is corrupt: {file.name} has shape {arr.shape} "
                    f"dtype {arr.dtype}, manifest says {meta}"
                )
            arrays[name] = arr
        manifest = {
            k: v for k, v in manifest.items() if k not in ("files", "format_version")
        }
        return cls(manifest=manifest, arrays=arrays)
