"""Repository pattern for fitted artifacts on disk.

Each artifact lives in ``<root>/<kind>/<key>/`` as ``arrays.npz`` plus a
``manifest.json`` holding its metadata and the SHA-256 of the array file.
Keys are configuration hashes, so a changed parameter never reuses a stale fit.
"""

import hashlib
import json
import shutil
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, Generic, Optional, Tuple, TypeVar

import numpy as np

from .. import __version__
from ..core.exceptions import ArtifactError
from ..core.logging import get_logger
from ..engine.encoder import DownstreamDecoder, EncoderModel
from ..engine.reconstruct import PcaBasis
from ..engine.synthdata import LabelBank, MixtureModel, SampleSet, SyntheticDataset
from ..schemas.config import DataConfig

logger = get_logger("artifacts")

T = TypeVar("T")

ARRAYS_FILE = "arrays.npz"
MANIFEST_FILE = "manifest.json"


def content_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def data_key(cfg: DataConfig) -> str:
    """Cache key of a dataset: hash of its generating parameters."""
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class BaseRepository(ABC, Generic[T]):
    """Abstract artifact repository keyed by string."""

    kind: str = ""

    def __init__(self, root: Path) -> None:
        self.root = Path(root)

    def path_for(self, key: str) -> Path:
        return self.root / self.kind / key

    def exists(self, key: str) -> bool:
        return (self.path_for(key) / MANIFEST_FILE).is_file()

    def delete(self, key: str) -> bool:
        """Remove an artifact; False when there was nothing to remove."""
        path = self.path_for(key)
        if not path.exists():
            return False
        try:
            shutil.rmtree(path)
        except OSError as e:
            logger.error(f"Error deleting {self.kind} artifact {key}: {e}")
            raise ArtifactError(f"Failed to delete {path}: {e}", {"path": str(path)}) from e
        return True

    @abstractmethod
    def to_arrays(self, item: T) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
        """Split an item into named arrays and JSON metadata."""

    @abstractmethod
    def from_arrays(self, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> T:
        """Rebuild an item from its arrays and metadata."""

    def save(self, key: str, item: T) -> Path:
        path = self.path_for(key)
        arrays, meta = self.to_arrays(item)
        try:
            path.mkdir(parents=True, exist_ok=True)
            array_path = path / ARRAYS_FILE
            with array_path.open("wb") as handle:
                np.savez(handle, **arrays)
            manifest = {
                "kind": self.kind,
                "key": key,
                "version": __version__,
                "sha256": content_hash(array_path),
                "meta": meta,
            }
            (path / MANIFEST_FILE).write_text(
                json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
            )
        except OSError as e:
            logger.error(f"Error saving {self.kind} artifact {key}: {e}")
            raise ArtifactError(f"Failed to write {path}: {e}", {"path": str(path)}) from e
        logger.debug(f"Saved {self.kind} artifact {key} to {path}")
        return path

    def get(self, key: str) -> Optional[T]:
        """Load an artifact, or None when it was never saved."""
        if not self.exists(key):
            return None
        path = self.path_for(key)
        try:
            manifest = json.loads((path / MANIFEST_FILE).read_text(encoding="utf-8"))
            array_path = path / ARRAYS_FILE
            if content_hash(array_path) != manifest["sha256"]:
                raise ArtifactError(
                    f"{self.kind} artifact {key} does not match its manifest hash",
                    {"path": str(array_path)},
                )
            with np.load(array_path, allow_pickle=False) as stored:
                arrays = {name: stored[name] for name in stored.files}
        except ArtifactError:
            raise
        except (OSError, KeyError, ValueError) as e:
            logger.error(f"Error loading {self.kind} artifact {key}: {e}")
            raise ArtifactError(f"Failed to read {path}: {e}", {"path": str(path)}) from e
        return self.from_arrays(arrays, manifest["meta"])


def _split_arrays(prefix: str, samples: SampleSet) -> Dict[str, np.ndarray]:
    return {
        f"{prefix}_pixels": samples.pixels,
        f"{prefix}_labels": samples.labels,
        f"{prefix}_ids": samples.sample_ids,
    }


def _split_from(prefix: str, arrays: Dict[str, np.ndarray]) -> SampleSet:
    return SampleSet(
        pixels=arrays[f"{prefix}_pixels"],
        labels=arrays[f"{prefix}_labels"],
        sample_ids=arrays[f"{prefix}_ids"],
        split=prefix,  # type: ignore[arg-type]
    )


class DatasetRepository(BaseRepository[SyntheticDataset]):
    """Generated datasets keyed by ``data_key``."""

    kind = "dataset"

    def to_arrays(self, item: SyntheticDataset):
        arrays = {
            "prototypes": item.prototypes,
            "label_bank": item.bank.embeddings,
            **_split_arrays("train", item.train),
            **_split_arrays("eval", item.eval),
        }
        return arrays, {"config": item.config.model_dump(mode="json")}

    def from_arrays(self, arrays, meta) -> SyntheticDataset:
        cfg = DataConfig.model_validate(meta["config"])
        return SyntheticDataset(
            config=cfg,
            prototypes=arrays["prototypes"],
            train=_split_from("train", arrays),
            eval=_split_from("eval", arrays),
            bank=LabelBank(embeddings=arrays["label_bank"]),
            mixture=MixtureModel(
                prototypes=arrays["prototypes"], component_std=cfg.pixel_noise_std
            ),
        )


class EncoderRepository(BaseRepository[EncoderModel]):
    kind = "encoder"

    def to_arrays(self, item: EncoderModel):
        arrays = {f"w{index}": w for index, w in enumerate(item.weights)}
        arrays["loss_history"] = np.asarray(item.loss_history, dtype=float)
        return arrays, {"kind": item.kind, "ridge": item.ridge, "layers": len(item.weights)}

    def from_arrays(self, arrays, meta) -> EncoderModel:
        weights = tuple(arrays[f"w{index}"] for index in range(meta["layers"]))
        return EncoderModel(
            kind=meta["kind"],
            weights=weights,
            ridge=float(meta["ridge"]),
            loss_history=tuple(float(v) for v in arrays["loss_history"]),
        )


class DecoderRepository(BaseRepository[DownstreamDecoder]):
    kind = "decoder"

    def to_arrays(self, item: DownstreamDecoder):
        arrays = {"matrix": item.matrix, "bias": item.bias}
        return arrays, {"ridge": item.ridge, "fit_mse": item.fit_mse}

    def from_arrays(self, arrays, meta) -> DownstreamDecoder:
        return DownstreamDecoder(
            matrix=arrays["matrix"],
            bias=arrays["bias"],
            ridge=float(meta["ridge"]),
            fit_mse=float(meta["fit_mse"]),
        )


class PcaRepository(BaseRepository[PcaBasis]):
    kind = "pca"

    def to_arrays(self, item: PcaBasis):
        arrays = {
            "mean": item.mean,
            "components": item.components,
            "explained_variance": item.explained_variance,
        }
        return arrays, {"total_variance": item.total_variance}

    def from_arrays(self, arrays, meta) -> PcaBasis:
        return PcaBasis(
            mean=arrays["mean"],
            components=arrays["components"],
            explained_variance=arrays["explained_variance"],
            total_variance=float(meta["total_variance"]),
        )


class ArtifactStore:
    """All artifact repositories under one cache root."""

    def __init__(self, root: Path) -> None:
        self.root = Path(root)
        self.datasets = DatasetRepository(self.root)
        self.encoders = EncoderRepository(self.root)
        self.decoders = DecoderRepository(self.root)
        self.pca = PcaRepository(self.root)
