"""Model persistence.

A checkpoint is a single JSON document carrying the architecture, weights,
biases, the run seed and epoch, and optionally the per-sample budget ledger.
Serialization uses Python's shortest round-trip float repr, so save followed
by load reproduces every parameter bitwise.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataFormatError
from .net import Network

FORMAT_VERSION = 1


def atomic_write_text(path: str, text: str) -> None:
    """Write through a sibling temp file and rename, so a reader never sees a
    partial file and a crashed run leaves no output at the target path."""
    path = os.path.abspath(path)
    directory = os.path.dirname(path)
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=os.path.basename(path) + ".")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.chmod(tmp, 0o644)  # mkstemp defaults to 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class Checkpoint:
    net: Network
    seed: int
    epoch: int
    epsilon_ledger: dict[int, float] | None = None
    config_hash: str | None = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(
    path: str,
    net: Network,
    seed: int,
    epoch: int,
    epsilon_ledger: dict[int, float] | None = None,
    config_hash: str | None = None,
) -> None:
    """Serialize the model to ``path`` atomically.

    The document is written with sorted keys and no incidental whitespace, so
    identical runs produce byte-identical files.
    """
    doc: dict = {
        "format_version": FORMAT_VERSION,
        "arch": net.arch,
        "activations": list(net.activations),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "seed": int(seed),
        "epoch": int(epoch),
    }
    if epsilon_ledger is not None:
        doc["epsilon_ledger"] = {str(k): float(v) for k, v in sorted(epsilon_ledger.items())}
    if config_hash is not None:
        doc["config_hash"] = config_hash
    atomic_write_text(path, json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_checkpoint(path: str) -> Checkpoint:
    """Parse and validate a checkpoint file.

    Rejects unknown format versions, missing fields, and weight arrays that
    disagree with the declared architecture. Never modifies the file.
    """
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as e:
        raise DataFormatError(f"cannot read checkpoint {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise DataFormatError(f"{path}: checkpoint must be a JSON object")

    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported checkpoint format_version {version!r} "
            f"(this build reads version {FORMAT_VERSION})")
    for key in ("arch", "activations", "weights", "biases", "seed", "epoch"):
        if key not in doc:
            raise DataFormatError(f"{path}: checkpoint missing field {key!r}")

    arch = [int(v) for v in doc["arch"]]
    try:
        weights = [np.asarray(w, dtype=float) for w in doc["weights"]]
        biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
    except (TypeError, ValueError) as e:
        raise DataFormatError(f"{path}: malformed parameter arrays: {e}") from e
    expected = [(arch[i + 1], arch[i]) for i in range(len(arch) - 1)]
    if [w.shape for w in weights] != expected:
        raise DataFormatError(
            f"{path}: weight shapes {[w.shape for w in weights]} do not match "
            f"declared arch {arch}")
    try:
        net = Network(weights=weights, biases=biases,
                      activations=[str(a) for a in doc["activations"]])
    except ConfigurationError as e:
        raise DataFormatError(f"{path}: invalid network: {e}") from e

    ledger = None
    if doc.get("epsilon_ledger") is not None:
        raw = doc["epsilon_ledger"]
        if not isinstance(raw, dict):
            raise DataFormatError(f"{path}: epsilon_ledger must be an object")
        ledger = {int(k): float(v) for k, v in raw.items()}

    return Checkpoint(net=net, seed=int(doc["seed"]), epoch=int(doc["epoch"]),
                      epsilon_ledger=ledger, config_hash=doc.get("config_hash"),
                      meta={k: doc[k] for k in doc
                            if k not in ("arch", "activations", "weights", "biases")})
