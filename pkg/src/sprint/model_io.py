"""Single-file model container.

Layout::

    b"SPRINTM1"                      8 bytes magic
    header length                    uint32, little-endian
    header                           UTF-8 JSON, sorted keys
    W | b | V                        little-endian float64, C order

The header records the format version, dimensions, full training config,
head catalog, loss trace, greedy head ranking and a SHA-256 checksum taken
over the header (without the checksum field) followed by the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ArtifactIOError, ChecksumError, FormatVersionError
from .outcomes import HeadCatalog
from .trainer import HeadEmbeddings, QuestionEncoder, TrainConfig, TrainedModel

MAGIC = b"SPRINTM1"
FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


def _digest(header: dict, payload: bytes) -> str:
    body = {k: v for k, v in header.items() if k != "checksum"}
    h = hashlib.sha256(json.dumps(body, sort_keys=True).encode("utf-8"))
    h.update(payload)
    return h.hexdigest()


def model_to_bytes(model: TrainedModel) -> bytes:
    W = np.ascontiguousarray(model.encoder.W, dtype=_LE_F64)
    b = np.ascontiguousarray(model.encoder.b, dtype=_LE_F64)
    V = np.ascontiguousarray(model.embeddings.V, dtype=_LE_F64)
    payload = W.tobytes() + b.tobytes() + V.tobytes()
    header = {
        "format_version": FORMAT_VERSION,
        "dims": {"feature_dim": W.shape[0], "embedding_dim": W.shape[1], "num_heads": V.shape[0]},
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "catalog": model.catalog.to_json(),
        "loss_trace": [[int(s), float(v)] for s, v in model.loss_trace],
        "n_excluded": model.n_excluded,
        "greedy_ranking": [int(j) for j in model.greedy_ranking],
    }
    header["checksum"] = _digest(header, payload)
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(raw)) + raw + payload


def model_from_bytes(data: bytes, source: str = "<bytes>") -> TrainedModel:
    if len(data) < 12 or data[:8] != MAGIC:
        if len(data) < 8 or MAGIC.startswith(data[:8]):
            raise ChecksumError(f"{source}: file truncated before header")
        raise ArtifactIOError(f"{source}: not a model file (bad magic {data[:8]!r})")
    (hlen,) = struct.unpack("<I", data[8:12])
    if len(data) < 12 + hlen:
        raise ChecksumError(f"{source}: file truncated inside header")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"{source}: header is corrupt ({exc})") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"{source}: model format version {version!r} is not supported (this build reads version {FORMAT_VERSION})"
        )
    payload = data[12 + hlen:]
    if _digest(header, payload) != header.get("checksum"):
        raise ChecksumError(f"{source}: checksum mismatch (file truncated or corrupted)")

    dims = header["dims"]
    f, p, lh = dims["feature_dim"], dims["embedding_dim"], dims["num_heads"]
    arr = np.frombuffer(payload, dtype=_LE_F64).astype(np.float64)
    W = arr[: f * p].reshape(f, p)
    b = arr[f * p: f * p + p]
    V = arr[f * p + p:].reshape(lh, p)
    return TrainedModel(
        encoder=QuestionEncoder(W, b),
        embeddings=HeadEmbeddings(V),
        catalog=HeadCatalog.from_json(header["catalog"]),
        config=TrainConfig(**header["config"]),
        loss_trace=tuple((int(s), float(v)) for s, v in header["loss_trace"]),
        n_excluded=int(header["n_excluded"]),
        greedy_ranking=tuple(header["greedy_ranking"]),
    )


def save_model(model: TrainedModel, path) -> None:
    try:
        Path(path).write_bytes(model_to_bytes(model))
    except OSError as exc:
        raise ArtifactIOError(f"cannot write model to {path}: {exc}") from exc


def load_model(path) -> TrainedModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read model {path}: {exc}") from exc
    return model_from_bytes(data, source=str(path))
