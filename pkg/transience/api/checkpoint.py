# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

"""Model checkpoints.

Layout::

    TRANSIENCE-CKPT 1\\n
    {"meta": {...}, "tensors": [{"name": ..., "shape": [...]}, ...]}\\n
    <tensor bytes, row-major little-endian float64, in header order>
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from transience.api.align import LinearProjection, TrainRun
from transience.networks.losses import BANDWIDTHS, KdeBandwidths
from transience.networks.net import EncoderStack, Layer, Mlp
from transience.utils.common import throw
from transience.utils.seqcore import PcaModel

FORMAT_TAG = b"TRANSIENCE-CKPT 1"
TENSOR_DTYPE = np.dtype("<f8")

KIND_NETWORK = "network"
KIND_LINEAR = "linear"

PCA_MEAN = "pca.mean"
PCA_BASIS = "pca.basis"


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    names = list(tensors)
    header = {
        "meta": meta,
        "tensors": [{"name": n, "shape": list(np.shape(tensors[n]))} for n in names],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(FORMAT_TAG + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for name in names:
            fh.write(np.ascontiguousarray(tensors[name], dtype=TENSOR_DTYPE).tobytes(order="C"))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        throw(f"checkpoint {path} not found")
    blob = path.read_bytes()
    tag, _, rest = blob.partition(b"\n")
    if tag != FORMAT_TAG:
        throw(f"{path}: not a checkpoint (tag {tag[:32]!r})")
    header_line, _, body = rest.partition(b"\n")
    try:
        header = json.loads(header_line)
    except ValueError:
        throw(f"{path}: malformed checkpoint header")

    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * TENSOR_DTYPE.itemsize
        if offset + size > len(body):
            throw(f"{path}: truncated at tensor {entry['name']!r}")
        tensors[entry["name"]] = (
            np.frombuffer(body, dtype=TENSOR_DTYPE, count=size // 8, offset=offset)
            .reshape(shape).astype(float)
        )
        offset += size
    if offset != len(body):
        throw(f"{path}: {len(body) - offset} trailing bytes after the last tensor")
    return tensors, header["meta"]


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------
def _network_tensors(stack: EncoderStack) -> tuple[dict[str, np.ndarray], dict]:
    tensors, topology = {}, {}
    for name, net in stack.networks():
        topology[name] = net.sizes()
        for k, layer in enumerate(net.layers):
            tensors[f"{name}.{k}.weights"] = layer.weights
            tensors[f"{name}.{k}.bias"] = layer.bias
    meta = {
        "topology": topology,
        "slope": stack.encoder_x.slope,
        "use_autoencoder": stack.use_autoencoder,
        "use_private": stack.use_private,
    }
    return tensors, meta


def save_run(path: str | Path, run: TrainRun, extra_meta: dict | None = None,
             extra_tensors: dict[str, np.ndarray] | None = None) -> None:
    """Encoder stack (plus KDE bandwidths) or linear CCA projection of a finished run.

    ``extra_tensors`` ride along under their own names, e.g. the input PCA.
    """
    meta = {"variant": run.variant, **(extra_meta or {})}
    if run.stack is not None:
        tensors, net_meta = _network_tensors(run.stack)
        if run.bandwidths is not None:
            tensors[BANDWIDTHS] = run.bandwidths.log_sigma
        meta.update(kind=KIND_NETWORK, **net_meta)
    elif run.projection is not None:
        p = run.projection
        tensors = {
            "mean_x": p.mean_x, "mean_y": p.mean_y, "weights_x": p.weights_x,
            "weights_y": p.weights_y, "correlations": p.correlations,
        }
        meta.update(kind=KIND_LINEAR)
    else:
        throw(f"run {run.variant!r} has nothing to save")
    tensors.update(extra_tensors or {})
    save_checkpoint(path, tensors, meta)


def load_stack(tensors: dict[str, np.ndarray], meta: dict) -> tuple[EncoderStack, KdeBandwidths | None]:
    if meta.get("kind") != KIND_NETWORK:
        throw("checkpoint does not hold an encoder stack")
    nets = {}
    for name, sizes in meta["topology"].items():
        layers = [
            Layer(tensors[f"{name}.{k}.weights"].copy(), tensors[f"{name}.{k}.bias"].copy())
            for k in range(len(sizes) - 1)
        ]
        nets[name] = Mlp(layers=layers, slope=meta["slope"])
    stack = EncoderStack(**nets, use_autoencoder=meta["use_autoencoder"],
                         use_private=meta["use_private"])
    bandwidths = None
    if BANDWIDTHS in tensors:
        bandwidths = KdeBandwidths(log_sigma=tensors[BANDWIDTHS].copy())
    return stack, bandwidths


def load_projection(tensors: dict[str, np.ndarray], meta: dict) -> LinearProjection:
    if meta.get("kind") != KIND_LINEAR:
        throw("checkpoint does not hold a linear projection")
    return LinearProjection(
        mean_x=tensors["mean_x"], mean_y=tensors["mean_y"], weights_x=tensors["weights_x"],
        weights_y=tensors["weights_y"], correlations=tensors["correlations"],
    )


def pca_tensors(pca: PcaModel | None) -> dict[str, np.ndarray]:
    if pca is None:
        return {}
    return {PCA_MEAN: pca.mean, PCA_BASIS: pca.basis}


def load_run(path: str | Path) -> tuple[TrainRun, PcaModel | None, dict]:
    """Trained projection, input PCA and meta of a saved run.

    The returned run has no paths or history; it only projects new sequences.
    """
    tensors, meta = load_checkpoint(path)
    pca = None
    if PCA_BASIS in tensors:
        basis = tensors[PCA_BASIS]
        pca = PcaModel(mean=tensors[PCA_MEAN], basis=basis, retained=basis.shape[0])
    run = TrainRun(variant=meta.get("variant", ""), paths=[])
    if meta.get("kind") == KIND_LINEAR:
        run.projection = load_projection(tensors, meta)
    else:
        run.stack, run.bandwidths = load_stack(tensors, meta)
    return run, pca, meta
