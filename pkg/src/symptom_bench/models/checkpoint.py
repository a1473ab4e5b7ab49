"""Model construction by kind, and the zip checkpoint format.

A checkpoint is a zip archive holding ``arch.json`` (architecture echo incl.
subsystem map and seed) and either ``params.npz`` (network tensors keyed
``encoder.<id>...``, ``decoder.<id>...``, ``decoder.global...``) or
``gmm.json`` (mixture parameters as JSON arrays).
"""

from __future__ import annotations

import io
import json
import re
import zipfile
from pathlib import Path

import numpy as np
import torch

from ..dataset import SubsystemSignalsMap
from .composite import CompositeVae
from .gmm import GmmComponentSet, GmmModel
from .vae_baselines import UnivariateVae, VanillaVae

MODEL_KINDS = ("composite", "vanilla", "univariate", "gmm")
_NETS = {"composite": CompositeVae, "vanilla": VanillaVae, "univariate": UnivariateVae}
_ARCH_KEYS = ("window_len", "latent_dim", "channels", "kernel_size", "dilations", "beta")


class CheckpointError(ValueError):
    pass


def build_model(kind: str, smap: SubsystemSignalsMap, **kwargs):
    if kind not in _NETS:
        raise ValueError(f"unknown network kind {kind!r}; expected one of {sorted(_NETS)}")
    return _NETS[kind](smap, **kwargs)


def _archive_key(kind: str, key: str) -> str:
    key = re.sub(r"^encoders\.", "encoder.", key)
    key = re.sub(r"^decoders\.", "decoder.", key)
    key = re.sub(r"^global_decoder\.", "decoder.global.", key)
    if kind == "vanilla":
        key = re.sub(r"^(encoder|decoder)\.", r"\1.all.", key)
    return key


def _entry(name: str) -> zipfile.ZipInfo:
    # fixed timestamp keeps archives byte-identical across reruns
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    return info


def _npz_bytes(arrays: dict[str, np.ndarray]) -> bytes:
    """``np.savez`` equivalent with deterministic entry timestamps."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as npz:
        for key, arr in arrays.items():
            with npz.open(_entry(f"{key}.npy"), "w") as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(model, path: str | Path, **extra) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arch = {**model.arch(), **extra}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(_entry("arch.json"), json.dumps(arch, indent=2, sort_keys=True))
        if model.kind == "gmm":
            zf.writestr(_entry("gmm.json"), json.dumps({s: c.to_json() for s, c in model.components.items()}))
        else:
            tensors = {_archive_key(model.kind, k): v.detach().cpu().numpy() for k, v in model.state_dict().items()}
            zf.writestr(_entry("params.npz"), _npz_bytes(tensors))
    return path


def read_arch(path: str | Path) -> dict:
    with zipfile.ZipFile(path) as zf:
        return json.loads(zf.read("arch.json"))


def load_checkpoint(path: str | Path, smap: SubsystemSignalsMap | None = None, kind: str | None = None):
    """Rebuild a model from ``path``; ``smap``/``kind`` are checked against the archive."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    with zipfile.ZipFile(path) as zf:
        arch = json.loads(zf.read("arch.json"))
        stored_map = SubsystemSignalsMap.from_json(arch)
        if smap is not None and stored_map != smap:
            raise CheckpointError(f"checkpoint map {stored_map.to_json()} does not match requested {smap.to_json()}")
        if kind is not None and arch["kind"] != kind:
            raise CheckpointError(f"checkpoint holds a {arch['kind']!r} model, expected {kind!r}")
        if arch["kind"] == "gmm":
            comps = json.loads(zf.read("gmm.json"))
            return GmmModel(stored_map, {s: GmmComponentSet.from_json(c) for s, c in comps.items()}, arch.get("k"))
        kwargs = {k: arch[k] for k in _ARCH_KEYS}
        model = build_model(arch["kind"], stored_map, **kwargs)
        with np.load(io.BytesIO(zf.read("params.npz"))) as npz:
            stored = dict(npz)
    own = model.state_dict()
    expected = {_archive_key(model.kind, k): k for k in own}
    if set(expected) != set(stored):
        diff = sorted(set(expected) ^ set(stored))
        raise CheckpointError(f"parameter keys differ from architecture: {diff[:5]}")
    model.load_state_dict({expected[k]: torch.from_numpy(v) for k, v in stored.items()})
    return model.eval()
