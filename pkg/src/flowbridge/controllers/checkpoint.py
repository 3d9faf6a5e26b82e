"""Checkpoint file format: a JSON header followed by a flat little-endian
float64 dump of every parameter array.

    [u32 LE header length][UTF-8 JSON header][params as <f8, in order]

The header records the layer shapes (in dump order), the scenario name,
the training config, and the sampler RNG state, so a checkpoint is
self-describing and misuse (wrong scenario, wrong shapes) fails loudly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .mlp import MLP
from .ppo import PolicyParams


def save_checkpoint(path, params: PolicyParams, scenario: str, config: dict,
                    rng_state: dict | None = None) -> None:
    arrays = params.flat_arrays()
    header = {
        "format": "flowbridge-checkpoint-1",
        "scenario": scenario,
        "obs_dim": params.obs_dim,
        "act_dim": params.act_dim,
        "pi_layers": [list(w.shape) for w in params.pi.weights],
        "vf_layers": [list(w.shape) for w in params.vf.weights],
        "shapes": [list(a.shape) for a in arrays],
        "config": config,
        "rng_state": rng_state or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path, expected_scenario: str | None = None):
    """Returns (PolicyParams, header dict)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ConfigError("checkpoint file is truncated")
    (hlen,) = struct.unpack("<I", raw[:4])
    try:
        header = json.loads(raw[4 : 4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"checkpoint header is not valid JSON: {exc}") from exc
    if header.get("format") != "flowbridge-checkpoint-1":
        raise ConfigError("not a flowbridge checkpoint")
    if expected_scenario is not None and header["scenario"] != expected_scenario:
        raise ConfigError(
            f"checkpoint was trained on {header['scenario']!r}, not {expected_scenario!r}"
        )
    shapes = [tuple(s) for s in header["shapes"]]
    need = sum(int(np.prod(s)) for s in shapes)
    data = np.frombuffer(raw[4 + hlen :], dtype="<f8")
    if data.size != need:
        raise ConfigError(f"checkpoint holds {data.size} parameters, header declares {need}")
    arrays = []
    offset = 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(np.array(data[offset : offset + size].reshape(s)))
        offset += size

    n_pi = len(header["pi_layers"])
    pi = MLP(weights=[arrays[2 * i] for i in range(n_pi)],
             biases=[arrays[2 * i + 1] for i in range(n_pi)])
    log_std = arrays[2 * n_pi]
    rest = arrays[2 * n_pi + 1 :]
    n_vf = len(header["vf_layers"])
    vf = MLP(weights=[rest[2 * i] for i in range(n_vf)],
             biases=[rest[2 * i + 1] for i in range(n_vf)])
    return PolicyParams(pi=pi, log_std=log_std, vf=vf), header
