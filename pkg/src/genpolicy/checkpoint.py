"""Versioned binary checkpoints for policies and critics.

Layout: magic ``GPCK``, u32 version (1), u64 header length, UTF-8 JSON
header, then raw little-endian float64 C-order parameter blobs in header
order. The header carries everything needed to rebuild the object
(architecture, schedule constants, normalizer, solver defaults), so a
load never depends on the saving process's rng.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .critic import Critic, CriticConfig
from .errors import DataFormatError
from .policy import GenerativePolicy, PolicyConfig
from .sampler import SolverSpec
from .schedules import PathSchedule

_MAGIC = b"GPCK"
_VERSION = 1


def _write(path: str, header: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    header = dict(header)
    header["arrays"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<IQ", raw, 4)
    if version != _VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    off = 4 + struct.calcsize("<IQ")
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    arrays = {}
    for meta in header["arrays"]:
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        arrays[meta["name"]] = np.frombuffer(raw, dtype="<f8", count=count,
                                             offset=off).reshape(shape).copy()
        off += count * 8
    return header, arrays


def _mlp_arrays(prefix: str, mlp) -> list[tuple[str, np.ndarray]]:
    out = []
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        out.append((f"{prefix}.w{i}", w.data))
        out.append((f"{prefix}.b{i}", b.data))
    return out


def _load_mlp(prefix: str, mlp, arrays: dict) -> None:
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        w.data = arrays[f"{prefix}.w{i}"]
        b.data = arrays[f"{prefix}.b{i}"]


def _schedule_dict(s: PathSchedule) -> dict:
    return {"kind": s.kind, "beta_min": s.beta_min, "beta_max": s.beta_max,
            "path_sigma": s.path_sigma, "t_clip": s.t_clip}


def save_policy(policy: GenerativePolicy, path: str) -> None:
    cfg = policy.config
    header = {
        "kind": "policy",
        "config": {
            "state_dim": cfg.state_dim, "action_dim": cfg.action_dim,
            "hidden": list(cfg.hidden), "t_emb_width": cfg.t_emb_width,
            "t_emb_scale": cfg.t_emb_scale, "activation": cfg.activation,
            "parameterization": cfg.parameterization,
            "schedule": _schedule_dict(cfg.schedule),
            "eval_solver": {"scheme": cfg.eval_solver.scheme, "steps": cfg.eval_solver.steps},
        },
    }
    arrays = [("t_emb.freqs", policy.model.net.t_emb.freqs),
              ("action_mean", policy.action_mean), ("action_std", policy.action_std)]
    arrays += _mlp_arrays("net", policy.model.net.mlp)
    _write(path, header, arrays)


def load_policy(path: str) -> GenerativePolicy:
    header, arrays = _read(path)
    if header.get("kind") != "policy":
        raise DataFormatError(f"{path}: checkpoint holds a {header.get('kind')}, not a policy")
    c = header["config"]
    cfg = PolicyConfig(
        state_dim=c["state_dim"], action_dim=c["action_dim"], hidden=tuple(c["hidden"]),
        t_emb_width=c["t_emb_width"], t_emb_scale=c["t_emb_scale"], activation=c["activation"],
        parameterization=c["parameterization"], schedule=PathSchedule(**c["schedule"]),
        eval_solver=SolverSpec(**c["eval_solver"]))
    policy = GenerativePolicy(cfg, np.random.default_rng(0),
                              action_mean=arrays["action_mean"], action_std=arrays["action_std"])
    policy.model.net.t_emb.freqs = arrays["t_emb.freqs"]
    _load_mlp("net", policy.model.net.mlp, arrays)
    return policy


def save_critic(critic: Critic, path: str) -> None:
    cfg = critic.config
    header = {
        "kind": "critic",
        "config": {
            "state_dim": critic.state_dim, "action_dim": critic.action_dim,
            "tau": cfg.tau, "gamma": cfg.gamma, "lr": cfg.lr, "hidden": list(cfg.hidden),
            "steps": cfg.steps, "batch_size": cfg.batch_size,
        },
    }
    arrays = _mlp_arrays("q", critic.q_net) + _mlp_arrays("v", critic.v_net)
    _write(path, header, arrays)


def load_critic(path: str) -> Critic:
    header, arrays = _read(path)
    if header.get("kind") != "critic":
        raise DataFormatError(f"{path}: checkpoint holds a {header.get('kind')}, not a critic")
    c = header["config"]
    cfg = CriticConfig(tau=c["tau"], gamma=c["gamma"], lr=c["lr"], hidden=tuple(c["hidden"]),
                       steps=c["steps"], batch_size=c["batch_size"])
    critic = Critic(c["state_dim"], c["action_dim"], cfg, np.random.default_rng(0))
    _load_mlp("q", critic.q_net, arrays)
    _load_mlp("v", critic.v_net, arrays)
    return critic
