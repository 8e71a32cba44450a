"""JSON artifacts for trained coarse propagators, and the bundled reference set."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .convfactor import phi_star
from .ocp import OcpParams, TrainConfig, TrainResult, default_nodes, solve_forcing_weights
from .stability import RationalFn, classical_stability

BUNDLED = ("lobatto2", "lobatto3", "lobatto4", "radau3", "theta0.52")


@dataclass(frozen=True)
class CoarseSpec:
    """A coarse stability function with its forcing weights and nodes."""

    name: str
    R: RationalFn
    weights: tuple
    nodes: tuple
    meta: dict

    def to_artifact(self) -> dict:
        d = dict(self.meta)
        d["R"] = self.R.to_dict()
        d["P"] = [w.to_dict() for w in self.weights]
        d["nodes"] = list(self.nodes)
        return d


def artifact_from_training(fp: str, result: TrainResult, cfg: TrainConfig) -> dict:
    p = result.params
    r = classical_stability(fp)
    weights = solve_forcing_weights(result.R, p.q)
    return {
        "fp": fp,
        "m": p.m,
        "n": p.n,
        "q": p.q,
        "J0": cfg.J0,
        "b": list(p.b),
        "a_free": list(p.a_free),
        "R": result.R.to_dict(),
        "P": [w.to_dict() for w in weights],
        "nodes": default_nodes(p.q).tolist(),
        "hyperparams": cfg.to_dict(),
        "phi_star_at_J0": phi_star(r, result.R, cfg.J0).phi_star,
        "sup_loss": result.sup_loss,
        "below_gate": result.below_gate,
        "seconds": result.seconds,
    }


def _spec_from_dict(name: str, d: dict) -> CoarseSpec:
    if "R" in d:
        R = RationalFn.from_dict(d["R"])
    else:
        params = OcpParams(d["m"], d["n"], d["q"], tuple(d["b"]), tuple(d["a_free"]))
        R = RationalFn(params.numerator(), params.denominator())
    q = int(d.get("q", 1))
    if d.get("P"):
        weights = tuple(RationalFn.from_dict(w) for w in d["P"])
    else:
        weights = tuple(solve_forcing_weights(R, q))
    nodes = tuple(d.get("nodes") or default_nodes(len(weights)).tolist())
    meta = {k: v for k, v in d.items() if k not in ("R", "P", "nodes")}
    return CoarseSpec(name, R, weights, nodes, meta)


def load_bundled(fp: str) -> CoarseSpec:
    key = fp.replace("theta:", "theta").lower()
    if key not in BUNDLED:
        raise ValueError(f"no bundled propagator for {fp!r}; have {', '.join(BUNDLED)}")
    text = resources.files("ocpara").joinpath("data", f"{key}.json").read_text()
    return _spec_from_dict(f"OCP[{key}]", json.loads(text))


def load_ocp(ref: str) -> CoarseSpec:
    """``bundled-<fp>``, ``bundled`` or a path to an artifact file."""
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        return _spec_from_dict(f"OCP[{path.stem}]", json.loads(path.read_text()))
    if ref.startswith("bundled-"):
        return load_bundled(ref[len("bundled-"):])
    raise ValueError(f"cannot resolve propagator {ref!r}")


def coarse_spec(cp: str, fp: str | None = None) -> CoarseSpec:
    """Resolve a ``--cp`` value: be, sdirk22, ocp:<file|bundled-fp|bundled>."""
    key = cp.strip()
    low = key.lower()
    if low.startswith("ocp:"):
        ref = key[4:]
        if ref == "bundled":
            if fp is None:
                raise ValueError("ocp:bundled needs a fine propagator to pick the file")
            return load_bundled(fp)
        return load_ocp(ref)
    if low in ("be", "sdirk22"):
        R = classical_stability(low)
        w = (solve_forcing_weights(R, 1)[0],) if low == "sdirk22" else (R,)
        return CoarseSpec(low.upper(), R, w, (1.0,), {})
    raise ValueError(f"unknown coarse propagator {cp!r}")


def write_artifact(path, artifact: dict) -> None:
    Path(path).write_text(json.dumps(artifact, indent=2, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")
