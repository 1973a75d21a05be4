"""On-disk formats used by the command line.

CSV: comma separated, one header row, floats written with 17 significant
digits so that they read back bit for bit.

Config and generator-spec files: flat ``key = value`` lines. Blank lines and
lines starting with ``#`` are ignored. A value is read as a JSON literal
when it parses as one (numbers, ``true``, lists such as ``[[0, 0], [4, 4]]``)
and as a bare string otherwise.

Model files: one JSON object

    {"format": "vbayes-model", "version": 1,
     "engine": "gmm" | "bss",
     "m": int, "free_energy": float,
     "config": {...engine config fields...},
     "data": [[...], ...],          training rows, needed for F' - F refits
     "prior": {...}                 gmm only: weight_conc, shape, rate, mean, beta
     "posterior": {...}}            gmm: weights, counts, mean, mean_precision,
                                    shape, rate, alive, resp
                                    bss: mixing, mixing_cov, alpha,
                                    noise_precision, rho, precision
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from . import vbbss, vbgmm
from .distributions import DirichletParams
from .ensemble import FreeEnergyReport

MODEL_FORMAT = "vbayes-model"
MODEL_VERSION = 1


class InputError(ValueError):
    """Bad user input: unreadable file, unknown key, schema mismatch."""


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_matrix(path, X, prefix: str = "x") -> None:
    X = np.atleast_2d(np.asarray(X))
    write_csv(path, [f"{prefix}{j}" for j in range(X.shape[1])], X)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Numeric CSV with a header row -> (header, N x d array)."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {path}")
    with open(p, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    data = np.empty((len(body), len(header)))
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise InputError(f"{path}:{i}: expected {len(header)} fields, got {len(r)}")
        try:
            data[i - 2] = [float(c) for c in r]
        except ValueError:
            raise InputError(f"{path}:{i}: non-numeric field") from None
    if not np.all(np.isfinite(data)):
        raise InputError(f"{path}: non-finite values")
    return header, data


def read_keyvalue(path, allowed) -> dict:
    """Parse a key = value file, rejecting keys outside ``allowed``."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {path}")
    out = {}
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise InputError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def config_fields(cls) -> list[str]:
    return [f.name for f in dataclasses.fields(cls)]


def build(cls, values: dict, source: str = "config"):
    """Instantiate a dataclass, turning type and range errors into InputError."""
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{source}: {exc}") from None


# --------------------------------------------------------------------------
# model files


def _list(a):
    return np.asarray(a).tolist()


def _config_dict(cfg) -> dict:
    d = dataclasses.asdict(cfg)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def model_to_json(fitted) -> dict:
    head = {"format": MODEL_FORMAT, "version": MODEL_VERSION}
    if isinstance(fitted, vbgmm.GmmFit):
        post, prior = fitted.posterior, fitted.prior
        return head | {
            "engine": "gmm",
            "m": int(post.n_components),
            "free_energy": fitted.free_energy,
            "config": _config_dict(fitted.config),
            "data": _list(fitted.data),
            "prior": {
                "weight_conc": prior.weight_conc,
                "shape": prior.shape,
                "rate": _list(prior.rate),
                "mean": _list(prior.mean),
                "beta": prior.beta,
            },
            "posterior": {
                "weights": _list(post.weights.lambdas),
                "counts": _list(post.counts),
                "mean": _list(post.mean),
                "mean_precision": _list(post.mean_precision),
                "shape": _list(post.shape),
                "rate": _list(post.rate),
                "alive": _list(post.alive),
                "resp": _list(fitted.resp),
            },
        }
    if isinstance(fitted, vbbss.BssFit):
        st, sp = fitted.state, fitted.sources
        return head | {
            "engine": "bss",
            "m": int(st.m),
            "free_energy": fitted.free_energy,
            "config": _config_dict(fitted.config),
            "data": _list(fitted.data),
            "posterior": {
                "mixing": _list(st.mixing),
                "mixing_cov": _list(st.mixing_cov),
                "alpha": st.alpha,
                "noise_precision": _list(st.noise_precision),
                "rho": _list(sp.rho),
                "precision": _list(sp.precision),
            },
        }
    raise TypeError(f"cannot serialize {type(fitted).__name__}")


def save_model(path, fitted) -> None:
    Path(path).write_text(json.dumps(model_to_json(fitted)))


def _arr(obj, key, dtype=float):
    try:
        return np.asarray(obj[key], dtype=dtype)
    except KeyError:
        raise InputError(f"model file lacks {key!r}") from None


def load_model(path):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise InputError(f"{path}: not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise InputError(f"{path}: unsupported version {doc.get('version')!r}")
    try:
        engine, post, F = doc["engine"], doc["posterior"], float(doc["free_energy"])
        data = np.asarray(doc["data"], dtype=float)
        cfg_raw = dict(doc["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed model file ({exc})") from None
    report = FreeEnergyReport(F, 0.0)
    try:
        if engine == "gmm":
            pr = doc["prior"]
            prior = vbgmm.GmmPrior(float(pr["weight_conc"]), float(pr["shape"]),
                                   _arr(pr, "rate"), _arr(pr, "mean"), float(pr["beta"]))
            gpost = vbgmm.GmmPosterior(
                DirichletParams(_arr(post, "weights")), _arr(post, "counts"),
                _arr(post, "mean"), _arr(post, "mean_precision"), _arr(post, "shape"),
                _arr(post, "rate"), _arr(post, "alive", bool),
            )
            cfg = build(vbgmm.GmmConfig, cfg_raw, str(path))
            return vbgmm.GmmFit(gpost, _arr(post, "resp"), report, prior, cfg, data)
        if engine == "bss":
            cfg_raw["noise_precision"] = (None if cfg_raw.get("noise_precision") is None
                                          else tuple(cfg_raw["noise_precision"]))
            cfg = build(vbbss.BssConfig, cfg_raw, str(path))
            st = vbbss.BssState(_arr(post, "mixing"), _arr(post, "mixing_cov"),
                                float(post["alpha"]), _arr(post, "noise_precision"))
            sp = vbbss.SourcePosterior(_arr(post, "rho"), _arr(post, "precision"))
            return vbbss.BssFit(st, sp, report, cfg, data)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"{path}: malformed model file ({exc})") from None
    raise InputError(f"{path}: unknown engine {engine!r}")
