"""INI scene files mapped onto :class:`rrte.experiments.ExperimentConfig`."""

from __future__ import annotations

import configparser
from io import StringIO
from dataclasses import fields
from importlib import resources
from pathlib import Path

from .experiments import ExperimentConfig

__all__ = ["load_config", "default_config_text", "config_to_ini"]

SUPPORTED_RNG = "PCG64"

# (section, key) -> (dataclass field, converter)
_KEYS = {
    ("grid", "m"): ("m", int),
    ("grid", "forward_refine"): ("forward_refine", int),
    ("grid", "m_alpha"): ("m_alpha", int),
    ("phantom", "glyph"): ("glyph", str),
    ("phantom", "c_a"): ("c_a", float),
    ("phantom", "mu_s"): ("mu_s", float),
    ("phantom", "placement"): ("placement", lambda s: tuple(float(v) for v in s.split(","))),
    ("kernel", "g"): ("g", float),
    ("kernel", "source_eps"): ("source_eps", float),
    ("noise", "delta"): ("delta", float),
    ("noise", "seed"): ("seed", int),
    ("optimizer", "n"): ("N", int),
    ("optimizer", "lambda"): ("lam", float),
    ("optimizer", "method"): ("optimizer", str),
    ("optimizer", "grad_tol"): ("grad_tol", float),
    ("optimizer", "max_iters"): ("max_iters", int),
    ("optimizer", "beta"): ("beta", float),
    ("optimizer", "projection"): ("projection", str),
}
_EXTRA = {("noise", "rng")}


def default_config_text() -> str:
    return resources.files("rrte").joinpath("data/default.ini").read_text()


def _parser() -> configparser.ConfigParser:
    # keep key case for the domain section, where A and a differ
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    return cp


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read the packaged defaults, then ``path`` on top, then keyword overrides.

    Unknown sections or keys raise ``ValueError`` so typos are not ignored.
    """
    cp = _parser()
    cp.read_string(default_config_text())
    if path is not None:
        text = Path(path).read_text()
        user = _parser()
        user.read_string(text)
        for sec in user.sections():
            if sec not in cp:
                raise ValueError(f"{path}: unknown section [{sec}]")
            for key, val in user[sec].items():
                if sec != "domain" and (sec, key.lower()) not in _KEYS and (sec, key.lower()) not in _EXTRA:
                    raise ValueError(f"{path}: unknown key {key!r} in [{sec}]")
                cp[sec][key] = val
    dom = cp["domain"]
    if (float(dom["A"]), float(dom["a"]), float(dom["b"]), float(dom["d"])) != (0.5, 1.0, 2.0, 0.5):
        raise ValueError("only the reference domain A=0.5, a=1, b=2, d=0.5 is supported")
    rng = cp["noise"].get("rng", SUPPORTED_RNG)
    if rng != SUPPORTED_RNG:
        raise ValueError(f"unsupported generator {rng!r}; reports are pinned to {SUPPORTED_RNG}")
    kw = {}
    for (sec, key), (name, conv) in _KEYS.items():
        section = {k.lower(): v for k, v in cp[sec].items()}
        if key in section and section[key].strip() != "":
            kw[name] = conv(section[key].strip())
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**kw)


def config_to_ini(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`load_config` for the keys it understands."""
    cp = _parser()
    cp.read_string(default_config_text())
    values = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for (sec, key), (name, _) in _KEYS.items():
        v = values[name]
        if v is None:
            continue
        if key == "n":
            key = "N"
        cp[sec][key] = ", ".join(f"{p:g}" for p in v) if isinstance(v, tuple) else str(v)
    buf = StringIO()
    cp.write(buf)
    return buf.getvalue()
