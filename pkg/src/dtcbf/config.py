"""Scenario documents: YAML/JSON loading, schema validation, and round-tripping."""

from __future__ import annotations

import json
import re
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import sim
from .cbf import AffineCbf, CbfSet, Identity, LinearGain, QuadraticCbf, TransformedCbf, make_rotation_2d
from .dynamics import AdmissibleBox, LtiSystem
from .filters import Constant, Penalty, Standard

NAMED_SYSTEMS = {
    "identified_lti": sim.identified_lti,
    "quadrotor_z": sim.quadrotor_z,
}

_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 1}
_mat = {"type": "array", "items": _vec, "minItems": 1}
_pos = {"type": "number", "exclusiveMinimum": 0}

_policy = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type"],
    "properties": {
        "type": {"enum": ["constant", "zero"]},
        "value": {"oneOf": [_num, _vec]},
    },
    "if": {"properties": {"type": {"const": "constant"}}},
    "then": {"required": ["value"]},
}

_affine = {
    "type": "object",
    "additionalProperties": False,
    "required": ["p", "b"],
    "properties": {"p": _vec, "b": _num},
}

_quadratic_fields = {"beta": _pos, "center": _vec, "P": _mat}

_box = {
    "type": "object",
    "additionalProperties": False,
    "required": ["lower", "upper"],
    "properties": {"lower": _vec, "upper": _vec},
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "cbf", "x0", "dt", "horizon"],
    "properties": {
        "name": {"type": "string"},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"enum": sorted(NAMED_SYSTEMS)},
                "A": _mat,
                "B": _mat,
            },
            "oneOf": [{"required": ["name"]}, {"required": ["A", "B"]}],
        },
        "cbf": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": ["quadratic", "affine", "polytope"]},
                **_quadratic_fields,
                "p": _vec,
                "b": _num,
                "members": {"type": "array", "items": _affine, "minItems": 1},
                "outer": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["beta", "center", "P"],
                    "properties": _quadratic_fields,
                },
                "transform": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"theta": _num, "R": _mat, "delta": _vec},
                    "oneOf": [{"required": ["theta"]}, {"required": ["R"]}],
                },
            },
            "allOf": [
                {"if": {"properties": {"type": {"const": "quadratic"}}},
                 "then": {"required": ["beta", "center", "P"]}},
                {"if": {"properties": {"type": {"const": "affine"}}},
                 "then": {"required": ["p", "b"]}},
                {"if": {"properties": {"type": {"const": "polytope"}}},
                 "then": {"required": ["members"], "not": {"required": ["transform"]}}},
            ],
        },
        "gamma": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {"type": {"enum": ["identity", "linear"]}, "k": _pos},
            "if": {"properties": {"type": {"const": "linear"}}},
            "then": {"required": ["k"]},
        },
        "strategy": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": ["none", "standard", "penalty"]},
                "r": _pos,
                "eps": _pos,
                "pi_safe": _policy,
                "on_infeasible": {"enum": ["halt", "backup"]},
                "hocbf_gains": {"type": "array", "items": _pos, "minItems": 1},
            },
        },
        "pi": _policy,
        "x0": _vec,
        "dt": _pos,
        "horizon": _pos,
        "box": _box,
        "input_probe": _box,
        "metrics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"chatter_threshold": {"type": "number", "minimum": 0}, "eps": _pos},
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"csv": {"type": "string"}, "json": {"type": "string"}},
        },
    },
}


class ConfigError(ValueError):
    pass


class _Loader(yaml.SafeLoader):
    pass


# PyYAML follows YAML 1.1 and reads "1e-8" as a string; accept it as a float.
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                 |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                 |\.[0-9_]+(?:[eE][-+][0-9]+)?
                 |[-+]?\.(?:inf|Inf|INF)
                 |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def load(path) -> dict:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        doc = json.loads(text)
    else:
        doc = yaml.load(text, Loader=_Loader)
    validate(doc)
    return doc


def validate(doc) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {err.message}")


def _policy_from(doc, m: int):
    if doc is None or doc["type"] == "zero":
        return Constant(np.zeros(m))
    return Constant(np.atleast_1d(doc["value"]))


def build_system(doc) -> LtiSystem:
    if "name" in doc:
        return NAMED_SYSTEMS[doc["name"]]()
    return LtiSystem(doc["A"], doc["B"])


def build_cbf(doc):
    kind = doc["type"]
    if kind == "quadratic":
        cbf = QuadraticCbf(doc["beta"], doc["center"], doc["P"])
    elif kind == "affine":
        cbf = AffineCbf(doc["p"], doc["b"])
    else:
        return CbfSet([AffineCbf(mem["p"], mem["b"]) for mem in doc["members"]])
    tf = doc.get("transform")
    if tf is not None:
        R = np.asarray(tf["R"], dtype=float) if "R" in tf else make_rotation_2d(tf["theta"], cbf.n)
        delta = tf.get("delta", [0.0] * cbf.n)
        cbf = TransformedCbf(cbf, R, delta)
    return cbf


def build_outer(doc):
    outer = doc["cbf"].get("outer")
    return None if outer is None else QuadraticCbf(outer["beta"], outer["center"], outer["P"])


def build_gamma(doc):
    g = doc.get("gamma", {"type": "identity"})
    return Identity() if g["type"] == "identity" else LinearGain(g["k"])


def build_box(doc, key: str = "box") -> AdmissibleBox | None:
    b = doc.get(key)
    return None if b is None else AdmissibleBox(b["lower"], b["upper"])


def build_scenario(doc) -> sim.Scenario:
    try:
        system = build_system(doc["system"])
        safe = build_cbf(doc["cbf"])
        gamma = build_gamma(doc)
        st = doc.get("strategy", {"type": "standard"})
        gains = tuple(st["hocbf_gains"]) if "hocbf_gains" in st else None
        if st["type"] == "none":
            strategy = None
        elif st["type"] == "standard":
            strategy = Standard(safe, gamma, gains)
        else:
            strategy = Penalty(safe, st.get("r", 1.0), st.get("eps", 1e-8),
                               _policy_from(st.get("pi_safe"), system.m), gamma, gains)
        metrics = doc.get("metrics", {})
        return sim.Scenario(
            system, safe,
            pi=_policy_from(doc.get("pi"), system.m),
            x0=doc["x0"], dt=doc["dt"], horizon=doc["horizon"],
            strategy=strategy,
            on_infeasible=st.get("on_infeasible", "halt"),
            chatter_threshold=metrics.get("chatter_threshold", 0.05),
            eps=metrics.get("eps", 1e-8),
            name=doc.get("name", ""),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _cbf_doc(cbf) -> dict:
    if isinstance(cbf, QuadraticCbf):
        return {"type": "quadratic", "beta": cbf.beta, "center": cbf.c.tolist(), "P": cbf.P.tolist()}
    if isinstance(cbf, AffineCbf):
        return {"type": "affine", "p": cbf.p.tolist(), "b": cbf.b}
    if isinstance(cbf, CbfSet):
        return {"type": "polytope", "members": [{"p": m.p.tolist(), "b": m.b} for m in cbf.members]}
    if isinstance(cbf, TransformedCbf):
        out = _cbf_doc(cbf.inner)
        out["transform"] = {"R": cbf.R.tolist(), "delta": cbf.delta.tolist()}
        return out
    raise TypeError(f"cannot serialise {type(cbf).__name__}")


def _policy_doc(pol) -> dict:
    if not isinstance(pol, Constant):
        raise TypeError("only constant policies can be serialised")
    if not np.any(pol.value):
        return {"type": "zero"}
    return {"type": "constant", "value": pol.value.tolist()}


def scenario_to_config(scn: sim.Scenario) -> dict:
    """Canonical document for ``scn``; building it again reproduces the same run."""
    if not isinstance(scn.system, LtiSystem):
        raise TypeError("only LTI scenarios can be serialised")
    doc = {
        "name": scn.name,
        "system": {"A": scn.system.A.tolist(), "B": scn.system.B.tolist()},
        "cbf": _cbf_doc(scn.safe_set),
        "pi": _policy_doc(scn.pi),
        "x0": scn.x0.tolist(),
        "dt": scn.dt,
        "horizon": scn.horizon,
        "metrics": {"chatter_threshold": scn.chatter_threshold, "eps": scn.eps},
    }
    st = scn.strategy
    if st is None:
        doc["strategy"] = {"type": "none", "on_infeasible": scn.on_infeasible}
    else:
        gamma = st.gamma
        doc["gamma"] = {"type": "identity"} if isinstance(gamma, Identity) else {"type": "linear", "k": gamma.k}
        if isinstance(st, Penalty):
            doc["strategy"] = {"type": "penalty", "r": st.r, "eps": st.eps, "pi_safe": _policy_doc(st.pi_safe)}
        else:
            doc["strategy"] = {"type": "standard"}
        doc["strategy"]["on_infeasible"] = scn.on_infeasible
        if st.hocbf_gains is not None:
            doc["strategy"]["hocbf_gains"] = list(st.hocbf_gains)
    return doc
