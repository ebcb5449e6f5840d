"""YAML loader for NetworkSpec with line-anchored diagnostics.

Layout::

    dimension: 2
    theta: 1.0
    components:
      - {mu: 1.5, sigma2: 0.05, boundary: 2.0, reset: 0.0, refractory: 0.0, y0: 0.0}
      - {mu: 1.2, sigma2: 0.05, boundary: 2.0, reset: 0.0}
    clusters:
      - {members: [1, 2], mu: 1.0, sigma2: 0.05}

``refractory`` defaults to 0 and ``y0`` to the reset value.
"""

from __future__ import annotations

import hashlib
from importlib import resources
from pathlib import Path

import yaml
from yaml.nodes import MappingNode, Node, ScalarNode, SequenceNode

from .errors import ConfigError, SpecError
from .model import Cluster, NetworkSpec

__all__ = ["load_spec", "parse_spec", "bundled_config", "config_digest"]

_TOP_KEYS = {"dimension", "theta", "components", "clusters"}
_COMPONENT_KEYS = {"mu", "sigma2", "boundary", "reset", "refractory", "y0"}
_CLUSTER_KEYS = {"members", "mu", "sigma2"}


def _line(node: Node) -> int:
    return node.start_mark.line + 1


def _mapping(node: Node, what: str) -> dict[str, tuple[Node, Node]]:
    if not isinstance(node, MappingNode):
        raise ConfigError(f"{what} must be a mapping", _line(node))
    out: dict[str, tuple[Node, Node]] = {}
    for key_node, value_node in node.value:
        key = key_node.value
        if key in out:
            raise ConfigError(f"duplicate key '{key}' in {what}", _line(key_node))
        out[key] = (key_node, value_node)
    return out


def _number(node: Node, what: str) -> float:
    if not isinstance(node, ScalarNode):
        raise ConfigError(f"{what} must be a number", _line(node))
    try:
        value = float(node.value)
    except ValueError:
        raise ConfigError(f"{what} must be a number, got '{node.value}'", _line(node)) from None
    if value != value or value in (float("inf"), float("-inf")):
        raise ConfigError(f"{what} must be finite", _line(node))
    return value


def _integer(node: Node, what: str) -> int:
    value = _number(node, what)
    if value != int(value):
        raise ConfigError(f"{what} must be an integer, got '{node.value}'", _line(node))
    return int(value)


def _check_keys(fields: dict, allowed: set[str], what: str) -> None:
    for key, (key_node, _) in fields.items():
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in {what}", _line(key_node))


def parse_spec(text: str, source: str = "<config>") -> NetworkSpec:
    try:
        root = yaml.compose(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"{source}: YAML syntax error: {exc.problem}", line) from None
    if root is None:
        raise ConfigError(f"{source}: empty config")
    top = _mapping(root, "config")
    _check_keys(top, _TOP_KEYS, "config")
    for key in ("dimension", "theta", "components"):
        if key not in top:
            raise ConfigError(f"missing required key '{key}'", _line(root))

    k_node = top["dimension"][1]
    k = _integer(k_node, "dimension")
    if k < 1:
        raise ConfigError("dimension must be a positive integer", _line(k_node))
    theta_node = top["theta"][1]
    theta = _number(theta_node, "theta")
    if theta <= 0:
        raise ConfigError("theta must be positive", _line(theta_node))

    comps_node = top["components"][1]
    if not isinstance(comps_node, SequenceNode):
        raise ConfigError("components must be a list", _line(comps_node))
    if len(comps_node.value) != k:
        raise ConfigError(f"expected {k} component blocks, found {len(comps_node.value)}",
                          _line(comps_node))
    cols: dict[str, list[float]] = {key: [] for key in _COMPONENT_KEYS}
    for j, cnode in enumerate(comps_node.value, start=1):
        what = f"component {j}"
        fields = _mapping(cnode, what)
        _check_keys(fields, _COMPONENT_KEYS, what)
        for key in ("mu", "sigma2", "boundary", "reset"):
            if key not in fields:
                raise ConfigError(f"{what}: missing '{key}'", _line(cnode))
        values = {key: _number(fields[key][1], f"{what}: {key}") for key in fields}
        values.setdefault("refractory", 0.0)
        values.setdefault("y0", values["reset"])
        if values["sigma2"] < 0:
            raise ConfigError(f"{what}: sigma2 must be >= 0", _line(fields["sigma2"][1]))
        if values["refractory"] < 0:
            raise ConfigError(f"{what}: refractory must be >= 0", _line(fields["refractory"][1]))
        if not values["reset"] < values["boundary"]:
            raise ConfigError(
                f"{what}: reset ({values['reset']}) must be below boundary ({values['boundary']})",
                _line(fields["reset"][1]))
        if not values["y0"] < values["boundary"]:
            node = fields["y0"][1] if "y0" in fields else cnode
            raise ConfigError(
                f"{what}: y0 ({values['y0']}) must be below boundary ({values['boundary']})", _line(node))
        for key, value in values.items():
            cols[key].append(value)

    clusters: list[Cluster] = []
    if "clusters" in top:
        cl_node = top["clusters"][1]
        if isinstance(cl_node, ScalarNode) and cl_node.value in ("", "null", "~"):
            cl_node = SequenceNode(tag="", value=[])
        if not isinstance(cl_node, SequenceNode):
            raise ConfigError("clusters must be a list", _line(cl_node))
        seen: dict[frozenset[int], int] = {}
        for i, cnode in enumerate(cl_node.value, start=1):
            what = f"cluster {i}"
            fields = _mapping(cnode, what)
            _check_keys(fields, _CLUSTER_KEYS, what)
            if "members" not in fields:
                raise ConfigError(f"{what}: missing 'members'", _line(cnode))
            m_node = fields["members"][1]
            if not isinstance(m_node, SequenceNode):
                raise ConfigError(f"{what}: members must be a list", _line(m_node))
            members = [_integer(v, f"{what}: member") for v in m_node.value]
            if len(set(members)) != len(members):
                raise ConfigError(f"{what}: repeated member", _line(m_node))
            if len(members) < 2:
                raise ConfigError(
                    f"{what}: a cluster needs at least two members (|A| >= 2), got {members}",
                    _line(m_node))
            for m in members:
                if not 1 <= m <= k:
                    raise ConfigError(f"{what}: member {m} outside 1..{k}", _line(m_node))
            key = frozenset(members)
            if key in seen:
                raise ConfigError(f"{what}: same members as cluster {seen[key]}", _line(m_node))
            seen[key] = i
            mu = _number(fields["mu"][1], f"{what}: mu") if "mu" in fields else 0.0
            s2 = _number(fields["sigma2"][1], f"{what}: sigma2") if "sigma2" in fields else 0.0
            if s2 < 0:
                raise ConfigError(f"{what}: sigma2 must be >= 0", _line(fields["sigma2"][1]))
            clusters.append(Cluster(members=key, mu=mu, sigma2=s2))

    try:
        return NetworkSpec(k=k, theta=theta, mu=cols["mu"], sigma2=cols["sigma2"],
                           boundary=cols["boundary"], reset=cols["reset"],
                           refractory=cols["refractory"], y0=cols["y0"],
                           clusters=tuple(clusters))
    except SpecError as exc:
        raise ConfigError(str(exc)) from None


def load_spec(path: str | Path) -> NetworkSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_spec(text, source=str(path))


def config_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``bundled_config("cluster2")``."""
    ref = resources.files("steinnet") / "configs" / f"{name}.yaml"
    path = Path(str(ref))
    if not path.exists():
        raise FileNotFoundError(f"no bundled config named {name!r}")
    return path
