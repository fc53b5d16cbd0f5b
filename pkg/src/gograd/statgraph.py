"""Stochastic computation graphs with deep GO / statistical back-propagation.

A graph is a DAG of random-variable nodes.  Each node draws ``dim``
independent coordinates from one family whose parameters come from a small
differentiable transform of the concatenated parent values.  Backward passes
push BP vectors from the integrand down through variable-nablas and transform
Jacobians; with Delta nodes everywhere this is ordinary reverse-mode autodiff.

All passes are batched: values carry a leading sample axis of length n.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distributions import (
    Categorical,
    DomainError,
    _REGISTRY,
    d_y_operator,
)
from .estimators import GradientEstimate, IntegrandSpec


class GraphError(ValueError):
    pass


class ParameterDomainError(DomainError):
    pass


# -- primitives ------------------------------------------------------------
# Each primitive maps (n, d_in) -> (n, d_out) and has an exact VJP returning
# per-sample gradients wrt its input and its own weights.


class Primitive:
    op: str = ""

    def __init__(self, in_dim):
        self.in_dim = int(in_dim)

    @property
    def out_dim(self):
        return self.in_dim

    @property
    def n_weights(self):
        return 0

    def forward(self, x, w):
        raise NotImplementedError

    def vjp(self, g, x, out, w):
        """(grad wrt x, per-sample grad wrt w of shape (n, n_weights))."""
        raise NotImplementedError

    def to_json(self):
        return {"op": self.op, "shape": [self.in_dim]}


class _Elementwise(Primitive):
    def vjp(self, g, x, out, w):
        return g * self.deriv(x, out), np.zeros((g.shape[0], 0))


class Identity(_Elementwise):
    op = "identity"

    def forward(self, x, w):
        return x

    def deriv(self, x, out):
        return np.ones_like(x)


class Exp(_Elementwise):
    op = "exp"

    def forward(self, x, w):
        return np.exp(x)

    def deriv(self, x, out):
        return out


class Softplus(_Elementwise):
    op = "softplus"

    def forward(self, x, w):
        return np.logaddexp(0.0, x)

    def deriv(self, x, out):
        return _sigmoid(x)


class Sigmoid(_Elementwise):
    op = "sigmoid"

    def forward(self, x, w):
        return _sigmoid(x)

    def deriv(self, x, out):
        return out * (1.0 - out)


class Tanh(_Elementwise):
    op = "tanh"

    def forward(self, x, w):
        return np.tanh(x)

    def deriv(self, x, out):
        return 1.0 - out * out


class Affine(Primitive):
    """x @ W + b with W of shape (d_in, d_out); weights flattened W then b."""

    op = "affine"

    def __init__(self, in_dim, out_dim, bias=True):
        super().__init__(in_dim)
        self._out = int(out_dim)
        self.bias = bool(bias)

    @property
    def out_dim(self):
        return self._out

    @property
    def n_weights(self):
        return self.in_dim * self._out + (self._out if self.bias else 0)

    def _split(self, w):
        k = self.in_dim * self._out
        W = w[:k].reshape(self.in_dim, self._out)
        return W, (w[k:] if self.bias else None)

    def forward(self, x, w):
        W, b = self._split(w)
        out = x @ W
        return out + b if self.bias else out

    def vjp(self, g, x, out, w):
        W, _ = self._split(w)
        gW = np.einsum("ni,nj->nij", x, g).reshape(g.shape[0], -1)
        gw = np.concatenate([gW, g], axis=1) if self.bias else gW
        return g @ W.T, gw

    def to_json(self):
        return {"op": self.op, "shape": [self.in_dim, self._out], "bias": self.bias}


class ScalePositive(Primitive):
    """exp(s) * x elementwise, weights s."""

    op = "scale_positive"

    @property
    def n_weights(self):
        return self.in_dim

    def forward(self, x, w):
        return np.exp(w) * x

    def vjp(self, g, x, out, w):
        return g * np.exp(w), g * out


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


_ELEMENTWISE = {c.op: c for c in (Identity, Exp, Softplus, Sigmoid, Tanh)}
PRIMITIVES = tuple(_ELEMENTWISE) + ("affine", "scale_positive")


def make_primitive(spec: dict, in_dim):
    op = spec.get("op")
    shape = list(spec.get("shape", []))
    if op == "affine":
        out_dim = shape[-1] if shape else None
        if out_dim is None:
            raise GraphError("affine needs shape [d_in, d_out]")
        if len(shape) == 2 and shape[0] != in_dim:
            raise GraphError(f"affine declared d_in={shape[0]} but receives {in_dim}")
        return Affine(in_dim, out_dim, spec.get("bias", True))
    if shape and shape[0] != in_dim:
        raise GraphError(f"{op} declared dim {shape[0]} but receives {in_dim}")
    if op == "scale_positive":
        return ScalePositive(in_dim)
    if op in _ELEMENTWISE:
        return _ELEMENTWISE[op](in_dim)
    raise GraphError(f"unknown transform primitive {op!r}")


class Chain:
    """Composition of primitives; weights are one flat block."""

    def __init__(self, steps, in_dim):
        self.in_dim = int(in_dim)
        self.steps = []
        d = self.in_dim
        for s in steps:
            p = s if isinstance(s, Primitive) else make_primitive(s, d)
            if p.in_dim != d:
                raise GraphError("primitive input width does not match the previous output")
            self.steps.append(p)
            d = p.out_dim
        self.out_dim = d
        self.offsets = np.cumsum([0] + [p.n_weights for p in self.steps])

    @property
    def n_weights(self):
        return int(self.offsets[-1])

    def forward(self, x, w):
        acts = [x]
        for k, p in enumerate(self.steps):
            acts.append(p.forward(acts[-1], w[self.offsets[k]:self.offsets[k + 1]]))
        return acts

    def vjp(self, g, acts, w):
        parts = []
        for k in range(len(self.steps) - 1, -1, -1):
            p = self.steps[k]
            g, gw = p.vjp(g, acts[k], acts[k + 1], w[self.offsets[k]:self.offsets[k + 1]])
            parts.append(gw)
        gw = np.concatenate(parts[::-1], axis=1) if parts else np.zeros((g.shape[0], 0))
        return g, gw

    def to_json(self):
        return [p.to_json() for p in self.steps]


class ParamTransform:
    """Route from parent values to a node's distribution parameters.

    Either one shared chain whose output (width P*dim) is split into the P
    parameters in order, or one entry per parameter name holding a chain or
    a fixed constant.
    """

    def __init__(self, param_names, dim, in_dim, spec):
        self.param_names = tuple(param_names)
        self.dim = int(dim)
        self.in_dim = int(in_dim)
        self.shared = None
        self.per_param = {}
        if isinstance(spec, list):
            self.shared = Chain(spec, in_dim)
            if self.shared.out_dim != len(self.param_names) * self.dim:
                raise GraphError(
                    f"shared transform must output {len(self.param_names) * self.dim} values, "
                    f"got {self.shared.out_dim}")
        elif isinstance(spec, dict):
            missing = set(self.param_names) - set(spec)
            extra = set(spec) - set(self.param_names)
            if missing or extra:
                raise GraphError(f"transform keys {sorted(spec)} do not match parameters {self.param_names}")
            for name in self.param_names:
                entry = spec[name]
                if isinstance(entry, (int, float, list)) and not _is_chain_spec(entry):
                    const = np.broadcast_to(np.asarray(entry, dtype=float), (self.dim,)).copy()
                    self.per_param[name] = const
                else:
                    c = Chain(entry, in_dim)
                    if c.out_dim != self.dim:
                        raise GraphError(f"transform for {name} outputs {c.out_dim}, node dim is {self.dim}")
                    self.per_param[name] = c
        else:
            raise GraphError("transform must be a list of primitives or a per-parameter mapping")
        blocks = [self.shared] if self.shared is not None else [
            self.per_param[n] for n in self.param_names if isinstance(self.per_param[n], Chain)]
        self._chains = blocks
        self.offsets = np.cumsum([0] + [c.n_weights for c in blocks])

    @property
    def n_weights(self):
        return int(self.offsets[-1])

    def forward(self, x, w):
        """Returns (list of P arrays (n, dim), cache)."""
        n = x.shape[0]
        if self.shared is not None:
            acts = self.shared.forward(x, w)
            out = acts[-1]
            params = [out[:, k * self.dim:(k + 1) * self.dim] for k in range(len(self.param_names))]
            return params, [acts]
        params, caches, j = [], [], 0
        for name in self.param_names:
            entry = self.per_param[name]
            if isinstance(entry, Chain):
                acts = entry.forward(x, w[self.offsets[j]:self.offsets[j + 1]])
                params.append(acts[-1])
                caches.append(acts)
                j += 1
            else:
                params.append(np.broadcast_to(entry, (n, self.dim)))
        return params, caches

    def vjp(self, g_params, cache, w):
        """Gradients of the inputs (n, in_dim) and weights (n, n_weights)."""
        n = g_params[0].shape[0]
        if self.shared is not None:
            g = np.concatenate(g_params, axis=1)
            return self.shared.vjp(g, cache[0], w)
        gx = np.zeros((n, self.in_dim))
        parts, j = [], 0
        for name, gp in zip(self.param_names, g_params):
            entry = self.per_param[name]
            if not isinstance(entry, Chain):
                continue
            gxi, gwi = entry.vjp(gp, cache[j], w[self.offsets[j]:self.offsets[j + 1]])
            gx = gx + gxi
            parts.append(gwi)
            j += 1
        gw = np.concatenate(parts, axis=1) if parts else np.zeros((n, 0))
        return gx, gw

    def to_json(self):
        if self.shared is not None:
            return self.shared.to_json()
        return {n: (e.to_json() if isinstance(e, Chain) else e.tolist()) for n, e in self.per_param.items()}


def _is_chain_spec(entry):
    return isinstance(entry, list) and all(isinstance(e, (dict, Primitive)) for e in entry) and len(entry) > 0


# -- graph -----------------------------------------------------------------


@dataclass
class StochasticNode:
    id: str
    family: str
    parents: list
    transform: object
    dim: int = 1
    role: str | None = None


class StochasticGraph:
    """Validated DAG of stochastic nodes over optional fixed inputs."""

    def __init__(self, nodes, inputs=None, weights=None):
        self.inputs = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in (inputs or {}).items()}
        raw = list(nodes)
        ids = [nd.id for nd in raw]
        if len(set(ids)) != len(ids):
            raise GraphError("duplicate node id")
        clash = set(ids) & set(self.inputs)
        if clash:
            raise GraphError(f"ids used both as node and input: {sorted(clash)}")
        self.nodes = _toposort(raw, self.inputs)
        self.by_id = {nd.id: nd for nd in self.nodes}
        self.children = {nd.id: [] for nd in self.nodes}
        for nd in self.nodes:
            for p in nd.parents:
                if p in self.children:
                    self.children[p].append(nd.id)
        self._build()
        if weights is None:
            self.weights = np.zeros(self.n_weights)
        else:
            self.set_weights(weights)

    def _dim(self, ref):
        return self.inputs[ref].size if ref in self.inputs else self.by_id[ref].dim

    def _build(self):
        self.transforms = {}
        self.slices = {}
        self.dists = {}
        start = 0
        for nd in self.nodes:
            cls = _REGISTRY.get(nd.family)
            if cls is None:
                raise GraphError(f"node {nd.id}: unknown family {nd.family!r}")
            if cls is Categorical:
                raise GraphError(f"node {nd.id}: Categorical nodes are not supported in graphs")
            has_children = bool(self.children[nd.id])
            role = "internal" if has_children else "leaf"
            if nd.role is not None and nd.role != role:
                raise GraphError(f"node {nd.id} declared {nd.role} but is {role}")
            nd.role = role
            if role == "internal" and cls.discrete:
                raise GraphError(
                    f"node {nd.id}: discrete internal nodes are unsupported; they need the "
                    "generalized nabla with an importance-sampling correction, which is out of scope")
            in_dim = sum(self._dim(p) for p in nd.parents)
            tr = nd.transform if isinstance(nd.transform, ParamTransform) else ParamTransform(
                cls.param_names, nd.dim, in_dim, nd.transform)
            if tr.in_dim != in_dim or tr.dim != nd.dim:
                raise GraphError(f"node {nd.id}: transform shape does not match parents/dim")
            self.transforms[nd.id] = tr
            self.dists[nd.id] = cls
            self.slices[nd.id] = slice(start, start + tr.n_weights)
            start += tr.n_weights
        self.n_weights = start

    def set_weights(self, w):
        w = np.asarray(w, dtype=float).ravel()
        if w.size != self.n_weights:
            raise GraphError(f"expected {self.n_weights} weights, got {w.size}")
        self.weights = w.copy()

    def leaves(self):
        return [nd.id for nd in self.nodes if nd.role == "leaf"]

    def is_chain(self):
        if len(self.nodes) == 0:
            return False
        for k, nd in enumerate(self.nodes):
            node_parents = [p for p in nd.parents if p in self.by_id]
            if k == 0 and node_parents:
                return False
            if k > 0 and node_parents != [self.nodes[k - 1].id]:
                return False
        return all(len(c) <= 1 for c in self.children.values())

    # -- serialization --------------------------------------------------
    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, (str, Path)):
            doc = json.loads(Path(doc).read_text())
        try:
            nodes = [StochasticNode(id=str(d["id"]), family=d["family"], parents=list(d.get("parents", [])),
                                    transform=d["transform"], dim=int(d.get("dim", 1)), role=d.get("role"))
                     for d in doc["nodes"]]
        except KeyError as e:
            raise GraphError(f"graph node missing field {e}") from None
        return cls(nodes, inputs=doc.get("inputs"), weights=doc.get("weights"))

    def to_json(self):
        return {
            "inputs": {k: v.tolist() for k, v in self.inputs.items()},
            "nodes": [{"id": nd.id, "family": nd.family, "parents": list(nd.parents), "dim": nd.dim,
                       "role": nd.role, "transform": self.transforms[nd.id].to_json()} for nd in self.nodes],
            "weights": self.weights.tolist(),
        }

    def save_weights(self, prefix):
        """Write ``prefix.bin`` (little-endian float64) and ``prefix.json`` (slice manifest)."""
        prefix = Path(prefix)
        self.weights.astype("<f8").tofile(prefix.with_suffix(".bin"))
        manifest = {"dtype": "float64", "byteorder": "little", "length": int(self.n_weights),
                    "slices": {k: [s.start, s.stop] for k, s in self.slices.items()}}
        prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2))

    def load_weights(self, prefix):
        prefix = Path(prefix)
        manifest = json.loads(prefix.with_suffix(".json").read_text())
        mine = {k: [s.start, s.stop] for k, s in self.slices.items()}
        if manifest.get("slices") != mine or manifest.get("length") != self.n_weights:
            raise GraphError("weights manifest does not match this graph")
        self.set_weights(np.fromfile(prefix.with_suffix(".bin"), dtype="<f8"))


def _toposort(nodes, inputs):
    by_id = {nd.id: nd for nd in nodes}
    for nd in nodes:
        for p in nd.parents:
            if p not in by_id and p not in inputs:
                raise GraphError(f"node {nd.id}: unknown parent {p!r}")
    order, state = [], {}

    def visit(nid, stack):
        s = state.get(nid)
        if s == 2:
            return
        if s == 1:
            raise GraphError(f"cycle through node {nid}")
        state[nid] = 1
        for p in by_id[nid].parents:
            if p in by_id:
                visit(p, stack)
        state[nid] = 2
        order.append(by_id[nid])

    for nd in nodes:
        visit(nd.id, ())
    return order


# -- passes ----------------------------------------------------------------


@dataclass
class Assignment:
    values: dict
    n: int
    _trace: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, key):
        return self.values[key]


def _parent_input(graph, nd, values, n):
    cols = [np.broadcast_to(graph.inputs[p], (n, graph.inputs[p].size)) if p in graph.inputs else values[p]
            for p in nd.parents]
    return np.concatenate(cols, axis=1) if cols else np.zeros((n, 0))


def forward_sample(graph: StochasticGraph, rng, n=1):
    """Sample every node in topological order; values have shape (n, dim)."""
    values, trace = {}, {}
    for nd in graph.nodes:
        x = _parent_input(graph, nd, values, n)
        w = graph.weights[graph.slices[nd.id]]
        tr = graph.transforms[nd.id]
        params, cache = tr.forward(x, w)
        try:
            dist = graph.dists[nd.id](*params)
        except DomainError as e:
            raise ParameterDomainError(f"node {nd.id}: transform produced invalid parameters ({e})") from None
        z = dist.sample(rng)
        values[nd.id] = z
        trace[nd.id] = (x, cache, dist)
    return Assignment(values, n, trace)


def statistical_backprop(graph: StochasticGraph, assignment: Assignment, leaf_D: dict):
    """Per-sample gradient wrt the graph weights, shape (n, n_weights).

    ``leaf_D`` maps node ids to D_z[f] arrays of shape (n, dim).  Every leaf
    needs an entry; entries for internal nodes add the direct dependence of
    f on that node to its BP vector.
    """
    n = assignment.n
    bp = {}
    for nid in graph.leaves():
        if nid not in leaf_D:
            raise GraphError(f"missing D entry for leaf {nid}")
    for nid, d in leaf_D.items():
        if nid not in graph.by_id:
            raise GraphError(f"D entry for unknown node {nid}")
        d = np.asarray(d, dtype=float)
        if d.shape != (n, graph.by_id[nid].dim):
            raise GraphError(f"D entry for {nid} has shape {d.shape}, expected {(n, graph.by_id[nid].dim)}")
        bp[nid] = d.copy()
    grad = np.zeros((n, graph.n_weights))
    for nd in reversed(graph.nodes):
        if nd.id not in bp:
            continue
        x, cache, dist = assignment._trace[nd.id]
        b = bp[nd.id]
        nabla = dist.variable_nabla(assignment.values[nd.id])
        g_params = [nabla[..., k] * b for k in range(nabla.shape[-1])]
        tr = graph.transforms[nd.id]
        gx, gw = tr.vjp(g_params, cache, graph.weights[graph.slices[nd.id]])
        grad[:, graph.slices[nd.id]] = gw
        col = 0
        for p in nd.parents:
            width = graph._dim(p)
            if p in graph.by_id:
                part = gx[:, col:col + width]
                bp[p] = bp[p] + part if p in bp else part.copy()
            col += width
    return grad


def graph_leaf_D(graph: StochasticGraph, assignment: Assignment, f: IntegrandSpec, reads):
    """D_z[f] per node in ``reads`` where f sees their values concatenated in order."""
    y = np.concatenate([assignment.values[r] for r in reads], axis=1)
    out, col = {}, 0
    for r in reads:
        nd = graph.by_id[r]
        support = assignment._trace[r][2].support
        cols = [d_y_operator(support, f, y, col + j) for j in range(nd.dim)]
        out[r] = np.stack(cols, axis=1)
        col += nd.dim
    return out


def graph_go_gradient(graph: StochasticGraph, f: IntegrandSpec, n, rng, reads=None):
    """Average of per-sample statistical back-propagation over n draws."""
    reads = list(reads) if reads is not None else graph.leaves()
    a = forward_sample(graph, rng, n)
    samples = statistical_backprop(graph, a, graph_leaf_D(graph, a, f, reads))
    return GradientEstimate(samples.mean(axis=0), n, "deep_go", samples)


def deep_go_gradient(graph: StochasticGraph, f: IntegrandSpec, n, rng):
    """Deep GO over a chain; f reads the last node's value."""
    if not graph.is_chain():
        raise GraphError("deep_go_gradient needs a simple chain")
    return graph_go_gradient(graph, f, n, rng, reads=[graph.nodes[-1].id])


GRAPH_INTEGRANDS = {
    "sum": IntegrandSpec(eval=lambda y: y.sum(axis=1), grad=lambda y: np.ones_like(y)),
    "sum_squares": IntegrandSpec(eval=lambda y: (y * y).sum(axis=1), grad=lambda y: 2.0 * y),
    "gaussian_bump": IntegrandSpec(eval=lambda y: np.exp(-(y * y) / 10.0).sum(axis=1),
                                   grad=lambda y: -0.2 * y * np.exp(-(y * y) / 10.0)),
}
