"""Market data model: event tree, frictional prices, endowments, utilities.

The market lives on a finite event tree.  Each node carries the ask price S
of the single risky asset; selling happens at the bid (1-lambda)*S.  Claims
pay off at terminal nodes only.  Everything here is immutable after
construction and validated eagerly, so the solver layers can assume clean
inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-12


class InstanceError(ValueError):
    """Raised when an instance document or model violates an invariant."""


# ---------------------------------------------------------------------------
# Event tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioTree:
    """Finite filtered event tree.

    Nodes are indexed 0..n-1 with the root at index 0 and parents preceding
    children.  ``cond_prob[v]`` is the probability of reaching v from its
    parent (1.0 at the root); unconditional probabilities are products along
    the path, so measure changes stay local to an edge.
    """

    parent: np.ndarray        # int, -1 at root
    time: np.ndarray          # int period of each node
    cond_prob: np.ndarray     # conditional edge probability
    children: tuple[tuple[int, ...], ...] = field(repr=False)
    horizon: int = 0

    @staticmethod
    def from_arrays(parent, cond_prob) -> "ScenarioTree":
        parent = np.asarray(parent, dtype=int)
        cond_prob = np.asarray(cond_prob, dtype=float)
        n = parent.size
        if n == 0:
            raise InstanceError("tree has no nodes")
        if parent[0] != -1:
            raise InstanceError("node 0 must be the root (parent null)")
        if np.count_nonzero(parent == -1) != 1:
            raise InstanceError("exactly one root is required")
        time = np.zeros(n, dtype=int)
        kids: list[list[int]] = [[] for _ in range(n)]
        for v in range(1, n):
            p = parent[v]
            if not 0 <= p < v:
                raise InstanceError(f"node {v}: parent {p} must appear before it")
            time[v] = time[p] + 1
            kids[p].append(v)
        horizon = int(time.max())
        if horizon < 1:
            raise InstanceError("horizon must be at least 1")
        for v in range(n):
            if not np.isfinite(cond_prob[v]) or cond_prob[v] <= 0.0:
                raise InstanceError(f"cond_prob must be positive at node {v}")
            if kids[v]:
                s = cond_prob[list(kids[v])].sum()
                if abs(s - 1.0) > PROB_TOL:
                    raise InstanceError(f"cond_prob sum != 1 at node {v}")
            elif time[v] != horizon:
                raise InstanceError(f"terminal node {v} at time {time[v]} != T={horizon}")
        if abs(cond_prob[0] - 1.0) > PROB_TOL:
            raise InstanceError("root cond_prob must equal 1")
        return ScenarioTree(parent=parent, time=time, cond_prob=cond_prob,
                            children=tuple(tuple(k) for k in kids), horizon=horizon)

    @property
    def n_nodes(self) -> int:
        return self.parent.size

    @property
    def terminal(self) -> np.ndarray:
        """Terminal node indices in id order."""
        return np.flatnonzero(self.time == self.horizon)

    @property
    def nonterminal(self) -> np.ndarray:
        return np.flatnonzero(self.time < self.horizon)

    def prob(self) -> np.ndarray:
        """Unconditional node probabilities (product of edge probabilities)."""
        p = np.ones(self.n_nodes)
        for v in range(1, self.n_nodes):
            p[v] = p[self.parent[v]] * self.cond_prob[v]
        return p

    def path(self, v: int) -> list[int]:
        """Nodes from the root down to v, inclusive."""
        out = [v]
        while self.parent[out[-1]] != -1:
            out.append(int(self.parent[out[-1]]))
        return out[::-1]

    def conditional_expectation(self, terminal_values: np.ndarray) -> np.ndarray:
        """E[X_T | node] for every node, from terminal values in id order."""
        x = np.zeros(self.n_nodes)
        x[self.terminal] = np.asarray(terminal_values, dtype=float)
        for v in range(self.n_nodes - 1, -1, -1):
            if self.children[v]:
                x[v] = sum(self.cond_prob[c] * x[c] for c in self.children[v])
        return x


# ---------------------------------------------------------------------------
# Market and endowments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarketModel:
    """Event tree plus the ask price process S and proportional cost lambda."""

    tree: ScenarioTree
    ask: np.ndarray
    lam: float

    def __post_init__(self):
        ask = np.asarray(self.ask, dtype=float)
        if ask.shape != (self.tree.n_nodes,):
            raise InstanceError("ask price array must have one entry per node")
        bad = np.flatnonzero(~(np.isfinite(ask) & (ask > 0.0)))
        if bad.size:
            raise InstanceError(f"ask price must be positive at node {bad[0]}")
        if not (0.0 < self.lam < 1.0):
            raise InstanceError("lambda out of (0,1)")
        object.__setattr__(self, "ask", ask)

    @property
    def bid(self) -> np.ndarray:
        return (1.0 - self.lam) * self.ask

    def with_lambda(self, lam: float) -> "MarketModel":
        return MarketModel(tree=self.tree, ask=self.ask, lam=lam)


@dataclass(frozen=True)
class EndowmentSet:
    """Terminal payoffs of N static claims, indexed (claim, terminal node)."""

    payoff: np.ndarray  # shape (N, n_terminal), nonnegative

    def __post_init__(self):
        payoff = np.atleast_2d(np.asarray(self.payoff, dtype=float))
        if payoff.size and (not np.all(np.isfinite(payoff)) or payoff.min() < 0.0):
            raise InstanceError("endowment payoffs must be finite and >= 0")
        object.__setattr__(self, "payoff", payoff)

    @property
    def n_claims(self) -> int:
        return 0 if self.payoff.size == 0 else self.payoff.shape[0]

    def combine(self, q) -> np.ndarray:
        """Terminal payoff of the static position q (vector of length N)."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if self.n_claims == 0:
            if np.any(q != 0.0):
                raise InstanceError("q given but the instance has no claims")
            return np.zeros(self.payoff.shape[1] if self.payoff.ndim == 2 else 0)
        if q.shape != (self.n_claims,):
            raise InstanceError(f"q must have length {self.n_claims}")
        return q @ self.payoff


# ---------------------------------------------------------------------------
# Utility functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UtilityFunction:
    """Log or power utility on (0, inf).

    Both kinds are strictly increasing, strictly concave, satisfy the Inada
    conditions and have asymptotic elasticity < 1, so the duality layer never
    needs to certify those properties numerically.

    power(p): U(x) = x**p / p with p < 1, p != 0.  Its conjugate is again of
    power form with the conjugate exponent p/(p-1).
    """

    kind: str           # "log" | "power"
    p: float = 0.0

    def __post_init__(self):
        if self.kind not in ("log", "power"):
            raise InstanceError(f"unknown utility kind {self.kind!r}")
        if self.kind == "power" and not (self.p < 1.0 and self.p != 0.0):
            raise InstanceError("power utility needs p < 1, p != 0")

    @staticmethod
    def log() -> "UtilityFunction":
        return UtilityFunction("log")

    @staticmethod
    def power(p: float) -> "UtilityFunction":
        return UtilityFunction("power", p)

    def _check_pos(self, x, what="x"):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0.0) or not np.all(np.isfinite(x)):
            raise ValueError(f"{what} must be positive")
        return x

    def value(self, x):
        x = self._check_pos(x)
        return np.log(x) if self.kind == "log" else x ** self.p / self.p

    def marginal(self, x):
        """U'(x)."""
        x = self._check_pos(x)
        return 1.0 / x if self.kind == "log" else x ** (self.p - 1.0)

    def marginal_inverse(self, y):
        """(U')^{-1}(y)."""
        y = self._check_pos(y, "y")
        return 1.0 / y if self.kind == "log" else y ** (1.0 / (self.p - 1.0))

    def conjugate(self, y):
        """Utilde(y) = sup_{x>0} (U(x) - x*y), in closed form."""
        y = self._check_pos(y, "y")
        if self.kind == "log":
            return -np.log(y) - 1.0
        a = self.p / (self.p - 1.0)
        return (1.0 - self.p) / self.p * y ** a

    def conjugate_exponent(self) -> float:
        """Exponent a with -Utilde(y) = y**a / a (power case); 0 marks log."""
        return 0.0 if self.kind == "log" else self.p / (self.p - 1.0)

    def asymptotic_elasticity_bound(self, lo=1e2, hi=1e8, num=400) -> float:
        """sup of x*U'(x)/U(x) over a log grid; < 1 for every supported kind."""
        x = np.geomspace(lo, hi, num)
        x = x[self.value(x) > 0.0] if self.kind == "log" else x
        u = self.value(x)
        return float(np.max(x * self.marginal(x) / u))


# ---------------------------------------------------------------------------
# Liquidation value
# ---------------------------------------------------------------------------

def liquidation_value(model: MarketModel, holdings, node: int) -> float:
    """Cash plus the stock position unwound at the unfavourable spread side.

    V = phi0 + (phi1)^+ (1-lambda) S - (phi1)^- S at the given node.
    """
    phi0, phi1 = float(holdings[0]), float(holdings[1])
    s = model.ask[node]
    return phi0 + max(phi1, 0.0) * (1.0 - model.lam) * s - max(-phi1, 0.0) * s


# ---------------------------------------------------------------------------
# Instance documents
# ---------------------------------------------------------------------------

def parse_instance(doc: dict):
    """Validate an instance document and build the model triple.

    Expected keys: ``tree`` (list of {id, parent, p, S} with parents first),
    ``lambda``, ``endowments`` (one payoff list per claim, terminal id
    order), ``utility`` ({kind: "log"} or {kind: "power", p: float}).
    """
    if not isinstance(doc, dict):
        raise InstanceError("instance document must be a JSON object")
    for key in ("tree", "lambda", "endowments", "utility"):
        if key not in doc:
            raise InstanceError(f"missing field {key!r}")

    rec = doc["tree"]
    if not isinstance(rec, list) or not rec:
        raise InstanceError("field 'tree' must be a nonempty list")
    n = len(rec)
    parent = np.empty(n, dtype=int)
    prob = np.empty(n, dtype=float)
    ask = np.empty(n, dtype=float)
    for i, r in enumerate(rec):
        try:
            node_id = int(r["id"])
            par = r["parent"]
            prob_i = float(r["p"])
            ask_i = float(r["S"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InstanceError(f"tree record {i}: {exc}") from exc
        if node_id != i:
            raise InstanceError(f"node ids must be 0..n-1 in order (record {i} has id {node_id})")
        if par is None:
            parent[i] = -1
        else:
            par = int(par)
            if not 0 <= par < n:
                raise InstanceError(f"node {i}: dangling parent id {par}")
            parent[i] = par
        prob[i] = prob_i
        ask[i] = ask_i

    tree = ScenarioTree.from_arrays(parent, prob)
    lam = float(doc["lambda"])
    model = MarketModel(tree=tree, ask=ask, lam=lam)

    endow = doc["endowments"]
    if not isinstance(endow, list):
        raise InstanceError("field 'endowments' must be a list of payoff lists")
    n_term = tree.terminal.size
    payoff = np.zeros((len(endow), n_term))
    for i, row in enumerate(endow):
        if not isinstance(row, list) or len(row) != n_term:
            raise InstanceError(f"endowment {i} must list {n_term} terminal payoffs")
        payoff[i] = [float(v) for v in row]
    endowments = EndowmentSet(payoff=payoff)

    util = doc["utility"]
    if not isinstance(util, dict) or "kind" not in util:
        raise InstanceError("field 'utility' must carry a 'kind'")
    if util["kind"] == "log":
        utility = UtilityFunction.log()
    elif util["kind"] == "power":
        if "p" not in util:
            raise InstanceError("power utility needs field 'p'")
        utility = UtilityFunction.power(float(util["p"]))
    else:
        raise InstanceError(f"unknown utility kind {util['kind']!r}")

    return model, endowments, utility


def build_model(text_or_doc):
    """Parse a UTF-8 JSON instance (text, bytes or decoded dict)."""
    if isinstance(text_or_doc, (str, bytes)):
        try:
            doc = json.loads(text_or_doc)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"invalid JSON: {exc}") from exc
    else:
        doc = text_or_doc
    return parse_instance(doc)


def instance_a() -> dict:
    """One-period binomial reference instance used throughout the tests.

    S0=4 moving to 8 or 2 with probability 1/2 each, lambda=0.25, one claim
    paying (3, 0) at the terminal nodes, log utility.
    """
    return {
        "tree": [
            {"id": 0, "parent": None, "p": 1.0, "S": 4.0},
            {"id": 1, "parent": 0, "p": 0.5, "S": 8.0},
            {"id": 2, "parent": 0, "p": 0.5, "S": 2.0},
        ],
        "lambda": 0.25,
        "endowments": [[3.0, 0.0]],
        "utility": {"kind": "log"},
    }


def _require(cond: bool, msg: str):
    if not cond:
        raise InstanceError(msg)


def model_digest(doc_bytes: bytes) -> str:
    """Content hash of the raw instance bytes (reports embed it)."""
    import hashlib

    return hashlib.sha256(doc_bytes).hexdigest()
