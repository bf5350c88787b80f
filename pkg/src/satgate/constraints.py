"""Safety constraints and the satisfiability gates around action execution.

Pre-execution constraints are linear inequalities over boolean detector
variables: an energy knapsack (expected enable cost within budget), one
coverage cardinality per device (enough enabled incident detectors), and a
count window tying the enabled total to the action's detector-ratio target.
The window belongs to the action being vetted, not to the standing set, so
unsat cores report only standing constraints whenever possible.

Post-execution constraints are scalar bounds checked against what actually
happened: measured energy draw and the benign-reimage loss of the step.

The solver is a small branch and bound over the booleans with interval-based
bound propagation, a greedy witness attempt first, cheapest-variable
branching, and a node budget.  Budget exhaustion yields Unknown, which
callers must treat as not-satisfied; every Sat answer carries a witness that
was re-verified against the full constraint list before being returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from . import actions
from .config import EnvConfig
from .env import Observation
from .topology import Topology

_EPS = 1e-9
NODE_BUDGET = 10 ** 6


class ConstraintError(ValueError):
    """Unformulable problem or inconsistent constraint-set edit."""


@dataclass(frozen=True)
class LinearConstraint:
    cid: str
    vars: tuple[int, ...]
    coeffs: tuple[float, ...]
    sense: str                  # "<=" or ">="
    bound: float

    def __post_init__(self):
        if self.sense not in ("<=", ">="):
            raise ConstraintError(f"bad sense {self.sense!r}")
        if len(self.vars) != len(self.coeffs) or not self.vars:
            raise ConstraintError("vars and coeffs must align and be nonempty")

    def holds(self, assignment: np.ndarray) -> bool:
        total = float(np.dot(self.coeffs, assignment[list(self.vars)]))
        if self.sense == "<=":
            return total <= self.bound + _EPS
        return total >= self.bound - _EPS


@dataclass(frozen=True)
class ScalarBound:
    cid: str
    bound: float


@dataclass(frozen=True)
class ActionExclusionRule:
    cid: str
    state_index: int
    action_index: int
    origin: str = "learned"


def exclusion_rule(state_index: int, action_index: int,
                   origin: str = "learned") -> ActionExclusionRule:
    return ActionExclusionRule(f"exclude:{state_index}:{action_index}",
                               state_index, action_index, origin)


class ConstraintSet:
    """Immutable-by-convention bundle of pre, post, and exclusion constraints."""

    def __init__(self, n_detectors: int, pre: list[LinearConstraint],
                 post: list[ScalarBound], exclusions: list[ActionExclusionRule] = ()):
        self.n_detectors = int(n_detectors)
        self.pre = list(pre)
        self.post = list(post)
        self.exclusions = list(exclusions)
        ids = [c.cid for c in self.pre] + [b.cid for b in self.post] \
            + [r.cid for r in self.exclusions]
        if len(set(ids)) != len(ids):
            raise ConstraintError("constraint ids must be unique")
        self._by_id = {c.cid: c for c in self.pre}
        self._by_id.update({b.cid: b for b in self.post})
        self._by_id.update({r.cid: r for r in self.exclusions})
        self._excluded = {(r.state_index, r.action_index): r for r in self.exclusions}

    def __contains__(self, cid: str) -> bool:
        return cid in self._by_id

    def excluded(self, state_index: int, action_index: int) -> ActionExclusionRule | None:
        return self._excluded.get((state_index, action_index))

    def post_bound(self, cid: str) -> float:
        bound = self._by_id[cid]
        assert isinstance(bound, ScalarBound)
        return bound.bound

    def linear_signature(self) -> tuple:
        return tuple((c.cid, c.vars, c.coeffs, c.sense, c.bound) for c in self.pre)

    def dump(self) -> str:
        """Human-auditable listing of the active constraints."""
        lines = []
        for c in self.pre:
            if c.cid.startswith("cover:"):
                label = f"cover device:{c.cid.split(':', 1)[1]}"
            else:
                label = c.cid
            lines.append(f"pre {label} {c.sense} {c.bound:g}")
        for r in self.exclusions:
            lines.append(f"exclude state:{r.state_index} action:{r.action_index} "
                         f"origin={r.origin}")
        for b in self.post:
            lines.append(f"post {b.cid.removeprefix('post_')} <= {b.bound:g}")
        return "\n".join(lines) + "\n"


def resolve_energy_bounds(topology: Topology, config: EnvConfig) -> tuple[float, float]:
    """(e_budget, e_max) with the derived defaults filled in."""
    e_budget = config.e_budget
    if e_budget is None:
        e_budget = config.e_budget_frac * topology.total_cost
    e_max = config.e_max
    if e_max is None:
        e_max = config.e_max_frac * e_budget
    return float(e_budget), float(e_max)


def formulate_initial(topology: Topology, config: EnvConfig) -> ConstraintSet:
    """Standing constraints for a topology: energy, coverage, post bounds."""
    for v in range(topology.n_devices):
        if topology.degree[v] < config.l_min:
            raise ConstraintError(
                f"device {v} has degree {topology.degree[v]} < l_min={config.l_min}; "
                "coverage cannot be formulated")
    e_budget, e_max = resolve_energy_bounds(topology, config)
    all_vars = tuple(range(topology.m))
    pre = [LinearConstraint("energy", all_vars, tuple(topology.costs), "<=", e_budget)]
    for v in range(topology.n_devices):
        inc = tuple(int(d) for d in np.sort(topology.incident(v)))
        pre.append(LinearConstraint(f"cover:{v}", inc, (1.0,) * len(inc),
                                    ">=", float(config.l_min)))
    post = [ScalarBound("post_energy", e_max),
            ScalarBound("post_reimage_loss", config.reimage_loss_max)]
    return ConstraintSet(topology.m, pre, post)


def update_set(cs: ConstraintSet, add=(), remove=()) -> ConstraintSet:
    """New set with the edits applied; duplicate adds and unknown removals fail."""
    pre = list(cs.pre)
    post = list(cs.post)
    exclusions = list(cs.exclusions)
    for cid in remove:
        if cid not in cs:
            raise ConstraintError(f"cannot remove unknown constraint {cid!r}")
        pre = [c for c in pre if c.cid != cid]
        post = [b for b in post if b.cid != cid]
        exclusions = [r for r in exclusions if r.cid != cid]
    present = {c.cid for c in pre} | {b.cid for b in post} | {r.cid for r in exclusions}
    for item in add:
        if item.cid in present:
            raise ConstraintError(f"duplicate constraint id {item.cid!r}")
        present.add(item.cid)
        if isinstance(item, LinearConstraint):
            pre.append(item)
        elif isinstance(item, ScalarBound):
            post.append(item)
        elif isinstance(item, ActionExclusionRule):
            exclusions.append(item)
        else:
            raise ConstraintError(f"cannot add {type(item).__name__}")
    return ConstraintSet(cs.n_detectors, pre, post, exclusions)


def count_window(target_f: float, n_detectors: int,
                 slack_frac: float = 0.05) -> tuple[int, int]:
    """Enabled-count interval for a detector-ratio target, with +-5% slack."""
    slack = int(np.floor(slack_frac * n_detectors))
    lo = max(0, int(np.floor(target_f * n_detectors)) - slack)
    hi = min(n_detectors, int(np.ceil(target_f * n_detectors)) + slack)
    return lo, hi


@dataclass
class SatResult:
    status: str                       # "sat", "unsat", "unknown"
    assignment: np.ndarray | None = None
    violated: tuple[str, ...] = ()

    @property
    def sat(self) -> bool:
        return self.status == "sat"


_COUNT_IDS = ("count_lo", "count_hi")


def _check_all(cons, assignment: np.ndarray) -> list[str]:
    return [c.cid for c in cons if not c.holds(assignment)]


def _fill_to(enabled: np.ndarray, lo: int, costs: np.ndarray) -> None:
    short = lo - int(np.count_nonzero(enabled))
    if short > 0:
        for d in np.lexsort((np.arange(enabled.size), costs)):
            if not enabled[d]:
                enabled[d] = True
                short -= 1
                if short == 0:
                    break


def _greedy_cheapest(cons, n_detectors: int, lo: int, costs: np.ndarray) -> np.ndarray:
    """Cheapest-first candidate: meet every >= cardinality, then fill to lo."""
    enabled = np.zeros(n_detectors, dtype=bool)
    for c in cons:
        if c.sense != ">=" or c.cid in _COUNT_IDS:
            continue
        idx = np.array(c.vars, dtype=np.int64)
        need = int(np.ceil(c.bound - _EPS)) - int(np.count_nonzero(enabled[idx]))
        if need > 0:
            off = idx[~enabled[idx]]
            pick = off[np.lexsort((off, costs[off]))][:need]
            enabled[pick] = True
    _fill_to(enabled, lo, costs)
    return enabled


def _greedy_fewest(cons, n_detectors: int, lo: int, costs: np.ndarray) -> np.ndarray:
    """Cover-greedy candidate for tight count ceilings: repeatedly enable the
    variable that serves the most unmet cardinality demands, cost breaking
    ties, so the total enabled count stays near the minimum."""
    enabled = np.zeros(n_detectors, dtype=bool)
    deficits = {}
    var_cons: dict[int, list[str]] = {}
    for c in cons:
        if c.sense != ">=" or c.cid in _COUNT_IDS:
            continue
        deficits[c.cid] = (int(np.ceil(c.bound - _EPS)), np.array(c.vars, dtype=np.int64))
        for v in c.vars:
            var_cons.setdefault(v, []).append(c.cid)
    remaining = {cid: need for cid, (need, _) in deficits.items() if need > 0}
    while remaining:
        gain = np.zeros(n_detectors, dtype=np.int64)
        for cid in remaining:
            gain[deficits[cid][1]] += 1
        gain[enabled] = 0
        if gain.max() == 0:
            break
        candidates = np.flatnonzero(gain == gain.max())
        pick = int(candidates[np.argmin(costs[candidates])])
        enabled[pick] = True
        for cid in var_cons.get(pick, ()):
            if cid in remaining:
                remaining[cid] -= 1
                if remaining[cid] <= 0:
                    del remaining[cid]
    _fill_to(enabled, lo, costs)
    return enabled


def _match_bound(card_cons, cons, D: int, lo: int, hi: int,
                 costs: np.ndarray) -> SatResult | None:
    """Exact minimum-count reasoning for unit-demand cover structures.

    Returns Unsat when even the best pairing cannot fit under the count
    ceiling, Sat with a Gallai-style witness (matching edges plus the
    cheapest option per unmatched demand) when that witness checks out, and
    None when the structure does not apply or nothing is decided.
    """
    if not card_cons or hi >= D:
        return None
    if any(bound != 1.0 for _, _, bound in card_cons):
        return None
    owners: dict[int, list[int]] = {}
    for ci, (_, idx, _) in enumerate(card_cons):
        for v in idx:
            owners.setdefault(int(v), []).append(ci)
    if any(len(o) > 2 for o in owners.values()):
        return None

    big = float(costs.max()) + 1.0
    graph = nx.Graph()
    graph.add_nodes_from(range(len(card_cons)))
    pair_var: dict[tuple[int, int], int] = {}
    for v, served in owners.items():
        if len(served) == 2:
            key = (min(served), max(served))
            prior = pair_var.get(key)
            if prior is None or costs[v] < costs[prior]:
                pair_var[key] = v
    for (a, b), v in pair_var.items():
        graph.add_edge(a, b, weight=big - float(costs[v]), var=v)
    matching = nx.max_weight_matching(graph, maxcardinality=True)
    min_count = len(card_cons) - len(matching)
    if min_count > hi:
        return SatResult("unsat", violated=tuple(sorted(c[0] for c in card_cons)))

    enabled = np.zeros(D, dtype=bool)
    matched = set()
    for a, b in matching:
        enabled[pair_var[(min(a, b), max(a, b))]] = True
        matched.update((a, b))
    for ci, (_, idx, _) in enumerate(card_cons):
        if ci not in matched:
            pick = idx[np.lexsort((idx, costs[idx]))][0]
            enabled[pick] = True
    _fill_to(enabled, lo, costs)
    if not _check_all(cons, enabled):
        return SatResult("sat", enabled)
    return None


def solve_pre(cs: ConstraintSet, target_f: float,
              node_budget: int = NODE_BUDGET) -> SatResult:
    """Decide the pre-constraints against a detector-ratio target.

    Sound and complete up to the node budget: Sat always returns a verified
    witness, Unsat reports a best-effort core of standing constraint ids, and
    Unknown means the budget ran out before a verdict.
    """
    D = cs.n_detectors
    lo, hi = count_window(target_f, D)
    all_vars = tuple(range(D))
    cons = list(cs.pre) + [
        LinearConstraint("count_lo", all_vars, (1.0,) * D, ">=", float(lo)),
        LinearConstraint("count_hi", all_vars, (1.0,) * D, "<=", float(hi)),
    ]

    costs = np.ones(D)
    for c in cs.pre:
        if c.cid == "energy":
            costs = np.zeros(D)
            costs[list(c.vars)] = c.coeffs
            energy_bound = c.bound
            break
    else:
        energy_bound = None

    for builder in (_greedy_cheapest, _greedy_fewest):
        witness = builder(cons, D, lo, costs)
        if not _check_all(cons, witness):
            return SatResult("sat", witness)

    con_vars = [np.array(c.vars, dtype=np.int64) for c in cons]
    con_coefs = [np.array(c.coeffs) for c in cons]
    # Cardinality constraints with unit coefficients over few variables; used
    # by the joint count-ceiling bound below.
    card_cons = [(c.cid, np.array(c.vars, dtype=np.int64), float(c.bound))
                 for c in cons
                 if c.sense == ">=" and c.cid not in _COUNT_IDS
                 and all(x == 1.0 for x in c.coeffs)]

    # When the cardinality demands form a plain edge cover (demand 1 each,
    # every variable serving at most two of them), matching theory decides
    # tight count ceilings exactly: the fewest variables that can satisfy
    # all demands is n_demands minus a maximum matching.  That both rejects
    # windows below the minimum outright and yields a minimum-count witness.
    verdict = _match_bound(card_cons, cons, D, lo, hi, costs)
    if verdict is not None:
        return verdict

    conflicts: set[str] = set()
    nodes = 0
    max_membership = 1
    if card_cons:
        membership = np.zeros(D, dtype=np.int64)
        for _, idx, _ in card_cons:
            membership[idx] += 1
        max_membership = max(1, int(membership.max()))

    def propagate(a: np.ndarray) -> bool:
        # Interval propagation to fixpoint; False on conflict.  a holds
        # -1 undecided / 0 / 1 per variable and is mutated in place.
        while True:
            changed = False
            for c, idx, coef in zip(cons, con_vars, con_coefs):
                vals = a[idx]
                und = vals < 0
                base = float(np.dot(coef, vals == 1))
                pos = coef > 0
                smin = base + float(coef[und & ~pos].sum())
                smax = base + float(coef[und & pos].sum())
                if c.sense == "<=":
                    if smin > c.bound + _EPS:
                        conflicts.add(c.cid)
                        return False
                    margin = c.bound - smin
                    tight = und & (np.where(pos, coef, -coef) > margin + _EPS)
                    if tight.any():
                        a[idx[tight]] = np.where(pos[tight], 0, 1)
                        changed = True
                else:
                    if smax < c.bound - _EPS:
                        conflicts.add(c.cid)
                        return False
                    margin = smax - c.bound
                    tight = und & (np.where(pos, coef, -coef) > margin + _EPS)
                    if tight.any():
                        a[idx[tight]] = np.where(pos[tight], 1, 0)
                        changed = True
            if not changed:
                break
        # Joint bound the per-constraint pass cannot see: reaching the count
        # floor costs at least the cheapest completion, which must fit the
        # energy budget.
        n1 = int(np.count_nonzero(a == 1))
        if energy_bound is not None:
            need = lo - n1
            spent = float(costs[a == 1].sum())
            if need > 0:
                open_costs = np.sort(costs[a < 0])
                if open_costs.size < need:
                    conflicts.add("count_lo")
                    return False
                spent += float(open_costs[:need].sum())
            if spent > energy_bound + _EPS:
                conflicts.add("energy")
                return False
        # Mirror image for the count ceiling: serving the remaining
        # cardinality deficits takes at least ceil(deficit / membership)
        # further enables, which must fit under hi.
        if card_cons and hi < D:
            total_deficit = 0
            deficient = []
            for cid, idx, bound in card_cons:
                d = int(np.ceil(bound - _EPS)) - int(np.count_nonzero(a[idx] == 1))
                if d > 0:
                    total_deficit += d
                    deficient.append(cid)
            if total_deficit:
                extra = -(-total_deficit // max_membership)
                if n1 + extra > hi:
                    conflicts.update(deficient)
                    return False
        return True

    def search(a: np.ndarray) -> np.ndarray | None:
        nonlocal nodes
        if nodes >= node_budget:
            raise _BudgetExhausted
        nodes += 1
        if not propagate(a):
            return None
        und = np.flatnonzero(a < 0)
        if und.size == 0:
            final = a == 1
            if _check_all(cons, final):
                return None
            return final
        # Fail-first: branch into the unmet cardinality demand with the
        # fewest open variables so dead ends surface near the root.
        tightest = None
        for _, idx, bound in card_cons:
            vals = a[idx]
            if int(np.ceil(bound - _EPS)) > int(np.count_nonzero(vals == 1)):
                open_vars = idx[vals < 0]
                if tightest is None or open_vars.size < tightest.size:
                    tightest = open_vars
        if tightest is not None and tightest.size:
            pick = int(tightest[np.argmin(costs[tightest])])
            order = (1, 0)
        else:
            pick = int(und[np.argmin(costs[und])])
            order = (1, 0) if int(np.count_nonzero(a == 1)) < lo else (0, 1)
        for value in order:
            child = a.copy()
            child[pick] = value
            found = search(child)
            if found is not None:
                return found
        return None

    try:
        found = search(np.full(D, -1, dtype=np.int8))
    except _BudgetExhausted:
        return SatResult("unknown", violated=("node_budget",))
    if found is not None:
        bad = _check_all(cons, found)
        assert not bad, f"solver returned invalid witness: {bad}"
        return SatResult("sat", found)
    core = sorted(conflicts - set(_COUNT_IDS)) or sorted(conflicts)
    return SatResult("unsat", violated=tuple(core))


class _BudgetExhausted(Exception):
    pass


class PreSolver:
    """solve_pre with memoization over count windows.

    Exclusion-rule edits leave the linear problem untouched, so one solver
    instance survives learned-rule promotion; any change to the linear part
    requires a fresh instance (checked against the signature).
    """

    def __init__(self, cs: ConstraintSet, node_budget: int = NODE_BUDGET):
        self.cs = cs
        self.node_budget = node_budget
        self.signature = cs.linear_signature()
        self.calls = 0
        self._cache: dict[tuple[int, int], SatResult] = {}

    def solve(self, target_f: float) -> SatResult:
        key = count_window(target_f, self.cs.n_detectors)
        hit = self._cache.get(key)
        if hit is None:
            self.calls += 1
            hit = solve_pre(self.cs, target_f, self.node_budget)
            self._cache[key] = hit
        return hit


@dataclass(slots=True)
class PreCheck:
    ok: bool
    assignment: np.ndarray | None = None
    violated: tuple[str, ...] = ()
    unknown: bool = False


def check_pre(action: int, state_index: int, current_f: float,
              cs: ConstraintSet, solver: PreSolver) -> PreCheck:
    """Gate one recommended action before anything touches the environment.

    Do-nothing passes unconditionally so the agent always has a legal move.
    Otherwise a matching exclusion rule blocks without consulting the solver;
    detector-ratio moves must then prove a satisfying assignment for their
    target, and actions that leave the assignment alone pass as-is.
    """
    if action == actions.DO_NOTHING:
        return PreCheck(True)
    rule = cs.excluded(state_index, action)
    if rule is not None:
        return PreCheck(False, violated=(rule.cid,))
    if not actions.is_ratio_action(action):
        return PreCheck(True)
    if solver.cs is not cs:
        if solver.signature != cs.linear_signature():
            solver = PreSolver(cs, solver.node_budget)
        else:
            solver.cs = cs
    result = solver.solve(actions.ratio_target(action, current_f))
    if result.sat:
        return PreCheck(True, assignment=result.assignment)
    return PreCheck(False, violated=result.violated,
                    unknown=result.status == "unknown")


@dataclass(slots=True)
class PostCheck:
    ok: bool
    violated: tuple[str, ...] = ()
    severity: float = 0.0


def check_post(obs: Observation, cs: ConstraintSet, params) -> PostCheck:
    """Compare the step's measured effects against the post bounds.

    Severity is the worst relative overshoot among the violated bounds,
    feeding the graduated post-execution penalty.  Bounds are inclusive.
    """
    violated = []
    severity = 0.0

    def note(cid: str, observed: float, bound: float):
        nonlocal severity
        violated.append(cid)
        over = (observed - bound) / bound if bound > 0 else float(observed - bound)
        severity = max(severity, over)

    e_max = cs.post_bound("post_energy")
    if obs.energy_actual > e_max + _EPS:
        note("post_energy", obs.energy_actual, e_max)
    loss_max = cs.post_bound("post_reimage_loss")
    loss = obs.benign_reimaged * params.benign_reimage_cost
    if loss > loss_max + _EPS:
        note("post_reimage_loss", loss, loss_max)
    return PostCheck(not violated, tuple(violated), severity)
