"""Forward-chaining inference and the three reasoning services.

The engine applies range-restricted, monotone rules (same pattern/filter
forms as queries — no negation, no value invention) to a least fixpoint,
semi-naively: after the first full round, each rule only joins against the
facts that appeared in the previous round.

On top of it sit three data-driven-free reasoners — activity, location and
physio status.  Each one summarizes a user's recent observations into a
scratch graph (window aggregates such as max motion or mean heart rate),
runs its bundled rule program over that graph, and publishes the derived
facts into its output graph, replacing the user's previous facts.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import vocab
from .errors import (
    AmbiguousActivity,
    AmbiguousDerivation,
    AmbiguousStatus,
    RuleError,
    UnknownConcept,
)
from .interop import OntologyContext
from .objects import Observation, ObjectRegistry
from .semantic import (
    Filter,
    GraphStore,
    Iri,
    Literal,
    Query,
    Term,
    Triple,
    TriplePattern,
    TripleIndex,
    Variable,
    integer,
    serialize_term,
    solve,
    term_from_json,
)

DATA_DIR = Path(__file__).resolve().parent / "data"

HeadTemplate = tuple[object, object, object]


@dataclass(frozen=True)
class InferenceRule:
    id: str
    body: tuple[TriplePattern, ...]
    filters: tuple[Filter, ...]
    head: tuple[HeadTemplate, ...]

    def __post_init__(self):
        bound: set[Variable] = set()
        for p in self.body:
            bound.update(p.variables())
        for f in self.filters:
            if f.var not in bound:
                raise RuleError(f"rule {self.id}: filter variable {f.var} unbound")
        for s, p, o in self.head:
            for term in (s, p, o):
                if isinstance(term, Variable) and term not in bound:
                    raise RuleError(
                        f"rule {self.id}: head variable {term} not in body"
                    )

    def body_variables(self) -> tuple[Variable, ...]:
        seen: dict[Variable, None] = {}
        for p in self.body:
            for v in p.variables():
                seen.setdefault(v)
        return tuple(seen)


@dataclass(frozen=True)
class RuleProgram:
    name: str
    rules: tuple[InferenceRule, ...]
    input_graphs: frozenset[Iri]
    output_graph: Iri

    def __post_init__(self):
        if self.output_graph in self.input_graphs:
            raise RuleError(
                f"program {self.name}: output graph appears in input graphs"
            )


@dataclass
class InferenceResult:
    derived: list[Triple]
    iterations: int
    fired_per_rule: dict[str, int]


def _instantiate_head(
    rule: InferenceRule, template: HeadTemplate, binding: Mapping[Variable, Term]
) -> Triple:
    s, p, o = (
        binding[t] if isinstance(t, Variable) else t for t in template
    )
    try:
        return Triple(s, p, o)
    except Exception as exc:
        raise RuleError(
            f"rule {rule.id}: head instantiated to an invalid triple ({exc})"
        ) from exc


def _distinct_bindings(
    rule: InferenceRule, raw: Iterable[Mapping[Variable, Term]]
) -> list[Mapping[Variable, Term]]:
    variables = rule.body_variables()
    seen: dict[tuple[Term, ...], Mapping[Variable, Term]] = {}
    for b in raw:
        seen.setdefault(tuple(b[v] for v in variables), b)
    return list(seen.values())


def infer_fixpoint(store: GraphStore, prog: RuleProgram) -> InferenceResult:
    """Least fixpoint of prog's rules over its input graphs.

    Derived triples (only those absent from the input) are written to the
    output graph.  `iterations` counts evaluation rounds including the final
    round that found nothing new.
    """
    base = store.snapshot(sorted(prog.input_graphs))
    input_facts = set(base.triples)

    term_count = len(base.terms())
    for rule in prog.rules:
        for template in rule.head:
            term_count += sum(1 for t in template if not isinstance(t, Variable))
    max_rounds = max(term_count * term_count, 4)

    all_facts: dict[Triple, None] = dict.fromkeys(base.triples)
    fired = {rule.id: 0 for rule in prog.rules}
    iterations = 0
    delta: list[Triple] = []

    while True:
        iterations += 1
        if iterations > max_rounds:
            raise RuleError(
                f"program {prog.name}: no fixpoint after {max_rounds} rounds"
            )
        full_index = TripleIndex(all_facts)
        new_this_round: dict[Triple, None] = {}
        for rule in prog.rules:
            n = len(rule.body)
            if iterations == 1:
                raw = solve(rule.body, [full_index] * n, rule.filters)
            else:
                delta_index = TripleIndex(delta)
                raw = []
                for i in range(n):
                    indexes = [full_index] * n
                    indexes[i] = delta_index
                    raw.extend(solve(rule.body, indexes, rule.filters))
            for binding in _distinct_bindings(rule, raw):
                for template in rule.head:
                    fact = _instantiate_head(rule, template, binding)
                    if fact in all_facts or fact in new_this_round:
                        continue
                    new_this_round[fact] = None
                    fired[rule.id] += 1
        if not new_this_round:
            break
        delta = list(new_this_round)
        all_facts.update(new_this_round)

    derived = [t for t in all_facts if t not in input_facts]
    store.insert_all(prog.output_graph, derived)
    return InferenceResult(derived, iterations, fired)


# --- rule file loading ------------------------------------------------------

def rules_from_json(doc: Mapping) -> list[InferenceRule]:
    rules = []
    for r in doc["rules"]:
        body = tuple(
            TriplePattern(term_from_json(s), term_from_json(p), term_from_json(o))
            for s, p, o in r["body"].get("where", [])
        )
        filters = tuple(
            Filter(term_from_json(f["var"]), f["op"], term_from_json(f["value"]))
            for f in r["body"].get("filters", [])
        )
        head = tuple(
            (term_from_json(s), term_from_json(p), term_from_json(o))
            for s, p, o in r["head"]
        )
        rules.append(InferenceRule(r["id"], body, filters, head))
    return rules


def load_rule_file(path: str | Path) -> list[InferenceRule]:
    return rules_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# --- window aggregation -----------------------------------------------------

MINUTE_MS = 60_000


def _mean_literal(values: Sequence[Literal]) -> Literal:
    total = sum(Decimal(v.lexical) for v in values)
    mean = (total / Decimal(len(values))).quantize(Decimal("0.0001"))
    return Literal(str(mean), "decimal")


def _in_window(obs: Observation, start: int, end: int) -> bool:
    return start <= obs.timestamp <= end


class ReasoningService:
    """Activity, location and physio-status reasoning over live observations."""

    FACT_PREDICATE = {
        "activity": vocab.CURRENT_ACTIVITY,
        "location": vocab.IN_ZONE,
        "physio-status": vocab.PHYSIO_STATUS,
    }

    def __init__(
        self,
        registry: ObjectRegistry,
        programs: Mapping[str, Sequence[InferenceRule]],
        validate: bool = True,
    ):
        self.registry = registry
        self.store = registry.store
        self.programs = {name: tuple(rules) for name, rules in programs.items()}
        self._lock = threading.Lock()
        self.counters: dict[str, int] = {name: 0 for name in self.programs}
        if validate:
            if "activity" in self.programs:
                _validate_exclusive_activity(self.programs["activity"])
            if "physio-status" in self.programs:
                _validate_exclusive_physio(self.programs["physio-status"])

    # --- plumbing -------------------------------------------------------

    def _user_vos(self, user: Iri):
        vos = []
        for vo in self.registry.vos():
            desc = self.store.snapshot([vo.description_graph])
            if Triple(vo.id, vocab.MONITORS, user) in desc:
                vos.append(vo)
        return vos

    def _observations(self, user: Iri, prop: Iri, start: int, end: int):
        out: list[Observation] = []
        for vo in self._user_vos(user):
            if vo.observed_property != prop:
                continue
            out.extend(
                o for o in self.registry.buffered(vo.id) if _in_window(o, start, end)
            )
        out.sort(key=lambda o: (o.timestamp, o.source.value, o.sequence))
        return out

    def _scratch_graph(self, name: str, user: Iri) -> Iri:
        return vocab.graph_iri(f"scratch:{name}:{user.value}")

    def output_graph(self, name: str) -> Iri:
        return vocab.graph_iri(f"derived:{name}")

    def _run(self, name: str, user: Iri, facts: list[Triple]) -> list[Triple]:
        scratch = self._scratch_graph(name, user)
        out = self.output_graph(name)
        fact_predicate = self.FACT_PREDICATE[name]
        with self._lock:
            self.counters[name] += 1
            self.store.clear_graph(scratch)
            if not facts:
                self._clear_user_facts(out, user, fact_predicate)
                return []
            self.store.insert_all(scratch, facts)
            prog = RuleProgram(name, self.programs[name], frozenset([scratch]), out)
            self._clear_user_facts(out, user, fact_predicate)
            result = infer_fixpoint(self.store, prog)
            statuses = {
                t.object
                for t in result.derived
                if t.subject == user and t.predicate == fact_predicate
            }
            if len(statuses) > 1:
                for t in result.derived:
                    self.store.remove(out, t)
                names = ", ".join(sorted(serialize_term(s) for s in statuses))
                if name == "activity":
                    raise AmbiguousActivity(f"multiple activities derived: {names}")
                if name == "physio-status":
                    raise AmbiguousStatus(f"multiple statuses derived: {names}")
                raise AmbiguousDerivation(f"multiple {name} facts derived: {names}")
            self.store.clear_graph(scratch)
            return result.derived

    def _clear_user_facts(self, graph: Iri, user: Iri, predicate: Iri) -> None:
        for t in self.store.triples(graph):
            if t.subject == user and t.predicate == predicate:
                self.store.remove(graph, t)

    # --- the three reasoners --------------------------------------------

    def run_activity(self, user: Iri, window: tuple[int, int]) -> list[Triple]:
        start, end = window
        motion = self._observations(user, vocab.MOTION_COUNT, max(start, end - 30 * MINUTE_MS), end)
        lux = self._observations(user, vocab.LUMINOSITY, max(start, end - 30 * MINUTE_MS), end)
        facts: list[Triple] = []
        if motion:
            hour = datetime.fromtimestamp(end / 1000, tz=timezone.utc).hour
            facts.append(Triple(user, vocab.HOUR_OF_DAY, integer(hour)))
            max_motion = max(int(o.value.lexical) for o in motion)
            facts.append(Triple(user, vocab.MAX_MOTION_30M, integer(max_motion)))
            if lux:
                facts.append(
                    Triple(user, vocab.MEAN_LUMINOSITY, _mean_literal([o.value for o in lux]))
                )
        return self._run("activity", user, facts)

    def run_location(self, user: Iri, window: tuple[int, int]) -> list[Triple]:
        start, end = window
        beacons = self._observations(user, vocab.ZONE_READING, start, end)
        facts: list[Triple] = []
        if beacons:
            latest_ts = max(o.timestamp for o in beacons)
            zones = sorted(
                o.value.lexical for o in beacons if o.timestamp == latest_ts
            )
            facts.append(
                Triple(user, vocab.LATEST_BEACON_ZONE, vocab.zone_iri(zones[0]))
            )
        return self._run("location", user, facts)

    def run_physio(self, user: Iri, window: tuple[int, int]) -> list[Triple]:
        start, end = window
        hr = self._observations(user, vocab.HEART_RATE, max(start, end - 15 * MINUTE_MS), end)
        sys = self._observations(user, vocab.SYSTOLIC, max(start, end - 60 * MINUTE_MS), end)
        facts: list[Triple] = []
        if hr:
            facts.append(
                Triple(user, vocab.MEAN_HEART_RATE_15M, _mean_literal([o.value for o in hr]))
            )
        if sys:
            facts.append(
                Triple(user, vocab.MEAN_SYSTOLIC_60M, _mean_literal([o.value for o in sys]))
            )
        return self._run("physio-status", user, facts)

    def run(self, name: str, user: Iri, window: tuple[int, int]) -> list[Triple]:
        if name == "activity":
            return self.run_activity(user, window)
        if name == "location":
            return self.run_location(user, window)
        if name == "physio-status":
            return self.run_physio(user, window)
        raise UnknownConcept(f"no reasoner named {name!r}")


# --- mutual-exclusion validation at load ------------------------------------

_CHECK_USER = Iri("urn:sem:user:__exclusion_check__")


def _derivable_facts(
    rules: Sequence[InferenceRule], facts: list[Triple], predicate: Iri
) -> set[Term]:
    store = GraphStore()
    scratch = Iri("urn:sem:graph:__check_in__")
    out = Iri("urn:sem:graph:__check_out__")
    store.insert_all(scratch, facts)
    prog = RuleProgram("check", tuple(rules), frozenset([scratch]), out)
    result = infer_fixpoint(store, prog)
    return {
        t.object
        for t in result.derived
        if t.subject == _CHECK_USER and t.predicate == predicate
    }


def _validate_exclusive_activity(rules: Sequence[InferenceRule]) -> None:
    """Reject activity programs that can derive two different activities for
    one user; probed over a grid straddling every rule boundary."""
    u = _CHECK_USER
    for hour in (0, 2, 5, 6, 10, 12, 21, 22, 23):
        for motion in (0, 1, 5, 19, 20, 45):
            for lux_present, lux in ((True, "0"), (True, "49.9"), (True, "50"),
                                     (True, "50.1"), (True, "90"), (False, "0")):
                facts = [
                    Triple(u, vocab.HOUR_OF_DAY, integer(hour)),
                    Triple(u, vocab.MAX_MOTION_30M, integer(motion)),
                ]
                if lux_present:
                    facts.append(
                        Triple(u, vocab.MEAN_LUMINOSITY, Literal(lux, "decimal"))
                    )
                derived = _derivable_facts(rules, facts, vocab.CURRENT_ACTIVITY)
                if len(derived) > 1:
                    names = ", ".join(sorted(serialize_term(d) for d in derived))
                    raise RuleError(
                        f"activity rules overlap at hour={hour} motion={motion} "
                        f"lux={lux if lux_present else 'absent'}: {names}"
                    )


def _validate_exclusive_physio(rules: Sequence[InferenceRule]) -> None:
    u = _CHECK_USER
    hr_points = ("30", "39.9", "40", "40.1", "49.9", "50", "72", "100", "100.1",
                 "115", "129.9", "130", "130.1", "150")
    sys_points = ("70", "79.9", "80", "80.1", "89.9", "90", "118", "130",
                  "130.1", "145", "159.9", "160", "160.1", "180")
    for hr in hr_points:
        for sys in sys_points:
            facts = [
                Triple(u, vocab.MEAN_HEART_RATE_15M, Literal(hr, "decimal")),
                Triple(u, vocab.MEAN_SYSTOLIC_60M, Literal(sys, "decimal")),
            ]
            derived = _derivable_facts(rules, facts, vocab.PHYSIO_STATUS)
            if len(derived) > 1:
                names = ", ".join(sorted(serialize_term(d) for d in derived))
                raise RuleError(
                    f"physio rules overlap at hr={hr} sys={sys}: {names}"
                )


def load_default_programs() -> dict[str, list[InferenceRule]]:
    rules_dir = DATA_DIR / "rules"
    return {
        "activity": load_rule_file(rules_dir / "activity.json"),
        "location": load_rule_file(rules_dir / "location.json"),
        "physio-status": load_rule_file(rules_dir / "physio.json"),
    }


# --- query generation -------------------------------------------------------

@dataclass(frozen=True)
class ServiceRequirement:
    subject_class: Iri
    properties: tuple[Iri, ...]
    constraints: tuple[tuple[Iri, str, Term], ...] = ()  # (property, op, value)


def generate_query(
    requirement: ServiceRequirement,
    ctx: OntologyContext,
    graph_scope: Iterable[Iri] = (),
) -> Query:
    """Build a query from a requirement: a type pattern for the subject class
    plus one pattern and one selected variable per requested property."""
    if requirement.subject_class not in ctx.classes:
        raise UnknownConcept(f"class {requirement.subject_class} not in ontology")
    subject = Variable("s")
    where = [TriplePattern(subject, vocab.TYPE, requirement.subject_class)]
    select = [subject]
    value_vars: dict[Iri, Variable] = {}
    for i, prop in enumerate(requirement.properties):
        if prop not in ctx.predicates:
            raise UnknownConcept(f"property {prop} not in ontology")
        v = Variable(f"v{i}")
        value_vars[prop] = v
        where.append(TriplePattern(subject, prop, v))
        select.append(v)
    filters = []
    for prop, op, value in requirement.constraints:
        if prop not in value_vars:
            raise UnknownConcept(f"constraint on unrequested property {prop}")
        filters.append(Filter(value_vars[prop], op, value))
    return Query(select, where, filters, graph_scope)
