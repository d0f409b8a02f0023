"""The ε-greedy black-box attack loop.

Each iteration: probe instruction importance by single-instruction
removal, keep the highest-scoring positions, enumerate every applicable
transformation there (insertions paired with the head of the strand
pool), score all candidates with the attack objective, pick ε-greedily,
then refresh the strand pool around the best insertion candidates. The
returned adversarial function is the iteration output that scored best
over the whole run.

Everything is deterministic under the config seed: tie-breaks are by
enumeration order, position order is (block id, index), and the ε and
pool-refresh draws come from one seeded generator.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field

from .cfg import FunctionCfg, ModificationSize, function_len, modification_size
from .errors import OracleError
from .oracles import CountingOracle, SimilarityOracle
from .strands import CandidatePool, StrandDb, init_pool, update_pool
from .transforms import (Position, TransformAction, TransformKind,
                         apply_action, enumerate_actions, remove_instruction)

ALL_KINDS = frozenset(TransformKind)

TARGETED = "targeted"
UNTARGETED = "untargeted"


@dataclass(frozen=True)
class AttackConfig:
    max_iterations: int = 30
    lam: float = 0.0              # length-penalty factor
    epsilon: float = 0.1
    n_positions: int = 50
    strands_tested: int = 20
    pool_capacity: int = 100
    random_fraction: float = 0.5
    enabled: frozenset[TransformKind] = ALL_KINDS
    seed: int = 0
    top_pool_actions: int = 5     # insertion candidates seeding the refresh

    def __post_init__(self):
        if self.n_positions < 1:
            raise ValueError("n_positions must be >= 1")
        if self.strands_tested > self.pool_capacity:
            raise ValueError("strands_tested cannot exceed pool_capacity")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.lam < 0.0:
            raise ValueError("lambda must be >= 0")


@dataclass
class AttackResult:
    f_adv: FunctionCfg
    trace: tuple[TransformAction, ...]
    per_iteration_objective: list[float]
    oracle_queries: int
    wall_time: float
    modification: ModificationSize
    iterations_run: int = field(default=0)


def objective(candidate: FunctionCfg, f_q: FunctionCfg,
              variants: list[FunctionCfg], oracle: SimilarityOracle,
              lam: float, mode: str) -> float:
    """Attacker score, higher always better: the targeted case maximizes
    the worst variant similarity, the untargeted case minimizes the best
    one (as its negation); both pay the relative length penalty."""
    sims = [oracle.sim(candidate, v) for v in variants]
    penalty = lam * abs(function_len(f_q) - function_len(candidate)) \
        / function_len(f_q)
    if mode == TARGETED:
        return min(sims) - penalty
    return -max(sims) - penalty


def reference_variant(f: FunctionCfg, variants: list[FunctionCfg],
                      oracle: SimilarityOracle, mode: str) -> FunctionCfg:
    """The variant the importance probe measures against: the least
    similar one when pulling variants closer (targeted), the most similar
    one (the one blocking success) when pushing them away."""
    sims = [oracle.sim(f, v) for v in variants]
    if mode == TARGETED:
        best = min(range(len(sims)), key=lambda i: (sims[i], i))
    else:
        best = max(range(len(sims)), key=lambda i: (-sims[i], i))
    return variants[best]


def importance_scores(f: FunctionCfg, variants: list[FunctionCfg],
                      oracle: SimilarityOracle, mode: str,
                      ) -> dict[Position, float]:
    """Absolute similarity variation against the reference variant when
    deleting each removable (non-control-flow) instruction."""
    ref = reference_variant(f, variants, oracle, mode)
    base = oracle.sim(f, ref)
    scores: dict[Position, float] = {}
    for bid, idx, ins in f.instructions():
        if ins.is_control_flow:
            continue
        pos = Position(bid, idx)
        probed = remove_instruction(f, pos)
        scores[pos] = abs(base - oracle.sim(probed, ref))
    return scores


def select_positions(scores: dict[Position, float], n: int) -> list[Position]:
    """Top-n by score; ties and shortfalls resolve by (block, index)."""
    ordered = sorted(scores.items(),
                     key=lambda kv: (-kv[1], kv[0].block, kv[0].index))
    return [pos for pos, _ in ordered[:n]]


def epsilon_select(scored: list[tuple[TransformAction, FunctionCfg, float]],
                   epsilon: float, rng: random.Random,
                   ) -> tuple[TransformAction, FunctionCfg, float]:
    """With probability 1-ε take the argmax (first on ties); otherwise a
    uniformly random suboptimal candidate (the argmax again if every
    candidate ties)."""
    if not scored:
        raise ValueError("no scored candidates")
    u = rng.random()
    best = max(range(len(scored)), key=lambda i: (scored[i][2], -i))
    if u >= epsilon:
        return scored[best]
    best_score = scored[best][2]
    suboptimal = [entry for entry in scored if entry[2] < best_score]
    if not suboptimal:
        return scored[0]
    return suboptimal[rng.randrange(len(suboptimal))]


def run_attack(sample, oracle: SimilarityOracle, db: StrandDb,
               cfg: AttackConfig) -> AttackResult:
    """Full greedy optimization for one attack sample (duck-typed: needs
    .query, .variants, .mode). On an oracle failure the partial result is
    attached to the raised error as exc.partial."""
    counting = CountingOracle(oracle)
    rng = random.Random(cfg.seed)
    f_q = sample.query
    variants = list(sample.variants)
    mode = sample.mode

    start = time.perf_counter()
    f_adv = f_q
    pool: CandidatePool | None = None
    if cfg.enabled & {TransformKind.DBA, TransformKind.SA}:
        pool = init_pool(db, cfg.pool_capacity, seed=rng.getrandbits(62),
                         random_fraction=cfg.random_fraction)

    applied: list[TransformAction] = []
    objectives: list[float] = []
    best_idx = -1
    best_obj = float("-inf")
    best_fn = f_q
    iterations = 0

    def finish() -> AttackResult:
        trace = tuple(applied[:best_idx + 1]) if best_idx >= 0 else ()
        return AttackResult(
            f_adv=best_fn,
            trace=trace,
            per_iteration_objective=objectives,
            oracle_queries=counting.queries,
            wall_time=time.perf_counter() - start,
            modification=modification_size(f_q, best_fn),
            iterations_run=iterations,
        )

    try:
        for _ in range(cfg.max_iterations):
            eps_u_seed = rng.getrandbits(62)
            pool_seed = rng.getrandbits(62)
            if not cfg.enabled:
                break
            scores = importance_scores(f_adv, variants, counting, mode)
            positions = select_positions(scores, cfg.n_positions)
            actions = enumerate_actions(
                f_adv, positions, cfg.enabled,
                pool if pool is not None
                else CandidatePool((), 0, cfg.random_fraction),
                cfg.strands_tested, db)
            if not actions:
                break  # nothing applicable anywhere: keep the best so far
            scored = []
            for action in actions:
                candidate = apply_action(f_adv, action)
                scored.append((action, candidate,
                               objective(candidate, f_q, variants, counting,
                                         cfg.lam, mode)))
            action, f_adv, obj = epsilon_select(
                scored, cfg.epsilon, random.Random(eps_u_seed))
            applied.append(action)
            objectives.append(obj)
            iterations += 1
            if obj > best_obj:
                best_obj, best_idx, best_fn = obj, iterations - 1, f_adv
            if pool is not None:
                insertions = sorted(
                    (entry for entry in scored
                     if entry[0].kind in (TransformKind.DBA, TransformKind.SA)),
                    key=lambda e: -e[2])[:cfg.top_pool_actions]
                pool = update_pool(pool, [e[0] for e in insertions], db,
                                   seed=pool_seed)
    except OracleError as exc:
        exc.partial = finish()
        raise
    return finish()
