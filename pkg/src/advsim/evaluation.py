"""Attack samples, function-search ranking, metrics, transferability.

A sample is one experiment: a pool built from whole variant groups, a
variant set V inside it, and a query to modify. Success at level i means
i variants entered the top-K (targeted) or left it (untargeted); wASR
weights each sample by the fraction of variants meeting the condition.
"""

from __future__ import annotations

import random
import statistics
import time
from collections import defaultdict
from dataclasses import dataclass, field, replace

from .cfg import FunctionCfg
from .errors import CorpusTooSmall, NotApplicable
from .optimizer import TARGETED, UNTARGETED, AttackConfig, AttackResult, run_attack
from .oracles import SimilarityOracle
from .strands import StrandDb
from .transforms import (Position, TransformAction, TransformKind,
                         apply_action, APPLICABILITY, KIND_ORDER)

GROUP_SIZE = 4  # variants per source function


@dataclass
class AttackSample:
    pool: list[FunctionCfg]
    variants: list[FunctionCfg]
    query: FunctionCfg
    mode: str

    def __post_init__(self):
        pool_ids = {f.id for f in self.pool}
        variant_ids = {f.id for f in self.variants}
        if not variant_ids <= pool_ids:
            raise ValueError("variants must live in the pool")
        if self.mode == TARGETED:
            if self.query.id in variant_ids or self.query.id in pool_ids:
                raise ValueError("targeted query must be outside pool and V")
        elif self.mode == UNTARGETED:
            if self.query.id not in variant_ids:
                raise ValueError("untargeted query must be one of its variants")
        else:
            raise ValueError(f"unknown mode '{self.mode}'")


@dataclass(frozen=True)
class EvalConfig:
    k: int = 10
    levels: tuple[int, ...] = (1, 2, 3, 4)
    pool_sizes: tuple[int, ...] = (32, 128, 512, 1000)


def group_corpus(corpus: list[FunctionCfg]) -> dict[str, list[FunctionCfg]]:
    """Group by source identity (function name); only groups with exactly
    four variants are admitted."""
    groups: dict[str, list[FunctionCfg]] = defaultdict(list)
    for f in corpus:
        groups[f.name].append(f)
    return {name: sorted(fs, key=lambda f: f.id)
            for name, fs in sorted(groups.items())
            if len(fs) == GROUP_SIZE}


def build_samples(corpus: list[FunctionCfg], pool_size: int, n_samples: int,
                  mode: str, seed: int) -> list[AttackSample]:
    """n_samples experiments with |P| = pool_size: the pool is pool_size/4
    uniformly drawn groups; V is one pool group. Untargeted queries are a
    member of V; targeted queries come from outside the pool entirely."""
    if pool_size % GROUP_SIZE:
        raise ValueError("pool size must be a multiple of 4")
    groups = group_corpus(corpus)
    names = list(groups)
    need = pool_size // GROUP_SIZE + (1 if mode == TARGETED else 0)
    if len(names) < need:
        raise CorpusTooSmall(f"{len(names)} groups, need {need}")
    rng = random.Random(seed)
    samples = []
    for _ in range(n_samples):
        picked = rng.sample(names, pool_size // GROUP_SIZE)
        pool = [f for name in picked for f in groups[name]]
        v_name = rng.choice(picked)
        variants = groups[v_name]
        if mode == UNTARGETED:
            query = variants[rng.randrange(len(variants))]
        else:
            outside = rng.choice([n for n in names if n not in picked])
            group = groups[outside]
            query = group[rng.randrange(len(group))]
        samples.append(AttackSample(pool=pool, variants=list(variants),
                                    query=query, mode=mode))
    return samples


def rank_pool(oracle: SimilarityOracle, query: FunctionCfg,
              pool: list[FunctionCfg]) -> list[tuple[str, float]]:
    """Descending similarity; equal scores order by ascending function id
    so rankings are unique and reruns stable."""
    scored = [(f.id, oracle.sim(query, f)) for f in pool]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def success_count(ranking: list[tuple[str, float]], variants, k: int,
                  mode: str) -> int:
    """Variants inside the top-k (targeted) or pushed out of it
    (untargeted); variants may be functions or bare ids."""
    variant_ids = {f if isinstance(f, str) else f.id for f in variants}
    top = {fid for fid, _ in ranking[:k]}
    inside = len(variant_ids & top)
    if mode == TARGETED:
        return inside
    return len(variant_ids) - inside


# ---------------------------------------------------------------------------
# per-sample outcome record (everything the metrics need, nothing else)
# ---------------------------------------------------------------------------

@dataclass
class EvaluatedSample:
    index: int
    mode: str
    k: int
    query_id: str
    variant_ids: tuple[str, ...]
    success_pre: int
    success_post: int
    recall_pre: float
    recall_post: float
    pre_top: tuple[str, ...]
    post_top: tuple[str, ...]
    m_instrs: int
    m_nodes: int
    trace_kinds: tuple[str, ...]
    oracle_queries: int
    iterations: int
    objectives: tuple[float, ...]
    wall_time: float = field(default=0.0)

    def body_dict(self) -> dict:
        """Report form, timing excluded."""
        return {
            "index": self.index,
            "mode": self.mode,
            "k": self.k,
            "query": self.query_id,
            "variants": list(self.variant_ids),
            "success_pre": self.success_pre,
            "success_post": self.success_post,
            "recall_pre": self.recall_pre,
            "recall_post": self.recall_post,
            "pre_top": list(self.pre_top),
            "post_top": list(self.post_top),
            "m_instrs": self.m_instrs,
            "m_nodes": self.m_nodes,
            "trace": list(self.trace_kinds),
            "oracle_queries": self.oracle_queries,
            "iterations": self.iterations,
            "objectives": list(self.objectives),
        }


def evaluate_sample(index: int, sample: AttackSample, result: AttackResult,
                    oracle: SimilarityOracle, k: int) -> EvaluatedSample:
    """Rank the pool before (with the clean query) and after (with the
    adversarial function) and derive the success/recall numbers."""
    pre = rank_pool(oracle, sample.query, sample.pool)
    post = rank_pool(oracle, result.f_adv, sample.pool)
    variant_ids = tuple(f.id for f in sample.variants)
    n_v = len(variant_ids)
    in_top_pre = len(set(variant_ids) & {fid for fid, _ in pre[:k]})
    in_top_post = len(set(variant_ids) & {fid for fid, _ in post[:k]})
    return EvaluatedSample(
        index=index,
        mode=sample.mode,
        k=k,
        query_id=sample.query.id,
        variant_ids=variant_ids,
        success_pre=success_count(pre, sample.variants, k, sample.mode),
        success_post=success_count(post, sample.variants, k, sample.mode),
        recall_pre=in_top_pre / n_v,
        recall_post=in_top_post / n_v,
        pre_top=tuple(fid for fid, _ in pre[:k]),
        post_top=tuple(fid for fid, _ in post[:k]),
        m_instrs=result.modification.m_instrs,
        m_nodes=result.modification.m_nodes,
        trace_kinds=tuple(a.kind.value for a in result.trace),
        oracle_queries=result.oracle_queries,
        iterations=result.iterations_run,
        objectives=tuple(result.per_iteration_objective),
        wall_time=result.wall_time,
    )


# ---------------------------------------------------------------------------
# metrics aggregation
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    mode: str
    k: int
    n_samples: int
    asr_at: dict[int, float]
    init_at: dict[int, float]
    wasr: float
    recall_pre: float
    recall_post: float
    m_instrs_at: dict[int, float | None]
    m_nodes_at: dict[int, float | None]
    transform_distribution: dict[str, float]
    mean_iteration_time: float
    stdev_iteration_time: float

    def body_dict(self) -> dict:
        return {
            "mode": self.mode,
            "k": self.k,
            "n_samples": self.n_samples,
            "asr_at": {str(i): v for i, v in self.asr_at.items()},
            "init_at": {str(i): v for i, v in self.init_at.items()},
            "wasr": self.wasr,
            "recall_pre": self.recall_pre,
            "recall_post": self.recall_post,
            "m_instrs_at": {str(i): v for i, v in self.m_instrs_at.items()},
            "m_nodes_at": {str(i): v for i, v in self.m_nodes_at.items()},
            "transform_distribution": self.transform_distribution,
        }

    def timing_dict(self) -> dict:
        return {
            "mean_iteration_time": self.mean_iteration_time,
            "stdev_iteration_time": self.stdev_iteration_time,
        }


def compute_metrics(records: list[EvaluatedSample],
                    cfg: EvalConfig) -> MetricsReport:
    if not records:
        raise ValueError("no records to aggregate")
    n = len(records)
    n_v = len(records[0].variant_ids)
    levels = tuple(i for i in cfg.levels if i <= n_v)

    asr_at = {i: 100.0 * sum(1 for r in records if r.success_post >= i) / n
              for i in levels}
    init_at = {i: 100.0 * sum(1 for r in records if r.success_pre >= i) / n
               for i in levels}
    wasr = 100.0 * sum(r.success_post / n_v for r in records) / n

    def mean_mod(level: int, attr: str) -> float | None:
        hits = [getattr(r, attr) for r in records if r.success_post >= level]
        return sum(hits) / len(hits) if hits else None

    m_instrs_at = {i: mean_mod(i, "m_instrs") for i in levels}
    m_nodes_at = {i: mean_mod(i, "m_nodes") for i in levels}

    # distribution over the traces of fully successful samples only
    top = max(levels) if levels else n_v
    kinds = [k.value for k in TransformKind]
    counts = {k: 0 for k in kinds}
    for r in records:
        if r.success_post >= top:
            for k in r.trace_kinds:
                counts[k] += 1
    total = sum(counts.values())
    distribution = {k: (100.0 * c / total if total else 0.0)
                    for k, c in counts.items()}

    iter_times = [r.wall_time / r.iterations for r in records if r.iterations]
    mean_it = statistics.mean(iter_times) if iter_times else 0.0
    stdev_it = statistics.stdev(iter_times) if len(iter_times) > 1 else 0.0

    return MetricsReport(
        mode=records[0].mode,
        k=records[0].k,
        n_samples=n,
        asr_at=asr_at,
        init_at=init_at,
        wasr=wasr,
        recall_pre=sum(r.recall_pre for r in records) / n,
        recall_post=sum(r.recall_post for r in records) / n,
        m_instrs_at=m_instrs_at,
        m_nodes_at=m_nodes_at,
        transform_distribution=distribution,
        mean_iteration_time=mean_it,
        stdev_iteration_time=stdev_it,
    )


# ---------------------------------------------------------------------------
# random-transformation baseline
# ---------------------------------------------------------------------------

def random_attack(sample: AttackSample, db: StrandDb, iterations: int,
                  seed: int,
                  enabled: frozenset[TransformKind] = frozenset(TransformKind),
                  ) -> FunctionCfg:
    """Oracle-free baseline: the same number of iterations, each applying
    one uniformly random applicable transformation."""
    rng = random.Random(seed)
    f = sample.query
    for _ in range(iterations):
        for _attempt in range(64):
            positions = [Position(bid, idx)
                         for bid, idx, _ in f.instructions()]
            pos = positions[rng.randrange(len(positions))]
            kind = sorted(enabled, key=KIND_ORDER.index)[
                rng.randrange(len(enabled))]
            if not APPLICABILITY[kind](f, pos):
                continue
            strand = None
            if kind in (TransformKind.DBA, TransformKind.SA):
                strand = db.strands[rng.randrange(len(db))]
            try:
                f = apply_action(f, TransformAction(kind, pos, strand))
                break
            except NotApplicable:
                continue
    return f


# ---------------------------------------------------------------------------
# transferability
# ---------------------------------------------------------------------------

@dataclass
class TransferReport:
    sources: tuple[str, ...]
    targets: tuple[str, ...]
    matrix: dict[str, dict[str, float]]          # source -> target -> wASR
    tsr: dict[str, float]                        # row means, diagonal out
    vr: dict[str, float]                         # column means, diagonal out
    random_baseline: dict[str, tuple[float, float]]  # target -> (mean, std)

    def body_dict(self) -> dict:
        return {
            "sources": list(self.sources),
            "targets": list(self.targets),
            "matrix": self.matrix,
            "tsr": self.tsr,
            "vr": self.vr,
            "random_baseline": {
                t: {"mean": m, "stdev": s}
                for t, (m, s) in self.random_baseline.items()
            },
        }


def transfer_rates(matrix: dict[str, dict[str, float]],
                   sources, targets) -> tuple[dict[str, float], dict[str, float]]:
    """Off-diagonal row means (how well a source's examples travel) and
    column means (how exposed a target is)."""
    tsr = {}
    for s in sources:
        row = [matrix[s][t] for t in targets if t != s and t in matrix[s]]
        tsr[s] = sum(row) / len(row) if row else 0.0
    vr = {}
    for t in targets:
        col = [matrix[s][t] for s in sources if s != t and t in matrix[s]]
        vr[t] = sum(col) / len(col) if col else 0.0
    return tsr, vr


def pool_wasr(queries: list[FunctionCfg], samples: list[AttackSample],
              oracle: SimilarityOracle, k: int) -> float:
    """wASR of pre-built adversarial queries against one oracle."""
    total = 0.0
    for q, sample in zip(queries, samples):
        ranking = rank_pool(oracle, q, sample.pool)
        total += success_count(ranking, sample.variants, k, sample.mode) \
            / len(sample.variants)
    return 100.0 * total / len(samples)


def transfer_matrix(samples: list[AttackSample], sources: list[str],
                    targets: list[str], db: StrandDb, attack_cfg: AttackConfig,
                    eval_cfg: EvalConfig, make_oracle_fn,
                    baseline_seeds: tuple[int, ...] = (0, 1, 2),
                    ) -> TransferReport:
    """Craft adversarial examples once per source oracle, then rate every
    other oracle with them; the random baseline applies the same number of
    uniformly random transformations, repeated over three seeds."""
    matrix: dict[str, dict[str, float]] = {}
    for src in sources:
        oracle = make_oracle_fn(src)
        advs = []
        for i, sample in enumerate(samples):
            cfg = replace(attack_cfg, seed=attack_cfg.seed + i)
            advs.append(run_attack(sample, oracle, db, cfg).f_adv)
        matrix[src] = {}
        for tgt in targets:
            if tgt == src:
                continue
            matrix[src][tgt] = pool_wasr(advs, samples,
                                         make_oracle_fn(tgt), eval_cfg.k)
    tsr, vr = transfer_rates(matrix, sources, targets)

    baseline = {}
    for tgt in targets:
        oracle = make_oracle_fn(tgt)
        rates = []
        for seed in baseline_seeds:
            advs = [random_attack(s, db, attack_cfg.max_iterations,
                                  seed=seed * 100_003 + i)
                    for i, s in enumerate(samples)]
            rates.append(pool_wasr(advs, samples, oracle, eval_cfg.k))
        mean = statistics.mean(rates)
        std = statistics.stdev(rates) if len(rates) > 1 else 0.0
        baseline[tgt] = (mean, std)

    return TransferReport(sources=tuple(sources), targets=tuple(targets),
                          matrix=matrix, tsr=tsr, vr=vr,
                          random_baseline=baseline)


# ---------------------------------------------------------------------------
# one-sample driver shared by the CLI and tests
# ---------------------------------------------------------------------------

def run_one(index: int, sample: AttackSample, oracle: SimilarityOracle,
            db: StrandDb, attack_cfg: AttackConfig, k: int) -> EvaluatedSample:
    cfg = replace(attack_cfg, seed=attack_cfg.seed + index)
    start = time.perf_counter()
    result = run_attack(sample, oracle, db, cfg)
    record = evaluate_sample(index, sample, result, oracle, k)
    record.wall_time = time.perf_counter() - start
    return record
