"""Adaptive selection of sparsity level and dictionary size.

Each iteration of the adaptive learner runs the engine (adaptive counters),
then prunes coherent atom pairs by merging, prunes atoms that have not been
reliably observed over the score memory, appends promising candidates, and
moves the working sparsity level one step towards the batch estimate.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace as dc_replace
from typing import List, Optional

import numpy as np

from .candidates import CandidateSet, draw_candidates
from .engine import (EngineConfig, IterationRecord, Trajectory,
                     default_candidate_count, metrics_against, round_half_up,
                     run_iteration)
from .linalg import Dictionary, sign_pm
from .signals import rng_from_seed


@dataclass
class ScoreHistory:
    """Rolling window of the last m per-atom scores plus atom birthdays.

    Column 0 holds the most recent iteration's scores; rows track atoms and
    are kept aligned with the dictionary through merges, deletions and adds.
    """

    scores: np.ndarray          # (K, m) int64
    birth: np.ndarray           # (K,) iteration at which the atom appeared
    filled: int = 0             # iterations pushed so far, capped at m

    @classmethod
    def empty(cls, n_atoms: int, memory: int) -> "ScoreHistory":
        return cls(scores=np.zeros((n_atoms, memory), dtype=np.int64),
                   birth=np.zeros(n_atoms, dtype=np.int64))

    @property
    def memory(self) -> int:
        return self.scores.shape[1]

    def push(self, new_scores: np.ndarray) -> None:
        new_scores = np.asarray(new_scores, dtype=np.int64)
        if new_scores.shape != (self.scores.shape[0],):
            raise ValueError("need one score per atom")
        self.scores[:, 1:] = self.scores[:, :-1]
        self.scores[:, 0] = new_scores
        self.filled = min(self.filled + 1, self.memory)

    def max_scores(self) -> np.ndarray:
        return self.scores.max(axis=1)

    def most_recent(self) -> np.ndarray:
        return self.scores[:, 0]

    def delete(self, indices) -> None:
        keep = np.ones(self.scores.shape[0], dtype=bool)
        keep[np.asarray(indices, dtype=np.int64)] = False
        self.scores = self.scores[keep]
        self.birth = self.birth[keep]

    def append(self, count: int, initial_score: int, iteration: int) -> None:
        block = np.full((count, self.memory), initial_score, dtype=np.int64)
        self.scores = np.vstack([self.scores, block])
        self.birth = np.concatenate(
            [self.birth, np.full(count, iteration, dtype=np.int64)])


@dataclass(frozen=True)
class AdaptiveConfig:
    """Thresholds and schedule for adaptive runs; None fields get their
    dimension-dependent defaults from :meth:`resolve`."""

    mu_max: float = 0.7
    min_observations: Optional[int] = None      # M; default round(d log d)
    candidate_add_threshold: Optional[int] = None  # M_Gamma; default d
    memory: Optional[int] = None                # m; default round(log d)
    max_pruned: Optional[int] = None            # delta; default round(d/5)
    start_adapt: Optional[int] = None           # default m
    start_prune: Optional[int] = None           # default 2m
    freeze_add_tail: Optional[int] = None       # default 3m
    candidate_count: Optional[int] = None       # L; default round(log d)
    deterministic_reduction: bool = True

    def __post_init__(self):
        if not (0.0 < self.mu_max < 1.0):
            raise ValueError("mu_max must lie in (0, 1)")
        for name in ("min_observations", "candidate_add_threshold", "memory",
                     "max_pruned", "start_adapt", "start_prune",
                     "freeze_add_tail", "candidate_count"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be positive")

    def resolve(self, d: int) -> "AdaptiveConfig":
        m = self.memory if self.memory is not None else default_candidate_count(d)
        resolved = dc_replace(
            self,
            min_observations=self.min_observations
            if self.min_observations is not None else round_half_up(d * math.log(d)),
            candidate_add_threshold=self.candidate_add_threshold
            if self.candidate_add_threshold is not None else d,
            memory=m,
            max_pruned=self.max_pruned
            if self.max_pruned is not None else max(1, round_half_up(d / 5)),
            start_adapt=self.start_adapt if self.start_adapt is not None else m,
            start_prune=self.start_prune if self.start_prune is not None else 2 * m,
            freeze_add_tail=self.freeze_add_tail
            if self.freeze_add_tail is not None else 3 * m,
            candidate_count=self.candidate_count
            if self.candidate_count is not None else default_candidate_count(d),
        )
        if resolved.start_prune < resolved.start_adapt:
            raise ValueError("start_prune must be >= start_adapt")
        return resolved


@dataclass
class SparsityState:
    """Current working sparsity level plus its estimate history."""

    level: int = 1
    s_bar_history: List[float] = field(default_factory=list)
    s_t: float = 0.0

    def __post_init__(self):
        if self.level < 1:
            raise ValueError("sparsity level must be >= 1")


def update_sparsity(state: SparsityState, s_bar: float, *,
                    max_level: int) -> SparsityState:
    """Move the level one step towards the batch estimate, clamped to
    [1, max_level]."""
    step = int(sign_pm(s_bar - state.level)) if s_bar != state.level else 0
    new_level = min(max(state.level + step, 1), max(1, max_level))
    return SparsityState(level=new_level,
                         s_bar_history=state.s_bar_history + [float(s_bar)],
                         s_t=state.s_t)


def prune_coherent(dico: Dictionary, history: ScoreHistory, mu_max: float):
    """Merge atom pairs above mu_max, weighting by the most recent scores.

    Works on a hollowed absolute Gram matrix; after a merge both rows and
    columns are zeroed so every atom participates in at most one merge per
    call.  The keeper (lower index) inherits the summed most-recent score;
    the other atom and its history row are deleted.

    Returns (dictionary, history, merge_count).
    """
    atoms = dico.atoms.copy()
    hist = ScoreHistory(scores=history.scores.copy(), birth=history.birth.copy(),
                        filled=history.filled)
    k = atoms.shape[1]
    if k < 2:
        return dico, hist, 0
    hollow = np.abs(atoms.T @ atoms)
    np.fill_diagonal(hollow, 0.0)
    gram = atoms.T @ atoms
    to_delete = []
    while True:
        flat = int(np.argmax(hollow))
        i, j = divmod(flat, k)
        if hollow[i, j] <= mu_max:
            break
        a, b = (i, j) if i < j else (j, i)
        h = float(sign_pm(gram[a, b]))
        v_a = float(hist.scores[a, 0])
        v_b = float(hist.scores[b, 0])
        if v_a + v_b <= 0:
            vec = atoms[:, b] + h * atoms[:, a]
        else:
            vec = v_b * atoms[:, b] + h * v_a * atoms[:, a]
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            vec = atoms[:, a]
            norm = 1.0
        atoms[:, a] = vec / norm
        hist.scores[a, 0] += hist.scores[b, 0]
        to_delete.append(b)
        hollow[[a, b], :] = 0.0
        hollow[:, [a, b]] = 0.0
    if not to_delete:
        return dico, hist, 0
    keep = np.ones(k, dtype=bool)
    keep[to_delete] = False
    hist.delete(to_delete)
    return Dictionary(atoms[:, keep]), hist, len(to_delete)


def prune_unused(dico: Dictionary, history: ScoreHistory, min_observations: int,
                 max_pruned: int, *, iteration: int, ambient_dim: int):
    """Delete atoms whose last-m max score stayed below the threshold.

    Freshly added atoms are embargoed for ``memory`` iterations; at most
    ``max_pruned`` atoms go per call (the ones with the smallest max
    scores), at most half the dictionary when it is very undercomplete
    (K < d/10), and never the whole dictionary.  Inert until the score
    window is full.

    Returns (dictionary, history, pruned_count).
    """
    k = dico.K
    if history.filled < history.memory:
        return dico, history, 0
    v_hat = history.max_scores()
    age = iteration - history.birth
    eligible = np.nonzero((v_hat < min_observations) & (age >= history.memory))[0]
    if eligible.size == 0:
        return dico, history, 0
    cap = max_pruned
    if k < ambient_dim / 10:
        cap = min(cap, k // 2)
    cap = min(cap, k - 1)
    if eligible.size > cap:
        order = np.argsort(v_hat[eligible], kind="stable")
        eligible = eligible[order[:cap]]
    if eligible.size == 0:
        return dico, history, 0
    keep = np.ones(k, dtype=bool)
    keep[eligible] = False
    hist = ScoreHistory(scores=history.scores.copy(), birth=history.birth.copy(),
                        filled=history.filled)
    hist.delete(eligible)
    return Dictionary(dico.atoms[:, keep]), hist, int(eligible.size)


def add_atoms(dico: Dictionary, history: ScoreHistory, cands: CandidateSet,
              mu_max: float, add_threshold: int, initial_score: int, *,
              iteration: int):
    """Append candidates scoring at least the threshold, best first, when
    they stay incoherent (<= mu_max) to the growing dictionary.

    Added atoms get a full history window of ``initial_score`` and the
    current iteration as birthday.

    Returns (dictionary, history, added_count).
    """
    if cands.L == 0:
        return dico, history, 0
    order = np.argsort(-cands.scores, kind="stable")
    order = order[cands.scores[order] >= add_threshold]
    if order.size == 0:
        return dico, history, 0
    atoms = dico.atoms
    added = 0
    hist = ScoreHistory(scores=history.scores.copy(), birth=history.birth.copy(),
                        filled=history.filled)
    for idx in order:
        gamma = cands.atoms[:, idx]
        if float(np.abs(gamma @ atoms).max()) <= mu_max:
            atoms = np.column_stack([atoms, gamma])
            added += 1
    if added == 0:
        return dico, history, 0
    hist.append(added, initial_score, iteration)
    return Dictionary(atoms), hist, added


def run_adaptive(dico0: Dictionary, signal_source, cfg: AdaptiveConfig,
                 iterations: int, *, reference: Optional[Dictionary] = None,
                 recovery_threshold: float = 0.99, seed: int = 0) -> Trajectory:
    """Full adaptive learning loop.

    Per iteration: engine pass with adaptive counters and fresh candidates,
    coherent-pair pruning (every iteration), unused-atom pruning (from
    iteration 2m), candidate adding (from iteration m, frozen during the
    last 3m iterations), then the one-step sparsity update (from iteration
    m).  The sparsity level starts at 1.
    """
    d = dico0.d
    cfg = cfg.resolve(d)
    rng = rng_from_seed(seed, 0xADA)
    m = cfg.memory
    dico = dico0
    history = ScoreHistory.empty(dico.K, m)
    sparsity = SparsityState(level=1)
    traj = Trajectory()
    for t in range(1, iterations + 1):
        t0 = time.perf_counter()
        batch = signal_source.batch(t)
        engine_cfg = EngineConfig(
            sparsity=min(sparsity.level, d, dico.K),
            variant="adaptive",
            candidate_count=cfg.candidate_count,
            candidate_subbatches=m,
            min_observations=cfg.min_observations,
            deterministic_reduction=cfg.deterministic_reduction,
        )
        cands = draw_candidates(d, cfg.candidate_count, rng)
        out = run_iteration(dico, batch, engine_cfg, candidates=cands, rng=rng)
        dico = out.new_dictionary
        history.push(out.atom_scores)
        dico, history, merges = prune_coherent(dico, history, cfg.mu_max)
        pruned = 0
        if t >= cfg.start_prune:
            dico, history, pruned = prune_unused(
                dico, history, cfg.min_observations, cfg.max_pruned,
                iteration=t, ambient_dim=d)
        added = 0
        if cfg.start_adapt <= t <= iterations - cfg.freeze_add_tail:
            dico, history, added = add_atoms(
                dico, history, out.candidate_state, cfg.mu_max,
                cfg.candidate_add_threshold, cfg.min_observations, iteration=t)
        s_bar_raw = out.sparsity_accumulator / out.signals_used
        if t >= cfg.start_adapt:
            sparsity = update_sparsity(sparsity, out.s_bar,
                                       max_level=min(d, dico.K))
        else:
            sparsity = SparsityState(
                level=min(sparsity.level, max(1, min(d, dico.K))),
                s_bar_history=sparsity.s_bar_history + [float(out.s_bar)],
                s_t=sparsity.s_t)
        sparsity.s_t = out.s_t
        dist, mean_dist, rate = metrics_against(reference, dico, recovery_threshold)
        traj.records.append(IterationRecord(
            iteration=t, distance=dist, mean_atom_distance=mean_dist,
            recovery_rate=rate, n_atoms=dico.K, sparsity=sparsity.level,
            s_bar=out.s_bar, replaced=0, pruned=merges + pruned, added=added,
            wallclock_ms=(time.perf_counter() - t0) * 1e3,
            s_bar_raw=s_bar_raw, s_t=out.s_t, merges=merges,
            pruned_unused=pruned))
    traj.dictionary = dico
    return traj
