"""Reproducible experiment driver: scenarios, manifests, CSV output.

Every experiment is described by a flat ExperimentSpec; running one writes a
JSON manifest (enough to re-run it), per-trial trajectory CSVs, an aggregate
CSV with mean/std across trials, and the final dictionaries in the binary
container format.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace as dc_replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import container
from .adaptive import AdaptiveConfig, run_adaptive
from .approx import approximation_power
from .candidates import ReplacementPolicy
from .engine import (EngineConfig, FixedCorpus, FreshBatches, IterationRecord,
                     Trajectory, round_half_up, run_iteration, run_learning)
from .images import PatchConfig, add_image_noise, extract_patches, load_image_gray
from .linalg import Dictionary, asym_distance, recovery_rate
from .signals import (CoefficientMixture, GeometricCoefficients, SignalModel,
                      generate_batch, make_dirac_hadamard, make_random_sphere,
                      make_spurious_estimate, noise_std_for_snr,
                      perturbed_dictionary, rng_from_seed)

SCENARIOS = ("plain_recovery", "replacement_compare", "adaptive_synthetic",
             "adaptive_image", "fixedpoint_probe", "contraction_sweep")

DICT_KINDS = ("random-sphere", "dirac-hadamard")

TRAJECTORY_COLUMNS = ("iter", "distance", "mean_atom_distance", "recovery_rate",
                      "K", "S_e", "S_bar", "replaced", "pruned", "added",
                      "wallclock_ms", "S_bar_raw", "S_t", "merges",
                      "pruned_unused")


class SpecError(ValueError):
    """Invalid experiment specification; the message names the field."""


@dataclass(frozen=True)
class ExperimentSpec:
    """Flat experiment description; defaults follow the synthetic setup of
    the replacement and adaptive experiments (d=128, K=192, S=6, N=120000,
    SNR 16, 5% outliers, mu_max 0.7)."""

    scenario: str = "replacement_compare"
    output_dir: str = "runs/experiment"
    trials: int = 20
    seed: int = 1
    scale: float = 1.0
    d: int = 128
    n_atoms: int = 192
    init_atoms: Optional[int] = None         # K_e, defaults to n_atoms
    dict_kind: str = "random-sphere"
    sparsity: int = 6                        # S_e handed to the engine
    gen_sparsity: Tuple[int, ...] = (6,)     # generating sparsity levels
    gen_weights: Tuple[float, ...] = (1.0,)
    q_min: float = 0.9
    q_max: float = 1.0
    snr: float = 16.0
    outlier_rate: float = 0.05
    iterations: int = 100
    signals: int = 120000
    mu_max: float = 0.7
    combine: str = "merge"
    compare: Tuple[str, ...] = ("candidate", "random", "none")
    min_obs: str = "dlogd"
    recovery_threshold: float = 0.99
    epsilons: Tuple[float, ...] = (0.1, 0.3)
    init_kind: str = "random"                # random | spurious (probe)
    spurious_triples: int = 1
    image_path: Optional[str] = None
    patch_side: int = 8
    image_sigma: float = 0.0
    s_range: Tuple[int, ...] = tuple(range(1, 11))
    stop_at_full_recovery: bool = False

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise SpecError(f"scenario: unknown value {self.scenario!r}")
        if self.dict_kind not in DICT_KINDS:
            raise SpecError(f"dict_kind: unknown value {self.dict_kind!r}")
        if self.trials < 0:
            raise SpecError("trials: must be >= 0")
        if self.scale <= 0:
            raise SpecError("scale: must be positive")
        if self.d < 1 or self.n_atoms < 1:
            raise SpecError("d/n_atoms: must be positive")
        if self.sparsity < 1:
            raise SpecError("sparsity: must be >= 1")
        if len(self.gen_sparsity) != len(self.gen_weights):
            raise SpecError("gen_weights: must match gen_sparsity in length")
        if not (0 <= self.outlier_rate < 1):
            raise SpecError("outlier_rate: must lie in [0, 1)")
        if not (0 < self.mu_max < 1):
            raise SpecError("mu_max: must lie in (0, 1)")
        if self.combine not in ("delete", "merge", "add"):
            raise SpecError(f"combine: unknown value {self.combine!r}")
        for variant in self.compare:
            if variant not in ("candidate", "random", "none"):
                raise SpecError(f"compare: unknown variant {variant!r}")
        if self.iterations < 0 or self.signals < 1:
            raise SpecError("iterations/signals: out of range")
        if not (0 < self.recovery_threshold <= 1):
            raise SpecError("recovery_threshold: must lie in (0, 1]")
        if self.init_kind not in ("random", "spurious"):
            raise SpecError(f"init_kind: unknown value {self.init_kind!r}")
        if self.scenario == "adaptive_image" and not self.image_path:
            raise SpecError("image_path: required for adaptive_image")
        if self.min_obs not in ("d", "dlogd", "2dlogd") and not _is_int(self.min_obs):
            raise SpecError(f"min_obs: unknown value {self.min_obs!r}")

    def scaled(self) -> "ExperimentSpec":
        """Shrink d, K and N proportionally by the scale factor."""
        if self.scale == 1.0:
            return self
        f = self.scale
        return dc_replace(
            self, scale=1.0,
            d=max(1, round_half_up(self.d * f)),
            n_atoms=max(1, round_half_up(self.n_atoms * f)),
            init_atoms=None if self.init_atoms is None
            else max(1, round_half_up(self.init_atoms * f)),
            signals=max(1, round_half_up(self.signals * f)),
        )


def _is_int(text) -> bool:
    try:
        int(text)
        return True
    except (TypeError, ValueError):
        return False


def resolve_min_obs(mode: str, d: int) -> int:
    if mode == "d":
        return d
    if mode == "dlogd":
        return round_half_up(d * math.log(d))
    if mode == "2dlogd":
        return round_half_up(2 * d * math.log(d))
    return int(mode)


def derive_seed(base: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=int(base),
                                spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def coefficient_model(spec: ExperimentSpec):
    parts = []
    total = float(sum(spec.gen_weights))
    for s, w in zip(spec.gen_sparsity, spec.gen_weights):
        parts.append((w / total, GeometricCoefficients(spec.q_min, spec.q_max, s)))
    if len(parts) == 1:
        return parts[0][1]
    return CoefficientMixture(components=tuple(parts))


def generating_dictionary(spec: ExperimentSpec) -> Dictionary:
    if spec.dict_kind == "dirac-hadamard":
        return make_dirac_hadamard(spec.d, spec.n_atoms)
    return make_random_sphere(spec.d, spec.n_atoms,
                              rng_from_seed(derive_seed(spec.seed, 0xD1C0)))


def signal_model(spec: ExperimentSpec, generating: Dictionary,
                 trial: int) -> SignalModel:
    return SignalModel(
        dictionary=generating,
        coeffs=coefficient_model(spec),
        noise_std_per_component=noise_std_for_snr(spec.snr, spec.d),
        outlier_rate=spec.outlier_rate,
        outlier_std_per_component=1.0 / spec.d,
        seed=derive_seed(spec.seed, 0x51F, trial),
    )


# ---------------------------------------------------------------------------
# CSV / manifest output


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def record_row(rec: IterationRecord) -> list:
    return [rec.iteration, rec.distance, rec.mean_atom_distance,
            rec.recovery_rate, rec.n_atoms, rec.sparsity, rec.s_bar,
            rec.replaced, rec.pruned, rec.added, rec.wallclock_ms,
            rec.s_bar_raw, rec.s_t, rec.merges, rec.pruned_unused]


def write_trajectory_csv(path, trajectory: Trajectory) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for rec in trajectory.records:
            writer.writerow([_fmt(v) for v in record_row(rec)])


def write_rows_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def aggregate_trajectories(trajectories: List[Trajectory]):
    """Per-iteration mean/std over trials; wallclock is excluded."""
    stat_cols = TRAJECTORY_COLUMNS[1:10] + TRAJECTORY_COLUMNS[11:]
    header = ["iter", "n"]
    for col in stat_cols:
        header += [f"{col}_mean", f"{col}_std"]
    max_len = max((len(t.records) for t in trajectories), default=0)
    rows = []
    for i in range(max_len):
        recs = [t.records[i] for t in trajectories if len(t.records) > i]
        row = [recs[0].iteration, len(recs)]
        full = [record_row(r) for r in recs]
        for j, col in enumerate(TRAJECTORY_COLUMNS):
            if col not in stat_cols:
                continue
            vals = [r[j] for r in full]
            vals = [v for v in vals if v is not None
                    and not (isinstance(v, float) and math.isnan(v))]
            if vals:
                arr = np.array(vals, dtype=np.float64)
                row += [float(arr.mean()), float(arr.std())]
            else:
                row += [None, None]
        rows.append(row)
    return header, rows


# ---------------------------------------------------------------------------
# scenarios (one trial each)


def _initial_estimate(spec: ExperimentSpec, generating: Dictionary,
                      trial: int) -> Dictionary:
    k_init = spec.init_atoms if spec.init_atoms is not None else spec.n_atoms
    if spec.scenario == "fixedpoint_probe" and spec.init_kind == "spurious":
        triples = [(3 * i, 3 * i + 2, 3 * i + 1)
                   for i in range(spec.spurious_triples)]
        return make_spurious_estimate(generating, triples)
    return make_random_sphere(spec.d, k_init,
                              rng_from_seed(derive_seed(spec.seed, 0x171, trial)))


def run_trial(spec: ExperimentSpec, trial: int):
    """Run one trial; returns (labelled trajectories, extra csv rows)."""
    generating = generating_dictionary(spec)
    model_seed_source = FreshBatches(signal_model(spec, generating, trial),
                                     spec.signals)
    init = _initial_estimate(spec, generating, trial)
    trajectories: List[Tuple[str, Trajectory]] = []
    rows: List[list] = []

    if spec.scenario in ("plain_recovery", "fixedpoint_probe"):
        cfg = EngineConfig(sparsity=spec.sparsity, variant="plain")
        traj = run_learning(init, model_seed_source, cfg, spec.iterations,
                            reference=generating,
                            recovery_threshold=spec.recovery_threshold,
                            seed=derive_seed(spec.seed, 0xE, trial))
        trajectories.append(("plain", traj))
        if traj.final_record is not None:
            recovered = int(round(traj.final_record.recovery_rate * generating.K))
            rows.append([trial, recovered, generating.K])

    elif spec.scenario == "replacement_compare":
        policy = ReplacementPolicy(mu_max=spec.mu_max, combine=spec.combine)
        for label in spec.compare:
            if label == "none":
                cfg = EngineConfig(sparsity=spec.sparsity, variant="plain")
                traj = run_learning(init, model_seed_source, cfg, spec.iterations,
                                    reference=generating,
                                    recovery_threshold=spec.recovery_threshold,
                                    seed=derive_seed(spec.seed, 0xE, trial))
            else:
                cfg = EngineConfig(sparsity=spec.sparsity, variant="replacement")
                traj = run_learning(
                    init, model_seed_source, cfg, spec.iterations,
                    reference=generating, policy=policy,
                    candidate_source="learned" if label == "candidate" else "random",
                    recovery_threshold=spec.recovery_threshold,
                    stop_at_full_recovery=spec.stop_at_full_recovery,
                    seed=derive_seed(spec.seed, 0xE, trial))
            trajectories.append((label, traj))

    elif spec.scenario == "adaptive_synthetic":
        cfg = AdaptiveConfig(
            mu_max=spec.mu_max,
            min_observations=resolve_min_obs(spec.min_obs, spec.d))
        traj = run_adaptive(init, model_seed_source, cfg, spec.iterations,
                            reference=generating,
                            recovery_threshold=spec.recovery_threshold,
                            seed=derive_seed(spec.seed, 0xE, trial))
        trajectories.append(("adaptive", traj))

    elif spec.scenario == "adaptive_image":
        clean = load_image_gray(spec.image_path)
        img = add_image_noise(clean, spec.image_sigma,
                              rng_from_seed(derive_seed(spec.seed, 0x10, trial)))
        patches = extract_patches(img, PatchConfig(patch_side=spec.patch_side))
        d = spec.patch_side ** 2
        k_init = spec.init_atoms if spec.init_atoms is not None else 64
        init = make_random_sphere(
            d, k_init, rng_from_seed(derive_seed(spec.seed, 0x171, trial)))
        cfg = AdaptiveConfig(mu_max=spec.mu_max,
                             min_observations=resolve_min_obs(spec.min_obs, d))
        traj = run_adaptive(init, FixedCorpus(patches), cfg, spec.iterations,
                            seed=derive_seed(spec.seed, 0xE, trial))
        trajectories.append(("adaptive", traj))
        clean_patches = extract_patches(clean,
                                        PatchConfig(patch_side=spec.patch_side))
        report = approximation_power(traj.dictionary, clean_patches,
                                     spec.s_range, augment_flat=True)
        for s, err in zip(report.sparsity_levels, report.relative_errors):
            rows.append([trial, int(s), float(err)])

    elif spec.scenario == "contraction_sweep":
        rng = rng_from_seed(derive_seed(spec.seed, 0xC0, trial))
        generating = make_random_sphere(spec.d, spec.n_atoms, rng)
        model = signal_model(spec, generating, trial)
        for eps in spec.epsilons:
            estimate = perturbed_dictionary(generating, eps, rng)
            batch = generate_batch(model, spec.signals,
                                   rng=rng_from_seed(model.seed, 1))
            cfg = EngineConfig(sparsity=spec.sparsity, variant="plain")
            out = run_iteration(estimate, batch, cfg)
            d_before, _ = asym_distance(generating, estimate)
            d_after, _ = asym_distance(generating, out.new_dictionary)
            rows.append([trial, eps, d_before, d_after, d_after / d_before])
    else:
        raise SpecError(f"scenario: unknown value {spec.scenario!r}")
    return trajectories, rows


_EXTRA_HEADERS = {
    "plain_recovery": ("trial", "recovered", "K"),
    "fixedpoint_probe": ("trial", "recovered", "K"),
    "adaptive_image": ("trial", "S", "relative_error"),
    "contraction_sweep": ("trial", "eps", "distance_before", "distance_after",
                          "ratio"),
}


def worker_count() -> int:
    return max(1, int(os.environ.get("ITKRM_WORKERS", "1")))


def run_experiment(spec: ExperimentSpec) -> Path:
    """Run all trials of a spec and write the artifact directory."""
    spec.validate()
    spec = spec.scaled()
    out_dir = Path(spec.output_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise RuntimeError(f"output directory not writable: {exc}") from exc

    manifest = {"spec": asdict(spec), "version": 1}
    if spec.scenario.startswith("adaptive"):
        d_eff = spec.patch_side ** 2 if spec.scenario == "adaptive_image" else spec.d
        cfg = AdaptiveConfig(mu_max=spec.mu_max,
                             min_observations=resolve_min_obs(spec.min_obs, d_eff))
        manifest["adaptive_config"] = asdict(cfg.resolve(d_eff))
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                      sort_keys=True) + "\n")
    if spec.trials == 0:
        return out_dir

    results = []
    workers = worker_count()
    if workers > 1 and spec.trials > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_trial, spec, t) for t in range(spec.trials)]
            results = [f.result() for f in futures]
    else:
        results = [run_trial(spec, t) for t in range(spec.trials)]

    by_label: dict[str, List[Trajectory]] = {}
    extra_rows: List[list] = []
    event_rows: List[list] = []
    for trial, (trajectories, rows) in enumerate(results):
        for label, traj in trajectories:
            by_label.setdefault(label, []).append(traj)
            write_trajectory_csv(out_dir / f"trial_{trial:03d}_{label}.csv", traj)
            container.write_dictionary(
                out_dir / f"trial_{trial:03d}_{label}.dict", traj.dictionary)
            for it, kind, kept, gone, v_kept, v_gone in traj.replacement_events:
                event_rows.append([trial, label, it, kind, f"{kept}:{gone}",
                                   f"{v_kept}:{v_gone}"])
        extra_rows.extend(rows)
    if event_rows:
        write_rows_csv(out_dir / "replacement_events.csv",
                       ("trial", "label", "iter", "kind", "pair", "scores"),
                       event_rows)
    for label, trajectories in by_label.items():
        header, rows = aggregate_trajectories(trajectories)
        write_rows_csv(out_dir / f"aggregate_{label}.csv", header, rows)
    if extra_rows:
        write_rows_csv(out_dir / "results.csv",
                       _EXTRA_HEADERS.get(spec.scenario, ()), extra_rows)
    return out_dir
