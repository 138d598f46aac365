"""Preference-dataset serialization, manifests, and delta reporting.

The data file is UTF-8 JSONL with the interchange keys {prompt, chosen,
rejected, chosen_fitness, rejected_fitness, chosen_tier, rejected_tier};
third-party preference trainers consume it unchanged. A manifest object is
written alongside. CSV is the reporting contract; plot images are
convenience output.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from evopref.sampler import DeltaStats, PreferencePair, delta_stats

PAIR_KEYS = (
    "prompt",
    "chosen",
    "rejected",
    "chosen_fitness",
    "rejected_fitness",
    "chosen_tier",
    "rejected_tier",
)


class DatasetSchemaError(ValueError):
    """A preference file violates the interchange schema; names the line."""


@dataclass(frozen=True)
class DatasetManifest:
    task_id: str
    strategy: str
    config: dict
    n_pairs: int
    mean_delta: float
    std_delta: float
    db_digest: str
    rng_seed: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def manifest_path_for(data_path: str | Path) -> Path:
    data_path = Path(data_path)
    return data_path.with_name(data_path.name + ".manifest.json")


def emit_preference_jsonl(
    pairs: Sequence[PreferencePair],
    path: str | Path,
    *,
    task_id: str,
    strategy: str,
    config: dict,
    db_digest: str,
    rng_seed: int,
) -> DatasetManifest:
    """Write one pair object per line plus the companion manifest."""
    if not pairs:
        raise ValueError("cannot emit an empty dataset")
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(
                json.dumps(
                    {
                        "prompt": pair.prompt,
                        "chosen": pair.chosen_source,
                        "rejected": pair.rejected_source,
                        "chosen_fitness": pair.chosen_fitness,
                        "rejected_fitness": pair.rejected_fitness,
                        "chosen_tier": pair.chosen_tier,
                        "rejected_tier": pair.rejected_tier,
                    }
                )
                + "\n"
            )
    stats = delta_stats(pairs)
    manifest = DatasetManifest(
        task_id=task_id,
        strategy=strategy,
        config=dict(config),
        n_pairs=len(pairs),
        mean_delta=stats.mean,
        std_delta=stats.std,
        db_digest=db_digest,
        rng_seed=rng_seed,
    )
    manifest_path_for(path).write_text(manifest.to_json() + "\n", encoding="utf-8")
    return manifest


def load_preference_jsonl(path: str | Path) -> list[PreferencePair]:
    path = Path(path)
    pairs: list[PreferencePair] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetSchemaError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetSchemaError(f"line {lineno}: expected an object")
            missing = [k for k in PAIR_KEYS if k not in obj]
            if missing:
                raise DatasetSchemaError(f"line {lineno}: missing {missing}")
            pairs.append(
                PreferencePair(
                    prompt=obj["prompt"],
                    chosen_source=obj["chosen"],
                    rejected_source=obj["rejected"],
                    chosen_fitness=obj["chosen_fitness"],
                    rejected_fitness=obj["rejected_fitness"],
                    chosen_tier=obj["chosen_tier"],
                    rejected_tier=obj["rejected_tier"],
                )
            )
    return pairs


def load_manifest(path: str | Path) -> DatasetManifest:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return DatasetManifest(**obj)


@dataclass(frozen=True)
class DeltaRow:
    strategy: str
    mean_delta: float
    std_delta: float
    n_pairs: int


def delta_report(datasets: Sequence[tuple[str, Sequence[PreferencePair]]]) -> list[DeltaRow]:
    """Per-strategy delta mean/std over named pair lists."""
    if not datasets:
        raise ValueError("delta_report needs at least one dataset")
    rows = []
    for name, pairs in datasets:
        if len(pairs) < 2:
            raise ValueError(f"dataset {name!r} needs >= 2 pairs")
        stats: DeltaStats = delta_stats(pairs)
        rows.append(DeltaRow(name, stats.mean, stats.std, len(pairs)))
    return rows


def write_delta_csv(rows: Sequence[DeltaRow], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "mean_delta", "std_delta"])
        for row in rows:
            writer.writerow([row.strategy, repr(row.mean_delta), repr(row.std_delta)])
    return path


def plot_delta_report(rows: Sequence[DeltaRow], path: str | Path) -> Path:
    """Circle markers at the means with std whiskers, one column per strategy."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    xs = range(len(rows))
    ax.errorbar(
        xs,
        [r.mean_delta for r in rows],
        yerr=[r.std_delta for r in rows],
        fmt="o",
        capsize=4,
    )
    ax.set_xticks(list(xs))
    ax.set_xticklabels([r.strategy for r in rows], rotation=20)
    ax.set_ylabel("delta (gap % difference)")
    ax.set_title("Preference-pair delta by sampling strategy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_convergence(named_logs, path: str | Path) -> Path:
    """Overlay best-so-far curves from (name, ConvergenceLog) pairs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, log in named_logs:
        xs = [row["eval_index"] for row in log.rows]
        ys = [row["best_5_mean"] for row in log.rows]
        ax.plot(xs, ys, label=name)
    ax.set_xlabel("evaluations")
    ax.set_ylabel("top-5 mean gap (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
