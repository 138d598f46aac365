"""Operator entry point: search, sample, report, evaluate.

Every command is reproducible from (config file, seed): flags override file
values, all randomness funnels through one seed, and the effective config
is echoed into the output directory. Exit codes: 0 ok, 1 runtime failure,
2 usage or configuration error.
"""

from __future__ import annotations

import json
import random
import sys
from dataclasses import asdict
from pathlib import Path

import click

from evopref import dataset as dataset_mod
from evopref import sampler as sampler_mod
from evopref import sandbox as sandbox_mod
from evopref import search as search_mod
from evopref.db import AlgorithmStore, DatabaseFormatError
from evopref.tasks.registry import UnknownTaskError, get_task, write_instances

_CONFIG_KEYS = {
    "search": {
        "task", "method", "budget", "endpoint", "model", "temperature", "max_tokens",
        "api_key_env", "population", "islands", "parents_per_prompt", "timeout",
        "seed", "n_instances", "out", "validate",
    },
    "sample": {"db", "task", "strategy", "m", "tau", "k", "pairs", "seed", "out"},
    "report": {"datasets", "convergence", "db", "task", "topk", "out"},
    "evaluate": {"task", "source", "timeout", "seed", "n_instances", "out"},
}


def _load_config(path: str | None, command: str) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot read config {path}: {exc}")
    if not isinstance(obj, dict):
        raise click.UsageError("config file must hold a JSON object")
    unknown = set(obj) - _CONFIG_KEYS[command]
    if unknown:
        raise click.UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
    return obj


def _merge(config: dict, **flags) -> dict:
    merged = dict(config)
    for key, value in flags.items():
        if value is not None and value != ():
            merged[key] = value
    return merged


def _echo_config(out_dir: Path, merged: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(merged, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8"
    )


def _require(merged: dict, key: str) -> object:
    if key not in merged or merged[key] is None:
        raise click.UsageError(f"missing required option --{key.replace('_', '-')}")
    return merged[key]


def _task_from(merged: dict) -> "object":
    seed = int(merged.get("seed", 0))
    n_instances = merged.get("n_instances")
    try:
        return get_task(str(_require(merged, "task")), seed=seed,
                        n_instances=int(n_instances) if n_instances is not None else None)
    except UnknownTaskError as exc:
        raise click.UsageError(str(exc))


@click.group()
@click.version_option()
def main() -> None:
    """Heuristic-search data factory and preference-dataset builder."""


@main.command("search")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--task", type=str)
@click.option("--method", type=click.Choice(["eoh", "funsearch", "random_sampling"]))
@click.option("--budget", type=int, help="Maximum sandbox fitness evaluations.")
@click.option("--endpoint", type=str, help="Chat-completions base URL, or 'stub'.")
@click.option("--model", type=str)
@click.option("--temperature", type=float)
@click.option("--max-tokens", "max_tokens", type=int)
@click.option("--api-key-env", "api_key_env", type=str)
@click.option("--population", type=int)
@click.option("--islands", type=int)
@click.option("--parents-per-prompt", "parents_per_prompt", type=int)
@click.option("--timeout", type=float, help="Per-candidate sandbox timeout (s).")
@click.option("--seed", type=int)
@click.option("--n-instances", "n_instances", type=int)
@click.option("--validate", type=click.Choice(["all", "sampled", "none"]))
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
def cmd_search(config_path, **flags) -> None:
    """Run a search and write db + convergence CSV + plot."""
    merged = _merge(_load_config(config_path, "search"), **flags)
    task = _task_from(merged)
    method = str(merged.get("method", "eoh"))
    out_dir = Path(str(_require(merged, "out")))
    endpoint_url = str(_require(merged, "endpoint"))
    _echo_config(out_dir, {**merged, "task": task.task_id, "method": method})

    endpoint = search_mod.LlmEndpoint(
        base_url=endpoint_url,
        model_name=str(merged.get("model", "default")),
        temperature=float(merged.get("temperature", 1.0)),
        max_tokens=int(merged.get("max_tokens", 1024)),
        api_key_env=str(merged.get("api_key_env", "EVOPREF_API_KEY")),
    )
    config = search_mod.SearchConfig(
        method=method,
        eval_budget=int(merged.get("budget", search_mod.DEFAULT_EVAL_BUDGET)),
        population_size=int(merged.get("population", search_mod.DEFAULT_POPULATION)),
        islands=int(merged.get("islands", search_mod.DEFAULT_ISLANDS)),
        parents_per_prompt=int(
            merged.get("parents_per_prompt", search_mod.DEFAULT_PARENTS_PER_PROMPT)
        ),
        rng_seed=int(merged.get("seed", 0)),
        timeout=float(merged.get("timeout", sandbox_mod.DEFAULT_TIMEOUT)),
        validate=str(merged.get("validate", "sampled")),
    )
    try:
        generator = search_mod.make_generator(endpoint)
    except search_mod.EndpointConfigError as exc:
        raise click.UsageError(str(exc))

    db = AlgorithmStore()
    db_path = out_dir / "db.jsonl"
    csv_path = out_dir / "convergence.csv"
    try:
        if method == "eoh":
            log = search_mod.run_eoh(task, generator, config, db, work_dir=out_dir)
        elif method == "funsearch":
            log = search_mod.run_funsearch(task, generator, config, db, work_dir=out_dir)
        else:
            result = search_mod.run_random_sampling(
                task, generator, config.eval_budget, db, config=config, work_dir=out_dir
            )
            log = result.log
    except search_mod.SearchAborted as exc:
        # preserve partial outputs before reporting the failure
        db.export_jsonl(db_path)
        exc.log.to_csv(csv_path)
        click.echo(f"search aborted: {exc}", err=True)
        sys.exit(1)
    except search_mod.RandomSamplingStalled as exc:
        db.export_jsonl(db_path)
        exc.result.log.to_csv(csv_path)
        click.echo(f"search aborted: {exc}", err=True)
        sys.exit(1)
    except (search_mod.EndpointError, search_mod.SeedInvalidError,
            search_mod.SearchStalledError) as exc:
        db.export_jsonl(db_path)
        click.echo(f"search aborted: {exc}", err=True)
        sys.exit(1)
    db.export_jsonl(db_path)
    log.to_csv(csv_path)
    dataset_mod.plot_convergence([(method, log)], out_dir / "convergence.png")
    click.echo(f"wrote {db_path} ({len(db)} records) and {csv_path} ({len(log.rows)} rows)")


@main.command("sample")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--db", "db_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--task", type=str)
@click.option("--strategy", type=click.Choice(["dar", "top1", "topk"]))
@click.option("--m", type=int, help="Number of rank tiers.")
@click.option("--tau", type=float, help="Tier-selection temperature.")
@click.option("--k", type=float, help="Top-k percent for the topk baseline.")
@click.option("--pairs", type=int, help="Number of preference pairs to build.")
@click.option("--seed", type=int)
@click.option("--out", type=click.Path(file_okay=False))
def cmd_sample(config_path, **flags) -> None:
    """Build a preference dataset from an algorithm database."""
    merged = _merge(_load_config(config_path, "sample"), **flags)
    db_file = merged.get("db_path") or merged.get("db")
    if db_file is None:
        raise click.UsageError("missing required option --db")
    db_file = str(db_file)
    task_id = str(_require(merged, "task"))
    strategy = str(merged.get("strategy", "dar"))
    n_pairs = int(merged.get("pairs", 250))
    seed = int(merged.get("seed", 0))
    out_dir = Path(str(_require(merged, "out")))
    _echo_config(out_dir, merged)

    db = AlgorithmStore()
    try:
        db.import_jsonl(db_file)
    except DatabaseFormatError as exc:
        raise click.UsageError(f"bad database file: {exc}")

    try:
        prompt = search_mod.build_prompt(get_task_for_prompt(task_id))
    except UnknownTaskError as exc:
        raise click.UsageError(str(exc))

    rng = random.Random(seed)
    config_echo: dict
    try:
        if strategy == "dar":
            config = sampler_mod.SamplerConfig(
                m=int(merged.get("m", 10)),
                tau=float(merged.get("tau", 3.0)),
                strategy="dar",
                rng_seed=seed,
            )
            pairs = sampler_mod.build_dataset(db, task_id, prompt, n_pairs, config)
            config_echo = {"m": config.m, "tau": config.tau}
        elif strategy == "top1":
            pairs = sampler_mod.baseline_top1(db, task_id, prompt, n_pairs, rng)
            config_echo = {}
        else:
            k = float(_require(merged, "k"))
            pairs = sampler_mod.baseline_topk(db, task_id, prompt, n_pairs, k, rng)
            config_echo = {"k": k}
    except click.UsageError:
        raise
    except sampler_mod.SamplerConfigError as exc:
        raise click.UsageError(str(exc))
    except (sampler_mod.PartialDatasetError, sampler_mod.PartitionError, LookupError) as exc:
        click.echo(f"sampling failed: {exc}", err=True)
        sys.exit(1)

    data_path = out_dir / "dataset.jsonl"
    manifest = dataset_mod.emit_preference_jsonl(
        pairs,
        data_path,
        task_id=task_id,
        strategy=strategy if strategy != "topk" else f"top{merged.get('k')}pct",
        config=config_echo,
        db_digest=db.digest(),
        rng_seed=seed,
    )
    click.echo(f"wrote {data_path} ({manifest.n_pairs} pairs, mean delta {manifest.mean_delta:.4f})")


def get_task_for_prompt(task_id: str):
    """Resolve a task purely for its fixed prompt (no instance generation)."""
    kind = None
    for prefix in ("asp", "tsp", "cvrp"):
        if task_id.startswith(prefix):
            kind = prefix
            break
    if kind is None:
        raise UnknownTaskError(f"cannot infer task kind from {task_id!r}")
    from evopref.tasks.registry import TaskSpec

    return TaskSpec(task_id=task_id, kind=kind, params={})


@main.command("report")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", "datasets", multiple=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Preference JSONL file; repeatable.")
@click.option("--convergence", "convergence", multiple=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Convergence CSV from a search run; repeatable.")
@click.option("--db", "db_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--task", type=str)
@click.option("--topk", type=int)
@click.option("--out", type=click.Path(file_okay=False))
def cmd_report(config_path, **flags) -> None:
    """Delta comparison, top-k summary, and convergence overlays."""
    merged = _merge(_load_config(config_path, "report"), **flags)
    datasets = [str(p) for p in merged.get("datasets", ())]
    convergence = [str(p) for p in merged.get("convergence", ())]
    db_path = merged.get("db_path") or merged.get("db")
    if not datasets and not convergence and not db_path:
        raise click.UsageError("nothing to report: pass --dataset, --convergence, or --db")
    out_dir = Path(str(_require(merged, "out")))
    _echo_config(out_dir, merged)

    try:
        if datasets:
            named = []
            for path in datasets:
                pairs = dataset_mod.load_preference_jsonl(path)
                manifest_path = dataset_mod.manifest_path_for(path)
                if manifest_path.exists():
                    name = dataset_mod.load_manifest(manifest_path).strategy
                else:
                    name = Path(path).stem
                named.append((name, pairs))
            rows = dataset_mod.delta_report(named)
            dataset_mod.write_delta_csv(rows, out_dir / "delta_report.csv")
            dataset_mod.plot_delta_report(rows, out_dir / "delta_report.png")
            for row in rows:
                click.echo(
                    f"{row.strategy}: mean delta {row.mean_delta:.4f}, "
                    f"std {row.std_delta:.4f} ({row.n_pairs} pairs)"
                )
        if convergence:
            logs = [(Path(p).stem, search_mod.read_convergence_csv(p)) for p in convergence]
            dataset_mod.plot_convergence(logs, out_dir / "convergence_overlay.png")
            merged_csv = out_dir / "convergence_merged.csv"
            with merged_csv.open("w", encoding="utf-8") as fh:
                fh.write("run,eval_index,best_1,best_5_mean,best_10_mean\n")
                for name, log in logs:
                    for row in log.rows:
                        fh.write(
                            f"{name},{row['eval_index']},{row['best_1']!r},"
                            f"{row['best_5_mean']!r},{row['best_10_mean']!r}\n"
                        )
            click.echo(f"wrote {merged_csv}")
        if db_path:
            task_id = str(_require(merged, "task"))
            k = int(merged.get("topk", 50))
            db = AlgorithmStore()
            db.import_jsonl(str(db_path))
            summary = search_mod.topk_summary(db, task_id, k)
            summary_path = out_dir / "topk_summary.json"
            summary_path.write_text(
                json.dumps(
                    {"task_id": task_id, "k": k, "gaps": summary.gaps,
                     "mean": summary.mean, "std": summary.std},
                    indent=2,
                )
                + "\n",
                encoding="utf-8",
            )
            click.echo(f"top-{k}: mean gap {summary.mean:.4f}, std {summary.std:.4f}")
    except (ValueError, DatabaseFormatError, dataset_mod.DatasetSchemaError) as exc:
        click.echo(f"report failed: {exc}", err=True)
        sys.exit(1)


@main.command("evaluate")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--task", type=str)
@click.option("--source", type=click.Path(exists=True, dir_okay=False),
              help="Heuristic source file to evaluate.")
@click.option("--timeout", type=float)
@click.option("--seed", type=int)
@click.option("--n-instances", "n_instances", type=int)
@click.option("--out", type=click.Path(file_okay=False))
def cmd_evaluate(config_path, **flags) -> None:
    """Evaluate one heuristic source file on a task; print the report as JSON."""
    merged = _merge(_load_config(config_path, "evaluate"), **flags)
    task = _task_from(merged)
    source = Path(str(_require(merged, "source"))).read_text(encoding="utf-8")
    timeout = float(merged.get("timeout", sandbox_mod.DEFAULT_TIMEOUT))

    import tempfile

    with tempfile.TemporaryDirectory(prefix="evopref-eval-") as tmp:
        instance_path = Path(tmp) / "instances.jsonl"
        write_instances(task, instance_path)
        try:
            evaluation = sandbox_mod.evaluate_candidate(
                task, source, instance_path, timeout=timeout, validate="all"
            )
        except sandbox_mod.RenderError as exc:
            raise click.UsageError(str(exc))
        except sandbox_mod.SandboxConfigError as exc:
            raise click.UsageError(str(exc))

    payload = {
        "task_id": task.task_id,
        "status": evaluation.outcome.status,
        "wall_time": evaluation.outcome.wall_time,
        "valid": evaluation.valid,
        "report": asdict(evaluation.report) if evaluation.report else None,
    }
    out = merged.get("out")
    if out:
        out_dir = Path(str(out))
        _echo_config(out_dir, merged)
        (out_dir / "evaluation.json").write_text(json.dumps(payload, indent=2) + "\n",
                                                 encoding="utf-8")
    click.echo(json.dumps(payload, indent=2))
    if not evaluation.valid:
        sys.exit(1)


if __name__ == "__main__":
    main()
