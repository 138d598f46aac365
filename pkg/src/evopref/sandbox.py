"""Isolated execution of candidate heuristics with a hard wall-clock kill.

Each evaluation renders the candidate into a task scaffold, runs it as a
child process in its own session inside a throwaway working directory, and
kills the whole process group at the timeout. Isolation is process-level
and best-effort: no container, no syscall filter.
"""

from __future__ import annotations

import json
import math
import os
import re
import signal
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from evopref import assets
from evopref.tasks import fitness as fitness_mod
from evopref.tasks.registry import SolutionInvalid, TaskSpec, write_instances

DEFAULT_TIMEOUT = 30.0
KILL_GRACE = 2.0
STDOUT_CAP = 1 << 20  # 1 MiB
STDERR_EXCERPT_CAP = 4096

STATUS_OK = "ok"
STATUS_TIMEOUT = "timeout"
STATUS_CRASH = "crash"
STATUS_MALFORMED = "malformed_output"


class RenderError(ValueError):
    """The candidate source does not define the function the scaffold needs."""


class SandboxConfigError(RuntimeError):
    """The sandbox itself is misconfigured (missing interpreter, bad paths)."""


@dataclass(frozen=True)
class ExecutionRequest:
    scaffold_id: str  # task kind: asp | tsp | cvrp
    heuristic_source: str
    instance_path: str | Path
    timeout: float = DEFAULT_TIMEOUT
    interpreter_cmd: tuple[str, ...] = (sys.executable,)
    capture_solutions: bool = True

    def __post_init__(self) -> None:
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class ExecutionOutcome:
    status: str
    objectives: list[float] | None
    stderr_excerpt: str
    wall_time: float
    solutions: Any = None

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


_FUNCTION_RE = {
    "priority": re.compile(r"^\s*def\s+priority\s*\(", re.MULTILINE),
    "select_next_node": re.compile(r"^\s*def\s+select_next_node\s*\(", re.MULTILINE),
}

_SCAFFOLD_FUNCTION = {"asp": "priority", "tsp": "select_next_node", "cvrp": "select_next_node"}


def render_scaffold(task_kind: str, heuristic_source: str) -> str:
    """Embed the candidate at the scaffold's placeholder, yielding a full program."""
    if task_kind not in _SCAFFOLD_FUNCTION:
        raise RenderError(f"no scaffold for task kind {task_kind!r}")
    required = _SCAFFOLD_FUNCTION[task_kind]
    if not _FUNCTION_RE[required].search(heuristic_source):
        raise RenderError(f"candidate source does not define {required}()")
    template = assets.load_scaffold_template(task_kind)
    return template.replace(assets.placeholder(), heuristic_source)


def _read_capped(path: Path, cap: int) -> str:
    try:
        with path.open("rb") as fh:
            data = fh.read(cap)
    except OSError:
        return ""
    return data.decode("utf-8", errors="replace")


def _expected_objective_count(instance_path: Path) -> int:
    with instance_path.open("r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    return max(0, len(lines) - 1)  # header line does not count


def execute(request: ExecutionRequest) -> ExecutionOutcome:
    """Run a rendered candidate program and classify the outcome.

    Never blocks longer than timeout plus a short grace period; the child's
    whole process group is SIGKILLed on expiry.
    """
    program_text = render_scaffold(request.scaffold_id, request.heuristic_source)
    instance_path = Path(request.instance_path).resolve()
    if not instance_path.exists():
        raise SandboxConfigError(f"instance file {instance_path} does not exist")
    expected = _expected_objective_count(instance_path)

    with tempfile.TemporaryDirectory(prefix="evopref-sbx-") as jail:
        jail_path = Path(jail)
        program = jail_path / "candidate_program.py"
        program.write_text(program_text, encoding="utf-8")
        solutions_path = jail_path / "solutions.json"
        stdout_path = jail_path / "stdout.txt"
        stderr_path = jail_path / "stderr.txt"

        cmd = [*request.interpreter_cmd, str(program), str(instance_path)]
        if request.capture_solutions:
            cmd.append(str(solutions_path))

        start = time.monotonic()
        try:
            with stdout_path.open("wb") as out_fh, stderr_path.open("wb") as err_fh:
                proc = subprocess.Popen(
                    cmd,
                    cwd=jail,
                    stdout=out_fh,
                    stderr=err_fh,
                    stdin=subprocess.DEVNULL,
                    start_new_session=True,
                )
                try:
                    returncode = proc.wait(timeout=request.timeout)
                    timed_out = False
                except subprocess.TimeoutExpired:
                    timed_out = True
                    _kill_group(proc)
                    returncode = proc.wait()
        except FileNotFoundError as exc:
            raise SandboxConfigError(
                f"interpreter not found: {request.interpreter_cmd[0]!r}"
            ) from exc
        wall = time.monotonic() - start
        stderr_excerpt = _read_capped(stderr_path, STDERR_EXCERPT_CAP)

        if timed_out:
            return ExecutionOutcome(STATUS_TIMEOUT, None, stderr_excerpt, wall)
        if returncode != 0:
            return ExecutionOutcome(STATUS_CRASH, None, stderr_excerpt, wall)

        stdout_text = _read_capped(stdout_path, STDOUT_CAP)
        objectives = _parse_objectives(stdout_text, expected)
        if objectives is None:
            return ExecutionOutcome(STATUS_MALFORMED, None, stderr_excerpt, wall)

        solutions = None
        if request.capture_solutions and solutions_path.exists():
            try:
                solutions = json.loads(solutions_path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                solutions = None
        return ExecutionOutcome(STATUS_OK, objectives, stderr_excerpt, wall, solutions)


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except ProcessLookupError:
        pass
    except PermissionError:
        proc.kill()


def _parse_objectives(stdout_text: str, expected: int) -> list[float] | None:
    lines = [ln.strip() for ln in stdout_text.splitlines() if ln.strip()]
    if len(lines) != expected:
        return None
    objectives = []
    for line in lines:
        try:
            value = float(line)
        except ValueError:
            return None
        if not math.isfinite(value):
            return None
        objectives.append(value)
    return objectives


# --- fitness evaluation on top of raw execution ---


@dataclass(frozen=True)
class CandidateEvaluation:
    source: str
    outcome: ExecutionOutcome
    report: fitness_mod.FitnessReport | None

    @property
    def valid(self) -> bool:
        return self.report is not None and self.report.feasible


def evaluate_candidate(
    task: TaskSpec,
    source: str,
    instance_path: str | Path,
    timeout: float = DEFAULT_TIMEOUT,
    interpreter_cmd: tuple[str, ...] = (sys.executable,),
    validate: str = "sampled",
    candidate_index: int = 0,
) -> CandidateEvaluation:
    """Execute one candidate and turn its objectives into a fitness report.

    ``validate`` is "all", "sampled" (every tenth candidate, by index) or
    "none"; validation re-checks reported solutions against the claimed
    objectives and marks the candidate infeasible on mismatch.
    """
    request = ExecutionRequest(
        scaffold_id=task.kind,
        heuristic_source=source,
        instance_path=instance_path,
        timeout=timeout,
        interpreter_cmd=interpreter_cmd,
        capture_solutions=validate != "none",
    )
    outcome = execute(request)
    if not outcome.ok:
        return CandidateEvaluation(source, outcome, fitness_mod.infeasible_report(outcome.status))
    should_validate = validate == "all" or (validate == "sampled" and candidate_index % 10 == 0)
    if should_validate and outcome.solutions is not None:
        try:
            for idx, (solution, objective) in enumerate(
                zip(outcome.solutions, outcome.objectives)
            ):
                task_validate(task, idx, solution, objective)
        except SolutionInvalid as exc:
            return CandidateEvaluation(
                source, outcome, fitness_mod.infeasible_report(f"validation failed: {exc}")
            )
    try:
        gaps = task.gaps_for(outcome.objectives)
    except ValueError as exc:
        return CandidateEvaluation(
            source, outcome, fitness_mod.infeasible_report(f"gap computation failed: {exc}")
        )
    return CandidateEvaluation(source, outcome, fitness_mod.aggregate(outcome.objectives, gaps))


def task_validate(task: TaskSpec, idx: int, solution: Any, objective: float) -> None:
    from evopref.tasks.registry import validate_solution

    validate_solution(task, idx, solution, objective)


@dataclass
class BatchResult:
    source: str
    outcome: ExecutionOutcome
    report: fitness_mod.FitnessReport | None


def batch_evaluate(
    sources: Sequence[str],
    task: TaskSpec,
    instance_path: str | Path | None = None,
    timeout: float = DEFAULT_TIMEOUT,
    parallelism: int = 1,
    interpreter_cmd: tuple[str, ...] = (sys.executable,),
    validate: str = "sampled",
) -> list[BatchResult]:
    """Evaluate many candidates; failures stay isolated and order is preserved."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if not sources:
        return []

    def run(indexed: tuple[int, str], path: Path) -> tuple[int, CandidateEvaluation]:
        index, source = indexed
        try:
            evaluation = evaluate_candidate(
                task,
                source,
                path,
                timeout=timeout,
                interpreter_cmd=interpreter_cmd,
                validate=validate,
                candidate_index=index,
            )
        except RenderError as exc:
            outcome = ExecutionOutcome(STATUS_CRASH, None, str(exc), 0.0)
            evaluation = CandidateEvaluation(
                source, outcome, fitness_mod.infeasible_report(f"render error: {exc}")
            )
        return index, evaluation

    with tempfile.TemporaryDirectory(prefix="evopref-batch-") as tmp:
        if instance_path is None:
            path = Path(tmp) / "instances.jsonl"
            write_instances(task, path)
        else:
            path = Path(instance_path)
        results: list[CandidateEvaluation | None] = [None] * len(sources)
        if parallelism == 1:
            for item in enumerate(sources):
                index, evaluation = run(item, path)
                results[index] = evaluation
        else:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                for index, evaluation in pool.map(lambda it: run(it, path), enumerate(sources)):
                    results[index] = evaluation
    return [BatchResult(ev.source, ev.outcome, ev.report) for ev in results]
