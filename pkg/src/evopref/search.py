"""LLM-driven iterative heuristic search feeding the algorithm database.

Implements a population loop with combine/refine prompt operators, an
island loop with best-shot prompting, and a plain repeated-sampling
protocol. All randomness flows through one seeded generator, and with a
deterministic text source entire runs replay byte-identically.
"""

from __future__ import annotations

import bisect
import csv
import os
import random
import re
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import requests

from evopref import assets, sandbox
from evopref.db import AlgorithmRecord, AlgorithmStore
from evopref.tasks.registry import TaskSpec, write_instances

DEFAULT_EVAL_BUDGET = 2000
DEFAULT_POPULATION = 20
DEFAULT_ISLANDS = 4
DEFAULT_PARENTS_PER_PROMPT = 2
DEFAULT_ISLAND_RESET_PERIOD = 500

_STALL_CALL_FACTOR = 100  # give up after this many generator calls per target eval
_WINDOW = 1000
_MIN_FEASIBLE_RATE = 0.001


class EndpointError(RuntimeError):
    """Transport failures that survived every retry."""


class EndpointConfigError(RuntimeError):
    """Client-side rejection (4xx) or unusable endpoint configuration."""


class CodeExtractionError(ValueError):
    """No usable candidate code found in a model response."""


class SeedInvalidError(RuntimeError):
    """The seed program did not evaluate to a valid fitness."""


class SearchStalledError(RuntimeError):
    """The generator kept failing to produce chargeable candidates."""


class SearchAborted(RuntimeError):
    """The endpoint died mid-run; carries the partial convergence log.

    Every evaluated candidate is already in the database, so a rerun with
    the same seed resumes cheaply through the dedup cache.
    """

    def __init__(self, message: str, log: "ConvergenceLog"):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class LlmEndpoint:
    base_url: str
    model_name: str = "default"
    temperature: float = 1.0
    max_tokens: int = 1024
    api_key_env: str = "EVOPREF_API_KEY"
    request_timeout: float = 60.0
    max_retries: int = 3

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise EndpointConfigError("temperature must be >= 0")
        if self.max_retries < 0:
            raise EndpointConfigError("max_retries must be >= 0")


@dataclass(frozen=True)
class SearchConfig:
    method: str = "eoh"
    eval_budget: int = DEFAULT_EVAL_BUDGET
    population_size: int = DEFAULT_POPULATION
    islands: int = DEFAULT_ISLANDS
    parents_per_prompt: int = DEFAULT_PARENTS_PER_PROMPT
    island_reset_period: int = DEFAULT_ISLAND_RESET_PERIOD
    rng_seed: int = 0
    timeout: float = sandbox.DEFAULT_TIMEOUT
    validate: str = "sampled"

    def __post_init__(self) -> None:
        if self.method not in ("eoh", "funsearch", "random_sampling"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.eval_budget < 1:
            raise ValueError("eval_budget must be >= 1")
        if self.method == "eoh" and self.population_size < 2:
            raise ValueError("population_size must be >= 2 for the population loop")
        if self.islands < 1:
            raise ValueError("islands must be >= 1")


@dataclass
class ConvergenceLog:
    """Per-evaluation best-so-far trajectory over valid records."""

    rows: list[dict] = field(default_factory=list)

    def append(self, eval_index: int, gaps_sorted: Sequence[float]) -> None:
        if not gaps_sorted:
            return
        self.rows.append(
            {
                "eval_index": eval_index,
                "best_1": gaps_sorted[0],
                "best_5_mean": _mean(gaps_sorted[:5]),
                "best_10_mean": _mean(gaps_sorted[:10]),
            }
        )

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["eval_index", "best_1", "best_5_mean", "best_10_mean"])
            for row in self.rows:
                writer.writerow(
                    [
                        row["eval_index"],
                        repr(row["best_1"]),
                        repr(row["best_5_mean"]),
                        repr(row["best_10_mean"]),
                    ]
                )
        return path


def read_convergence_csv(path: str | Path) -> ConvergenceLog:
    log = ConvergenceLog()
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            log.rows.append(
                {
                    "eval_index": int(row["eval_index"]),
                    "best_1": float(row["best_1"]),
                    "best_5_mean": float(row["best_5_mean"]),
                    "best_10_mean": float(row["best_10_mean"]),
                }
            )
    return log


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


# --- prompting and code extraction ---


def build_prompt(task: TaskSpec) -> str:
    """The fixed prompt x for a task: task description plus function template."""
    return assets.load_prompt(task.kind)


_FENCE_RE = re.compile(r"```[A-Za-z0-9_+-]*[^\S\n]*\n(.*?)```", re.DOTALL)
_DEF_RE = re.compile(r"^[ \t]*def\s", re.MULTILINE)


def extract_code(response_text: str, required_function: str) -> str:
    """First fenced code block, else the tail starting at the first def.

    Fails unless the extracted text defines ``required_function``.
    """
    match = _FENCE_RE.search(response_text)
    if match:
        code = match.group(1).strip("\n")
    else:
        def_match = _DEF_RE.search(response_text)
        if not def_match:
            raise CodeExtractionError("no code block or function definition found")
        code = response_text[def_match.start() :].strip("\n")
    name_re = re.compile(rf"^\s*def\s+{re.escape(required_function)}\s*\(", re.MULTILINE)
    if not name_re.search(code):
        raise CodeExtractionError(f"extracted code does not define {required_function}()")
    return code


# --- text generation backends ---


class TextGenerator(Protocol):
    def generate(self, prompt: str) -> str: ...


def llm_generate(endpoint: LlmEndpoint, prompt: str) -> str:
    """One chat completion via the OpenAI-compatible wire protocol.

    Retries transport errors and 5xx with exponential backoff; 4xx fails
    immediately as a configuration problem.
    """
    url = endpoint.base_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(endpoint.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    body = {
        "model": endpoint.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_tokens,
    }
    last_error: Exception | None = None
    for attempt in range(endpoint.max_retries + 1):
        try:
            resp = requests.post(url, json=body, headers=headers, timeout=endpoint.request_timeout)
        except requests.RequestException as exc:
            last_error = exc
        else:
            if resp.status_code < 400:
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise EndpointError(f"unparseable completion response: {exc}") from exc
            if 400 <= resp.status_code < 500:
                raise EndpointConfigError(
                    f"endpoint rejected the request: HTTP {resp.status_code}"
                )
            last_error = EndpointError(f"HTTP {resp.status_code}")
        if attempt < endpoint.max_retries:
            time.sleep(min(8.0, 0.25 * 2**attempt))
    raise EndpointError(f"retries exhausted: {last_error}")


class HttpGenerator:
    def __init__(self, endpoint: LlmEndpoint):
        self.endpoint = endpoint

    def generate(self, prompt: str) -> str:
        return llm_generate(self.endpoint, prompt)


class ScriptedGenerator:
    """Replays a fixed response sequence; cycles when exhausted if asked to."""

    def __init__(self, responses: Sequence[str], cycle: bool = False):
        if not responses:
            raise ValueError("need at least one scripted response")
        self.responses = list(responses)
        self.cycle = cycle
        self.calls = 0

    def generate(self, prompt: str) -> str:
        if self.calls >= len(self.responses) and not self.cycle:
            raise EndpointError("scripted responses exhausted")
        response = self.responses[self.calls % len(self.responses)]
        self.calls += 1
        return response


class CannedStub:
    """Offline deterministic stand-in for a hosted model.

    Emits an endless family of distinct, runnable heuristic variants for
    whichever function template the prompt asks for.
    """

    def __init__(self, seed: int = 0):
        self.calls = 0
        self.seed = seed

    def generate(self, prompt: str) -> str:
        k = self.calls + self.seed
        self.calls += 1
        if "def priority" in prompt:
            body = self._asp_variant(k)
        elif "rest_capacity" in prompt:
            body = self._cvrp_variant(k)
        else:
            body = self._tsp_variant(k)
        return f"Here is a new heuristic:\n\n```python\n{body}\n```\n"

    @staticmethod
    def _tsp_variant(k: int) -> str:
        w = (k % 9) * 0.15
        return (
            f"def select_next_node(current_node, destination_node, unvisited_nodes, distance_matrix):\n"
            f"    # variant {k}\n"
            f"    best_node = None\n"
            f"    best_score = None\n"
            f"    for node in unvisited_nodes:\n"
            f"        score = distance_matrix[current_node][node] + {w!r} * distance_matrix[node][destination_node]\n"
            f"        if best_score is None or score < best_score:\n"
            f"            best_score = score\n"
            f"            best_node = node\n"
            f"    return best_node\n"
        )

    @staticmethod
    def _cvrp_variant(k: int) -> str:
        a = (k % 7) * 0.3
        b = ((k // 7) % 5) * 0.25
        return (
            f"def select_next_node(current_node, depot, unvisited_nodes, rest_capacity, demands, distance_matrix):\n"
            f"    # variant {k}\n"
            f"    best_node = -1\n"
            f"    best_score = None\n"
            f"    for node in unvisited_nodes:\n"
            f"        if demands[node] > rest_capacity:\n"
            f"            continue\n"
            f"        d = distance_matrix[current_node][node]\n"
            f"        score = -d + {a!r} * demands[node] - {b!r} * distance_matrix[node][depot]\n"
            f"        if best_score is None or score > best_score:\n"
            f"            best_score = score\n"
            f"            best_node = node\n"
            f"    return best_node\n"
        )

    @staticmethod
    def _asp_variant(k: int) -> str:
        a = (k % 5) - 2
        b = ((k // 5) % 5) - 2
        return (
            f"def priority(el, n, w):\n"
            f"    # variant {k}\n"
            f"    score = 0.0\n"
            f"    for idx, value in enumerate(el):\n"
            f"        score += {a}.0 * value + {b}.0 * idx * (1 if value == 2 else 0)\n"
            f"    return score\n"
        )


STUB_URL = "stub"


def make_generator(endpoint: LlmEndpoint) -> TextGenerator:
    if endpoint.base_url == STUB_URL:
        return CannedStub()
    if not endpoint.base_url.startswith(("http://", "https://")):
        raise EndpointConfigError(
            f"base_url must be http(s) or {STUB_URL!r}, got {endpoint.base_url!r}"
        )
    return HttpGenerator(endpoint)


# --- the search driver ---


@dataclass
class _Member:
    record_id: int
    fitness: float
    source: str


class _Driver:
    """Shared budget accounting, evaluation, dedup, and logging."""

    def __init__(
        self,
        task: TaskSpec,
        generator: TextGenerator,
        config: SearchConfig,
        db: AlgorithmStore,
        instance_path: Path,
        max_generator_calls: int,
    ):
        self.task = task
        self.generator = generator
        self.config = config
        self.db = db
        self.instance_path = instance_path
        self.max_generator_calls = max_generator_calls
        self.charged = 0
        self.generator_calls = 0
        self.log = ConvergenceLog()
        self.gaps_sorted: list[float] = []  # valid gaps seen so far, ascending

    def budget_left(self) -> bool:
        return self.charged < self.config.eval_budget

    def call_generator(self, prompt: str) -> str | None:
        """One generator call; returns extracted code or None on a parse miss."""
        if self.generator_calls >= self.max_generator_calls:
            raise SearchStalledError(
                f"{self.generator_calls} generator calls produced only "
                f"{self.charged} chargeable evaluations"
            )
        self.generator_calls += 1
        text = self.generator.generate(prompt)
        try:
            return extract_code(text, self.task.function_name)
        except CodeExtractionError:
            return None

    def evaluate(self, source: str, origin: str) -> _Member | None:
        """Evaluate (or reuse) a candidate; returns a member when valid.

        Known sources are reused without charging the budget; novel ones
        cost one sandbox evaluation whatever their outcome.
        """
        existing_id = self.db.find_by_source(self.task.task_id, source)
        if existing_id is not None:
            record = self.db.get(existing_id)
            if record.valid:
                return _Member(existing_id, record.fitness, record.source_text)
            return None
        evaluation = sandbox.evaluate_candidate(
            self.task,
            source,
            self.instance_path,
            timeout=self.config.timeout,
            validate=self.config.validate,
            candidate_index=self.charged,
        )
        self.charged += 1
        valid = evaluation.valid
        fitness = evaluation.report.average_gap if valid else None
        result = self.db.insert(
            AlgorithmRecord(
                task_id=self.task.task_id,
                source_text=source,
                fitness=fitness,
                origin=origin,
                valid=valid,
            )
        )
        if valid:
            bisect.insort(self.gaps_sorted, fitness)
        self.log.append(self.charged, self.gaps_sorted)
        if valid:
            return _Member(result.id, fitness, source)
        return None


def _make_driver(
    task: TaskSpec,
    generator: TextGenerator,
    config: SearchConfig,
    db: AlgorithmStore,
    path: Path,
    call_target: int,
) -> _Driver:
    return _Driver(task, generator, config, db, path, _STALL_CALL_FACTOR * max(1, call_target))


def _seed_member(driver: _Driver) -> _Member:
    seed_source = assets.load_seed(driver.task.kind)
    member = driver.evaluate(seed_source, origin="seed")
    if member is None:
        raise SeedInvalidError("seed program did not evaluate to a valid fitness")
    return member


def _prompt_combine(base_prompt: str, parents: Sequence[_Member]) -> str:
    blocks = []
    for idx, parent in enumerate(parents):
        blocks.append(
            f"Existing algorithm {idx + 1} (average gap {parent.fitness:.4f}%):\n"
            f"```python\n{parent.source}\n```"
        )
    joined = "\n\n".join(blocks)
    return (
        f"{base_prompt}\n\n{joined}\n\n"
        "Combine the ideas of the algorithms above into one new algorithm that "
        "differs from both. Please only output the new function."
    )


def _prompt_refine(base_prompt: str, parent: _Member) -> str:
    return (
        f"{base_prompt}\n\n"
        f"Current algorithm (average gap {parent.fitness:.4f}%):\n"
        f"```python\n{parent.source}\n```\n\n"
        "Improve this algorithm to reduce its average gap. Please only output "
        "the improved function."
    )


def _prompt_best_shot(base_prompt: str, parents: Sequence[_Member]) -> str:
    # parents arrive ascending in quality: v0 is the weakest
    blocks = []
    for idx, parent in enumerate(parents):
        blocks.append(
            f"Version v{idx} (average gap {parent.fitness:.4f}%):\n```python\n{parent.source}\n```"
        )
    joined = "\n\n".join(blocks)
    return (
        f"{base_prompt}\n\n{joined}\n\n"
        f"Write an improved version v{len(parents)} that achieves a lower average "
        "gap than every version above. Please only output the new function."
    )


def run_eoh(
    task: TaskSpec,
    generator: TextGenerator,
    config: SearchConfig,
    db: AlgorithmStore,
    instance_path: str | Path | None = None,
    work_dir: str | Path | None = None,
    on_iteration=None,
) -> ConvergenceLog:
    """Population-based loop with combine and refine prompt operators.

    The population holds the best ``population_size`` valid candidates seen;
    every novel candidate costs one sandbox evaluation against the budget.
    ``on_iteration(iteration, population)`` is called after each survivor
    selection, mainly so tests can watch the population invariant.
    """
    with _instances(task, instance_path, work_dir) as path:
        driver = _make_driver(task, generator, config, db, path, config.eval_budget)
        rng = random.Random(config.rng_seed)
        base_prompt = build_prompt(task)

        population = [_seed_member(driver)]
        try:
            while len(population) < config.population_size and driver.budget_left():
                code = driver.call_generator(base_prompt)
                if code is None:
                    continue
                member = driver.evaluate(code, origin="generated")
                if member is not None and all(
                    m.record_id != member.record_id for m in population
                ):
                    population.append(member)

            iteration = 0
            while driver.budget_left():
                offspring: list[_Member] = []
                for j in range(config.population_size):
                    if not driver.budget_left():
                        break
                    if j % 2 == 0 and len(population) >= 2:
                        parents = rng.sample(population, 2)
                        prompt = _prompt_combine(base_prompt, parents)
                    else:
                        parent = population[rng.randrange(len(population))]
                        prompt = _prompt_refine(base_prompt, parent)
                    code = driver.call_generator(prompt)
                    if code is None:
                        continue
                    member = driver.evaluate(code, origin="generated")
                    if member is not None:
                        offspring.append(member)
                population = _select_survivors(population + offspring, config.population_size)
                iteration += 1
                if on_iteration is not None:
                    on_iteration(iteration, list(population))
        except EndpointError as exc:
            raise SearchAborted(f"endpoint failed mid-run: {exc}", driver.log) from exc
        return driver.log


def _select_survivors(members: Sequence[_Member], size: int) -> list[_Member]:
    unique: dict[int, _Member] = {}
    for m in members:
        unique[m.record_id] = m
    ordered = sorted(unique.values(), key=lambda m: (m.fitness, m.record_id))
    return ordered[:size]


def run_funsearch(
    task: TaskSpec,
    generator: TextGenerator,
    config: SearchConfig,
    db: AlgorithmStore,
    instance_path: str | Path | None = None,
    work_dir: str | Path | None = None,
) -> ConvergenceLog:
    """Island loop with best-shot prompting.

    Parents are drawn per island with a bias toward better fitness and shown
    in ascending quality order; periodically the weaker half of the islands
    restarts from the global best program.
    """
    with _instances(task, instance_path, work_dir) as path:
        driver = _make_driver(task, generator, config, db, path, config.eval_budget)
        rng = random.Random(config.rng_seed)
        base_prompt = build_prompt(task)

        seed = _seed_member(driver)
        islands: list[list[_Member]] = [[seed] for _ in range(config.islands)]
        next_reset = config.island_reset_period

        try:
            while driver.budget_left():
                island = islands[rng.randrange(len(islands))]
                parents = _draw_parents(island, config.parents_per_prompt, rng)
                prompt = _prompt_best_shot(base_prompt, parents)
                code = driver.call_generator(prompt)
                if code is not None:
                    member = driver.evaluate(code, origin="generated")
                    if member is not None and all(
                        m.record_id != member.record_id for m in island
                    ):
                        island.append(member)
                if driver.charged >= next_reset and driver.budget_left():
                    _reset_worst_islands(islands)
                    next_reset += config.island_reset_period
        except EndpointError as exc:
            raise SearchAborted(f"endpoint failed mid-run: {exc}", driver.log) from exc
        return driver.log


def _draw_parents(island: Sequence[_Member], count: int, rng: random.Random) -> list[_Member]:
    """Up to ``count`` distinct members, rank-biased toward better fitness,
    returned ascending in quality (weakest first)."""
    ranked = sorted(island, key=lambda m: (m.fitness, m.record_id))
    take = min(count, len(ranked))
    chosen: list[_Member] = []
    available = list(ranked)
    while len(chosen) < take:
        weights = [1.0 / (rank + 1) for rank in range(len(available))]
        total = sum(weights)
        u = rng.random() * total
        acc = 0.0
        pick = len(available) - 1
        for idx, weight in enumerate(weights):
            acc += weight
            if u < acc:
                pick = idx
                break
        chosen.append(available.pop(pick))
    chosen.sort(key=lambda m: (-m.fitness, -m.record_id))
    return chosen


def _reset_worst_islands(islands: list[list[_Member]]) -> None:
    if len(islands) < 2:
        return
    bests = [min(isl, key=lambda m: (m.fitness, m.record_id)) for isl in islands]
    global_best = min(bests, key=lambda m: (m.fitness, m.record_id))
    order = sorted(range(len(islands)), key=lambda i: (bests[i].fitness, bests[i].record_id))
    for island_idx in order[len(islands) - len(islands) // 2 :]:
        islands[island_idx] = [global_best]


@dataclass
class RandomSamplingResult:
    log: ConvergenceLog
    feasible_count: int
    generator_calls: int


class RandomSamplingStalled(RuntimeError):
    """Feasibility rate collapsed; carries diagnostics."""

    def __init__(self, message: str, result: RandomSamplingResult):
        super().__init__(message)
        self.result = result


def run_random_sampling(
    task: TaskSpec,
    generator: TextGenerator,
    n_feasible: int,
    db: AlgorithmStore,
    config: SearchConfig | None = None,
    instance_path: str | Path | None = None,
    work_dir: str | Path | None = None,
) -> RandomSamplingResult:
    """Repeatedly sample with the fixed prompt until enough feasible candidates.

    Feasibility is counted per occurrence, before deduplication: a repeated
    known-valid source counts again without a fresh sandbox run.
    """
    if n_feasible == 0:
        return RandomSamplingResult(ConvergenceLog(), 0, 0)
    base = config or SearchConfig(method="random_sampling")
    # novel-source evaluations are uncapped here: the stop rule is the feasible count
    run_config = SearchConfig(
        method="random_sampling",
        eval_budget=max(base.eval_budget, n_feasible * _STALL_CALL_FACTOR),
        rng_seed=base.rng_seed,
        timeout=base.timeout,
        validate=base.validate,
    )
    with _instances(task, instance_path, work_dir) as path:
        driver = _make_driver(task, generator, run_config, db, path, n_feasible)
        prompt = build_prompt(task)
        feasible = 0
        window: list[bool] = []
        while feasible < n_feasible:
            code = driver.call_generator(prompt)
            got_feasible = False
            if code is not None:
                existing_id = driver.db.find_by_source(task.task_id, code)
                if existing_id is not None:
                    got_feasible = driver.db.get(existing_id).valid
                else:
                    got_feasible = driver.evaluate(code, origin="generated") is not None
            if got_feasible:
                feasible += 1
            window.append(got_feasible)
            if len(window) > _WINDOW:
                window.pop(0)
            if len(window) == _WINDOW and sum(window) / _WINDOW < _MIN_FEASIBLE_RATE:
                result = RandomSamplingResult(driver.log, feasible, driver.generator_calls)
                raise RandomSamplingStalled(
                    f"feasibility rate below {_MIN_FEASIBLE_RATE:.1%} over the last "
                    f"{_WINDOW} calls ({feasible}/{n_feasible} feasible so far)",
                    result,
                )
        return RandomSamplingResult(driver.log, feasible, driver.generator_calls)


@dataclass(frozen=True)
class TopkSummary:
    gaps: list[float]
    mean: float
    std: float


def topk_summary(db: AlgorithmStore, task_id: str, k: int) -> TopkSummary:
    """The k best gaps (ascending) with their mean and population std."""
    ranked = db.ranked(task_id)
    if k < 1 or k > len(ranked):
        raise ValueError(f"k must be in 1..{len(ranked)}, got {k}")
    gaps = [db.get(i).fitness for i in ranked[:k]]
    mean = sum(gaps) / k
    std = (sum((g - mean) ** 2 for g in gaps) / k) ** 0.5
    return TopkSummary(gaps, mean, std)


# --- instance-file lifecycle ---


class _instances:
    """Materializes the task's instance file, creating a temp one if needed."""

    def __init__(self, task: TaskSpec, instance_path, work_dir):
        self.task = task
        self.instance_path = instance_path
        self.work_dir = work_dir
        self._tmp = None

    def __enter__(self) -> Path:
        if self.instance_path is not None:
            return Path(self.instance_path)
        if self.work_dir is not None:
            path = Path(self.work_dir) / f"{self.task.task_id}-instances.jsonl"
            write_instances(self.task, path)
            return path
        self._tmp = tempfile.TemporaryDirectory(prefix="evopref-search-")
        path = Path(self._tmp.name) / "instances.jsonl"
        write_instances(self.task, path)
        return path

    def __exit__(self, *exc) -> None:
        if self._tmp is not None:
            self._tmp.cleanup()
