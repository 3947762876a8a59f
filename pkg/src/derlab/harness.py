"""Experiment configuration, seeded runs, sweeps and result export.

Config files are flat ``key = value`` lines grouped under ``[section]``
headers; ``#`` starts a comment.  Sections:

``[defaults]`` (required)
    Any `AgentConfig` field.  Tuples are comma-separated, ``none`` clears
    an optional value.
``[env]``
    ``name`` is one of `ENVIRONMENTS` (or ``file`` with a ``path`` to an
    MDP in the plain-text format); the remaining keys are constructor
    arguments.  The discount always comes from ``[defaults] gamma``.
``[agent]``
    ``variant`` (one of `VARIANTS`) and ``variants`` (the list used by
    the AC ablation).
``[experiment]``
    ``seeds``, ``total_steps``, ``eval_every``, ``eval_episodes``,
    ``epsilons`` and ``output_dir``.

Setting the environment variable ``DERLAB_SEED`` to an integer k
replaces the seed list by k, k+1, ... (same length) for every run.
"""

from __future__ import annotations

import csv
import io
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from scipy.stats import spearmanr

from . import mdp as M
from .agents.config import AgentConfig
from .agents.runner import AC_VARIANTS, VARIANTS, RunRecord, run_agent
from .errors import ConfigError, MissingSection, ParseError, UnknownKey

SEED_ENV = "DERLAB_SEED"

ENVIRONMENTS = {
    # name: (constructor, default keyword arguments)
    "chain": (M.make_chain, {"n": 5, "slip": 0.0}),
    "risky_chain": (M.make_chain, {"n": 5, "slip": 0.1}),
    "slip_chain": (M.make_chain, {"n": 10, "slip": 0.1}),
    "cliff": (M.make_cliff_grid, {"width": 4, "height": 3, "fall_penalty": -1.0}),
    "risky_bandit": (M.make_risky_bandit, {"mean": 1.0, "spread": 1.0}),
    "file": (None, {"path": ""}),
}

_AGENT_KEYS = ("variant", "variants")
_EXPERIMENT_DEFAULTS = {
    "seeds": (0, 1, 2, 3, 4),
    "total_steps": 3000,
    "eval_every": 500,
    "eval_episodes": 10,
    "epsilons": (0.0, 0.25, 0.5, 0.75, 1.0),
    "output_dir": "results",
}


@dataclass(frozen=True)
class ExperimentConfig:
    agent: AgentConfig = field(default_factory=AgentConfig)
    env: str = "chain"
    env_params: tuple = ()  # sorted (key, value) constructor arguments over the defaults
    variant: str = "fqi"
    variants: tuple = AC_VARIANTS
    seeds: tuple = _EXPERIMENT_DEFAULTS["seeds"]
    total_steps: int = _EXPERIMENT_DEFAULTS["total_steps"]
    eval_every: int = _EXPERIMENT_DEFAULTS["eval_every"]
    eval_episodes: int = _EXPERIMENT_DEFAULTS["eval_episodes"]
    epsilons: tuple = _EXPERIMENT_DEFAULTS["epsilons"]
    output_dir: str = _EXPERIMENT_DEFAULTS["output_dir"]

    def __post_init__(self):
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown environment {self.env!r}; choose from {sorted(ENVIRONMENTS)}")
        for v in (self.variant, *self.variants):
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; choose from {VARIANTS}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.total_steps < 0 or self.eval_every < 0 or self.eval_episodes < 1:
            raise ConfigError("total_steps and eval_every must be >= 0, eval_episodes >= 1")

    def env_kwargs(self) -> dict:
        kwargs = dict(ENVIRONMENTS[self.env][1])
        kwargs.update(dict(self.env_params))
        return kwargs

    def make_env(self) -> M.TabularMDP:
        kwargs = self.env_kwargs()
        if self.env == "file":
            text = Path(kwargs["path"]).read_text()
            env = M.from_text(text, name=Path(kwargs["path"]).stem)
            return replace(env, gamma=self.agent.gamma)
        return ENVIRONMENTS[self.env][0](gamma=self.agent.gamma, **kwargs)

    def effective_seeds(self) -> tuple:
        override = os.environ.get(SEED_ENV)
        if override is None or override.strip() == "":
            return tuple(self.seeds)
        try:
            base = int(override)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {override!r}") from None
        return tuple(base + i for i in range(len(self.seeds)))


# --------------------------------------------------------------------------
# config text format


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(text: str, like):
    t = text.strip()
    if isinstance(like, bool):
        if t.lower() in ("true", "yes", "1"):
            return True
        if t.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {t!r}")
    if isinstance(like, int):
        return int(t)
    if isinstance(like, float):
        return float(t)
    return t


def _parse_agent_value(name: str, text: str):
    default = getattr(AgentConfig(), name)
    t = text.strip()
    if name in ("v_min", "v_max", "polyak_tau"):
        return None if t.lower() == "none" else float(t)
    if isinstance(default, tuple):
        return tuple(int(x) for x in t.split(",") if x.strip())
    return _parse_scalar(t, default)


def _parse_env_value(name: str, env: str, text: str):
    defaults = ENVIRONMENTS.get(env, (None, {}))[1]
    if name not in defaults:
        raise UnknownKey(f"environment {env!r} has no parameter {name!r}")
    return _parse_scalar(text, defaults[name])


def _parse_experiment_value(name: str, text: str):
    default = _EXPERIMENT_DEFAULTS[name]
    if name == "seeds":
        return tuple(int(x) for x in text.split(",") if x.strip())
    if name == "epsilons":
        return tuple(float(x) for x in text.split(",") if x.strip())
    return _parse_scalar(text, default)


def parse_config(text: str) -> ExperimentConfig:
    sections: dict[str, list] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"malformed section header {raw.strip()!r}", lineno)
            current = line[1:-1].strip()
            if current not in ("defaults", "env", "agent", "experiment"):
                raise UnknownKey(f"line {lineno}: unknown section [{current}]")
            if current in sections:
                raise ParseError(f"section [{current}] appears twice", lineno)
            sections[current] = []
            continue
        if current is None:
            raise ParseError("key outside of any section", lineno)
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError("empty key", lineno)
        sections[current].append((key, value, lineno))
    if "defaults" not in sections:
        raise MissingSection("config must contain a [defaults] section")

    def checked(items, allowed, section):
        seen = {}
        for key, value, lineno in items:
            if key not in allowed:
                raise UnknownKey(f"line {lineno}: unknown key {key!r} in [{section}]")
            if key in seen:
                raise ParseError(f"duplicate key {key!r}", lineno)
            seen[key] = (value, lineno)
        return seen

    agent = AgentConfig()
    for key, (value, lineno) in checked(sections["defaults"], AgentConfig.field_names(), "defaults").items():
        try:
            agent = agent.replace(**{key: _parse_agent_value(key, value)})
        except (ValueError, TypeError) as exc:
            raise ParseError(f"{key}: {exc}", lineno) from None

    env_items = checked(sections.get("env", []), ["name", *{k for _, d in ENVIRONMENTS.values() for k in d}], "env")
    env = env_items.pop("name", ("chain", 0))[0]
    if env not in ENVIRONMENTS:
        raise ParseError(f"unknown environment {env!r}", env_items.get("name", (None, None))[1])
    params = dict(ENVIRONMENTS[env][1])
    for key, (value, lineno) in env_items.items():
        try:
            params[key] = _parse_env_value(key, env, value)
        except UnknownKey as exc:
            raise UnknownKey(f"line {lineno}: {exc}") from None
        except ValueError as exc:
            raise ParseError(f"{key}: {exc}", lineno) from None

    kwargs = {}
    for key, (value, lineno) in checked(sections.get("agent", []), _AGENT_KEYS, "agent").items():
        parsed = tuple(v.strip() for v in value.split(",") if v.strip()) if key == "variants" else value
        for v in (parsed if key == "variants" else (parsed,)):
            if v not in VARIANTS:
                raise ParseError(f"unknown variant {v!r}", lineno)
        kwargs[key] = parsed
    for key, (value, lineno) in checked(sections.get("experiment", []), _EXPERIMENT_DEFAULTS, "experiment").items():
        try:
            kwargs[key] = _parse_experiment_value(key, value)
        except ValueError as exc:
            raise ParseError(f"{key}: {exc}", lineno) from None
        if key == "seeds" and not kwargs[key]:
            raise ParseError("seeds must be nonempty", lineno)
        if key in ("total_steps", "eval_every") and kwargs[key] < 0:
            raise ParseError(f"{key} must be nonnegative", lineno)
        if key == "eval_episodes" and kwargs[key] < 1:
            raise ParseError("eval_episodes must be positive", lineno)
        if key == "epsilons" and any(not 0.0 <= e <= 1.0 for e in kwargs[key]):
            raise ParseError("epsilons must lie in [0, 1]", lineno)
    return ExperimentConfig(agent=agent, env=env, env_params=tuple(sorted(params.items())), **kwargs)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def dump(config: ExperimentConfig) -> str:
    """Canonical text form: every key of every section, in a fixed order."""
    lines = ["[defaults]"]
    for name in AgentConfig.field_names():
        lines.append(f"{name} = {_format_value(getattr(config.agent, name))}")
    lines += ["", "[env]", f"name = {config.env}"]
    for key, value in sorted(config.env_kwargs().items()):
        lines.append(f"{key} = {_format_value(value)}")
    lines += ["", "[agent]", f"variant = {config.variant}", f"variants = {_format_value(config.variants)}"]
    lines += ["", "[experiment]"]
    for key in _EXPERIMENT_DEFAULTS:
        lines.append(f"{key} = {_format_value(getattr(config, key))}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# running


@dataclass
class RunResult:
    variant: str
    seed: int
    curve: list  # (step, return_mean, return_std), steps strictly increasing
    episodes: list  # (step, episode, return)
    final_policy: list
    metadata: dict

    @property
    def auc(self) -> float:
        """Mean evaluation return over the curve (nan for an empty curve)."""
        if not self.curve:
            return float("nan")
        return float(np.mean([c[1] for c in self.curve]))

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "return_mean", "return_std", "seed", "variant"])
        for step, mean, std in self.curve:
            w.writerow([step, format(mean, ".17g"), format(std, ".17g"), self.seed, self.variant])
        return buf.getvalue()

    def episodes_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "episode", "return", "seed", "variant"])
        for step, ep, ret in self.episodes:
            w.writerow([step, ep, format(ret, ".17g"), self.seed, self.variant])
        return buf.getvalue()

    def metadata_text(self) -> str:
        # wall time is left out so that repeated runs give identical files
        skip = {"wall_time"}
        return "".join(f"{k} = {v}\n" for k, v in self.metadata.items() if k not in skip)


def _to_result(record: RunRecord, label: str, wall: float) -> RunResult:
    meta = {
        "variant": label,
        "seed": record.seed,
        "clipped_decompositions": record.stats.clipped_decompositions,
        "updates": record.stats.updates,
        "sync_events": record.sync_events,
        "final_policy": " ".join(map(str, record.final_policy)),
        "wall_time": wall,
    }
    meta.update({f"config.{k}": _format_value(v) for k, v in record.config.as_dict().items()})
    return RunResult(label, record.seed, list(record.curve), list(record.episodes), list(record.final_policy), meta)


def _run_one(args):
    config, variant, label, agent_config, seed = args
    start = time.perf_counter()
    record = run_agent(config.make_env(), variant, agent_config, seed, config.total_steps,
                       config.eval_every, config.eval_episodes)
    return _to_result(record, label, time.perf_counter() - start)


def _fan_out(jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def run_experiment(config: ExperimentConfig, variant: str | None = None, workers: int = 1) -> list[RunResult]:
    """One run per seed of ``variant`` (default: the configured one)."""
    variant = config.variant if variant is None else variant
    jobs = [(config, variant, variant, config.agent, s) for s in config.effective_seeds()]
    return _fan_out(jobs, workers)


@dataclass
class SweepTable:
    epsilons: tuple
    seeds: tuple
    auc: np.ndarray  # (len(epsilons), len(seeds))
    results: list = field(default_factory=list)

    @property
    def mean_auc(self) -> np.ndarray:
        return self.auc.mean(axis=1)

    @property
    def spearman(self) -> float:
        """Rank correlation between epsilon and mean AUC (nan if either is constant)."""
        if len(self.epsilons) < 2 or np.ptp(self.mean_auc) == 0 or np.ptp(self.epsilons) == 0:
            return float("nan")
        return float(spearmanr(self.epsilons, self.mean_auc).statistic)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "seed", "auc"])
        for i, e in enumerate(self.epsilons):
            for j, s in enumerate(self.seeds):
                w.writerow([_format_value(float(e)), s, format(float(self.auc[i, j]), ".17g")])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"{'epsilon':>8} {'mean_auc':>10} {'std_auc':>10}"]
        for e, row in zip(self.epsilons, self.auc):
            lines.append(f"{e:>8.3f} {row.mean():>10.4f} {row.std():>10.4f}")
        lines.append(f"spearman(epsilon, mean_auc) = {self.spearman:.4f}")
        return "\n".join(lines) + "\n"


def sweep_label(epsilon: float) -> str:
    return f"fzi-eps{epsilon:g}"


def sweep_epsilon(config: ExperimentConfig, epsilons=None, workers: int = 1) -> SweepTable:
    """Categorical FZI with the mixed target (1 - eps) delta_m + eps * target, per eps and seed."""
    epsilons = tuple(config.epsilons if epsilons is None else epsilons)
    if not epsilons:
        raise ConfigError("epsilon list must be nonempty")
    if any(not 0.0 <= e <= 1.0 for e in epsilons):
        raise ConfigError("epsilons must lie in [0, 1]")
    seeds = config.effective_seeds()
    jobs = [
        (config, "fzi", sweep_label(e), config.agent.replace(fzi_mode="ablation_mix", epsilon=e), s)
        for e in epsilons for s in seeds
    ]
    results = _fan_out(jobs, workers)
    auc = np.array([r.auc for r in results]).reshape(len(epsilons), len(seeds))
    return SweepTable(epsilons, seeds, auc, results)


def ablate_ac(config: ExperimentConfig, variants=None, workers: int = 1) -> dict:
    """Every AC-family variant over the configured seeds: variant -> list of RunResult."""
    variants = tuple(config.variants if variants is None else variants)
    seeds = config.effective_seeds()
    jobs = [(config, v, v, config.agent, s) for v in variants for s in seeds]
    flat = _fan_out(jobs, workers)
    return {v: flat[i * len(seeds):(i + 1) * len(seeds)] for i, v in enumerate(variants)}


# --------------------------------------------------------------------------
# export


def _stem(result: RunResult) -> str:
    return f"{result.variant}_seed{result.seed}"


def write_runs(results, out_dir) -> list[Path]:
    """Curve CSV, episode CSV and metadata sidecar for every run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for r in results:
        for suffix, text in (("curve.csv", r.curve_csv()), ("episodes.csv", r.episodes_csv()),
                             ("meta.txt", r.metadata_text())):
            path = out / f"{_stem(r)}.{suffix}"
            path.write_text(text)
            written.append(path)
    return written


def load_curves(directory) -> list[RunResult]:
    """Read every ``*.curve.csv`` in ``directory`` back into results (curves only)."""
    results = []
    for path in sorted(Path(directory).glob("*.curve.csv")):
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            variant, _, seed = path.name[: -len(".curve.csv")].rpartition("_seed")
            results.append(RunResult(variant, int(seed), [], [], [], {}))
            continue
        curve = [(int(r["step"]), float(r["return_mean"]), float(r["return_std"])) for r in rows]
        results.append(RunResult(rows[0]["variant"], int(rows[0]["seed"]), curve, [], [], {}))
    return results


def smooth(values, window: int = 5) -> np.ndarray:
    """Trailing moving average (shorter window at the start); plots only."""
    v = np.asarray(values, dtype=float)
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def aggregate(results) -> dict:
    """variant -> (steps, mean over seeds, std over seeds) of the evaluation curves."""
    groups: dict[str, list] = {}
    for r in results:
        groups.setdefault(r.variant, []).append(r)
    out = {}
    for variant, runs in groups.items():
        steps = sorted({c[0] for r in runs for c in r.curve})
        table = np.full((len(runs), len(steps)), np.nan)
        col = {s: i for i, s in enumerate(steps)}
        for i, r in enumerate(runs):
            for step, mean, _ in r.curve:
                table[i, col[step]] = mean
        out[variant] = (np.array(steps), np.nanmean(table, axis=0), np.nanstd(table, axis=0))
    return out


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def render_svg(results, title: str = "evaluation return", window: int = 5, width: int = 640, height: int = 400) -> str:
    """Static SVG: one polyline per variant (smoothed mean) over a mean +/- std band."""
    data = {v: d for v, d in aggregate(results).items() if d[0].size}
    left, right, top, bottom = 60, 150, 30, 40
    pw, ph = width - left - right, height - top - bottom
    all_steps = np.concatenate([d[0] for d in data.values()]) if data else np.array([0.0, 1.0])
    lows = [smooth(m - s, window) for _, m, s in data.values()]
    highs = [smooth(m + s, window) for _, m, s in data.values()]
    y0 = min([x.min() for x in lows], default=0.0)
    y1 = max([x.max() for x in highs], default=1.0)
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    x0, x1 = float(all_steps.min()), float(all_steps.max())
    if x1 == x0:
        x1 = x0 + 1.0

    def sx(x):
        return left + (np.asarray(x, dtype=float) - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (np.asarray(y, dtype=float) - y0) / (y1 - y0) * ph

    def pts(xs, ys):
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx(xs), sy(ys)))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left}" y="{top - 10}" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{left}" y="{height - 10}" font-family="sans-serif" font-size="11">{x0:g}</text>',
        f'<text x="{left + pw}" y="{height - 10}" font-family="sans-serif" font-size="11" text-anchor="end">{x1:g}</text>',
        f'<text x="{left - 5}" y="{top + ph}" font-family="sans-serif" font-size="11" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{left - 5}" y="{top + 10}" font-family="sans-serif" font-size="11" text-anchor="end">{y1:.3g}</text>',
    ]
    for k, (variant, (steps, mean, std)) in enumerate(sorted(data.items())):
        color = _PALETTE[k % len(_PALETTE)]
        lo, hi, mid = smooth(mean - std, window), smooth(mean + std, window), smooth(mean, window)
        band = pts(np.concatenate([steps, steps[::-1]]), np.concatenate([hi, lo[::-1]]))
        out.append(f'<polygon points="{band}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        out.append(f'<polyline points="{pts(steps, mid)}" fill="none" stroke="{color}" stroke-width="2">'
                   f'<title>{escape(variant)}</title></polyline>')
        ly = top + 15 + 18 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}" font-family="sans-serif" font-size="11">{escape(variant)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_results(results, out_dir, fmt: str = "csv", title: str = "evaluation return") -> list[Path]:
    """Write per-run CSVs (``fmt="csv"``) or one SVG plot (``fmt="svg"``)."""
    results = list(results)
    if not results:
        raise ValueError("nothing to export")
    if fmt == "csv":
        return write_runs(results, out_dir)
    if fmt == "svg":
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "curves.svg"
        path.write_text(render_svg(results, title))
        return [path]
    raise ValueError(f"unknown export format {fmt!r}")
