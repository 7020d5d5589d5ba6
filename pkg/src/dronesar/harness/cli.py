"""Command front end.

Every knob a command reads lives on its flags or in a JSON config file
(flags win over the file, the file wins over built-in defaults), so a rerun
with the same inputs, seed, and config writes the same artifacts.

Exit codes: 0 success, 1 command failure, 2 usage error, 3 input/output
failure, 4 quality gate failure.
"""
from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import Optional

import click
import numpy as np

from dronesar.advisor import Advisor, param_step_sizes
from dronesar.forest import ForestConfig
from dronesar.harness.pipeline import (
    CorpusConfig,
    QAGateFailed,
    RewardBundle,
    build_corpus,
    extend_demos,
    run_pair,
    train_bundle,
)
from dronesar.operators import ScriptedOperator, build_operator, estimate_profile
from dronesar.planner import EvolveConfig, PlannerInstance, evolve, instance_from_state, objective
from dronesar.qa import quality_gate
from dronesar.reward import (
    NoCandidatePasses,
    variant_preference,
    variant_truth_means,
    weight_search,
)
from dronesar.scenarios import Scenario, make_scenario
from dronesar.session import initial_state, run_mission
from dronesar.trajgen import PerturbConfig, generate_cp_variants
from dronesar.trajlog import load_corpus
from dronesar.world import ChangeParams, Composite

EXIT_IO = 3
EXIT_QA = 4


def _fail_io(msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(EXIT_IO)


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        _fail_io(str(e))
    except json.JSONDecodeError as e:
        _fail_io(f"{path}: {e}")


def _settings(defaults: dict, config_path: Optional[str], **flags) -> dict:
    out = dict(defaults)
    if config_path is not None:
        doc = _read_json(config_path)
        unknown = sorted(set(doc) - set(defaults))
        if unknown:
            _fail_io(f"{config_path}: unknown keys: {', '.join(unknown)}")
        out.update(doc)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(out: str) -> Path:
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_demos(directory: str):
    try:
        demos = load_corpus(directory)
    except OSError as e:
        _fail_io(str(e))
    except (KeyError, ValueError) as e:
        _fail_io(f"{directory}: {e}")
    if not demos:
        _fail_io(f"no trajectory logs in {directory}")
    return demos


def _load_bundle(directory: str) -> RewardBundle:
    try:
        return RewardBundle.load(directory)
    except OSError as e:
        _fail_io(str(e))
    except (KeyError, ValueError) as e:
        _fail_io(f"{directory}: {e}")


def _scenario_or_fail(spec: str, seed: int) -> Scenario:
    try:
        return make_scenario(spec, seed)
    except OSError as e:
        _fail_io(str(e))
    except (KeyError, ValueError) as e:
        _fail_io(f"scenario {spec!r}: {e}")


@click.group()
def main():
    """Mission simulator, advising pipeline, and evaluation commands."""


# ---------------------------------------------------------------- simulate


@main.command()
@click.option("--scenario", default=None, help="Builder name or scenario JSON path [default: default].")
@click.option("--operator", default=None, help="Catalog operator name [default: by_the_book].")
@click.option("--seed", type=int, default=None, help="Run seed [default: 0].")
@click.option("--until", type=float, default=None, help="Stop after this many sim seconds.")
@click.option("--config", "config_path", default=None, help="JSON file overriding any option.")
@click.option("--out", default=None, help="Output directory [default: out].")
def simulate(scenario, operator, seed, until, config_path, out):
    """Run one scripted mission and write its demonstration log."""
    s = _settings(
        {"scenario": "default", "operator": "by_the_book", "seed": 0, "until": None, "out": "out"},
        config_path,
        scenario=scenario, operator=operator, seed=seed, until=until, out=out,
    )
    scn = _scenario_or_fail(s["scenario"], s["seed"])
    try:
        op = build_operator(s["operator"])
    except KeyError:
        raise click.UsageError(f"unknown operator {s['operator']!r}")
    traj = run_mission(scn, s["seed"], op, until=s["until"]).trajectory
    path = _out_dir(s["out"]) / f"sim_{Path(s['scenario']).stem}_{s['operator']}_{s['seed']:04d}.jsonl"
    traj.save(path)
    sm = traj.summary
    click.echo(f"targets found    {sm['targets_found']} / {sm['total_targets']}")
    click.echo(f"area scanned     {100.0 * sm['coverage']:.1f}%")
    click.echo(f"false positives  {sm['false_positives']}")
    click.echo(f"log              {path}")


# ---------------------------------------------------------------- pipeline


def _write_qa(out_dir: Path, report) -> None:
    _write_json(out_dir / "qa_report.json", report.to_dict())
    (out_dir / "qa_report.txt").write_text(report.to_text() + "\n")


@main.command()
@click.option("--demos", "demos_dir", required=True, help="Directory of demonstration logs.")
@click.option("--seed", type=int, default=None, help="Pipeline seed [default: 0].")
@click.option("--force", is_flag=True, help="Train even if the quality gate fails.")
@click.option("--config", "config_path", default=None, help="JSON file overriding any option.")
@click.option("--out", default=None, help="Output directory [default: out].")
def pipeline(demos_dir, seed, force, config_path, out):
    """Extend demos with synthetics, gate the corpus, fit the reward model."""
    s = _settings(
        {
            "seed": 0,
            "synthetics_per_demo": 6,
            "variant_delta": 0.15,
            "variants_per_label": 10,
            "stride": 1,
            "trees": 60,
            "out": "out",
        },
        config_path,
        seed=seed, out=out,
    )
    demos = _load_demos(demos_dir)
    corpus = extend_demos(
        demos,
        synthetics_per_demo=s["synthetics_per_demo"],
        variant_delta=s["variant_delta"],
        variants_per_label=s["variants_per_label"],
    )
    click.echo(f"corpus: {json.dumps(corpus.counts(), sort_keys=True)}")
    out_dir = _out_dir(s["out"])

    report = quality_gate(corpus.demos, corpus.synthetics, seed=s["seed"])
    _write_qa(out_dir, report)
    click.echo(report.to_text())
    if not report.passed:
        if not force:
            err = QAGateFailed(report)
            click.echo(f"{err}: refusing to train (--force overrides)", err=True)
            sys.exit(EXIT_QA)
        click.echo("quality gate failed; training anyway under --force", err=True)

    try:
        search = weight_search(
            corpus.base + corpus.variants,
            corpus.variants,
            forest_config=ForestConfig(n_trees=s["trees"], seed=s["seed"]),
            seed=s["seed"],
            stride=s["stride"],
        )
    except NoCandidatePasses as e:
        raise click.ClickException(str(e))
    bundle = RewardBundle(
        model=search.model,
        steps=param_step_sizes(corpus.base),
        profile=estimate_profile(demos[0])[0],
        weights=search.weights,
        mae=search.mae,
        label_range=search.label_range,
        meta={"corpus": corpus.counts(), "qa_passed": report.passed, "seed": s["seed"]},
    )
    bundle.save(out_dir)
    _write_json(out_dir / "search.json", search.to_dict())
    model_path = out_dir / "model.npz"
    click.echo(f"weights       w0={search.weights.w0} psi={list(search.weights.psi)}")
    click.echo(f"held-out mae  {search.mae:.3f} (label range {search.label_range:.3f})")
    click.echo(f"sanity        {search.sanity:.2f}")
    click.echo(f"model         {model_path} sha256={_sha256(model_path)[:16]}")


# ------------------------------------------------------------ eval-ranking


def _threshold_shift(action, state) -> float:
    """Net lc+hc movement an action would apply, against current params."""
    if isinstance(action, Composite):
        return sum(_threshold_shift(p, state) for p in action.parts)
    if not isinstance(action, ChangeParams):
        return 0.0
    cur = state.params[action.level]
    shift = 0.0
    for name in ("lc", "hc"):
        new = getattr(action, name)
        if new is not None:
            shift += new - getattr(cur, name)
    return shift


def _top_direction(advice, state) -> tuple[str, Optional[dict]]:
    if not advice.entries:
        return "none", None
    top = advice.entries[0]
    shift = _threshold_shift(top.action, state)
    direction = "none" if shift == 0.0 else ("increase" if shift > 0.0 else "decrease")
    return direction, {"value": round(top.value, 3), "rationale": top.rationale}


@main.command("eval-ranking")
@click.option("--demos", "demos_dir", required=True, help="Directory of demonstration logs.")
@click.option("--model", "model_dir", required=True, help="Reward bundle directory.")
@click.option("--seed", type=int, default=None, help="Variant generation seed [default: 0].")
@click.option("--config", "config_path", default=None, help="JSON file overriding any option.")
@click.option("--out", default=None, help="Output directory [default: out].")
def eval_ranking(demos_dir, model_dir, seed, config_path, out):
    """Per-demo verdicts: does the model rank the threshold direction that
    actually finds more targets, and what does the advisor put on top?"""
    s = _settings(
        {"seed": 0, "per_label": 10, "variant_delta": 0.15, "advise_fraction": 0.5, "out": "out"},
        config_path,
        seed=seed, out=out,
    )
    bundle = _load_bundle(model_dir)
    demos = _load_demos(demos_dir)
    rows = []
    for i, demo in enumerate(demos):
        profile, _ = estimate_profile(demo)
        variants = generate_cp_variants(
            demo,
            profile,
            config=PerturbConfig(variant_delta=s["variant_delta"]),
            seed=s["seed"] + 1000 * i,
            per_label=s["per_label"],
        )
        truth = variant_truth_means(variants)
        truth_best = max(truth, key=truth.get)
        pref = variant_preference(bundle.model, variants)

        # replay the demo's own run to its midpoint and ask for advice there
        scn = Scenario.from_dict(demo.scenario)
        mid = run_mission(
            scn, demo.seed, build_operator(demo.operator),
            until=s["advise_fraction"] * demo.duration,
        )
        advice = Advisor(bundle.model, bundle.steps).advise(mid.state, now=mid.state.clock)
        direction, top = _top_direction(advice, mid.state)

        rows.append({
            "demo": f"{demo.operator}/{demo.seed}",
            "scenario": demo.scenario.get("name", "?"),
            "truth_means": {k: round(v, 3) for k, v in truth.items()},
            "truth_best": truth_best,
            "model_pref": pref,
            "model_agrees": pref == truth_best,
            "advisor_direction": direction,
            "advisor_top": top,
            "decrease_violation": direction == "decrease" and truth_best != "decrease",
        })
        click.echo(
            f"{rows[-1]['demo']:<24} truth {truth_best:<8} model {str(pref):<8} "
            f"advisor {direction:<8} {'VIOLATION' if rows[-1]['decrease_violation'] else ''}".rstrip()
        )
    summary = {
        "demos": len(rows),
        "model_agreements": sum(r["model_agrees"] for r in rows),
        "decrease_violations": sum(r["decrease_violation"] for r in rows),
    }
    out_dir = _out_dir(s["out"])
    _write_json(out_dir / "ranking_report.json", {"settings": s, "rows": rows, "summary": summary})
    click.echo(
        f"model agreed {summary['model_agreements']}/{summary['demos']}; "
        f"decrease violations {summary['decrease_violations']}"
    )


# -------------------------------------------------------- eval-malfunction


def _bin_label(lo: float, hi: Optional[float]) -> str:
    return f"{int(lo)}s" if hi is None else f"[{int(lo)},{int(hi)})s"


def _summarize_bin(label: str, delay: float, found: list[int]) -> dict:
    arr = np.asarray(found, dtype=float)
    se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return {
        "label": label,
        "delay_s": float(delay),
        "n": len(found),
        "mean_targets": round(float(arr.mean()), 3) if len(found) else 0.0,
        "se": round(se, 3),
        "targets": found,
    }


def _sweep_bins(s: dict) -> list[dict]:
    profile = build_operator(s["operator"]).profile
    bins = []
    for delay in s["delays"]:
        found = []
        for k in range(s["seeds"]):
            run_seed = s["seed"] + k
            scn = _scenario_or_fail(s["scenario"], run_seed)
            if not any(e.kind == "malfunction" for e in scn.schedule):
                return []
            op = ScriptedOperator(f"delay_{int(delay)}", profile, repair_delay=float(delay))
            found.append(run_mission(scn, run_seed, op).trajectory.summary["targets_found"])
        bins.append(_summarize_bin(_bin_label(delay, None), delay, found))
    return bins


def _bins_from_logs(trajs, edges: list[float]) -> list[dict]:
    """Measured delay from the first scheduled malfunction to the first
    handling action; runs without either are skipped."""
    edges = sorted(edges)
    collected: list[list[int]] = [[] for _ in edges]
    for tr in trajs:
        sched = sorted(
            e["time"] for e in tr.scenario.get("schedule", []) if e["kind"] == "malfunction"
        )
        handled = [r.t for r in tr.records if r.action_class == "handle_malfunction"]
        if not sched or not handled:
            continue
        delay = max(0.0, handled[0] - sched[0])
        idx = int(np.searchsorted(edges, delay, side="right")) - 1
        if idx >= 0:
            collected[idx].append(tr.summary["targets_found"])
    bins = []
    for i, found in enumerate(collected):
        if not found:
            continue
        hi = edges[i + 1] if i + 1 < len(edges) else None
        bins.append(_summarize_bin(_bin_label(edges[i], hi), edges[i], found))
    return bins


@main.command("eval-malfunction")
@click.option("--runs", "runs_dir", default=None, help="Bin existing logs instead of generating the sweep.")
@click.option("--seed", type=int, default=None, help="Base seed [default: 0].")
@click.option("--config", "config_path", default=None, help="JSON file overriding any option.")
@click.option("--out", default=None, help="Output directory [default: out].")
def eval_malfunction(runs_dir, seed, config_path, out):
    """Targets found as a function of malfunction handling delay."""
    s = _settings(
        {
            "scenario": "sweep",
            "operator": "by_the_book",
            "delays": [0.0, 60.0, 180.0, 300.0],
            "seeds": 20,
            "seed": 0,
            "out": "out",
        },
        config_path,
        seed=seed, out=out,
    )
    s["delays"] = [float(d) for d in s["delays"]]
    if runs_dir is not None:
        bins = _bins_from_logs(_load_demos(runs_dir), s["delays"])
    else:
        bins = _sweep_bins(s)
    out_dir = _out_dir(s["out"])
    _write_json(out_dir / "malfunction_report.json", {"settings": s, "bins": bins})
    if not bins:
        click.echo("no malfunction handling to bin")
        return
    click.echo(f"{'delay':<12}{'n':>4}  {'targets mean':>12}  {'se':>6}")
    for b in bins:
        click.echo(f"{b['label']:<12}{b['n']:>4}  {b['mean_targets']:>12.3f}  {b['se']:>6.3f}")
    means = [b["mean_targets"] for b in bins]
    inversions = sum(1 for a, b in zip(means, means[1:]) if b > a)
    click.echo(f"mean non-increasing with delay: {'yes' if inversions == 0 else f'no ({inversions} inversions)'}")
    from dronesar.harness import plots

    path = plots.delay_bars(bins, out_dir / "malfunction.png")
    click.echo(f"plot          {path}")


# ---------------------------------------------------------------------- ab


def _pair_row(pair: dict) -> dict:
    a, b = pair["agent"], pair["control"]
    return {
        "seed": pair["seed"],
        "targets_agent": a["targets_found"],
        "targets_baseline": b["targets_found"],
        "delta_targets": a["targets_found"] - b["targets_found"],
        "scanned_agent_pct": round(100.0 * a["coverage"], 2),
        "scanned_baseline_pct": round(100.0 * b["coverage"], 2),
        "fp_agent": a["false_positives"],
        "fp_baseline": b["false_positives"],
    }


def _sign_test(deltas: list[int]) -> dict:
    from scipy.stats import binomtest

    pos = sum(1 for d in deltas if d > 0)
    neg = sum(1 for d in deltas if d < 0)
    n = pos + neg
    p = float(binomtest(pos, n, alternative="greater").pvalue) if n else 1.0
    return {"positive": pos, "negative": neg, "zero": len(deltas) - n, "p_greater": round(p, 4)}


@main.command()
@click.option("--model", "model_dir", default=None, help="Existing reward bundle; default trains the built-in recipe.")
@click.option("--seeds", type=int, default=None, help="Number of paired seeds [default: 20].")
@click.option("--seed", type=int, default=None, help="First mission seed [default: 0].")
@click.option("--config", "config_path", default=None, help="JSON file overriding any option.")
@click.option("--out", default=None, help="Output directory [default: out].")
def ab(model_dir, seeds, seed, config_path, out):
    """Paired with/without-agent comparison over fresh mission seeds."""
    s = _settings(
        {
            "scenario": "clutter",
            "baseline": "by_the_book",
            "seeds": 20,
            "seed": 0,
            "config_min_value": 1.0,
            "recipe": CorpusConfig().to_dict(),
            "out": "out",
        },
        config_path,
        seeds=seeds, seed=seed, out=out,
    )
    out_dir = _out_dir(s["out"])
    if model_dir is not None:
        bundle = _load_bundle(model_dir)
    else:
        recipe = CorpusConfig.from_dict(s["recipe"])
        corpus = build_corpus(recipe)
        click.echo(f"advising corpus: {json.dumps(corpus.counts(), sort_keys=True)}")
        bundle = train_bundle(corpus, recipe)
        bundle.save(out_dir / "bundle")
        click.echo(f"reward model mae {bundle.mae:.2f} over label range {bundle.label_range:.2f}")

    rows = []
    for k in range(s["seeds"]):
        pair = run_pair(
            s["scenario"], s["seed"] + k, bundle,
            baseline=s["baseline"], config_min_value=s["config_min_value"],
        )
        row = _pair_row(pair)
        rows.append(row)
        click.echo(
            f"seed {row['seed']:>4}  agent {row['targets_agent']:>3}  "
            f"baseline {row['targets_baseline']:>3}  delta {row['delta_targets']:+d}"
        )

    deltas = [r["delta_targets"] for r in rows]
    arr = np.asarray(deltas, dtype=float)
    summary = {
        "pairs": len(rows),
        "mean_targets_agent": round(float(np.mean([r["targets_agent"] for r in rows])), 3),
        "mean_targets_baseline": round(float(np.mean([r["targets_baseline"] for r in rows])), 3),
        "mean_delta": round(float(arr.mean()), 3),
        "se_delta": round(float(arr.std(ddof=1) / np.sqrt(len(arr))), 3) if len(arr) > 1 else 0.0,
        "mean_scanned_agent_pct": round(float(np.mean([r["scanned_agent_pct"] for r in rows])), 2),
        "mean_scanned_baseline_pct": round(float(np.mean([r["scanned_baseline_pct"] for r in rows])), 2),
        "sign_test": _sign_test(deltas),
    }
    _write_json(out_dir / "ab_report.json", {"settings": s, "rows": rows, "summary": summary})
    from dronesar.harness import plots

    plots.paired_deltas(rows, out_dir / "ab_deltas.png")
    st = summary["sign_test"]
    click.echo(
        f"targets: agent {summary['mean_targets_agent']} vs baseline {summary['mean_targets_baseline']} "
        f"(delta {summary['mean_delta']:+.3f} se {summary['se_delta']})"
    )
    click.echo(
        f"sign test: +{st['positive']} / 0x{st['zero']} / -{st['negative']}, "
        f"p(agent<=baseline) {st['p_greater']}"
    )
    click.echo(f"report        {out_dir / 'ab_report.json'}")


# -------------------------------------------------------------------- plan


@main.command()
@click.option("--instance", "instance_path", default=None, help="Planner instance JSON; default derives one from --scenario.")
@click.option("--scenario", default=None, help="Builder name or path [default: default].")
@click.option("--generations", type=int, default=None, help="Evolution generations [default: 120].")
@click.option("--seed", type=int, default=None, help="Search seed [default: 0].")
@click.option("--config", "config_path", default=None, help="JSON file overriding any option.")
@click.option("--out", default=None, help="Output directory [default: out].")
def plan(instance_path, scenario, generations, seed, config_path, out):
    """Search drone schedules and report the first-detection distribution."""
    s = _settings(
        {"scenario": "default", "generations": 120, "n_pop": 24, "budget_s": None, "seed": 0, "out": "out"},
        config_path,
        scenario=scenario, generations=generations, seed=seed, out=out,
    )
    if instance_path is not None:
        try:
            inst = PlannerInstance.loads(Path(instance_path).read_text())
        except OSError as e:
            _fail_io(str(e))
        except (KeyError, ValueError) as e:
            _fail_io(f"{instance_path}: {e}")
    else:
        scn = _scenario_or_fail(s["scenario"], s["seed"])
        inst = instance_from_state(initial_state(scn))
    best = evolve(
        inst,
        EvolveConfig(
            n_pop=s["n_pop"], generations=s["generations"],
            budget_s=s["budget_s"], seed=s["seed"],
        ),
    )
    res = objective(best, inst)
    doc = {
        "instance": {"areas": inst.m, "drones": inst.n, "modes": inst.K, "horizon_ticks": inst.T},
        "paths": [[list(step) for step in path] for path in best.paths],
        "value": round(res.value, 6),
        "expected_time_ticks": None if not np.isfinite(res.expected_time) else round(res.expected_time, 3),
        "distribution": [round(float(x), 6) for x in res.dist],
    }
    out_dir = _out_dir(s["out"])
    _write_json(out_dir / "plan.json", doc)
    for j, path in enumerate(best.paths):
        legs = " -> ".join(f"a{a}/m{k}" for a, k in path) or "(idle)"
        click.echo(f"drone {j}: {legs}")
    click.echo(f"P(detect within horizon) {res.value:.4f}")
    click.echo(f"E[first detection]       {doc['expected_time_ticks']} ticks")
    click.echo(f"plan          {out_dir / 'plan.json'}")


# ------------------------------------------------------------------- serve


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--scenario", default=None, help="Default scenario for new sessions [default: default].")
@click.option("--seed", type=int, default=None, help="Default session seed [default: 0].")
@click.option("--speed", type=float, default=None, help="Sim seconds per wall second; 0 = lockstep [default: 1.0].")
@click.option("--bundle", "bundle_dir", default=None, help="Reward bundle enabling agent sessions.")
@click.option("--config", "config_path", default=None, help="JSON file overriding any option.")
@click.option("--out", default=None, help="Event log directory [default: out].")
def serve(host, port, scenario, seed, speed, bundle_dir, config_path, out):
    """Run the live session service."""
    s = _settings(
        {"scenario": "default", "seed": 0, "speed": 1.0, "bundle": None, "out": "out"},
        config_path,
        scenario=scenario, seed=seed, speed=speed, bundle=bundle_dir, out=out,
    )
    import uvicorn

    from dronesar.service import create_app

    app = create_app(
        default_scenario=s["scenario"],
        default_seed=s["seed"],
        default_speed=s["speed"],
        log_dir=s["out"],
        bundle_dir=s["bundle"],
    )
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
