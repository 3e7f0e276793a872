"""Unified command line: ingest, label, train, eval, metrics, fit, simulate,
serve and an interactive best-of-N chat loop."""

from __future__ import annotations

import dataclasses
import json
import sys

import click
import numpy as np

from . import convlog, labeler, metrics, reward, simverse
from .errors import EngageError
from .gateway import HTTPGenerator, ServiceConfig, resolve_config, serve
from .selector import StubGenerator, generate_and_select


def _fail(message: str, code: str = "error"):
    click.echo(json.dumps({"error": {"code": code, "message": message}}), err=True)
    sys.exit(1)


def _load_file_config(path: str | None) -> dict:
    if not path:
        return {}
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib

        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@click.group()
def cli():
    """Engagement-optimized response selection toolkit."""


@cli.command()
@click.argument("input_file", type=click.Path(exists=True))
@click.option("--rows-out", type=click.Path(), help="write extracted response rows here")
@click.option("--strict", is_flag=True, help="treat validation warnings as errors")
@click.option("--machine", "machine", is_flag=True, help="JSON output")
def ingest(input_file, rows_out, strict, machine):
    """Validate a conversation file and optionally extract response rows."""
    with open(input_file, encoding="utf-8") as fh:
        convs, report = convlog.parse_conversations(fh, strict=strict)
    n_rows = 0
    if rows_out:
        with open(rows_out, "w", encoding="utf-8") as out:
            for conv in convs:
                rows = convlog.extract_rows(conv)
                convlog.write_rows(rows, out)
                n_rows += len(rows)
    summary = {
        "conversations": len(convs),
        "rows": n_rows,
        "errors": [{"line": e.line_number, "reason": e.reason} for e in report.errors],
        "warnings": [{"line": w.line_number, "reason": w.reason}
                     for w in report.warnings],
    }
    if machine:
        click.echo(json.dumps(summary))
    else:
        click.echo(f"parsed {len(convs)} conversations, "
                   f"{len(report.errors)} errors, {len(report.warnings)} warnings")
        for issue in report.errors + report.warnings:
            click.echo(f"  line {issue.line_number}: [{issue.severity}] {issue.reason}")
    if report.errors:
        sys.exit(1)


@cli.command()
@click.argument("input_file", type=click.Path(exists=True))
@click.argument("output_file", type=click.Path())
@click.option("--strategy", required=True,
              type=click.Choice(["continuation", "retry", "star", "intersection"]))
@click.option("--k", type=int, default=None)
@click.option("--s", type=int, default=None)
@click.option("--machine", is_flag=True)
def label(input_file, output_file, strategy, k, s, machine):
    """Label a response-row file under one pseudo-label strategy."""
    try:
        strat = labeler.LabelStrategy(strategy, k=k, s=s)
    except ValueError as exc:
        _fail(str(exc), "bad_strategy")
    with open(input_file, encoding="utf-8") as fh:
        rows = list(convlog.read_rows(fh))
    labeled = labeler.apply_strategy(rows, strat)
    with open(output_file, "w", encoding="utf-8") as out:
        for lr in labeled:
            out.write(json.dumps(labeler.labeled_row_to_dict(lr)) + "\n")
    summary = {"rows_in": len(rows), "rows_out": len(labeled),
               "positive_rate": (sum(lr.label for lr in labeled) / len(labeled))
               if labeled else None}
    click.echo(json.dumps(summary) if machine
               else f"labeled {len(labeled)} of {len(rows)} rows "
                    f"({strat.describe()})")


def _read_labeled(path):
    with open(path, encoding="utf-8") as fh:
        return [labeler.labeled_row_from_dict(json.loads(line))
                for line in fh if line.strip()]


@cli.command()
@click.argument("input_file", type=click.Path(exists=True))
@click.argument("model_out", type=click.Path())
@click.option("--epochs", type=int, default=10)
@click.option("--learning-rate", type=float, default=0.5)
@click.option("--val-fraction", type=float, default=0.1)
@click.option("--l2", type=float, default=0.0)
@click.option("--context-budget", type=int, default=256)
@click.option("--hash-bits", type=int, default=20)
@click.option("--seed", type=int, default=0)
@click.option("--machine", is_flag=True)
def train(input_file, model_out, epochs, learning_rate, val_fraction, l2,
          context_budget, hash_bits, seed, machine):
    """Train the hashed-feature logistic scorer on a labeled-row file."""
    labeled = _read_labeled(input_file)
    cfg = reward.TrainConfig(
        featurizer=reward.FeaturizerConfig(hash_dimension=1 << hash_bits, seed=seed),
        epochs=epochs, learning_rate=learning_rate, val_fraction=val_fraction,
        seed=seed, l2=l2, context_budget=context_budget)
    try:
        model = reward.train(labeled, cfg)
    except EngageError as exc:
        _fail(str(exc), "training_failed")
    reward.save_model(model, model_out)
    meta = model.training_meta
    summary = {"chosen_epoch": meta["chosen_epoch"],
               "val_loss": meta["val_loss_by_epoch"][meta["chosen_epoch"] - 1],
               "n_train": meta["n_train"], "n_val": meta["n_val"],
               "model": str(model_out)}
    click.echo(json.dumps(summary) if machine else
               f"trained; epoch {summary['chosen_epoch']} "
               f"val loss {summary['val_loss']:.4f} -> {model_out}")


@cli.command("eval")
@click.argument("model_path", type=click.Path(exists=True))
@click.argument("input_file", type=click.Path(exists=True))
@click.option("--machine", is_flag=True)
def eval_cmd(model_path, input_file, machine):
    """Evaluate a saved scorer on a labeled-row file."""
    model = reward.load_model(model_path)
    labeled = _read_labeled(input_file)
    result = reward.evaluate(model, labeled)
    if machine:
        click.echo(json.dumps(result))
    else:
        auc = "undefined" if result["auc"] is None else f"{result['auc']:.4f}"
        click.echo(f"n={result['n']} accuracy={result['accuracy']:.4f} "
                   f"auc={auc} log_loss={result['log_loss']:.4f}")


@cli.command("metrics")
@click.argument("input_file", type=click.Path(exists=True))
@click.option("--cap", type=int, default=100, help="MCL length cap; 0 disables")
@click.option("--star-threshold", "star_s", type=int, multiple=True,
              default=(2, 3, 4))
@click.option("--seed", type=int, default=0)
@click.option("--bootstrap", type=int, default=1000)
def metrics_cmd(input_file, cap, star_s, seed, bootstrap):
    """Emit one JSON line per engagement metric for a conversation file."""
    with open(input_file, encoding="utf-8") as fh:
        convs, report = convlog.parse_conversations(fh)
    if not convs:
        _fail("no valid conversations", "no_samples")
    rng = np.random.default_rng(seed)

    def emit(name, mv, **params):
        click.echo(json.dumps({"name": name, "value": mv.value,
                               "stderr": mv.stderr, "n": mv.n, **params}))

    emit("mcl", metrics.mcl(convs, cap=cap or None, rng=rng, n_boot=bootstrap),
         cap=cap or None)
    emit("retry_rate", metrics.retry_rate(convs, rng=rng, n_boot=bootstrap))
    for s in star_s:
        try:
            emit(f"star_rating_at_least_{s}", metrics.star_rating_at_least(convs, s),
                 s=s)
        except EngageError:
            pass  # no rated responses in this file


@cli.command()
@click.argument("kind", type=click.Choice(["log-linear", "additive", "powerlaw"]))
@click.argument("input_file", type=click.Path(exists=True))
@click.option("--x-min", type=int, default=10, help="tail cutoff (powerlaw)")
@click.option("--machine", is_flag=True)
def fit(kind, input_file, x_min, machine):
    """Regression fits over a JSONL (or one-number-per-line) input file."""
    with open(input_file, encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    try:
        if kind == "log-linear":
            records = [json.loads(line) for line in lines]
            points = [(r["x"], r["y"]) for r in records]
            weights = ([1.0 / r["sigma"] ** 2 for r in records]
                       if all("sigma" in r for r in records) else None)
            result = metrics.fit_log_linear(points, weights)
        elif kind == "additive":
            records = [json.loads(line) for line in lines]
            obs = [(bool(r["has_alt_model"]), bool(r["has_reward_model"]),
                    float(r["y"]), float(r["sigma"])) for r in records]
            result = metrics.fit_additive_improvement(obs)
        else:
            lengths = [int(line) for line in lines]
            result = metrics.fit_power_law_tail(lengths, x_min=x_min)
    except (EngageError, ValueError, KeyError) as exc:
        _fail(str(exc), "fit_failed")
    if machine:
        click.echo(json.dumps({"parameters": result.parameters,
                               "stderrs": result.parameter_stderrs,
                               "residual_norm": result.residual_norm}))
    else:
        parts = [f"{k}={v:.4g} (±{result.parameter_stderrs[k]:.3g})"
                 for k, v in result.parameters.items()]
        click.echo("  ".join(parts))


def _policy_from_dict(d: dict) -> simverse.Policy:
    d = dict(d)
    model_path = d.pop("model_path", None)
    trained = reward.load_model(model_path) if model_path else None
    return simverse.Policy(trained_model=trained, **d)


@cli.command()
@click.option("--scenario", required=True, type=click.Path(exists=True),
              help="TOML or JSON scenario: model, arms, population, horizon")
@click.option("--seed", type=int, default=None, help="override scenario seed")
@click.option("--logs-out", type=click.Path(),
              help="also write per-conversation logs in the conversation format")
@click.option("--machine", is_flag=True)
def simulate(scenario, seed, logs_out, machine):
    """Run a seeded A/B simulation and print the report."""
    cfg = _load_file_config(scenario)
    try:
        model = simverse.UserModel(**cfg.get("model", {}))
        arms = {name: _policy_from_dict(arm)
                for name, arm in cfg["arms"].items()}
        pop = simverse.Population(
            n_users=cfg["population"]["n_users"], model=model,
            heterogeneity_seed=cfg["population"].get("heterogeneity_seed", 0))
        report = simverse.run_ab(
            arms, cfg["baseline"], pop, cfg["horizon_days"],
            rng_seed=seed if seed is not None else cfg.get("seed", 0),
            n_boot=cfg.get("bootstrap", 1000),
            keep_conversations=bool(logs_out))
    except (EngageError, KeyError, TypeError) as exc:
        _fail(str(exc), "bad_scenario")
    if logs_out:
        with open(logs_out, "w", encoding="utf-8") as out:
            for convs in report.conversations.values():
                for conv in convs:
                    out.write(convlog.serialize_conversation(conv) + "\n")
    doc = report.to_dict()
    if machine:
        click.echo(json.dumps(doc))
    else:
        for name, arm in doc["arms"].items():
            tag = " (baseline)" if name == doc["baseline"] else ""
            click.echo(f"{name}{tag}: MCL {arm['mcl']['value']:.3f} "
                       f"retry {arm['retry_rate']['value']:.4f} "
                       f"users {arm['n_users']}")
        for name, imps in doc["improvements"].items():
            mclv = imps["mcl"]
            se = f" ± {mclv['stderr']:.2f}" if mclv["stderr"] else ""
            click.echo(f"{name} vs {doc['baseline']}: "
                       f"MCL {mclv['value']:+.2f}%{se}")


@cli.command("serve")
@click.option("--model", "model_path", type=click.Path())
@click.option("--listen", "listen_address", default=None)
@click.option("--backend", "generator_backend", default=None)
@click.option("--default-n", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True))
def serve_cmd(model_path, listen_address, generator_backend, default_n,
              config_path):
    """Run the scoring/selection HTTP service."""
    try:
        config = resolve_config(
            file_values=_load_file_config(config_path),
            flag_values={"model_path": model_path,
                         "listen_address": listen_address,
                         "generator_backend": generator_backend,
                         "default_n": default_n})
        if not config.model_path:
            _fail("no model path given", "bad_config")
        serve(config)
    except EngageError as exc:
        _fail(str(exc), "startup_failed")


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--backend", default=None, help="generator backend URL")
@click.option("--stub", type=click.Path(exists=True),
              help="canned-response file for the stub generator")
@click.option("--n", type=int, default=4)
@click.option("--seed", type=int, default=0)
@click.option("--verbose", is_flag=True, help="print all candidate scores")
def chat(model_path, backend, stub, n, seed, verbose):
    """Interactive REPL: best-of-N responses through the loaded scorer."""
    model = reward.load_model(model_path)
    if backend:
        generator = HTTPGenerator(backend)
    elif stub:
        generator = StubGenerator.from_file(stub)
    else:
        _fail("need --backend or --stub", "bad_config")
    budget = model.context_budget
    history: list[tuple[str, str]] = []
    turn = 0
    click.echo("chat ready; empty line or EOF quits")
    while True:
        try:
            user = input("you> ")
        except EOFError:
            break
        if not user.strip():
            break
        lines = [f"USER: {u}\nBOT: {b}" for u, b in history]
        lines.append(f"USER: {user}")
        tokens = "\n".join(lines).split()
        context = " ".join(tokens[-budget:])
        result = generate_and_select(generator, context, n, model,
                                     seed + turn * n)
        if verbose:
            for i, s in enumerate(result.scores):
                marker = "*" if i == result.chosen_index else " "
                click.echo(f"  {marker} [{i}] {s:.4f}")
        click.echo(f"bot> {result.chosen_text}")
        history.append((user, result.chosen_text))
        turn += 1


def main():
    cli()


if __name__ == "__main__":
    main()
