"""Command-line entry point: scenario generation, noderank, simulation,
training and probability-matrix inspection."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
import time

import click
import numpy as np

from . import __version__, semantics, training
from .noderank import DEFAULT_ITERS, DEFAULT_MU, noderank as noderank_fn
from .generators import WaxmanParams, generate_substrate, generate_workflow
from .policy import NumericFailure, PolicyConfig, PolicyModel
from .sim import SimConfig, make_placer, run as sim_run
from .types import load_substrate, load_workflow, save_json

EXIT_CONFIG = 1
EXIT_MISSING_CHECKPOINT = 2
EXIT_NUMERIC = 3

DEFAULTS = {
    "waxman_alpha": 0.5,
    "waxman_beta": 0.2,
    "affinity_ratio": 0.1,
    "noderank_mu": DEFAULT_MU,
    "noderank_iters": DEFAULT_ITERS,
    "bias_gamma": semantics.DEFAULT_GAMMA,
    "bias_max": semantics.DEFAULT_BIAS_MAX,
    "pretrain_lr": training.PRETRAIN_LR,
    "ppo_lr": training.PPO_LR,
    "fail_penalty": -10.0,
    "policy": PolicyConfig().__dict__ if hasattr(PolicyConfig(), "__dict__")
              else {},
}


def _config_hash(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class Manifest:
    """Run manifest written before and finalized after each command."""

    def __init__(self, out_dir: str, command: str, config: dict):
        self.path = os.path.join(out_dir, "manifest.json")
        os.makedirs(out_dir, exist_ok=True)
        self.data = {
            "command": command,
            "config": config,
            "config_hash": _config_hash(config),
            "seed": config.get("seed"),
            "version": __version__,
            "started": time.time(),
            "finished": None,
            "outputs": [],
        }
        self._flush()

    def _flush(self):
        with open(self.path, "w") as fh:
            json.dump(self.data, fh, indent=2)

    def finalize(self, outputs: list):
        self.data["outputs"] = outputs
        self.data["finished"] = time.time()
        self.data["wall_clock_s"] = self.data["finished"] - self.data["started"]
        self._flush()


@click.group(invoke_without_command=True)
@click.option("--print-config", is_flag=True, default=False,
              help="Print all defaults as JSON and exit.")
@click.pass_context
def main(ctx, print_config):
    if print_config:
        from dataclasses import asdict
        payload = dict(DEFAULTS)
        payload["policy"] = asdict(PolicyConfig())
        click.echo(json.dumps(payload, indent=2))
        ctx.exit(0)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        ctx.exit(0)


@main.command()
@click.option("--kind", type=click.Choice(["substrate", "workflow", "templates"]),
              default="substrate")
@click.option("--nodes", type=int, default=50)
@click.option("--wtype", type=int, default=1)
@click.option("--seed", type=int, default=0)
@click.option("--alpha", type=float, default=DEFAULTS["waxman_alpha"])
@click.option("--beta", type=float, default=DEFAULTS["waxman_beta"])
@click.option("--affinity", type=float, default=DEFAULTS["affinity_ratio"])
@click.option("--out", type=click.Path(), required=True)
def generate(kind, nodes, wtype, seed, alpha, beta, affinity, out):
    """Write substrate or workflow JSON files."""
    try:
        if kind == "substrate":
            net = generate_substrate(nodes, seed,
                                     WaxmanParams(alpha=alpha, beta=beta),
                                     affinity_ratio=affinity)
            save_json(net, out)
        elif kind == "workflow":
            save_json(generate_workflow(wtype, seed), out)
        else:
            os.makedirs(out, exist_ok=True)
            for t in (1, 2, 3, 4):
                save_json(generate_workflow(t, seed + t),
                          os.path.join(out, f"workflow_{t}.json"))
    except ValueError as exc:
        raise click.ClickException(str(exc))


@main.command("noderank")
@click.option("--substrate", type=click.Path(exists=True), required=True)
@click.option("--mu", type=float, default=DEFAULT_MU)
@click.option("--iters", type=int, default=DEFAULT_ITERS)
def noderank_cmd(substrate, mu, iters):
    """Print the substrate noderank vector as JSON."""
    net = load_substrate(substrate)
    values = noderank_fn(net, mu=mu, iters=iters)
    click.echo(json.dumps({"nodes": net.node_ids(),
                           "noderank": values.tolist()}))


def _load_model(checkpoint: str) -> PolicyModel:
    if not os.path.exists(checkpoint + ".manifest.json"):
        click.echo(f"checkpoint not found: {checkpoint}", err=True)
        sys.exit(EXIT_MISSING_CHECKPOINT)
    return PolicyModel.load(checkpoint)


@main.command()
@click.option("--placer", "placer_name",
              type=click.Choice(["agentvne", "greedy", "ga", "noderank"]),
              default="greedy")
@click.option("--substrate", type=click.Path(exists=True), required=True)
@click.option("--arrival", type=float, default=0.2)
@click.option("--lifetime", type=float, default=30.0)
@click.option("--horizon", type=int, default=1000)
@click.option("--seed", type=int, default=0)
@click.option("--replicas", type=int, default=1)
@click.option("--checkpoint", type=str, default=None)
@click.option("--no-bias", is_flag=True, default=False,
              help="Disable the constraint bias channel (ablation).")
@click.option("--no-ppo", is_flag=True, default=False,
              help="Use the supervised-only checkpoint given via "
                   "--pretrain-checkpoint instead of the fine-tuned one "
                   "(ablation).")
@click.option("--pretrain-checkpoint", type=str, default=None)
@click.option("--out", type=click.Path(), required=True)
def simulate(placer_name, substrate, arrival, lifetime, horizon, seed,
             replicas, checkpoint, no_bias, no_ppo, pretrain_checkpoint,
             out):
    """Run the discrete-event simulation and write metric logs."""
    config_payload = {"placer": placer_name, "substrate": substrate,
                      "arrival": arrival, "lifetime": lifetime,
                      "horizon": horizon, "seed": seed,
                      "replicas": replicas, "checkpoint": checkpoint,
                      "no_bias": no_bias, "no_ppo": no_ppo,
                      "pretrain_checkpoint": pretrain_checkpoint}
    manifest = Manifest(out, "simulate", config_payload)
    model = None
    if placer_name == "agentvne":
        if no_ppo:
            checkpoint = pretrain_checkpoint
            if checkpoint is None:
                click.echo("--no-ppo requires --pretrain-checkpoint",
                           err=True)
                sys.exit(EXIT_MISSING_CHECKPOINT)
        if checkpoint is None:
            click.echo("--checkpoint required for placer=agentvne", err=True)
            sys.exit(EXIT_MISSING_CHECKPOINT)
        model = _load_model(checkpoint)
    outputs = []
    summaries = []
    for replica in range(replicas):
        replica_seed = seed + replica
        replica_dir = (out if replicas == 1
                       else os.path.join(out, f"replica-{replica_seed}"))
        net = load_substrate(substrate)
        placer = make_placer(placer_name, model=model, use_bias=not no_bias)
        config = SimConfig(arrival_rate=arrival, mean_lifetime=lifetime,
                           horizon=horizon, seed=replica_seed)
        log = sim_run(net, config, placer, out_dir=replica_dir)
        if placer_name == "agentvne":
            label = "no-bias" if no_bias else ("no-ppo" if no_ppo else "full")
            log.summary["ablation"] = label
            with open(os.path.join(replica_dir, "summary.json"), "w") as fh:
                json.dump(log.summary, fh, indent=2)
        summaries.append(log.summary)
        outputs.append(replica_dir)
    if replicas > 1:
        merged = _merge_summaries(summaries)
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump(merged, fh, indent=2)
    manifest.finalize(outputs)


def _merge_summaries(summaries: list) -> dict:
    keys = ("mean_r_t", "mean_raw_hops", "accept_ratio", "mean_solve_ms")
    merged = dict(summaries[0])
    merged["replicas"] = len(summaries)
    for key in keys:
        values = [s[key] for s in summaries if s.get(key) is not None]
        merged[key] = float(np.mean(values)) if values else None
    return merged


@main.command()
@click.option("--stage", type=click.Choice(["pretrain", "ppo"]), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--count", type=int, default=500, help="Pre-training samples.")
@click.option("--epochs", type=int, default=5)
@click.option("--lr", type=float, default=None)
@click.option("--substrate", type=click.Path(exists=True), default=None)
@click.option("--substrate-sizes", type=str, default="20,50")
@click.option("--episodes", type=int, default=200)
@click.option("--arrival", type=float, default=0.2)
@click.option("--lifetime", type=float, default=30.0)
@click.option("--n-cap", type=int, default=128)
@click.option("--init", "init_checkpoint", type=str, default=None)
@click.option("--no-bias", is_flag=True, default=False)
@click.option("--out", type=str, required=True,
              help="Checkpoint prefix; curves land next to it.")
def train(stage, seed, count, epochs, lr, substrate, substrate_sizes,
          episodes, arrival, lifetime, n_cap, init_checkpoint, no_bias, out):
    """Supervised pre-training or PPO fine-tuning."""
    out_dir = os.path.dirname(os.path.abspath(out)) or "."
    config_payload = {"stage": stage, "seed": seed, "count": count,
                      "epochs": epochs, "lr": lr, "substrate": substrate,
                      "substrate_sizes": substrate_sizes,
                      "episodes": episodes, "arrival": arrival,
                      "lifetime": lifetime, "n_cap": n_cap,
                      "init": init_checkpoint, "no_bias": no_bias}
    manifest = Manifest(out_dir, "train", config_payload)
    curves_path = out + ".curves.csv"
    try:
        if stage == "pretrain":
            sizes = tuple(int(x) for x in substrate_sizes.split(","))
            model = (_load_model(init_checkpoint) if init_checkpoint
                     else PolicyModel(PolicyConfig(n_cap=n_cap), seed=seed))
            samples = training.build_pretrain_set(count, seed,
                                                  substrate_sizes=sizes)
            start = training.initial_loss(model, samples)
            trace = training.pretrain(model, samples,
                                      lr=lr or training.PRETRAIN_LR,
                                      epochs=epochs, seed=seed)
            model.save(out)
            _append_curve(curves_path, "pretrain_loss", [start] + trace)
            if trace and trace[-1] >= start:
                click.echo("warning: final loss did not improve", err=True)
        else:
            if init_checkpoint is None:
                click.echo("--init checkpoint required for stage=ppo",
                           err=True)
                sys.exit(EXIT_MISSING_CHECKPOINT)
            if substrate is None:
                click.echo("--substrate required for stage=ppo", err=True)
                sys.exit(EXIT_CONFIG)
            model = _load_model(init_checkpoint)
            net = load_substrate(substrate)
            config = SimConfig(arrival_rate=arrival, mean_lifetime=lifetime,
                               horizon=episodes, seed=seed)
            params = training.PpoParams(lr=lr or training.PPO_LR)
            diagnostics = training.finetune(model, net, config, episodes,
                                            params=params,
                                            use_bias=not no_bias, seed=seed)
            model.save(out)
            losses = [l for d in diagnostics for l in d["loss"]]
            _append_curve(curves_path, "ppo_loss", losses)
    except NumericFailure as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    manifest.finalize([out + ".manifest.json", out + ".bin", curves_path])


def _append_curve(path: str, name: str, values: list):
    exists = os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if not exists:
            writer.writerow(["series", "step", "value"])
        for i, v in enumerate(values):
            writer.writerow([name, i, v])


@main.command()
@click.option("--checkpoint", type=str, required=True)
@click.option("--substrate", type=click.Path(exists=True), required=True)
@click.option("--workflow", type=click.Path(exists=True), required=True)
@click.option("--no-bias", is_flag=True, default=False)
@click.option("--dump-prob", "dump_path", type=click.Path(), required=True)
def inspect(checkpoint, substrate, workflow, no_bias, dump_path):
    """Dump the placement probability matrix with row/column labels."""
    from .sim import PolicyPlacer
    model = _load_model(checkpoint)
    net = load_substrate(substrate)
    wf = load_workflow(workflow)
    placer = PolicyPlacer(model, use_bias=not no_bias)
    P, placed_wf = placer.probability(net, wf)
    payload = {
        "schema": "v1",
        "rows": [a.id for a in placed_wf.agents],
        "cols": net.node_ids(),
        "matrix": P.tolist(),
    }
    with open(dump_path, "w") as fh:
        json.dump(payload, fh, indent=2)
    click.echo(dump_path)


if __name__ == "__main__":
    main()
