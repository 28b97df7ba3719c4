"""Two-stage training: supervised pre-training against noderank targets and
PPO fine-tuning inside the simulator.

Both stages use plain fixed-rate gradient descent on the model's float64
parameters so checkpoint round-trips resume bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import features, semantics
from .noderank import noderank
from .generators import generate_substrate, generate_workflow
from .policy import DTYPE, PolicyModel, gradients
from .sim import PolicyPlacer, SimConfig, Simulation
from .types import SubstrateNetwork, Workflow

PRETRAIN_LR = 1e-2
PPO_LR = 3e-4


@dataclass
class PretrainSample:
    sub_X: np.ndarray
    sub_A: np.ndarray
    virt_X: np.ndarray
    virt_A: np.ndarray
    target: np.ndarray  # (n_virtual, n_substrate), rows unit-L2 or zero


@dataclass(frozen=True)
class PpoParams:
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 64
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = PPO_LR
    value_weight: float = 0.5
    entropy_weight: float = 0.01

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError("clip must lie in (0, 1)")
        for v in (self.gamma, self.gae_lambda):
            if not 0 < v <= 1:
                raise ValueError("gamma and gae_lambda must lie in (0, 1]")


@dataclass
class EpisodeStep:
    agent_row: int
    candidate_cols: list
    chosen_col: int
    old_logprob: float
    reward_to_go: float = 0.0
    advantage: float = 0.0


@dataclass
class Episode:
    inputs: tuple  # (sub_X, sub_A, virt_X, virt_A)
    steps: list
    reward: float
    value: float


def feasibility_mask(net: SubstrateNetwork, wf: Workflow) -> np.ndarray:
    """mask[i, u] = 1 iff node u individually satisfies agent i's full
    demand and hard labels."""
    mask = np.zeros((len(wf.agents), len(net.nodes)))
    for i, agent in enumerate(wf.agents):
        for u, node in enumerate(net.nodes):
            if agent.affinity - node.labels:
                continue
            if agent.demand.fits_within(node.residual):
                mask[i, u] = 1.0
    return mask


def build_pretrain_set(count: int, seed: int,
                       substrate_sizes=(20, 50),
                       affinity_ratio: float = 0.1,
                       mask_infeasible: bool = True) -> list:
    """Random (substrate, workflow) pairs with masked noderank target rows.

    Each row of the target is the substrate noderank vector restricted to
    the agent's feasible nodes and renormalized to unit L2 so it lives in
    the probability matrix's codomain.
    """
    if count <= 0:
        raise ValueError("count must be > 0")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(count):
        n = int(rng.choice(substrate_sizes))
        net = generate_substrate(n, seed=int(rng.integers(2 ** 31)),
                                 affinity_ratio=affinity_ratio)
        wtype = int(rng.integers(1, 5))
        wf = generate_workflow(wtype, seed=int(rng.integers(2 ** 31)))
        report = semantics.report_from_workflow(wf, net)
        wf = semantics.decouple_topology(wf, report)
        bias = (semantics.inject_bias(net, report)
                if report.required else None)
        ranks = noderank(net)
        target = np.tile(ranks, (len(wf.agents), 1))
        if mask_infeasible:
            target = target * feasibility_mask(net, wf)
        norms = np.sqrt((target ** 2).sum(axis=1, keepdims=True))
        norms[norms == 0] = 1.0
        target = target / norms
        samples.append(PretrainSample(
            sub_X=features.substrate_features(net, bias),
            sub_A=features.substrate_adjacency(net),
            virt_X=features.virtual_features(wf, net),
            virt_A=features.workflow_adjacency(wf),
            target=target,
        ))
    return samples


def _sample_loss(model: PolicyModel, sample: PretrainSample) -> torch.Tensor:
    P, _, _, _ = model.forward(sample.sub_X, sample.sub_A,
                               sample.virt_X, sample.virt_A)
    T = torch.tensor(sample.target, dtype=DTYPE)
    return ((P - T) ** 2).sum()


def pretrain(model: PolicyModel, samples: list, lr: float = PRETRAIN_LR,
             epochs: int = 5, batch_size: int = 32, seed: int = 0):
    """Minibatch gradient descent on the Frobenius MSE against the targets.

    Returns the per-epoch mean loss trace; the model is updated in place.
    """
    if not samples:
        raise ValueError("samples must be non-empty")
    rng = np.random.default_rng(seed)
    trace = []
    for _ in range(epochs):
        order = rng.permutation(len(samples))
        epoch_losses = []
        for start in range(0, len(order), batch_size):
            batch = [samples[i] for i in order[start:start + batch_size]]
            cell = {}

            def batch_loss():
                loss = sum(_sample_loss(model, s) for s in batch) / len(batch)
                cell["loss"] = float(loss.detach())
                return loss

            grads = gradients(model, batch_loss)
            epoch_losses.append(cell["loss"])
            if lr:
                with torch.no_grad():
                    for name, p in model.params.items():
                        p -= lr * torch.tensor(grads[name], dtype=DTYPE)
        trace.append(float(np.mean(epoch_losses)))
    return trace


def initial_loss(model: PolicyModel, samples: list) -> float:
    with torch.no_grad():
        return float(np.mean([_sample_loss(model, s).item()
                              for s in samples]))


def rollout(model: PolicyModel, net: SubstrateNetwork, config: SimConfig,
            episodes: int, use_bias: bool = True,
            ppo: PpoParams = PpoParams()) -> list:
    """Collect placement episodes by running the simulator in sample mode.

    One episode = one workflow arrival; the event reward is attributed to
    the episode's final step and smoothed with GAE.
    """
    placer = PolicyPlacer(model, use_bias=use_bias, mode="sample")
    collected = []

    def on_episode(sim, placed_wf, outcome, failed):
        context = placer.last_context
        row_of = {a.id: i for i, a in enumerate(placed_wf.agents)}
        col_of = {n.id: i for i, n in enumerate(net.nodes)}
        steps = []
        for s in outcome.steps:
            prob = max(s.prob, 1e-12)
            steps.append(EpisodeStep(
                agent_row=row_of[s.agent_id],
                candidate_cols=[col_of[c] for c in s.candidates],
                chosen_col=col_of[s.chosen],
                old_logprob=float(np.log(prob))))
        if not steps:
            return
        reward = (sim.config.fail_penalty if failed
                  else -sim.state.weighted_hops())
        with torch.no_grad():
            _, value, _, _ = model.forward(*context["inputs"])
        collected.append(Episode(inputs=context["inputs"], steps=steps,
                                 reward=reward, value=float(value)))

    run_config = SimConfig(arrival_rate=config.arrival_rate,
                           mean_lifetime=config.mean_lifetime,
                           horizon=episodes, seed=config.seed,
                           type_mix=config.type_mix,
                           fail_penalty=config.fail_penalty)
    sim = Simulation(net.copy(), run_config, placer, on_episode=on_episode)
    sim.run()
    for episode in collected:
        _compute_advantages(episode, ppo)
    return collected


def _compute_advantages(episode: Episode, ppo: PpoParams):
    """GAE over the episode's steps; only the final step carries reward and
    every step shares the episode-level value estimate."""
    n = len(episode.steps)
    rewards = [0.0] * (n - 1) + [episode.reward]
    values = [episode.value] * n + [0.0]
    gae = 0.0
    for t in reversed(range(n)):
        delta = rewards[t] + ppo.gamma * values[t + 1] - values[t]
        gae = delta + ppo.gamma * ppo.gae_lambda * gae
        episode.steps[t].advantage = gae
    running = 0.0
    for t in reversed(range(n)):
        running = rewards[t] + ppo.gamma * running
        episode.steps[t].reward_to_go = running


def _step_logprob_entropy(P: torch.Tensor, step: EpisodeStep):
    row = P[step.agent_row]
    cand = row[torch.tensor(step.candidate_cols, dtype=torch.long)]
    total = cand.sum()
    probs = cand / total
    chosen = step.candidate_cols.index(step.chosen_col)
    logprob = torch.log(probs[chosen] + 1e-12)
    entropy = -(probs * torch.log(probs + 1e-12)).sum()
    return logprob, entropy


def ppo_update(model: PolicyModel, episodes: list,
               params: PpoParams = PpoParams(), seed: int = 0):
    """Clipped-surrogate PPO step over collected episodes.

    Returns diagnostics: mean ratio, clip fraction, approximate KL and the
    per-epoch loss components.
    """
    if not episodes:
        raise ValueError("episodes must be non-empty")
    rng = np.random.default_rng(seed)
    flat = [(ep, step) for ep in episodes for step in ep.steps]
    advantages = np.array([s.advantage for _, s in flat])
    adv_std = advantages.std() or 1.0
    adv_mean = advantages.mean()

    diagnostics = {"ratio_mean": [], "clip_fraction": [], "kl": [],
                   "loss": []}
    for _ in range(params.epochs):
        order = rng.permutation(len(flat))
        for start in range(0, len(order), params.minibatch):
            batch = [flat[i] for i in order[start:start + params.minibatch]]
            by_episode = {}
            for ep, step in batch:
                by_episode.setdefault(id(ep), (ep, []))[1].append(step)

            ratios = []
            clipped_flags = []
            kls = []
            cell = {}

            def batch_loss():
                ratios.clear()
                clipped_flags.clear()
                kls.clear()
                policy_terms = []
                value_terms = []
                entropy_terms = []
                for ep, steps in by_episode.values():
                    P, value, _, _ = model.forward(*ep.inputs)
                    for step in steps:
                        logprob, entropy = _step_logprob_entropy(P, step)
                        adv = (step.advantage - adv_mean) / adv_std
                        ratio = torch.exp(logprob - step.old_logprob)
                        unclipped = ratio * adv
                        clipped = torch.clamp(ratio, 1 - params.clip,
                                              1 + params.clip) * adv
                        policy_terms.append(torch.minimum(unclipped, clipped))
                        value_terms.append((value - step.reward_to_go) ** 2)
                        entropy_terms.append(entropy)
                        ratios.append(float(ratio.detach()))
                        clipped_flags.append(
                            abs(float(ratio.detach()) - 1) > params.clip)
                        kls.append(step.old_logprob - float(logprob.detach()))
                policy = torch.stack(policy_terms).mean()
                value_loss = torch.stack(value_terms).mean()
                entropy = torch.stack(entropy_terms).mean()
                loss = (-policy + params.value_weight * value_loss
                        - params.entropy_weight * entropy)
                cell["loss"] = float(loss.detach())
                return loss

            grads = gradients(model, batch_loss)
            diagnostics["loss"].append(cell["loss"])
            diagnostics["ratio_mean"].append(float(np.mean(ratios)))
            diagnostics["clip_fraction"].append(float(np.mean(clipped_flags)))
            diagnostics["kl"].append(float(np.mean(kls)))
            with torch.no_grad():
                for name, p in model.params.items():
                    p -= params.lr * torch.tensor(grads[name], dtype=DTYPE)
    return diagnostics


def finetune(model: PolicyModel, net: SubstrateNetwork, config: SimConfig,
             episodes: int, batch_episodes: int = 20,
             params: PpoParams = PpoParams(), use_bias: bool = True,
             seed: int = 0):
    """Alternate rollout collection and PPO updates until ``episodes``
    placements have been consumed."""
    rng = np.random.default_rng(seed)
    all_diagnostics = []
    consumed = 0
    while consumed < episodes:
        batch = min(batch_episodes, episodes - consumed)
        roll_config = SimConfig(arrival_rate=config.arrival_rate,
                                mean_lifetime=config.mean_lifetime,
                                horizon=batch,
                                seed=int(rng.integers(2 ** 31)),
                                type_mix=config.type_mix,
                                fail_penalty=config.fail_penalty)
        collected = rollout(model, net, roll_config, batch,
                            use_bias=use_bias, ppo=params)
        consumed += batch
        if collected:
            diag = ppo_update(model, collected, params,
                              seed=int(rng.integers(2 ** 31)))
            all_diagnostics.append(diag)
    return all_diagnostics
