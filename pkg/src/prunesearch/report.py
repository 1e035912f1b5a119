"""Run reports: trajectory CSV and a plain-text summary."""

from __future__ import annotations

import csv
import hashlib
import io

from .network import PruningProposal, format_rate, proposal_stats
from .search import SearchState

CSV_COLUMNS = ("eval_index", "reward", "accuracy", "latency_ms", "best_so_far", "proposal_id")


def proposal_id(state: SearchState, proposal) -> str:
    if state.config.evaluator.kind == "lookup":
        for row in state.config.evaluator.settings["rows"]:
            if PruningProposal.from_dict(state.config.network, row["proposal"]) == proposal:
                return row["key"]
    return hashlib.sha1(proposal.dumps().encode("utf-8")).hexdigest()[:12]


def trajectory(state: SearchState) -> list[dict]:
    rows, best = [], None
    for i, o in enumerate(state.observations):
        best = o.reward if best is None else max(best, o.reward)
        rows.append({
            "eval_index": i,
            "reward": o.reward,
            "accuracy": o.accuracy,
            "latency_ms": o.latency_ms,
            "best_so_far": best,
            "proposal_id": proposal_id(state, o.proposal),
        })
    return rows


def to_csv(state: SearchState) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in trajectory(state):
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def _fmt_count(x: float) -> str:
    for unit, scale in (("G", 1e9), ("M", 1e6), ("K", 1e3)):
        if abs(x) >= scale:
            return f"{x / scale:.2f}{unit}"
    return f"{x:.0f}"


def to_text(state: SearchState) -> str:
    cfg = state.config
    lines = [f"network: {cfg.network.name} ({len(cfg.network.layers)} layers)"]
    lines.append(f"evaluations: {len(state.observations)} / {cfg.max_evaluations}"
                 + ("  (search space exhausted)" if state.exhausted else ""))
    lines.append(f"latency budget: {cfg.reward.latency_budget_ms:g} ms, alpha: {cfg.reward.alpha:g}")
    if state.best is None:
        lines.append("no observations")
        return "\n".join(lines) + "\n"

    lines.append("")
    lines.append(best_block(state))

    lines.append("")
    lines.append(f"  {'eval':>4} {'reward':>10} {'accuracy':>9} {'latency':>9} {'best':>10}  id")
    for row in trajectory(state):
        lines.append(
            f"  {row['eval_index']:>4} {row['reward']:>10.4f} {row['accuracy']:>9.4f}"
            f" {row['latency_ms']:>9.2f} {row['best_so_far']:>10.4f}  {row['proposal_id']}"
        )

    if state.guidance:
        lines.append("")
        lines.append("replacement probabilities (per iteration, reference = eval index):")
        for g in state.guidance:
            probs = " ".join(f"{k}={v:.3f}" for k, v in g["probabilities"].items())
            lines.append(f"  iter {g['iteration']} ref {g['reference']}: {probs}")
    return "\n".join(lines) + "\n"


def best_block(state: SearchState) -> str:
    """Best proposal with its totals and per-layer assignment table."""
    cfg = state.config
    best = state.best
    if best is None:
        return "no observations"
    lines = []
    lines.append(f"best proposal: {proposal_id(state, best.proposal)}")
    lines.append(f"  reward {best.reward:.4f}  accuracy {best.accuracy:.4f}  latency {best.latency_ms:.2f} ms")
    params, macs = proposal_stats(best.proposal)
    dense_p, dense_m = cfg.network.total_params(), cfg.network.total_macs()
    lines.append(f"  params {_fmt_count(params)} / {_fmt_count(dense_p)} dense"
                 f"  MACs {_fmt_count(macs)} / {_fmt_count(dense_m)} dense")
    lines.append("")
    lines.append(f"  {'layer':<16}{'type':<14}{'scheme':<9}rate")
    for layer in cfg.network.layers:
        a = best.proposal[layer.id]
        lines.append(f"  {layer.id:<16}{layer.layer_type:<14}{a.scheme:<9}{format_rate(a.rate)}")

    return "\n".join(lines)
