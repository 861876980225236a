"""Analytic-vs-finite-difference gradient checks over the ablation matrix.

Parameters are re-drawn at unit-activation scale (std 1/sqrt(d), warm-ups in
[0.3, 0.9]) before checking: at the production init everything new starts at
zero, which makes many true gradients exactly zero and the relative-error
criterion ill-posed. Large weight matrices are checked on a seeded sample of
entries by default (the numerics suite covers every entry at tiny shapes);
scalars and small tensors are always checked in full.

The reported number per parameter group is
    max_i |fd_i - analytic_i| / max(group_scale, |fd_i|, |analytic_i|)
with group_scale the largest analytic magnitude in the group. Under SHARE
init, aliased projections are compared against the sum of the gradients of
every parameter sharing the storage (that is the true derivative).
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, replace

import numpy as np

from . import hybrid_decoder as hd

TOLERANCE = 1e-4
DEFAULT_EPS = 1e-5
DEFAULT_SAMPLES = 16
FULL_CHECK_LIMIT = 80  # tensors at or below this size are checked exhaustively


@dataclass
class GroupResult:
    combo: str
    group: str
    rel_err: float | None  # None when the group has no parameters (reported absent)
    entries_checked: int

    @property
    def status(self) -> str:
        if self.rel_err is None:
            return "absent"
        return "ok" if self.rel_err < TOLERANCE else "FAIL"


@dataclass
class GradCheckReport:
    results: list[GroupResult]
    seconds: float

    @property
    def worst(self) -> float:
        errs = [r.rel_err for r in self.results if r.rel_err is not None]
        return max(errs) if errs else 0.0

    @property
    def ok(self) -> bool:
        return all(r.rel_err is None or r.rel_err < TOLERANCE for r in self.results)

    def worst_by_group(self) -> dict[str, float | None]:
        out: dict[str, float | None] = {}
        for r in self.results:
            if r.group not in out:
                out[r.group] = r.rel_err
            elif r.rel_err is not None:
                prev = out[r.group]
                out[r.group] = r.rel_err if prev is None else max(prev, r.rel_err)
        return out


def all_combos() -> list[tuple[hd.GateMode, hd.QueryMode, hd.Integration]]:
    return list(itertools.product(hd.GateMode, hd.QueryMode, hd.Integration))


def combo_name(gate: hd.GateMode, query: hd.QueryMode, integration: hd.Integration) -> str:
    return f"{gate.value}/{query.value}/{integration.value}"


def parse_combo(text: str):
    from .configs import parse_enum

    parts = text.split("/")
    if len(parts) != 3:
        raise ValueError(f"mode must look like gate/query/integration, got {text!r}")
    return (
        parse_enum(hd.GateMode, parts[0], "gate_mode"),
        parse_enum(hd.QueryMode, parts[1], "query_mode"),
        parse_enum(hd.Integration, parts[2], "integration"),
    )


def randomize_for_gradcheck(params: hd.ModelParams, cfg: hd.ModelConfig, seed: int) -> None:
    """Re-draw every parameter at a scale that keeps activations O(1)."""
    rng = np.random.default_rng(seed)
    std = 1.0 / np.sqrt(cfg.hidden_dim)

    def redraw(a):
        a[...] = rng.normal(0.0, std, a.shape)

    def redraw_norm(a):
        a[...] = rng.normal(1.0, 0.2, a.shape)

    for lp in params.layers:
        for a in (lp.attn.w_q, lp.attn.w_k, lp.attn.w_v, lp.attn.w_o, lp.ffn_gate_w, lp.ffn_up_w, lp.ffn_down_w):
            redraw(a)
        redraw_norm(lp.input_norm_w)
        redraw_norm(lp.post_norm_w)
    redraw_norm(params.final_norm_w)
    redraw(params.unembed)

    def redraw_gate(gate):
        gate.warmup = float(rng.uniform(0.3, 0.9))
        if gate.w_gate is not None:
            gate.w_gate[...] = rng.normal(0.0, 0.5, gate.w_gate.shape)
            gate.b_gate[...] = rng.normal(0.0, 0.1, gate.b_gate.shape)

    for hp in params.hybrid.values():
        if hp.init_mode != hd.InitMode.SHARE:
            redraw(hp.xattn_wk)
            redraw(hp.xattn_wv)
        redraw_gate(hp.gate)
    for sp in params.standalone.values():
        if sp.init_mode != hd.InitMode.SHARE:
            for a in (sp.attn.w_q, sp.attn.w_k, sp.attn.w_v, sp.attn.w_o):
                redraw(a)
            if sp.with_ffn:
                for a in (sp.ffn_gate_w, sp.ffn_up_w, sp.ffn_down_w):
                    redraw(a)
        redraw_norm(sp.norm_w)
        if sp.with_ffn:
            redraw_norm(sp.ffn_norm_w)
        redraw_gate(sp.gate)
        sp.ffn_warmup = float(rng.uniform(0.3, 0.9))


def _group_arrays(cfg: hd.ModelConfig, params: hd.ModelParams) -> list[tuple[str, str, np.ndarray]]:
    """(group label, grad name, array) for the parameters under check."""
    out = []
    if cfg.integration == hd.Integration.HYBRID:
        for i, hp in params.hybrid.items():
            out.append(("xattn_wk", f"hybrid.{i}.xattn_wk", hp.xattn_wk))
            out.append(("xattn_wv", f"hybrid.{i}.xattn_wv", hp.xattn_wv))
            if hp.gate.w_gate is not None:
                out.append(("gate_linear", f"hybrid.{i}.gate.w_gate", hp.gate.w_gate))
                out.append(("gate_linear", f"hybrid.{i}.gate.b_gate", hp.gate.b_gate))
    else:
        for i, sp in params.standalone.items():
            out.append(("xattn_wq", f"standalone.{i}.attn.w_q", sp.attn.w_q))
            out.append(("xattn_wk", f"standalone.{i}.attn.w_k", sp.attn.w_k))
            out.append(("xattn_wv", f"standalone.{i}.attn.w_v", sp.attn.w_v))
            out.append(("xattn_wo", f"standalone.{i}.attn.w_o", sp.attn.w_o))
            if sp.gate.w_gate is not None:
                out.append(("gate_linear", f"standalone.{i}.gate.w_gate", sp.gate.w_gate))
                out.append(("gate_linear", f"standalone.{i}.gate.b_gate", sp.gate.b_gate))
    return out


def check_combo(
    cfg: hd.ModelConfig,
    seed: int,
    samples: int = DEFAULT_SAMPLES,
    eps: float = DEFAULT_EPS,
    full: bool = False,
    corrupt: bool = False,
) -> list[GroupResult]:
    """FD-vs-analytic check of one gate/query/integration combination."""
    name = combo_name(cfg.gate_mode, cfg.query_mode, cfg.integration)
    params = hd.init_model_params(cfg, seed=seed, dtype=np.float64)
    randomize_for_gradcheck(params, cfg, seed=seed + 1)
    rng = np.random.default_rng(seed + 2)
    d = cfg.hidden_dim
    h0 = hd.build_sequence(rng.normal(size=(3, d)), rng.normal(size=(5, d)))
    slow = rng.normal(size=(6, d))
    direction = rng.normal(size=h0.x.shape)

    def loss() -> float:
        out = hd.decoder_stack_forward(cfg, h0, slow, params).hidden.x
        return float((out * direction).sum())

    res = hd.decoder_stack_forward(cfg, h0, slow, params)
    grads = hd.decoder_stack_backward(direction, res.cache)
    registry = hd.named_param_arrays(params)

    def analytic_for(arr: np.ndarray, primary: str) -> np.ndarray:
        # sum gradients over every name aliased to the same storage (SHARE init)
        total = np.zeros_like(grads[primary])
        for other_name, other_arr in registry.items():
            if other_arr is arr and other_name in grads:
                total += grads[other_name]
        return total

    if corrupt:
        first = _group_arrays(cfg, params)[0][1]
        grads[first] = grads[first] + 0.05 * (1.0 + np.abs(grads[first]))

    results = []
    groups: dict[str, list[float]] = {}
    counts: dict[str, int] = {}
    sample_rng = np.random.default_rng(seed + 3)
    for group, gname, arr in _group_arrays(cfg, params):
        analytic = analytic_for(arr, gname)
        scale = max(float(np.abs(analytic).max()), 1e-12)
        if full or arr.size <= FULL_CHECK_LIMIT:
            idxs = range(arr.size)
        else:
            idxs = sample_rng.choice(arr.size, size=samples, replace=False)
        for i in idxs:
            i = int(i)
            orig = arr.flat[i]
            arr.flat[i] = orig + eps
            f_plus = loss()
            arr.flat[i] = orig - eps
            f_minus = loss()
            arr.flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            an = float(analytic.flat[i])
            rel = abs(fd - an) / max(scale, abs(fd), abs(an))
            groups.setdefault(group, []).append(rel)
            counts[group] = counts.get(group, 0) + 1

    def check_scalar(group: str, obj, attr: str, grad_name: str):
        orig = getattr(obj, attr)
        setattr(obj, attr, orig + eps)
        f_plus = loss()
        setattr(obj, attr, orig - eps)
        f_minus = loss()
        setattr(obj, attr, orig)
        fd = (f_plus - f_minus) / (2.0 * eps)
        an = float(grads[grad_name])
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-12)
        groups.setdefault(group, []).append(rel)
        counts[group] = counts.get(group, 0) + 1

    if cfg.integration == hd.Integration.HYBRID:
        for i, hp in params.hybrid.items():
            check_scalar("warmup", hp.gate, "warmup", f"hybrid.{i}.gate.warmup")
    else:
        for i, sp in params.standalone.items():
            check_scalar("warmup", sp.gate, "warmup", f"standalone.{i}.gate.warmup")
            if sp.with_ffn:
                check_scalar("ffn_warmup", sp, "ffn_warmup", f"standalone.{i}.ffn_warmup")

    for group in ("xattn_wk", "xattn_wv", "xattn_wq", "xattn_wo", "gate_linear", "warmup", "ffn_warmup"):
        if group in groups:
            results.append(GroupResult(name, group, max(groups[group]), counts[group]))
    if cfg.gate_mode == hd.GateMode.STATIC:
        results.append(GroupResult(name, "gate_linear", None, 0))
    return results


def run_gradcheck(
    base_cfg: hd.ModelConfig,
    seed: int,
    combos=None,
    samples: int = DEFAULT_SAMPLES,
    eps: float = DEFAULT_EPS,
    full: bool = False,
    corrupt: bool = False,
) -> GradCheckReport:
    started = time.monotonic()
    if combos is None:
        combos = all_combos()
    results: list[GroupResult] = []
    for gate, query, integration in combos:
        cfg = replace(base_cfg, gate_mode=gate, query_mode=query, integration=integration)
        results.extend(check_combo(cfg, seed, samples=samples, eps=eps, full=full, corrupt=corrupt))
    return GradCheckReport(results, time.monotonic() - started)
