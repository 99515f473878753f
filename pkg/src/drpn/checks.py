"""Gradient checks at three scopes: single ops, single modules, the whole model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .encoders import GatedAggParams, MultiHeadParams, TitleEncoderParams, encode_title, gated_aggregate, multi_head
from .fusion import FusionNetParams, fuse_user, fusion_weights, pair_context, training_loss
from .graphnet import GraphLayerParams, neighbor_aggregate, fuse_node
from .ingest import build_collab_graph, build_profiles, generate_synthetic, rebuild_splits
from .interest import DenoiseParams, denoise
from .model import DRPN, ModelConfig
from .numerics import GradReport, ParamSpec, Tensor

SCOPES = ("op", "module", "full")

# toy dimensions used by the full-model check
TOY = dict(d=8, d_att=6, heads=2, graph_heads=2, l_p=3, l_n=4, title_len=6, seed=3)


@dataclass
class CheckResult:
    name: str
    report: GradReport

    @property
    def passed(self) -> bool:
        return self.report.passed

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{status:4s} {self.name:28s} max_rel_err={self.report.max_error:.3e}"


def _scalarize(f: Callable[[Tensor], Tensor], out_shape, rng) -> Callable[[Tensor], Tensor]:
    """Contract an op's output with fixed random weights so it becomes a scalar loss."""
    w = rng.normal(size=out_shape)
    return lambda x: nx.sum(f(x) * w)


def op_cases(rng: np.random.Generator) -> list[tuple[str, Callable[[Tensor], Tensor], np.ndarray]]:
    """(name, f, point) triples covering every differentiable op."""
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 5))
    c = rng.normal(size=(3, 4))
    batch = rng.normal(size=(2, 3, 4))
    mask = np.array([[True, True, False, True], [False, False, False, False], [True, False, True, True]])
    gain, bias = rng.normal(size=4), rng.normal(size=4)
    idx = np.array([[0, 2], [2, 2]])
    cases = [
        ("add", lambda x: x + c, a),
        ("sub", lambda x: c - x, a),
        ("mul", lambda x: x * x * c, a),
        ("scalar_mul", lambda x: nx.scalar_mul(x, 0.3), a),
        ("tanh", nx.tanh, a),
        ("sigmoid", nx.sigmoid, a),
        ("relu", nx.relu, a + 0.05 * np.sign(a)),
        ("exp", nx.exp, a),
        ("log", nx.log, np.abs(a) + 0.5),
        ("matmul_left", lambda x: x @ b, a),
        ("matmul_right", lambda x: Tensor(a) @ x, b),
        ("matmul_batched", lambda x: x @ b, batch),
        ("matmul_batched_weight", lambda x: Tensor(batch) @ x, b),
        ("matmul_bb", lambda x: x @ nx.transpose(x), batch),
        ("transpose", lambda x: nx.transpose(x, (2, 0, 1)), batch),
        ("reshape", lambda x: nx.reshape(x, (4, 6)), batch),
        ("concat", lambda x: nx.concat_cols([x, x * x]), a),
        ("concat_rows", lambda x: nx.concat_rows([x, c]), a),
        ("sum_axis", lambda x: nx.sum(x, axis=1, keepdims=True), batch),
        ("mean", lambda x: nx.mean(x * x), a),
        ("take", lambda x: nx.take(x, idx), a),
        ("index", lambda x: x[1:, ::2], a),
        ("softmax", lambda x: nx.softmax(x), a),
        ("softmax_masked", lambda x: nx.softmax(x, mask), a),
        ("layer_norm", lambda x: nx.layer_norm(x, Tensor(gain), Tensor(bias)), a),
        ("logsumexp", lambda x: nx.logsumexp(x, axis=-1), a),
    ]
    out = []
    for name, f, point in cases:
        shape = f(Tensor(point)).shape
        out.append((name, _scalarize(f, shape, rng), point))
    return out


def run_op_checks(tol: float = 1e-4, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [CheckResult(f"op:{name}", nx.grad_check(f, p, tol=tol)) for name, f, p in op_cases(rng)]


def _module_store(specs: list[ParamSpec], seed: int) -> nx.ParamStore:
    store = nx.init_params(specs, seed)
    # perturb biases and gains away from their 0/1 starts so their gradients are generic
    rng = np.random.default_rng(seed + 1)
    for name in store.names():
        v = store[name].data
        v += 0.1 * rng.normal(size=v.shape)
    return store


def run_module_checks(tol: float = 1e-4, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    d, d_att, heads, L = 8, 6, 2, 5
    x = rng.normal(size=(2, L, d))
    m = np.ones((2, L), dtype=bool)
    m[1, 3:] = False
    out = []

    def check(name, specs, loss):
        store = _module_store(specs, seed)
        out.append(CheckResult(f"module:{name}", nx.grad_check_store(lambda: loss(store), store, tol=tol)))

    w = rng.normal(size=(2, d))
    check("gated_aggregate", GatedAggParams.specs("a", d, d_att),
          lambda s: nx.sum(gated_aggregate(x, GatedAggParams.from_store(s, "a"), m) * w))
    wx = rng.normal(size=x.shape)
    check("multi_head", MultiHeadParams.specs("mh", d),
          lambda s: nx.sum(multi_head(x, x, x, MultiHeadParams.from_store(s, "mh", heads), m) * wx))
    n_words = 11
    tokens = rng.integers(1, n_words + 1, size=(3, L))
    tmask = np.ones((3, L), dtype=bool)
    tmask[2, 2:] = False
    wt = rng.normal(size=(3, d))
    check("title_encoder", TitleEncoderParams.specs("title", n_words, d, d_att),
          lambda s: nx.sum(encode_title(tokens, tmask, TitleEncoderParams.from_store(s, "title", heads)) * wt))
    opp = rng.normal(size=(2, 4, d))
    om = np.ones((2, 4), dtype=bool)
    om[0, 2:] = False
    check("denoiser", DenoiseParams.specs("da", d),
          lambda s: nx.sum(denoise(x, m, opp, om, DenoiseParams.from_store(s, "da"))[0] * w))
    k = 3
    nbrs = rng.normal(size=(2, L, k, d))
    nm = np.ones((2, L, k), dtype=bool)
    nm[0, 1, 1:] = False
    nm[1, 2, :] = False

    def graph_loss(s):
        p = GraphLayerParams.from_store(s, "g", 2)
        return nx.sum(fuse_node(x, neighbor_aggregate(x, nbrs, p, nm), p) * wx)

    check("graph_layer", GraphLayerParams.specs("g", d), graph_loss)
    cand = rng.normal(size=(2, 3, d))
    vecs = {t: rng.normal(size=(2, d)) for t in ("ps", "ns", "ph", "nh")}

    def fusion_loss(s):
        p = FusionNetParams.from_store(s, "f")
        f = pair_context(x, opp, m, om, cand, p.agg)
        u = fuse_user(vecs, fusion_weights(f, p))
        return training_loss(nx.sum(u * cand, axis=-1))

    check("fusion_net", FusionNetParams.specs("f", d, d_att), fusion_loss)
    return out


def toy_model(seed: int = 3, variant: str = "full"):
    """A small synthetic world and a model at the toy dimensions, plus a two-sample batch."""
    catalog, logs, _ = generate_synthetic(50, 60, 4, 0.2, 1)
    splits = rebuild_splits(logs)
    profiles, matrix = build_profiles(splits.profile_logs, TOY["l_p"], TOY["l_n"])
    cfg = ModelConfig(**{**TOY, "seed": seed, "variant": variant})
    model = DRPN(cfg, catalog, build_collab_graph(matrix))
    model.profiles = profiles
    users = sorted(profiles)[:2]
    first = profiles[users[0]]
    cands = [[first.positives[0], "N1", "N2", "N3", "N4"], ["N5", "N6", "N7", "N8", "N9"]]
    batch = model.make_batch([profiles[u] for u in users], cands)
    return model, batch


def run_full_check(tol: float = 1e-4, max_coords: int | None = 8, seed: int = 0,
                   variant: str = "full") -> list[CheckResult]:
    model, batch = toy_model(variant=variant)
    rep = nx.grad_check_store(lambda: training_loss(model.forward(batch).scores), model.store,
                              tol=tol, max_coords=max_coords, seed=seed)
    return [CheckResult(f"full:{variant}", rep)]


def run_checks(scope: str, tol: float = 1e-4, seed: int = 0) -> list[CheckResult]:
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}; choose from {SCOPES}")
    if scope == "op":
        return run_op_checks(tol, seed)
    if scope == "module":
        return run_module_checks(tol, seed)
    return run_full_check(tol, seed=seed)
