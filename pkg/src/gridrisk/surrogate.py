"""GNN surrogate: feature encoding, normalisation, training, prediction, checkpoints.

Heads
-----
``generation``       zonal + system thermal generation, (K = n_zone + 1, T)
``shedding``         zonal + system load shedding, (K, T)
``shed_reserve``     reserve-related part of the shedding split, (K, T)
``shed_nonreserve``  non-reserve part, (K, T)
``branch_flow``      net bus injections (n_bus, T), mapped to flows by the PTDF

Graph-level heads mean-pool the decoder output over each zone's buses (zonal
targets) and over all buses (system target, last row). Every target is
z-scored with training-set statistics; predictions are mapped back to MW and
clipped to the physical bounds used by the loss penalty.
"""

from __future__ import annotations

import functools
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from gridrisk import gnn
from gridrisk.container import read_container, write_container
from gridrisk.grid import PowerGrid, PtdfMatrix
from gridrisk.labels import LabelSet
from gridrisk.scenarios import ScenarioSet

logger = logging.getLogger(__name__)

GRAPH_HEADS = ("generation", "shedding", "shed_reserve", "shed_nonreserve")
NODE_HEADS = ("branch_flow",)
# nonnegative, mostly-zero targets whose small predictions get snapped to exact zero
ZERO_CUT_HEADS = ("shedding", "shed_reserve", "shed_nonreserve")
HEADS = GRAPH_HEADS + NODE_HEADS
N_STATIC = 8
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# features


@functools.lru_cache(maxsize=8)
def static_node_features(grid: PowerGrid) -> np.ndarray:
    """(n_bus, 8): bus-type one-hot [gen, load, both, neither], p_max share, degree,
    zone index and base load (last three scaled to [0, 1]).

    Cached per grid (grids are immutable); the returned array is read-only.
    """
    n = grid.n_bus
    has_gen = np.zeros(n, dtype=bool)
    pmax = np.zeros(n)
    for g in grid.generators:
        j = grid.bus_index[g.bus]
        has_gen[j] = True
        pmax[j] += g.p_max
    has_load = grid.base_loads > 0
    onehot = np.zeros((n, 4))
    onehot[has_gen & ~has_load, 0] = 1
    onehot[~has_gen & has_load, 1] = 1
    onehot[has_gen & has_load, 2] = 1
    onehot[~has_gen & ~has_load, 3] = 1
    deg = np.array([len(nb) for nb in grid.neighbors], dtype=float)

    def scaled(v):
        m = np.max(np.abs(v))
        return v / m if m > 0 else np.zeros_like(v)

    zone = grid.bus_zone / max(grid.n_zone - 1, 1)
    out = np.column_stack([onehot, scaled(pmax), scaled(deg), zone, scaled(grid.base_loads)])
    out.flags.writeable = False
    return out


def encode_features(grid: PowerGrid, scen: ScenarioSet) -> np.ndarray:
    """(N, n_bus, 8 + 2T): static features, then the T-step load and wind series per bus."""
    N, T = scen.n, scen.steps
    static = np.broadcast_to(static_node_features(grid), (N, grid.n_bus, N_STATIC))
    load = np.transpose(scen.bus_load, (0, 2, 1))
    wind = np.transpose(scen.bus_wind, (0, 2, 1))
    return np.concatenate([static, load, wind], axis=-1)


def pooling_matrix(grid: PowerGrid) -> np.ndarray:
    """(n_zone + 1, n_bus): per-zone means, then the all-bus mean."""
    masks = grid.zone_masks.astype(float)
    zone_rows = masks / masks.sum(axis=1, keepdims=True)
    return np.vstack([zone_rows, np.full((1, grid.n_bus), 1.0 / grid.n_bus)])


def injection_bounds(grid: PowerGrid) -> np.ndarray:
    """Per-bus |injection| cap: twice the summed limits of incident branches."""
    cap = np.zeros(grid.n_bus)
    for br in grid.branches:
        cap[grid.bus_index[br.from_bus]] += 2 * br.flow_limit
        cap[grid.bus_index[br.to_bus]] += 2 * br.flow_limit
    return cap


@dataclass
class GraphSample:
    node_features: np.ndarray
    adjacency: tuple
    targets: np.ndarray


@dataclass
class GraphDataset:
    """Raw (unnormalised) inputs with targets and physical bounds for one head."""

    head: str
    x: np.ndarray        # (N, n, D_I)
    y: np.ndarray        # (N, K, T) or (N, n, T)
    lower: np.ndarray    # broadcastable to y
    upper: np.ndarray
    neighbors: tuple
    pool: np.ndarray | None
    target_names: tuple[str, ...]

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i) -> GraphSample:
        return GraphSample(self.x[i], self.neighbors, self.y[i])

    def subset(self, idx) -> "GraphDataset":
        idx = np.asarray(idx)

        def take(a):
            return a[idx] if a.ndim and a.shape[0] == len(self) and a.ndim == self.y.ndim else a

        return GraphDataset(self.head, self.x[idx], self.y[idx], take(self.lower), take(self.upper),
                            self.neighbors, self.pool, self.target_names)


def build_dataset(grid: PowerGrid, scen: ScenarioSet, labels: LabelSet | None, head: str) -> GraphDataset:
    """Pair encoded inputs with head targets. ``labels=None`` gives NaN targets (inference only)."""
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}; choose from {HEADS}")
    if labels is not None and labels.n != scen.n:
        raise ValueError(f"{scen.n} scenarios but {labels.n} label records")
    x = encode_features(grid, scen)
    N, T, Z = scen.n, scen.steps, grid.n_zone
    zone_names = tuple(z.name for z in grid.zones)
    if head == "branch_flow":
        y = np.full((N, grid.n_bus, T), np.nan) if labels is None else np.transpose(labels.injections, (0, 2, 1))
        cap = injection_bounds(grid)[None, :, None]
        return GraphDataset(head, x, y, -cap, cap, grid.neighbors, None,
                            tuple(f"bus_{b.id}" for b in grid.buses))

    names = zone_names + ("system",)
    if labels is None:
        y = np.full((N, Z + 1, T), np.nan)
    else:
        zonal, system = {
            "generation": (labels.gen_zone, labels.gen_system),
            "shedding": (labels.shed_zone, labels.shed_system),
            "shed_reserve": (labels.shed_reserve_zone, labels.shed_reserve),
            "shed_nonreserve": (labels.shed_nonreserve_zone, labels.shed_nonreserve),
        }[head]
        y = np.concatenate([zonal, system[:, None, :]], axis=1)
    lower = np.zeros((1, Z + 1, 1))
    if head == "generation":
        cap = np.zeros(Z)
        for g in grid.thermal:
            cap[grid.bus_zone[grid.bus_index[g.bus]]] += g.p_max
        upper = np.concatenate([cap, [cap.sum()]])[None, :, None]
    else:
        zl = np.einsum("zb,ntb->nzt", grid.zone_masks.astype(float), scen.bus_load)
        upper = np.concatenate([zl, zl.sum(axis=1, keepdims=True)], axis=1)
    return GraphDataset(head, x, y, lower, upper, grid.neighbors, pooling_matrix(grid), names)


def split_indices(n: int, split=(0.7, 0.1, 0.2), seed: int = 0):
    """Shuffled (train, val, test) index arrays."""
    if abs(sum(split) - 1.0) > 1e-9 or min(split) < 0:
        raise ValueError(f"split fractions must be >= 0 and sum to 1, got {split}")
    perm = np.random.Generator(np.random.Philox(key=np.array([0x5E11, seed], dtype=np.uint64))).permutation(n)
    n_tr = int(round(split[0] * n))
    n_va = int(round(split[1] * n))
    return np.sort(perm[:n_tr]), np.sort(perm[n_tr:n_tr + n_va]), np.sort(perm[n_tr + n_va:])


# ----------------------------------------------------------------------------
# model


@dataclass
class SurrogateModel:
    head: str
    steps: int
    params: dict
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray     # per target row (K,) or per node (n,)
    y_std: np.ndarray
    neighbors: tuple
    pool: np.ndarray | None
    target_names: tuple[str, ...]
    seed: int = 0
    meta: dict = field(default_factory=dict)
    zero_cut: np.ndarray | None = None   # per target: predictions below this become 0

    def __post_init__(self):
        self.P = gnn.neighbor_mean_operator(self.neighbors)

    @property
    def d_in(self) -> int:
        return N_STATIC + 2 * self.steps

    @property
    def dims(self) -> dict:
        return {k: tuple(self.params[f"{k}.W"].shape) for k in gnn.LAYERS}

    def normalize_x(self, x):
        return (x - self.x_mean) / self.x_std

    def normalize_y(self, y):
        return (y - self.y_mean[None, :, None]) / self.y_std[None, :, None]

    def denormalize_y(self, y):
        return y * self.y_std[None, :, None] + self.y_mean[None, :, None]

    def forward_normalized(self, x_raw: np.ndarray) -> np.ndarray:
        x = self.normalize_x(np.asarray(x_raw, float))
        single = x.ndim == 2
        if single:
            x = x[None]
        out = gnn.forward(self.params, x, self.P, self.pool)
        return out[0] if single else out

    def predict(self, x_raw: np.ndarray, lower=None, upper=None) -> np.ndarray:
        """Physical-unit predictions, clipped to [lower, upper] when given."""
        x_raw = np.asarray(x_raw, float)
        single = x_raw.ndim == 2
        out = self.forward_normalized(x_raw[None] if single else x_raw)
        y = self.denormalize_y(out)
        if lower is not None:
            y = np.maximum(y, lower)
        if upper is not None:
            y = np.minimum(y, upper)
        if self.zero_cut is not None:
            y = np.where(y < self.zero_cut[None, :, None], 0.0, y)
        return y[0] if single else y

    def predict_dataset(self, data: GraphDataset, idx=None, clip: bool = True) -> np.ndarray:
        sub = data if idx is None else data.subset(idx)
        if clip:
            return self.predict(sub.x, sub.lower, sub.upper)
        return self.predict(sub.x)


def calibrate_zero_cut(pred: np.ndarray, truth: np.ndarray, tol: float = 1e-3) -> np.ndarray:
    """Per-target threshold that best separates zero from nonzero labels on held-out data.

    ``pred`` and ``truth`` are (N, K, T) arrays.  A prediction counts as nonzero
    when it is >= the threshold and > ``tol`` (the shedding indicator tolerance);
    the threshold minimises the number of misclassified entries, smallest on ties.
    Candidates are 0 and every distinct positive prediction.
    """
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    cuts = np.zeros(pred.shape[1])
    for k in range(pred.shape[1]):
        p = pred[:, k].ravel()
        pos = truth[:, k].ravel() > tol
        p = np.where(p > tol, p, -np.inf)
        order = np.argsort(p, kind="stable")
        ps, ys = p[order], pos[order]
        cand = np.concatenate([[0.0], np.unique(ps[np.isfinite(ps)])])
        below = np.searchsorted(ps, cand, side="left")
        missed = np.concatenate([[0], np.cumsum(ys)])[below]             # positives cut to zero
        false = (~ys).sum() - np.concatenate([[0], np.cumsum(~ys)])[below]  # zeros left nonzero
        cuts[k] = cand[int(np.argmin(missed + false))]
    return cuts


def predict_branch_flows(injections: np.ndarray, ptdf: PtdfMatrix) -> np.ndarray:
    """Flows (..., T, Q) from predicted injections (..., n_bus, T) after zero-sum rebalancing."""
    inj = np.asarray(injections, float)
    inj = inj - inj.mean(axis=-2, keepdims=True)
    return ptdf.flows(np.swapaxes(inj, -1, -2))


def evaluate_mre(pred: np.ndarray, truth: np.ndarray, floor: float = 1.0) -> np.ndarray:
    """Mean relative error (%) over the sample axis 0: |pred - truth| / max(|truth|, floor)."""
    rel = np.abs(pred - truth) / np.maximum(np.abs(truth), floor)
    return 100.0 * rel.mean(axis=0)


# ----------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 800
    patience: int = 100
    seed: int = 0
    penalty_weight: float = 1.0
    weight_decay: float = 0.1
    zero_cut: bool = True

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


@dataclass
class TrainReport:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    wall_time: float = 0.0

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        lines += [f"{e},{tr!r},{va!r}" for e, tr, va in zip(self.epochs, self.train_loss, self.val_loss)]
        return "\n".join(lines) + "\n"


def _stats(a: np.ndarray, axes) -> tuple[np.ndarray, np.ndarray]:
    mean = a.mean(axis=axes)
    std = a.std(axis=axes)
    std = np.where(std < 1e-8, 1.0, std)
    return mean, std


def fit_normalizer(data: GraphDataset, idx) -> dict:
    x = data.x[idx]
    y = data.y[idx]
    x_mean, x_std = _stats(x, (0, 1))
    y_mean, y_std = _stats(y, (0, 2))
    return {"x_mean": x_mean, "x_std": x_std, "y_mean": y_mean, "y_std": y_std}


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([stream, seed], dtype=np.uint64)))


def new_model(data: GraphDataset, steps: int, seed: int, norm: dict) -> SurrogateModel:
    dims = gnn.layer_dims(N_STATIC + 2 * steps, steps, node_level=data.pool is None)
    params = gnn.init_params(dims, _rng(seed, 0x1A17))
    return SurrogateModel(data.head, steps, params, norm["x_mean"], norm["x_std"], norm["y_mean"],
                          norm["y_std"], data.neighbors, data.pool, data.target_names, seed)


def _batch_loss(model: SurrogateModel, xn, yn, lo, up, penalty, grad: bool):
    if grad:
        out, cache = gnn.forward(model.params, xn, model.P, model.pool, cache=True)
    else:
        out = gnn.forward(model.params, xn, model.P, model.pool)
    value, g = gnn.loss_and_grad(out, yn, lo, up, penalty)
    if not grad:
        return value, None
    return value, gnn.backward(model.params, cache, g, model.P, model.pool)


def _normalized_bounds(model: SurrogateModel, data: GraphDataset, idx):
    def norm(b):
        b = np.asarray(b, float)
        if b.shape[0] == len(data):
            b = b[idx]
        return (b - model.y_mean[None, :, None]) / model.y_std[None, :, None]

    return norm(data.lower), norm(data.upper)


def train(
    data: GraphDataset,
    steps: int,
    config: TrainConfig = TrainConfig(),
    train_idx=None,
    val_idx=None,
) -> tuple[SurrogateModel, TrainReport]:
    """Adam on minibatches; returns the best-validation-loss weights and per-epoch losses."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    if train_idx is None or val_idx is None:
        tr, va, _ = split_indices(len(data), config.split, config.seed)
        train_idx = tr if train_idx is None else train_idx
        val_idx = va if val_idx is None else val_idx
    train_idx, val_idx = np.asarray(train_idx), np.asarray(val_idx)
    if not np.all(np.isfinite(data.y[train_idx])):
        raise ValueError("training targets contain NaN (failed labels?)")
    model = new_model(data, steps, config.seed, fit_normalizer(data, train_idx))
    xn_all = model.normalize_x(data.x)
    yn_all = model.normalize_y(data.y)
    lo_tr, up_tr = _normalized_bounds(model, data, train_idx)
    if len(val_idx):
        lo_va, up_va = _normalized_bounds(model, data, val_idx)
    opt = gnn.Adam(model.params, lr=config.lr, weight_decay=config.weight_decay)
    rng = _rng(config.seed, 0xBA7C)
    report = TrainReport()
    best = {k: v.copy() for k, v in model.params.items()}
    t0 = time.perf_counter()
    since_best = 0

    def rows(b, idx_local):
        return b[idx_local] if b.shape[0] == len(train_idx) else b

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_idx))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            loc = order[start:start + config.batch_size]
            gi = train_idx[loc]
            value, grads = _batch_loss(model, xn_all[gi], yn_all[gi], rows(lo_tr, loc), rows(up_tr, loc),
                                       config.penalty_weight, grad=True)
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch starting {start}; "
                    f"last train losses {report.train_loss[-5:]}"
                )
            opt.step(model.params, grads)
            total += value * len(loc)
            count += len(loc)
        train_loss = total / count
        if len(val_idx):
            val_loss, _ = _batch_loss(model, xn_all[val_idx], yn_all[val_idx], lo_va, up_va,
                                      config.penalty_weight, grad=False)
        else:
            val_loss = train_loss
        report.epochs.append(epoch)
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        if val_loss < report.best_val:
            report.best_val, report.best_epoch = val_loss, epoch
            best = {k: v.copy() for k, v in model.params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    model.params = best
    if config.zero_cut and data.head in ZERO_CUT_HEADS and len(val_idx):
        model.zero_cut = calibrate_zero_cut(model.predict_dataset(data, val_idx), data.y[val_idx])
    report.wall_time = time.perf_counter() - t0
    model.meta.update(train_config=asdict(config), best_epoch=report.best_epoch)
    logger.info("%s: best val %.4g at epoch %d (%.1fs)", data.head, report.best_val,
                report.best_epoch, report.wall_time)
    return model, report


# ----------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, model: SurrogateModel, extra_header: dict | None = None) -> None:
    header = {
        "kind": "gridrisk-checkpoint",
        "checkpoint_version": CHECKPOINT_VERSION,
        "head": model.head,
        "T": model.steps,
        "dims": {k: list(v) for k, v in model.dims.items()},
        "seed": model.seed,
        "neighbors": [list(nb) for nb in model.neighbors],
        "target_names": list(model.target_names),
        "meta": model.meta,
        **(extra_header or {}),
    }
    arrays = {k: model.params[k] for k in sorted(model.params)}
    arrays.update(x_mean=model.x_mean, x_std=model.x_std, y_mean=model.y_mean, y_std=model.y_std)
    if model.pool is not None:
        arrays["pool"] = model.pool
    if model.zero_cut is not None:
        arrays["zero_cut"] = model.zero_cut
    write_container(path, header, arrays)


def load_checkpoint(path: str | Path) -> SurrogateModel:
    header, arrays = read_container(path)
    if header.get("kind") != "gridrisk-checkpoint":
        raise ValueError(f"{path} is not a model checkpoint")
    if header["checkpoint_version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['checkpoint_version']}")
    params = {k: arrays[k] for k in arrays if "." in k}
    return SurrogateModel(
        head=header["head"], steps=header["T"], params=params,
        x_mean=arrays["x_mean"], x_std=arrays["x_std"], y_mean=arrays["y_mean"], y_std=arrays["y_std"],
        neighbors=tuple(tuple(nb) for nb in header["neighbors"]), pool=arrays.get("pool"),
        target_names=tuple(header["target_names"]), seed=header["seed"], meta=header.get("meta", {}),
        zero_cut=arrays.get("zero_cut"),
    )
