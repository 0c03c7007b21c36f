"""Training loop with EMA weights, checkpoints and the toy recall experiment."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from torch import Tensor, nn

from app.core.config import Settings, settings_from_snapshot, settings_snapshot
from app.core.errors import InvalidInputError, ShapeMismatchError, TrainingDivergedError
from app.services.attribute_encoding import EncodingScheme
from app.services.backbone import build_network, count_parameters
from app.services.batching import batch
from app.services.datasets import load_dataset, permutation_augment, split
from app.services.diffusion import PreconditionedDenoiser, generate_graphs, training_loss
from app.services.evaluation import recall_isomorphic
from app.services.graphs import Graph

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.pt"
LOSS_CURVE_NAME = "loss_curve.csv"
TOY_RECALL_SAMPLES = 100


def ema_update(ema_params: Mapping[str, Tensor], params: Mapping[str, Tensor], decay: float) -> dict[str, Tensor]:
    """ema ← decay·ema + (1 − decay)·params, entry by entry."""
    if not 0.0 <= decay <= 1.0:
        raise InvalidInputError(f"EMA decay must lie in [0, 1], got {decay}")
    if ema_params.keys() != params.keys():
        raise ShapeMismatchError("EMA and model hold different parameter names")
    updated = {}
    for name, shadow in ema_params.items():
        value = params[name].detach()
        if shadow.shape != value.shape:
            raise ShapeMismatchError(f"{name}: EMA shape {tuple(shadow.shape)} != parameter {tuple(value.shape)}")
        updated[name] = decay * shadow + (1.0 - decay) * value.to(shadow)
    return updated


class EMA:
    """
    Running average of the model weights.

      ema = EMA(model, 0.999)
      optimizer.step(); ema.update()
      model.load_state_dict({**model.state_dict(), **ema.state_dict()})
    """

    def __init__(self, model: nn.Module, decay: float) -> None:
        self.model = model
        self.decay = decay
        self.shadow = {name: p.detach().clone() for name, p in model.named_parameters() if p.requires_grad}

    def update(self) -> None:
        params = {name: p for name, p in self.model.named_parameters() if name in self.shadow}
        self.shadow = ema_update(self.shadow, params, self.decay)

    def state_dict(self) -> dict[str, Tensor]:
        return {name: t.clone() for name, t in self.shadow.items()}


# ------------------------------------------------------------------
# Checkpoints
# ------------------------------------------------------------------
@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    ema_params: dict[str, Tensor]
    settings: Settings
    epoch: int
    rng_state: dict
    optimizer: Optional[dict] = None
    node_counts: list[int] = field(default_factory=list)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "params": self.params,
                "ema_params": self.ema_params,
                "settings": settings_snapshot(self.settings),
                "epoch": self.epoch,
                "rng_state": self.rng_state,
                "optimizer": self.optimizer,
                "node_counts": self.node_counts,
            },
            path,
        )
        logger.info("checkpoint epoch=%d written to %s", self.epoch, path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        if not path.is_file():
            raise InvalidInputError(f"checkpoint not found: {path}")
        payload = torch.load(path, map_location="cpu", weights_only=True)
        missing = {"params", "ema_params", "settings", "epoch", "rng_state"} - payload.keys()
        if missing:
            raise InvalidInputError(f"checkpoint {path} lacks {sorted(missing)}")
        return cls(
            params=payload["params"],
            ema_params=payload["ema_params"],
            settings=settings_from_snapshot(payload["settings"]),
            epoch=int(payload["epoch"]),
            rng_state=payload["rng_state"],
            optimizer=payload.get("optimizer"),
            node_counts=[int(n) for n in payload.get("node_counts", [])],
        )


def encoding_scheme(settings: Settings) -> Optional[EncodingScheme]:
    model = settings.model
    if not model.attributed:
        return None
    return EncodingScheme(model.encoding, model.num_node_types, model.num_edge_types)


def build_denoiser(settings: Settings) -> PreconditionedDenoiser:
    return PreconditionedDenoiser(build_network(settings.model), settings.edm)


def load_denoiser(checkpoint: Checkpoint, use_ema: Optional[bool] = None) -> PreconditionedDenoiser:
    """Denoiser in eval mode carrying the EMA weights (default per config) or the raw ones."""
    use_ema = checkpoint.settings.train.sample_with_ema if use_ema is None else use_ema
    denoiser = build_denoiser(checkpoint.settings)
    state = dict(checkpoint.params)
    if use_ema:
        state.update(checkpoint.ema_params)
    denoiser.net.load_state_dict(state)
    return denoiser.eval()


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    checkpoint_path: Path
    losses: list[float]
    num_parameters: int
    train_graphs: list[Graph]
    test_graphs: list[Graph]


def _rng_state(generator: torch.Generator, rng: np.random.Generator) -> dict:
    return {"torch": generator.get_state(), "numpy": rng.bit_generator.state}


def _snapshot(
    denoiser: PreconditionedDenoiser,
    ema: EMA,
    settings: Settings,
    epoch: int,
    generator: torch.Generator,
    rng: np.random.Generator,
    optimizer: torch.optim.Optimizer,
    node_counts: Sequence[int],
) -> Checkpoint:
    return Checkpoint(
        params={k: v.detach().clone() for k, v in denoiser.net.state_dict().items()},
        ema_params=ema.state_dict(),
        settings=settings,
        epoch=epoch,
        rng_state=_rng_state(generator, rng),
        optimizer=optimizer.state_dict(),
        node_counts=list(node_counts),
    )


def train(settings: Settings, graphs: Optional[Sequence[Graph]] = None) -> TrainResult:
    """Adam on the EDM objective with an EMA copy; checkpoints every few epochs and at the end."""
    cfg = settings.train
    output_dir = Path(cfg.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = output_dir / CHECKPOINT_NAME

    torch.manual_seed(cfg.seed)
    generator = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    data = list(graphs) if graphs is not None else load_dataset(settings.dataset)
    train_graphs, test_graphs = split(data, settings.dataset.train_ratio, settings.dataset.seed)
    if not train_graphs:
        raise InvalidInputError("training set is empty")
    train_graphs = permutation_augment(train_graphs, settings.dataset.permutations, rng)
    node_counts = [g.n for g in train_graphs]
    max_n = max(node_counts)
    scheme = encoding_scheme(settings)

    denoiser = build_denoiser(settings)
    num_parameters = count_parameters(denoiser)
    optimizer = torch.optim.Adam(denoiser.parameters(), lr=cfg.lr, betas=cfg.adam_betas, eps=cfg.adam_eps)
    ema = EMA(denoiser.net, cfg.ema_decay)
    logger.info(
        "training on %d graphs (max %d nodes, %d parameters) for %d epochs",
        len(train_graphs), max_n, num_parameters, cfg.epochs,
    )

    losses: list[float] = []
    last_good: Optional[Path] = None
    checkpoint = _snapshot(denoiser, ema, settings, 0, generator, rng, optimizer, node_counts)
    if cfg.epochs == 0:
        checkpoint.save(checkpoint_path)
        return TrainResult(checkpoint, checkpoint_path, losses, num_parameters, train_graphs, test_graphs)

    denoiser.train()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_graphs))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = batch([train_graphs[i] for i in order[start : start + cfg.batch_size]], max_n, scheme)
            try:
                loss = training_loss(
                    denoiser, chunk.state, generator, settings.edm,
                    node_mask=chunk.node_mask, entry_mask=chunk.entry_mask(),
                )
            except TrainingDivergedError as exc:
                logger.error("training diverged at epoch %d; last checkpoint %s", epoch, last_good)
                raise TrainingDivergedError(
                    str(exc), epoch=epoch, last_checkpoint=None if last_good is None else str(last_good)
                ) from exc
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            ema.update()
            epoch_losses.append(loss.item())

        mean_loss = float(np.mean(epoch_losses))
        losses.append(mean_loss)
        logger.info("epoch=%d loss=%.6f lr=%g", epoch, mean_loss, optimizer.param_groups[0]["lr"])

        if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
            checkpoint = _snapshot(denoiser, ema, settings, epoch, generator, rng, optimizer, node_counts)
            last_good = checkpoint.save(checkpoint_path)
            pd.DataFrame({"epoch": range(1, len(losses) + 1), "loss": losses}).to_csv(
                output_dir / LOSS_CURVE_NAME, index=False
            )

    return TrainResult(checkpoint, checkpoint_path, losses, num_parameters, train_graphs, test_graphs)


def sample_from_checkpoint(
    checkpoint: Checkpoint,
    count: int,
    apply_random_permutation: bool = False,
    seed: Optional[int] = None,
    use_ema: Optional[bool] = None,
) -> list[Graph]:
    """Draw node counts from the training sizes, then sample each size group."""
    settings = checkpoint.settings
    denoiser = load_denoiser(checkpoint, use_ema)
    generator = torch.Generator().manual_seed(settings.train.seed if seed is None else seed)
    rng = np.random.default_rng(settings.train.seed if seed is None else seed)
    if not checkpoint.node_counts:
        raise InvalidInputError("checkpoint carries no training node counts")
    sizes = rng.choice(checkpoint.node_counts, size=count)
    graphs: list[Graph] = []
    for n in sorted(set(sizes.tolist())):
        graphs.extend(
            generate_graphs(
                denoiser, int((sizes == n).sum()), int(n), settings.edm, generator,
                apply_random_permutation, scheme=encoding_scheme(settings),
            )
        )
    return graphs


def run_toy_recall_experiment(l: int, settings: Settings) -> float:
    """Train on the regular-toy set under l fixed permutations and report isomorphism recall."""
    if l < 1:
        raise InvalidInputError(f"permutation count must be at least 1, got {l}")
    dataset = settings.dataset.model_copy(update={"kind": "regular-toy", "permutations": l, "train_ratio": 1.0})
    train_cfg = settings.train.model_copy(update={"output_dir": Path(settings.train.output_dir) / f"toy_l{l}"})
    run_settings = settings.model_copy(update={"dataset": dataset, "train": train_cfg})

    toy = load_dataset(dataset)
    result = train(run_settings, toy)
    generator = torch.Generator().manual_seed(train_cfg.seed)
    denoiser = load_denoiser(result.checkpoint)
    generated = generate_graphs(
        denoiser, TOY_RECALL_SAMPLES, toy[0].n, run_settings.edm, generator, scheme=encoding_scheme(run_settings)
    )
    recall = recall_isomorphic(generated, toy)
    logger.info("toy recall l=%d: %.3f", l, recall)
    return recall
