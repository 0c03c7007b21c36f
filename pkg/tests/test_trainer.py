import pandas as pd
import pytest
import torch
from torch import nn

from app.core.config import DatasetSpec, EDMConfig, ModelConfig, Settings, TrainConfig
from app.core.errors import InvalidInputError, ShapeMismatchError, TrainingDivergedError
from app.services import trainer
from app.services.batching import batch
from app.services.diffusion import PreconditionedDenoiser, training_loss
from app.services.graphs import Graph
from app.services.trainer import (
    CHECKPOINT_NAME,
    EMA,
    LOSS_CURVE_NAME,
    Checkpoint,
    ema_update,
    load_denoiser,
    run_toy_recall_experiment,
    sample_from_checkpoint,
    train,
)


@pytest.fixture
def tiny_settings(tmp_path, tiny_model_config):
    return Settings(
        model=tiny_model_config,
        edm=EDMConfig(num_steps=4),
        dataset=DatasetSpec(kind="grid", count=6, rows_min=2, rows_max=3, cols_min=2, cols_max=2),
        train=TrainConfig(epochs=2, batch_size=4, ema_decay=0.9, checkpoint_every=1, output_dir=tmp_path / "run"),
    )


# ------------------------------------------------------------------
# EMA
# ------------------------------------------------------------------
def test_ema_update_extremes():
    ema = {"w": torch.ones(3)}
    params = {"w": torch.zeros(3)}
    assert torch.equal(ema_update(ema, params, 0.0)["w"], params["w"])
    assert torch.equal(ema_update(ema, params, 1.0)["w"], ema["w"])
    assert torch.allclose(ema_update(ema, params, 0.9)["w"], torch.full((3,), 0.9))


def test_ema_update_geometric_decay():
    ema = {"w": torch.tensor([5.0], dtype=torch.float64)}
    params = {"w": torch.tensor([1.0], dtype=torch.float64)}
    for _ in range(10):
        ema = ema_update(ema, params, 0.8)
    assert float(ema["w"]) == pytest.approx(1.0 + 4.0 * 0.8**10)


def test_ema_update_errors():
    with pytest.raises(InvalidInputError):
        ema_update({"w": torch.zeros(1)}, {"w": torch.zeros(1)}, 1.5)
    with pytest.raises(ShapeMismatchError):
        ema_update({"w": torch.zeros(1)}, {"v": torch.zeros(1)}, 0.5)
    with pytest.raises(ShapeMismatchError):
        ema_update({"w": torch.zeros(1)}, {"w": torch.zeros(2)}, 0.5)


def test_ema_state_dict_is_a_detached_copy():
    model = nn.Linear(2, 1)
    ema = EMA(model, 0.5)
    original = model.weight.detach().clone()
    with torch.no_grad():
        model.weight.add_(2.0)
    ema.update()
    snapshot = ema.state_dict()
    assert torch.allclose(snapshot["weight"], original + 1.0)
    snapshot["weight"].zero_()
    assert torch.allclose(ema.state_dict()["weight"], original + 1.0)
    assert torch.allclose(model.weight, original + 2.0)


# ------------------------------------------------------------------
# Training and checkpoints
# ------------------------------------------------------------------
def test_zero_epochs_saves_initial_checkpoint(tiny_settings):
    settings = tiny_settings.model_copy(update={"train": tiny_settings.train.model_copy(update={"epochs": 0})})
    result = train(settings)
    assert result.losses == []
    assert result.checkpoint.epoch == 0
    assert result.checkpoint_path.name == CHECKPOINT_NAME and result.checkpoint_path.is_file()
    for name, value in result.checkpoint.params.items():
        if name in result.checkpoint.ema_params:
            assert torch.equal(value, result.checkpoint.ema_params[name])


def test_train_writes_checkpoint_and_loss_curve(tiny_settings):
    result = train(tiny_settings)
    assert len(result.losses) == 2
    assert result.checkpoint.epoch == 2
    assert len(result.train_graphs) + len(result.test_graphs) == 6
    curve = pd.read_csv(tiny_settings.train.output_dir / LOSS_CURVE_NAME)
    assert curve["epoch"].tolist() == [1, 2]
    assert curve["loss"].tolist() == pytest.approx(result.losses)


def test_checkpoint_roundtrip_is_bitwise(tiny_settings, generator):
    result = train(tiny_settings)
    loaded = Checkpoint.load(result.checkpoint_path)
    assert loaded.epoch == result.checkpoint.epoch
    assert loaded.settings.model_dump() == tiny_settings.model_dump()
    assert loaded.node_counts == result.checkpoint.node_counts
    for name, value in result.checkpoint.params.items():
        assert torch.equal(loaded.params[name], value)

    x = torch.randn(2, 1, 6, 6, generator=generator)
    sigma = torch.tensor([0.3, 2.0])
    for use_ema in (True, False):
        with torch.no_grad():
            before = load_denoiser(result.checkpoint, use_ema)(x, None, sigma)
            after = load_denoiser(loaded, use_ema)(x, None, sigma)
        assert torch.equal(before, after)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(InvalidInputError):
        Checkpoint.load(tmp_path / "none.pt")


def test_seeded_training_is_reproducible(tiny_settings, tmp_path):
    first = train(tiny_settings).losses
    other_dir = tiny_settings.train.model_copy(update={"output_dir": tmp_path / "again"})
    second = train(tiny_settings.model_copy(update={"train": other_dir})).losses
    assert first == second


def test_divergence_reports_epoch(tiny_settings, monkeypatch):
    def diverging(*args, **kwargs):
        raise TrainingDivergedError("non-finite training loss nan")

    monkeypatch.setattr(trainer, "training_loss", diverging)
    with pytest.raises(TrainingDivergedError) as info:
        train(tiny_settings)
    assert info.value.epoch == 1
    assert info.value.last_checkpoint is None


def test_sample_from_checkpoint(tiny_settings):
    result = train(tiny_settings)
    graphs = sample_from_checkpoint(result.checkpoint, 3, seed=0)
    assert len(graphs) == 3
    assert all(g.n in set(result.checkpoint.node_counts) for g in graphs)
    again = sample_from_checkpoint(result.checkpoint, 3, seed=0)
    assert graphs == again


def test_toy_recall_pipeline_runs(tiny_settings):
    settings = tiny_settings.model_copy(update={"train": tiny_settings.train.model_copy(update={"epochs": 0})})
    recall = run_toy_recall_experiment(1, settings)
    assert 0.0 <= recall <= 1.0
    assert (settings.train.output_dir / "toy_l1" / CHECKPOINT_NAME).is_file()
    with pytest.raises(InvalidInputError):
        run_toy_recall_experiment(0, settings)


class _ZeroNet(nn.Module):
    def forward(self, x, x_sc, c_noise, node_mask=None):
        return torch.zeros_like(x)


@pytest.mark.slow
def test_two_graph_training_beats_zero_baseline(tmp_path):
    graphs = [
        Graph.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]),
        Graph.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]),
    ]
    settings = Settings(
        model=ModelConfig(
            patch_size=1, window_size=2, token_dim=16, heads=[2, 4], down_layers=[2, 2], up_layers=[2, 2]
        ),
        dataset=DatasetSpec(train_ratio=1.0),
        train=TrainConfig(epochs=3000, batch_size=2, lr=1e-3, ema_decay=0.99, checkpoint_every=1000, output_dir=tmp_path),
    )
    result = train(settings, graphs)

    zero = PreconditionedDenoiser(_ZeroNet(), settings.edm)
    clean = batch(graphs, 6).state
    generator = torch.Generator().manual_seed(0)
    baseline = torch.stack([training_loss(zero, clean, generator, settings.edm) for _ in range(2000)]).mean()
    final = sum(result.losses[-200:]) / 200
    assert final <= 0.1 * float(baseline)


@pytest.mark.parametrize("use_ema", [None, True, False])
def test_load_denoiser_picks_weights(tiny_settings, use_ema):
    checkpoint = train(tiny_settings).checkpoint
    expected = checkpoint.params if use_ema is False else {**checkpoint.params, **checkpoint.ema_params}
    loaded = load_denoiser(checkpoint, use_ema).net.state_dict()
    for name, value in expected.items():
        assert torch.equal(loaded[name], value)
