"""Make the skicl package importable from the repository root and share small configs."""
import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "skicl_pipeline"))

from skicl.config import (  # noqa: E402
    DataConfig,
    EncoderConfig,
    ExperimentConfig,
    ModelConfig,
    ReplayConfig,
    SyntheticConfig,
    TgconvConfig,
    TrainerConfig,
)


def tiny_model_config(n_vars=3, input_len=8, horizon=2, edge_kind="binary", batch_norm=False) -> ModelConfig:
    return ModelConfig(
        n_vars=n_vars,
        input_len=input_len,
        horizon=horizon,
        edge_kind=edge_kind,
        edge_hidden=4,
        encoder=EncoderConfig(channels=(2, 2), kernel_sizes=(2, 2), dilation=1, batch_norm=batch_norm, embedding_dim=4),
        tgconv=TgconvConfig(num_blocks=1, channels=2, kernel_size=2, dilations=(1,)),
    )


def tiny_experiment(output_dir, n_regimes=2, selector="ski-cl", epochs=2, seed=0) -> ExperimentConfig:
    return ExperimentConfig(
        data=DataConfig(
            source="synthetic",
            synthetic=SyntheticConfig(n_vars=4, total_steps=160 * n_regimes, n_regimes=n_regimes, seed=seed),
        ),
        model=tiny_model_config(n_vars=None, input_len=8, horizon=2),
        trainer=TrainerConfig(epochs=epochs, batch_size=8, lr=1e-3, seed=seed, patience=10),
        replay=ReplayConfig(selector=selector, budget_ratio=0.1, n_parts=5, max_modes=3),
        output_dir=str(output_dir),
    )


@pytest.fixture
def model_config() -> ModelConfig:
    return tiny_model_config()
