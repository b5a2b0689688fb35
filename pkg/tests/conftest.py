import pytest

from config import RunConfig


@pytest.fixture
def tiny_cfg():
    """Small networks and short schedules for N=4, L=2 synthetic corpora"""
    return RunConfig(
        block_sizes=(4,), ref_lines=2, hidden_dims={4: 16}, depth=2, batch_sizes={4: 32},
        modes=2, kappa=0.05, perturb_bias=True,
        pretrain_epochs=10, pretrain_lr_start=0.1, pretrain_lr_floor=0.01, pretrain_step=5,
        recursive_epochs=10, recursive_lr_start=0.05, recursive_lr_floor=0.005, recursive_step=5,
        rounds=4, stop_threshold=1.01, seed=3, pu_size=4, tiling="uniform4",
    )
