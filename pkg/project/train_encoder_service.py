import logging
from pathlib import Path
from typing import Optional

from pydantic import BaseModel

from project import corpus, datagen, dense
from project.errors import ConfigError, config_from
from project.manifest import build_manifest

logger = logging.getLogger(__name__)


class TrainEncoderResponse(BaseModel):
    """
    Summary of an encoder training run.
    """

    pair_count: int
    epochs: int
    epoch_losses: list[float]
    final_loss: Optional[float] = None
    checkpoint_path: str


def train_encoder(
    pairs_path: str | Path,
    collection_path: str | Path,
    out_checkpoint: str | Path,
    dim: int = dense.DEFAULT_DIM,
    batch_size: int = 64,
    learning_rate: float = 0.05,
    epochs: int = 1,
    seed: int = 0,
    buckets: int = dense.DEFAULT_BUCKETS,
    init_scale: float = dense.DEFAULT_INIT_SCALE,
    show_progress: bool = False,
) -> TrainEncoderResponse:
    """
    Trains the dual encoder on generated pairs and writes a checkpoint.

    The encoder is initialized from the seed, so zero epochs writes the
    initialization itself.

    Args:
        pairs_path (str | Path): Pairs file written by gendata.
        collection_path (str | Path): Collection the pairs point at.
        out_checkpoint (str | Path): Checkpoint to write.
        dim (int): Dense dimension N.
        batch_size (int): In-batch negatives per question plus one; at least 2.
        learning_rate (float): SGD step size.
        epochs (int): Passes over the pairs.
        seed (int): Seed for initialization and shuffling.
        buckets (int): Number H of hashed embedding rows.
        init_scale (float): Parameters start uniform in [-init_scale, init_scale].
        show_progress (bool): Draw a progress bar on stderr.

    Returns:
        TrainEncoderResponse: Per-epoch mean losses and the checkpoint location.

    Raises:
        ConfigError: If batch_size < 2 or another setting is invalid.
        UnknownPassageError: If a pair points at a passage missing from the collection.
    """
    if batch_size < 2:
        raise ConfigError("in-batch negatives require batch >= 2")
    config = config_from(
        dense.TrainConfig,
        batch_size=batch_size,
        learning_rate=learning_rate,
        epochs=epochs,
        seed=seed,
    )
    pairs = datagen.read_pairs(pairs_path)
    collection = corpus.load_collection(collection_path)

    model = dense.EncoderModel.initialize(
        dim=dim, buckets=buckets, seed=seed, init_scale=init_scale
    )
    trained = dense.train(model, pairs, collection, config, show_progress=show_progress)

    manifest = build_manifest(
        "train",
        config={**config.model_dump(exclude={"seed"}), "dim": dim, "buckets": buckets, "init_scale": init_scale},
        seeds={"seed": seed},
        inputs=[pairs_path, collection_path],
    )
    dense.save_checkpoint(trained, out_checkpoint, manifest=manifest)
    return TrainEncoderResponse(
        pair_count=len(pairs),
        epochs=epochs,
        epoch_losses=trained.epoch_losses,
        final_loss=trained.epoch_losses[-1] if trained.epoch_losses else None,
        checkpoint_path=str(out_checkpoint),
    )
