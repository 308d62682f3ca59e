"""
Toy network training and evaluation.

The toy network is a single convolution layer (FDConv or the static baseline)
followed by rectification, global average pooling and a linear classifier,
trained with softmax cross-entropy on the band dataset.
"""
from typing import NamedTuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from . import analysis
from .autodiff import Tape, backprop
from .checkpoint import METRIC_COLUMNS, Checkpoint
from .config import TrainConfig
from .data import BandDataset, gen_band_dataset, split_indices
from .layer import (
    LayerState,
    classifier_logits,
    fdconv_forward,
    init_state,
    init_static,
    record_classifier,
    record_fdconv,
    record_static_conv,
    static_conv_forward,
)
from .logging import log
from .numerics import ConsistencyError
from .optim import make_optimizer
from .utils import as_rng, timed

EVAL_CHUNK = 200
ORTHOGONALITY_TOLERANCE = 1e-8
LAYER_PREFIX = "layer."


class TrainingDiverged(RuntimeError):
    """
    Non-finite loss or gradient during training.
    """

    def __init__(self, step, loss):
        super().__init__(f"training diverged at step {step} (loss = {loss})")
        self.step = step
        self.loss = loss


class Evaluation(NamedTuple):
    accuracy: float
    confusion: np.ndarray  # true class × predicted class counts


#
# Model
#
def init_model(config: TrainConfig, rng=None):
    """
    Initial parameters of the toy network, by name.

    The classifier head starts at zero, so an untrained network predicts class
    0 for every input.
    """
    layer = config.layer
    rng = as_rng(layer.seed if rng is None else rng)
    if config.model == "fdconv":
        tensors = init_state(layer, rng).tensors()
        params = {LAYER_PREFIX + k: v for k, v in tensors.items()}
    else:
        params = {"static.weight": init_static(layer, rng)}
    params["head.weight"] = np.zeros((layer.c_out, layer.band_count))
    params["head.bias"] = np.zeros(layer.band_count)
    return params


def layer_state(params, config: TrainConfig) -> LayerState:
    n = len(LAYER_PREFIX)
    tensors = {k[n:]: v for k, v in params.items() if k.startswith(LAYER_PREFIX)}
    return LayerState.from_tensors(config.layer, tensors)


def model_weights(params, config: TrainConfig):
    """
    Stack of the convolution weights of the network (a single one for the
    static baseline).
    """
    if config.model == "fdconv":
        return layer_state(params, config).weights()
    return params["static.weight"][None]


def model_logits(params, config: TrainConfig, images):
    if config.model == "fdconv":
        features = fdconv_forward(images, layer_state(params, config))
    else:
        features = static_conv_forward(images, params["static.weight"])
    return classifier_logits(features, params["head.weight"], params["head.bias"])


def record_model(tape, images, nodes, config: TrainConfig):
    """
    Record the network on a tape and return the logits node.
    """
    x = tape.constant(images)
    if config.model == "fdconv":
        n = len(LAYER_PREFIX)
        layer = {k[n:]: v for k, v in nodes.items() if k.startswith(LAYER_PREFIX)}
        features = record_fdconv(tape, x, layer, config.layer)
    else:
        features = record_static_conv(tape, x, nodes["static.weight"])
    return record_classifier(tape, features, nodes["head.weight"], nodes["head.bias"])


def loss_and_grads(params, config: TrainConfig, images, labels):
    """
    Mean cross-entropy of a batch, its gradients and the batch logits.

    Gradients are None when the loss is not finite.
    """
    tape = Tape()
    nodes = {name: tape.parameter(value, name) for name, value in params.items()}
    logits = record_model(tape, images, nodes, config)
    loss = tape.record("cross-entropy", logits, labels=np.asarray(labels))
    value = float(tape.value(loss))
    if not np.isfinite(value):
        return value, None, tape.value(logits)
    return value, backprop(tape, loss, 1.0).named(), tape.value(logits)


#
# Evaluation
#
def check_dataset(config: TrainConfig, dataset: BandDataset):
    layer = config.layer
    if tuple(dataset.bands) != tuple(layer.bands):
        raise ValueError(
            f"dataset bands {dataset.bands} differ from the model bands {layer.bands}"
        )
    if dataset.images.shape[1] != layer.c_in:
        raise ValueError(
            f"dataset images have {dataset.images.shape[1]} channels, "
            f"the model expects C_in={layer.c_in}"
        )
    if dataset.s < layer.k:
        raise ValueError(f"image extent S={dataset.s} smaller than kernel k={layer.k}")


def predict(params, config: TrainConfig, images, workers=None):
    """
    Class predictions, ties broken towards the lowest class index.

    Images are processed in fixed chunks spread over joblib workers and
    gathered in sample order, so results do not depend on the worker count.
    """
    workers = workers or config.workers
    chunks = [images[i : i + EVAL_CHUNK] for i in range(0, len(images), EVAL_CHUNK)]
    logits = Parallel(n_jobs=workers)(
        delayed(model_logits)(params, config, chunk) for chunk in chunks
    )
    if not logits:
        return np.zeros(0, dtype=int)
    return np.argmax(np.concatenate(logits), axis=-1)


def evaluate_params(params, config: TrainConfig, dataset: BandDataset, indices=None):
    check_dataset(config, dataset)
    indices = np.arange(dataset.count) if indices is None else np.asarray(indices)
    images, labels = dataset.take(indices)
    predicted = predict(params, config, images)
    classes = config.layer.band_count
    confusion = np.zeros((classes, classes), dtype=int)
    np.add.at(confusion, (labels, predicted), 1)
    accuracy = float(np.mean(predicted == labels)) if len(labels) else float("nan")
    return Evaluation(accuracy, confusion)


def evaluate(checkpoint: Checkpoint, dataset: BandDataset, indices=None) -> Evaluation:
    """
    Accuracy and confusion counts of a checkpoint on a dataset.
    """
    return evaluate_params(checkpoint.tensors, checkpoint.config, dataset, indices)


#
# Training
#
def make_dataset(config: TrainConfig) -> BandDataset:
    return gen_band_dataset(
        config.seed,
        config.dataset_size,
        config.dataset_s,
        config.layer.bands,
        config.dataset_sigma,
    )


@timed
def train(config: TrainConfig, dataset: BandDataset = None) -> Checkpoint:
    """
    Train the toy network and return the final checkpoint.

    Batches are drawn without replacement from the training split, reshuffled
    every epoch. One metric row is logged per epoch. Raise ConsistencyError if
    the FDW weights lose orthogonality at an epoch end.
    """
    dataset = make_dataset(config) if dataset is None else dataset
    check_dataset(config, dataset)
    train_idx, held_idx = split_indices(dataset.count)
    if not len(train_idx):
        raise ValueError(f"dataset of {dataset.count} samples has no training split")

    params = init_model(config)
    optimizer = make_optimizer(config.optimizer, config.lr)
    rng = as_rng([config.seed, 1])
    per_epoch = -(-len(train_idx) // config.batch)

    rows = []
    order = losses = None
    correct = seen = 0
    for step in range(config.steps):
        pos = step % per_epoch
        if pos == 0:
            order = rng.permutation(train_idx)
            losses, correct, seen = [], 0, 0

        start = pos * config.batch
        images, labels = dataset.take(order[start : start + config.batch])
        try:
            loss, grads, logits = loss_and_grads(params, config, images, labels)
        except ValueError as ex:
            raise TrainingDiverged(step + 1, float("nan")) from ex
        if grads is None:
            raise TrainingDiverged(step + 1, loss)

        params = optimizer.step(params, grads)
        losses.append(loss)
        correct += int(np.sum(np.argmax(logits, axis=-1) == labels))
        seen += len(labels)
        log.debug("step %d: loss %.6f", step + 1, loss)

        if pos == per_epoch - 1 or step == config.steps - 1:
            epoch = step // per_epoch + 1
            held = evaluate_params(params, config, dataset, held_idx).accuracy
            similarity = float("nan")
            if config.model == "fdconv":
                similarity = analysis.max_similarity(model_weights(params, config))
                if similarity >= ORTHOGONALITY_TOLERANCE:
                    raise ConsistencyError(
                        f"epoch {epoch}: weight similarity {similarity:.3e} breaks "
                        f"orthogonality (tolerance {ORTHOGONALITY_TOLERANCE:g})"
                    )
            row = (epoch, step + 1, np.mean(losses), correct / seen, held, similarity)
            rows.append(row)
            log.info(
                "epoch %d (%s): loss %.4f, train acc %.3f, held-out acc %.3f, "
                "max similarity %.2e",
                epoch,
                config.model,
                *row[2:],
            )

    metrics = pd.DataFrame(rows, columns=list(METRIC_COLUMNS), dtype=float)
    return Checkpoint(config, params, config.steps, metrics)


def compare(config: TrainConfig, dataset: BandDataset = None):
    """
    Train FDConv and the static baseline under the same data and schedule.

    Return both checkpoints by model name.
    """
    dataset = make_dataset(config) if dataset is None else dataset
    _, held_idx = split_indices(dataset.count)
    result = {}
    for model in ("fdconv", "static"):
        result[model] = checkpoint = train(config.replace(model=model), dataset)
        accuracy = evaluate(checkpoint, dataset, held_idx).accuracy
        log.info("%s held-out accuracy: %.4f", model, accuracy)
    return result
