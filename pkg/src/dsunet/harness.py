"""Training, prediction, parameter accounting, and the ablation sweep."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .blocks import DSUNet
from .config import ModelConfig, RunConfig, render_config
from .container import MAGIC_CHECKPOINT, read_container, write_container
from .data import (
    Sample,
    augment_flip,
    generate_dataset,
    load_dataset,
    read_image_planes,
    write_dataset,
    write_mask,
)
from .losses import total_loss
from .metrics import compute_report
from .optim import AdamW
from .tensor import Tensor

# seed offset separating validation sample streams from training streams
VAL_SEED_OFFSET = 100_000


class TrainingDiverged(RuntimeError):
    pass


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path, model, run_config, optimizer=None):
    tensors = {name: p.data for name, p in model.named_parameters().items()}
    if optimizer is not None:
        tensors.update(optimizer.state_tensors())
    config_text = render_config(run_config)
    tensors["__config__"] = np.frombuffer(
        config_text.encode("utf-8"), dtype=np.uint8).astype(np.float32)
    write_container(path, tensors, magic=MAGIC_CHECKPOINT)


def load_checkpoint(path):
    """Returns (model, run_config, raw tensor dict)."""
    from .config import parse_config_text

    tensors = read_container(path, magic=MAGIC_CHECKPOINT)
    config_text = bytes(tensors["__config__"].astype(np.uint8)).decode("utf-8")
    run = parse_config_text(config_text)
    model = DSUNet(run.model)
    for name, p in model.named_parameters().items():
        if name not in tensors:
            raise KeyError(f"checkpoint is missing parameter {name!r}")
        if tensors[name].shape != p.data.shape:
            raise ValueError(f"checkpoint parameter {name!r} has shape "
                             f"{tensors[name].shape}, model expects {p.data.shape}")
        p.data = tensors[name].copy()
    return model, run, tensors


# -- training -----------------------------------------------------------------


@dataclass
class TrainResult:
    model: DSUNet
    run: RunConfig
    epoch_rows: list            # per-epoch mean loss breakdowns
    checkpoint_path: str
    log_path: str
    train_samples: list
    val_samples: list


LOG_HEADER = ("epoch,bce1,iou1,level1,bce2,iou2,level2,bce3,iou3,level3,total")


def _load_or_generate(run):
    if run.data_dir:
        samples = load_dataset(run.data_dir)
        n_train = min(run.n_train, len(samples))
        return samples[:n_train], samples[n_train : n_train + run.n_val]
    train, _ = generate_dataset(run.n_train, run.mode, run.model.profile, run.seed)
    val, _ = generate_dataset(run.n_val, run.mode, run.model.profile,
                              run.seed + VAL_SEED_OFFSET)
    return train, val


def train(run: RunConfig, progress=None):
    """Deterministic training loop; writes a CSV log and a final checkpoint."""
    os.makedirs(run.out_dir, exist_ok=True)
    train_samples, val_samples = _load_or_generate(run)
    model = DSUNet(run.model)
    optimizer = AdamW(model.trainable_parameters(), lr=run.lr,
                      weight_decay=run.weight_decay)
    shuffle_rng = np.random.default_rng(run.seed + 1)
    augment_rng = np.random.default_rng(run.seed + 2)

    epoch_rows = []
    n = len(train_samples)
    for epoch in range(run.epochs):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(10)
        for start in range(0, n, run.batch):
            batch_idx = order[start : start + run.batch]
            optimizer.zero_grad()
            scale = 1.0 / len(batch_idx)
            for i in batch_idx:
                sample = augment_flip(train_samples[i], augment_rng)
                outputs = model(Tensor(sample.image_main), Tensor(sample.image_aux))
                loss, br = total_loss(outputs, sample.gt, run.model)
                if not np.isfinite(br.total):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch + 1}, step {start // run.batch + 1}")
                loss.backward(np.asarray(scale, dtype=loss.dtype))
                sums += np.array([br.bce[0], br.iou[0], br.levels[0],
                                  br.bce[1], br.iou[1], br.levels[1],
                                  br.bce[2], br.iou[2], br.levels[2],
                                  br.total])
            optimizer.step()
        means = sums / n
        epoch_rows.append(means)
        if progress:
            progress(epoch + 1, means[-1])

    log_path = os.path.join(run.out_dir, "train_log.csv")
    with open(log_path, "w", encoding="utf-8") as f:
        f.write(LOG_HEADER + "\n")
        for epoch, means in enumerate(epoch_rows, start=1):
            f.write(f"{epoch}," + ",".join(f"{v:.8f}" for v in means) + "\n")

    ckpt_path = os.path.join(run.out_dir, "model.dsut")
    save_checkpoint(ckpt_path, model, run, optimizer)
    return TrainResult(model, run, epoch_rows, ckpt_path, log_path,
                       train_samples, val_samples)


# -- prediction ----------------------------------------------------------------


def _sigmoid2d(logits):
    return (1.0 / (1.0 + np.exp(-logits.astype(np.float64))))[0]


def predict_sample(model, sample: Sample):
    """sigmoid of the final decoder output, as an H x W array in [0, 1]."""
    outputs = model(Tensor(sample.image_main), Tensor(sample.image_aux))
    return _sigmoid2d(outputs.d3.data)


def predict(ckpt_path, images_dir, out_dir):
    """Export masks for every id found under images_dir/images-main."""
    model, run, _ = load_checkpoint(ckpt_path)
    main_dir = os.path.join(images_dir, "images-main")
    aux_dir = os.path.join(images_dir, "images-aux")
    ids = sorted({f.split(".")[0] for f in os.listdir(main_dir)
                  if f.endswith(".pgm")})
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for sample_id in ids:
        main = read_image_planes(main_dir, sample_id)
        aux = read_image_planes(aux_dir, sample_id)
        outputs = model(Tensor(main), Tensor(aux))
        pred = _sigmoid2d(outputs.d3.data)
        path = os.path.join(out_dir, f"{sample_id}.pgm")
        write_mask(path, pred)
        written.append(path)
    return written


# -- parameter accounting --------------------------------------------------


def format_parameter_report(model):
    total, trainable, fraction, by_module = model.parameter_counts()
    lines = [f"{'module':<16}{'total':>12}{'trainable':>12}"]
    for name, (t, tr) in sorted(by_module.items()):
        lines.append(f"{name:<16}{t:>12}{tr:>12}")
    lines.append(f"{'ALL':<16}{total:>12}{trainable:>12}")
    lines.append(f"trainable fraction: {fraction:.6f} ({100 * fraction:.4f}%)")
    return "\n".join(lines) + "\n"


# -- ablation sweep ----------------------------------------------------------


ABLATION_ORDER = ("A", "B", "C", "full")


def ablate(base_run: RunConfig):
    """Train and evaluate every fusion variant on a shared dataset and seed.

    Returns rows of (variant, means dict); the proposed configuration
    ("full") is produced last.
    """
    rows = []
    for variant in ABLATION_ORDER:
        run = replace(base_run,
                      model=replace(base_run.model, variant=variant),
                      out_dir=os.path.join(base_run.out_dir, f"variant_{variant}"))
        result = train(run)
        pairs = []
        for sample in result.val_samples:
            outputs = result.model(Tensor(sample.image_main),
                                   Tensor(sample.image_aux))
            pred = _sigmoid2d(outputs.d3.data)
            pairs.append((sample.id, pred, sample.gt.astype(np.float64)))
        report = compute_report(pairs, beta2=run.model.beta2_f)
        rows.append((variant, report.means))
    return rows


def format_ablation_table(rows):
    header = f"{'variant':<10}{'S':>9}{'F':>9}{'E':>9}{'MAE':>9}"
    lines = [header, "-" * len(header)]
    for variant, means in rows:
        label = f"{variant} (ours)" if variant == "full" else variant
        lines.append(f"{label:<10}{means['S']:>9.4f}{means['Fadp']:>9.4f}"
                     f"{means['Eadp']:>9.4f}{means['MAE']:>9.4f}")
    return "\n".join(lines) + "\n"
