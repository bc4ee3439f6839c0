"""
Main command line entry point to manage all other sub commands

Reports are UTF-8 JSON written to stdout, or to the `--out` file. Exit
codes: 0 success, 1 validation error, 2 I/O error.
"""
import json

import click

from yoloret.log import get_log, set_debug

logger = get_log()


class ReportingGroup(click.Group):
    """Maps validation errors to exit code 1 and I/O errors to 2"""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.show()
            ctx.exit(1)
        except ValueError as e:
            logger.error("%s", e)
            ctx.exit(1)
        except OSError as e:
            logger.error("%s", e)
            ctx.exit(2)


def _emit(report, out):
    text = json.dumps(report, indent=2)
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
        logger.info("Wrote report to %s", out)
    else:
        click.echo(text)


def _load_model(config, weights, seed=0, partial=False):
    from yoloret.config import load_config
    from yoloret.model import build_model
    from yoloret.weights import weights_load

    cfg = load_config(config)
    model = build_model(cfg, seed=seed)
    if weights:
        if partial:
            model.load_partial(weights_load(weights))
        else:
            model.load_state_dict(weights_load(weights))
        logger.info("Loaded weights from %s", weights)
    return model


config_option = click.option("--config", "-c", help="Model config JSON; defaults when omitted")
out_option = click.option("--out", "-o", help="Write the JSON report here instead of stdout")
partial_option = click.option(
    "--partial", is_flag=True, help="Accept weights covering part of the model, e.g. from truncate"
)


# Main entry point:
@click.group(cls=ReportingGroup)
@click.option("--verbose", is_flag=True)
@click.pass_context
def cli(ctx, verbose):
    """Lightweight detector tools: detect, evaluate, benchmark, train."""
    ctx.obj = {"verbose": verbose}
    if verbose:
        set_debug(True)


# COMMAND: DETECT
@cli.command()
@config_option
@click.option("--weights", "-w", help="Weight container (.yrw)")
@partial_option
@click.option("--image", "-i", required=True, help="P6 PPM image")
@click.option("--conf", type=float, help="Confidence threshold (default from config)")
@click.option("--nms", "nms_thresh", type=float, help="NMS IoU threshold (default from config)")
@click.option("--seed", type=int, default=0, help="Init seed when no weights are given")
@out_option
def detect(config, weights, partial, image, conf, nms_thresh, seed, out):
    """Run the detector on one image."""
    from yoloret.dataio import read_ppm

    model = _load_model(config, weights, seed, partial)
    tensor = read_ppm(image)
    dets = model.detect(tensor, conf_thresh=conf, nms_thresh=nms_thresh)
    _, _, height, width = tensor.shape
    _emit(
        {
            "image": image,
            "width": width,
            "height": height,
            "detections": [d.to_dict() for d in dets],
        },
        out,
    )


# COMMAND: EVAL
@cli.command("eval")
@config_option
@click.option("--weights", "-w", help="Weight container (.yrw)")
@partial_option
@click.option("--dataset", "-d", required=True, help="JSON-lines dataset file")
@click.option("--metric", type=click.Choice(["voc", "coco"]), default="voc", show_default=True)
@click.option("--conf", type=float, help="Score threshold (default: eval_conf_thresh of the config)")
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True,
              help="Threads for per-image matching")
@click.option("--seed", type=int, default=0, help="Init seed when no weights are given")
@click.option("--progress", is_flag=True, help="Show a progress bar")
@out_option
def eval_(config, weights, partial, dataset, metric, conf, workers, seed, progress, out):
    """Score detections on an annotated dataset (VOC mAP or COCO APs)."""
    from yoloret.dataio import read_annotations
    from yoloret.metrics import evaluate_coco, evaluate_voc
    from yoloret.model import detect_records

    model = _load_model(config, weights, seed, partial)
    records = read_annotations(dataset, num_classes=model.cfg.num_classes)
    conf = model.cfg.eval_conf_thresh if conf is None else conf
    all_dets = detect_records(model, records, conf_thresh=conf, progress=progress)
    all_gts = [rec.boxes for rec in records]
    if metric == "voc":
        report = evaluate_voc(all_dets, all_gts, max_workers=workers)
    else:
        report = evaluate_coco(all_dets, all_gts, max_workers=workers)
    report["dataset"] = dataset
    report["conf_thresh"] = conf
    _emit(report, out)


# COMMAND: BENCH
@cli.command()
@config_option
@click.option("--weights", "-w", help="Weight container (.yrw)")
@partial_option
@click.option("--iters", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--warmup", type=click.IntRange(min=0), default=5, show_default=True)
@click.option("--resolution", type=int, help="Input side (default from config)")
@click.option("--postprocess", is_flag=True, help="Time decoding and NMS too")
@click.option("--seed", type=int, default=0)
@out_option
def bench(config, weights, partial, iters, warmup, resolution, postprocess, seed, out):
    """Batch-1 latency on synthetic inputs, plus MACs and parameter counts."""
    from yoloret.bench import benchmark_run

    model = _load_model(config, weights, seed, partial)
    _emit(
        benchmark_run(
            model,
            resolution=resolution,
            warmup=warmup,
            iters=iters,
            seed=seed,
            include_postprocess=postprocess,
        ),
        out,
    )


# COMMAND: TRUNCATE
@cli.command()
@click.option("--in", "in_path", required=True, help="Input weight container")
@click.option("--out", "out_path", required=True, help="Output weight container")
@click.option("--blocks", type=int, default=2, show_default=True,
              help="Number of trailing backbone blocks to drop")
@click.option("--tap-stride", type=int, default=32, show_default=True,
              help="Stride of the deepest backbone tap; its consumers are dropped too")
def truncate(in_path, out_path, blocks, tap_stride):
    """Drop the parameters of the last backbone blocks from a weight file.

    Load the result with --partial: tensors that read the deepest backbone
    tap are removed with the blocks and start from a fresh initialization.
    """
    from yoloret.weights import truncate_weights, weights_load, weights_save

    store = weights_load(in_path)
    trimmed = truncate_weights(store, blocks, tap_stride=tap_stride)
    weights_save(trimmed, out_path)
    _emit(
        {
            "in": in_path,
            "out": out_path,
            "blocks_removed": blocks,
            "tensors_before": len(store),
            "tensors_after": len(trimmed),
            "values_before": store.num_values(),
            "values_after": trimmed.num_values(),
        },
        None,
    )


# COMMAND: TRAIN-TOY
@cli.command("train-toy")
@config_option
@click.option("--dataset", "-d", required=True, help="JSON-lines dataset file")
@click.option("--epochs-p1", type=click.IntRange(min=0), default=10, show_default=True)
@click.option("--epochs-p2", type=click.IntRange(min=0), default=10, show_default=True)
@click.option("--lr-p1", type=float, default=1e-3, show_default=True)
@click.option("--lr-p2", type=float, default=1e-4, show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--init-weights", help="Weight container to transfer the first backbone blocks from")
@click.option("--transfer-blocks", type=click.IntRange(min=0), default=0, show_default=True,
              help="Leading backbone blocks loaded from --init-weights and frozen in phase 1")
@click.option("--weights-out", help="Save trained weights here")
@click.option("--curve", help="Save the per-step loss curve as CSV")
@click.option("--evaluate", is_flag=True, help="Report VOC AP50 on the training set")
@click.option("--progress", is_flag=True, help="Show a progress bar")
@out_option
def train_toy(
    config,
    dataset,
    epochs_p1,
    epochs_p2,
    lr_p1,
    lr_p2,
    batch_size,
    seed,
    init_weights,
    transfer_blocks,
    weights_out,
    curve,
    evaluate,
    progress,
    out,
):
    """Two-phase training (frozen transfer layers, then all) at desk scale."""
    from yoloret.backbone import init_partial_transfer
    from yoloret.config import TrainConfig, load_config
    from yoloret.dataio import read_annotations
    from yoloret.metrics import evaluate_voc
    from yoloret.model import build_model, detect_records, with_backbone
    from yoloret.train import prepare_samples, save_loss_curve, train_two_phase
    from yoloret.weights import WeightStore, weights_load, weights_save

    cfg = load_config(config)
    train_cfg = TrainConfig(
        epochs_phase1=epochs_p1,
        epochs_phase2=epochs_p2,
        lr_phase1=lr_p1,
        lr_phase2=lr_p2,
        batch_size=batch_size,
        seed=seed,
    )
    records = read_annotations(dataset, num_classes=cfg.num_classes)
    model = build_model(cfg, seed=seed)
    if init_weights:
        store = weights_load(init_weights)
        backbone = init_partial_transfer(
            model.backbone, store, transfer_blocks, seed=seed, prefix="backbone."
        )
        model = with_backbone(model, backbone)
    elif transfer_blocks:
        raise click.UsageError("--transfer-blocks needs --init-weights")

    samples = prepare_samples(records, cfg.input_resolution)
    model, loss_curve = train_two_phase(model, samples, train_cfg, progress=progress)
    if curve:
        save_loss_curve(loss_curve, curve)
    if weights_out:
        weights_save(WeightStore.from_model(model), weights_out)

    report = {
        "dataset": dataset,
        "seed": seed,
        "num_images": len(records),
        "steps": int(len(loss_curve)),
        "frozen_tensors": len(model.frozen),
        "initial_loss": float(loss_curve["total"].iloc[0]) if len(loss_curve) else None,
        "final_loss": float(loss_curve["total"].iloc[-1]) if len(loss_curve) else None,
    }
    if evaluate:
        all_dets = detect_records(model, records, conf_thresh=cfg.eval_conf_thresh)
        report["AP50"] = evaluate_voc(all_dets, [r.boxes for r in records])["mAP"]
    _emit(report, out)


# COMMAND: FLOPS
@cli.command()
@config_option
@click.option("--resolution", type=int, help="Input side (default from config)")
@out_option
def flops(config, resolution, out):
    """Static MAC and parameter counts of a configuration."""
    from yoloret.config import load_config
    from yoloret.flops import UNIT, macs_by_prefix
    from yoloret.model import build_model

    cfg = load_config(config)
    model = build_model(cfg, seed=0)
    res = cfg.input_resolution if resolution is None else resolution
    shapes = model.describe(res)
    by_part = macs_by_prefix(shapes, depth=1)
    _emit(
        {
            "resolution": res,
            "unit": UNIT,
            "macs": sum(by_part.values()),
            "macs_by_part": by_part,
            "params": model.count_params(),
            "weight_bytes": model.weight_bytes(),
            "weight_precision": "float32",
        },
        out,
    )


# COMMAND: MAKE-SHAPES
@cli.command("make-shapes")
@click.argument("directory")
@click.option("--num-images", type=click.IntRange(min=1), default=50, show_default=True)
@click.option("--size", type=int, default=64, show_default=True)
@click.option("--num-classes", type=int, default=2, show_default=True)
@click.option("--max-objects", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def make_shapes(directory, num_images, size, num_classes, max_objects, seed):
    """Write a synthetic rectangles dataset (PPM + JSON lines) to DIRECTORY."""
    from yoloret.synthetic import ShapesMaker

    maker = ShapesMaker(
        num_images=num_images,
        size=size,
        num_classes=num_classes,
        min_box=max(1, size // 4),
        max_box=max(1, (size * 5) // 8),
        max_objects=max_objects,
        seed=seed,
    )
    path = maker.write(directory)
    _emit({"dataset": path, "num_images": num_images}, None)
