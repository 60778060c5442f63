"""Command line interface.

Subcommands:
  synth             generate a perturbed glyph corpus with ground truth
  train             fit one model variant to a dataset manifest
  eval              score a checkpoint against labeled data
  assign            cluster individual image files
  align             write spatially normalized copies of a dataset
  export-templates  write a checkpoint's templates as images

Options are read from a JSON config file; the --seed, --variant, and
--k flags override the corresponding config entries. Unknown config
keys are rejected. Usage errors exit with status 2, runtime failures
with status 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from glyphclust.checkpoint import load_checkpoint, save_checkpoint
from glyphclust.corpus import (
    GlyphImage,
    load_dataset,
    load_image,
    save_image,
    write_manifest,
)
from glyphclust.metrics import report
from glyphclust.mixture import VARIANTS, LambdaTable, assign_cluster, nll_bound
from glyphclust.synth import PerturbConfig, generate_corpus
from glyphclust.training import TrainConfig, icm_step, train
from glyphclust.warp import DEFAULT_BANDWIDTH, SpatialParams, SpatialPrior, inverse_align

_CONFIG_KEYS = {
    "classes",
    "perturb",
    "data",
    "train",
    "variant",
    "k",
    "seed",
    "bandwidth",
    "prior",
    "z_dim",
}
_PERTURB_KEYS = {
    "offset_px",
    "rotation_rad",
    "shear",
    "scale",
    "morph_kernels",
    "morph_kinds",
    "morph_strength",
    "noise_sigma",
    "per_cast",
    "canvas",
    "bandwidth",
}
_TRAIN_KEYS = {
    "epochs",
    "batch_size",
    "learning_rate",
    "lambda_learning_rate",
    "kl_warmup_epochs",
    "seed",
}
_PRIOR_KEYS = {"sigma_r", "sigma_o", "sigma_s", "sigma_a"}


class CliError(Exception):
    """Runtime failure reported to stderr with exit status 1."""


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise CliError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    _check_keys(cfg, _CONFIG_KEYS, "config")
    if "perturb" in cfg:
        _check_keys(cfg["perturb"], _PERTURB_KEYS, "config perturb section")
    if "train" in cfg:
        _check_keys(cfg["train"], _TRAIN_KEYS, "config train section")
    if "prior" in cfg:
        _check_keys(cfg["prior"], _PRIOR_KEYS, "config prior section")
    return cfg


def _check_keys(section: dict, allowed: set, where: str) -> None:
    if not isinstance(section, dict):
        raise CliError(f"{where} must be a JSON object")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise CliError(f"unknown keys in {where}: {', '.join(unknown)}")


def _perturb_config(cfg: dict) -> PerturbConfig:
    section = dict(cfg.get("perturb", {}))
    for key in ("morph_kernels", "morph_kinds", "morph_strength"):
        if key in section:
            section[key] = tuple(section[key])
    try:
        return PerturbConfig(**section)
    except (TypeError, ValueError) as e:
        raise CliError(f"bad perturb settings: {e}") from e


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    section["seed"] = seed
    try:
        return TrainConfig(**section)
    except (TypeError, ValueError) as e:
        raise CliError(f"bad train settings: {e}") from e


def _prior(cfg: dict) -> SpatialPrior:
    try:
        return SpatialPrior(**cfg.get("prior", {}))
    except (TypeError, ValueError) as e:
        raise CliError(f"bad prior settings: {e}") from e


def _seed(args, cfg: dict) -> int:
    if args.seed is not None:
        return args.seed
    return int(cfg.get("seed", 0))


def _load_manifest_data(cfg: dict, config_dir: Path) -> list[GlyphImage]:
    if "data" not in cfg:
        raise CliError("config must set 'data' to a manifest path for this command")
    data = Path(cfg["data"])
    if not data.is_absolute():
        data = config_dir / data
    if not data.exists():
        raise CliError(f"dataset manifest not found: {data}")
    return load_dataset(data)


def _cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    classes = cfg.get("classes")
    if not classes:
        raise CliError("config must list 'classes' for synth")
    seed = _seed(args, cfg)
    pc = _perturb_config(cfg)
    images, truths = generate_corpus(classes, pc, seed=seed)

    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, entry in enumerate(images):
        rel = f"images/{i:05d}_{entry.char_class}_{entry.true_font}.pgm"
        save_image(entry.pixels, out / rel)
        rows.append(
            {
                "path": rel,
                "char_class": entry.char_class,
                "true_font": entry.true_font,
                "source_id": entry.source_id,
            }
        )
    alphabet = sorted({e.char_class for e in images})
    write_manifest(rows, out / "manifest.jsonl", canvas_size=pc.canvas, alphabet=alphabet)
    (out / "truth.json").write_text(
        json.dumps(truths, sort_keys=True, separators=(",", ":"), allow_nan=False)
    )
    print(f"wrote {len(images)} images to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    variant = args.variant or cfg.get("variant")
    if variant not in VARIANTS:
        raise CliError(f"variant must be one of {', '.join(VARIANTS)}; got {variant!r}")
    k = args.k if args.k is not None else cfg.get("k")
    if not isinstance(k, int) or k < 1:
        raise CliError("k must be a positive integer (flag --k or config 'k')")
    seed = _seed(args, cfg)
    dataset = _load_manifest_data(cfg, Path(args.config).parent)
    tc = _train_config(cfg, seed)
    result = train(
        dataset,
        variant,
        k,
        config=tc,
        prior=_prior(cfg),
        bandwidth=float(cfg.get("bandwidth", DEFAULT_BANDWIDTH)),
        z_dim=int(cfg.get("z_dim", 32)),
    )
    extra = {
        "trace": result.trace,
        "train_config": {
            "epochs": tc.epochs,
            "batch_size": tc.batch_size,
            "learning_rate": tc.learning_rate,
            "lambda_learning_rate": tc.lambda_learning_rate,
            "kl_warmup_epochs": tc.kl_warmup_epochs,
            "seed": tc.seed,
        },
        "n_examples": len(dataset),
    }
    save_checkpoint(args.out, result.state, result.lambda_table, extra=extra)
    print(f"trained {variant} (K={k}) on {len(dataset)} images -> {args.out}")
    return 0


def _labels_and_preds(
    entries: list[GlyphImage], state, table: LambdaTable | None
) -> dict[str, dict]:
    x = torch.as_tensor(np.stack([e.pixels for e in entries]), dtype=torch.float64)
    n = x.shape[0]
    if table is not None and table.values.shape[0] == n:
        rows = table.values
    else:
        rows = torch.zeros(n, state.n_components, 6, dtype=torch.float64)
    per_class: dict[str, dict] = {}
    for i, entry in enumerate(entries):
        pred = assign_cluster(x[i], state, rows[i])
        slot = per_class.setdefault(entry.char_class, {"true": [], "pred": [], "_idx": []})
        slot["true"].append(entry.true_font if entry.true_font is not None else -1)
        slot["pred"].append(pred)
        slot["_idx"].append(i)
    for name, slot in per_class.items():
        idx = torch.tensor(slot.pop("_idx"))
        sub = LambdaTable(values=rows[idx])
        slot["nll_bound"] = nll_bound(x[idx], state, sub)
    return per_class


def _cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    state, table, meta = load_checkpoint(args.checkpoint)
    dataset = _load_manifest_data(cfg, Path(args.config).parent)
    per_class = _labels_and_preds(dataset, state, table)
    out = report(per_class, state.variant, state.n_components)
    text = json.dumps(out, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote report to {args.out}")
    else:
        print(text)
    return 0


def _refine_lambda(x: torch.Tensor, state, iters: int = 10) -> torch.Tensor:
    rows = torch.zeros(state.n_components, 6, dtype=torch.float64)
    if state.uses_warp():
        for k in range(state.n_components):
            lam = rows[k]
            for _ in range(iters):
                lam = icm_step(x, state, k, lam)
            rows[k] = lam
    return rows


def _cmd_assign(args) -> int:
    state, _, _ = load_checkpoint(args.checkpoint)
    results = []
    for path in args.images:
        x = torch.as_tensor(load_image(path), dtype=torch.float64)
        rows = _refine_lambda(x, state)
        results.append({"path": str(path), "cluster": assign_cluster(x, state, rows)})
    text = json.dumps(results, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _cmd_align(args) -> int:
    cfg = _load_config(args.config)
    state, table, _ = load_checkpoint(args.checkpoint)
    dataset = _load_manifest_data(cfg, Path(args.config).parent)
    if not state.uses_warp():
        raise CliError(f"variant {state.variant!r} has no spatial estimates to align by")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = len(dataset)
    have_table = table is not None and table.values.shape[0] == n
    for i, entry in enumerate(dataset):
        x = torch.as_tensor(entry.pixels, dtype=torch.float64)
        rows = table.values[i] if have_table else _refine_lambda(x, state)
        k = assign_cluster(x, state, rows)
        lam = SpatialParams.from_tensor(rows[k])
        aligned = inverse_align(x, lam, state.bandwidth).clamp(0.0, 1.0)
        save_image(aligned.numpy(), out / f"{i:05d}.pgm")
    print(f"aligned {n} images -> {out}")
    return 0


def _cmd_export_templates(args) -> int:
    state, _, _ = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    probs = state.templates().detach().numpy()
    for k in range(probs.shape[0]):
        save_image(probs[k], out / f"template_{k}.pgm")
    print(f"wrote {probs.shape[0]} templates -> {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glyphclust",
        description="Cluster printed glyph images into typeface templates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="fit a model variant")
    common(p)
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--k", type=int, default=None, help="number of components")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on labeled data")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="report JSON path (default stdout)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("assign", help="cluster image files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="result JSON path (default stdout)")
    p.add_argument("images", nargs="+", help="image files (PGM or PNG)")
    p.set_defaults(func=_cmd_assign)

    p = sub.add_parser("align", help="write spatially normalized dataset images")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("export-templates", help="write templates as images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_export_templates)

    return parser


def run(argv: list[str] | None = None) -> int:
    torch.set_num_threads(1)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
