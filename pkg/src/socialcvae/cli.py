"""Command-line driver: generate data, train trials, evaluate and diagnose checkpoints.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines whose
keys are flag names (``beta-schedule`` or ``beta_schedule``). Flags given on
the command line win over the file. All outputs are written to a temporary
name and renamed into place.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import metrics as mt
from . import world
from .evaluation import DIAGNOSTICS, evaluate_model, scene_looade, scene_taug, attention_report
from .model import VARIANTS, SocialCVAE, VariantConfig
from .graph import AGGREGATORS
from .training import BetaSchedule, TrainConfig, train, write_log

CERTIFICATE_THRESHOLD = 0.5  # metres; interactive templates must exceed it


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def _metric_list(text: str) -> list[str]:
    names = [x for x in text.split(",") if x]
    bad = [n for n in names if n not in DIAGNOSTICS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown metric(s) {', '.join(bad) or text!r}; choose from {', '.join(DIAGNOSTICS)}")
    return names


def _beta_schedule(text: str) -> str:
    try:
        BetaSchedule.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def read_config(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="socialcvae", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic scene dataset")
    g.add_argument("--template", choices=world.TEMPLATES, required=True)
    g.add_argument("--count", type=_positive_int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--template-config", help="key = value overrides of the template's behaviour parameters")

    t = sub.add_parser("train", help="train seeded trials of one model variant")
    t.add_argument("--data", required=True)
    t.add_argument("--variant", choices=VARIANTS, required=True)
    t.add_argument("--aggregator", choices=AGGREGATORS, default="entmax")
    t.add_argument("--beta-schedule", type=_beta_schedule, default="constant", help="constant or cyclical, optionally ':value'")
    t.add_argument("--beta", type=float, default=None, help="default 0.03 (driving) / 0.01 (pedestrian)")
    t.add_argument("--alpha", type=float, default=None, help="auxiliary loss weight (social-cvae; default 1 driving / 0.2 pedestrian)")
    t.add_argument("--trials", type=_positive_int, default=5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=_positive_int, default=100)
    t.add_argument("--batch-size", type=_positive_int, default=None, help="default 40 (driving) / 20 (pedestrian)")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--jobs", type=_positive_int, default=1, help="trials trained in parallel processes")
    t.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="metrics rows, trial aggregates and AR_delta curves")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoints", required=True, help="comma-separated files or glob patterns")
    e.add_argument("--k", type=_int_list, default=[1, 6])
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True, help="output directory")

    d = sub.add_parser("diagnose", help="per-scene collapse diagnostics for one checkpoint")
    d.add_argument("--data", required=True)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--metrics", type=_metric_list, default=list(DIAGNOSTICS))
    d.add_argument("--out", required=True, help="output table")
    d.add_argument("--attention", help="also write the attention report here")

    for sp in (g, t, e, d):
        sp.add_argument("--config", help="key = value file with flag defaults")
    return p


def _config_path(argv) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    path = _config_path(argv)
    if path is None:
        return parser.parse_args(argv)
    try:
        cfg = read_config(path)
    except (OSError, ValueError) as exc:
        parser.error(str(exc))
    command = next((tok for tok in argv if tok in COMMANDS), None)
    if command is None:
        return parser.parse_args(argv)  # reports the missing subcommand
    sub = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in sub._actions}
    unknown = sorted(set(cfg) - set(actions))
    if unknown:
        parser.error(f"{path}: unknown key(s) {', '.join(unknown)}")
    for key in cfg:
        actions[key].required = False
    # string defaults go through each flag's type conversion, so file values
    # are validated like command-line values
    sub.set_defaults(**cfg)
    args = parser.parse_args(argv)
    for key in cfg:
        act = actions[key]
        if act.choices is not None and getattr(args, key) not in act.choices:
            parser.error(f"{path}: {key} must be one of {', '.join(map(str, act.choices))}")
    return args


# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    tpl = world.load_template_config(args.template_config, args.template) if args.template_config else world.DEFAULT_TEMPLATES[args.template]
    if tpl.name != args.template:
        raise SystemExit(f"template config is for {tpl.name!r}, not {args.template!r}")
    scenes = world.generate(tpl, args.count, args.seed)
    cert = world.interactivity_certificate(tpl, args.count, args.seed)
    world.write_dataset(args.out, scenes, {"template": tpl.name, "seed": args.seed, "certificate": round(cert, 6)})
    verdict = "independent" if tpl.name == "open-field" else ("ok" if cert > CERTIFICATE_THRESHOLD else "BELOW THRESHOLD")
    print(f"wrote {len(scenes)} scenes to {args.out}")
    print(f"interactivity certificate: {cert:.4f} m ({verdict}; threshold {CERTIFICATE_THRESHOLD} m)")
    return 0


def _train_trial(job):
    scenes, vcfg, tcfg, out_dir = job
    os.makedirs(out_dir, exist_ok=True)
    t_h, t_p = scenes[0].history_len, scenes[0].future_len
    res = train(scenes, vcfg, tcfg)
    extra = {"seed": tcfg.seed, "epochs": tcfg.epochs, "beta_schedule": f"{tcfg.beta.kind}:{tcfg.beta.value!r}", "t_h": t_h, "t_p": t_p}
    res.model.config.beta = tcfg.beta.value
    res.model.save(os.path.join(out_dir, "final.params"), extra)
    best = res.best_model()
    best.config.beta = tcfg.beta.value
    best.save(os.path.join(out_dir, "best.params"), dict(extra, best_epoch=res.best_epoch))
    write_log(os.path.join(out_dir, "loss.tsv"), res.log)
    return out_dir, res.log[-1]


def cmd_train(args) -> int:
    scenes = world.read_dataset(args.data)
    if not scenes:
        raise SystemExit(f"{args.data}: dataset is empty")
    mode = scenes[0].mode
    if args.alpha and args.variant != "social-cvae":
        raise SystemExit("--alpha only applies to the social-cvae variant")
    kw = {k: v for k, v in (("beta", args.beta), ("alpha", args.alpha)) if v is not None}
    vcfg = VariantConfig.for_mode(mode, variant=args.variant, aggregator=args.aggregator, **kw)
    schedule = BetaSchedule.parse(args.beta_schedule, vcfg.beta)
    batch = args.batch_size or (40 if mode == "driving" else 20)
    jobs = []
    for t in range(args.trials):
        tcfg = TrainConfig(epochs=args.epochs, batch_size=batch, lr=args.lr, beta=schedule, seed=args.seed + t)
        jobs.append((scenes, VariantConfig(**vars(vcfg)), tcfg, os.path.join(args.out, f"trial{t}")))
    os.makedirs(args.out, exist_ok=True)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_train_trial, jobs))
    else:
        results = [_train_trial(j) for j in jobs]
    for out_dir, last in results:
        print(f"{out_dir}: final train loss {last['train_total']:.6g}")
    return 0


def _expand_checkpoints(spec: str) -> list[str]:
    paths = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        hits = sorted(glob.glob(part))
        if not hits:
            raise SystemExit(f"no checkpoint matches {part!r}")
        paths += hits
    return paths


def _load_checked(path, scenes):
    model, header = SocialCVAE.load(path)
    t_h, t_p = scenes[0].history_len, scenes[0].future_len
    if "t_p" in header and (int(header["t_p"]) != t_p or int(header.get("t_h", t_h)) != t_h):
        raise SystemExit(f"{path}: trained for T_h={header.get('t_h')}, T_p={header['t_p']}; data has T_h={t_h}, T_p={t_p}")
    return model, header


def cmd_evaluate(args) -> int:
    scenes = world.read_dataset(args.data)
    paths = _expand_checkpoints(args.checkpoints)
    os.makedirs(args.out, exist_ok=True)
    rows, groups, curves = [], {}, {}
    for path in paths:
        model, _ = _load_checked(path, scenes)
        cfg = model.config
        diags = tuple(d for d in DIAGNOSTICS if not (d == "ar" and cfg.aggregator == "max"))
        row, _ = evaluate_model(model, scenes, trial=path, ks=tuple(args.k), seed=args.seed, diagnostics=diags)
        rows.append(row)
        label = f"{cfg.variant}_{cfg.aggregator}"
        groups.setdefault(label, []).append(row)
        if row.ar_delta is not None:
            curves.setdefault(label, []).append(row.ar_delta)
    mt.write_metrics(os.path.join(args.out, "metrics.tsv"), rows)
    mt.write_aggregate(os.path.join(args.out, "aggregate.tsv"), groups)
    for label, cs in sorted(curves.items()):
        mt.write_curve(os.path.join(args.out, f"ar_delta_{label}.tsv"), mt.DELTA_GRID, np.mean(cs, axis=0))
    for label in sorted(groups):
        summary = mt.aggregate_trials(groups[label])
        print(label + "  " + "  ".join(f"{k}={v}" for k, v in summary.items()))
    return 0


def cmd_diagnose(args) -> int:
    scenes = world.read_dataset(args.data)
    model, _ = _load_checked(args.checkpoint, scenes)
    if "ar" in args.metrics and model.config.aggregator == "max":
        raise SystemExit("AR is defined on attention weights; max aggregation has none (drop 'ar' from --metrics)")
    cols = {}
    if "ar" in args.metrics:
        report = attention_report(model, scenes)
        cols["ar"] = [mt.agent_ratio(report, sc.scene_id, sc.target) if sc.n_agents > 1 else None for sc in scenes]
        if args.attention:
            report.write(args.attention)
    if "taug" in args.metrics:
        cols["tau_g"] = scene_taug(model, scenes)
    if "looade" in args.metrics:
        cols["loo_ade"] = scene_looade(model, scenes)
    tmp = f"{args.out}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\t".join(["scene_id", "target"] + list(cols)) + "\n")
        for i, sc in enumerate(scenes):
            fh.write("\t".join([sc.scene_id, str(sc.target)] + [mt._fmt(cols[c][i]) for c in cols]) + "\n")
    os.replace(tmp, args.out)
    for c, vals in cols.items():
        defined = [v for v in vals if v is not None]
        print(f"{c}: mean {np.mean(defined):.6g} over {len(defined)} scenes" if defined else f"{c}: undefined (single-agent scenes)")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "evaluate": cmd_evaluate, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (world.DatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
