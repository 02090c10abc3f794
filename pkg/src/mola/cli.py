"""Command-line front end.

One executable, one command per invocation.  Configuration comes from an
INI file with sections [dataset], [model], [paradigm], [train], [output],
[analysis]; values resolve with precedence

    built-in defaults < config file < --set section.key=value < --seed/--run-dir

Artifacts land in a run directory (checkpoints/, records/, reports/,
manifest.json).  Every JSON/CSV report embeds the tool version and a hash
of the fully resolved config, so any file can be traced to the exact
settings that produced it.

Exit codes: 0 success, 1 user/config error, 2 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import csv
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, _io, adapt, analysis, data, model, train


class UserError(Exception):
    """Bad input from the user: config, flags, or missing files."""


DEFAULTS = {
    "dataset": {
        "source": "synth",
        "csv_path": "",
        "n_points": 2000,
        "d_channels": 2,
        "components": "",
        "noise_std": 0.1,
        "synth_seed": 0,
        "lookback": 16,
        "horizon": 32,
        "split": "0.7,0.1,0.2",
    },
    "model": {"kind": "linear", "hidden": "", "activation": "relu"},
    "paradigm": {
        "kind": "mtf",
        "segments": 4,
        "experts": 4,
        "rank": 1,
        "placement": "",
        "routing": "soft",
    },
    "train": {
        "learning_rate": 1e-3,
        "batch_size": 32,
        "max_epochs": 10,
        "patience": 3,
        "seed": 0,
        "adaptation_learning_rate": "",
        "pretrain_max_epochs": 5,
        "pretrain_patience": 2,
    },
    "output": {"run_dir": "", "formats": "json,csv"},
    # defaults are the reference configuration for the closed-form counts
    "analysis": {
        "n_layers": 6,
        "d_model": 512,
        "d_ff": 1024,
        "rank": 8,
        "experts": 4,
        "segments": 6,
        "probe_steps": "1,16,32",
    },
}


# --- config resolution ---


def _convert(section: str, key: str, raw: str):
    proto = DEFAULTS[section][key]
    try:
        if isinstance(proto, int):
            return int(raw)
        if isinstance(proto, float):
            return float(raw)
    except ValueError:
        want = "an integer" if isinstance(proto, int) else "a number"
        raise UserError(f"config value {section}.{key}={raw!r} is not {want}") from None
    return str(raw)


def _apply(cfg, user_set, section, key, raw):
    if section not in cfg:
        raise UserError(f"unknown config section [{section}]")
    if key not in cfg[section]:
        raise UserError(
            f"unknown config key {section}.{key}; valid keys: {sorted(cfg[section])}"
        )
    cfg[section][key] = _convert(section, key, raw)
    user_set.add(f"{section}.{key}")


def resolve_config(args) -> tuple[dict, str]:
    cfg = copy.deepcopy(DEFAULTS)
    user_set: set[str] = set()
    if args.config:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        if not cp.read(args.config):
            raise UserError(f"config file not found: {args.config}")
        for section in cp.sections():
            for key, raw in cp[section].items():
                _apply(cfg, user_set, section, key, raw)
    for item in args.set or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UserError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        path, raw = item.split("=", 1)
        section, key = path.split(".", 1)
        _apply(cfg, user_set, section, key, raw)
    if args.seed is not None:
        cfg["train"]["seed"] = int(args.seed)
        user_set.add("train.seed")
    if args.run_dir is not None:
        cfg["output"]["run_dir"] = str(args.run_dir)
        user_set.add("output.run_dir")
    _validate(cfg, user_set)
    cfg_hash = hashlib.sha256(_io.canonical_dumps(cfg).encode("utf-8")).hexdigest()
    return cfg, cfg_hash


_SYNTH_ONLY = ("n_points", "d_channels", "components", "noise_std", "synth_seed")
_MOLA_ONLY = ("segments", "experts", "rank", "placement", "routing")


def _validate(cfg: dict, user_set: set[str]) -> None:
    ds = cfg["dataset"]
    if ds["source"] not in ("synth", "csv"):
        raise UserError(f"dataset.source must be synth or csv, got {ds['source']!r}")
    if ds["source"] == "csv":
        if not ds["csv_path"]:
            raise UserError("dataset.csv_path is required when dataset.source=csv")
        for key in _SYNTH_ONLY:
            if f"dataset.{key}" in user_set:
                raise UserError(f"dataset.{key} only applies to dataset.source=synth")
    elif "dataset.csv_path" in user_set and ds["csv_path"]:
        raise UserError("dataset.csv_path only applies to dataset.source=csv")
    if ds["lookback"] < 1 or ds["horizon"] < 1:
        raise UserError("dataset.lookback and dataset.horizon must be >= 1")
    mode, _ = _parse_split(ds["split"])
    if mode == "counts" and ds["source"] == "synth":
        raise UserError("a counts split requires dataset.source=csv; use ratios for synth")
    if cfg["model"]["kind"] == "linear" and cfg["model"]["hidden"]:
        raise UserError("model.hidden only applies to model.kind=mlp2")
    pk = cfg["paradigm"]["kind"]
    if pk not in ("arf", "mtf", "mola"):
        raise UserError(f"paradigm.kind must be arf, mtf, or mola, got {pk!r}")
    if pk != "mola":
        for key in _MOLA_ONLY:
            if f"paradigm.{key}" in user_set:
                raise UserError(f"paradigm.{key} only applies to paradigm.kind=mola")
    else:
        k = cfg["paradigm"]["segments"]
        if k < 1 or ds["horizon"] % k != 0:
            raise UserError(
                f"mola needs segments to divide the horizon exactly: "
                f"horizon={ds['horizon']}, segments={k}"
            )
        routing = cfg["paradigm"]["routing"]
        if routing not in ("soft", "one-hot"):
            raise UserError(f"paradigm.routing must be soft or one-hot, got {routing!r}")
        if routing == "one-hot" and cfg["paradigm"]["experts"] != k:
            raise UserError(
                f"one-hot routing pins segment k to expert k and needs "
                f"paradigm.experts == paradigm.segments; got experts="
                f"{cfg['paradigm']['experts']}, segments={k}"
            )


def _parse_split(raw: str):
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 3 or not all(parts):
        raise UserError(f"dataset.split needs three comma-separated values, got {raw!r}")
    try:
        if any("." in p for p in parts):
            return "ratios", tuple(float(p) for p in parts)
        return "counts", tuple(int(p) for p in parts)
    except ValueError:
        raise UserError(f"unparseable dataset.split: {raw!r}") from None


def _parse_components(raw: str):
    comps = []
    for part in raw.split(";"):
        part = part.strip()
        if not part:
            continue
        name, _, argstr = part.partition("(")
        name = name.strip()
        if argstr and not argstr.endswith(")"):
            raise UserError(f"bad component syntax (missing close paren): {part!r}")
        kwargs = {}
        for pair in argstr.rstrip(")").split(","):
            pair = pair.strip()
            if not pair:
                continue
            if "=" not in pair:
                raise UserError(f"component arguments must be key=value, got {pair!r}")
            k, v = pair.split("=", 1)
            try:
                kwargs[k.strip()] = float(v)
            except ValueError:
                raise UserError(f"component argument {pair!r} is not numeric") from None
        try:
            comps.append(data.SynthComponent(kind=name, **kwargs))
        except (TypeError, ValueError) as e:
            raise UserError(f"bad component {part!r}: {e}") from None
    return tuple(comps)


# --- config -> domain objects ---


def _synth_spec(cfg: dict) -> data.SynthSpec:
    ds = cfg["dataset"]
    comps = _parse_components(ds["components"]) or data.default_synth_spec().components
    return data.SynthSpec(
        n_points=ds["n_points"],
        d_channels=ds["d_channels"],
        components=comps,
        noise_std=ds["noise_std"],
        seed=ds["synth_seed"],
    )


def _dataset(cfg: dict) -> data.SeriesDataset:
    ds_cfg = cfg["dataset"]
    mode, vals = _parse_split(ds_cfg["split"])
    if ds_cfg["source"] == "synth":
        raw = data.generate_synthetic(_synth_spec(cfg), split=vals)
    else:
        raw = data.load_csv(
            ds_cfg["csv_path"],
            ratios=vals if mode == "ratios" else None,
            counts=vals if mode == "counts" else None,
        )
    return data.standardize(raw)


def _encoder_spec(cfg: dict) -> model.EncoderSpec:
    hidden_raw = cfg["model"]["hidden"]
    hidden = tuple(int(x) for x in hidden_raw.split(",") if x.strip()) if hidden_raw else ()
    return model.EncoderSpec(
        kind=cfg["model"]["kind"],
        in_len=cfg["dataset"]["lookback"],
        hidden=hidden,
        activation=cfg["model"]["activation"],
    )


def _train_config(cfg: dict, stage: str) -> train.TrainConfig:
    t = cfg["train"]
    if stage == "pretrain":
        return train.TrainConfig(
            learning_rate=t["learning_rate"],
            batch_size=t["batch_size"],
            max_epochs=t["pretrain_max_epochs"],
            patience=t["pretrain_patience"],
            seed=t["seed"],
        )
    lr = t["learning_rate"]
    if stage == "adapt" and t["adaptation_learning_rate"]:
        try:
            lr = float(t["adaptation_learning_rate"])
        except ValueError:
            raise UserError(
                f"train.adaptation_learning_rate is not a number: "
                f"{t['adaptation_learning_rate']!r}"
            ) from None
    return train.TrainConfig(
        learning_rate=lr,
        batch_size=t["batch_size"],
        max_epochs=t["max_epochs"],
        patience=t["patience"],
        seed=t["seed"],
    )


def _placement(cfg: dict):
    raw = cfg["paradigm"]["placement"]
    names = [s.strip() for s in raw.split(",") if s.strip()]
    return names or None


# --- run directory plumbing ---


def _run_dir_path(cfg: dict, cfg_hash: str) -> Path:
    if cfg["output"]["run_dir"]:
        return Path(cfg["output"]["run_dir"])
    root = Path(os.environ.get("MOLA_RUN_ROOT", "runs"))
    return root / f"run-{cfg_hash[:8]}"


def _prepare_run_dir(args, cfg: dict, cfg_hash: str) -> Path:
    rd = _run_dir_path(cfg, cfg_hash)
    if rd.exists():
        if args.fail_if_exists:
            raise UserError(f"run directory already exists: {rd}")
        print(f"warning: run directory exists, overwriting artifacts: {rd}", file=sys.stderr)
    for sub in ("checkpoints", "records", "reports"):
        (rd / sub).mkdir(parents=True, exist_ok=True)
    _io.write_json(
        rd / "manifest.json",
        {
            "tool_version": __version__,
            "config_hash": cfg_hash,
            "command": args.command,
            "config": cfg,
        },
    )
    return rd


def _write_report(rd: Path, name: str, cfg_hash: str, payload: dict) -> None:
    path = rd / "reports" / name
    _io.write_json(path, {"tool_version": __version__, "config_hash": cfg_hash, **payload})
    print(f"wrote {path}")


def _write_report_csv(path: Path, rows: list[dict], cfg_hash: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# tool_version={__version__}\n# config_hash={cfg_hash}\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {path}")


def _require_checkpoint(path: Path, hint: str):
    if not path.exists():
        raise UserError(f"missing checkpoint {path}; {hint}")
    return path


# --- commands ---


def cmd_synth(cfg: dict, cfg_hash: str, rd: Path) -> int:
    if cfg["dataset"]["source"] != "synth":
        raise UserError("the synth command requires dataset.source=synth")
    spec = _synth_spec(cfg)
    mode, vals = _parse_split(cfg["dataset"]["split"])
    ds = data.generate_synthetic(spec, split=vals)
    path = rd / "data.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", *ds.channel_names])
        for i, row in enumerate(ds.values):
            writer.writerow([i, *[repr(float(v)) for v in row]])
    print(f"wrote {path} ({ds.values.shape[0]} rows, {ds.values.shape[1]} channels)")
    return 0


def cmd_pretrain(cfg: dict, cfg_hash: str, rd: Path) -> int:
    if cfg["paradigm"]["kind"] != "mola":
        raise UserError(
            "pretrain is stage one of the mola paradigm; set paradigm.kind=mola "
            "(arf/mtf use train-baseline)"
        )
    ds = _dataset(cfg)
    seg = cfg["dataset"]["horizon"] // cfg["paradigm"]["segments"]
    foundation, rec = train.pretrain(ds, _encoder_spec(cfg), seg, _train_config(cfg, "pretrain"))
    state = model.model_state(foundation)
    state["config_hash"] = cfg_hash
    _io.write_json(rd / "checkpoints" / "foundation.json", state)
    train.write_run_record(rec, rd / "records" / "pretrain.jsonl")
    _write_report(rd, "pretrain_summary.json", cfg_hash, {"summary": train.run_summary(rec)})
    print(f"pretrain: best_val={rec.best_val:.6g} stop={rec.stop_reason}")
    return 0


def cmd_adapt(cfg: dict, cfg_hash: str, rd: Path) -> int:
    if cfg["paradigm"]["kind"] != "mola":
        raise UserError("adapt requires paradigm.kind=mola")
    ds = _dataset(cfg)
    horizon = cfg["dataset"]["horizon"]
    segments = cfg["paradigm"]["segments"]
    f_path = rd / "checkpoints" / "foundation.json"
    if not f_path.exists():
        raise UserError(f"no foundation checkpoint at {f_path}; run the pretrain command first")
    foundation = model.load_checkpoint(f_path)
    seg = horizon // segments
    if foundation.head_out != seg:
        raise UserError(
            f"foundation checkpoint predicts {foundation.head_out} steps per segment, "
            f"but horizon/segments = {horizon}/{segments} = {seg}; "
            "re-run pretrain with the current config"
        )
    if foundation.lookback != cfg["dataset"]["lookback"]:
        raise UserError(
            f"foundation checkpoint lookback {foundation.lookback} != configured "
            f"lookback {cfg['dataset']['lookback']}"
        )
    plan = adapt.make_segment_plan(horizon, segments, lookback=foundation.lookback)
    adapter = adapt.new_adapter(
        foundation,
        plan,
        n_experts=cfg["paradigm"]["experts"],
        rank=cfg["paradigm"]["rank"],
        seed=cfg["train"]["seed"],
        placement=_placement(cfg),
    )
    if cfg["paradigm"]["routing"] == "one-hot":
        adapt.freeze_one_hot_routing(adapter)
    adapter, records = train.adapt_all_segments(
        foundation, plan, adapter, ds, _train_config(cfg, "adapt")
    )
    state = adapt.adapter_state(adapter)
    state["config_hash"] = cfg_hash
    _io.write_json(rd / "checkpoints" / "adapter.json", state)
    for k, rec in enumerate(records, start=1):
        train.write_run_record(rec, rd / "records" / f"segment-{k}.jsonl")
    _write_report(
        rd, "adapt_summary.json", cfg_hash,
        {"summaries": [train.run_summary(r) for r in records]},
    )
    for rec in records:
        print(f"{rec.stage}: best_val={rec.best_val:.6g} stop={rec.stop_reason}")
    return 0


def cmd_train_baseline(cfg: dict, cfg_hash: str, rd: Path) -> int:
    pk = cfg["paradigm"]["kind"]
    if pk == "mola":
        raise UserError("train-baseline handles arf and mtf; mola uses pretrain + adapt")
    ds = _dataset(cfg)
    spec = _encoder_spec(cfg)
    tc = _train_config(cfg, "baseline")
    if pk == "arf":
        m, rec = train.arf_train(ds, spec, tc)
    else:
        m, rec = train.mtf_train(ds, spec, cfg["dataset"]["horizon"], tc)
    state = model.model_state(m)
    state["config_hash"] = cfg_hash
    _io.write_json(rd / "checkpoints" / f"{pk}.json", state)
    train.write_run_record(rec, rd / "records" / f"{pk}.jsonl")
    _write_report(rd, f"{pk}_summary.json", cfg_hash, {"summary": train.run_summary(rec)})
    print(f"{pk}: best_val={rec.best_val:.6g} stop={rec.stop_reason}")
    return 0


def _forecaster_from_checkpoints(pk: str, rd: Path, horizon: int):
    cp = rd / "checkpoints"
    if pk == "mtf":
        m = model.load_checkpoint(
            _require_checkpoint(cp / "mtf.json", "run train-baseline first")
        )
        if m.head_out != horizon:
            raise UserError(
                f"mtf checkpoint predicts {m.head_out} steps but dataset.horizon={horizon}"
            )
        return lambda h: model.forecast(m, h)
    if pk == "arf":
        m = model.load_checkpoint(
            _require_checkpoint(cp / "arf.json", "run train-baseline first")
        )
        return lambda h: model.ar_f_forecast(m, h, horizon)
    foundation = model.load_checkpoint(
        _require_checkpoint(cp / "foundation.json", "run pretrain first")
    )
    adapter = adapt.load_adapter(
        _require_checkpoint(cp / "adapter.json", "run adapt first")
    )
    if adapter.plan.horizon != horizon:
        raise UserError(
            f"adapter covers horizon {adapter.plan.horizon} but dataset.horizon={horizon}"
        )
    return lambda h: train.mola_forecast(foundation, adapter, h)


def cmd_eval(args, cfg: dict, cfg_hash: str, rd: Path) -> int:
    pk = cfg["paradigm"]["kind"]
    ds = _dataset(cfg)
    lookback = cfg["dataset"]["lookback"]
    horizon = cfg["dataset"]["horizon"]
    forecast_fn = _forecaster_from_checkpoints(pk, rd, horizon)
    metrics = train.evaluate_forecaster(forecast_fn, ds, lookback, horizon, split=args.split)
    payload = {"paradigm": pk, "split": args.split, "metrics": metrics}
    if args.destandardized:
        payload["destandardized_metrics"] = _destandardized_metrics(
            forecast_fn, ds, lookback, horizon, args.split
        )
    _write_report(rd, f"eval_{pk}_{args.split}.json", cfg_hash, payload)
    rows = [
        {"step": str(r["step"]), "mse": r["mse"], "mae": r["mae"]}
        for r in metrics["per_step"]
    ]
    rows.append({"step": "avg", "mse": metrics["mse"], "mae": metrics["mae"]})
    _write_report_csv(rd / "reports" / f"eval_{pk}_{args.split}.csv", rows, cfg_hash)
    print(f"{pk} {args.split}: mse={metrics['mse']:.6g} mae={metrics['mae']:.6g}")
    return 0


def _destandardized_metrics(forecast_fn, ds, lookback, horizon, split):
    stats = ds.norm_stats
    raw_ds = data.SeriesDataset(
        values=data.destandardize(ds.values, stats),
        channel_names=ds.channel_names,
        train_end=ds.train_end,
        val_end=ds.val_end,
    )

    def raw_fn(history):
        pred = forecast_fn((history - stats.mean) / stats.std)
        return pred * stats.std + stats.mean

    return train.evaluate_forecaster(raw_fn, raw_ds, lookback, horizon, split=split)


def _per_step_loss_samples(forecast_fn, ds, lookback, horizon, split):
    wins = data.windows(ds, lookback, horizon, split)
    rows = []
    for w in wins:
        err = np.asarray(forecast_fn(w.history)) - w.label
        rows.append((err**2).mean(axis=1))
    return np.asarray(rows)


def cmd_analyze(kind: str, cfg: dict, cfg_hash: str, rd: Path) -> int:
    if kind == "params":
        a = cfg["analysis"]
        pc = analysis.param_counts(
            a["n_layers"], a["d_model"], a["d_ff"], a["rank"], a["experts"], a["segments"]
        )
        _write_report(
            rd, "params.json", cfg_hash,
            {
                "n_mola": pc.n_mola,
                "n_backbone": pc.n_backbone,
                "ratio": pc.ratio,
                "inputs": {
                    "n_layers": a["n_layers"], "d_model": a["d_model"], "d_ff": a["d_ff"],
                    "rank": a["rank"], "experts": a["experts"], "segments": a["segments"],
                },
            },
        )
        print(f"n_mola={pc.n_mola} n_backbone={pc.n_backbone} ratio={pc.ratio:.3f}")
        return 0

    if kind == "bottleneck":
        m = model.load_checkpoint(
            _require_checkpoint(
                rd / "checkpoints" / "mtf.json", "train the mtf baseline first"
            )
        )
        rep = analysis.dataset_bottleneck(m, _dataset(cfg), split="test")
        _write_report(rd, "bottleneck.json", cfg_hash, rep)
        print(
            f"mean_min_error_sq={rep['mean_min_error_sq']:.6g} "
            f"(rank {rep['rank']}, {rep['n_windows']} windows)"
        )
        return 0

    if kind == "variance":
        ds = _dataset(cfg)
        lookback = cfg["dataset"]["lookback"]
        horizon = cfg["dataset"]["horizon"]
        samples = {}
        for name in ("arf", "mtf", "mola"):
            try:
                fn = _forecaster_from_checkpoints(name, rd, horizon)
            except UserError:
                continue
            samples[name] = _per_step_loss_samples(fn, ds, lookback, horizon, "test")
        if not samples:
            raise UserError("no usable checkpoints in this run directory; train a paradigm first")
        blocks = {}
        for name, arr in samples.items():
            rep = analysis.variance_report(arr)
            blocks[name] = {
                "n_samples": int(arr.shape[0]),
                "var_total": rep.var_total,
                "var_sum": float(rep.var_terms.sum()),
                "cov_sum": rep.cov_sum,
                "identity_gap": rep.identity_gap,
            }
        names = list(samples)
        comparisons = [
            analysis.variance_compare(samples[a], samples[b], label_a=a, label_b=b)
            for i, a in enumerate(names)
            for b in names[i + 1 :]
        ]
        _write_report(
            rd, "variance.json", cfg_hash,
            {"split": "test", "horizon": horizon, "paradigms": blocks,
             "comparisons": comparisons},
        )
        for name, block in blocks.items():
            print(f"{name}: var_total={block['var_total']:.6g} cov_sum={block['cov_sum']:.6g}")
        return 0

    if kind == "probe":
        steps = [int(s) for s in cfg["analysis"]["probe_steps"].split(",") if s.strip()]
        ds = _dataset(cfg)
        rep = analysis.per_step_probe(
            ds, cfg["dataset"]["lookback"], steps, config=_train_config(cfg, "baseline")
        )
        payload = {k: v for k, v in rep.items() if k != "clouds"}
        _write_report(rd, "probe.json", cfg_hash, payload)
        rows = []
        for e, cloud in enumerate(rep["clouds"]):
            for widx, (x0, x1) in enumerate(cloud):
                rows.append(
                    {"entry": e, "step": rep["steps"][e], "seed": rep["seeds"][e],
                     "window": widx, "x0": float(x0), "x1": float(x1)}
                )
        _write_report_csv(rd / "reports" / "probe_points.csv", rows, cfg_hash)
        for pair in rep["pairwise"]:
            print(
                f"steps {pair['step_i']} vs {pair['step_j']}: "
                f"disparity={pair['disparity']:.4f}"
            )
        return 0

    if kind == "compare":
        if cfg["paradigm"]["kind"] != "mola":
            raise UserError(
                "compare trains all three paradigms and needs the mola settings; "
                "set paradigm.kind=mola"
            )
        ds = _dataset(cfg)
        rep = analysis.paradigm_compare(
            ds,
            _encoder_spec(cfg),
            horizon=cfg["dataset"]["horizon"],
            segments=cfg["paradigm"]["segments"],
            config=_train_config(cfg, "baseline"),
            n_experts=cfg["paradigm"]["experts"],
            rank=cfg["paradigm"]["rank"],
            placement=_placement(cfg),
            routing=cfg["paradigm"]["routing"],
            pretrain_config=_train_config(cfg, "pretrain"),
        )
        _write_report(rd, "compare.json", cfg_hash, rep)
        rows = []
        for name in ("arf", "mtf", "mola"):
            metrics = rep["paradigms"][name]["metrics"]
            for r in metrics["per_step"]:
                rows.append(
                    {"paradigm": name, "step": str(r["step"]), "mse": r["mse"], "mae": r["mae"]}
                )
            rows.append(
                {"paradigm": name, "step": "avg", "mse": metrics["mse"], "mae": metrics["mae"]}
            )
        _write_report_csv(rd / "reports" / "compare.csv", rows, cfg_hash)
        for key, val in rep["delta"].items():
            print(f"{key}: {val:+.2f}%")
        return 0

    raise UserError(f"unknown analyze kind {kind!r}")


# --- entry point ---


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(f"{message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="mola",
        description="Segment-adapted low-rank forecasting workbench",
    )
    sub = parser.add_subparsers(dest="command")

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        p.add_argument("--run-dir", help="run directory (default $MOLA_RUN_ROOT/run-<hash>)")
        p.add_argument("--seed", type=int, help="override train.seed")
        p.add_argument("--fail-if-exists", action="store_true",
                       help="refuse to write into an existing run directory")
        return p

    add("synth", "generate a synthetic dataset CSV")
    add("pretrain", "train the frozen per-segment foundation model")
    add("adapt", "fit a mixture of low-rank experts per forecast segment")
    add("train-baseline", "train the arf or mtf baseline")
    p_eval = add("eval", "evaluate the configured paradigm's checkpoints")
    p_eval.add_argument("--split", choices=["train", "val", "test"], default="test")
    p_eval.add_argument("--destandardized", action="store_true",
                        help="also report metrics on the original data scale")
    p_analyze = add("analyze", "run a numerical analysis over run artifacts")
    p_analyze.add_argument(
        "kind", choices=["bottleneck", "params", "variance", "probe", "compare"]
    )
    add("compare", "train and compare all three paradigms (alias for analyze compare)")
    return parser


def _dispatch(args) -> int:
    cfg, cfg_hash = resolve_config(args)
    rd = _prepare_run_dir(args, cfg, cfg_hash)
    if args.command == "synth":
        return cmd_synth(cfg, cfg_hash, rd)
    if args.command == "pretrain":
        return cmd_pretrain(cfg, cfg_hash, rd)
    if args.command == "adapt":
        return cmd_adapt(cfg, cfg_hash, rd)
    if args.command == "train-baseline":
        return cmd_train_baseline(cfg, cfg_hash, rd)
    if args.command == "eval":
        return cmd_eval(args, cfg, cfg_hash, rd)
    kind = args.kind if args.command == "analyze" else "compare"
    return cmd_analyze(kind, cfg, cfg_hash, rd)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("error: a subcommand is required", file=sys.stderr)
            return 1
        return _dispatch(args)
    except UserError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError, configparser.Error) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit:
        raise
    except Exception as e:  # anything else is a bug, not a usage problem
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
