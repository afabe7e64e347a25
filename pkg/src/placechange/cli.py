"""Command-line front end: ``placechange {synth,partition,train,detect,evaluate}``.

Option values resolve in three layers: built-in defaults, then the JSON file
given by ``--config`` (either flat or with one section per subcommand), then
flags given on the command line.  The resolved values are written into the
header of every output file.  ``--jobs``, ``--out`` and ``--csv`` are left
out of headers, so outputs depend neither on the degree of parallelism nor on
where they were written.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__, anomaly, nuisance, synthgen
from .errors import ConfigError, PlaceChangeError, StructureError
from .evalharness import (
    DEFAULT_MIN_PATH,
    build_queries,
    evaluate_models,
    make_partition,
    train_place_models,
)
from .fileio import atomic_write_text, dumps, write_jsonl
from .linsvm import SvmHyper
from .mapmodel import load_experience, load_ground_truth, load_map
from .upd import PlacePartition, load_partition, save_partition

log = logging.getLogger("placechange")

EXIT_FAIL = 1
EXIT_USAGE = 2

# per-subcommand defaults; keys double as config-file keys
DEFAULTS = {
    "synth": {"out": None},
    "partition": {"map": None, "strategy": None, "k": None, "ts": None, "out": None},
    "train": {
        "map": None, "experience": None, "partition": None, "strategy": None, "k": None, "ts": None,
        "stride": 10, "out": None, "nuisance": True, "C": 1.0, "epochs": 100,
    },
    "detect": {
        "map": None, "models": None, "queries": None, "out": None, "tn": 0.0,
        "min_path": DEFAULT_MIN_PATH, "selection": "relevant",
    },
    "evaluate": {
        "map": None, "experience": None, "queries": None, "gt": None, "partition": None,
        "strategy": None, "k": None, "ts": None, "stride": 10, "tn": "0", "out": None, "csv": None,
        "min_path": DEFAULT_MIN_PATH, "selection": "relevant", "C": 1.0, "epochs": 100,
    },
}


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except (PlaceChangeError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------------------
# argument handling


def _float_list(text) -> list[float]:
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, (list, tuple)):
        return [float(t) for t in text]
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _int_list(text) -> list[int]:
    vals = _float_list(text)
    if any(v != int(v) for v in vals):
        raise UsageError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps unset flags out of the namespace so config values survive
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes (default 1)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of option values")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="placechange", parents=[common], description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic benchmark")
    s.add_argument("--out", default=S, help="output directory")

    s = sub.add_parser("partition", parents=[common], help="split a map into places")
    s.add_argument("--map", default=S)
    s.add_argument("--strategy", choices=["time", "appearance"], default=S)
    s.add_argument("--k", type=int, default=S, help="region count for the time cue")
    s.add_argument("--ts", type=float, default=S, help="NBNN threshold for the appearance cue")
    s.add_argument("--out", default=S)

    def strategy_flags(s, lists: bool):
        s.add_argument("--partition", default=S, help="partition file (overrides --strategy)")
        s.add_argument("--strategy", choices=["time", "appearance", "dense"], default=S)
        s.add_argument("--k", type=str if lists else int, default=S)
        s.add_argument("--ts", type=str if lists else float, default=S)
        s.add_argument("--stride", type=int, default=S, help="frames per place for --strategy dense")

    def svm_flags(s):
        s.add_argument("--C", type=float, default=S, help="SVM cost (default 1.0)")
        s.add_argument("--epochs", type=int, default=S, help="SVM epochs (default 100)")

    s = sub.add_parser("train", parents=[common], help="train per-place anomaly and nuisance models")
    s.add_argument("--map", default=S)
    s.add_argument("--experience", default=S)
    strategy_flags(s, lists=False)
    svm_flags(s)
    s.add_argument("--no-nuisance", dest="nuisance", action="store_false", default=S)
    s.add_argument("--out", default=S, help="model directory")

    s = sub.add_parser("detect", parents=[common], help="rank query features by change score")
    s.add_argument("--map", default=S)
    s.add_argument("--models", default=S, help="directory written by train")
    s.add_argument("--queries", default=S)
    s.add_argument("--tn", type=float, default=S, help="percent of features removed as nuisance")
    s.add_argument("--min-path", dest="min_path", type=float, default=S)
    s.add_argument("--selection", choices=["relevant", "random"], default=S)
    s.add_argument("--out", default=S)

    s = sub.add_parser("evaluate", parents=[common], help="score the pipeline against ground truth")
    s.add_argument("--map", default=S)
    s.add_argument("--experience", default=S)
    s.add_argument("--queries", default=S)
    s.add_argument("--gt", default=S)
    strategy_flags(s, lists=True)
    svm_flags(s)
    s.add_argument("--tn", type=str, default=S, help="comma list of T_n percentages")
    s.add_argument("--min-path", dest="min_path", type=float, default=S)
    s.add_argument("--selection", choices=["relevant", "random"], default=S)
    s.add_argument("--out", default=S, help="report JSON")
    s.add_argument("--csv", default=S, help="sweep CSV (default: report path with .csv)")
    return p


def resolve(ns: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags into one dict."""
    cmd = ns.command
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "verbose")}
    file_cfg = {}
    cfg_path = getattr(ns, "config", None)
    if cfg_path:
        try:
            raw = json.loads(Path(cfg_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {cfg_path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        file_cfg = raw.get(cmd, raw) if isinstance(raw.get(cmd), dict) else raw
        file_cfg = {k: v for k, v in file_cfg.items() if k not in DEFAULTS}
    if cmd == "synth":
        # synth takes SynthConfig fields from the file; seed flag wins
        out = dict(DEFAULTS["synth"])
        synth_cfg = {k: v for k, v in file_cfg.items() if k not in out and k != "jobs"}
        out.update({k: v for k, v in file_cfg.items() if k in out})
        if "seed" in given:
            synth_cfg["seed"] = given["seed"]
        out.update({k: v for k, v in given.items() if k in out})
        out["synth"] = synth_cfg
        out["seed"] = synth_cfg.get("seed", 0)
        out["jobs"] = given.get("jobs", file_cfg.get("jobs", 1))
        return out
    out = dict(DEFAULTS[cmd])
    out.update({"seed": 0, "jobs": 1})
    unknown = set(file_cfg) - set(out)
    if unknown:
        raise ConfigError(f"unknown keys for {cmd}: {sorted(unknown)}")
    out.update(file_cfg)
    out.update(given)
    return out


_NOT_IN_HEADER = ("jobs", "out", "csv")


def _header(cmd: str, cfg: dict) -> dict:
    # where outputs go and how many workers made them do not change their content
    resolved = {k: v for k, v in cfg.items() if k not in _NOT_IN_HEADER}
    return {"tool": "placechange", "version": __version__, "command": cmd, "seed": cfg["seed"], "config": resolved}


def _need(cfg: dict, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _check_frames(part: PlacePartition, vmap) -> None:
    if part.frame_count != len(vmap):
        raise StructureError(f"partition covers {part.frame_count} frames but the map has {len(vmap)}")


def _partitions(cfg: dict, vmap, lists: bool) -> list[PlacePartition]:
    if cfg.get("partition"):
        with stage("load partition"):
            part = load_partition(cfg["partition"])
            _check_frames(part, vmap)
        return [part]
    strategy = cfg.get("strategy")
    if strategy is None:
        raise UsageError("give --partition or --strategy")
    if strategy == "time":
        if cfg.get("k") is None:
            raise UsageError("--strategy time needs --k")
        params = _int_list(cfg["k"]) if lists else [int(cfg["k"])]
    elif strategy == "appearance":
        if cfg.get("ts") is None:
            raise UsageError("--strategy appearance needs --ts")
        params = _float_list(cfg["ts"]) if lists else [float(cfg["ts"])]
    else:
        params = [int(cfg["stride"])]
    with stage("partition"):
        return [make_partition(vmap, strategy, p) for p in params]


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: dict) -> int:
    _need(cfg, "out")
    with stage("config"):
        scfg = synthgen.SynthConfig.from_dict(cfg["synth"])
    with stage("generate"):
        out = synthgen.generate(scfg)
    full = dict(cfg)
    full["synth"] = scfg.to_dict()
    with stage("write outputs"):
        synthgen.write_outputs(out, cfg["out"], _header("synth", full))
    return 0


def cmd_partition(cfg: dict) -> int:
    _need(cfg, "map", "out", "strategy")
    with stage("load map"):
        vmap = load_map(cfg["map"])
    (part,) = _partitions(cfg, vmap, lists=False)
    with stage("write partition"):
        save_partition(part, cfg["out"], {"header": _header("partition", cfg)})
    return 0


def cmd_train(cfg: dict) -> int:
    _need(cfg, "map", "out")
    if cfg["nuisance"]:
        _need(cfg, "experience")
    with stage("load map"):
        vmap = load_map(cfg["map"])
    experience = None
    if cfg.get("experience"):
        with stage("load experience"):
            experience = load_experience(cfg["experience"])
    (part,) = _partitions(cfg, vmap, lists=False)
    with stage("config"):
        hyper = SvmHyper(C=float(cfg["C"]), epochs=int(cfg["epochs"]), seed=int(cfg["seed"]))
    with stage("train"):
        models = train_place_models(vmap, part, experience, hyper, with_nuisance=bool(cfg["nuisance"]),
                                    jobs=int(cfg["jobs"]))
    header = _header("train", cfg)
    d = Path(cfg["out"])
    with stage("write models"):
        d.mkdir(parents=True, exist_ok=True)
        save_partition(part, d / "partition.jsonl", {"header": header})
        for i, m in enumerate(models.anomaly):
            anomaly.save_anomaly(m, d / f"anomaly_{i:04d}.json", header)
        if models.nuisance is not None:
            for i, m in enumerate(models.nuisance):
                nuisance.save_nuisance(m, d / f"nuisance_{i:04d}.json", header)
        index = {
            "header": header,
            "regions": len(part),
            "nuisance": models.nuisance is not None,
            "untrainable": models.untrainable,
        }
        atomic_write_text(d / "models.json", dumps(index) + "\n")
    return 0


def _load_models(d: Path):
    from .evalharness import PlaceModels

    index = json.loads((d / "models.json").read_text())
    part = load_partition(d / "partition.jsonl")
    n = index["regions"]
    anom = [anomaly.load_anomaly(d / f"anomaly_{i:04d}.json") for i in range(n)]
    nuis = [nuisance.load_nuisance(d / f"nuisance_{i:04d}.json") for i in range(n)] if index["nuisance"] else None
    return PlaceModels(part, anom, nuis, list(index["untrainable"]))


def cmd_detect(cfg: dict) -> int:
    from .evalharness import random_region_index

    _need(cfg, "map", "models", "queries", "out")
    with stage("load map"):
        vmap = load_map(cfg["map"])
    with stage("load queries"):
        qmap = load_map(cfg["queries"])
    with stage("load models"):
        models = _load_models(Path(cfg["models"]))
        _check_frames(models.partition, vmap)
    tn = float(cfg["tn"])
    if tn > 0 and models.nuisance is None:
        raise UsageError("--tn > 0 needs nuisance models; retrain without --no-nuisance")
    with stage("pair queries"):
        queries, excluded = build_queries(vmap, qmap.frames, [], float(cfg["min_path"]))
    records = []
    with stage("detect"):
        for qi, q in enumerate(queries):
            if cfg["selection"] == "random":
                ridx = random_region_index(len(models.partition), int(cfg["seed"]), qi)
            else:
                ridx = models.partition.region_index(q.relevant_map_frame_id)
            fr = q.query_frame
            orig = list(range(len(fr.descriptors)))
            desc, kp = fr.descriptors, fr.keypoints
            if tn > 0:
                keep = nuisance.filter_mask(models.nuisance[ridx].svm, desc, tn)
                orig = [i for i, k in zip(orig, keep) if k]
                desc, kp = desc[keep], kp[keep]
            ranking = anomaly.rank_changes(models.anomaly[ridx], desc)
            records.append({
                "frame_id": fr.id,
                "region": ridx,
                "relevant_map_frame_id": q.relevant_map_frame_id,
                "ranking": [
                    {"index": orig[r.feature_index], "x": float(kp[r.feature_index, 0]),
                     "y": float(kp[r.feature_index, 1]), "score": r.score, "rank": r.rank}
                    for r in ranking
                ],
            })
    header = _header("detect", cfg)
    header["excluded_queries"] = [list(e) for e in excluded]
    with stage("write detections"):
        write_jsonl(cfg["out"], header, records)
    return 0


CSV_FIELDS = ["strategy", "param", "T_n", "selection", "mean_rank", "place_count",
              "untrainable_places", "missed_queries", "queries"]


def cmd_evaluate(cfg: dict) -> int:
    _need(cfg, "map", "queries", "gt", "out")
    tns = _float_list(cfg["tn"])
    if not tns:
        raise UsageError("--tn needs at least one value")
    if any(t > 0 for t in tns):
        _need(cfg, "experience")
    with stage("load map"):
        vmap = load_map(cfg["map"])
    with stage("load queries"):
        qmap = load_map(cfg["queries"])
    with stage("load ground truth"):
        boxes = load_ground_truth(cfg["gt"])
    experience = None
    if cfg.get("experience"):
        with stage("load experience"):
            experience = load_experience(cfg["experience"])
    partitions = _partitions(cfg, vmap, lists=True)
    with stage("config"):
        hyper = SvmHyper(C=float(cfg["C"]), epochs=int(cfg["epochs"]), seed=int(cfg["seed"]))
    with stage("pair queries"):
        queries, excluded = build_queries(vmap, qmap.frames, boxes, float(cfg["min_path"]))
    reports = []
    need_nuis = any(t > 0 for t in tns)
    for part in partitions:
        with stage(f"train ({part.strategy}={part.param})"):
            models = train_place_models(vmap, part, experience, hyper, with_nuisance=need_nuis, jobs=int(cfg["jobs"]))
        for t in tns:
            with stage(f"evaluate ({part.strategy}={part.param}, T_n={t})"):
                reports.append(evaluate_models(models, queries, t, int(cfg["seed"]), cfg["selection"], excluded))
    header = _header("evaluate", cfg)
    csv_path = cfg.get("csv") or str(Path(cfg["out"]).with_suffix(".csv"))
    buf = io.StringIO()
    buf.write("# config: " + dumps(header) + "\n")
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow({
            "strategy": r.params["strategy"], "param": r.params["param"], "T_n": r.params["T_n"],
            "selection": r.params["selection"], "mean_rank": repr(r.mean_rank), "place_count": r.place_count,
            "untrainable_places": r.untrainable_places, "missed_queries": r.missed_queries,
            "queries": len(r.per_query_ranks),
        })
    with stage("write report"):
        atomic_write_text(cfg["out"], dumps({"header": header, "reports": [r.to_dict() for r in reports]}) + "\n")
        atomic_write_text(csv_path, buf.getvalue())
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "partition": cmd_partition,
    "train": cmd_train,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(ns)
        return COMMANDS[ns.command](cfg)
    except UsageError as exc:
        print(f"placechange {ns.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"placechange {ns.command}: error in stage config: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except StageError as exc:
        print(f"placechange {ns.command}: error in stage {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
