"""Command-line entry point: simulate, fuse, evaluate, reason, qagen and a full pipeline run."""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence

from .config import RunConfig, config_to_dict, load_config, replace
from .errors import ConfigError, SchemaError, ScenefuseError
from .fusion import ReliabilityLedger
from .metrics import ConsistencyReport, METRIC_ORDER, format_table, scene_counts
from .pipeline import run_ica, run_naive_union
from .qagen import FAMILIES, generate_qa
from .scene import Calibration, GroundTruthScene, SceneFacts, SceneSummary
from .serialize import canonical_dumps, decision_to_dict, deserialize, dumps, from_dict, read_jsonl, write_jsonl
from .sim import default_calibration, scene_seed, simulate_scene
from .ssre import make_backend, run_ssre

EXIT_OK = 0
EXIT_UNVERIFIED = 7
DEFAULT_QUERY = "Given the current scene, what is the safest immediate action for the ego vehicle?"


# ---------------------------------------------------------------- helpers

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, files: Iterable[Path], cfg: RunConfig, command: str, extra: Optional[dict] = None) -> Path:
    """Manifest with per-file content hashes; ``created_unix`` is the only wall-clock field."""
    entries = []
    for f in sorted(set(files), key=lambda p: p.relative_to(out).as_posix()):
        entries.append({"path": f.relative_to(out).as_posix(), "sha256": sha256_file(f), "bytes": f.stat().st_size})
    manifest = {"command": command, "run_id": cfg.run_id, "seed": cfg.seed, "config_fingerprint": cfg.fingerprint(),
                "files": entries, "created_unix": int(time.time())}
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def manifest_without_clock(path: Path) -> dict:
    m = json.loads(Path(path).read_text(encoding="utf-8"))
    m.pop("created_unix", None)
    return m


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ScenefuseError(f"cannot create output directory {path}: {exc}") from exc
    return path


def _pmap(fn: Callable, items: Sequence[Any], jobs: int) -> list:
    """Order-preserving map, in worker processes when ``jobs`` > 1."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def read_calibration(path: Optional[str]) -> Optional[Calibration]:
    if path is None:
        return None
    return deserialize(Calibration, Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- simulate

def _simulate_one(args: tuple) -> tuple[str, str, str]:
    cfg, index, calib = args
    sid = f"scene-{index:05d}"
    sc = simulate_scene(cfg.sim, scene_seed(cfg.seed, index), sid, index * cfg.sim.timestamp_step_us, calib)
    return dumps(sc.ground_truth), dumps(sc.facts), canonical_dumps(sc.labels_dict())


def simulate_run(cfg: RunConfig, n: int, out: Path) -> list[Path]:
    out = _ensure_dir(Path(out))
    calib = default_calibration()
    rows = _pmap(_simulate_one, [(cfg, i, calib) for i in range(n)], cfg.jobs)
    paths = {"ground_truth": out / "ground_truth.jsonl", "facts": out / "facts.jsonl", "labels": out / "labels.jsonl"}
    for k, (name, p) in enumerate(paths.items()):
        p.write_text("".join(r[k] + "\n" for r in rows), encoding="utf-8")
    cal_path = out / "calibration.json"
    cal_path.write_text(dumps(calib) + "\n", encoding="utf-8")
    return [*paths.values(), cal_path]


# ---------------------------------------------------------------- fuse

def fuse_run(facts: Sequence[SceneFacts], calib: Optional[Calibration], cfg: RunConfig, no_ica: bool = False,
             ledger: Optional[ReliabilityLedger] = None) -> tuple[list[SceneSummary], list[dict]]:
    """Scenes are fused in timestamp order because the reliability ledger carries across them."""
    if not no_ica and calib is None:
        raise ConfigError("fusion needs a calibration file (--calibration)")
    ledger = ledger if ledger is not None else ReliabilityLedger(cfg.fusion.beta, cfg.fusion.initial_reliability)
    summaries, traces = [], []
    for f in sorted(facts, key=lambda x: (x.timestamp_us, x.scene_id)):
        if no_ica:
            summaries.append(run_naive_union(f, cfg))
            traces.append({"scene_id": f.scene_id, "mode": "naive_union"})
        else:
            r = run_ica(f, calib, cfg, ledger)
            summaries.append(r.summary)
            traces.append(r.trace)
    return summaries, traces


# ---------------------------------------------------------------- evaluate

def _by_scene(items: Sequence[Any], what: str) -> dict[str, Any]:
    out = {}
    for x in items:
        if x.scene_id in out:
            raise SchemaError("scene_id", f"duplicate scene id {x.scene_id} in {what}")
        out[x.scene_id] = x
    return out


def evaluate_run(runs: dict[str, Sequence[SceneSummary]], gt: Sequence[GroundTruthScene],
                 facts: Optional[Sequence[SceneFacts]], calib: Optional[Calibration], cfg: RunConfig) -> list[ConsistencyReport]:
    gts = _by_scene(gt, "ground truth")
    fcts = _by_scene(facts, "fact sets") if facts is not None else {}
    if facts is not None and set(fcts) != set(gts):
        raise SchemaError("scene_id", "fact-set scene ids do not match ground-truth scene ids")
    reports = []
    for label, summaries in runs.items():
        sums = _by_scene(summaries, label)
        if set(sums) != set(gts):
            raise SchemaError("scene_id", f"scene ids of {label} do not match ground-truth scene ids")
        rep = ConsistencyReport(label)
        for sid in sorted(gts):
            rep.scenes.append(scene_counts(sums[sid], gts[sid], fcts.get(sid), calib, cfg.metrics))
        reports.append(rep)
    return reports


def plot_reports(reports: Sequence[ConsistencyReport], path: Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    keys = [k for k in METRIC_ORDER if k != "HE"]
    fig, (ax, ax_he) = plt.subplots(1, 2, figsize=(10, 4), gridspec_kw={"width_ratios": [len(keys), 1.5]})
    width = 0.8 / max(1, len(reports))
    for r_i, rep in enumerate(reports):
        m = rep.micro()
        xs = [k + r_i * width for k in range(len(keys))]
        ax.bar(xs, [m[k] if m[k] is not None else 0.0 for k in keys], width, label=rep.label)
        ax_he.bar([r_i], [m["HE"] if m["HE"] is not None else 0.0], 0.6, label=rep.label)
    ax.set_xticks([k + 0.4 - width / 2 for k in range(len(keys))])
    ax.set_xticklabels([f"{k} (%)" for k in keys])
    ax.set_ylim(0, 105)
    ax.legend(loc="lower right")
    ax_he.set_xticks(range(len(reports)))
    ax_he.set_xticklabels([r.label for r in reports])
    ax_he.set_title("HE per scene")
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def write_report(reports: Sequence[ConsistencyReport], out: Path, plot: bool = True) -> list[Path]:
    out = _ensure_dir(Path(out))
    rj = out / "report.json"
    rj.write_text(canonical_dumps({"reports": [r.to_dict() for r in reports]}) + "\n", encoding="utf-8")
    rt = out / "report.txt"
    rt.write_text(format_table(reports), encoding="utf-8")
    files = [rj, rt]
    if plot:
        files.append(plot_reports(reports, out / "metrics.png"))
    return files


# ---------------------------------------------------------------- reason

def reason_run(summaries: Sequence[SceneSummary], query: str, aux: Optional[str], cfg: RunConfig,
               replay: Optional[list[dict]] = None) -> tuple[list[dict], list[dict], bool]:
    """(decision rows, trace records, all verified)."""
    rows, trace = [], []
    all_ok = True
    for s in sorted(summaries, key=lambda x: (x.timestamp_us, x.scene_id)):
        recs = [r for r in replay if r.get("scene_id") == s.scene_id] if replay is not None else None
        backend = make_backend(cfg.ssre, recs)
        res = run_ssre(s, query, aux, cfg.ssre, backend)
        all_ok &= res.verified
        rows.append({"scene_id": s.scene_id, "query": query, "decision": decision_to_dict(res.decision),
                     "justification": res.justification, "verified": res.verified, "iterations": res.iterations})
        trace.extend(dict(r, scene_id=s.scene_id) for r in res.trace)
    return rows, trace, all_ok


# ---------------------------------------------------------------- qagen

def _load_scenes(path: str) -> list[Any]:
    rows = read_jsonl(path)
    out = []
    for i, r in enumerate(rows):
        ents = r.get("entities", []) if isinstance(r, dict) else []
        is_gt = "rng_seed" in r or any("gt_id" in e for e in ents)
        cls = GroundTruthScene if is_gt else SceneSummary
        try:
            out.append(from_dict(cls, r))
        except SchemaError as exc:
            raise SchemaError(exc.path, exc.rule, f"{path}:{i + 1}") from exc
    return out


def _qagen_one(args: tuple) -> list[dict]:
    scene, families, n, seed, cfg = args
    return [p.to_dict() for p in generate_qa(scene, families, n, seed, cfg.qa, cfg.vocabulary)]


def qagen_run(scenes: Sequence[Any], families: Sequence[str], n: int, seed: int, cfg: RunConfig) -> list[dict]:
    """``n`` pairs per scene; the per-scene seed is derived from ``seed`` and the scene position."""
    jobs = [(s, tuple(families), n, scene_seed(seed, i), cfg) for i, s in enumerate(scenes)]
    return [row for rows in _pmap(_qagen_one, jobs, cfg.jobs) for row in rows]


# ---------------------------------------------------------------- pipeline

def pipeline_run(cfg: RunConfig, n: int, out: Path, query: str = DEFAULT_QUERY, qa_per_scene: int = 4,
                 plot: bool = True) -> Path:
    """Simulate, fuse with and without coordination, evaluate, reason and generate QA; returns the manifest."""
    out = _ensure_dir(Path(out))
    files = simulate_run(cfg, n, out)
    calib = read_calibration(str(out / "calibration.json"))
    facts = read_jsonl(out / "facts.jsonl", SceneFacts)
    gt = read_jsonl(out / "ground_truth.jsonl", GroundTruthScene)
    ledger = ReliabilityLedger(cfg.fusion.beta, cfg.fusion.initial_reliability)
    ica, traces = fuse_run(facts, calib, cfg, ledger=ledger)
    naive, _ = fuse_run(facts, calib, cfg, no_ica=True)
    for name, rows in (("summaries_ica.jsonl", ica), ("summaries_naive.jsonl", naive), ("ica_trace.jsonl", traces)):
        write_jsonl(out / name, rows)
        files.append(out / name)
    ledger.save(out / "ledger_state.json")
    files.append(out / "ledger_state.json")
    reports = evaluate_run({"ICA": ica, "no-ICA": naive}, gt, facts, calib, cfg)
    files += write_report(reports, out / "report", plot)
    rows, trace, _ = reason_run(ica, query, None, cfg)
    write_jsonl(out / "decisions.jsonl", rows)
    write_jsonl(out / "ssre_trace.jsonl", trace)
    qa = qagen_run(gt, FAMILIES, qa_per_scene, cfg.seed, cfg)
    write_jsonl(out / "qa.jsonl", qa)
    files += [out / "decisions.jsonl", out / "ssre_trace.jsonl", out / "qa.jsonl"]
    cfg_path = out / "config.json"
    cfg_path.write_text(canonical_dumps(config_to_dict(cfg)) + "\n", encoding="utf-8")
    files.append(cfg_path)
    return write_manifest(out, files, cfg, "pipeline", {"scenes": n})


# ---------------------------------------------------------------- argparse

def _config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        changes["jobs"] = args.jobs
    if getattr(args, "backend", None) is not None:
        changes["ssre"] = replace(cfg.ssre, backend=args.backend)
    return replace(cfg, **changes) if changes else cfg


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    out = Path(args.out)
    files = simulate_run(cfg, args.n, out)
    write_manifest(out, files, cfg, "simulate", {"scenes": args.n})
    return EXIT_OK


def cmd_fuse(args: argparse.Namespace) -> int:
    cfg = _config(args)
    facts = read_jsonl(args.facts, SceneFacts)
    calib = read_calibration(args.calibration)
    ledger = None
    if args.ledger and not args.no_ica:
        ledger = ReliabilityLedger.load(args.ledger, cfg.fusion.beta, cfg.fusion.initial_reliability)
    summaries, traces = fuse_run(facts, calib, cfg, args.no_ica, ledger)
    out = Path(args.out)
    _ensure_dir(out.parent)
    write_jsonl(out, summaries)
    if args.trace:
        write_jsonl(args.trace, traces)
    if ledger is not None:
        ledger.save(args.ledger)
    return EXIT_OK


def _parse_runs(specs: Sequence[str]) -> dict[str, list[SceneSummary]]:
    runs = {}
    for arg in specs:
        label, sep, path = arg.partition("=")
        if not sep:
            label, path = Path(arg).stem, arg
        runs[label] = read_jsonl(path, SceneSummary)
    return runs


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    gt = read_jsonl(args.gt, GroundTruthScene)
    facts = read_jsonl(args.facts, SceneFacts) if args.facts else None
    calib = read_calibration(args.calibration)
    reports = evaluate_run(_parse_runs(args.run), gt, facts, calib, cfg)
    write_report(reports, Path(args.out), not args.no_plot)
    sys.stdout.write(format_table(reports))
    return EXIT_OK


def cmd_reason(args: argparse.Namespace) -> int:
    cfg = _config(args)
    summaries = read_jsonl(args.summaries, SceneSummary)
    if args.scene_id:
        summaries = [s for s in summaries if s.scene_id == args.scene_id]
        if not summaries:
            raise SchemaError("scene_id", f"no summary with scene id {args.scene_id}")
    replay = read_jsonl(args.replay) if args.replay else None
    if replay is not None:
        cfg = replace(cfg, ssre=replace(cfg.ssre, backend="replay"))
    rows, trace, ok = reason_run(summaries, args.query, args.aux, cfg, replay)
    out = _ensure_dir(Path(args.out))
    write_jsonl(out / "decisions.jsonl", rows)
    write_jsonl(out / "trace.jsonl", trace)
    return EXIT_OK if ok else EXIT_UNVERIFIED


def cmd_qagen(args: argparse.Namespace) -> int:
    cfg = _config(args)
    families = args.families.split(",") if args.families else list(FAMILIES)
    for f in families:
        if f not in FAMILIES:
            raise ConfigError(f"unknown QA family {f!r}; expected some of {FAMILIES}")
    rows = qagen_run(_load_scenes(args.scenes), families, args.n, args.seed if args.seed is not None else cfg.seed, cfg)
    out = Path(args.out)
    _ensure_dir(out.parent)
    write_jsonl(out, rows)
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = _config(args)
    pipeline_run(cfg, args.n, Path(args.out), args.query, args.qa_per_scene, not args.no_plot)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenefuse", description="Multi-agent perception fusion and grounded reasoning.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--seed", type=int, help="override the run seed")
        sp.add_argument("--jobs", type=int, help="worker processes for scene-parallel stages")

    s = sub.add_parser("simulate", help="generate ground truth and per-agent fact sets")
    common(s)
    s.add_argument("--n", type=int, default=10, help="number of scenes")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fuse", help="fuse fact sets into scene summaries")
    common(s)
    s.add_argument("--facts", required=True)
    s.add_argument("--calibration")
    s.add_argument("--out", required=True, help="summary JSONL path")
    s.add_argument("--no-ica", action="store_true", help="export every detection unfused (baseline)")
    s.add_argument("--trace", help="write per-scene fusion traces to this JSONL path")
    s.add_argument("--ledger", help="reliability state file, read if present and rewritten after the run")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("evaluate", help="consistency metrics against ground truth")
    common(s)
    s.add_argument("--gt", required=True)
    s.add_argument("--facts")
    s.add_argument("--calibration")
    s.add_argument("--run", action="append", required=True, help="LABEL=summaries.jsonl (repeatable)")
    s.add_argument("--out", required=True, help="report directory")
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("reason", help="grounded decision for a query over scene summaries")
    common(s)
    s.add_argument("--summaries", required=True)
    s.add_argument("--scene-id")
    s.add_argument("--query", default=DEFAULT_QUERY)
    s.add_argument("--aux", help="optional free-text context")
    s.add_argument("--backend", choices=("oracle", "http", "replay"))
    s.add_argument("--replay", help="trace JSONL whose recorded responses are replayed")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_reason)

    s = sub.add_parser("qagen", help="templated question/answer pairs")
    common(s)
    s.add_argument("--scenes", required=True, help="ground-truth or summary JSONL")
    s.add_argument("--families", help=f"comma-separated subset of {','.join(FAMILIES)}")
    s.add_argument("--n", type=int, default=10, help="pairs per scene")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_qagen)

    s = sub.add_parser("pipeline", help="simulate, fuse, evaluate, reason and qagen in one run")
    common(s)
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--out", required=True)
    s.add_argument("--query", default=DEFAULT_QUERY)
    s.add_argument("--qa-per-scene", type=int, default=4)
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except ScenefuseError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: missing input: {exc}\n")
        return ConfigError.exit_code
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return ScenefuseError.exit_code


if __name__ == "__main__":
    sys.exit(main())
