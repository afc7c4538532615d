"""Command line front end; runs ops in process or against a running service.

Exit codes: 0 success, 2 config or data error, 3 numeric abort.
"""

import argparse
import json
import sys

from pydantic import ValidationError

from . import __version__, pipeline, schemas
from .errors import ConfigError, DataError, NumericAbort


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="prefkit",
        description="desk-scale lab for contrastive post-training of tiny LMs")
    p.add_argument("--version", action="version", version=f"prefkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed: bool):
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--out", required=True, help="output directory")
        if seed:
            sp.add_argument("--seed", type=int, default=None,
                            help="override the config seed")
        sp.add_argument("--server", default=None,
                        help="run on a prefkit service at this base URL")

    common(sub.add_parser("gen", help="generate a tiered corpus"), seed=True)
    common(sub.add_parser("pairs", help="build preference pairs"), seed=False)
    tr = sub.add_parser("train", help="train one stage or a stage pipeline")
    common(tr, seed=True)
    tr.add_argument("--resume", default=None, metavar="CKPT",
                    help="resume a single-stage run from this checkpoint")
    common(sub.add_parser("eval", help="head-to-head evaluation"), seed=True)

    rp = sub.add_parser("report", help="significance verdict from eval artifacts")
    rp.add_argument("paths", nargs="+",
                    help="one or two report.json paths (or their directories)")
    rp.add_argument("--alpha", type=float, default=0.05)
    rp.add_argument("--server", default=None)

    sv = sub.add_parser("serve", help="run the HTTP service")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)
    return p


def _load_config(path: str, model_cls):
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}")
    if model_cls is None:  # train: the stages key marks a pipeline
        model_cls = (schemas.PipelineConfig
                     if isinstance(raw, dict) and "stages" in raw
                     else schemas.TrainStageConfig)
    try:
        return model_cls.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}")


def _build_request(args):
    """(endpoint path, config object, extras for the request body)."""
    if args.command == "gen":
        cfg = _load_config(args.config, schemas.GenConfig)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
        return "/gen", cfg, {}
    if args.command == "pairs":
        return "/pairs", _load_config(args.config, schemas.PairsConfig), {}
    if args.command == "train":
        cfg = _load_config(args.config, None)
        return "/train", cfg, {"seed": args.seed, "resume_from": args.resume}
    if args.command == "eval":
        cfg = _load_config(args.config, schemas.EvalConfig)
        return "/eval", cfg, {"seed": args.seed}
    try:
        req = schemas.ReportRequest(paths=args.paths, alpha=args.alpha)
    except ValidationError as e:
        raise ConfigError(str(e))
    return "/report", req, {}


def _run_local(args) -> dict:
    path, cfg, extras = _build_request(args)
    argv = ["prefkit"] + sys.argv[1:]
    if path == "/gen":
        return pipeline.op_gen(cfg, args.out, argv)
    if path == "/pairs":
        return pipeline.op_pairs(cfg, args.out, argv)
    if path == "/train":
        return pipeline.op_train(cfg, args.out, argv, seed_override=extras["seed"],
                                 resume_from=extras["resume_from"])
    if path == "/eval":
        return pipeline.op_eval(cfg, args.out, argv, seed_override=extras["seed"])
    return pipeline.op_report(cfg, argv)


def _run_remote(args) -> int:
    import httpx

    path, cfg, extras = _build_request(args)
    body = cfg.model_dump(by_alias=True)
    if path != "/report":
        body = {"config": body, "out_dir": args.out, **extras}
    r = httpx.post(args.server.rstrip("/") + path, json=body, timeout=None)
    if r.status_code == 200:
        print(json.dumps(r.json(), indent=2, sort_keys=True))
        return 0
    try:
        payload = r.json()
    except ValueError:
        payload = {"error": "HTTP", "detail": r.text}
    print(f"error: {payload.get('error', r.status_code)}: "
          f"{payload.get('detail', '')}", file=sys.stderr)
    if r.status_code == 422 and payload.get("error") == "NumericAbort":
        return 3
    return 2 if r.status_code in (400, 422) else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "serve":
            import uvicorn

            uvicorn.run("prefkit.service:app", host=args.host, port=args.port)
            return 0
        if getattr(args, "server", None):
            return _run_remote(args)
        summary = _run_local(args)
    except NumericAbort as e:
        print(f"error: numeric abort: {e}", file=sys.stderr)
        return 3
    except (ConfigError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
