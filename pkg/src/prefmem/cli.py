"""Command-line client for the preference-memory pipeline.

Every subcommand talks HTTP to the service layer: by default against an
in-process app instance (no network, same process, artifacts on local
disk), or against a running server with --server.  Exit codes: 0 ok,
1 usage error, 2 missing artifact, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx

from .config import apply_overrides, load_config
from .errors import UsageError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING = 2
EXIT_DATA = 3

_KIND_EXIT = {"usage": EXIT_USAGE, "missing_artifact": EXIT_MISSING,
              "not_found": EXIT_MISSING, "data": EXIT_DATA}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="prefmem",
                     description="preference-memory pipeline")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help_text, *, seed=True, detector=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH",
                       help="JSON config file (defaults apply without it)")
        p.add_argument("--out", metavar="DIR",
                       help="artifact directory (default: artifacts)")
        p.add_argument("--server", metavar="URL",
                       help="send the command to a running service instead "
                            "of running in-process")
        if seed:
            p.add_argument("--seed", type=int, metavar="N",
                           help="override this stage's seed")
        if detector:
            p.add_argument("--detector",
                           choices=("learned", "heuristic", "oracle"),
                           help="detector gating memory writes")
        return p

    add("gen-data", "generate the labeled synthetic dataset")
    for name in ("train-classifier", "train-memory"):
        p = add(name, f"run {name.split('-')[1]} training")
        p.add_argument("--resume", action="store_true",
                       help="continue from the existing checkpoint")
    p = add("eval", "score retention and detection over injection streams",
            detector=True)
    p.add_argument("--emit-csv", action="store_true",
                   help="also write per-stream rows as CSV")
    p = add("chat", "interactive preference-aware chat", detector=True)
    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _load_cfg(args, stage: str):
    cfg = load_config(getattr(args, "config", None))
    return apply_overrides(cfg, out_dir=getattr(args, "out", None),
                           seed=getattr(args, "seed", None), stage=stage,
                           detector=getattr(args, "detector", None))


class _Client:
    """Uniform HTTP access: remote base URL or in-process ASGI app."""

    def __init__(self, args, stage: str):
        self.server = getattr(args, "server", None)
        if self.server:
            self.http = httpx.Client(base_url=self.server.rstrip("/"),
                                     timeout=None)
        else:
            import warnings
            with warnings.catch_warnings():
                # the sandbox's starlette emits a UserWarning-based
                # deprecation notice on import
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient
            from .service import create_app
            self.http = TestClient(create_app(_load_cfg(args, stage)))

    def request(self, method: str, path: str, body: dict | None = None):
        resp = self.http.request(method, path,
                                 json=body if body is not None else None)
        if resp.status_code >= 400:
            detail = {}
            try:
                detail = resp.json().get("detail", {})
            except (json.JSONDecodeError, ValueError):
                pass
            if isinstance(detail, dict) and "kind" in detail:
                raise CommandError(detail.get("message", "request failed"),
                                   _KIND_EXIT.get(detail["kind"],
                                                  EXIT_USAGE))
            raise CommandError(f"request failed with HTTP "
                               f"{resp.status_code}: {resp.text[:200]}",
                               EXIT_USAGE)
        return resp.json()

    def close(self):
        self.http.close()


class CommandError(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


# ---------------------------------------------------------------------------
# Subcommand bodies.
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    client = _Client(args, "gen-data")
    try:
        body = {}
        if getattr(args, "seed", None) is not None and args.server:
            body["seed"] = args.seed
        out = client.request("POST", "/gen-data", body)
    finally:
        client.close()
    print(f"wrote {out['n_records']} records to {out['path']}")
    print(f"label 1 (preference):     {out['label_1_preference']}")
    print(f"label 0 (non-preference): {out['label_0_non_preference']}")
    print(f"seed: {out['seed']}  runtime: {out['runtime_seconds']:.2f}s")
    return EXIT_OK


def _print_metric_block(name: str, metrics: dict) -> None:
    print(f"  {name:<6} accuracy {metrics['accuracy']:.4f}  "
          f"precision {metrics['precision']:.4f}  "
          f"recall {metrics['recall']:.4f}  f1 {metrics['f1']:.4f}")


def cmd_train_classifier(args) -> int:
    client = _Client(args, "train-classifier")
    try:
        body = {"resume": bool(args.resume)}
        if getattr(args, "seed", None) is not None and args.server:
            body["seed"] = args.seed
        out = client.request("POST", "/train-classifier", body)
    finally:
        client.close()
    sizes = out["split_sizes"]
    print(f"trained classifier for {out['epochs_run']} epochs "
          f"(train/val/test = {sizes['train']}/{sizes['val']}"
          f"/{sizes['test']})")
    for name in ("train", "val", "test"):
        if name in out["metrics"]:
            _print_metric_block(name, out["metrics"][name])
    print(out["reference_note"])
    print(f"checkpoint: {out['checkpoint']}")
    print(f"history:    {out['history']}")
    print(f"runtime: {out['runtime_seconds']:.2f}s")
    return EXIT_OK


def cmd_train_memory(args) -> int:
    client = _Client(args, "train-memory")
    try:
        body = {"resume": bool(args.resume)}
        if getattr(args, "seed", None) is not None and args.server:
            body["seed"] = args.seed
        out = client.request("POST", "/train-memory", body)
    finally:
        client.close()
    print(f"trained memory controller for {out['epochs_run']} epochs "
          f"over {out['corpus_sequences']} sequences")
    if out.get("final"):
        f = out["final"]
        val = (f" val_loss {f['val_loss']:.4f} val_acc "
               f"{f['val_accuracy']:.4f}" if f.get("val_loss") is not None
               else "")
        print(f"final epoch: train_loss {f['train_loss']:.4f} "
              f"train_acc {f['train_accuracy']:.4f}{val}")
    print(f"checkpoint: {out['checkpoint']}")
    print(f"history:    {out['history']}")
    print(f"runtime: {out['runtime_seconds']:.2f}s")
    return EXIT_OK


def cmd_eval(args) -> int:
    client = _Client(args, "eval")
    try:
        body = {"emit_csv": bool(args.emit_csv)}
        if getattr(args, "detector", None):
            body["detector"] = args.detector
        if getattr(args, "seed", None) is not None and args.server:
            body["seed"] = args.seed
        out = client.request("POST", "/eval", body)
    finally:
        client.close()
    from .evalharness import EvalReport, render_text
    report = EvalReport.from_dict(out["report"])
    sys.stdout.write(render_text(report))
    for label, path in out["outputs"].items():
        print(f"{label}: {path}")
    return EXIT_OK


CHAT_HELP = ("commands: /mem  /softprompt  /reset  "
             "/detector learned|heuristic  /quit")


def cmd_chat(args) -> int:
    client = _Client(args, "chat")
    created = None
    try:
        body = {}
        if getattr(args, "detector", None):
            if args.detector == "oracle":
                raise CommandError("chat detector must be learned or "
                                   "heuristic", EXIT_USAGE)
            body["detector"] = args.detector
        created = client.request("POST", "/sessions", body)
        sid = created["session_id"]
        print(f"chat session {sid} (detector: {created['detector']})")
        if created.get("warning"):
            print(f"warning: {created['warning']}", file=sys.stderr)
        print(CHAT_HELP)
        while True:
            try:
                line = input("you> ")
            except EOFError:
                break
            line = line.strip()
            if not line:
                continue
            if line.startswith("/"):
                if not _chat_command(client, sid, line):
                    break
                continue
            out = client.request("POST", f"/sessions/{sid}/message",
                                 {"text": line})
            print(f"agent> {out['reply']}")
            if out.get("warning"):
                print(f"warning: {out['warning']}", file=sys.stderr)
        client.request("DELETE", f"/sessions/{sid}")
        created = None
        return EXIT_OK
    finally:
        if created is not None:
            try:
                client.request("DELETE", f"/sessions/{created['session_id']}")
            except CommandError:
                pass
        client.close()


def _chat_command(client: _Client, sid: str, line: str) -> bool:
    """Handle one /command; returns False to end the session."""
    parts = line.split()
    cmd = parts[0]
    if cmd == "/quit":
        return False
    if cmd == "/mem":
        out = client.request("GET", f"/sessions/{sid}/memory")
        top = ", ".join(f"{c['name']} {c['p']:.3f}"
                        for c in out["top_categories"])
        print(f"turn={out['turn']} |M|={out['norm']:.6f} top: {top}")
    elif cmd == "/softprompt":
        out = client.request("GET", f"/sessions/{sid}/softprompt")
        print("T = " + ",".join(f"{v:.6f}" for v in out["values"]))
    elif cmd == "/reset":
        client.request("POST", f"/sessions/{sid}/reset")
        print("memory reset (turn 0)")
    elif cmd == "/detector":
        if len(parts) != 2 or parts[1] not in ("learned", "heuristic"):
            print("usage: /detector learned|heuristic")
            return True
        out = client.request("POST", f"/sessions/{sid}/detector",
                             {"detector": parts[1]})
        print(f"detector set to {out['detector']}")
    else:
        print(CHAT_HELP)
    return True


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, out_dir=args.out)
    uvicorn.run(create_app(cfg), host=args.host, port=args.port)
    return EXIT_OK


_COMMANDS = {"gen-data": cmd_gen_data,
             "train-classifier": cmd_train_classifier,
             "train-memory": cmd_train_memory,
             "eval": cmd_eval,
             "chat": cmd_chat,
             "serve": cmd_serve}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help()
            return EXIT_USAGE
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except httpx.HTTPError as exc:
        print(f"error: could not reach server: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
