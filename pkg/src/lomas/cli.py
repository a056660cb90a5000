"""Command line entry point: store administration and the HTTP server.

    lomas admin add_dataset --dataset PENGUIN \
        --locator local_path:/data/penguins.csv \
        --metadata_path /data/penguin_metadata.yaml
    lomas admin add_user_with_budget --user "Dr. Antartica" \
        --dataset PENGUIN --epsilon 10 --delta 0.005
    lomas admin show_collection users
    lomas admin drop_user --user "Dr. Antartica"
    lomas serve --bind 127.0.0.1:8000

The store location comes from --store-path or LOMAS_STORE_PATH. Admin verbs
take the store's exclusive write lock, so they fail fast while a server owns
the same store.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .admin_store import COLLECTIONS, AdminStore
from .dataset_store import StorageLocator
from .errors import InvariantViolation, LomasError


def _store_path(args) -> str:
    path = getattr(args, "store_path", None) or os.environ.get("LOMAS_STORE_PATH")
    if not path:
        raise InvariantViolation("store path required: pass --store-path or set LOMAS_STORE_PATH")
    return path


def _cmd_add_user_with_budget(args) -> int:
    with AdminStore(_store_path(args)) as store:
        record = store.add_user_with_budget(args.user, args.dataset, args.epsilon, args.delta)
        entry = record.datasets[args.dataset]
        print(f"added user {args.user!r} on dataset {args.dataset!r} "
              f"with budget (epsilon={entry.initial.epsilon}, delta={entry.initial.delta})")
    return 0


def _cmd_add_dataset(args) -> int:
    locator = StorageLocator.parse(args.locator)
    try:
        with open(args.metadata_path, "r", encoding="utf-8") as handle:
            document = handle.read()
    except OSError as exc:
        print(f"error: cannot read metadata file: {exc}", file=sys.stderr)
        return 1
    with AdminStore(_store_path(args)) as store:
        record = store.add_dataset(args.dataset, locator, document)
        print(f"added dataset {record.dataset_name!r} at {record.locator} "
              f"({len(record.metadata.columns)} columns)")
    return 0


def _cmd_show_collection(args) -> int:
    # read-only: no exclusive lock, safe while the server is running
    with AdminStore(_store_path(args), writable=False) as store:
        for doc in store.show_collection(args.collection):
            print(json.dumps(doc, sort_keys=True))
    return 0


def _cmd_drop_user(args) -> int:
    with AdminStore(_store_path(args)) as store:
        store.drop_user(args.user)
        print(f"dropped user {args.user!r}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceSettings, create_app

    bind = args.bind or os.environ.get("LOMAS_BIND_ADDR", "127.0.0.1:8000")
    host, _, port_text = bind.rpartition(":")
    if not host or not port_text.isdigit():
        raise InvariantViolation(f"--bind must look like host:port, got {bind!r}")
    settings = ServiceSettings.from_env(
        store_path=getattr(args, "store_path", None),
        min_latency_seconds=(args.min_latency_ms / 1000.0
                             if args.min_latency_ms is not None else None),
    )
    app = create_app(settings)
    uvicorn.run(app, host=host, port=int(port_text), log_level=args.log_level)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lomas")
    parser.add_argument("--store-path", help="store directory (default: $LOMAS_STORE_PATH)")
    commands = parser.add_subparsers(dest="command", required=True)

    admin = commands.add_parser("admin", help="administer users, datasets, and archives")
    verbs = admin.add_subparsers(dest="verb", required=True)

    p = verbs.add_parser("add_user_with_budget", help="allocate a budget to a user on a dataset")
    p.add_argument("--user", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epsilon", required=True, type=float)
    p.add_argument("--delta", required=True, type=float)
    p.set_defaults(handler=_cmd_add_user_with_budget)

    p = verbs.add_parser("add_dataset", help="register a dataset and its metadata")
    p.add_argument("--dataset", required=True)
    p.add_argument("--locator", required=True,
                   help="storage locator, e.g. local_path:/data/x.csv or http_url:https://...")
    p.add_argument("--metadata_path", required=True)
    p.set_defaults(handler=_cmd_add_dataset)

    p = verbs.add_parser("show_collection", help="dump one collection as JSON lines")
    p.add_argument("collection", choices=COLLECTIONS)
    p.set_defaults(handler=_cmd_show_collection)

    p = verbs.add_parser("drop_user", help="remove a user record")
    p.add_argument("--user", required=True)
    p.set_defaults(handler=_cmd_drop_user)

    p = commands.add_parser("serve", help="run the gatekeeper HTTP server")
    p.add_argument("--bind", help="host:port (default: $LOMAS_BIND_ADDR or 127.0.0.1:8000)")
    p.add_argument("--min-latency-ms", type=float,
                   help="private-path response-time floor (default: $LOMAS_MIN_LATENCY_MS or 50)")
    p.add_argument("--log-level", default="warning")
    p.set_defaults(handler=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except LomasError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
