"""The chips umbrella CLI: corpus building, PACS client verbs, tree transfer."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dicom import default_policy, load_policy_file
from .fileio import pull_tree, push_tree
from .pacs import QuerySpec, authenticate, build_corpus, pull_study, query_studies
from .pacs.errors import PartialPull


def _policy_from_args(args):
    salt = bytes.fromhex(args.salt) if args.salt else b"chips-default-salt"
    if args.anon_policy:
        return load_policy_file(args.anon_policy, salt, policy_id=args.anon_policy)
    return default_policy(salt)


def _cmd_corpus_build(args) -> int:
    infos = build_corpus(
        args.dest, studies=args.studies, series_per_study=args.series,
        instances_per_series=args.instances, seed=args.seed,
    )
    total = sum(sum(s.instance_count for s in study.series) for study in infos)
    print(f"built {len(infos)} studies / {total} instances under {args.dest}")
    return 0


def _cmd_pacs_query(args) -> int:
    token = authenticate(args.pacs_url, args.account, args.secret)
    filters = dict(part.split("=", 1) for part in args.filter)
    rows = query_studies(args.pacs_url, token, QuerySpec(level=args.level, filters=filters))
    print(json.dumps(rows, indent=2))
    return 0


def _cmd_pacs_pull(args) -> int:
    policy = _policy_from_args(args)
    try:
        receipt = pull_study(
            args.pacs_url, args.account, args.secret, args.study, policy, args.dest,
        )
    except PartialPull as exc:
        receipt = exc.receipt
        print(f"partial pull: {exc}", file=sys.stderr)
        if args.receipt_out and receipt is not None:
            Path(args.receipt_out).write_text(json.dumps(receipt.to_json(), indent=2))
        return 1
    print(f"pulled {receipt.instance_count} instances into {receipt.study_dir}")
    if args.receipt_out:
        Path(args.receipt_out).write_text(json.dumps(receipt.to_json(), indent=2))
        print(f"receipt written to {args.receipt_out}")
    return 0


def _cmd_io_push(args) -> int:
    receipt = push_tree(args.dir, args.remote, args.key)
    print(f"pushed {len(receipt.manifest.entries)} files "
          f"({receipt.bytes_transferred} bytes) as {args.key}")
    return 0


def _cmd_io_pull(args) -> int:
    receipt = pull_tree(args.remote, args.key, args.subdir, args.dest)
    print(f"pulled {len(receipt.manifest.entries)} files into {args.dest}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="chips", description="workflow service client")
    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="synthetic corpus tools").add_subparsers(
        dest="subcommand", required=True
    )
    build = corpus.add_parser("build", help="generate a synthetic study corpus")
    build.add_argument("--dest", required=True)
    build.add_argument("--studies", type=int, default=3)
    build.add_argument("--series", type=int, default=2)
    build.add_argument("--instances", type=int, default=3)
    build.add_argument("--seed", type=int, default=20240501)
    build.set_defaults(func=_cmd_corpus_build)

    pacs = sub.add_parser("pacs", help="PACS client verbs").add_subparsers(
        dest="subcommand", required=True
    )
    query = pacs.add_parser("query", help="query studies")
    query.add_argument("--pacs-url", required=True)
    query.add_argument("--account", required=True)
    query.add_argument("--secret", required=True)
    query.add_argument("--level", choices=["STUDY", "SERIES"], default="STUDY")
    query.add_argument("--filter", action="append", default=[], metavar="KEYWORD=PATTERN")
    query.set_defaults(func=_cmd_pacs_query)
    pull = pacs.add_parser("pull", help="pull a study with anonymization")
    pull.add_argument("--pacs-url", required=True)
    pull.add_argument("--account", required=True)
    pull.add_argument("--secret", required=True)
    pull.add_argument("--study", required=True, metavar="UID")
    pull.add_argument("--dest", required=True)
    pull.add_argument("--anon-policy", help="policy file; defaults to the shipped policy")
    pull.add_argument("--salt", help="hex salt for pseudonym digests")
    pull.add_argument("--receipt-out", help="write the pull receipt JSON here")
    pull.set_defaults(func=_cmd_pacs_pull)

    io = sub.add_parser("io", help="directory-tree transfer").add_subparsers(
        dest="subcommand", required=True
    )
    push = io.add_parser("push", help="push a tree to a fileio node")
    push.add_argument("--remote", required=True)
    push.add_argument("--key", required=True)
    push.add_argument("--dir", required=True)
    push.set_defaults(func=_cmd_io_push)
    pullv = io.add_parser("pull", help="pull a tree from a fileio node")
    pullv.add_argument("--remote", required=True)
    pullv.add_argument("--key", required=True)
    pullv.add_argument("--subdir", choices=["input", "output"], default="output")
    pullv.add_argument("--dest", required=True)
    pullv.set_defaults(func=_cmd_io_pull)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
