"""
Command line subcommands

Each module exposes `register(subparsers)`, which adds its parser and sets
`handler`, and a `run(args) -> int` handler. grm.main wires them together.
"""
