"""Bridge entry point: serve a detector over the wire protocol, or run the
conformance suite against another server."""

import argparse
import sys

from .config import BridgeConfig
from .conformance import conformance_suite
from .server import BridgeServer


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="detbridge")
    sub = parser.add_subparsers(dest="command")

    serve = sub.add_parser("serve", help="run the detector server (default)")
    serve.add_argument("--model", default="tiny",
                       help='"tiny" or "torchvision:<builder_name>"')
    serve.add_argument("--weights", default=None)
    serve.add_argument("--confidence", type=float, default=0.25)
    serve.add_argument("--device", default="cpu")
    serve.add_argument("--extraction", default="raw_class_probs",
                       choices=["raw_class_probs", "objectness_times_class"])
    serve.add_argument("--transport", default="stdio", choices=["stdio", "http"])
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8474)
    serve.add_argument("--max-batch", type=int, default=16)

    check = sub.add_parser("conformance", help="drive a server with the fixture suite")
    check.add_argument("locator", nargs=argparse.REMAINDER,
                       help="server command line, or a single http(s) URL")

    args = parser.parse_args(argv if argv is not None else sys.argv[1:] or ["serve"])
    if args.command == "conformance":
        if not args.locator:
            check.error("a server command line or URL is required")
        locator = args.locator[0] if (len(args.locator) == 1
                                      and args.locator[0].startswith("http")) \
            else args.locator
        report = conformance_suite(locator)
        print(report.summary())
        return 0 if report.passed else 1

    config = BridgeConfig(model=args.model, weights=args.weights,
                          confidence=args.confidence, device=args.device,
                          extraction=args.extraction, transport=args.transport,
                          host=args.host, port=args.port, max_batch=args.max_batch)
    server = BridgeServer(config)
    if config.transport == "http":
        return server.serve_http()
    return server.serve_stdio()


if __name__ == "__main__":
    sys.exit(main())
