import sys
from typing import List, Optional

from . import log
from . import app
from . import bench
from . import commands
from . import config
from . import container
from . import fitter
from . import pipeline
from .env import Env
from . import __version__

logger = log.getLogger(__name__)

def run(argv: Optional[List[str]] = None) -> int:
    """Runs one command and returns its exit code"""
    log.setup_logging()
    logger.setLevel(log.INFO)

    try:
        args = config.get_args(app.App.commands().help(), argv)
    except SystemExit as exn:
        # argparse: usage errors and --help/--version
        return exn.code if isinstance(exn.code, int) else app.EXIT_USAGE

    level = log.DEBUG if args.verbose else log.INFO
    fitter.   logger.setLevel(level)
    bench.    logger.setLevel(level)
    pipeline. logger.setLevel(level)
    container.logger.setLevel(log.DEBUG if args.verbose else log.WARNING)
    commands. logger.setLevel(level)

    logger.debug(f"Version: {__version__}")
    try:
        config_ = config.Config(filename=args.config)
        env     = Env(config=config_, args=args)
        app.App(env=env).run(commands.Invocation(name=args.command, args=args.args))
    except commands.CommandParseError as exn:
        logger.error(f"Error: {exn}: {exn.marked()}")
        return app.EXIT_USAGE
    except Exception as exn:
        code = app.exit_code_for(exn)
        if code == app.EXIT_UNEXPECTED:
            logger.exception(f"Unexpected failure: {exn}")
        else:
            logger.error(f"{type(exn).__name__}: {exn}")
        return code
    return app.EXIT_OK

def main() -> None:
    raise SystemExit(run(sys.argv[1:]))
