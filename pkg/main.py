import sys
import json
import logging

from pydantic import ValidationError

from data_utils import MeshFamily
from hho2d.errors import ConfigError, MeshError, SolverError
from modules import CheckSuite, Runner, write_text
from schema import RunConfig
from utils import args_to_fields, parse_args, read_config_file, seed_everything

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_MESH = 3
EXIT_SOLVER = 4


def load_config(args):
    file_fields = {}
    if args.config:
        try:
            file_fields = read_config_file(args.config)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {args.config}: {e}") from e
    return RunConfig.from_sources(args.command, file_fields, args_to_fields(args))


def execute(config):
    if config.command == "check":
        summary = CheckSuite(mutate_sign=config.mutate_sign, seed=config.seed, progress=not config.quiet).run(config.suite)
        text = json.dumps(summary, indent=2)
        print(text)
        if config.out:
            write_text(text, config.out)
        return EXIT_OK if summary["passed"] else EXIT_CHECK_FAILED

    runner = Runner(config, MeshFamily(config.mesh))
    if config.command == "run":
        runner.run()
    elif config.command == "convergence":
        runner.convergence()
    else:
        runner.flag_layer()
    return EXIT_OK


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
    )
    try:
        config = load_config(args)
        seed_everything(config.seed)
        return execute(config)
    except (ConfigError, ValidationError) as e:
        logger.error(f"configuration error: {e}")
        return EXIT_CONFIG
    except MeshError as e:
        logger.error(f"mesh error: {e}")
        return EXIT_MESH
    except SolverError as e:
        logger.error(f"solver error: {e}")
        return EXIT_SOLVER


if __name__ == '__main__':
    sys.exit(main())
