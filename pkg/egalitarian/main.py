import logging

from .cli import cli
from .config import runtime_settings


def main():
    # Configure logging
    settings = runtime_settings()
    logging.basicConfig(
        level=getattr(logging, settings.log_level, logging.INFO),
        format='%(levelname)s:     %(message)s'
    )

    # Quiet third-party loggers
    logging.getLogger('cryptography').setLevel(logging.WARNING)
    logging.getLogger('numpy').setLevel(logging.WARNING)

    cli(obj={})


if __name__ == "__main__":
    main()
