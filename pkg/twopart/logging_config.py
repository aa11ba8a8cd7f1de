import logging
import os
from enum import Enum
from logging.config import dictConfig

from .config import Config

TESTS_DIR = os.path.join(os.path.dirname(__file__), "tests")

# Creating directory for logger file in dev environment
if Config.ENV_STATE == "dev":
    os.makedirs(TESTS_DIR, exist_ok=True)


class FontColor(str, Enum):
    BLUE = "\033[94m"
    GREEN = "\033[92m"
    CYAN = "\033[96m"
    MAGENTA = "\033[95m"
    RED = "\033[91m"
    YELLOW = "\033[93m"
    WHITE = "\033[97m"
    DEFAULT = "\033[39m"


class FontStyle(str, Enum):
    BOLD = "\033[1m"
    RED_BACKGROUND = "\033[41m"
    DEFAULT = ""
    RESET = "\033[0m"


class ColoredFormatter(logging.Formatter):
    """Console formatter coloring the level name and appending extra context."""

    MAPPING = {
        "DEBUG": FontColor.WHITE,
        "INFO": FontColor.CYAN,
        "WARNING": FontColor.YELLOW,
        "ERROR": FontColor.RED,
        "CRITICAL": FontStyle.RED_BACKGROUND,
    }

    def __init__(
        self,
        custom_format: str | None = None,
        name_color: FontColor = FontColor.DEFAULT,
        message_color: FontColor = FontColor.DEFAULT,
        *args,
        **kwargs,
    ):
        datefmt = kwargs.pop("datefmt", "%Y-%m-%d %H:%M:%S")
        super().__init__(*args, datefmt=datefmt, **kwargs)

        self.desired_format = custom_format or (
            "%(asctime)s.%(msecs)03dZ - "
            "%(levelname)-8s - "
            f"{name_color}{FontStyle.BOLD}%(name)s{FontStyle.RESET} - "
            "%(module)s.%(funcName)s"
            f"{FontColor.YELLOW} >>> {FontStyle.RESET}"
            f"{message_color}%(message)s{FontStyle.RESET}"
        )

    def format(self, record: logging.LogRecord) -> str:
        # Work on a copy so that file handlers see the plain record
        record = logging.makeLogRecord(record.__dict__)

        extra_info = record.__dict__.pop("additional information", "")
        if extra_info:
            record.msg = f"{record.msg}\nAdditional information: {extra_info}"

        color = self.MAPPING.get(record.levelname, FontColor.DEFAULT)
        record.levelname = f"{color}{record.levelname:<8}{FontStyle.RESET}"

        self._style._fmt = self.desired_format
        return super().format(record)


def _handlers_for(env_state: str) -> list[str]:
    if env_state == "prod":
        return ["console", "files"]
    if env_state == "dev":
        return ["console", "tests"]
    return ["console"]


def configure_logging(env_state: str | None = None, level: str | None = None) -> None:
    env_state = env_state or Config.ENV_STATE
    handlers = {
        "console": {
            "class": "logging.StreamHandler",
            "level": "DEBUG",
            "formatter": "console",
        },
    }
    if env_state == "prod":
        handlers["files"] = {
            "class": "logging.FileHandler",
            "level": "DEBUG",
            "formatter": "file",
            "filename": "twopart.log",
            "encoding": "utf-8",
        }
    elif env_state == "dev":
        handlers["tests"] = {
            "class": "logging.handlers.RotatingFileHandler",
            "level": "DEBUG",
            "formatter": "file",
            "filename": os.path.join(TESTS_DIR, "logs_dev.log"),
            "mode": "a",
            "maxBytes": 1024 * 512,  # 0.5MB
            "backupCount": 2,
            "encoding": "utf-8",
        }

    dictConfig(
        {
            "version": 1,
            "disable_existing_loggers": False,
            "formatters": {
                "console": {
                    "()": ColoredFormatter,
                    "name_color": FontColor.GREEN,
                    "message_color": FontColor.DEFAULT,
                },
                "file": {
                    "class": "logging.Formatter",
                    "datefmt": "%Y-%m-%dT%H:%M:%S",
                    "format": (
                        "%(asctime)s.%(msecs)03dZ - %(levelname)8s - "
                        f"{env_state.upper()} - %(name)s - "
                        "%(filename)s:%(lineno)s --- %(message)s"
                    ),
                },
            },
            "handlers": handlers,
            "loggers": {
                "twopart": {
                    "handlers": _handlers_for(env_state),
                    "level": level or Config.LOG_LEVEL,
                    "propagate": env_state == "test",
                }
            },
        }
    )
