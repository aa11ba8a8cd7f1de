from ..config import Config
from ..enums import ReportStore
from ..exceptions import ReportStoreError
from .database.json import JsonLinesReportStore
from .database.sqlite import SQLiteReportStore

STORE_FOR_STATE = {
    "prod": ReportStore.PROD,
    "dev": ReportStore.DEV,
    "test": ReportStore.DEV,
}


def get_report_store(
    env_state: str | None = None, url: str | None = None
) -> JsonLinesReportStore | SQLiteReportStore:
    """Picks the report store matching the environment state."""
    match STORE_FOR_STATE.get(env_state or Config.ENV_STATE):
        case ReportStore.PROD:
            return SQLiteReportStore(url)
        case ReportStore.DEV:
            return JsonLinesReportStore(url)
        case _:
            raise ReportStoreError()
