from .logging_config import configure_logging

# Configure logging when the package is imported
configure_logging()
