import os

# Loaded before the twopart package is imported, so Config and logging
# see the test state set by twopart/tests/conftest.py.
os.environ["ENV_STATE"] = "test"
