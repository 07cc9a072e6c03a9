"""Sample streams, experiment records and the ``passlab`` command line."""
from __future__ import annotations

from .records import SCHEMA_VERSION, ExperimentRecord, validate
from .streams import SampleStream, from_pairs, generate_stream
