"""docserve: an asynchronous, parallel document-processing engine.

The engine replaces a sequential command loop with a versioned document of
command spans: a total, fast read phase; state-chained evaluation on a worker
pool with precise cancellation; and perspective-gated print tasks.  A minimal
binary protocol connects an editor front-end to the engine.
"""

__version__ = "0.1.0"
