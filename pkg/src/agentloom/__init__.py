"""agentloom: declarative multi-agent workflows — define, run, profile, deploy."""

__version__ = "0.1.0"

__all__ = ["WorkflowManager", "RuntimeEnv", "__version__"]


def __getattr__(name):
    # Lazy: importing agentloom should not pull in the server stack.
    if name in ("WorkflowManager", "RuntimeEnv"):
        from agentloom import engine

        return getattr(engine, name)
    raise AttributeError(name)
