from agentloom.server.app import build_serve_app, create_app

__all__ = ["create_app", "build_serve_app"]
