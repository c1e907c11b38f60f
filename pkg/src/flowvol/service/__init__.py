"""HTTP service: pydantic schemas, pure handlers and the FastAPI app."""
