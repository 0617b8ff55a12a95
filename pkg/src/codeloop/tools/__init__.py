"""Web search and web parse tools with a local HTTP service wrapper."""
