"""Tucker-L2E tests."""
