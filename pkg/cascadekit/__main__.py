"""Main entry point for the cascadekit package."""

from cascadekit.main import main  # pragma: no cover

if __name__ == "__main__":  # pragma: no cover
    main()
