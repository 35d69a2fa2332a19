#!/usr/bin/env python
"""udss command-line entry point."""
import os
import sys


def main():
    """Run one udss subcommand."""
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'udss.settings')
    try:
        import django
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed and "
            "available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    django.setup()

    from udss.cli import dispatch
    sys.exit(dispatch(sys.argv))


if __name__ == '__main__':
    main()
