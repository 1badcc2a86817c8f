"""Monte-Carlo laboratory for occupation measures and local times of semimartingales."""

__version__ = "0.1.0"
