"""Local social network: service state, HTTP JSON server and clients."""
from .service import OSNService, Trend, Tweet, Account, RateLimitError, avatar_path, parse_avatar_path
from .traffic import TopicSpec, TrafficModel

__all__ = ["OSNService", "Trend", "Tweet", "Account", "RateLimitError", "avatar_path",
           "parse_avatar_path", "TopicSpec", "TrafficModel"]
