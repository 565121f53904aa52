"""JSON-over-HTTP front end for :class:`OSNService`."""
from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

from ..errors import (AuthError, ConfigurationError, DomainError, ForbiddenError, NotFoundError,
                      RequestError)
from .service import OSNService, RateLimitError, Trend, Tweet, avatar_path, parse_avatar_path
from .traffic import TrafficModel

log = logging.getLogger(__name__)

_STATUS = ((RateLimitError, 429), (AuthError, 401), (ForbiddenError, 403), (NotFoundError, 404),
           (RequestError, 400), (DomainError, 400))


def tweet_json(service: OSNService, tw: Tweet) -> dict:
    acc = service.account(tw.author)
    return {
        "id": tw.id,
        "text": tw.text,
        "created_at": tw.created_at,
        "lang": tw.lang,
        "is_retweet": tw.is_retweet,
        "retweet_of": tw.retweet_of,
        "user": {"id": acc.id, "handle": acc.handle, "profile_image_url": avatar_path(acc.id, 48)},
    }


def trend_json(tr: Trend) -> dict:
    return {"name": tr.topic, "area": tr.area, "tweet_volume": tr.reported_volume}


def error_status(exc) -> int:
    for cls, status in _STATUS:
        if isinstance(exc, cls):
            return status
    return 500


class _Handler(BaseHTTPRequestHandler):
    service: OSNService  # set on the subclass built by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _token(self):
        auth = self.headers.get("Authorization", "")
        return auth[7:] if auth.startswith("Bearer ") else None

    def _body(self):
        n = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(n) if n else b""

    def _json_body(self):
        raw = self._body()
        try:
            return json.loads(raw or b"{}")
        except json.JSONDecodeError as exc:
            raise RequestError(f"invalid JSON body: {exc}") from None

    def _send(self, status, payload=None, content_type="application/json"):
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _dispatch(self, method):
        url = urlsplit(self.path)
        q = {k: v[-1] for k, v in parse_qs(url.query, keep_blank_values=True).items()}
        parts = [p for p in url.path.split("/") if p]
        svc = self.service
        try:
            route = (method, parts[0] if parts else "")
            if route == ("GET", "trends"):
                area = q.get("area")
                if area is None:
                    raise RequestError("missing area")
                trends = svc.get_trends(area)
                return self._send(200, {"area": area, "as_of": svc.trend_epoch(area),
                                        "trends": [trend_json(t) for t in trends]})
            if route == ("GET", "search"):
                lang = q.get("lang", "en") or None
                tweets, cursor = svc.search(q.get("q", ""), lang, q.get("count", 100), q.get("cursor"),
                                            token=self._token())
                return self._send(200, {"statuses": [tweet_json(svc, t) for t in tweets], "next_cursor": cursor})
            if route == ("POST", "tweets"):
                body = self._json_body()
                tw = svc.post_tweet(self._token(), body.get("text"))
                return self._send(201, tweet_json(svc, tw))
            if route in (("GET", "tweets"), ("DELETE", "tweets")) and len(parts) == 2:
                try:
                    tid = int(parts[1])
                except ValueError:
                    raise NotFoundError(f"no tweet {parts[1]!r}") from None
                if method == "GET":
                    return self._send(200, tweet_json(svc, svc.get_tweet(tid)))
                svc.delete_tweet(self._token(), tid)
                return self._send(200, {"deleted": tid})
            if route == ("GET", "avatars") and len(parts) == 2:
                account, size = parse_avatar_path(parts[1])
                return self._send(200, svc.get_avatar(account, size), "image/jpeg")
            if route == ("PUT", "avatar"):
                acc = svc.set_avatar(self._token(), self._body())
                return self._send(200, {"id": acc.id, "profile_image_url": avatar_path(acc.id, 48)})
            if route == ("POST", "accounts"):
                acc = svc.create_account(self._json_body().get("handle") or "anon")
                return self._send(201, {"id": acc.id, "handle": acc.handle, "token": acc.token})
            if route == ("GET", "clock"):
                return self._send(200, {"now": svc.now})
            if route == ("POST", "clock") and parts[1:] == ["advance"]:
                svc.advance_clock(int(self._json_body().get("minutes", 0)))
                return self._send(200, {"now": svc.now})
            raise NotFoundError(f"no route {method} {url.path}")
        except Exception as exc:  # noqa: BLE001 - mapped onto the wire
            status = error_status(exc)
            if status == 500:
                log.exception("unhandled error")
            return self._send(status, {"error": type(exc).__name__, "message": str(exc)})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_PUT(self):
        self._dispatch("PUT")

    def do_DELETE(self):
        self._dispatch("DELETE")


def make_server(service: OSNService, host="127.0.0.1", port=0) -> ThreadingHTTPServer:
    handler = type("Handler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def start_background(service: OSNService, host="127.0.0.1", port=0):
    """Serve on a daemon thread; returns ``(server, base_url)``."""
    server = make_server(service, host, port)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    h, p = server.server_address[:2]
    return server, f"http://{h}:{p}"


def service_from_config(cfg: dict) -> OSNService:
    """Build a service from a config mapping.

    ``{"seed": 0, "areas": {"za": {"seed": 1, "n_topics": 40}}, "rate_limit": null,
    "warmup_minutes": 0}``; an area may instead list explicit ``topics``.
    """
    try:
        areas = {str(a): TrafficModel.from_dict(m) for a, m in (cfg.get("areas") or {"1": {}}).items()}
        svc = OSNService(areas, seed=int(cfg.get("seed", 0)), rate_limit=cfg.get("rate_limit"),
                         quality=int(cfg.get("quality", 85)))
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigurationError(f"bad service config: {exc}") from exc
    svc.advance_clock(int(cfg.get("warmup_minutes", 0)))
    return svc


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc


def serve(config_path):
    cfg = load_config(config_path)
    svc = service_from_config(cfg)
    server = make_server(svc, cfg.get("host", "127.0.0.1"), int(cfg.get("port", 8089)))
    log.info("serving on %s:%s", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
