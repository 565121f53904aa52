"""Clients for the social network. Both return the same wire dictionaries."""
from __future__ import annotations

import json
import urllib.error
import urllib.request
from urllib.parse import urlencode

from ..avatars import AvatarImage, encode_png
from ..errors import AuthError, DomainError, ForbiddenError, NotFoundError, RequestError
from .server import trend_json, tweet_json
from .service import OSNService, RateLimitError, avatar_path, parse_avatar_path

_BY_STATUS = {400: RequestError, 401: AuthError, 403: ForbiddenError, 404: NotFoundError, 429: RateLimitError}


def _avatar_bytes(image):
    if isinstance(image, AvatarImage):
        return encode_png(image.pixels)
    return bytes(image)


class HTTPClient:
    def __init__(self, base_url: str, token: str | None = None, timeout=30.0):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout = timeout

    def with_token(self, token) -> "HTTPClient":
        return HTTPClient(self.base_url, token, self.timeout)

    def _request(self, method, path, body=None, content_type="application/json", raw=False):
        data = None
        if body is not None:
            data = body if isinstance(body, bytes) else json.dumps(body).encode()
        req = urllib.request.Request(self.base_url + path, data=data, method=method)
        if data is not None:
            req.add_header("Content-Type", content_type)
        if self.token:
            req.add_header("Authorization", f"Bearer {self.token}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = resp.read()
        except urllib.error.HTTPError as exc:
            try:
                msg = json.loads(exc.read()).get("message", "")
            except ValueError:
                msg = exc.reason
            raise _BY_STATUS.get(exc.code, RequestError)(msg) from None
        return payload if raw else json.loads(payload)

    def trends(self, area):
        return self._request("GET", "/trends?" + urlencode({"area": area}))

    def search(self, q, lang="en", count=100, cursor=None):
        params = {"q": q, "lang": lang or "", "count": count}
        if cursor is not None:
            params["cursor"] = cursor
        return self._request("GET", "/search?" + urlencode(params))

    def post_tweet(self, text):
        return self._request("POST", "/tweets", {"text": text})

    def delete_tweet(self, tweet_id):
        return self._request("DELETE", f"/tweets/{int(tweet_id)}")

    def get_tweet(self, tweet_id):
        return self._request("GET", f"/tweets/{int(tweet_id)}")

    def avatar(self, url_or_account, size=None):
        path = url_or_account if size is None else avatar_path(url_or_account, size)
        if not path.startswith("/"):
            path = "/avatars/" + path
        return self._request("GET", path, raw=True)

    def set_avatar(self, image):
        return self._request("PUT", "/avatar", _avatar_bytes(image), "application/octet-stream")

    def create_account(self, handle):
        return self._request("POST", "/accounts", {"handle": handle})

    def now(self):
        return self._request("GET", "/clock")["now"]

    def advance(self, minutes):
        return self._request("POST", "/clock/advance", {"minutes": int(minutes)})["now"]


class LocalClient:
    """Same surface as :class:`HTTPClient`, calling the service in-process."""

    def __init__(self, service: OSNService, token: str | None = None):
        self.service = service
        self.token = token

    def with_token(self, token) -> "LocalClient":
        return LocalClient(self.service, token)

    def trends(self, area):
        svc = self.service
        trends = svc.get_trends(area)
        return {"area": str(area), "as_of": svc.trend_epoch(area), "trends": [trend_json(t) for t in trends]}

    def search(self, q, lang="en", count=100, cursor=None):
        tweets, nxt = self.service.search(q, lang or None, count, cursor, token=self.token)
        return {"statuses": [tweet_json(self.service, t) for t in tweets], "next_cursor": nxt}

    def post_tweet(self, text):
        return tweet_json(self.service, self.service.post_tweet(self.token, text))

    def delete_tweet(self, tweet_id):
        self.service.delete_tweet(self.token, int(tweet_id))
        return {"deleted": int(tweet_id)}

    def get_tweet(self, tweet_id):
        return tweet_json(self.service, self.service.get_tweet(int(tweet_id)))

    def avatar(self, url_or_account, size=None):
        if size is None:
            url_or_account, size = parse_avatar_path(url_or_account)
        return self.service.get_avatar(url_or_account, size)

    def set_avatar(self, image):
        acc = self.service.set_avatar(self.token, _avatar_bytes(image))
        return {"id": acc.id, "profile_image_url": avatar_path(acc.id, 48)}

    def create_account(self, handle):
        acc = self.service.create_account(handle)
        return {"id": acc.id, "handle": acc.handle, "token": acc.token}

    def now(self):
        return self.service.now

    def advance(self, minutes):
        self.service.advance_clock(int(minutes))
        return self.service.now


def large_avatar_url(profile_image_url: str) -> str:
    """Swap the size suffix of an avatar link for the 400x400 rendition."""
    if "_normal." not in profile_image_url:
        raise DomainError(f"not a normal-size avatar link: {profile_image_url}")
    return profile_image_url.replace("_normal.", "_400x400.")
