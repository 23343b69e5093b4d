"""External service clients: search, page reading, image fetch, link graph.

Each provider is a small protocol with an in-memory implementation for
tests, an HTTP implementation for live use, and cassette-backed wrappers
via ProviderStack. Transient failures are retried once; anything else
surfaces as ProviderError for the tool layer to turn into an error
observation.
"""
from __future__ import annotations

import base64
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Protocol

import requests

from .cassette import CassetteSession, null_session

logger = logging.getLogger(__name__)

TEXT_RESULT_CAP = 10
IMAGE_RESULT_CAP = 5


class ProviderError(RuntimeError):
    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class TextSearchProvider(Protocol):
    def search(self, query: str) -> list[dict]: ...


class ImageSearchProvider(Protocol):
    def image_search(self, pointer: str) -> list[dict]: ...


class PageReader(Protocol):
    def read(self, url: str) -> str: ...


class ImageFetcher(Protocol):
    def fetch(self, url: str) -> bytes: ...


class LinkProvider(Protocol):
    def out_links(self, title: str) -> list[str]: ...


def _retry_once(fn, what: str):
    try:
        return fn()
    except ProviderError as exc:
        if not exc.retryable:
            raise
        logger.info("retrying %s after transient failure: %s", what, exc)
        time.sleep(0.2)
        return fn()


# --- in-memory providers -------------------------------------------------


@dataclass
class StaticProviders:
    """Deterministic in-memory backend for tests and cassette recording.

    text_results: query -> list of {title, excerpt, url}
    image_results: pointer -> list of {title, url, thumbnail}
    pages: url -> readable text
    images: url -> raw bytes
    links: title -> outgoing link titles
    """

    text_results: dict[str, list[dict]] = field(default_factory=dict)
    image_results: dict[str, list[dict]] = field(default_factory=dict)
    pages: dict[str, str] = field(default_factory=dict)
    images: dict[str, bytes] = field(default_factory=dict)
    links: dict[str, list[str]] = field(default_factory=dict)

    def search(self, query: str) -> list[dict]:
        if query not in self.text_results:
            return []
        return [dict(r) for r in self.text_results[query]]

    def image_search(self, pointer: str) -> list[dict]:
        if pointer not in self.image_results:
            return []
        return [dict(r) for r in self.image_results[pointer]]

    def read(self, url: str) -> str:
        if url not in self.pages:
            raise ProviderError(f"page not reachable: {url} (HTTP 404)")
        return self.pages[url]

    def fetch(self, url: str) -> bytes:
        if url not in self.images:
            raise ProviderError(f"image not fetchable: {url}")
        return self.images[url]

    def out_links(self, title: str) -> list[str]:
        if title not in self.links:
            raise ProviderError(f"unknown entity: {title}")
        return list(self.links[title])


class FlakyProvider:
    """Wraps any provider, failing the first ``failures`` calls. Test aid."""

    def __init__(self, inner, failures: int = 1, retryable: bool = True, status: int = 429):
        self.inner = inner
        self.remaining = failures
        self.retryable = retryable
        self.status = status

    def _maybe_fail(self):
        if self.remaining > 0:
            self.remaining -= 1
            raise ProviderError(f"HTTP {self.status}", retryable=self.retryable)

    def search(self, query: str) -> list[dict]:
        self._maybe_fail()
        return self.inner.search(query)

    def image_search(self, pointer: str) -> list[dict]:
        self._maybe_fail()
        return self.inner.image_search(pointer)

    def read(self, url: str) -> str:
        self._maybe_fail()
        return self.inner.read(url)

    def fetch(self, url: str) -> bytes:
        self._maybe_fail()
        return self.inner.fetch(url)

    def out_links(self, title: str) -> list[str]:
        self._maybe_fail()
        return self.inner.out_links(title)


# --- HTTP providers -------------------------------------------------------


class SerpHttpProvider:
    """Google-style search API client (text + image engines).

    Expects a SerpApi-compatible JSON shape; the key is read from the
    environment at call time.
    """

    def __init__(
        self,
        base_url: str = "https://serpapi.com/search",
        api_key_env: str = "SERP_API_KEY",
        timeout_s: float = 30.0,
    ):
        self.base_url = base_url
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s

    def _get(self, params: dict) -> dict:
        params = dict(params)
        params["api_key"] = os.environ.get(self.api_key_env, "")
        try:
            resp = requests.get(self.base_url, params=params, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise ProviderError(f"search request failed: {exc}", retryable=True) from exc
        if resp.status_code in (429, 500, 502, 503):
            raise ProviderError(f"HTTP {resp.status_code}", retryable=True)
        if resp.status_code != 200:
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def search(self, query: str) -> list[dict]:
        body = self._get({"engine": "google", "q": query})
        results = []
        for item in body.get("organic_results", [])[:TEXT_RESULT_CAP]:
            results.append(
                {
                    "title": item.get("title", ""),
                    "excerpt": item.get("snippet", ""),
                    "url": item.get("link", ""),
                }
            )
        return results

    def image_search(self, pointer: str) -> list[dict]:
        body = self._get({"engine": "google_reverse_image", "image_url": pointer})
        results = []
        for item in body.get("image_results", [])[:IMAGE_RESULT_CAP]:
            results.append(
                {
                    "title": item.get("title", ""),
                    "url": item.get("link", ""),
                    "thumbnail": item.get("thumbnail", ""),
                }
            )
        return results


class ReaderHttpProvider:
    """Readability proxy client: GET {base_url}/{url} returns page text."""

    def __init__(self, base_url: str = "https://r.jina.ai", timeout_s: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s

    def read(self, url: str) -> str:
        try:
            resp = requests.get(f"{self.base_url}/{url}", timeout=self.timeout_s)
        except requests.Timeout as exc:
            raise ProviderError(f"reader timeout for {url}", retryable=True) from exc
        except requests.RequestException as exc:
            raise ProviderError(f"reader failed for {url}: {exc}", retryable=True) from exc
        if resp.status_code != 200:
            raise ProviderError(f"page not reachable: {url} (HTTP {resp.status_code})")
        return resp.text


class HttpImageFetcher:
    def __init__(self, timeout_s: float = 30.0):
        self.timeout_s = timeout_s

    def fetch(self, url: str) -> bytes:
        try:
            resp = requests.get(url, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise ProviderError(f"image fetch failed: {url}: {exc}", retryable=True) from exc
        if resp.status_code != 200:
            raise ProviderError(f"image fetch failed: {url} (HTTP {resp.status_code})")
        return resp.content


class WikiLinkProvider:
    """Outgoing wiki links for a page title via the public MediaWiki API (paged)."""

    def __init__(
        self,
        base_url: str = "https://en.wikipedia.org/w/api.php",
        timeout_s: float = 30.0,
        max_pages: int = 10,
    ):
        self.base_url = base_url
        self.timeout_s = timeout_s
        self.max_pages = max_pages

    def out_links(self, title: str) -> list[str]:
        links: list[str] = []
        cont: dict = {}
        for _ in range(self.max_pages):
            params = {
                "action": "query",
                "titles": title,
                "prop": "links",
                "pllimit": "max",
                "plnamespace": 0,
                "format": "json",
                **cont,
            }
            try:
                resp = requests.get(self.base_url, params=params, timeout=self.timeout_s)
            except requests.RequestException as exc:
                raise ProviderError(f"link query failed: {exc}", retryable=True) from exc
            if resp.status_code != 200:
                raise ProviderError(f"HTTP {resp.status_code}", retryable=True)
            body = resp.json()
            pages = body.get("query", {}).get("pages", {})
            for page in pages.values():
                if "missing" in page:
                    raise ProviderError(f"unknown entity: {title}")
                for link in page.get("links", []):
                    links.append(link["title"])
            cont = body.get("continue", {})
            if not cont:
                break
        return links


# --- cassette-backed stack -------------------------------------------------


class ProviderStack:
    """All providers behind one cassette session.

    In live mode calls go straight to the backends; record stores replies;
    replay never touches the network. Image bytes are base64-wrapped in
    the cassette since responses must be JSON.
    """

    def __init__(
        self,
        session: CassetteSession | None = None,
        text_search: TextSearchProvider | None = None,
        image_search: ImageSearchProvider | None = None,
        reader: PageReader | None = None,
        fetcher: ImageFetcher | None = None,
        links: LinkProvider | None = None,
    ):
        self.session = session or null_session()
        self._text_search = text_search
        self._image_search = image_search
        self._reader = reader
        self._fetcher = fetcher
        self._links = links

    @staticmethod
    def live_default(session: CassetteSession | None = None) -> "ProviderStack":
        serp = SerpHttpProvider()
        return ProviderStack(
            session=session,
            text_search=serp,
            image_search=serp,
            reader=ReaderHttpProvider(),
            fetcher=HttpImageFetcher(),
            links=WikiLinkProvider(),
        )

    def _require(self, backend, name: str):
        if backend is None:
            raise ProviderError(f"no {name} provider configured")
        return backend

    def search(self, query: str) -> list[dict]:
        return self.session.call(
            "text_search",
            {"query": query},
            lambda: _retry_once(
                lambda: self._require(self._text_search, "text search").search(query),
                "text search",
            ),
        )

    def image_search(self, pointer: str) -> list[dict]:
        return self.session.call(
            "image_search",
            {"pointer": pointer},
            lambda: _retry_once(
                lambda: self._require(self._image_search, "image search").image_search(
                    pointer
                ),
                "image search",
            ),
        )

    def read(self, url: str) -> str:
        return self.session.call(
            "read_page",
            {"url": url},
            lambda: _retry_once(
                lambda: self._require(self._reader, "page reader").read(url), "page read"
            ),
        )

    def fetch(self, url: str) -> bytes:
        encoded = self.session.call(
            "fetch_image",
            {"url": url},
            lambda: base64.b64encode(
                _retry_once(
                    lambda: self._require(self._fetcher, "image fetcher").fetch(url),
                    "image fetch",
                )
            ).decode("ascii"),
        )
        return base64.b64decode(encoded)

    def out_links(self, title: str) -> list[str]:
        return self.session.call(
            "out_links",
            {"title": title},
            lambda: _retry_once(
                lambda: self._require(self._links, "link").out_links(title), "link query"
            ),
        )
