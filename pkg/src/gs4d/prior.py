"""Pluggable diffusion prior: analytic oracle for testing and an HTTP client
for an out-of-process prior server.

Wire protocol (HTTP/1.1, JSON): POST {endpoint}/v1/epsilon with
{"image": base64 float32 LE row-major HxWx3, "height", "width",
 "noise_level", "condition": {"reference_image": same encoding,
 "delta_azimuth_deg", "delta_elevation_deg", "delta_radius"}}
-> 200 {"epsilon_hat": same encoding, "height", "width"}.
Any non-200 (after 2 retries with 100 ms / 400 ms backoff) means the prior
is unavailable and the SDS term is skipped for the iteration.
"""

from __future__ import annotations

import base64
import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParameterError, PriorUnavailableError, ProtocolError

RETRY_DELAYS = (0.1, 0.4)


@dataclass(frozen=True)
class CosineSchedule:
    """Cosine alpha-bar noise schedule over discrete steps."""

    num_steps: int = 1000
    shift: float = 0.008
    t_min: int = 20
    t_max: int = 980

    def alpha_bar(self, t: int) -> float:
        f = lambda u: math.cos((u / self.num_steps + self.shift)
                               / (1.0 + self.shift) * math.pi / 2.0) ** 2
        return f(float(t)) / f(0.0)


@dataclass
class PriorCondition:
    """Front-view reference plus the rendered view's pose relative to it."""

    reference_image: np.ndarray
    delta_azimuth_deg: float = 0.0
    delta_elevation_deg: float = 0.0
    delta_radius: float = 0.0


class OraclePrior:
    """Analytic test double: makes the SDS gradient an exact pull toward a target.

    Returns eps_hat = eps + gain * (x0 - target), recovering eps from the
    clean render that the engine forwards in test mode; the resulting SDS
    gradient is w(t) * gain * (x0 - target).
    """

    def __init__(self, target, gain: float = 1.0, schedule: CosineSchedule | None = None):
        self.target = None if target is None else np.asarray(target, dtype=np.float64)
        self.gain = float(gain)
        self.schedule = schedule or CosineSchedule()

    def _target_for(self, condition: PriorCondition) -> np.ndarray:
        return self.target

    def predict_noise(self, x_t, noise_level: int, condition: PriorCondition,
                      clean_render=None) -> np.ndarray:
        if clean_render is None:
            raise ContractError("oracle prior needs the clean render (test-mode channel)")
        x_t = np.asarray(x_t, dtype=np.float64)
        x0 = np.asarray(clean_render, dtype=np.float64)
        target = self._target_for(condition)
        if target is None or target.shape != x0.shape:
            raise ContractError("oracle prior target missing or mismatched with render")
        ab = self.schedule.alpha_bar(noise_level)
        eps = (x_t - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)
        return eps + self.gain * (x0 - target)


def encode_image(img) -> str:
    arr = np.ascontiguousarray(img, dtype="<f4")
    return base64.b64encode(arr.tobytes()).decode("ascii")


def decode_image(data: str, height: int, width: int) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise ProtocolError(f"invalid base64 image payload: {exc}") from exc
    expect = height * width * 3 * 4
    if len(raw) != expect:
        raise ProtocolError(f"image payload is {len(raw)} bytes, expected {expect}")
    return np.frombuffer(raw, dtype="<f4").reshape(height, width, 3)


class RemotePrior:
    """Client for an external prior server speaking the epsilon wire protocol."""

    def __init__(self, endpoint: str, timeout: float = 30.0, session=None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        if session is None:
            import requests
            session = requests.Session()
        self._session = session

    def predict_noise(self, x_t, noise_level: int, condition: PriorCondition,
                      clean_render=None) -> np.ndarray:
        x_t = np.asarray(x_t)
        if x_t.ndim != 3 or x_t.shape[2] != 3:
            raise ParameterError(f"x_t must be HxWx3, got {x_t.shape}")
        h, w = x_t.shape[:2]
        ref = np.asarray(condition.reference_image)
        if ref.shape != x_t.shape:
            raise ParameterError(
                f"reference image {ref.shape} must match render {x_t.shape}")
        body = {
            "image": encode_image(x_t),
            "height": h,
            "width": w,
            "noise_level": int(noise_level),
            "condition": {
                "reference_image": encode_image(ref),
                "delta_azimuth_deg": float(condition.delta_azimuth_deg),
                "delta_elevation_deg": float(condition.delta_elevation_deg),
                "delta_radius": float(condition.delta_radius),
            },
        }
        resp = self._post_with_retries(body)
        try:
            payload = resp.json()
        except Exception as exc:
            raise ProtocolError(f"response is not JSON: {exc}") from exc
        for key in ("epsilon_hat", "height", "width"):
            if key not in payload:
                raise ProtocolError(f"response missing '{key}'")
        if (payload["height"], payload["width"]) != (h, w):
            raise ProtocolError(
                f"server echoed {payload['height']}x{payload['width']}, expected {h}x{w}")
        return decode_image(payload["epsilon_hat"], h, w)

    def _post_with_retries(self, body):
        import requests
        url = self.endpoint + "/v1/epsilon"
        last = None
        for attempt in range(len(RETRY_DELAYS) + 1):
            try:
                resp = self._session.post(url, json=body, timeout=self.timeout)
                if resp.status_code == 200:
                    return resp
                last = f"HTTP {resp.status_code}"
            except requests.RequestException as exc:
                last = repr(exc)
            if attempt < len(RETRY_DELAYS):
                time.sleep(RETRY_DELAYS[attempt])
        raise PriorUnavailableError(f"prior at {url} unavailable after retries: {last}")
