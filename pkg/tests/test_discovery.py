import json
import time

import pytest

from camnet.discovery import (
    DEFAULT_SIGNATURES,
    BrandSignature,
    ProbeHit,
    RefreshEstimationError,
    ScanRefused,
    SignatureError,
    estimate_refresh_rate,
    load_signatures,
    parse_signatures,
    probe_address,
    record_from_candidate,
    scan_range,
    signatures_to_json,
    verify_candidate,
)
from camnet.model import StreamEndpoint, validate_camera_record
from camnet.scenes import SceneSpec
from camnet.testbed import CameraSpec, FarmSpec, spawn_farm


class TestSignatures:
    def test_default_signatures_parse_their_own_json(self):
        again = parse_signatures(signatures_to_json(DEFAULT_SIGNATURES))
        assert tuple(again) == DEFAULT_SIGNATURES

    def test_load_rejects_bad_json(self, tmp_path):
        p = tmp_path / "sigs.json"
        p.write_text("{not json")
        with pytest.raises(SignatureError):
            load_signatures(str(p))

    def test_load_rejects_bad_path(self, tmp_path):
        p = tmp_path / "sigs.json"
        p.write_text(json.dumps([{"brand": "x", "paths": ["nope"], "expected_content_type_prefixes": ["image/"]}]))
        with pytest.raises(SignatureError):
            load_signatures(str(p))

    def test_load_rejects_empty(self, tmp_path):
        p = tmp_path / "sigs.json"
        p.write_text("[]")
        with pytest.raises(SignatureError):
            load_signatures(str(p))


class TestProbe:
    def test_camera_yields_one_hit(self, small_farm):
        ep = small_farm.camera_endpoint("snapcam")
        hits = probe_address(ep.address, DEFAULT_SIGNATURES, 2.0)
        assert len(hits) == 1
        hit = hits[0]
        assert hit.brand == "axis"
        assert hit.path == "/axis-cgi/jpg/image.cgi"
        assert hit.status_code == 200
        assert hit.content_type.startswith("image/jpeg")
        assert len(hit.first_bytes) <= 64
        assert hit.first_bytes.startswith(b"\xff\xd8\xff")

    def test_closed_port_yields_nothing(self):
        hits = probe_address("127.81.0.14:9", DEFAULT_SIGNATURES, 0.5)
        assert hits == []

    def test_decoy_html_yields_nothing(self, small_farm):
        decoy = [e for e in small_farm.endpoints if e.role == "decoy"][0]
        assert probe_address(decoy.address, DEFAULT_SIGNATURES, 2.0) == []


class TestVerify:
    def hit_for(self, farm, name):
        ep = farm.camera_endpoint(name)
        return probe_address(ep.address, DEFAULT_SIGNATURES, 2.0)[0]

    def test_changing_jpeg_is_live(self, small_farm):
        v = verify_candidate(self.hit_for(small_farm, "snapcam"), liveness_delay_s=0.3)
        assert v.is_image and v.is_live
        assert v.detected_format == "jpeg"
        assert v.dims == (160, 120)
        assert len(v.evidence) == 2 and all(e.sha256 for e in v.evidence)

    def test_static_jpeg_not_live(self, small_farm):
        v = verify_candidate(self.hit_for(small_farm, "staticcam"), liveness_delay_s=0.3)
        assert v.is_image and not v.is_live
        assert v.evidence[0].sha256 == v.evidence[1].sha256

    def test_mjpeg_stream_detected(self, small_farm):
        v = verify_candidate(self.hit_for(small_farm, "streamcam"), liveness_delay_s=0.3)
        assert v.is_image and v.is_live
        assert v.detected_format == "mjpeg"

    def test_html_not_image(self, small_farm):
        decoy = [e for e in small_farm.endpoints if e.role == "decoy"][0]
        fake_hit = ProbeHit(
            address=decoy.address,
            path="/snapshot.cgi",
            brand="foscam",
            status_code=200,
            content_type="text/html",
            first_bytes=b"<html>",
        )
        v = verify_candidate(fake_hit, liveness_delay_s=0.2)
        assert not v.is_image
        assert v.detected_format == "none"
        assert not v.is_live

    def test_second_fetch_failure_means_not_live(self, fixture_server):
        calls = {"n": 0}

        def body(count):
            return b"\xff\xd8\xff" + bytes([count % 250])

        fixture_server.add("/flaky.jpg", content_type="image/jpeg", body=body)
        hit = ProbeHit(
            address=f"127.0.0.1:{fixture_server.port}",
            path="/flaky.jpg",
            brand="axis",
            status_code=200,
            content_type="image/jpeg",
            first_bytes=b"\xff\xd8\xff",
        )

        def kill_then_sleep(delay):
            fixture_server.routes.pop("/flaky.jpg")

        v = verify_candidate(hit, liveness_delay_s=0.1, sleeper=kill_then_sleep)
        assert v.is_image and not v.is_live
        assert v.evidence[1].error is not None

    def test_oversized_body_rejected(self, fixture_server):
        fixture_server.add("/huge.jpg", content_type="image/jpeg", body=b"\xff\xd8\xff" + b"\0" * 8192)
        hit = ProbeHit(
            address=f"127.0.0.1:{fixture_server.port}",
            path="/huge.jpg",
            brand="axis",
            status_code=200,
            content_type="image/jpeg",
            first_bytes=b"\xff\xd8\xff",
        )
        v = verify_candidate(hit, liveness_delay_s=0.1, body_cap=1024)
        assert not v.is_image
        from camnet.discovery import disposition_for

        assert disposition_for(v) == "rejected_not_image"


class TestScanRange:
    def test_scan_small_farm(self, small_farm):
        cands = scan_range(
            small_farm.cidr,
            DEFAULT_SIGNATURES,
            port=small_farm.port,
            concurrency_limit=6,
            rate_limit=60,
            timeout_s=1.0,
            liveness_delay_s=0.4,
        )
        by_disp = {}
        for c in cands:
            by_disp.setdefault(c.disposition, []).append(c)
        assert len(by_disp.get("accepted", [])) == 2  # snapcam + streamcam
        assert len(by_disp.get("pending_review", [])) == 1  # staticcam
        assert "rejected_not_image" not in by_disp
        # deterministic order: ascending address
        addrs = [c.hit.address for c in cands]
        assert addrs == sorted(addrs, key=lambda a: tuple(int(x) for x in a.split(":")[0].split(".")))

    def test_empty_range(self):
        assert scan_range("127.84.0.0/30", DEFAULT_SIGNATURES, port=9, rate_limit=100, timeout_s=0.2) != None  # noqa: E711

    def test_wide_range_refused(self):
        with pytest.raises(ScanRefused):
            scan_range("10.0.0.0/8", DEFAULT_SIGNATURES)

    def test_public_range_refused_without_override(self):
        # refusal happens before any I/O ever starts
        with pytest.raises(ScanRefused):
            scan_range("8.8.8.0/28", DEFAULT_SIGNATURES)

    def test_rate_and_concurrency_respected(self):
        spec = FarmSpec(
            cameras=[
                CameraSpec(name="c1", brand="axis", scene=SceneSpec(kind="moving_blobs", count=1, seed=1)),
                CameraSpec(name="c2", brand="foscam", scene=SceneSpec(kind="moving_blobs", count=1, seed=2)),
            ],
            decoys=2,
            base_cidr="127.85.0.0/28",
        )
        farm = spawn_farm(spec)
        try:
            rate = 25.0
            t0 = time.monotonic()
            scan_range(
                farm.cidr,
                DEFAULT_SIGNATURES,
                port=farm.port,
                concurrency_limit=3,
                rate_limit=rate,
                timeout_s=1.0,
                liveness_delay_s=0.3,
            )
            elapsed = time.monotonic() - t0
            log = farm.request_log
            assert log.max_in_flight() <= 3
            assert log.max_rate(1.0) <= rate * 1.1 + 1.0  # +1 burst allowance in any window
            # 4 listeners x 8 paths plus verification fetches, minus the burst
            assert elapsed >= (log.count() - 1) / rate * 0.5
        finally:
            farm.stop()

    def test_two_scans_of_static_farm_identical(self):
        spec = FarmSpec(
            cameras=[
                CameraSpec(name="s1", brand="axis", scene=SceneSpec(kind="static", seed=4)),
                CameraSpec(name="s2", brand="hikvision", scene=SceneSpec(kind="static", seed=5)),
            ],
            decoys=1,
            base_cidr="127.86.0.0/28",
        )
        farm = spawn_farm(spec)
        try:
            def normalized():
                cands = scan_range(
                    farm.cidr,
                    DEFAULT_SIGNATURES,
                    port=farm.port,
                    concurrency_limit=4,
                    rate_limit=200,
                    timeout_s=1.0,
                    liveness_delay_s=0.2,
                )
                out = []
                for c in cands:
                    d = c.to_json()
                    for e in d["verification"]["evidence"]:
                        e["t"] = 0
                    out.append(d)
                return out

            assert normalized() == normalized()
        finally:
            farm.stop()


class TestRefreshRate:
    def test_static_endpoint(self, small_farm):
        ep = small_farm.camera_endpoint("staticcam")
        got = estimate_refresh_rate(
            StreamEndpoint(url=ep.url, mode="snapshot_poll"), samples=4, poll_interval_s=0.1
        )
        assert got == "static"

    def test_slow_source_under_simulated_clock(self):
        # a source that refreshes every 900 s, polled every 300 s
        state = {"t": 0.0}

        def clock():
            return state["t"]

        def sleeper(dt):
            state["t"] += dt

        def fetcher():
            epoch = int(state["t"] // 900)
            return b"frame-%d" % epoch

        got = estimate_refresh_rate(
            StreamEndpoint(url="http://example.invalid/img.jpg", mode="snapshot_poll"),
            samples=10,
            poll_interval_s=300,
            fetcher=fetcher,
            clock=clock,
            sleeper=sleeper,
        )
        assert got == pytest.approx(1.0 / 900.0, rel=1e-6)

    def test_mjpeg_farm_rate(self, small_farm):
        ep = small_farm.camera_endpoint("streamcam")
        got = estimate_refresh_rate(StreamEndpoint(url=ep.url, mode="mjpeg_stream"), samples=12)
        assert got == pytest.approx(10.0, abs=1.0)

    def test_too_few_fetches_is_an_error(self):
        def fetcher():
            raise IOError("down")

        with pytest.raises(RefreshEstimationError) as exc:
            estimate_refresh_rate(
                StreamEndpoint(url="http://example.invalid/x", mode="snapshot_poll"),
                samples=3,
                poll_interval_s=0.01,
                fetcher=fetcher,
                sleeper=lambda dt: None,
            )
        assert len(exc.value.evidence) == 3


class TestRecordFromCandidate:
    def test_accepted_candidates_become_valid_records(self, small_farm):
        cands = scan_range(
            small_farm.cidr,
            DEFAULT_SIGNATURES,
            port=small_farm.port,
            concurrency_limit=6,
            rate_limit=100,
            timeout_s=1.0,
            liveness_delay_s=0.3,
        )
        accepted = [c for c in cands if c.disposition == "accepted"]
        assert accepted
        for cand in accepted:
            rec = record_from_candidate(cand)
            assert validate_camera_record(rec) == []
            assert f"disposition:accepted" in rec.tags
            if cand.verification.detected_format == "mjpeg":
                assert rec.endpoint.mode == "mjpeg_stream"
            else:
                assert rec.endpoint.mode == "snapshot_poll"
