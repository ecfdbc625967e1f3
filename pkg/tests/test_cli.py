"""CLI behavior: dispatch, exit codes, config loading, detect and bench."""

import random
import subprocess
import sys

import pytest

from wireshaper.capture import write_capture_file
from wireshaper.cli import load_shaping_document, main
from wireshaper.framing import encode_frame

DOCS = "docs"


def run_cli(*argv):
    return main(list(argv))


class TestDispatch:
    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("bogus")
        assert exc.value.code == 2

    def test_no_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run_cli()
        assert exc.value.code == 2

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli("--version")
        assert exc.value.code == 0
        assert "wireshaper" in capsys.readouterr().out

    def test_console_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "wireshaper.cli", "--version"],
            capture_output=True, text=True)
        assert proc.returncode == 0


class TestCheckConfig:
    def test_example_docs_are_valid(self, capsys):
        assert run_cli("check-config",
                       "--constraints", f"{DOCS}/constraints.example.conf",
                       "--timing", f"{DOCS}/timing.example.conf",
                       "--rules", f"{DOCS}/rules.example.conf") == 0
        assert "3 file(s) valid" in capsys.readouterr().out

    def test_invalid_constraints_exit_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.conf"
        bad.write_text("[constraint]\nfunction: bogus_metric\nmode: ge\n"
                       "value: 1\ntarget: all\n")
        assert run_cli("check-config", "--constraints", str(bad)) == 1
        err = capsys.readouterr().err
        assert "bad.conf" in err
        assert "entry 0" in err

    def test_invalid_timing_reports_line(self, tmp_path, capsys):
        bad = tmp_path / "timing.conf"
        bad.write_text("min_gap_ms: 5\nwarp_factor: 9\n")
        assert run_cli("check-config", "--timing", str(bad)) == 1
        assert "line 2" in capsys.readouterr().err

    def test_missing_file_exit_1(self):
        assert run_cli("check-config", "--constraints", "/nope.conf") == 1

    def test_nothing_to_check(self):
        assert run_cli("check-config") == 1


class TestShapingDocument:
    def test_shaper_keys_loaded(self, tmp_path):
        doc = tmp_path / "c.conf"
        doc.write_text("max_frame_len: 256\nflush_period_ms: 5\n"
                       "[constraint]\nfunction: frame_length_bytes\n"
                       "mode: le\nvalue: 256\ntarget: all\n")
        cset, config = load_shaping_document(str(doc))
        assert len(cset) == 1
        assert config.max_frame_len == 256
        assert config.flush_period_ns == 5_000_000

    def test_defaults_without_keys(self, tmp_path):
        doc = tmp_path / "c.conf"
        doc.write_text("[constraint]\nfunction: frame_length_bytes\n"
                       "mode: le\nvalue: 1400\ntarget: all\n")
        _, config = load_shaping_document(str(doc))
        assert config.max_frame_len == 1400


class TestDetectCommand:
    def test_detect_prints_verdict(self, tmp_path, capsys):
        frames = [bytes(random.Random(3).randbytes(1024)) for _ in range(4)]
        capture = tmp_path / "flow.bin"
        write_capture_file(str(capture), frames)
        rules = tmp_path / "rules.conf"
        rules.write_text("[rule]\nfunction: entropy_bits_per_byte\nmode: gt\n"
                         "value: 7.0\ntarget: all\naction: flag\n")
        assert run_cli("detect", "--rules", str(rules),
                       "--frames", str(capture)) == 0
        out = capsys.readouterr().out
        assert "flagged: True" in out
        assert "first flagged ordinal: 0" in out

    def test_detect_unflagged_still_exit_0(self, tmp_path, capsys):
        capture = tmp_path / "flow.bin"
        write_capture_file(str(capture), [b"A" * 100])
        rules = tmp_path / "rules.conf"
        rules.write_text("[rule]\nfunction: entropy_bits_per_byte\nmode: gt\n"
                         "value: 7.0\ntarget: all\naction: flag\n")
        assert run_cli("detect", "--rules", str(rules),
                       "--frames", str(capture)) == 0
        assert "flagged: False" in capsys.readouterr().out

    def test_detect_frames_directory(self, tmp_path, capsys):
        flow_dir = tmp_path / "flow"
        flow_dir.mkdir()
        (flow_dir / "0.bin").write_bytes(encode_frame(b"x" * 50, b"", 1400))
        rules = tmp_path / "rules.conf"
        rules.write_text("[rule]\nfunction: printable_ascii_fraction\n"
                         "mode: lt\nvalue: 0.5\ntarget: all\naction: flag\n")
        assert run_cli("detect", "--rules", str(rules),
                       "--frames", str(flow_dir)) == 0

    def test_detect_bad_rules_exit_1(self, tmp_path):
        capture = tmp_path / "flow.bin"
        write_capture_file(str(capture), [b"x"])
        rules = tmp_path / "rules.conf"
        rules.write_text("[rule]\naction: banana\n")
        assert run_cli("detect", "--rules", str(rules),
                       "--frames", str(capture)) == 1


def free_port() -> int:
    import socket
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class TestEndpointCommands:
    def test_cli_tunnel_roundtrip_and_sigterm(self, tmp_path):
        import signal
        import socket
        import threading
        import time

        echo_port = free_port()
        server_port = free_port()
        client_port = free_port()

        echo = socket.create_server(("127.0.0.1", echo_port))

        def echo_loop():
            conn, _ = echo.accept()
            with conn:
                while True:
                    chunk = conn.recv(65536)
                    if not chunk:
                        break
                    conn.sendall(chunk)
                conn.shutdown(socket.SHUT_WR)

        threading.Thread(target=echo_loop, daemon=True).start()

        constraints = tmp_path / "c.conf"
        constraints.write_text(
            "[constraint]\nfunction: frame_length_bytes\nmode: le\n"
            "value: 1400\ntarget: all\n")
        server = subprocess.Popen(
            [sys.executable, "-m", "wireshaper.cli", "server",
             "--listen", f"127.0.0.1:{server_port}",
             "--forward", f"127.0.0.1:{echo_port}",
             "--constraints", str(constraints)],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE)
        client = subprocess.Popen(
            [sys.executable, "-m", "wireshaper.cli", "client",
             "--listen", f"127.0.0.1:{client_port}",
             "--peer", f"127.0.0.1:{server_port}",
             "--constraints", str(constraints)],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE)
        try:
            data = random.Random(8).randbytes(100_000)
            deadline = time.time() + 15
            sock = None
            while time.time() < deadline:
                try:
                    sock = socket.create_connection(
                        ("127.0.0.1", client_port), timeout=1)
                    break
                except OSError:
                    time.sleep(0.1)
            assert sock is not None, "client endpoint never came up"
            with sock:
                sock.sendall(data)
                sock.shutdown(socket.SHUT_WR)
                received = bytearray()
                sock.settimeout(20)
                while True:
                    chunk = sock.recv(65536)
                    if not chunk:
                        break
                    received.extend(chunk)
            assert bytes(received) == data
        finally:
            for proc in (client, server):
                proc.send_signal(signal.SIGTERM)
            echo.close()
        assert client.wait(timeout=15) == 0
        assert server.wait(timeout=15) == 0


class TestBenchCommand:
    def test_bench_small_size_rejected(self):
        assert run_cli("bench", "--size", "1000") == 1

    def test_bench_runs_1mib(self, capsys):
        assert run_cli("bench", "--size", str(1024 * 1024), "--seed", "1") == 0
        out = capsys.readouterr().out
        assert "baseline" in out
        assert "entropy-floor" in out

    def test_bench_custom_constraints_and_json(self, tmp_path, capsys):
        doc = tmp_path / "c.conf"
        doc.write_text("[constraint]\nfunction: entropy_bits_per_byte\n"
                       "mode: ge\nvalue: 1.0\ntarget: all\n")
        assert run_cli("bench", "--size", str(1024 * 1024), "--seed", "2",
                       "--constraints", str(doc), "--json") == 0
        out = capsys.readouterr().out
        assert '"runs"' in out

    def test_bench_profile(self, capsys):
        assert run_cli("bench", "--size", str(1024 * 1024),
                       "--profile") == 0
        assert "profile:" in capsys.readouterr().out
