from pathlib import Path

import pytest

from lapps.config import ConfigError, ServerConfig, load_config, parse_config
from lapps.wire import ResponseMode


def test_defaults():
    c = parse_config("")
    assert c == ServerConfig()
    assert (c.radius_m, c.password_length, c.password_ttl_ms) == (20.0, 8, 300_000)
    assert c.response_mode is ResponseMode.TEXT
    assert c.admin_port is None and not c.tls_enabled


def test_single_key(tmp_path):
    f = tmp_path / "lapps.properties"
    f.write_text("listen.port=7001\n")
    c = load_config(f)
    assert c.listen_port == 7001
    assert c.radius_m == 20.0


def test_all_keys(tmp_path):
    f = tmp_path / "lapps.txt"
    f.write_text(
        "# comment\n! also a comment\n\n"
        "listen.port = 9000\nradius.m=25.5\npassword.length=12\npassword.ttl.ms=60000\n"
        "response.mode=QR\nsnapshot.path=state/snap.txt\ntls.enabled=false\n"
        "seed.users=users.csv\nseed.atms=/abs/atms.csv\nadmin.port=9001\npassword.alphabet=abc$\n"
    )
    c = load_config(f)
    assert c.listen_port == 9000 and c.admin_port == 9001
    assert c.radius_m == 25.5 and c.password_length == 12 and c.password_ttl_ms == 60000
    assert c.response_mode is ResponseMode.QR
    assert c.snapshot_path == tmp_path / "state/snap.txt"
    assert c.seed_users == tmp_path / "users.csv"
    assert c.seed_atms == Path("/abs/atms.csv")
    assert c.password_alphabet == "abc$"


@pytest.mark.parametrize("text, line", [
    ("listen.port=7001\nradius.m=abc\n", 2),
    ("radius.m=0\n", 1),
    ("\n\nno equals sign\n", 3),
    ("password.ttl.ms=-5\n", 1),
    ("password.length=0\n", 1),
    ("response.mode=fax\n", 1),
    ("listen.port=70000\n", 1),
    ("password.alphabet=aa\n", 1),
    ("tls.enabled=maybe\n", 1),
    ("tls.enabled=true\n", 1),
])
def test_errors_carry_line(text, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_unknown_key_warns(caplog):
    c = parse_config("frobnicate=1\n")
    assert c == ServerConfig()
    assert "frobnicate" in caplog.text
