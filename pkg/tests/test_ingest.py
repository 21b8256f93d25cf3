import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ringsum.errors import InvalidSpecError, ParseError, SnapshotError
from ringsum.grid import GridConfig
from ringsum.ingest import Event, Registry, RegistryConfig, parse_event, read_events, tokenize


def test_parse_text_event():
    ev = parse_event('{"text":"Bitcoin rally","lat":40.7,"lon":-74.0}')
    assert ev.terms == ("bitcoin", "rally")
    reg = Registry(RegistryConfig(backend="tsum_plus"))
    reg.observe(ev)
    assert reg.get("bitcoin").top_k(1)[0].cell == 46906


def test_parse_terms_passthrough():
    ev = parse_event('{"terms":["flu"],"lat":0.5,"lon":0.5,"ts":17}')
    assert ev == Event(("flu",), 0.5, 0.5, 17.0)


def test_out_of_extent_is_counted_not_fatal():
    reg = Registry(RegistryConfig(backend="tsum_plus"))
    assert reg.observe(parse_event('{"terms":["flu"],"lat":91.0,"lon":0.0}')) is False
    assert reg.rejected == 1 and reg.n_events == 0 and not reg.summaries


@pytest.mark.parametrize("line,msg", [
    ("not json", "invalid JSON"),
    ("[1, 2]", "JSON object"),
    ('{"lat":1,"lon":2}', "'text' or 'terms'"),
    ('{"text":"x","lon":2}', "lat"),
    ('{"text":"x","lat":"a","lon":2}', "finite number"),
    ('{"terms":"flu","lat":1,"lon":2}', "list of strings"),
    ('{"text":"flu","lat":1,"lon":2,"ts":"noon"}', "ts"),
])
def test_parse_errors_carry_line_number(line, msg):
    with pytest.raises(ParseError) as info:
        parse_event(line, 7)
    assert str(info.value).startswith("line 7: ")
    assert msg in str(info.value)
    assert info.value.line_no == 7


def test_tokenize_examples():
    assert tokenize("New York!") == ["new", "york"]
    assert tokenize("a I x") == []
    assert tokenize("flu flu vaccine") == ["flu", "vaccine"]
    assert tokenize("COVID-19 in NYC") == ["covid", "19", "in", "nyc"]


@given(st.text())
def test_tokenize_properties(text):
    toks = tokenize(text)
    assert len(toks) == len(set(toks))
    for t in toks:
        assert len(t) >= 2 and t == t.lower() and t.isascii() and t.isalnum()


def test_observe_two_terms():
    reg = Registry(RegistryConfig(backend="tsum_plus"))
    reg.observe(parse_event('{"text":"flu shot","lat":1.5,"lon":1.5}'))
    assert reg.total_frequency("flu") == reg.total_frequency("shot") == 1
    assert reg.n_events == 1


def test_whitelist_excludes_terms():
    reg = Registry(RegistryConfig(backend="tsum_plus"), whitelist=["flu"])
    reg.observe(parse_event('{"text":"flu shot","lat":1.5,"lon":1.5}'))
    assert set(reg.summaries) == {"flu"}


def test_empty_events_are_skipped():
    reg = Registry(RegistryConfig(backend="tsum_plus"))
    assert reg.observe(parse_event('{"text":"a b","lat":1.5,"lon":1.5}')) is False
    assert reg.empty == 1 and reg.n_events == 0


def test_term_totals_match_direct_count(rng):
    vocab = [f"w{i}" for i in range(30)]
    events = []
    for _ in range(100_000 // 50):
        k = int(rng.integers(1, 5))
        words = list(rng.choice(vocab, size=k))
        events.append(Event(tuple(dict.fromkeys(words)), float(rng.uniform(-80, 80)), float(rng.uniform(-170, 170))))
    reg = Registry(RegistryConfig(backend="ringsum", grid=GridConfig(cell_size_deg=10.0)))
    reg.ingest(events)
    per_term = {}
    for ev in events:
        for t in ev.terms:
            per_term[t] = per_term.get(t, 0) + 1
    assert {t: reg.total_frequency(t) for t in reg.summaries} == per_term
    assert sum(reg.total_frequency(t) for t in reg.summaries) == sum(len(ev.terms) for ev in events)


def test_read_events_jsonl_and_csv(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text('{"text":"flu","lat":1,"lon":2}\n\n{"terms":["Cold"],"lat":3,"lon":4}\n', encoding="utf-8")
    assert [e.terms for e in read_events(p)] == [("flu",), ("cold",)]
    c = tmp_path / "e.csv"
    c.write_text("term,lat,lon\nflu,1,2\nCold,3,4\n", encoding="utf-8")
    assert [(e.terms, e.lat) for e in read_events(c)] == [(("flu",), 1.0), (("cold",), 3.0)]
    bad = tmp_path / "bad.csv"
    bad.write_text("flu,1\n", encoding="utf-8")
    with pytest.raises(ParseError, match="line 1"):
        list(read_events(bad))
    badj = tmp_path / "bad.jsonl"
    badj.write_text('{"text":"flu","lat":1,"lon":2}\n{oops\n', encoding="utf-8")
    with pytest.raises(ParseError, match="line 2"):
        list(read_events(badj))


@pytest.mark.parametrize("kw", [dict(backend="bloom"), dict(m=0), dict(strategy="eager"),
                                dict(strategy="fixed_center"), dict(transfer="warp")])
def test_config_validation(kw):
    with pytest.raises(InvalidSpecError):
        RegistryConfig(**kw)


def test_config_defaults():
    assert RegistryConfig().m == 50
    assert RegistryConfig(backend="tsum_plus").m == 216
    c = RegistryConfig(grid=GridConfig(cell_size_deg=5.0), ratio=0.5)
    assert RegistryConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


def _events(rng, n=3000):
    out = []
    for _ in range(n):
        terms = ("alpha",) if rng.uniform() < 0.7 else ("alpha", "beta")
        lat = float(np.clip(rng.normal(40, 10), -80, 80))
        lon = float(np.clip(rng.normal(-70, 20), -170, 170))
        out.append(Event(terms, lat, lon))
    return out


@pytest.mark.parametrize("backend", ["ringsum", "tsum_plus"])
def test_snapshot_round_trip_and_replay(tmp_path, rng, backend):
    events = _events(rng)
    cfg = RegistryConfig(backend=backend, m=20, grid=GridConfig(cell_size_deg=10.0))
    a = Registry(cfg)
    a.ingest(events)
    a.save(tmp_path / "a")
    b = Registry(cfg)
    b.ingest(events)
    b.save(tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    loaded = Registry.load(tmp_path / "a")
    assert loaded.config == cfg
    assert loaded.n_events == a.n_events
    for t in a.summaries:
        assert loaded.get(t).to_bytes() == a.get(t).to_bytes()


def test_snapshot_detects_corruption(tmp_path, rng):
    reg = Registry(RegistryConfig(backend="tsum_plus", m=5))
    reg.ingest(_events(rng, 100))
    reg.save(tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    victim = tmp_path / manifest["terms"]["alpha"]["file"]
    data = bytearray(victim.read_bytes())
    data[-1] ^= 0xFF
    victim.write_bytes(bytes(data))
    with pytest.raises(SnapshotError, match="checksum"):
        Registry.load(tmp_path)
    victim.unlink()
    with pytest.raises(SnapshotError, match="missing"):
        Registry.load(tmp_path)


def test_snapshot_missing_dir(tmp_path):
    with pytest.raises(SnapshotError):
        Registry.load(tmp_path / "nope")
