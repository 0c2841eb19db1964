import math

import pytest

from core.exceptions import ConfigurationError, CriticalValueNotFoundError, DatasetFormatError
from services.critical_values import (
    CriticalValueTable,
    horizon_tag,
    parse_horizon,
    published_lambda,
    resolve_lambda,
)


class TestHorizonTags:

    @pytest.mark.parametrize("horizon", [None, math.inf, 2.0, 1.2])
    def test_round_trip(self, horizon):
        assert parse_horizon(horizon_tag(horizon)) == horizon

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            parse_horizon("forever")


class TestPublishedLambda:

    def test_retrospective_forward_and_backward_share_values(self):
        assert published_lambda("q", 1, 0.05) == pytest.approx(0.945)
        assert published_lambda("bq", 1, 0.05) == pytest.approx(0.945)

    def test_retrospective_stacked(self):
        assert published_lambda("sbq", 1, 0.05) == pytest.approx(1.198)
        assert published_lambda("sbq", 8, 0.01) == pytest.approx(1.566)

    @pytest.mark.parametrize("m, expected", [(2.0, 1.198), (4.0, 1.339), (10.0, 1.440), (math.inf, 1.514)])
    def test_stacked_monitoring(self, m, expected):
        assert published_lambda("sbq", 1, 0.05, horizon=m) == pytest.approx(expected)

    def test_forward_monitoring(self):
        assert published_lambda("q", 1, 0.05, horizon=math.inf) == pytest.approx(0.957)
        assert published_lambda("q", 2, 0.05, horizon=math.inf) == pytest.approx(1.044)
        assert published_lambda("q", 1, 0.05, horizon=2.0) == pytest.approx(0.945)

    def test_radical_is_self_normalizing(self):
        assert published_lambda("q", 1, 0.05, boundary="radical_chu", horizon=2.0) == 1.0

    def test_missing_entries(self):
        with pytest.raises(CriticalValueNotFoundError):
            published_lambda("q", 1, 0.05, horizon=4.0)
        with pytest.raises(CriticalValueNotFoundError):
            published_lambda("q", 9, 0.05)
        with pytest.raises(CriticalValueNotFoundError):
            published_lambda("sbq", 1, 0.05, horizon=5.0)

    def test_monotone_in_alpha_and_dimension(self):
        for kind in ("q", "sbq"):
            for nu in range(1, 9):
                values = [published_lambda(kind, nu, a) for a in (0.20, 0.10, 0.05, 0.025, 0.01)]
                assert values == sorted(values)
                if nu > 1:
                    assert published_lambda(kind, nu, 0.05) > published_lambda(kind, nu - 1, 0.05)


class TestResolveLambda:

    def test_explicit_value_wins(self):
        assert resolve_lambda("q", 1, 0.05, lam=0.7) == 0.7

    def test_user_table_before_published(self):
        table = CriticalValueTable()
        table.add("q", 1, 0.05, 0.99, horizon=4.0)
        assert resolve_lambda("q", 1, 0.05, horizon=4.0, table=table) == pytest.approx(0.99)

    def test_fallback_warns(self, caplog):
        table = CriticalValueTable()
        with caplog.at_level("WARNING"):
            value = resolve_lambda("sbq", 1, 0.05, table=table)
        assert value == pytest.approx(1.198)
        assert "published" in caplog.text


class TestCriticalValueTable:

    def test_get_and_contains(self):
        table = CriticalValueTable()
        table.add("sbq", 2, 0.05, 1.57, horizon=math.inf)
        assert ("sbq", 2, 0.05, "linear", math.inf) in table
        assert table.get("sbq", 2, 0.05, horizon=math.inf) == 1.57
        with pytest.raises(CriticalValueNotFoundError):
            table.get("sbq", 2, 0.05)

    def test_save_and_load(self, tmp_path):
        table = CriticalValueTable(metadata={"seed": 3})
        table.add("q", 1, 0.05, 0.9461)
        table.add("sbq", 1, 0.1, 1.4502, horizon=math.inf)
        table.add("q", 1, 0.05, 1.0, boundary="radical_chu", horizon=2.0)
        path = tmp_path / "table.json"
        table.save(str(path))
        loaded = CriticalValueTable.load(str(path))
        assert loaded.entries == table.entries
        assert loaded.metadata == {"seed": 3}

    def test_frame_columns(self):
        table = CriticalValueTable()
        table.add("q", 1, 0.05, 0.95)
        frame = table.to_frame()
        assert list(frame.columns) == ["kind", "nu", "alpha", "boundary", "horizon", "value"]
        assert frame.loc[0, "horizon"] == "ret"

    def test_malformed_document(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"entries": [{"kind": "q"}]}', encoding="utf-8")
        with pytest.raises(DatasetFormatError):
            CriticalValueTable.load(str(path))
