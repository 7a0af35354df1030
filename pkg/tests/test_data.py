from pathlib import Path

import numpy as np
import pytest

from certfair.data import (SchemaError, bundled_schemas, extract_domain, load_csv, load_dataset,
                           load_schema, parse_schema, preprocess, schema_domain, schema_layout,
                           split)

DATA_DIR = Path(__file__).resolve().parents[1] / "data"

TOY_SCHEMA = """\
# toy
@dataset toy
hours  | continuous  | 1:100 | integral
colour | categorical | red,green,blue
sex    | categorical | F,M   | sensitive
label  | categorical | no,yes | label
"""

TOY_CSV = """\
hours,colour,sex,label
50,red,F,no
1,blue,M,yes
100,green,F,yes
"""


@pytest.fixture
def toy_files(tmp_path):
    (tmp_path / "toy.schema").write_text(TOY_SCHEMA)
    (tmp_path / "toy.csv").write_text(TOY_CSV)
    return tmp_path / "toy.csv", tmp_path / "toy.schema"


class TestSchema:
    def test_parse(self):
        schema = parse_schema(TOY_SCHEMA)
        assert schema.name == "toy"
        assert [f.name for f in schema.inputs] == ["hours", "colour"]
        assert schema.label.categories == ("no", "yes")
        assert schema.sensitive_domain().values == ("F", "M")

    @pytest.mark.parametrize("text", [
        "a | continuous | 0:1 |\n",                                   # no label, no sensitive
        "a | categorical | x,y | sensitive\nb | categorical | p,q | sensitive\n"
        "c | categorical | 0,1 | label\n",                            # two sensitive, no composite
        "a | continuous | 0:1 | sensitive\nc | categorical | 0,1 | label\n",
        "a | weird | 0:1 |\n",
        "a | categorical | x,x | sensitive\nc | categorical | 0,1 | label\n",
        "a | binned | 5,2 | sensitive\nc | categorical | 0,1 | label\n",
        "@nonsense\n",
    ])
    def test_rejects_invalid(self, text):
        with pytest.raises(SchemaError):
            parse_schema(text)

    def test_composite_cartesian_domain(self):
        schema = parse_schema("@composite\n"
                              "sex  | categorical | F,M | sensitive\n"
                              "race | categorical | a,b,c | sensitive\n"
                              "y    | categorical | 0,1 | label\n")
        values = schema.sensitive_domain().values
        assert len(values) == 6
        assert values[0] == "F&a" and values[-1] == "M&c"

    def test_binned_levels(self):
        schema = parse_schema("age | binned | 25,40 | sensitive\ny | categorical | 0,1 | label\n")
        assert schema.sensitive_domain().values == ("<25", "[25,40)", ">=40")

    def test_bundled_schemas_parse(self):
        names = bundled_schemas()
        for expected in ("adult_sex", "adult_race", "adult_age", "bank_age", "german_age",
                         "german_sex", "compas_race", "health_age", "law_race"):
            assert expected in names
        for path in names.values():
            assert len(load_schema(path).sensitive_domain()) >= 2


class TestLoadCsv:
    def test_three_rows(self, toy_files):
        raw = load_csv(toy_files[0], load_schema(toy_files[1]))
        assert raw.n_rows == 3 and raw.dropped == 0

    def test_missing_sensitive_dropped(self, tmp_path, toy_files):
        path = tmp_path / "gap.csv"
        path.write_text(TOY_CSV + "20,red,,no\n")
        raw = load_csv(path, load_schema(toy_files[1]))
        assert raw.n_rows == 3 and raw.dropped == 1

    def test_unparseable_number_dropped(self, tmp_path, toy_files):
        path = tmp_path / "bad.csv"
        path.write_text(TOY_CSV + "lots,red,F,no\n")
        assert load_csv(path, load_schema(toy_files[1])).dropped == 1

    def test_header_order_insensitive(self, tmp_path, toy_files):
        path = tmp_path / "perm.csv"
        path.write_text("label,sex,colour,hours,extra\nno,F,red,50,zzz\n")
        raw = load_csv(path, load_schema(toy_files[1]))
        assert raw.columns["hours"] == ["50"]

    def test_errors(self, tmp_path, toy_files):
        schema = load_schema(toy_files[1])
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "absent.csv", schema)
        (tmp_path / "h.csv").write_text("hours,colour\n1,red\n")
        with pytest.raises(SchemaError):
            load_csv(tmp_path / "h.csv", schema)
        (tmp_path / "e.csv").write_text("hours,colour,sex,label\n,red,F,no\n")
        with pytest.raises(ValueError):
            load_csv(tmp_path / "e.csv", schema)


class TestPreprocess:
    def test_declared_range_scaling(self, toy_files):
        data = load_dataset(*toy_files)
        assert data.x[0, 0] == pytest.approx(49 / 99, abs=1e-15)
        assert data.x[0, 0] == pytest.approx(0.4949, abs=1e-4)

    def test_layout(self, toy_files):
        data = load_dataset(*toy_files)
        assert data.feature_names == ["hours", "colour=red", "colour=green", "colour=blue"]
        assert data.groups == [[1, 2, 3]]
        np.testing.assert_array_equal(data.x[:, 1:], np.eye(3)[[0, 2, 1]])
        np.testing.assert_array_equal(data.s, [0, 1, 0])
        np.testing.assert_array_equal(data.y, [1, 2, 2])
        assert schema_layout(data.schema) == (data.feature_names, data.groups)

    def test_undeclared_category_rejected(self, tmp_path, toy_files):
        path = tmp_path / "c.csv"
        path.write_text(TOY_CSV + "3,purple,F,no\n")
        with pytest.raises(SchemaError):
            load_dataset(path, toy_files[1])

    def test_degenerate_range_constant_zero(self, tmp_path, caplog):
        schema = parse_schema("k | continuous | auto |\ns | categorical | a,b | sensitive\n"
                              "y | categorical | 0,1 | label\n")
        path = tmp_path / "d.csv"
        path.write_text("k,s,y\n5,a,0\n5,b,1\n")
        data = preprocess(load_csv(path, schema), schema)
        np.testing.assert_array_equal(data.x[:, 0], 0.0)
        assert "degenerate" in caplog.text

    def test_denormalize_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.uniform(-50, 300, 200)
        schema = parse_schema("v | continuous | auto |\nw | continuous | -50:300 |\n"
                              "s | categorical | a,b | sensitive\ny | categorical | 0,1 | label\n")
        lines = ["v,w,s,y"] + [f"{float(v)!r},{float(v)!r},a,0" for v in values]
        path = tmp_path / "r.csv"
        path.write_text("\n".join(lines) + "\n")
        back = preprocess(load_csv(path, schema), schema).denormalize()
        np.testing.assert_allclose(back["v"], values, atol=1e-12, rtol=0)
        np.testing.assert_allclose(back["w"], values, atol=1e-12, rtol=0)

    def test_composite_codes(self, tmp_path):
        schema = parse_schema("@composite\nx | continuous | 0:1 |\n"
                              "sex  | categorical | F,M | sensitive\n"
                              "race | categorical | a,b,c | sensitive\n"
                              "y    | categorical | 0,1 | label\n")
        path = tmp_path / "c.csv"
        path.write_text("x,sex,race,y\n0.5,M,b,1\n0.1,F,c,0\n")
        data = preprocess(load_csv(path, schema), schema)
        np.testing.assert_array_equal(data.s, [4, 2])
        assert len(data.sensitive) == 6

    def test_preprocessing_deterministic(self, toy_files):
        a, b = load_dataset(*toy_files), load_dataset(*toy_files)
        np.testing.assert_array_equal(a.x, b.x)


class TestSplit:
    def _dataset(self, tmp_path, n):
        schema = parse_schema("x | continuous | 0:1 |\ns | categorical | a,b | sensitive\n"
                              "y | categorical | 0,1 | label\n")
        path = tmp_path / "n.csv"
        path.write_text("x,s,y\n" + "".join(f"{i / n},a,{i % 2}\n" for i in range(n)))
        return preprocess(load_csv(path, schema), schema)

    def test_sizes(self, tmp_path):
        train, test = split(self._dataset(tmp_path, 1000), 0.2, 0)
        assert (len(train), len(test)) == (800, 200)

    def test_odd_sizes(self, tmp_path):
        train, test = split(self._dataset(tmp_path, 1001), 0.2, 0)
        assert (len(train), len(test)) == (801, 200)

    def test_seeded_disjoint_cover(self, tmp_path):
        data = self._dataset(tmp_path, 500)
        a_train, a_test = split(data, 0.3, 4)
        b_train, b_test = split(data, 0.3, 4)
        np.testing.assert_array_equal(a_test.x, b_test.x)
        keys = np.concatenate([a_train.x[:, 0], a_test.x[:, 0]])
        assert len(np.unique(keys)) == 500

    def test_rejects_fraction(self, tmp_path):
        with pytest.raises(ValueError):
            split(self._dataset(tmp_path, 10), 1.0, 0)


class TestDomain:
    def test_unit_box_contains_data(self, toy_files):
        data = load_dataset(*toy_files)
        dom = extract_domain(data)
        assert np.all(dom.lo == 0) and np.all(dom.hi == 1)
        assert dom.contains(data.x).all()
        assert dom.groups == [[1, 2, 3]] and dom.integral.tolist() == [False, True, True, True]

    def test_schema_domain_matches(self, toy_files):
        data = load_dataset(*toy_files)
        a, b = extract_domain(data), schema_domain(data.schema)
        assert a.names == b.names and a.groups == b.groups
        np.testing.assert_array_equal(a.integral, b.integral)

    def test_declared_range_edge(self, toy_files):
        data = load_dataset(*toy_files)
        # the declared maximum 100 maps to the upper edge of the box
        assert data.x[2, 0] == extract_domain(data).hi[0] == 1.0


@pytest.mark.skipif(not (DATA_DIR / "adult.csv").is_file(), reason="prepared Adult data absent")
class TestBenchmarkFiles:
    def test_adult_record_count(self):
        raw = load_csv(DATA_DIR / "adult.csv", load_schema(bundled_schemas()["adult_sex"]))
        assert raw.n_rows + raw.dropped == 32_561

    @pytest.mark.parametrize("name,schema", [("adult", "adult_race"), ("german", "german_age"),
                                             ("compas", "compas_race")])
    def test_domain_contains_every_sample(self, name, schema):
        data = load_dataset(DATA_DIR / f"{name}.csv", bundled_schemas()[schema])
        assert extract_domain(data).contains(data.x).all()
        assert data.s.max() < len(data.sensitive) and data.y.min() >= 1
