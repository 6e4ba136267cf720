import hashlib

import numpy as np
import pandas as pd
import pytest
import yaml

from conftest import layout_mismatches
from huffval.cli import load_config, main, read_fits, read_indicators
from huffval.errors import ConfigError
from huffval.regress import INDICATOR_COLUMNS

SMALL_CITY = {"n_districts": 3, "customers_per_district": 60, "merchants_per_category": [4, 6],
              "visits_per_customer": 15, "categories": ["g", "r"]}
QUICK_SWARM = {"swarm_size": 12, "max_iterations": 30, "stall_iterations": 10}


def write_config(path, **values):
    path.write_text(yaml.safe_dump(values))
    return str(path)


def synth(tmp_path, name="city", seed=3, **city):
    out = tmp_path / name
    cfg = write_config(tmp_path / f"{name}.yaml", city={**SMALL_CITY, **city})
    assert main(["synth", "--config", cfg, "--seed", str(seed), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def city_dir(tmp_path_factory):
    return synth(tmp_path_factory.mktemp("cli"))


def digests(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir()) if p.is_file()}


def test_ingest_valid_fixture(city_dir, tmp_path, capsys):
    assert main(["ingest", "--input", str(city_dir), "--out", str(tmp_path)]) == 0
    summary = pd.read_csv(tmp_path / "summary.csv")
    assert summary["field"].tolist()[0] == "Period"
    assert "# of transactions" in capsys.readouterr().out
    assert (tmp_path / "rejections.csv").read_text().startswith("file,row_number,reason")


def test_ingest_wrong_header_names_column(city_dir, tmp_path, capsys):
    bad = tmp_path / "bad"
    bad.mkdir()
    for name in ("customers.csv", "merchants.csv"):
        (bad / name).write_bytes((city_dir / name).read_bytes())
    lines = (city_dir / "transactions.csv").read_text().splitlines(keepends=True)
    lines[0] = lines[0].replace("merchant_id", "shop")
    (bad / "transactions.csv").write_text("".join(lines))
    assert main(["ingest", "--input", str(bad), "--out", str(tmp_path / "o")]) != 0
    assert "merchant_id" in capsys.readouterr().err


def test_ingest_rejection_threshold(city_dir, tmp_path):
    bad = tmp_path / "bad"
    bad.mkdir()
    for name in ("customers.csv", "merchants.csv"):
        (bad / name).write_bytes((city_dir / name).read_bytes())
    tx = pd.read_csv(city_dir / "transactions.csv", dtype=str, keep_default_na=False)
    n_bad = int(np.ceil(0.01 * len(tx)))
    tx.loc[tx.index[::len(tx) // n_bad][:n_bad], "amount"] = "not-a-number"
    tx.to_csv(bad / "transactions.csv", index=False)
    out = tmp_path / "o"
    args = ["ingest", "--input", str(bad), "--out", str(out)]
    assert main(args + ["--max-rejection-fraction", "0.005"]) == 1
    assert main(args + ["--max-rejection-fraction", "0.05"]) == 0
    rejected = pd.read_csv(out / "rejections.csv")
    assert len(rejected) == n_bad and set(rejected["file"]) == {"transactions"}


def test_seed_is_mandatory(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path)]) == 1
    assert "seed" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="colour"):
        load_config(write_config(tmp_path / "c.yaml", colour="blue"))


def test_flags_override_config_and_are_echoed(city_dir, tmp_path):
    cfg = write_config(tmp_path / "c.yaml", min_transactions=3, floor_km=0.2, anchor="home")
    out = tmp_path / "o"
    assert main(["ingest", "--config", cfg, "--input", str(city_dir), "--out", str(out),
                 "--min-transactions", "7", "--anchor", "work"]) == 0
    echoed = yaml.safe_load((out / "effective_config.yaml").read_text())
    assert echoed["min_transactions"] == 7 and echoed["anchor"] == "work_only"
    assert echoed["floor_km"] == 0.2 and echoed["command"] == "ingest"


def test_single_cell_city_has_zero_std(tmp_path):
    city = synth(tmp_path, n_districts=1, categories=["g"], merchants_per_category=8)
    out = tmp_path / "fit"
    cfg = write_config(tmp_path / "f.yaml", swarm=QUICK_SWARM)
    assert main(["fit", "--config", cfg, "--input", str(city), "--seed", "1", "--out", str(out)]) == 0
    assert len(pd.read_csv(out / "fits.csv")) == 1
    summary = pd.read_csv(out / "performance_summary.csv")
    assert len(summary) == 1 and summary.loc[0, "Std"] == 0


def test_all_degenerate_cells_exit_two(tmp_path, capsys):
    city = synth(tmp_path, merchants_per_category=2)
    out = tmp_path / "fit"
    assert main(["fit", "--input", str(city), "--seed", "1", "--out", str(out)]) == 2
    assert len(pd.read_csv(out / "fits.csv")) == 0
    assert len(pd.read_csv(out / "exclusions.csv")) == 6
    assert pd.read_csv(out / "performance_summary.csv").empty
    assert "degenerate" in capsys.readouterr().err


def test_synth_emission(city_dir):
    for name in ("transactions.csv", "customers.csv", "merchants.csv", "districts.csv", "truth.json",
                 "mobility_g.csv", "mobility_r.csv", "effective_config.yaml"):
        assert (city_dir / name).exists(), name
    mob = pd.read_csv(city_dir / "mobility_g.csv", index_col=0)
    np.testing.assert_allclose(mob.sum(axis=1), 1.0, atol=1e-9)


def test_fit_and_indicator_csvs_round_trip(city_dir, tmp_path):
    cfg = write_config(tmp_path / "f.yaml", swarm=QUICK_SWARM)
    assert main(["fit", "--config", cfg, "--input", str(city_dir), "--seed", "2", "--out", str(tmp_path)]) == 0
    assert main(["indicators", "--input", str(city_dir), "--out", str(tmp_path)]) == 0
    fits = read_fits(tmp_path / "fits.csv")
    fits.to_csv(tmp_path / "again.csv", index=False, lineterminator="\n")
    assert (tmp_path / "again.csv").read_bytes() == (tmp_path / "fits.csv").read_bytes()
    ind = read_indicators(tmp_path / "indicators.csv")
    assert len(ind) == 3
    ind.to_csv(tmp_path / "again.csv", index=False, lineterminator="\n")
    assert (tmp_path / "again.csv").read_bytes() == (tmp_path / "indicators.csv").read_bytes()


def test_indicators_one_district_city(tmp_path):
    city = synth(tmp_path, n_districts=1)
    assert main(["indicators", "--input", str(city), "--out", str(tmp_path / "o")]) == 0
    ind = read_indicators(tmp_path / "o" / "indicators.csv")
    assert len(ind) == 1 and ind.loc[0, "mobility_diversity"] == 0.0


def test_indicators_match_tally(city_dir, tmp_path):
    assert main(["indicators", "--input", str(city_dir), "--out", str(tmp_path)]) == 0
    ind = read_indicators(tmp_path / "indicators.csv").set_index("district_id")
    merchants = pd.read_csv(city_dir / "merchants.csv", dtype=str)
    for d, row in ind.iterrows():
        counts = merchants.loc[merchants["district_id"] == d, "category_id"].value_counts().to_numpy(float)
        p = counts / counts.sum()
        assert row["merchant_diversity"] == pytest.approx(-(p * np.log(p)).sum(), abs=1e-12)


def _planted(tmp_path, seed):
    rng = np.random.default_rng(seed)
    districts = [str(k + 1) for k in range(17)]
    ind = pd.DataFrame({"district_id": districts, "reason": ""})
    for col in INDICATOR_COLUMNS:
        ind[col] = rng.uniform(0.3, 1.4, 17)
    ind["n_customers_income"] = 100
    signal = 0.6 + 0.2 * ind["gender_diversity"] - 0.15 * ind["marital_diversity"]
    fits = pd.DataFrame({"category_id": "g", "district_id": districts, "avg_distance": 1.0, "alpha": 1.0,
                         "beta": 1.0, "pearson_r": signal + rng.normal(0, 0.05 * signal.std(), 17),
                         "p_value": 0.0, "estimator": "pso", "hit_alpha_bound": False,
                         "hit_beta_bound": False, "n_customers": 500, "n_merchants": 20})
    fits.to_csv(tmp_path / "fits.csv", index=False)
    ind.to_csv(tmp_path / "indicators.csv", index=False)


def test_regress_planted_signal(tmp_path):
    _planted(tmp_path, 0)
    assert main(["regress", "--out", str(tmp_path)]) == 0
    reg = pd.read_csv(tmp_path / "regression.csv")
    sig = reg[(reg["scope"] == "g") & (reg["p_value"] < 0.01) & (reg["name"] != "intercept")]
    assert sorted(sig["name"]) == ["gender_diversity", "marital_diversity"]
    assert (tmp_path / "adjusted_r2.csv").read_text().splitlines()[0] == "Merchant category,Adjusted R2 score"


def test_regress_rank_deficiency_names_column(tmp_path, capsys):
    _planted(tmp_path, 1)
    ind = pd.read_csv(tmp_path / "indicators.csv", dtype={"district_id": str})
    ind["job_diversity"] = 2 * ind["education_diversity"] + 1
    ind.to_csv(tmp_path / "indicators.csv", index=False)
    assert main(["regress", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "job_diversity" in err or "education_diversity" in err


def test_report_layout_and_determinism(tmp_path):
    city = synth(tmp_path, n_districts=17, customers_per_district=30, visits_per_customer=12)
    cfg = write_config(tmp_path / "f.yaml", swarm=QUICK_SWARM)
    runs = []
    out = tmp_path / "run"
    for _ in range(2):
        status = main(["report", "--config", cfg, "--input", str(city), "--seed", "5", "--out", str(out)])
        assert status in (0, 2)
        runs.append(digests(out))
    assert runs[0] == runs[1]
    assert layout_mismatches(out) == []
    assert (out / "report.txt").read_text().startswith("Dataset summary")
