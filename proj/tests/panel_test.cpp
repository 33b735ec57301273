#include <catch2/catch_amalgamated.hpp>
#include <random>
#include <sstream>

#include "dyniv/csv.hpp"
#include "dyniv/panel.hpp"
#include "dyniv/simulation.hpp"
#include "support/test_util.hpp"

using namespace dyniv;
using Catch::Matchers::ContainsSubstring;

TEST_CASE("exposure follows the absorbing pattern") {
  CHECK(exposure_at(1, 5) == 5);
  CHECK(exposure_at(kNever, 3) == 0);
  CHECK(exposure_at(3, 2) == 0);
  CHECK(exposure_at(3, 4) == 2);
}

TEST_CASE("exposure lookup validates wave and id") {
  PanelDataset d;
  d.w_bar = 3;
  d.participants = {testsup::person(1, 1, 2, {1.0, 2.0, 3.0}),
                    testsup::person(2, 0, 0, {1.0, 2.0, 3.0})};
  CHECK(exposure(d, 1, 3) == 2);
  CHECK(exposure(d, 2, 3) == 0);
  CHECK_THROWS_WITH(exposure(d, 99, 1), ContainsSubstring("unknown participant"));
  CHECK_THROWS_WITH(exposure(d, 1, 4), ContainsSubstring("wave out of range"));
}

TEST_CASE("absorbing invariant holds on simulated panels") {
  auto d = sample_dataset(ref_a(), 500);
  for (const auto& p : d.participants)
    for (int w = 1; w <= d.w_bar; ++w) {
      CHECK(p.exposure(w) <= w);
      if (w < d.w_bar && p.exposure(w) >= 1)
        CHECK(p.exposure(w + 1) == p.exposure(w) + 1);
    }
}

TEST_CASE("ingestion reconstructs revasc_wave from exposure sequences") {
  std::istringstream in(
      "id,wave,z,t_exposure,y\n"
      "7,1,1,0,10.5\n"
      "7,2,1,1,11\n"
      "7,3,1,2,\n"
      "8,1,0,0,9\n"
      "8,2,0,0,9.5\n"
      "8,3,0,0,\n");
  auto d = ingest_csv_stream(in);
  CHECK(d.w_bar == 3);
  CHECK(d.find(7).revasc_wave == 2);
  CHECK(d.find(8).revasc_wave == kNever);
  CHECK(d.find(7).outcomes[1] == 11.0);
  CHECK_FALSE(d.find(7).outcomes[2].has_value());  // attrited wave retained
}

TEST_CASE("non-absorbing exposure sequences are rejected") {
  std::istringstream in(
      "id,wave,z,t_exposure,y\n"
      "1,1,1,0,1\n"
      "1,2,1,1,1\n"
      "1,3,1,0,1\n"
      "2,1,0,0,1\n");
  CHECK_THROWS_WITH(ingest_csv_stream(in), ContainsSubstring("non-absorbing exposure"));
}

TEST_CASE("ingestion rejects malformed input") {
  SECTION("z outside {0,1}") {
    std::istringstream in("id,wave,z,t_exposure,y\n1,1,2,0,1\n");
    CHECK_THROWS_WITH(ingest_csv_stream(in), ContainsSubstring("assignment not binary"));
  }
  SECTION("inconsistent z across waves") {
    std::istringstream in(
        "id,wave,z,t_exposure,y\n1,1,1,0,1\n1,2,0,0,1\n2,1,0,0,1\n");
    CHECK_THROWS_WITH(ingest_csv_stream(in), ContainsSubstring("inconsistent z"));
  }
  SECTION("duplicate (id, wave)") {
    std::istringstream in("id,wave,z,t_exposure,y\n1,1,1,0,1\n1,1,1,0,2\n");
    CHECK_THROWS_WITH(ingest_csv_stream(in), ContainsSubstring("duplicate (id, wave)"));
  }
  SECTION("t_exposure above wave index") {
    std::istringstream in("id,wave,z,t_exposure,y\n1,1,1,2,1\n");
    CHECK_THROWS_WITH(ingest_csv_stream(in), ContainsSubstring("exceeds wave"));
  }
  SECTION("covariate changing across waves") {
    std::istringstream in(
        "id,wave,z,t_exposure,y,x\n1,1,1,0,1,3\n1,2,1,0,1,4\n");
    CHECK_THROWS_WITH(ingest_csv_stream(in), ContainsSubstring("covariate varies"));
  }
  SECTION("t_exposure contradicting a declared revasc_wave") {
    std::istringstream in(
        "id,wave,z,t_exposure,revasc_wave,y\n1,1,1,1,2,1\n");
    CHECK_THROWS_WITH(ingest_csv_stream(in), ContainsSubstring("inconsistent with declared"));
  }
}

TEST_CASE("categorical covariates expand to indicators with a reference level") {
  std::istringstream in(
      "id,wave,z,t_exposure,y,score,region\n"
      "1,1,1,1,10,1.5,euro\n"
      "2,1,0,0,9,2.5,asia\n"
      "3,1,0,0,8,0.5,amer\n");
  auto d = ingest_csv_stream(in);
  REQUIRE(d.covariate_names ==
          std::vector<std::string>{"score", "region=asia", "region=euro"});
  CHECK(d.find(1).covariates == std::vector<double>{1.5, 0.0, 1.0});
  CHECK(d.find(2).covariates == std::vector<double>{2.5, 1.0, 0.0});
  CHECK(d.find(3).covariates == std::vector<double>{0.5, 0.0, 0.0});
}

TEST_CASE("validate_panel reports rule violations") {
  auto cfg = ref_a();
  auto d = sample_dataset(cfg, 50);
  CHECK(validate_panel(d).empty());

  SECTION("revasc_wave out of range") {
    d.participants[0].revasc_wave = d.w_bar + 1;
    auto v = validate_panel(d);
    REQUIRE(v.size() == 1);
    CHECK(v[0].rule == "revasc_wave out of range");
    CHECK(v[0].id == d.participants[0].id);
  }
  SECTION("assignment not binary") {
    d.participants[3].z = 2;
    bool found = false;
    for (const auto& v : validate_panel(d))
      if (v.rule == "assignment not binary") found = true;
    CHECK(found);
  }
  SECTION("duplicate ids") {
    d.participants[1].id = d.participants[0].id;
    bool found = false;
    for (const auto& v : validate_panel(d))
      if (v.rule == "duplicate participant id") found = true;
    CHECK(found);
  }
}

TEST_CASE("emit/ingest round-trips a simulated dataset exactly") {
  auto cfg = ref_a();
  cfg.seed = 91;
  cfg.attrition_z0 = {0.1, 0.2, 0.3};
  cfg.attrition_z1 = {0.1, 0.2, 0.3};
  auto d = sample_dataset(cfg, 10);
  std::ostringstream out;
  emit_csv_stream(d, out);
  std::istringstream in(out.str());
  auto d2 = ingest_csv_stream(in);
  CHECK(d2 == d);
}

TEST_CASE("round-trip identity over randomized panels") {
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 25; ++rep) {
    auto cfg = ref_a();
    cfg.seed = rng();
    cfg.n_regions = rep % 2 ? 3 : 0;
    if (rep % 3 == 0) cfg.attrition_z0 = cfg.attrition_z1 = {0.3, 0.3, 0.3};
    auto d = sample_dataset(cfg, 40);
    std::ostringstream out;
    emit_csv_stream(d, out);
    std::istringstream in(out.str());
    CHECK(ingest_csv_stream(in) == d);
  }
}

TEST_CASE("wave restriction shrinks the panel consistently") {
  auto d = sample_dataset(ref_a(), 100);
  auto d2 = restrict_waves(d, {1, 2});
  CHECK(d2.w_bar == 2);
  CHECK(validate_panel(d2).empty());
  for (std::size_t i = 0; i < d.participants.size(); ++i) {
    const auto& before = d.participants[i];
    const auto& after = d2.participants[i];
    CHECK(after.outcomes.size() == 2);
    for (int w = 1; w <= 2; ++w) {
      CHECK(after.outcomes[w - 1] == before.outcomes[w - 1]);
      if (before.exposure(w) > 0) CHECK(after.exposure(w) == before.exposure(w));
    }
  }
}
