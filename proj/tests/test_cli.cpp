#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <singwave/cli.hpp>

using namespace singwave;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Fresh scratch directory per test, removed afterwards.
class CliTest : public ::testing::Test {
protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / ("singwave_cli_" + std::string(info->name()));
    fs::remove_all(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string out(const std::string& name) const { return (root_ / name).string(); }

  fs::path root_;
  std::ostringstream log_;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

json zones_config(const std::string& dir) {
  return {{"experiment", "zones-dump"},
          {"output", dir},
          {"profile", {{"p", 0.1}, {"q", 1.2}, {"r", 0.3}, {"sigma", 3.2}}},
          {"family", {{"id", "theorem"}, {"kappa1", 0.5}, {"kappa2", 1.0}}},
          {"lattice", {{"nt", 12}, {"nx", 11}, {"nxi", 15}}}};
}

json without_timing(json m) {
  m.erase("started_at");
  m.erase("wall_time_seconds");
  m["config"].erase("output");
  return m;
}

} // namespace

TEST(Config, DefaultsRoundTrip) {
  const json resolved = RunConfig{};
  const json again = load_config(resolved);
  EXPECT_EQ(resolved.dump(), again.dump());
}

TEST(Config, UnknownKeyNamesField) {
  try {
    load_config(json{{"grid", {{"Nx", 64}}}});
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "grid.Nx");
    EXPECT_NE(std::string(e.what()).find("unknown key"), std::string::npos);
  }
  try {
    load_config(json{{"experiments", "solve"}});
    FAIL() << "unknown top-level key accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "experiments");
  }
}

TEST(Config, TypeAndRangeErrorsNameField) {
  auto field_of = [](const json& j) {
    try {
      load_config(j);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("<accepted>");
  };
  EXPECT_EQ(field_of({{"grid", {{"N", 100.5}}}}), "grid.N");
  EXPECT_EQ(field_of({{"grid", {{"N", 100}}}}), "grid");
  EXPECT_EQ(field_of({{"grid", {{"L", "pi"}}}}), "grid.L");
  EXPECT_EQ(field_of({{"family", {{"id", "membrane"}}}}), "family.id");
  EXPECT_EQ(field_of({{"family", {{"excise", 1}}}}), "family.excise");
  EXPECT_EQ(field_of({{"mesh", {{"M", -4}}}}), "mesh.M");
  EXPECT_EQ(field_of({{"mesh", {{"kappa", 0.5}}}}), "mesh.kappa");
  EXPECT_EQ(field_of({{"profile", {{"lambda", "auto"}}}}), "profile.lambda");
  EXPECT_EQ(field_of({{"data", {{"kind", "closed-form"}}}}), "data.kind");
  EXPECT_EQ(field_of({{"data", {{"modes", 9}, {"max_mode", 4}}}}), "data.modes");
  EXPECT_EQ(field_of({{"mesh", {{"t_start", 2.0}}}}), "mesh.t_start");
  EXPECT_EQ(field_of({{"grid", json::array()}}), "grid");
  EXPECT_EQ(field_of({{"experiment", "check-cone"}, {"family", {{"id", "wave"}, {"speed", 2.0}}}}), "<accepted>");
}

TEST_F(CliTest, SigmaBelowThreeIsInvalidConfig) {
  const auto res = run_json({{"experiment", "zones-dump"}, {"output", out("s")}, {"profile", {{"sigma", 2.0}}}}, log_);
  EXPECT_EQ(res.status, kExitInvalidConfig);
  EXPECT_NE(res.message.find("sigma >= 3"), std::string::npos) << res.message;
  EXPECT_TRUE(res.manifest.is_null());
  EXPECT_FALSE(fs::exists(out("s")));
}

TEST_F(CliTest, VerifyCounterexamplesDefaultsPass) {
  const auto res = run_json({{"experiment", "verify-counterexamples"}, {"output", out("v")}}, log_);
  ASSERT_EQ(res.status, kExitPass) << res.message;
  const auto entries = res.manifest["summary"]["entries"];
  ASSERT_EQ(entries.size(), 4u);
  std::set<std::string> ids;
  for (const auto& e : entries) {
    ids.insert(e["example"].get<std::string>());
    EXPECT_TRUE(e["pass"].get<bool>()) << e.dump();
  }
  EXPECT_EQ(ids, (std::set<std::string>{"finite-loss", "loss-not-necessary", "no-loss", "nonunique"}));
  const auto verdict = read_json(fs::path(out("v")) / "verdict.json");
  EXPECT_TRUE(verdict["pass"].get<bool>());

  std::ifstream csv(fs::path(out("v")) / "counterexamples.csv");
  std::string header, line;
  std::getline(csv, header);
  EXPECT_EQ(header, "example,m,residual,integration_error,data_max,solution_max,pass");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    EXPECT_EQ(line.back(), '1') << line;
  }
  EXPECT_EQ(rows, 4u);
}

TEST_F(CliTest, ZonesDumpInteriorFractionNonIncreasing) {
  const auto res = run_json(zones_config(out("z")), log_);
  ASSERT_EQ(res.status, kExitPass) << res.message;
  EXPECT_TRUE(res.manifest["summary"]["interior_fraction_nonincreasing"].get<bool>());

  // Recount from the CSV itself.
  std::ifstream csv(fs::path(out("z")) / "zones.csv");
  std::string line;
  std::getline(csv, line);
  ASSERT_EQ(line, "t,x,xi,zone");
  std::map<double, std::pair<std::size_t, std::size_t>> per_t;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string t, x, xi, zone;
    std::getline(ss, t, ',');
    std::getline(ss, x, ',');
    std::getline(ss, xi, ',');
    std::getline(ss, zone, ',');
    auto& [interior, total] = per_t[std::stod(t)];
    interior += zone == "interior";
    ++total;
  }
  ASSERT_EQ(per_t.size(), 12u);
  double previous = 1.0;
  for (const auto& [t, c] : per_t) {
    EXPECT_EQ(c.second, 11u * 15u);
    const double frac = static_cast<double>(c.first) / static_cast<double>(c.second);
    EXPECT_LE(frac, previous) << "t = " << t;
    previous = frac;
  }
  EXPECT_GT(per_t.begin()->second.first, 0u);
}

TEST_F(CliTest, CorruptedCoefficientAbortsWithWitness) {
  const auto res = run_json({{"experiment", "symbol-report"},
                             {"output", out("bad")},
                             {"family", {{"id", "wave"}, {"speed", 0.0}}}},
                            log_);
  EXPECT_EQ(res.status, kExitNumericalAbort);
  EXPECT_NE(res.message.find("ellipticity"), std::string::npos) << res.message;
  const auto manifest = read_json(fs::path(out("bad")) / "manifest.json");
  EXPECT_EQ(manifest["status"], kExitNumericalAbort);
  EXPECT_EQ(manifest["error"]["kind"], "ellipticity");
  const auto& w = manifest["error"]["witness"];
  EXPECT_GT(w["t"].get<double>(), 0.0);
  EXPECT_TRUE(w.contains("x"));
  EXPECT_TRUE(w.contains("xi"));
}

TEST_F(CliTest, MissingOutputDirectoryIsCreated) {
  const auto dir = fs::path(out("a")) / "b" / "c";
  ASSERT_FALSE(fs::exists(dir));
  const auto res = run_json(zones_config(dir.string()), log_);
  ASSERT_EQ(res.status, kExitPass) << res.message;
  for (const auto& name : res.manifest["artifacts"]) EXPECT_TRUE(fs::exists(dir / name.get<std::string>())) << name;
}

TEST_F(CliTest, ManifestRecordsProvenance) {
  const auto res = run_json(zones_config(out("m")), log_);
  ASSERT_EQ(res.status, kExitPass);
  const auto m = read_json(fs::path(out("m")) / "manifest.json");
  EXPECT_EQ(m["run_id"].get<std::string>().size(), 16u);
  EXPECT_EQ(m["seed"], 42);
  EXPECT_EQ(m["threads"], 1);
  EXPECT_TRUE(m["versions"].contains("fftw"));
  EXPECT_TRUE(m["versions"].contains("compiler"));
  EXPECT_TRUE(m["verdict"].is_null());
  EXPECT_NEAR(m["derived"]["delta"].get<double>(), (1.2 - 0.1) / 3.2 - 0.2, 1e-15);
  EXPECT_NEAR(m["derived"]["gamma"].get<double>(), 1.0 - 1.0 / 3.2, 1e-15);
  EXPECT_EQ(m["config"]["profile"]["sigma"], 3.2);
}

TEST_F(CliTest, RerunIsIdempotent) {
  const auto first = run_json(zones_config(out("r1")), log_);
  const auto second = run_json(zones_config(out("r2")), log_);
  ASSERT_EQ(first.status, kExitPass);
  EXPECT_EQ(first.manifest["run_id"], second.manifest["run_id"]);
  EXPECT_EQ(without_timing(first.manifest).dump(), without_timing(second.manifest).dump());
  EXPECT_EQ(slurp(fs::path(out("r1")) / "zones.csv"), slurp(fs::path(out("r2")) / "zones.csv"));

  auto other = zones_config(out("r3"));
  other["seed"] = 7;
  EXPECT_NE(run_json(other, log_).manifest["run_id"], first.manifest["run_id"]);
}

TEST_F(CliTest, SolveWritesSnapshotsWithFullPrecision) {
  const auto res = run_json({{"experiment", "solve"},
                             {"output", out("solve")},
                             {"grid", {{"N", 32}}},
                             {"family", {{"id", "counterexample"}, {"example", "loss-not-necessary"}}},
                             {"data", {{"kind", "closed-form"}}},
                             {"mesh", {{"M", 256}, {"outputs", 3}, {"t_start", 0.001}}}},
                            log_);
  ASSERT_EQ(res.status, kExitPass) << res.message;
  std::ifstream csv(fs::path(out("solve")) / "solve_snapshot_0002.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "x,re_u,im_u,re_ut,im_ut");
  std::getline(csv, line);
  const auto x0 = line.substr(0, line.find(','));
  EXPECT_EQ(std::stod(x0), -kPi);
  EXPECT_EQ(res.manifest["summary"]["snapshot_times"].size(), 3u);
}

TEST_F(CliTest, EnergyCheckComparesTwoGrids) {
  const auto res = run_json({{"experiment", "check-energy"},
                             {"output", out("e")},
                             {"grid", {{"N", 16}}},
                             {"mesh", {{"M", 256}, {"outputs", 11}}},
                             {"profile", {{"lambda", 1.0}}}},
                            log_);
  ASSERT_EQ(res.status, kExitPass) << res.message;
  const auto runs = res.manifest["summary"]["runs"];
  ASSERT_EQ(runs.size(), 2u);
  EXPECT_EQ(runs[1]["N"], 32);
  EXPECT_TRUE(fs::exists(fs::path(out("e")) / "energy_N16.csv"));
  EXPECT_TRUE(fs::exists(fs::path(out("e")) / "energy_N32.csv"));
  EXPECT_LE(res.manifest["summary"]["ratio"].get<double>(), 2.0);
}

TEST(Manifest, FnvMatchesReferenceVectors) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
  EXPECT_EQ(fnv1a_hex("foobar"), "85944171f73967e8");
}
