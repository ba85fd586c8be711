#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/version.hpp>
#include <fftw3.h>
#include <nlohmann/json.hpp>

#include "acceptance.hpp"
#include "analysis.hpp"
#include "core.hpp"
#include "quantize.hpp"
#include "solver.hpp"
#include "structure.hpp"
#include "symbols.hpp"

namespace singwave {

// ---------------------------------------------------------------------------
// Exit codes
// ---------------------------------------------------------------------------

inline constexpr int kExitPass = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitInvalidConfig = 2;
inline constexpr int kExitNumericalAbort = 3;

/// Configuration rejected; field() is the dotted path of the offending entry.
class ConfigError : public InvalidArgument {
public:
  ConfigError(const std::string& field, const std::string& what)
      : InvalidArgument(field + ": " + what), field_(field) {}

  const std::string& field() const noexcept { return field_; }

private:
  std::string field_;
};

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"solve",        "verify-counterexamples", "check-cone",
                                              "check-energy", "symbol-report",          "zones-dump"};
  return names;
}

struct GridConfig {
  double L = kPi;
  std::size_t N = 256;
  double k = 1.0;
};

struct MeshConfig {
  std::size_t M = 2048;
  std::optional<double> kappa; ///< empty: graded for the family's rates
  double t_start = 0.0;
  std::size_t outputs = 11;
};

struct ProfileConfig {
  double p = 0.0;
  double q = 1.25;
  double r = 0.0;
  double sigma = 3.0;
  double T = 1.0;
  std::optional<double> lambda; ///< empty: fitted
};

struct FamilyConfig {
  std::string id = "theorem"; ///< wave | theorem | example | counterexample
  double speed = 1.0;
  std::string frequency = "square"; ///< square | bracket
  double amplitude = 1.0;
  double oscillation = 20.0;
  double beta = 0.0;
  double kappa1 = 0.0;
  double kappa2 = 0.0;
  std::string example = "finite-loss";
  int m = 0;
  bool excise = false;
};

struct DataConfig {
  std::string kind = "trig"; ///< trig | gaussian | closed-form
  std::size_t modes = 8;
  long max_mode = 4;
  double width = 0.4;
  double velocity = 0.0; ///< u'(t_start) = velocity * d_x u(t_start)
};

struct LatticeConfig {
  double t_min = 1e-4;
  std::size_t nt = 16;
  std::size_t nx = 9;
  std::size_t nxi = 17;
  double x_extent = 100.0;
  double xi_extent = 1e6;
  double zone_N = 2.0;
  int max_order = 0;
};

struct RunConfig {
  std::string experiment = "solve";
  std::uint64_t seed = 42;
  unsigned threads = 1;
  std::string output = "singwave-out";
  GridConfig grid;
  MeshConfig mesh;
  ProfileConfig profile;
  FamilyConfig family;
  DataConfig data;
  LatticeConfig lattice;
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"experiment", c.experiment},
       {"seed", c.seed},
       {"threads", c.threads},
       {"output", c.output},
       {"grid", {{"L", c.grid.L}, {"N", c.grid.N}, {"k", c.grid.k}}},
       {"mesh",
        {{"M", c.mesh.M},
         {"kappa", c.mesh.kappa ? nlohmann::json(*c.mesh.kappa) : nlohmann::json("auto")},
         {"t_start", c.mesh.t_start},
         {"outputs", c.mesh.outputs}}},
       {"profile",
        {{"p", c.profile.p},
         {"q", c.profile.q},
         {"r", c.profile.r},
         {"sigma", c.profile.sigma},
         {"T", c.profile.T},
         {"lambda", c.profile.lambda ? nlohmann::json(*c.profile.lambda) : nlohmann::json("fit")}}},
       {"family",
        {{"id", c.family.id},
         {"speed", c.family.speed},
         {"frequency", c.family.frequency},
         {"amplitude", c.family.amplitude},
         {"oscillation", c.family.oscillation},
         {"beta", c.family.beta},
         {"kappa1", c.family.kappa1},
         {"kappa2", c.family.kappa2},
         {"example", c.family.example},
         {"m", c.family.m},
         {"excise", c.family.excise}}},
       {"data",
        {{"kind", c.data.kind},
         {"modes", c.data.modes},
         {"max_mode", c.data.max_mode},
         {"width", c.data.width},
         {"velocity", c.data.velocity}}},
       {"lattice",
        {{"t_min", c.lattice.t_min},
         {"nt", c.lattice.nt},
         {"nx", c.lattice.nx},
         {"nxi", c.lattice.nxi},
         {"x_extent", c.lattice.x_extent},
         {"xi_extent", c.lattice.xi_extent},
         {"zone_N", c.lattice.zone_N},
         {"max_order", c.lattice.max_order}}}};
}

namespace detail {

/// One JSON object read against a fixed key set. Unknown keys and type
/// mismatches raise ConfigError naming the dotted field path.
class Section {
public:
  Section(const nlohmann::json* j, std::string path, std::set<std::string> keys)
      : j_(j), path_(std::move(path)), keys_(std::move(keys)) {
    if (!j_) return;
    if (!j_->is_object()) throw ConfigError(path_.empty() ? "config" : path_, "expected an object");
    for (const auto& [key, value] : j_->items()) {
      if (!keys_.count(key)) throw ConfigError(field(key), "unknown key");
    }
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const nlohmann::json* get(const std::string& key) const {
    if (!j_) return nullptr;
    auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
  }

  double number(const std::string& key, double def) const {
    const auto* v = get(key);
    if (!v) return def;
    if (!v->is_number()) throw ConfigError(field(key), "expected a number");
    const double d = v->get<double>();
    if (!std::isfinite(d)) throw ConfigError(field(key), "expected a finite number");
    return d;
  }

  std::uint64_t count(const std::string& key, std::uint64_t def) const {
    const auto* v = get(key);
    if (!v) return def;
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0)) {
      throw ConfigError(field(key), "expected a non-negative integer");
    }
    return v->get<std::uint64_t>();
  }

  std::string text(const std::string& key, const std::string& def, const std::vector<std::string>& allowed = {}) const {
    const auto* v = get(key);
    if (!v) return def;
    if (!v->is_string()) throw ConfigError(field(key), "expected a string");
    auto s = v->get<std::string>();
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError(field(key), "unknown value '" + s + "' (expected one of " + list + ")");
    }
    return s;
  }

  bool flag(const std::string& key, bool def) const {
    const auto* v = get(key);
    if (!v) return def;
    if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
    return v->get<bool>();
  }

  /// A number, or the given keyword mapped to an empty optional.
  std::optional<double> number_or(const std::string& key, const std::string& keyword,
                                  std::optional<double> def) const {
    const auto* v = get(key);
    if (!v) return def;
    if (v->is_string() && v->get<std::string>() == keyword) return std::nullopt;
    if (!v->is_number()) throw ConfigError(field(key), "expected a number or \"" + keyword + "\"");
    return number(key, 0.0);
  }

  Section child(const std::string& key, std::set<std::string> keys) const {
    return Section(get(key), field(key), std::move(keys));
  }

private:
  const nlohmann::json* j_;
  std::string path_;
  std::set<std::string> keys_;
};

inline void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field, what);
}

inline StructurePair family_pair(const FamilyConfig& f) {
  if (f.kappa1 == 0.0 && f.kappa2 == 0.0) return StructurePair::constant();
  return StructurePair::bracket_powers(f.kappa1, f.kappa2);
}

} // namespace detail

/// The coefficient family a configuration describes. The theorem family takes
/// its rates from the profile.
inline CoefficientFamily build_family(const RunConfig& c) {
  const auto& f = c.family;
  if (f.id == "wave") {
    return wave_family(f.speed, f.frequency == "bracket" ? FrequencyFactor::Bracket : FrequencyFactor::Square,
                       c.grid.k);
  }
  if (f.id == "theorem") {
    TheoremFamilyParams prm;
    prm.p = c.profile.p;
    prm.q = c.profile.q;
    prm.r = c.profile.r;
    prm.amplitude = f.amplitude;
    prm.frequency = f.oscillation;
    prm.beta = f.beta;
    prm.pair = detail::family_pair(f);
    prm.k = c.grid.k;
    return theorem_coefficient(prm);
  }
  if (f.id == "example") return example_coefficient(f.kappa1, f.kappa2, c.grid.k);
  return counterexample_family(example_from_id(f.example), f.m);
}

inline SingularityProfile build_profile(const RunConfig& c) {
  const auto& p = c.profile;
  return make_profile(p.p, p.q, p.r, p.sigma, p.T);
}

/// Strict reader: every object is checked against its key set, every value
/// against its type and range, and the grid, profile and family are
/// constructed once so their preconditions surface as ConfigError.
inline RunConfig load_config(const nlohmann::json& j) {
  using detail::require;
  RunConfig c;
  const detail::Section root(&j, "",
                             {"experiment", "seed", "threads", "output", "grid", "mesh", "profile", "family", "data",
                              "lattice"});
  c.experiment = root.text("experiment", c.experiment, experiment_names());
  c.seed = root.count("seed", c.seed);
  const auto threads = root.count("threads", c.threads);
  require(threads >= 1 && threads <= 1024, "threads", "requires 1 <= threads <= 1024");
  c.threads = static_cast<unsigned>(threads);
  c.output = root.text("output", c.output);
  require(!c.output.empty(), "output", "requires a directory name");

  const auto grid = root.child("grid", {"L", "N", "k"});
  c.grid.L = grid.number("L", c.grid.L);
  c.grid.N = grid.count("N", c.grid.N);
  c.grid.k = grid.number("k", c.grid.k);
  try {
    GridSpec(c.grid.L, c.grid.N, c.grid.k);
  } catch (const InvalidArgument& e) {
    throw ConfigError("grid", e.what());
  }

  const auto prof = root.child("profile", {"p", "q", "r", "sigma", "T", "lambda"});
  c.profile.p = prof.number("p", c.profile.p);
  c.profile.q = prof.number("q", c.profile.q);
  c.profile.r = prof.number("r", c.profile.r);
  c.profile.sigma = prof.number("sigma", c.profile.sigma);
  c.profile.T = prof.number("T", c.profile.T);
  c.profile.lambda = prof.number_or("lambda", "fit", c.profile.lambda);
  require(!c.profile.lambda || *c.profile.lambda >= 0.0, "profile.lambda", "requires lambda >= 0");
  try {
    build_profile(c);
  } catch (const InvalidArgument& e) {
    throw ConfigError("profile", e.what());
  }

  const auto mesh = root.child("mesh", {"M", "kappa", "t_start", "outputs"});
  c.mesh.M = mesh.count("M", c.mesh.M);
  c.mesh.kappa = mesh.number_or("kappa", "auto", c.mesh.kappa);
  c.mesh.t_start = mesh.number("t_start", c.mesh.t_start);
  c.mesh.outputs = mesh.count("outputs", c.mesh.outputs);
  require(c.mesh.M >= 1, "mesh.M", "requires M >= 1");
  require(!c.mesh.kappa || *c.mesh.kappa >= 1.0, "mesh.kappa", "requires kappa >= 1");
  require(c.mesh.t_start >= 0.0 && c.mesh.t_start < c.profile.T, "mesh.t_start", "requires 0 <= t_start < T");
  require(c.mesh.outputs >= 2, "mesh.outputs", "requires at least 2 output times");

  const auto fam = root.child("family", {"id", "speed", "frequency", "amplitude", "oscillation", "beta", "kappa1",
                                         "kappa2", "example", "m", "excise"});
  c.family.id = fam.text("id", c.family.id, {"wave", "theorem", "example", "counterexample"});
  c.family.speed = fam.number("speed", c.family.speed);
  c.family.frequency = fam.text("frequency", c.family.frequency, {"square", "bracket"});
  c.family.amplitude = fam.number("amplitude", c.family.amplitude);
  c.family.oscillation = fam.number("oscillation", c.family.oscillation);
  c.family.beta = fam.number("beta", c.family.beta);
  c.family.kappa1 = fam.number("kappa1", c.family.kappa1);
  c.family.kappa2 = fam.number("kappa2", c.family.kappa2);
  c.family.example =
      fam.text("example", c.family.example, {"finite-loss", "loss-not-necessary", "no-loss", "nonunique"});
  const auto m = fam.count("m", static_cast<std::uint64_t>(c.family.m));
  require(m <= 64, "family.m", "requires 0 <= m <= 64");
  c.family.m = static_cast<int>(m);
  c.family.excise = fam.flag("excise", c.family.excise);
  require(c.family.speed >= 0.0, "family.speed", "requires speed >= 0");
  try {
    build_family(c);
  } catch (const InvalidArgument& e) {
    throw ConfigError("family", e.what());
  }

  const auto data = root.child("data", {"kind", "modes", "max_mode", "width", "velocity"});
  c.data.kind = data.text("kind", c.data.kind, {"trig", "gaussian", "closed-form"});
  c.data.modes = data.count("modes", c.data.modes);
  c.data.max_mode = static_cast<long>(data.count("max_mode", static_cast<std::uint64_t>(c.data.max_mode)));
  c.data.width = data.number("width", c.data.width);
  c.data.velocity = data.number("velocity", c.data.velocity);
  require(c.data.max_mode >= 1 && c.data.max_mode < static_cast<long>(c.grid.N / 2), "data.max_mode",
          "requires 1 <= max_mode < N/2");
  require(c.data.modes >= 1 && c.data.modes <= static_cast<std::size_t>(2 * c.data.max_mode), "data.modes",
          "requires 1 <= modes <= 2 max_mode");
  require(c.data.width > 0.0, "data.width", "requires width > 0");
  require(c.data.kind != "closed-form" || c.family.id == "counterexample", "data.kind",
          "closed-form data need family.id = counterexample");

  const auto lat = root.child("lattice", {"t_min", "nt", "nx", "nxi", "x_extent", "xi_extent", "zone_N", "max_order"});
  c.lattice.t_min = lat.number("t_min", c.lattice.t_min);
  c.lattice.nt = lat.count("nt", c.lattice.nt);
  c.lattice.nx = lat.count("nx", c.lattice.nx);
  c.lattice.nxi = lat.count("nxi", c.lattice.nxi);
  c.lattice.x_extent = lat.number("x_extent", c.lattice.x_extent);
  c.lattice.xi_extent = lat.number("xi_extent", c.lattice.xi_extent);
  c.lattice.zone_N = lat.number("zone_N", c.lattice.zone_N);
  c.lattice.max_order = static_cast<int>(lat.count("max_order", static_cast<std::uint64_t>(c.lattice.max_order)));
  require(c.lattice.t_min > 0.0 && c.lattice.t_min < c.profile.T, "lattice.t_min", "requires 0 < t_min < T");
  require(c.lattice.nt >= 2 && c.lattice.nx >= 1 && c.lattice.nxi >= 1, "lattice",
          "requires nt >= 2, nx >= 1, nxi >= 1");
  require(c.lattice.x_extent > 0.1, "lattice.x_extent", "requires x_extent > 0.1");
  require(c.lattice.xi_extent > 0.1, "lattice.xi_extent", "requires xi_extent > 0.1");
  require(c.lattice.zone_N > 0.0, "lattice.zone_N", "requires zone_N > 0");
  require(c.lattice.max_order <= 2, "lattice.max_order", "requires max_order <= 2");
  return c;
}

inline RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config", "cannot read " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config", std::string("not valid JSON: ") + e.what());
  }
  return load_config(j);
}

// ---------------------------------------------------------------------------
// Manifest helpers
// ---------------------------------------------------------------------------

/// FNV-1a 64-bit hash as 16 hex digits.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Hash of the resolved configuration without its output directory.
inline std::string run_id(nlohmann::json resolved) {
  resolved.erase("output");
  return fnv1a_hex(resolved.dump());
}

inline nlohmann::json version_info() {
  std::ostringstream nl;
  nl << NLOHMANN_JSON_VERSION_MAJOR << '.' << NLOHMANN_JSON_VERSION_MINOR << '.' << NLOHMANN_JSON_VERSION_PATCH;
#if defined(__clang__)
  const std::string compiler = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  const std::string compiler = std::string("gcc ") + __VERSION__;
#else
  const std::string compiler = "unknown";
#endif
  return {{"fftw", std::string(fftw_version)},
          {"nlohmann_json", nl.str()},
          {"boost", BOOST_LIB_VERSION},
          {"compiler", compiler},
          {"cxx_standard", static_cast<long>(__cplusplus)}};
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

namespace detail {

/// Result of one experiment body before the manifest is assembled.
struct Outcome {
  std::optional<bool> verdict; ///< set by check-type experiments
  nlohmann::json summary = nlohmann::json::object();
  std::vector<std::string> artifacts;
};

inline std::ofstream open_csv(const std::filesystem::path& dir, const std::string& name) {
  std::ofstream os(dir / name);
  if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
  os.precision(17);
  return os;
}

inline void write_json(const std::filesystem::path& file, const nlohmann::json& j) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << j.dump(2) << "\n";
}

inline RealVector output_times(double a, double b, std::size_t n) { return linspace(a, b, n); }

inline TimeMesh build_mesh(const RunConfig& c, const CauchyProblem& pb, std::size_t M) {
  const double kappa = c.mesh.kappa ? *c.mesh.kappa : TimeMesh::grading_for(pb.family.rates, pb.t_start);
  return TimeMesh::graded(pb.t_start, pb.T, M, kappa);
}

/// Initial data on the grid as configured.
inline CauchyProblem build_problem(const RunConfig& c, const GridSpec& g, const CoefficientFamily& fam) {
  CauchyProblem pb;
  pb.family = fam;
  pb.t_start = c.mesh.t_start;
  pb.T = c.profile.T;
  pb.use_excision = c.family.excise;
  if (c.data.kind == "closed-form") {
    const auto cf = closed_form(example_from_id(c.family.example), c.family.m,
                                TrigPolynomial::random(c.seed, g.L(), c.data.modes, c.data.max_mode));
    pb.f1 = cf.sample(g, pb.t_start);
    pb.f2 = cf.sample_dt(g, pb.t_start);
    pb.periodic_data = true;
    return pb;
  }
  if (c.data.kind == "trig") {
    pb.f1 = TrigPolynomial::random(c.seed, g.L(), c.data.modes, c.data.max_mode).sample(g);
    pb.periodic_data = true;
  } else {
    pb.f1 = gaussian(g, c.data.width);
  }
  pb.f2 = spectral_derivative(g, pb.f1, 1);
  for (auto& v : pb.f2) v *= c.data.velocity;
  return pb;
}

inline Outcome run_solve(const RunConfig& c, const std::filesystem::path& dir) {
  const GridSpec g(c.grid.L, c.grid.N, c.grid.k);
  const auto pb = build_problem(c, g, build_family(c));
  const auto mesh = build_mesh(c, pb, c.mesh.M);
  const auto traj = integrate(pb, g, mesh, output_times(pb.t_start, pb.T, c.mesh.outputs));
  Outcome out;
  out.artifacts = write_trajectory_csv(dir, "solve", g, traj);
  out.summary = trajectory_summary(mesh, traj);
  out.summary["final_l2_norm"] = l2_norm(g, traj.snapshots.back().u);
  write_json(dir / "solve_summary.json", out.summary);
  out.artifacts.push_back("solve_summary.json");
  return out;
}

/// Residual of each closed form, integration error against it, and for the
/// nonunique example the vanishing data with a nonzero solution.
inline Outcome run_verify(const RunConfig& c, const std::filesystem::path& dir) {
  const GridSpec g(c.grid.L, c.grid.N, c.grid.k);
  const auto u0 = TrigPolynomial::random(c.seed, g.L(), c.data.modes, c.data.max_mode);
  const double T = c.profile.T;
  RealVector ts;
  for (double t : {0.01, 0.05, 0.1, 0.3, 0.6, 1.0})
    if (t <= T) ts.push_back(t);
  if (ts.empty()) ts.push_back(T);
  const int m = c.family.id == "counterexample" ? c.family.m : 0;
  constexpr double residual_tol = 1e-6, error_tol = 1e-5;

  Outcome out;
  auto os = open_csv(dir, "counterexamples.csv");
  os << "example,m,residual,integration_error,data_max,solution_max,pass\n";
  nlohmann::json entries = nlohmann::json::array();
  bool all = true;
  for (auto id : {Example::Finite, Example::NotNecessary, Example::NoLoss, Example::Nonunique}) {
    const int mm = id == Example::Finite ? m : 0;
    const auto cf = closed_form(id, mm, u0);
    const double res = residual_check(id, mm, u0, g, ts);
    nlohmann::json e{{"example", to_string(id)}, {"m", mm}, {"residual", res}};
    bool pass = res < residual_tol;
    std::string err_field, data_field, sol_field;
    if (id == Example::Nonunique) {
      double data = 0.0, sol = 0.0;
      for (const auto& v : cf.sample(g, 0.0)) data = std::max(data, std::abs(v));
      for (const auto& v : cf.sample_dt(g, 0.0)) data = std::max(data, std::abs(v));
      for (const auto& v : cf.sample(g, T)) sol = std::max(sol, std::abs(v));
      e["data_max"] = data;
      e["solution_max"] = sol;
      pass = pass && data == 0.0 && sol > 0.0;
      std::ostringstream d, s;
      d.precision(17);
      s.precision(17);
      d << data;
      s << sol;
      data_field = d.str();
      sol_field = s.str();
    } else {
      const double t_start = id == Example::NoLoss ? 0.0 : std::min(1e-3, 0.5 * T);
      auto pb = cf.problem(g, t_start, T);
      pb.periodic_data = true;
      const auto traj = integrate(pb, g, TimeMesh::for_problem(pb, c.mesh.M), {T});
      const double err = rel_l2(g, traj.snapshots.back().u, cf.sample(g, T));
      e["integration_error"] = err;
      e["t_start"] = t_start;
      pass = pass && err <= error_tol;
      std::ostringstream s;
      s.precision(17);
      s << err;
      err_field = s.str();
    }
    e["pass"] = pass;
    all = all && pass;
    os << to_string(id) << ',' << mm << ',' << res << ',' << err_field << ',' << data_field << ',' << sol_field << ','
       << (pass ? 1 : 0) << '\n';
    entries.push_back(e);
  }
  out.artifacts.push_back("counterexamples.csv");
  out.verdict = all;
  out.summary = {{"entries", entries},
                 {"residual_tolerance", residual_tol},
                 {"error_tolerance", error_tol},
                 {"residual_times", ts}};
  return out;
}

inline Outcome run_cone(const RunConfig& c, const std::filesystem::path& dir) {
  const GridSpec g(c.grid.L, c.grid.N, c.grid.k);
  const auto pb = build_problem(c, g, build_family(c));
  const auto mesh = build_mesh(c, pb, c.mesh.M);
  const auto traj = integrate(pb, g, mesh, output_times(pb.t_start, pb.T, c.mesh.outputs));
  const double c_star = propagation_speed(pb.family, g, linspace(std::max(1e-4 * pb.T, pb.t_start), pb.T, 40001));
  const auto rep = cone_check(traj, g, ConeSpec::for_family(pb.family, c_star, 0.0, pb.t_start));
  Outcome out;
  auto os = open_csv(dir, "cone.csv");
  os << "t,measured_radius,predicted_radius,pass\n";
  for (const auto& e : rep.entries) os << e.t << ',' << e.measured << ',' << e.predicted << ',' << (e.pass ? 1 : 0) << '\n';
  out.artifacts.push_back("cone.csv");
  out.verdict = rep.passed();
  out.summary = {{"c_star", c_star}, {"report", rep}};
  return out;
}

/// Energy ratio on the configured grid and on the grid with N and M doubled;
/// the two sup E/D verdicts must agree within a factor of 2.
inline Outcome run_energy(const RunConfig& c, const std::filesystem::path& dir) {
  const auto prof = build_profile(c);
  const auto fam = build_family(c);
  Outcome out;
  nlohmann::json runs = nlohmann::json::array();
  RealVector verdicts;
  for (std::size_t level = 0; level < 2; ++level) {
    const std::size_t N = c.grid.N << level, M = c.mesh.M << level;
    const GridSpec g(c.grid.L, N, c.grid.k);
    nlohmann::json fit_json;
    double lambda = 0.0;
    if (c.profile.lambda) {
      lambda = *c.profile.lambda;
      fit_json = {{"lambda", lambda}, {"fitted", false}};
    } else {
      const auto fit = fit_lambda(fam, g, PhaseLattice::log_spaced(std::max<std::size_t>(8, 24 * N / 32), 1e-4 * prof.T, prof.T),
                                  prof);
      lambda = fit.lambda;
      fit_json = fit;
      fit_json["fitted"] = true;
    }
    const auto pb = build_problem(c, g, fam);
    const auto traj = integrate(pb, g, build_mesh(c, pb, M), output_times(pb.t_start, pb.T, c.mesh.outputs));
    const auto tr = energy_monitor(traj, pb, g, {}, prof, lambda);
    const std::string name = "energy_N" + std::to_string(N) + ".csv";
    auto os = open_csv(dir, name);
    os << "t,Lambda,u_norm,ut_norm,data_bound,ratio\n";
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      os << tr.times[i] << ',' << tr.lambda_values[i] << ',' << tr.u_norms[i] << ',' << tr.ut_norms[i] << ','
         << tr.data_bound[i] << ',' << tr.energy(i) / tr.data_bound[i] << '\n';
    }
    out.artifacts.push_back(name);
    verdicts.push_back(tr.verdict);
    runs.push_back({{"N", N}, {"M", M}, {"lambda", fit_json}, {"verdict", tr.verdict}, {"worst_time", tr.worst_time}});
  }
  const double lo = std::min(verdicts[0], verdicts[1]), hi = std::max(verdicts[0], verdicts[1]);
  const double ratio = hi / lo;
  out.verdict = std::isfinite(lo) && std::isfinite(hi) && lo > 0.0 && ratio <= 2.0;
  out.summary = {{"runs", runs},
                 {"ratio", ratio},
                 {"profile", {{"delta", prof.delta}, {"gamma", prof.gamma}, {"delta_star", prof.delta_star}}}};
  return out;
}

inline PhaseLattice build_lattice(const RunConfig& c) {
  const auto& l = c.lattice;
  return {PhaseLattice::log_spaced(l.nt, l.t_min, c.profile.T), PhaseLattice::symmetric_log(l.nx, 0.1, l.x_extent),
          PhaseLattice::symmetric_log(l.nxi, 0.1, l.xi_extent)};
}

/// Fitted class constants and t-exponents of tau and d_t tau per excision zone.
inline Outcome run_symbol_report(const RunConfig& c, const std::filesystem::path& dir) {
  const auto fam = build_family(c);
  const auto lat = build_lattice(c);
  const auto root = char_root(excise(fam), lat);
  SymbolClass cls;
  cls.m1 = 1;
  cls.m2 = 1;
  cls.zones = ZoneScheme::Excision;
  cls.zone_N = 2;
  cls.t_power_exterior = fam.rates.p / 2;
  cls.max_order = c.lattice.max_order;
  const auto tau = symbol_class_report(SymbolOracle::of(root), cls, fam.pair, fam.k, lat);
  cls.zone_N = 1;
  cls.m1 = 2;
  const auto dt_tau = symbol_class_report(SymbolOracle::time_derivative_of(root), cls, fam.pair, fam.k, lat);

  Outcome out;
  auto os = open_csv(dir, "symbol_report.csv");
  os << "symbol,zone,alpha,beta,constant,refined_constant,t_exponent,residual,machine_zero,stable,samples\n";
  for (const auto* rep : {&tau, &dt_tau}) {
    const std::string name = rep == &tau ? "tau" : "dt_tau";
    for (const auto& e : rep->entries) {
      os << name << ',' << e.zone << ',' << e.alpha << ',' << e.beta << ',' << e.constant << ',' << e.refined_constant
         << ',' << e.t_exponent << ',' << e.residual << ',' << (e.machine_zero ? 1 : 0) << ',' << (e.stable() ? 1 : 0)
         << ',' << e.samples << '\n';
    }
  }
  out.artifacts.push_back("symbol_report.csv");
  out.summary = {{"ellipticity", root.ellipticity()}, {"lattice_size", lat.size()}, {"tau", tau}, {"dt_tau", dt_tau}};
  write_json(dir / "symbol_report.json", out.summary);
  out.artifacts.push_back("symbol_report.json");
  return out;
}

/// Zone of every lattice sample and the interior fraction per time.
inline Outcome run_zones(const RunConfig& c, const std::filesystem::path& dir) {
  const auto prof = build_profile(c);
  const auto fam = build_family(c);
  const auto lat = build_lattice(c);
  const double N = c.lattice.zone_N;
  Outcome out;
  auto os = open_csv(dir, "zones.csv");
  os << "t,x,xi,zone\n";
  nlohmann::json per_t = nlohmann::json::array();
  bool monotone = true;
  double previous = 1.0;
  const double total = static_cast<double>(lat.x.size() * lat.xi.size());
  for (double t : lat.t) {
    std::size_t counts[3] = {0, 0, 0};
    for (double x : lat.x) {
      for (double xi : lat.xi) {
        const auto z = classify_zone(t, x, xi, N, prof, fam.pair, fam.k);
        ++counts[static_cast<int>(z)];
        os << t << ',' << x << ',' << xi << ',' << to_string(z) << '\n';
      }
    }
    const double interior = static_cast<double>(counts[static_cast<int>(Zone::Interior)]) / total;
    monotone = monotone && interior <= previous;
    previous = interior;
    per_t.push_back({{"t", t},
                     {"core", static_cast<double>(counts[0]) / total},
                     {"interior", interior},
                     {"exterior", static_cast<double>(counts[2]) / total}});
  }
  out.artifacts.push_back("zones.csv");
  out.summary = {{"zone_N", N}, {"fractions", per_t}, {"interior_fraction_nonincreasing", monotone}};
  write_json(dir / "zones_summary.json", out.summary);
  out.artifacts.push_back("zones_summary.json");
  return out;
}

inline Outcome dispatch(const RunConfig& c, const std::filesystem::path& dir) {
  if (c.experiment == "solve") return run_solve(c, dir);
  if (c.experiment == "verify-counterexamples") return run_verify(c, dir);
  if (c.experiment == "check-cone") return run_cone(c, dir);
  if (c.experiment == "check-energy") return run_energy(c, dir);
  if (c.experiment == "symbol-report") return run_symbol_report(c, dir);
  if (c.experiment == "zones-dump") return run_zones(c, dir);
  throw ConfigError("experiment", "unknown value '" + c.experiment + "'");
}

inline const char* status_text(int status) {
  switch (status) {
  case kExitPass: return "ok";
  case kExitFail: return "fail";
  case kExitInvalidConfig: return "invalid-config";
  case kExitNumericalAbort: return "numerical-abort";
  }
  return "unknown";
}

} // namespace detail

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct RunResult {
  int status = kExitPass;
  std::string message;
  std::filesystem::path directory;
  nlohmann::json manifest; ///< null when the configuration was rejected
};

/// Runs one experiment into c.output and writes manifest.json there.
/// Check-type experiments also write verdict.json.
inline RunResult run(const RunConfig& c, std::ostream& log) {
  RunResult res;
  res.directory = c.output;
  const auto started = utc_timestamp();
  const auto t0 = std::chrono::steady_clock::now();
  set_threads(c.threads);
  const nlohmann::json resolved = c;

  nlohmann::json manifest{{"run_id", run_id(resolved)},
                          {"experiment", c.experiment},
                          {"config", resolved},
                          {"seed", c.seed},
                          {"threads", c.threads},
                          {"versions", version_info()},
                          {"started_at", started}};
  std::vector<std::string> artifacts;
  nlohmann::json verdict = nullptr;
  try {
    const auto prof = build_profile(c);
    manifest["derived"] = {{"delta", prof.delta}, {"gamma", prof.gamma}, {"delta_star", prof.delta_star}};
    std::filesystem::create_directories(res.directory);
    auto out = detail::dispatch(c, res.directory);
    artifacts = out.artifacts;
    if (out.verdict) {
      verdict = *out.verdict;
      detail::write_json(res.directory / "verdict.json",
                         {{"experiment", c.experiment}, {"pass", *out.verdict}, {"details", out.summary}});
      artifacts.push_back("verdict.json");
      res.status = *out.verdict ? kExitPass : kExitFail;
      res.message = c.experiment + (*out.verdict ? ": PASS" : ": FAIL");
    } else {
      res.message = c.experiment + ": done";
    }
    manifest["summary"] = out.summary;
  } catch (const EllipticityError& e) {
    res.status = kExitNumericalAbort;
    res.message = e.what();
    manifest["error"] = {{"kind", "ellipticity"},
                         {"message", e.what()},
                         {"witness", {{"t", e.t()}, {"x", e.x()}, {"xi", e.xi()}}}};
  } catch (const NumericalAbort& e) {
    res.status = kExitNumericalAbort;
    res.message = e.what();
    manifest["error"] = {{"kind", "numerical"}, {"message", e.what()}};
  } catch (const InvalidArgument& e) {
    res.status = kExitInvalidConfig;
    res.message = e.what();
    manifest["error"] = {{"kind", "invalid-argument"}, {"message", e.what()}};
  }
  artifacts.push_back("manifest.json");
  manifest["artifacts"] = artifacts;
  manifest["status"] = res.status;
  manifest["status_text"] = detail::status_text(res.status);
  manifest["verdict"] = verdict;
  manifest["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::filesystem::create_directories(res.directory);
  detail::write_json(res.directory / "manifest.json", manifest);
  res.manifest = manifest;
  log << res.message << " [" << detail::status_text(res.status) << ", run " << manifest["run_id"].get<std::string>()
      << " -> " << res.directory.string() << "]" << std::endl;
  return res;
}

/// Loads and runs a JSON configuration; a rejected configuration returns
/// status 2 without touching the file system.
inline RunResult run_json(const nlohmann::json& j, std::ostream& log) {
  RunConfig c;
  try {
    c = load_config(j);
  } catch (const InvalidArgument& e) {
    RunResult res;
    res.status = kExitInvalidConfig;
    res.message = e.what();
    log << "invalid configuration: " << e.what() << std::endl;
    return res;
  }
  return run(c, log);
}

/// Runs the full acceptance battery, printing one PASS/FAIL line per
/// criterion, and writes suite.json plus manifest.json into dir.
inline RunResult run_suite(const std::filesystem::path& dir, std::uint64_t seed, unsigned threads, std::ostream& log) {
  RunResult res;
  res.directory = dir;
  const auto started = utc_timestamp();
  const auto t0 = std::chrono::steady_clock::now();
  set_threads(threads);
  std::filesystem::create_directories(dir);
  AcceptanceOptions opt;
  opt.seed = seed;
  const auto results = run_acceptance(opt, [&](const CriterionResult& r) { log << format_line(r) << std::endl; });
  std::size_t passed = 0;
  for (const auto& r : results) passed += r.pass;
  const bool all = passed == results.size();
  detail::write_json(dir / "suite.json",
                     {{"seed", seed}, {"passed", passed}, {"total", results.size()}, {"pass", all}, {"criteria", results}});
  const nlohmann::json resolved{{"experiment", "suite"}, {"seed", seed}, {"threads", threads}};
  res.status = all ? kExitPass : kExitFail;
  res.message = std::to_string(passed) + "/" + std::to_string(results.size()) + " criteria passed";
  res.manifest = {{"run_id", run_id(resolved)},
                  {"experiment", "suite"},
                  {"config", resolved},
                  {"seed", seed},
                  {"threads", threads},
                  {"versions", version_info()},
                  {"started_at", started},
                  {"artifacts", {"suite.json", "manifest.json"}},
                  {"status", res.status},
                  {"status_text", detail::status_text(res.status)},
                  {"verdict", all},
                  {"wall_time_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
  detail::write_json(dir / "manifest.json", res.manifest);
  log << res.message << std::endl;
  return res;
}

} // namespace singwave
