#pragma once

// Experiment configuration: JSON document -> typed model objects.
//
// Validation is hand-written against configs/schema.json. Errors carry the
// dotted path of the offending entry and, when the raw text is available, the
// line it sits on.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spm/domain.hpp"
#include "spm/error.hpp"
#include "spm/monotone.hpp"
#include "spm/noise.hpp"
#include "spm/solver.hpp"

namespace spm {

using json = nlohmann::json;

/// Field given as a sum of eigenvectors, discrete Dirac masses and explicit
/// nodal values.
struct FieldSpec {
  std::vector<std::pair<std::size_t, double>> modes;   // (eigen index, amplitude)
  std::vector<std::pair<std::size_t, double>> diracs;  // (node, mass); value = mass / cell volume
  std::vector<double> values;

  Field build(const DirichletLaplacian& L) const {
    Field f = Field::Zero(static_cast<Eigen::Index>(L.size()));
    for (const auto& [j, a] : modes) {
      if (j >= L.size()) throw ConfigError("eigenvector index " + std::to_string(j) + " exceeds grid size");
      f += a * L.eigenvector(j);
    }
    for (const auto& [n, a] : diracs) {
      if (n >= L.size()) throw ConfigError("dirac node " + std::to_string(n) + " exceeds grid size");
      f[static_cast<Eigen::Index>(n)] += a / L.grid().cell_volume();
    }
    if (!values.empty()) {
      if (values.size() != L.size())
        throw ConfigError("values: " + std::to_string(values.size()) + " entries for " + std::to_string(L.size()) +
                          " nodes");
      for (std::size_t i = 0; i < values.size(); ++i) f[static_cast<Eigen::Index>(i)] += values[i];
    }
    return f;
  }
};

struct DiffusionSpec {
  std::string variant;  // zero | constant_additive | linear_spectral | smoothed_nemytskii
  std::vector<FieldSpec> fields;
  std::vector<double> coefficients;
  ScalarMap map;
  double gamma = 0.0;
};

struct RunSettings {
  std::size_t n_paths = 100;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
};

struct ExperimentSettings {
  std::vector<double> lambdas;
  std::vector<double> apriori_lambdas;
  std::vector<int> levels;
  std::vector<int> mollify_levels;
  std::vector<double> contraction_fractions;
  std::size_t noise_paths = 2000;
};

struct ExperimentConfig {
  json document;  // after overrides; hashed for provenance
  SpatialGrid grid;
  MonotoneGraph graph;
  SolverConfig solver;
  NoiseSpec noise;
  double T;
  DiffusionSpec diffusion;
  FieldSpec initial;
  RunSettings run;
  ExperimentSettings experiments;

  DiffusionCoefficient diffusion_coefficient(const DirichletLaplacian& L) const {
    const std::size_t K = noise.n_modes();
    const auto& d = diffusion;
    if (d.variant == "zero") return DiffusionCoefficient::zero(K, L.size());
    if (d.variant == "constant_additive") {
      std::vector<Field> f;
      for (const auto& s : d.fields) f.push_back(s.build(L));
      return DiffusionCoefficient(ConstantAdditive{std::move(f)}, d.gamma);
    }
    if (d.variant == "linear_spectral") return DiffusionCoefficient(LinearSpectral{d.coefficients}, d.gamma);
    return DiffusionCoefficient(SmoothedNemytskii{d.map, d.coefficients}, d.gamma);
  }
};

namespace detail {

/// 1-based line of a byte offset.
inline std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

/// Best-effort line of a dotted path in the source text: each key is looked
/// up after the position of its parent.
inline std::optional<std::size_t> line_of_path(std::string_view text, const std::string& path) {
  if (text.empty()) return std::nullopt;
  std::size_t pos = 0;
  bool found_any = false;
  std::stringstream ss(path);
  std::string key;
  while (std::getline(ss, key, '.')) {
    if (!key.empty() && std::all_of(key.begin(), key.end(), [](unsigned char c) { return std::isdigit(c); })) continue;
    const std::size_t at = text.find("\"" + key + "\"", pos);
    if (at == std::string_view::npos) break;
    pos = at;
    found_any = true;
  }
  if (!found_any) return std::nullopt;
  return line_of_offset(text, pos);
}

class Reader {
 public:
  explicit Reader(std::string_view source) : source_(source) {}

  [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
    std::string where = path;
    if (auto line = line_of_path(source_, path)) where += " (line " + std::to_string(*line) + ")";
    throw ConfigError("config: " + where + ": " + msg);
  }

  const json& object(const json& parent, const std::string& key, const std::string& path) const {
    if (!parent.contains(key)) fail(path, "missing required section");
    const json& v = parent.at(key);
    if (!v.is_object()) fail(path, "must be an object");
    return v;
  }

  void only_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& path) const {
    for (const auto& [k, v] : obj.items()) {
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
        fail(join(path, k), "unknown key");
    }
  }

  double number(const json& obj, const std::string& key, const std::string& path, std::optional<double> fallback = {}) const {
    const std::string p = join(path, key);
    if (!obj.contains(key)) {
      if (fallback) return *fallback;
      fail(p, "missing required number");
    }
    const json& v = obj.at(key);
    if (!v.is_number()) fail(p, "must be a number");
    return v.get<double>();
  }

  double positive(const json& obj, const std::string& key, const std::string& path, std::optional<double> fallback = {}) const {
    const double v = number(obj, key, path, fallback);
    if (!(v > 0.0)) fail(join(path, key), "must be > 0");
    return v;
  }

  double nonnegative(const json& obj, const std::string& key, const std::string& path,
                     std::optional<double> fallback = {}) const {
    const double v = number(obj, key, path, fallback);
    if (!(v >= 0.0)) fail(join(path, key), "must be >= 0");
    return v;
  }

  long long integer(const json& obj, const std::string& key, const std::string& path, std::optional<long long> fallback = {},
                    long long min = 0) const {
    const std::string p = join(path, key);
    if (!obj.contains(key)) {
      if (fallback) return *fallback;
      fail(p, "missing required integer");
    }
    const json& v = obj.at(key);
    if (!v.is_number_integer()) fail(p, "must be an integer");
    const long long x = v.get<long long>();
    if (x < min) fail(p, "must be >= " + std::to_string(min));
    return x;
  }

  std::string string(const json& obj, const std::string& key, const std::string& path,
                     std::optional<std::string> fallback = {}) const {
    const std::string p = join(path, key);
    if (!obj.contains(key)) {
      if (fallback) return *fallback;
      fail(p, "missing required string");
    }
    if (!obj.at(key).is_string()) fail(p, "must be a string");
    return obj.at(key).get<std::string>();
  }

  std::vector<double> numbers(const json& obj, const std::string& key, const std::string& path,
                              std::optional<std::vector<double>> fallback = {}) const {
    const std::string p = join(path, key);
    if (!obj.contains(key)) {
      if (fallback) return *fallback;
      fail(p, "missing required array");
    }
    const json& v = obj.at(key);
    if (!v.is_array()) fail(p, "must be an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(join(p, std::to_string(i)), "must be a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  static std::string join(const std::string& a, const std::string& b) { return a.empty() ? b : a + "." + b; }

 private:
  std::string_view source_;
};

inline FieldSpec read_field(const Reader& r, const json& v, const std::string& path) {
  if (!v.is_object()) r.fail(path, "field must be an object with modes/diracs/values");
  r.only_keys(v, {"modes", "diracs", "values"}, path);
  FieldSpec f;
  auto pairs = [&](const char* key, const char* index_key, auto& dest) {
    if (!v.contains(key)) return;
    const json& a = v.at(key);
    const std::string p = Reader::join(path, key);
    if (!a.is_array()) r.fail(p, "must be an array");
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::string pi = Reader::join(p, std::to_string(i));
      if (!a[i].is_object()) r.fail(pi, "must be an object");
      r.only_keys(a[i], {index_key, "amplitude"}, pi);
      dest.emplace_back(static_cast<std::size_t>(r.integer(a[i], index_key, pi)), r.number(a[i], "amplitude", pi));
    }
  };
  pairs("modes", "index", f.modes);
  pairs("diracs", "node", f.diracs);
  if (v.contains("values")) f.values = r.numbers(v, "values", path);
  return f;
}

inline MonotoneGraph read_graph(const Reader& r, const json& b, const std::string& path) {
  const std::string variant = r.string(b, "variant", path);
  try {
    if (variant == "power_law") {
      r.only_keys(b, {"variant", "exponent", "lambda"}, path);
      return MonotoneGraph::power_law(r.positive(b, "exponent", path));
    }
    if (variant == "linear") {
      r.only_keys(b, {"variant", "slope", "lambda"}, path);
      return MonotoneGraph::linear(r.positive(b, "slope", path));
    }
    if (variant == "signum") {
      r.only_keys(b, {"variant", "height", "lambda"}, path);
      return MonotoneGraph::signum(r.positive(b, "height", path));
    }
    if (variant == "stefan") {
      r.only_keys(b, {"variant", "slope_negative", "slope_positive", "latent", "lambda"}, path);
      return MonotoneGraph::stefan(r.positive(b, "slope_negative", path), r.positive(b, "slope_positive", path),
                                   r.nonnegative(b, "latent", path));
    }
  } catch (const std::invalid_argument& e) {
    r.fail(path, e.what());
  }
  r.fail(Reader::join(path, "variant"), "unknown variant '" + variant + "' (power_law, linear, signum, stefan)");
}

inline NoiseMode read_mode(const Reader& r, const json& m, const std::string& path) {
  if (!m.is_object()) r.fail(path, "must be an object");
  r.only_keys(m, {"wiener", "intensity", "jumps"}, path);
  NoiseMode mode;
  mode.wiener_vol = r.nonnegative(m, "wiener", path, 0.0);
  mode.jump_intensity = r.nonnegative(m, "intensity", path, 0.0);
  if (m.contains("jumps")) {
    const std::string p = Reader::join(path, "jumps");
    const json& j = m.at("jumps");
    if (!j.is_object()) r.fail(p, "must be an object");
    const std::string law = r.string(j, "law", p);
    if (law == "none") {
      r.only_keys(j, {"law"}, p);
      mode.jumps = NoJumps{};
    } else if (law == "two_point") {
      r.only_keys(j, {"law", "size"}, p);
      mode.jumps = TwoPointJumps{r.nonnegative(j, "size", p)};
    } else if (law == "normal") {
      r.only_keys(j, {"law", "mean", "std"}, p);
      mode.jumps = NormalJumps{r.number(j, "mean", p, 0.0), r.nonnegative(j, "std", p)};
    } else {
      r.fail(Reader::join(p, "law"), "unknown jump law '" + law + "' (none, two_point, normal)");
    }
  }
  if (mode.jump_intensity > 0.0 && std::holds_alternative<NoJumps>(mode.jumps))
    r.fail(Reader::join(path, "jumps"), "intensity > 0 needs a jump law");
  return mode;
}

}  // namespace detail

/// Validates a parsed document. source, when given, is used for line numbers.
inline ExperimentConfig config_from_json(json doc, std::string_view source = {}) {
  using detail::Reader;
  const Reader r(source);
  if (!doc.is_object()) r.fail("", "top level must be an object");
  r.only_keys(doc, {"grid", "beta", "noise", "diffusion", "initial", "solver", "run", "experiments"}, "");

  const json& g = r.object(doc, "grid", "grid");
  r.only_keys(g, {"dim", "n", "length"}, "grid");
  const auto dim = static_cast<int>(r.integer(g, "dim", "grid", {}, 1));
  if (dim != 1 && dim != 2) r.fail("grid.dim", "must be 1 or 2");
  const std::vector<double> n = r.numbers(g, "n", "grid");
  const std::vector<double> len = r.numbers(g, "length", "grid", std::vector<double>(static_cast<std::size_t>(dim), 1.0));
  if (n.size() != static_cast<std::size_t>(dim)) r.fail("grid.n", "needs one entry per axis");
  if (len.size() != static_cast<std::size_t>(dim)) r.fail("grid.length", "needs one entry per axis");
  std::array<int, 2> nodes{1, 1};
  std::array<double, 2> lengths{1.0, 1.0};
  for (int a = 0; a < dim; ++a) {
    const double na = n[static_cast<std::size_t>(a)];
    if (na < 1 || na != std::floor(na) || na > 4096) r.fail("grid.n." + std::to_string(a), "must be an integer in [1, 4096]");
    if (!(len[static_cast<std::size_t>(a)] > 0.0)) r.fail("grid.length." + std::to_string(a), "must be > 0");
    nodes[static_cast<std::size_t>(a)] = static_cast<int>(na);
    lengths[static_cast<std::size_t>(a)] = len[static_cast<std::size_t>(a)];
  }
  SpatialGrid grid(dim, nodes, lengths);
  if (grid.size() > DirichletLaplacian::default_max_nodes)
    r.fail("grid.n", "total of " + std::to_string(grid.size()) + " nodes exceeds " +
                         std::to_string(DirichletLaplacian::default_max_nodes));

  const json& b = r.object(doc, "beta", "beta");
  MonotoneGraph graph = detail::read_graph(r, b, "beta");

  const json& s = doc.contains("solver") ? r.object(doc, "solver", "solver") : json::object();
  r.only_keys(s, {"dt", "newton_tol", "newton_max_iter", "max_step_halvings", "picard_tol", "picard_max_iter", "epsilon",
                  "window_T0", "allow_bounded_range"},
              "solver");
  SolverConfig sc;
  sc.lambda = r.nonnegative(b, "lambda", "beta", 1e-3);
  sc.dt = r.positive(s, "dt", "solver", 0.01);
  sc.newton_tol = r.positive(s, "newton_tol", "solver", sc.newton_tol);
  sc.newton_max_iter = static_cast<int>(r.integer(s, "newton_max_iter", "solver", sc.newton_max_iter, 1));
  sc.max_step_halvings = static_cast<int>(r.integer(s, "max_step_halvings", "solver", sc.max_step_halvings, 0));
  sc.picard_tol = r.positive(s, "picard_tol", "solver", sc.picard_tol);
  sc.picard_max_iter = static_cast<int>(r.integer(s, "picard_max_iter", "solver", sc.picard_max_iter, 1));
  sc.epsilon = r.number(s, "epsilon", "solver", sc.epsilon);
  if (!(sc.epsilon > 0.0 && sc.epsilon < 1.0 / 6.0)) r.fail("solver.epsilon", "must lie in (0, 1/6)");
  if (s.contains("allow_bounded_range")) {
    if (!s.at("allow_bounded_range").is_boolean()) r.fail("solver.allow_bounded_range", "must be a boolean");
    sc.allow_bounded_range = s.at("allow_bounded_range").get<bool>();
  }
  if (s.contains("window_T0")) {
    const json& w = s.at("window_T0");
    if (w.is_string() && w.get<std::string>() == "auto") sc.auto_window = true;
    else if (w.is_number() && w.get<double>() > 0.0) sc.window_T0 = w.get<double>();
    else if (!w.is_null()) r.fail("solver.window_T0", "must be a positive number, \"auto\" or null");
  }
  try {
    sc.validate(graph);
  } catch (const std::invalid_argument& e) {
    r.fail("beta", e.what());
  }

  const json& nz = r.object(doc, "noise", "noise");
  r.only_keys(nz, {"T", "modes"}, "noise");
  const double T = r.positive(nz, "T", "noise");
  if (!nz.contains("modes") || !nz.at("modes").is_array() || nz.at("modes").empty())
    r.fail("noise.modes", "must be a nonempty array");
  std::vector<NoiseMode> modes;
  for (std::size_t k = 0; k < nz.at("modes").size(); ++k)
    modes.push_back(detail::read_mode(r, nz.at("modes")[k], "noise.modes." + std::to_string(k)));
  NoiseSpec spec(std::move(modes));

  const json& d = r.object(doc, "diffusion", "diffusion");
  DiffusionSpec ds;
  ds.variant = r.string(d, "variant", "diffusion");
  ds.gamma = r.nonnegative(d, "gamma", "diffusion", 0.0);
  const std::size_t K = spec.n_modes();
  if (ds.variant == "zero") {
    r.only_keys(d, {"variant", "gamma"}, "diffusion");
  } else if (ds.variant == "constant_additive") {
    r.only_keys(d, {"variant", "gamma", "fields"}, "diffusion");
    if (!d.contains("fields") || !d.at("fields").is_array()) r.fail("diffusion.fields", "must be an array of fields");
    for (std::size_t k = 0; k < d.at("fields").size(); ++k)
      ds.fields.push_back(detail::read_field(r, d.at("fields")[k], "diffusion.fields." + std::to_string(k)));
    if (ds.fields.size() != K) r.fail("diffusion.fields", "needs one field per noise mode (" + std::to_string(K) + ")");
  } else if (ds.variant == "linear_spectral" || ds.variant == "smoothed_nemytskii") {
    if (ds.variant == "linear_spectral") r.only_keys(d, {"variant", "gamma", "coefficients"}, "diffusion");
    else r.only_keys(d, {"variant", "gamma", "coefficients", "map", "scale", "offset"}, "diffusion");
    ds.coefficients = r.numbers(d, "coefficients", "diffusion");
    if (ds.coefficients.size() != K)
      r.fail("diffusion.coefficients", "needs one coefficient per noise mode (" + std::to_string(K) + ")");
    if (ds.variant == "smoothed_nemytskii") {
      const std::string m = r.string(d, "map", "diffusion", std::string("sine"));
      if (m == "sine") ds.map.kind = ScalarMap::Kind::Sine;
      else if (m == "tanh") ds.map.kind = ScalarMap::Kind::Tanh;
      else if (m == "affine") ds.map.kind = ScalarMap::Kind::Affine;
      else r.fail("diffusion.map", "unknown map '" + m + "' (sine, tanh, affine)");
      ds.map.scale = r.number(d, "scale", "diffusion", 1.0);
      ds.map.offset = r.number(d, "offset", "diffusion", 0.0);
    }
  } else {
    r.fail("diffusion.variant",
           "unknown variant '" + ds.variant + "' (zero, constant_additive, linear_spectral, smoothed_nemytskii)");
  }

  FieldSpec initial;
  if (doc.contains("initial")) initial = detail::read_field(r, doc.at("initial"), "initial");

  RunSettings run;
  if (doc.contains("run")) {
    const json& rn = r.object(doc, "run", "run");
    r.only_keys(rn, {"n_paths", "master_seed", "output_dir"}, "run");
    run.n_paths = static_cast<std::size_t>(r.integer(rn, "n_paths", "run", 100, 1));
    run.seed = static_cast<std::uint64_t>(r.integer(rn, "master_seed", "run", 0, 0));
    run.output_dir = r.string(rn, "output_dir", "run", std::string("out"));
  }

  ExperimentSettings ex;
  const json& e = doc.contains("experiments") ? r.object(doc, "experiments", "experiments") : json::object();
  r.only_keys(e, {"lambdas", "apriori_lambdas", "levels", "mollify_levels", "contraction_fractions", "noise_paths"}, "experiments");
  ex.lambdas = r.numbers(e, "lambdas", "experiments", std::vector<double>{0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625});
  ex.apriori_lambdas = r.numbers(e, "apriori_lambdas", "experiments",
                                std::vector<double>{0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625, 0.001953125, 0.0009765625});
  for (const auto* list : {&ex.lambdas, &ex.apriori_lambdas}) {
    const auto& l = *list;
    const char* key = list == &ex.lambdas ? "experiments.lambdas" : "experiments.apriori_lambdas";
    if (l.empty()) r.fail(key, "must not be empty");
    for (std::size_t i = 0; i < l.size(); ++i)
      if (!(l[i] > 0.0) || (i > 0 && !(l[i] < l[i - 1]))) r.fail(key, "must be positive and strictly decreasing");
  }
  auto int_list = [&](const char* key, std::vector<double> fallback) {
    std::vector<int> out;
    for (double v : r.numbers(e, key, "experiments", fallback)) {
      if (v < 1 || v != std::floor(v)) r.fail(std::string("experiments.") + key, "entries must be integers >= 1");
      if (!out.empty() && static_cast<int>(v) <= out.back())
        r.fail(std::string("experiments.") + key, "must be strictly increasing");
      out.push_back(static_cast<int>(v));
    }
    return out;
  };
  ex.levels = int_list("levels", {2, 4, 8, 16});
  ex.mollify_levels = int_list("mollify_levels", {1, 2, 4, 8, 16});
  ex.contraction_fractions = r.numbers(e, "contraction_fractions", "experiments", std::vector<double>{0.5});
  for (double f : ex.contraction_fractions)
    if (!(f > 0.0)) r.fail("experiments.contraction_fractions", "entries must be > 0");
  ex.noise_paths = static_cast<std::size_t>(r.integer(e, "noise_paths", "experiments", 2000, 1));

  return ExperimentConfig{std::move(doc), grid, std::move(graph), sc, std::move(spec), T,
                          std::move(ds), std::move(initial), std::move(run), std::move(ex)};
}

/// Parses JSON text; syntax errors report line and column.
inline json parse_config_text(const std::string& text, const std::string& origin = "config") {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t off = e.byte > 0 ? e.byte - 1 : 0;
    const std::size_t line = detail::line_of_offset(text, off);
    const std::size_t start = text.rfind('\n', off == 0 ? 0 : off - 1);
    const std::size_t col = start == std::string::npos ? off + 1 : off - start;
    throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": JSON syntax error: " + e.what());
  }
}

/// Applies key=value with a dotted path; numeric segments index arrays. The
/// value is read as JSON when it parses, as a string otherwise.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set " + assignment + ": expected key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &doc;
  std::stringstream ss(path);
  std::string key;
  std::vector<std::string> keys;
  while (std::getline(ss, key, '.')) keys.push_back(key);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const std::string& k = keys[i];
    if (k.empty()) throw ConfigError("--set " + path + ": empty path segment");
    json* next = nullptr;
    if (node->is_array()) {
      if (!std::all_of(k.begin(), k.end(), [](unsigned char c) { return std::isdigit(c); }))
        throw ConfigError("--set " + path + ": '" + k + "' is not an array index");
      const std::size_t idx = std::stoul(k);
      if (idx >= node->size()) throw ConfigError("--set " + path + ": index " + k + " out of range");
      next = &(*node)[idx];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) throw ConfigError("--set " + path + ": '" + k + "' indexes a scalar");
      next = &(*node)[k];
    }
    node = next;
  }
  *node = std::move(value);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Loads, applies overrides and validates. Line numbers refer to the file;
/// keys introduced only by overrides have none.
inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  const std::string text = read_text_file(path);
  json doc = parse_config_text(text, path);
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_json(std::move(doc), text);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of the canonical (key-sorted, compact) document. run.output_dir is
/// left out so identical experiments written to different places agree.
inline std::uint64_t config_hash(json doc) {
  if (doc.contains("run") && doc["run"].is_object()) doc["run"].erase("output_dir");
  return fnv1a(doc.dump());
}

}  // namespace spm
